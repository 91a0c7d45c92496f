//! IDX binary tensors (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic, one big-endian `u32` per dimension, then
//! the raw `u8` payload. Only the two MNIST shapes are accepted: `0x00000801`
//! (labels, 1-D) and `0x00000803` (images, 3-D).

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const LABELS_MAGIC: u32 = 0x0000_0801;
const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxTensor {
    Labels(Vec<u8>),
    /// Pixel intensities scaled to `[0, 1]`, image-major then row-major.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<f64>,
    },
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let word = bytes.get(offset..offset + 4).ok_or(Error::Length {
        expected: offset + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("slice of length 4")))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => return Err(Error::Format(format!("unsupported IDX magic 0x{other:08x}"))),
    };
    let mut dims = Vec::with_capacity(ndims);
    for k in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * k)? as usize);
    }
    let header = 4 + 4 * ndims;
    let payload_len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let expected = header + payload_len;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[header..];
    Ok(match ndims {
        1 => IdxTensor::Labels(payload.to_vec()),
        _ => IdxTensor::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.iter().map(|&p| f64::from(p) / 255.0).collect(),
        },
    })
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// `pixels` holds `count * rows * cols` raw bytes.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::Argument(format!(
            "{} pixels do not fill {count} x {rows} x {cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Reads an image file and a label file into a flattened dataset.
pub fn load_idx_dataset(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
    };
    let (count, rows, cols, pixels) = match parse_idx(&read(images)?)? {
        IdxTensor::Images {
            count,
            rows,
            cols,
            pixels,
        } => (count, rows, cols, pixels),
        IdxTensor::Labels(_) => {
            return Err(Error::Format(format!("{} holds labels, not images", images.display())))
        }
    };
    let labels = match parse_idx(&read(labels)?)? {
        IdxTensor::Labels(l) => l,
        IdxTensor::Images { .. } => {
            return Err(Error::Format(format!("{} holds images, not labels", labels.display())))
        }
    };
    if labels.len() != count {
        return Err(Error::Config(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    Dataset::new(
        pixels,
        labels.into_iter().map(usize::from).collect(),
        rows * cols,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_header_example() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        assert_eq!(parse_idx(&bytes).unwrap(), IdxTensor::Labels(vec![7, 3]));
    }

    #[test]
    fn image_header_example() {
        let bytes = [
            0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0xFF, 0, 0, 0xFF,
        ];
        assert_eq!(
            parse_idx(&bytes).unwrap(),
            IdxTensor::Images {
                count: 1,
                rows: 2,
                cols: 2,
                pixels: vec![1.0, 0.0, 0.0, 1.0],
            }
        );
    }

    #[test]
    fn wrong_magic_is_named() {
        let err = parse_idx(&[0, 0, 8, 2, 0, 0, 0, 0]).unwrap_err();
        assert_eq!(err, Error::Format("unsupported IDX magic 0x00000802".into()));
    }

    #[test]
    fn truncated_payload() {
        let err = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 3]).unwrap_err();
        assert_eq!(
            err,
            Error::Length {
                expected: 11,
                actual: 10
            }
        );
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Length { .. })));
        assert!(matches!(parse_idx(&[0, 0, 8, 3, 0, 0, 0, 1]), Err(Error::Length { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        assert!(matches!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 7, 3]),
            Err(Error::Length { .. })
        ));
    }
}
