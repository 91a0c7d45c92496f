//! Unbiased stochastic quantizer (QSGD) and its wire format.
//!
//! Coordinate `i` of `x` is sent as `sign(x_i) * level_i`, where `level_i` is
//! `l` or `l + 1` with `l = floor(s |x_i| / ||x||)`, rounded up with
//! probability `s |x_i| / ||x|| - l`. The receiver reconstructs
//! `||x|| * code_i / s`.
//!
//! Wire format: the norm as a big-endian IEEE-754 single, followed by the
//! codes shifted to digits `code_i + s` in `[0, 2s]` and packed as one
//! big-endian base-`(2s+1)` integer (first coordinate most significant)
//! occupying exactly `ceil(d log2(2s+1))` bits, left-padded with zero bits to
//! a whole number of bytes.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    pub norm: f32,
    /// Signed levels in `[-s, s]`.
    pub codes: Vec<i32>,
    pub levels: u32,
}

impl QuantizedVector {
    pub fn dim(&self) -> usize {
        self.codes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Format("quantization level must be at least 1".into()));
        }
        if !(self.norm >= 0.0 && self.norm.is_finite()) {
            return Err(Error::Format(format!("invalid norm {}", self.norm)));
        }
        let s = self.levels as i32;
        if let Some(c) = self.codes.iter().find(|c| c.abs() > s) {
            return Err(Error::Format(format!("code {c} outside [-{s}, {s}]")));
        }
        if self.norm == 0.0 && self.codes.iter().any(|&c| c != 0) {
            return Err(Error::Format("zero norm with nonzero codes".into()));
        }
        Ok(())
    }
}

pub fn quantize<R: Rng + ?Sized>(x: &[f64], levels: u32, rng: &mut R) -> Result<QuantizedVector> {
    if levels == 0 {
        return Err(Error::Argument("quantization level must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("cannot quantize a non-finite vector".into()));
    }
    let n = norm(x);
    if n == 0.0 {
        return Ok(QuantizedVector {
            norm: 0.0,
            codes: vec![0; x.len()],
            levels,
        });
    }
    let s = f64::from(levels);
    let codes = x
        .iter()
        .map(|&v| {
            let scaled = (v.abs() * s / n).min(s);
            let low = scaled.floor();
            let frac = scaled - low;
            let mut level = low as i32;
            if frac > 0.0 && rng.gen::<f64>() < frac {
                level += 1;
            }
            if v < 0.0 {
                -level
            } else {
                level
            }
        })
        .collect();
    Ok(QuantizedVector {
        norm: n as f32,
        codes,
        levels,
    })
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f64> {
    let norm = f64::from(q.norm);
    let s = f64::from(q.levels);
    q.codes.iter().map(|&c| norm * f64::from(c) / s).collect()
}

fn radix(levels: u32) -> u64 {
    2 * u64::from(levels) + 1
}

/// Exact `ceil(d * log2(2s + 1))`: the bit length of `(2s+1)^d - 1`.
pub fn code_bits(dim: usize, levels: u32) -> usize {
    if dim == 0 {
        return 0;
    }
    let max = BigUint::from(radix(levels)).pow(dim as u32) - 1u32;
    max.bits() as usize
}

/// Bits per quantized update: 32 for the norm plus the packed codes.
pub fn bit_cost(dim: usize, levels: u32) -> usize {
    32 + code_bits(dim, levels)
}

/// Bits per uncompressed update (single-precision floats).
pub fn identity_bit_cost(dim: usize) -> usize {
    32 * dim
}

/// Variance factor of the quantizer, `min(d / s^2, sqrt(d) / s)`. Not
/// clamped to `[0, 1]`.
pub fn q_factor(dim: usize, levels: u32) -> f64 {
    let d = dim as f64;
    let s = f64::from(levels);
    (d / (s * s)).min(d.sqrt() / s)
}

/// An encoded update and its payload length in bits before byte padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub payload_bits: usize,
}

pub fn encode(q: &QuantizedVector) -> Result<Encoded> {
    q.validate()?;
    let base = radix(q.levels);
    let s = i64::from(q.levels);
    let mut packed = BigUint::zero();
    for &c in &q.codes {
        packed = packed * base + (i64::from(c) + s) as u64;
    }
    let width = code_bits(q.dim(), q.levels);
    let field_bytes = width.div_ceil(8);
    let mut bytes = Vec::with_capacity(4 + field_bytes);
    bytes.extend_from_slice(&q.norm.to_be_bytes());
    if field_bytes > 0 {
        let digits = packed.to_bytes_be();
        bytes.resize(4 + field_bytes - digits.len(), 0);
        bytes.extend_from_slice(&digits);
    }
    Ok(Encoded {
        bytes,
        payload_bits: 32 + width,
    })
}

/// Inverse of [`encode`]; the dimension and level are known to the receiver.
pub fn decode(bytes: &[u8], dim: usize, levels: u32) -> Result<QuantizedVector> {
    if levels == 0 {
        return Err(Error::Format("quantization level must be at least 1".into()));
    }
    let expected = 4 + code_bits(dim, levels).div_ceil(8);
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let norm = f32::from_be_bytes(bytes[..4].try_into().expect("4-byte prefix"));
    let base = radix(levels);
    let mut packed = BigUint::from_bytes_be(&bytes[4..]);
    let mut codes = vec![0i32; dim];
    for slot in codes.iter_mut().rev() {
        let digit = (&packed % base).to_u64().expect("digit below radix");
        packed /= base;
        *slot = digit as i32 - levels as i32;
    }
    if !packed.is_zero() {
        return Err(Error::Format(format!(
            "packed codes exceed {dim} base-{base} digits"
        )));
    }
    let q = QuantizedVector { norm, codes, levels };
    q.validate()?;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn zero_vector() {
        let q = quantize(&[0.0; 5], 3, &mut stream(0, Purpose::Quantize, 0, 0)).unwrap();
        assert_eq!(q.norm, 0.0);
        assert_eq!(q.codes, vec![0; 5]);
        assert_eq!(dequantize(&q), vec![0.0; 5]);
    }

    #[test]
    fn grid_points_are_exact() {
        for seed in 0..20 {
            let q = quantize(&[3.0, 4.0], 5, &mut stream(seed, Purpose::Quantize, 0, 0)).unwrap();
            assert_eq!(q.codes, vec![3, 4]);
            assert_eq!(dequantize(&q), vec![3.0, 4.0]);
        }
        let q = quantize(&[-3.0, 0.0, 4.0], 5, &mut stream(0, Purpose::Quantize, 0, 0)).unwrap();
        assert_eq!(dequantize(&q), vec![-3.0, 0.0, 4.0]);
    }

    #[test]
    fn saturated_codes() {
        let q = QuantizedVector {
            norm: 2.5,
            codes: vec![4, -4],
            levels: 4,
        };
        assert_eq!(dequantize(&q), vec![2.5, -2.5]);
    }

    #[test]
    fn small_wire_example() {
        let q = QuantizedVector {
            norm: 1.25,
            codes: vec![1, 0, -1, 1],
            levels: 1,
        };
        let enc = encode(&q).unwrap();
        assert_eq!(enc.payload_bits, 39);
        assert_eq!(enc.bytes.len(), 5);
        // digits 2,1,0,2 in base 3 -> 2*27 + 1*9 + 0*3 + 2 = 65
        assert_eq!(enc.bytes[4], 65);
        assert_eq!(decode(&enc.bytes, 4, 1).unwrap(), q);
    }

    #[test]
    fn payload_sizes() {
        assert_eq!(bit_cost(4, 1), 39);
        assert_eq!(bit_cost(1000, 10), 4425);
        for (d, s) in [(4usize, 1u32), (100, 1), (1000, 1), (4, 10), (100, 10), (1000, 10), (7850, 10)] {
            let float = (d as f64 * (2.0 * s as f64 + 1.0).log2()).ceil() as usize;
            assert_eq!(code_bits(d, s), float, "d={d} s={s}");
        }
    }

    #[test]
    fn q_factor_values() {
        assert_eq!(q_factor(4, 2), 1.0);
        assert_eq!(q_factor(4, 4), 0.25);
        assert!((q_factor(100, 100) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(&[0, 0, 0, 0], 4, 1), Err(Error::Length { .. })));
        // 3^4 = 81 is one past the largest valid packed value
        let bad = [0x3f, 0xa0, 0, 0, 81];
        assert!(matches!(decode(&bad, 4, 1), Err(Error::Format(_))));
        let bad_norm = [0x7f, 0xc0, 0, 0, 0];
        assert!(matches!(decode(&bad_norm, 4, 1), Err(Error::Format(_))));
    }

    #[test]
    fn unbiased_two_coordinates() {
        let x = [1.0, 1.0];
        let draws = 100_000;
        let mut rng = stream(42, Purpose::Quantize, 0, 0);
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for _ in 0..draws {
            let y = dequantize(&quantize(&x, 1, &mut rng).unwrap());
            for i in 0..2 {
                sum[i] += y[i];
                sum_sq[i] += y[i] * y[i];
            }
        }
        for i in 0..2 {
            let mean = sum[i] / draws as f64;
            let var = sum_sq[i] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - 1.0).abs() <= 4.0 * se, "mean {mean} se {se}");
        }
    }
}
