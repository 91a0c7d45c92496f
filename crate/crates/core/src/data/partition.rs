use rand::seq::SliceRandom;

use super::{Dataset, DevicePartition};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Near-equal split of `total` into `parts` sizes differing by at most one.
fn even_split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|j| total / parts + usize::from(j < total % parts))
        .collect()
}

/// Label-skew partition: each device sees at most `n_digits` classes.
///
/// The `N * n_digits` shards are spread over the classes as evenly as
/// possible (class order shuffled by `seed`), laid out class by class, and
/// dealt round-robin so device slot `j` takes shards `j, j + N, j + 2N, ..`.
/// No class holds more than `N` shards, so the shards of a device always come
/// from distinct classes.
///
/// `samples_per_device` fixes the per-device size; by default the whole
/// dataset is spread over the devices with sizes equal to within one.
pub fn partition_label_skew(
    data: &Dataset,
    n_devices: usize,
    n_digits: usize,
    samples_per_device: Option<usize>,
    seed: u64,
) -> Result<Vec<DevicePartition>> {
    let classes = data.classes();
    if n_devices == 0 {
        return Err(Error::Config("device count must be at least 1".into()));
    }
    if n_digits == 0 || n_digits > classes {
        return Err(Error::Config(format!(
            "labels per device must lie in [1, {classes}], got {n_digits}"
        )));
    }
    let mut rng = stream(seed, Purpose::Partition, 0, 0);

    let shards = n_devices * n_digits;
    let mut class_order: Vec<usize> = (0..classes).collect();
    class_order.shuffle(&mut rng);
    let mut shard_class = Vec::with_capacity(shards);
    for (pos, count) in even_split(shards, classes).into_iter().enumerate() {
        shard_class.extend(std::iter::repeat_n(class_order[pos], count));
    }

    let mut slot_to_device: Vec<usize> = (0..n_devices).collect();
    slot_to_device.shuffle(&mut rng);

    let total = match samples_per_device {
        Some(s) => s * n_devices,
        None => data.len(),
    };
    let device_sizes = even_split(total, n_devices);

    // (device, demand) per shard
    let mut demand_by_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); classes];
    for slot in 0..n_devices {
        let device = slot_to_device[slot];
        let per_shard = even_split(device_sizes[device], n_digits);
        for (r, demand) in per_shard.into_iter().enumerate() {
            let class = shard_class[slot + r * n_devices];
            demand_by_class[class].push((device, demand));
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_devices];
    for class in 0..classes {
        let pool = &mut by_class[class];
        let required: usize = demand_by_class[class].iter().map(|&(_, d)| d).sum();
        if required > pool.len() {
            return Err(Error::Sizing {
                class,
                available: pool.len(),
                required,
            });
        }
        pool.shuffle(&mut rng);
        let mut cursor = 0;
        for &(device, demand) in &demand_by_class[class] {
            assigned[device].extend_from_slice(&pool[cursor..cursor + demand]);
            cursor += demand;
        }
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(device, mut idx)| {
            idx.sort_unstable();
            DevicePartition::new(device, idx)
        })
        .collect())
}

/// Shuffle-and-deal split with no label structure.
pub fn partition_iid(data: &Dataset, n_devices: usize, seed: u64) -> Result<Vec<DevicePartition>> {
    if n_devices == 0 || n_devices > data.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples over {n_devices} devices",
            data.len()
        )));
    }
    let mut rng = stream(seed, Purpose::Partition, 0, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    Ok(even_split(data.len(), n_devices)
        .into_iter()
        .enumerate()
        .map(|(device, size)| {
            let mut idx = order[cursor..cursor + size].to_vec();
            cursor += size;
            idx.sort_unstable();
            DevicePartition::new(device, idx)
        })
        .collect())
}
