//! Seeded dataset partitioning.
//!
//! The non-IID scheme is label sharding: build `2·n_clients` half-shards from
//! label-grouped pools and deal two to each client through a seeded shuffle.
//! Half-shards are drawn round-robin over the label pools (shard `j` prefers
//! label `j mod 10`), which keeps two properties the experiments depend on:
//! each half-shard is single-label whenever its pool can still fill it (so a
//! client sees at most two distinct labels), and every label is represented
//! across the federation. When a preferred pool runs dry the shard falls back
//! to the largest remaining pool, which degrades gracefully for tiny datasets
//! (one client holding everything ends up with the full distribution).

use rand::seq::SliceRandom;

use super::{gather_shard, Dataset, Shard, CLASSES};
use crate::error::{Error, Result};
use crate::{rng, Float};

/// Label-sharded non-IID partition: `n_clients` disjoint shards of exactly
/// `shard_size` samples each, reproducible per seed.
pub fn partition_non_iid<F: Float>(
    ds: &Dataset<F>,
    n_clients: usize,
    shard_size: usize,
    seed: u64,
) -> Result<Vec<Shard<F>>> {
    check_request(ds, n_clients, shard_size)?;
    let mut rng = rng::stream(seed, "partition", 0);

    // Label pools, each in a seeded random order.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in ds.labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    // Half-shards alternate sizes ceil/floor so every dealt pair sums to
    // exactly shard_size (only distinct when shard_size is odd).
    let hi = shard_size - shard_size / 2;
    let lo = shard_size / 2;
    let mut halves: Vec<Vec<usize>> = Vec::with_capacity(2 * n_clients);
    for j in 0..2 * n_clients {
        let want = if j % 2 == 0 { hi } else { lo };
        halves.push(draw_half(&mut pools, j % CLASSES, want));
    }

    // Deal: shuffle the big halves among clients, then the small halves.
    let mut big: Vec<usize> = (0..n_clients).map(|i| 2 * i).collect();
    let mut small: Vec<usize> = (0..n_clients).map(|i| 2 * i + 1).collect();
    big.shuffle(&mut rng);
    small.shuffle(&mut rng);

    let mut shards = Vec::with_capacity(n_clients);
    for client in 0..n_clients {
        let mut indices = halves[big[client]].clone();
        indices.extend_from_slice(&halves[small[client]]);
        shards.push(gather_shard(ds, client as u32, &indices));
    }
    Ok(shards)
}

/// Uniform (IID) partition with the same sizing contract.
pub fn partition_iid<F: Float>(
    ds: &Dataset<F>,
    n_clients: usize,
    shard_size: usize,
    seed: u64,
) -> Result<Vec<Shard<F>>> {
    check_request(ds, n_clients, shard_size)?;
    let mut rng = rng::stream(seed, "partition", 1);

    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    Ok((0..n_clients)
        .map(|client| {
            let start = client * shard_size;
            gather_shard(ds, client as u32, &order[start..start + shard_size])
        })
        .collect())
}

fn check_request<F: Float>(ds: &Dataset<F>, n_clients: usize, shard_size: usize) -> Result<()> {
    if n_clients == 0 || shard_size == 0 {
        return Err(Error::Partition(
            "n_clients and shard_size must be positive".into(),
        ));
    }
    let need = n_clients * shard_size;
    if need > ds.len() {
        return Err(Error::Partition(format!(
            "need {n_clients} x {shard_size} = {need} samples, dataset has {}",
            ds.len()
        )));
    }
    Ok(())
}

/// Take `want` indices for one half-shard, preferring `label`, spilling into
/// the largest remaining pool when the preferred one cannot fill it alone.
fn draw_half(pools: &mut [Vec<usize>], label: usize, want: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(want);
    let mut source = label;
    while out.len() < want {
        let take = (want - out.len()).min(pools[source].len());
        let rest = pools[source].len() - take;
        out.extend(pools[source].drain(rest..));
        if out.len() < want {
            // Preferred pool is dry; spill into the fullest one.
            source = pools
                .iter()
                .enumerate()
                .max_by_key(|(_, p)| p.len())
                .map(|(i, _)| i)
                .expect("CLASSES > 0");
            debug_assert!(!pools[source].is_empty(), "sizes checked up front");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::HashSet;

    /// Balanced synthetic set: `per_class` samples of each of the 10 labels,
    /// pixel 0 encodes the sample id so rows are distinguishable.
    fn balanced(per_class: usize) -> Dataset<f64> {
        let n = per_class * CLASSES;
        let mut images = Array2::zeros((n, super::super::idx::IMAGE_DIM));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            images[(i, 0)] = i as f64 / n as f64;
            labels.push((i % CLASSES) as u8);
        }
        Dataset::new(images, labels).unwrap()
    }

    #[test]
    fn disjoint_exact_and_reproducible() {
        let ds = balanced(64);
        let a = partition_non_iid(&ds, 5, 96, 42).unwrap();
        let b = partition_non_iid(&ds, 5, 96, 42).unwrap();
        assert_eq!(a.len(), 5);

        let mut seen = HashSet::new();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.len(), 96);
            assert_eq!(sa.labels, sb.labels);
            assert_eq!(sa.images, sb.images);
            for row in sa.images.rows() {
                // pixel 0 is a unique id per source row
                assert!(seen.insert(row[0].to_bits()), "overlapping shards");
            }
        }
        assert_eq!(seen.len(), 5 * 96);

        let c = partition_non_iid(&ds, 5, 96, 43).unwrap();
        assert_ne!(
            a.iter().map(|s| s.labels.clone()).collect::<Vec<_>>(),
            c.iter().map(|s| s.labels.clone()).collect::<Vec<_>>(),
            "different seed should re-deal"
        );
    }

    #[test]
    fn label_sharding_caps_distinct_labels_at_two() {
        let ds = balanced(200);
        for &seed in &[1u64, 2, 3] {
            let shards = partition_non_iid(&ds, 10, 80, seed).unwrap();
            for s in &shards {
                assert!(
                    s.distinct_labels() <= 2,
                    "client {} saw {} labels",
                    s.owner,
                    s.distinct_labels()
                );
            }
        }
    }

    #[test]
    fn every_label_lands_somewhere() {
        let ds = balanced(200);
        let shards = partition_non_iid(&ds, 10, 80, 9).unwrap();
        let mut seen = [false; CLASSES];
        for s in &shards {
            for &l in &s.labels {
                seen[l as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "some label unrepresented: {seen:?}");
    }

    #[test]
    fn single_client_full_dataset_degenerates_to_iid() {
        let ds = balanced(20);
        let shards = partition_non_iid(&ds, 1, ds.len(), 5).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].len(), ds.len());
        // Holding everything, the shard's label distribution is the
        // dataset's own.
        assert_eq!(shards[0].distinct_labels(), CLASSES);
    }

    #[test]
    fn odd_shard_size_still_exact() {
        let ds = balanced(40);
        let shards = partition_non_iid(&ds, 3, 33, 7).unwrap();
        for s in &shards {
            assert_eq!(s.len(), 33);
        }
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let ds = balanced(10); // 100 samples
        let err = partition_non_iid(&ds, 4, 30, 0).unwrap_err();
        assert!(err.to_string().contains("120"), "{err}");
    }

    #[test]
    fn iid_partition_is_disjoint_and_mixed() {
        let ds = balanced(64);
        let shards = partition_iid(&ds, 4, 120, 11).unwrap();
        let mut seen = HashSet::new();
        for s in &shards {
            assert_eq!(s.len(), 120);
            assert!(
                s.distinct_labels() >= 8,
                "IID shard should mix labels, saw {}",
                s.distinct_labels()
            );
            for row in s.images.rows() {
                assert!(seen.insert(row[0].to_bits()));
            }
        }
    }
}
