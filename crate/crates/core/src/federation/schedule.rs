use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Devices taking part in round `k`: `m` of `n` drawn uniformly without
/// replacement, returned in ascending order.
pub fn schedule(n: usize, m: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("cannot schedule {m} of {n} devices")));
    }
    if m == n {
        return Ok((0..n).collect());
    }
    let mut rng = stream(seed, Purpose::Schedule, round, 0);
    let mut chosen = rand::seq::index::sample(&mut rng, n, m).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn full_participation() {
        assert_eq!(schedule(5, 5, 3, 1).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_and_distinct() {
        let a = schedule(100, 10, 7, 42).unwrap();
        assert_eq!(a, schedule(100, 10, 7, 42).unwrap());
        assert_ne!(a, schedule(100, 10, 8, 42).unwrap());
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn singleton_is_uniform() {
        let n = 100;
        let rounds = 10_000;
        let mut counts = vec![0usize; n];
        for k in 0..rounds {
            let s = schedule(n, 1, k, 5).unwrap();
            assert_eq!(s.len(), 1);
            counts[s[0]] += 1;
        }
        let expected = rounds as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn rejects_oversubscription() {
        assert!(schedule(3, 4, 0, 0).is_err());
        assert!(schedule(3, 0, 0, 0).is_err());
    }
}
