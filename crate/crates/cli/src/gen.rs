//! Deterministic workload generators.

use std::collections::HashSet;

use dyntree::oracles::Op;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Zipf(f64),
    Uniform,
    /// Every key inserted in order, then bursts of accesses on one key at a
    /// time, each long enough to lift it across two quantization steps.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("unknown distribution {0:?}")]
    UnknownDist(String),
    #[error("n and len must be at least 1")]
    Empty,
    #[error("zipf exponent must be positive, got {0}")]
    BadExponent(f64),
}

impl Dist {
    pub fn parse(name: &str, s: f64) -> Result<Dist, GenError> {
        match name {
            "zipf" if s > 0.0 => Ok(Dist::Zipf(s)),
            "zipf" => Err(GenError::BadExponent(s)),
            "uniform" => Ok(Dist::Uniform),
            "adversarial" => Ok(Dist::Adversarial),
            other => Err(GenError::UnknownDist(other.to_string())),
        }
    }
}

/// `len` records over keys `0..n`. The first occurrence of a key is an
/// insert, later ones are accesses.
pub fn generate(dist: Dist, n: u64, len: u64, seed: u64) -> Result<Vec<Op>, GenError> {
    if n == 0 || len == 0 {
        return Err(GenError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u64> = match dist {
        Dist::Uniform => (0..len).map(|_| rng.gen_range(0..n)).collect(),
        Dist::Zipf(s) => {
            let z = Zipf::new(n, s).map_err(|_| GenError::BadExponent(s))?;
            (0..len).map(|_| z.sample(&mut rng) as u64 - 1).collect()
        }
        Dist::Adversarial => {
            let mut keys: Vec<u64> = (0..n.min(len)).collect();
            let mut total = keys.len() as u64;
            while (keys.len() as u64) < len {
                let focus = rng.gen_range(0..n);
                let burst = (2 * total / n).max(1);
                for _ in 0..burst.min(len - keys.len() as u64) {
                    keys.push(focus);
                    total += 1;
                }
            }
            keys
        }
    };
    let mut seen = HashSet::new();
    Ok(keys
        .into_iter()
        .map(|k| {
            if seen.insert(k) {
                Op::Insert(k)
            } else {
                Op::Access(k)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key() {
        let ops = generate(Dist::Uniform, 1, 5, 9).unwrap();
        assert_eq!(
            ops,
            vec![
                Op::Insert(0),
                Op::Access(0),
                Op::Access(0),
                Op::Access(0),
                Op::Access(0)
            ]
        );
    }

    #[test]
    fn deterministic() {
        for d in [Dist::Uniform, Dist::Zipf(1.0), Dist::Adversarial] {
            assert_eq!(
                generate(d, 4, 16, 3).unwrap(),
                generate(d, 4, 16, 3).unwrap()
            );
        }
    }

    #[test]
    fn zipf_frequencies_fall_with_rank() {
        let ops = generate(Dist::Zipf(1.0), 256, 200_000, 1).unwrap();
        let mut counts = vec![0u64; 256];
        for op in &ops {
            counts[op.key() as usize] += 1;
        }
        // rank order holds between well separated ranks; neighbours are noisy
        for r in [0usize, 1, 3, 7, 15, 31, 63] {
            assert!(counts[r] > counts[2 * r + 2], "rank {r}");
        }
        assert!(counts[0] > counts[1] && counts[1] > counts[2]);
    }

    #[test]
    fn adversarial_inserts_then_bursts() {
        let ops = generate(Dist::Adversarial, 8, 40, 5).unwrap();
        assert!(ops[..8]
            .iter()
            .enumerate()
            .all(|(i, op)| *op == Op::Insert(i as u64)));
        assert!(ops[8..].iter().all(|op| matches!(op, Op::Access(_))));
    }

    #[test]
    fn bad_arguments() {
        assert_eq!(
            Dist::parse("pareto", 1.0).unwrap_err(),
            GenError::UnknownDist("pareto".into())
        );
        assert!(Dist::parse("zipf", 0.0).is_err());
        assert_eq!(
            generate(Dist::Uniform, 0, 5, 1).unwrap_err(),
            GenError::Empty
        );
    }
}
