use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Domain, Instance, Split};
use crate::error::{GlenError, Result};

/// Fractions of the labeled source training set used by the limited-data sweeps.
pub const LIMITED_DATA_FRACTIONS: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

/// Keeps a uniform random `round(fraction * N)` of the source training
/// instances. Every other instance passes through untouched, in order.
pub fn subsample_train(instances: &[Instance], fraction: f64, seed: u64) -> Result<Vec<Instance>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GlenError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let is_train = |i: &Instance| i.domain == Domain::Source && i.split == Split::Train;
    let train_positions: Vec<usize> = instances
        .iter()
        .enumerate()
        .filter(|(_, i)| is_train(i))
        .map(|(p, _)| p)
        .collect();
    let n = train_positions.len();
    let keep = (fraction * n as f64).round() as usize;
    if keep == 0 {
        return Err(GlenError::Config(format!(
            "fraction {fraction} of {n} training instances leaves nothing to train on"
        )));
    }
    let mut chosen = vec![false; instances.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in sample(&mut rng, n, keep).into_iter() {
        chosen[train_positions[k]] = true;
    }
    Ok(instances
        .iter()
        .enumerate()
        .filter(|(p, i)| !is_train(i) || chosen[*p])
        .map(|(_, i)| i.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(train: usize) -> Vec<Instance> {
        let mk = |k: usize, split| Instance {
            id: format!("{split}-{k}"),
            tokens: vec![k % 7 + 1],
            labels: Some(vec![1, 0]),
            domain: Domain::Source,
            split,
        };
        let mut out: Vec<Instance> = (0..train).map(|k| mk(k, Split::Train)).collect();
        out.extend((0..30).map(|k| mk(k, Split::Val)));
        out.extend((0..40).map(|k| mk(k, Split::Test)));
        out
    }

    fn count(v: &[Instance], split: Split) -> usize {
        v.iter().filter(|i| i.split == split).count()
    }

    #[test]
    fn full_fraction_is_identity() {
        let c = corpus(57);
        assert_eq!(subsample_train(&c, 1.0, 3).unwrap(), c);
    }

    #[test]
    fn tenth_of_thousand() {
        let c = corpus(1000);
        let s = subsample_train(&c, 0.1, 11).unwrap();
        assert_eq!(count(&s, Split::Train), 100);
        assert_eq!(count(&s, Split::Val), 30);
        assert_eq!(count(&s, Split::Test), 40);
        let held: Vec<_> = s.iter().filter(|i| i.split != Split::Train).collect();
        let orig: Vec<_> = c.iter().filter(|i| i.split != Split::Train).collect();
        assert_eq!(held, orig);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = corpus(200);
        assert_eq!(subsample_train(&c, 0.25, 4).unwrap(), subsample_train(&c, 0.25, 4).unwrap());
        assert_ne!(subsample_train(&c, 0.25, 4).unwrap(), subsample_train(&c, 0.25, 5).unwrap());
    }

    #[test]
    fn empty_result_is_error() {
        let c = corpus(3);
        assert!(subsample_train(&c, 0.1, 0).is_err());
        assert!(subsample_train(&c, 0.0, 0).is_err());
        assert!(subsample_train(&c, 1.5, 0).is_err());
    }
}
