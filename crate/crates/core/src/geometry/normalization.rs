use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{features, DesignVector, FeatureVector, N_DESIGN_VARS, N_FEATURES};
use crate::error::{Error, Result};
use crate::seeds;

pub const DEFAULT_SAMPLE_SIZE: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_100_301;
const MIN_SAMPLE_SIZE: usize = 1000;

static GOLDEN: &str = include_str!("../../data/normalization_stats.json");

/// Per-feature mean and (population) standard deviation of a reference sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub sample_size: usize,
    pub seed: u64,
}

impl NormalizationStats {
    /// Frozen stats shipped with the crate (10,000 uniform designs, fixed seed).
    pub fn builtin() -> &'static NormalizationStats {
        static STATS: OnceLock<NormalizationStats> = OnceLock::new();
        STATS.get_or_init(|| serde_json::from_str(GOLDEN).expect("embedded normalization stats are valid"))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn normalize_design(&self, d: &DesignVector) -> Vec<f64> {
        self.normalize(features(d).as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.sd.len() || self.mean.is_empty() {
            return Err(Error::config("normalization", "mean and sd lengths differ"));
        }
        for (k, s) in self.sd.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                return Err(Error::config(format!("normalization.sd[{k}]"), format!("degenerate dimension (sd = {s})")));
            }
        }
        Ok(())
    }
}

/// Mean/sd over an explicit sample of feature vectors.
pub fn fit_normalization_from(sample: &[FeatureVector]) -> Result<NormalizationStats> {
    if sample.len() < 2 {
        return Err(Error::config("normalization.sample_size", "need at least two samples"));
    }
    let dim = sample[0].0.len();
    let n = sample.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in sample {
        if f.0.len() != dim {
            return Err(Error::domain("feature vectors of differing length"));
        }
        for (m, x) in mean.iter_mut().zip(&f.0) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for f in sample {
        for ((v, x), m) in var.iter_mut().zip(&f.0).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let sd: Vec<f64> = var.into_iter().map(|v| (v / n).sqrt()).collect();
    let stats = NormalizationStats {
        mean,
        sd,
        sample_size: sample.len(),
        seed: 0,
    };
    // tiny relative spread is a constant feature up to rounding
    for (k, (s, m)) in stats.sd.iter().zip(&stats.mean).enumerate() {
        if *s <= 1e-12 * m.abs().max(1.0) {
            return Err(Error::config(
                format!("normalization.sd[{k}]"),
                "degenerate dimension (sd = 0)",
            ));
        }
    }
    Ok(stats)
}

pub fn fit_normalization(sample_size: usize, seed: u64) -> Result<NormalizationStats> {
    if sample_size < MIN_SAMPLE_SIZE {
        return Err(Error::config(
            "normalization.sample_size",
            format!("must be at least {MIN_SAMPLE_SIZE}, got {sample_size}"),
        ));
    }
    let mut rng = seeds::rng(seed, &[]);
    let sample: Vec<FeatureVector> = (0..sample_size)
        .map(|_| {
            let mut v = [0.0; N_DESIGN_VARS];
            v.iter_mut().for_each(|x| *x = rng.random::<f64>());
            features(&DesignVector::clamped(&v))
        })
        .collect();
    let mut stats = fit_normalization_from(&sample)?;
    debug_assert_eq!(stats.dim(), N_FEATURES);
    stats.seed = seed;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_is_rejected() {
        let sample = vec![FeatureVector(vec![1.0, 2.0, 3.0]); 50];
        let err = fit_normalization_from(&sample).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn small_sample_is_rejected() {
        assert!(fit_normalization(999, 1).is_err());
    }

    #[test]
    fn renormalizing_a_normalized_sample_is_identity() {
        let mut rng = seeds::rng(5, &[]);
        let sample: Vec<FeatureVector> = (0..300)
            .map(|_| {
                let v: Vec<f64> = (0..N_DESIGN_VARS).map(|_| rng.random()).collect();
                features(&DesignVector::clamped(&v))
            })
            .collect();
        let stats = fit_normalization_from(&sample).unwrap();
        let normed: Vec<FeatureVector> = sample.iter().map(|f| FeatureVector(stats.normalize(&f.0))).collect();
        let again = fit_normalization_from(&normed).unwrap();
        for k in 0..again.dim() {
            assert!(again.mean[k].abs() < 1e-9);
            assert!((again.sd[k] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embedded_stats_match_a_fresh_fit() {
        let golden = NormalizationStats::builtin();
        golden.validate().unwrap();
        assert_eq!(golden.dim(), N_FEATURES);
        let fresh = fit_normalization(golden.sample_size, golden.seed).unwrap();
        for k in 0..N_FEATURES {
            assert!((fresh.mean[k] - golden.mean[k]).abs() < 1e-12);
            assert!((fresh.sd[k] - golden.sd[k]).abs() < 1e-12);
        }
    }
}
