//! Adaptive question generation: a real-coded genetic algorithm for form pairs and an
//! enumeration over discrete levels for function pairs.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::form::KernelExpansion;
use crate::geometry::{features, DesignVector, NormalizationStats, N_DESIGN_VARS};
use crate::overall::{dummy_code, FunctionProfile};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub mutation_prob: f64,
    pub mutation_delta: f64,
    pub seed: u64,
    /// Wall-clock cap; unset means the generation count alone decides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_ms: Option<u64>,
}

impl GaConfig {
    pub fn first_form() -> Self {
        GaConfig {
            population_size: 20,
            max_generations: 100,
            mutation_prob: 0.1,
            mutation_delta: 0.05,
            seed: 0,
            time_limit_ms: None,
        }
    }

    pub fn second_form() -> Self {
        GaConfig {
            population_size: 50,
            max_generations: 500,
            ..Self::first_form()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GaConfig { seed, ..self.clone() }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::config(format!("{path}.population_size"), "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::config(format!("{path}.mutation_prob"), "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mutation_delta) {
            return Err(Error::config(format!("{path}.mutation_delta"), "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingWeights {
    pub v1: f64,
    pub v2: f64,
}

impl Default for SamplingWeights {
    fn default() -> Self {
        SamplingWeights { v1: 0.99, v2: 0.01 }
    }
}

impl SamplingWeights {
    pub fn validate(&self) -> Result<()> {
        if self.v1 < 0.0 || self.v2 < 0.0 || self.v1 + self.v2 <= 0.0 {
            return Err(Error::config("weights", "v1, v2 must be nonnegative with positive sum"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub generations: usize,
    pub evaluations: usize,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Maximizes `objective` over the box `[lo, hi]^dim`.
///
/// The objective scores a batch of candidates at once. Candidates already evaluated are
/// served from a cache, which is exact because the objective is deterministic.
pub fn ga_optimize(
    objective: &mut dyn FnMut(&[Vec<f64>]) -> Vec<f64>,
    dim: usize,
    bounds: (f64, f64),
    cfg: &GaConfig,
    initial: &[Vec<f64>],
) -> Result<GaResult> {
    if cfg.population_size < 2 {
        return Err(Error::config("ga.population_size", "must be at least 2"));
    }
    let (lo, hi) = bounds;
    let p = cfg.population_size;
    let mut rng = seeds::rng(cfg.seed, &[]);
    let started = Instant::now();
    let limit = cfg.time_limit_ms.map(Duration::from_millis);

    let mut pop: Vec<Vec<f64>> = initial.iter().take(p).map(|x| x.iter().map(|v| v.clamp(lo, hi)).collect()).collect();
    while pop.len() < p {
        pop.push((0..dim).map(|_| rng.random_range(lo..=hi)).collect());
    }

    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut evaluations = 0;
    let mut eval = |pop: &[Vec<f64>], cache: &mut HashMap<Vec<u64>, f64>| -> Vec<f64> {
        let mut fresh: Vec<Vec<f64>> = Vec::new();
        let mut fresh_keys: HashMap<Vec<u64>, usize> = HashMap::new();
        for x in pop {
            let k = key(x);
            if !cache.contains_key(&k) && !fresh_keys.contains_key(&k) {
                fresh_keys.insert(k, fresh.len());
                fresh.push(x.clone());
            }
        }
        if !fresh.is_empty() {
            let vals = objective(&fresh);
            evaluations += fresh.len();
            for (x, v) in fresh.iter().zip(vals) {
                let v = if v.is_finite() {
                    v
                } else {
                    log::warn!("GA objective returned {v}; candidate discarded");
                    f64::NEG_INFINITY
                };
                cache.insert(key(x), v);
            }
        }
        pop.iter().map(|x| cache[&key(x)]).collect()
    };

    let mut fit = eval(&pop, &mut cache);
    let mut best_idx = argmax(&fit);
    let mut best = pop[best_idx].clone();
    let mut best_val = fit[best_idx];
    let mut generations = 0;

    for _ in 0..cfg.max_generations {
        if let Some(l) = limit {
            if started.elapsed() >= l {
                break;
            }
        }
        let mut next = Vec::with_capacity(p);
        while next.len() < p {
            let a = tournament(&fit, &mut rng);
            let b = tournament(&fit, &mut rng);
            let (mut c1, mut c2) = crossover(&pop[a], &pop[b], &mut rng);
            mutate(&mut c1, cfg, bounds, &mut rng);
            mutate(&mut c2, cfg, bounds, &mut rng);
            next.push(c1);
            if next.len() < p {
                next.push(c2);
            }
        }
        pop = next;
        fit = eval(&pop, &mut cache);
        best_idx = argmax(&fit);
        if fit[best_idx] > best_val {
            best_val = fit[best_idx];
            best = pop[best_idx].clone();
        }
        generations += 1;
    }
    if !best_val.is_finite() {
        return Err(Error::numerical("every GA candidate produced a non-finite objective"));
    }
    Ok(GaResult {
        best,
        value: best_val,
        generations,
        evaluations,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut b = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[b] {
            b = i;
        }
    }
    b
}

/// Winner of `P − 1` players drawn without replacement.
fn tournament(fit: &[f64], rng: &mut seeds::Rng) -> usize {
    let n = fit.len();
    let players = sample_indices(rng, n, n - 1);
    let mut winner = None;
    for i in players.iter() {
        match winner {
            None => winner = Some(i),
            Some(w) if fit[i] > fit[w] || (fit[i] == fit[w] && i < w) => winner = Some(i),
            _ => {}
        }
    }
    winner.expect("at least one player")
}

fn crossover(a: &[f64], b: &[f64], rng: &mut seeds::Rng) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    if n < 2 {
        return (a.to_vec(), b.to_vec());
    }
    let cut = rng.random_range(1..n);
    let mut c1 = a[..cut].to_vec();
    c1.extend_from_slice(&b[cut..]);
    let mut c2 = b[..cut].to_vec();
    c2.extend_from_slice(&a[cut..]);
    (c1, c2)
}

fn mutate(x: &mut [f64], cfg: &GaConfig, (lo, hi): (f64, f64), rng: &mut seeds::Rng) {
    if rng.random::<f64>() < cfg.mutation_prob {
        let i = rng.random_range(0..x.len());
        let d = rng.random_range(-cfg.mutation_delta..=cfg.mutation_delta);
        x[i] = (x[i] + d).clamp(lo, hi);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `min_j ‖x − h_j‖²`, or 0 for an empty history.
pub fn min_sq_dist(x: &[f64], history: &[Vec<f64>]) -> f64 {
    history.iter().map(|h| sq_dist(x, h)).fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d)))).unwrap_or(0.0)
}

/// Maximin exploration point in `[0,1]^dim`.
pub fn sample_first_form_dim(history: &[Vec<f64>], dim: usize, cfg: &GaConfig) -> Result<GaResult> {
    let mut obj = |xs: &[Vec<f64>]| xs.iter().map(|x| min_sq_dist(x, history)).collect();
    ga_optimize(&mut obj, dim, (0.0, 1.0), cfg, &[])
}

pub fn sample_first_form(history: &[Vec<f64>], cfg: &GaConfig) -> Result<(DesignVector, GaResult)> {
    let r = sample_first_form_dim(history, N_DESIGN_VARS, cfg)?;
    Ok((DesignVector::clamped(&r.best), r))
}

/// Second-form objective: `v1·exp(−(S(x1) − S(x2))²) + v2·(‖x1 − x2‖² + min_j ‖x2 − h_j‖²)`,
/// maximized. `score` maps a batch of candidates to model scores.
pub fn sample_second_form_with(
    first: &[f64],
    first_score: f64,
    score: &mut dyn FnMut(&[Vec<f64>]) -> Vec<f64>,
    history: &[Vec<f64>],
    w: &SamplingWeights,
    cfg: &GaConfig,
) -> Result<GaResult> {
    let mut obj = |xs: &[Vec<f64>]| {
        let s = score(xs);
        xs.iter()
            .zip(s)
            .map(|(x, s2)| {
                let d = first_score - s2;
                w.v1 * (-d * d).exp() + w.v2 * (sq_dist(first, x) + min_sq_dist(x, history))
            })
            .collect()
    };
    ga_optimize(&mut obj, first.len(), (0.0, 1.0), cfg, &[])
}

/// Batch form scores of designs under a kernel expansion over normalized features.
pub fn design_scores(expansion: &KernelExpansion, norm: &NormalizationStats, xs: &[Vec<f64>]) -> Vec<f64> {
    if expansion.is_empty() {
        return vec![0.0; xs.len()];
    }
    let feats: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| norm.normalize(features(&DesignVector::clamped(x)).as_slice()))
        .collect();
    let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
    expansion.score_batch(&refs)
}

pub fn sample_second_form(
    first: &DesignVector,
    model: &KernelExpansion,
    norm: &NormalizationStats,
    history: &[Vec<f64>],
    w: &SamplingWeights,
    cfg: &GaConfig,
) -> Result<(DesignVector, GaResult)> {
    let s1 = design_scores(model, norm, &[first.as_slice().to_vec()])[0];
    let mut score = |xs: &[Vec<f64>]| design_scores(model, norm, xs);
    let r = sample_second_form_with(first.as_slice(), s1, &mut score, history, w, cfg)?;
    Ok((DesignVector::clamped(&r.best), r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionPairResult {
    pub first: FunctionProfile,
    pub second: FunctionProfile,
    pub objective: f64,
    pub exhaustive: bool,
}

const EXHAUSTIVE_LIMIT: usize = 200_000;

/// Utility-balanced, history-avoiding pair of function profiles.
///
/// `w = [λ, β…]`; the objective is
/// `v1·exp(−(U1 − U2)²) + v2·(‖a1 − a2‖² + min‖a1 − h‖² + min‖a2 − h‖²)` over dummy codes,
/// maximized with ties resolved to the lexicographically first pair.
pub fn sample_function_pair(
    s1: f64,
    s2: f64,
    w: &[f64],
    history: &[FunctionProfile],
    n_attributes: usize,
    n_levels: usize,
    weights: &SamplingWeights,
    seed: u64,
) -> Result<FunctionPairResult> {
    let hist: Vec<Vec<f64>> = history.iter().map(|p| dummy_code(p, n_levels)).collect::<Result<_>>()?;
    let lambda = w.first().copied().unwrap_or(0.0);
    let beta = if w.len() > 1 { &w[1..] } else { &[][..] };
    let util = |s: f64, a: &[f64]| lambda * s + beta.iter().zip(a).map(|(b, x)| b * x).sum::<f64>();
    let obj = |a1: &[f64], a2: &[f64], h1: f64, h2: f64| {
        let d = util(s1, a1) - util(s2, a2);
        weights.v1 * (-d * d).exp() + weights.v2 * (sq_dist(a1, a2) + h1 + h2)
    };
    let n_profiles = n_levels.checked_pow(n_attributes as u32).unwrap_or(usize::MAX);
    if n_profiles.saturating_mul(n_profiles) <= EXHAUSTIVE_LIMIT {
        let profiles = FunctionProfile::enumerate(n_attributes, n_levels);
        let codes: Vec<Vec<f64>> = profiles.iter().map(|p| dummy_code(p, n_levels)).collect::<Result<_>>()?;
        let hmin: Vec<f64> = codes.iter().map(|c| min_sq_dist(c, &hist)).collect();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..codes.len() {
            for j in 0..codes.len() {
                let v = obj(&codes[i], &codes[j], hmin[i], hmin[j]);
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        return Ok(FunctionPairResult {
            first: profiles[best.0].clone(),
            second: profiles[best.1].clone(),
            objective: best.2,
            exhaustive: true,
        });
    }

    // coordinate ascent over single-attribute level changes, several seeded starts
    let mut rng = seeds::rng(seed, &[seeds::tag::FUNCTION_PAIR]);
    let eval = |p1: &FunctionProfile, p2: &FunctionProfile| -> Result<f64> {
        let a1 = dummy_code(p1, n_levels)?;
        let a2 = dummy_code(p2, n_levels)?;
        Ok(obj(&a1, &a2, min_sq_dist(&a1, &hist), min_sq_dist(&a2, &hist)))
    };
    let mut best: Option<(FunctionProfile, FunctionProfile, f64)> = None;
    for _ in 0..8 {
        let mut pair = [0, 1].map(|_| FunctionProfile::new((0..n_attributes).map(|_| rng.random_range(1..=n_levels)).collect()));
        let mut val = eval(&pair[0], &pair[1])?;
        loop {
            let mut improved = false;
            for item in 0..2 {
                for k in 0..n_attributes {
                    for l in 1..=n_levels {
                        let mut trial = pair.clone();
                        trial[item].levels[k] = l;
                        let v = eval(&trial[0], &trial[1])?;
                        if v > val + 1e-15 {
                            val = v;
                            pair = trial;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        let [p1, p2] = pair;
        let better = match &best {
            None => true,
            Some((b1, b2, bv)) => val > *bv || (val == *bv && (&p1, &p2) < (b1, b2)),
        };
        if better {
            best = Some((p1, p2, val));
        }
    }
    let (first, second, objective) = best.expect("at least one start");
    Ok(FunctionPairResult {
        first,
        second,
        objective,
        exhaustive: false,
    })
}

/// One line of the sampler audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub session: String,
    pub round: usize,
    pub first_form_objective: f64,
    pub second_form_objective: f64,
    pub function_objective: f64,
    pub ga_seeds: [u64; 2],
    pub generations: [usize; 2],
    pub wall_time_ms: f64,
}
