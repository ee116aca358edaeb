//! Form preference: Gaussian-kernel rank SVM per respondent, population shrinkage and
//! leave-one-out choice of the shrinkage weight.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::N_FEATURES;
use crate::rank_svm::{self, Gram, SolverOptions};

pub const FORM_MODEL_VERSION: u32 = 1;

pub fn default_gamma() -> f64 {
    1.0 / N_FEATURES as f64
}

pub fn default_eta_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators let the loop vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            let d = a[4 * k + l] - b[4 * k + l];
            acc[l] += d * d;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[inline]
fn kernel_unchecked(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

pub fn kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "kernel arguments differ in dimension ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(kernel_unchecked(a, b, gamma))
}

/// One paired comparison: `chosen` was preferred to `unchosen` by margin `c`
/// (1 = better, 2 = much better).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormResponse {
    pub chosen: Vec<f64>,
    pub unchosen: Vec<f64>,
    pub c: f64,
}

impl FormResponse {
    pub fn new(chosen: Vec<f64>, unchosen: Vec<f64>, c: f64) -> Self {
        FormResponse { chosen, unchosen, c }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.chosen.len() != dim || self.unchosen.len() != dim {
            return Err(Error::domain("form response dimensions differ"));
        }
        if self.chosen.iter().chain(&self.unchosen).any(|v| !v.is_finite()) {
            return Err(Error::domain("form response has non-finite features"));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::domain(format!("margin target must be positive, got {}", self.c)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormModel {
    pub version: u32,
    pub gamma: f64,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub c: Vec<f64>,
    pub alphas: Vec<f64>,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Some multiplier reached the box cap.
    pub soft: bool,
}

impl FormModel {
    pub fn empty(gamma: f64) -> Self {
        FormModel {
            version: FORM_MODEL_VERSION,
            gamma,
            pairs: Vec::new(),
            c: Vec::new(),
            alphas: Vec::new(),
            kkt_residual: 0.0,
            converged: true,
            soft: false,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.pairs
            .iter()
            .zip(&self.alphas)
            .map(|((a, b), al)| al * (kernel_unchecked(x, a, self.gamma) - kernel_unchecked(x, b, self.gamma)))
            .sum()
    }

    pub fn expansion(&self) -> KernelExpansion {
        let mut e = KernelExpansion::new(self.gamma);
        self.accumulate(&mut e, 1.0);
        e
    }

    fn accumulate(&self, e: &mut KernelExpansion, weight: f64) {
        for ((a, b), al) in self.pairs.iter().zip(&self.alphas) {
            if *al != 0.0 {
                e.add(a, weight * al);
                e.add(b, -weight * al);
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("form model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FormModel = serde_json::from_str(s)?;
        if m.version != FORM_MODEL_VERSION {
            return Err(Error::domain(format!("unsupported form model version {}", m.version)));
        }
        if m.alphas.len() != m.pairs.len() || m.c.len() != m.pairs.len() {
            return Err(Error::domain("form model arrays differ in length"));
        }
        Ok(m)
    }
}

pub fn train(responses: &[FormResponse], gamma: f64, opts: &SolverOptions) -> Result<FormModel> {
    if responses.is_empty() {
        return Ok(FormModel::empty(gamma));
    }
    let dim = responses[0].chosen.len();
    for r in responses {
        r.check(dim)?;
    }
    let k = |x: &[f64], y: &[f64]| kernel_unchecked(x, y, gamma);
    let q = Gram::from_fn(responses.len(), |i, j| {
        let (ai, bi) = (&responses[i].chosen, &responses[i].unchosen);
        let (aj, bj) = (&responses[j].chosen, &responses[j].unchosen);
        k(ai, aj) - k(ai, bj) - k(bi, aj) + k(bi, bj)
    });
    let c: Vec<f64> = responses.iter().map(|r| r.c).collect();
    let sol = rank_svm::solve(&q, &c, opts)?;
    if !sol.converged {
        log::warn!(
            "form SVM stopped after {} iterations with KKT residual {:.3e}",
            sol.iterations,
            sol.kkt_residual
        );
    }
    Ok(FormModel {
        version: FORM_MODEL_VERSION,
        gamma,
        pairs: responses.iter().map(|r| (r.chosen.clone(), r.unchosen.clone())).collect(),
        c,
        alphas: sol.alphas,
        kkt_residual: sol.kkt_residual,
        converged: sol.converged,
        soft: sol.at_cap,
    })
}

/// A weighted sum of Gaussian bumps `Σ w_k exp(−γ‖x − z_k‖²)` with identical centres merged.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "ExpansionTerms", into = "ExpansionTerms")]
pub struct KernelExpansion {
    gamma: f64,
    dim: usize,
    centers: Vec<f64>,
    coef: Vec<f64>,
    index: HashMap<Vec<u64>, usize>,
}

#[derive(Serialize, Deserialize)]
struct ExpansionTerms {
    gamma: f64,
    centers: Vec<Vec<f64>>,
    coef: Vec<f64>,
}

impl From<ExpansionTerms> for KernelExpansion {
    fn from(t: ExpansionTerms) -> Self {
        let mut e = KernelExpansion::new(t.gamma);
        for (z, w) in t.centers.iter().zip(&t.coef) {
            e.add(z, *w);
        }
        e
    }
}

impl From<KernelExpansion> for ExpansionTerms {
    fn from(e: KernelExpansion) -> Self {
        ExpansionTerms {
            gamma: e.gamma,
            centers: e.centers.chunks_exact(e.dim.max(1)).map(<[f64]>::to_vec).collect(),
            coef: e.coef,
        }
    }
}

impl KernelExpansion {
    pub fn new(gamma: f64) -> Self {
        KernelExpansion {
            gamma,
            dim: 0,
            centers: Vec::new(),
            coef: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.coef.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coef.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn add(&mut self, center: &[f64], weight: f64) {
        if self.coef.is_empty() {
            self.dim = center.len();
        }
        debug_assert_eq!(center.len(), self.dim);
        let key: Vec<u64> = center.iter().map(|v| v.to_bits()).collect();
        if let Some(&i) = self.index.get(&key) {
            self.coef[i] += weight;
        } else {
            self.index.insert(key, self.coef.len());
            self.centers.extend_from_slice(center);
            self.coef.push(weight);
        }
    }

    /// Adds `weight ×` another expansion term by term.
    pub fn add_scaled(&mut self, other: &KernelExpansion, weight: f64) {
        for (z, w) in other.centers.chunks_exact(other.dim.max(1)).zip(&other.coef) {
            self.add(z, weight * w);
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        if self.coef.is_empty() {
            return 0.0;
        }
        self.centers
            .chunks_exact(self.dim)
            .zip(&self.coef)
            .map(|(z, w)| w * kernel_unchecked(x, z, self.gamma))
            .sum()
    }

    /// Scores many points at once through one matrix product,
    /// using `‖x − z‖² = ‖x‖² + ‖z‖² − 2 xᵀz`.
    pub fn score_batch(&self, xs: &[&[f64]]) -> Vec<f64> {
        if self.coef.is_empty() || xs.is_empty() {
            return vec![0.0; xs.len()];
        }
        if xs.len() * self.len() < 4096 {
            return xs.iter().map(|x| self.score(x)).collect();
        }
        let d = self.dim;
        let n = self.len();
        let z = DMatrix::from_row_slice(n, d, &self.centers);
        let mut flat = Vec::with_capacity(xs.len() * d);
        for x in xs {
            flat.extend_from_slice(x);
        }
        let xm = DMatrix::from_column_slice(d, xs.len(), &flat);
        let dots = &z * &xm;
        let zn: Vec<f64> = self.centers.chunks_exact(d).map(|r| r.iter().map(|v| v * v).sum()).collect();
        xs.iter()
            .enumerate()
            .map(|(m, x)| {
                let xn: f64 = x.iter().map(|v| v * v).sum();
                (0..n)
                    .map(|k| {
                        let sq = (xn + zn[k] - 2.0 * dots[(k, m)]).max(0.0);
                        self.coef[k] * (-self.gamma * sq).exp()
                    })
                    .sum()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationFormModel {
    pub members: Vec<FormModel>,
}

impl PopulationFormModel {
    pub fn new(members: Vec<FormModel>) -> Self {
        PopulationFormModel { members }
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mean_score(&self, x: &[f64]) -> f64 {
        if self.members.is_empty() {
            return 0.0;
        }
        self.members.iter().map(|m| m.score(x)).sum::<f64>() / self.members.len() as f64
    }

    /// The population-average score as one merged expansion.
    pub fn mean_expansion(&self, gamma: f64) -> KernelExpansion {
        let mut e = KernelExpansion::new(gamma);
        let w = 1.0 / self.members.len().max(1) as f64;
        for m in &self.members {
            m.accumulate(&mut e, w);
        }
        e
    }
}

/// `η·S_i(x) + (1 − η)·mean_n S_n(x)`; with an empty population the individual score.
pub fn mix_score(individual: &FormModel, population: &PopulationFormModel, eta: f64, x: &[f64]) -> f64 {
    if eta == 1.0 || population.is_empty() {
        return individual.score(x);
    }
    eta * individual.score(x) + (1.0 - eta) * population.mean_score(x)
}

/// The mixed scorer flattened into a single expansion for repeated evaluation.
pub fn mix_expansion(individual: &FormModel, population: &PopulationFormModel, eta: f64) -> KernelExpansion {
    let mut e = KernelExpansion::new(individual.gamma);
    if eta == 1.0 || population.is_empty() {
        individual.accumulate(&mut e, 1.0);
        return e;
    }
    individual.accumulate(&mut e, eta);
    let w = (1.0 - eta) / population.n() as f64;
    for m in &population.members {
        m.accumulate(&mut e, w);
    }
    e
}

/// Linear interpolation from 1 for the first respondent down to 0.7 for the last.
pub fn eta_schedule(index: usize, n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    let i = index.clamp(1, n);
    1.0 - 0.3 * (i - 1) as f64 / (n - 1) as f64
}

/// Leave-one-out choice of η from `grid`, counting misordered held-out pairs.
/// Ties go to the larger η. Fewer than two responses returns `fallback`.
pub fn select_eta_cv(
    responses: &[FormResponse],
    population: &PopulationFormModel,
    grid: &[f64],
    gamma: f64,
    opts: &SolverOptions,
    fallback: f64,
) -> Result<f64> {
    if population.is_empty() {
        return select_eta_cv_with(responses, None, grid, gamma, opts, fallback);
    }
    let pop = population.mean_expansion(gamma);
    select_eta_cv_with(responses, Some(&|x: &[f64]| pop.score(x)), grid, gamma, opts, fallback)
}

/// As [`select_eta_cv`] with the population-average score supplied directly.
pub fn select_eta_cv_with(
    responses: &[FormResponse],
    population_score: Option<&dyn Fn(&[f64]) -> f64>,
    grid: &[f64],
    gamma: f64,
    opts: &SolverOptions,
    fallback: f64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::domain("empty η grid"));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    if responses.len() < 2 {
        return Ok(fallback);
    }
    let mut ind_diff = Vec::with_capacity(responses.len());
    let mut pop_diff = Vec::with_capacity(responses.len());
    for j in 0..responses.len() {
        let rest: Vec<FormResponse> = responses
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, r)| r.clone())
            .collect();
        let m = train(&rest, gamma, opts)?;
        let r = &responses[j];
        ind_diff.push(m.score(&r.chosen) - m.score(&r.unchosen));
        pop_diff.push(population_score.map_or(0.0, |f| f(&r.chosen) - f(&r.unchosen)));
    }
    let mut best_eta = f64::NEG_INFINITY;
    let mut best_miss = usize::MAX;
    for &eta in grid {
        let miss = ind_diff
            .iter()
            .zip(&pop_diff)
            .filter(|(i, p)| {
                let d = if population_score.is_none() { **i } else { eta * **i + (1.0 - eta) * **p };
                d <= 0.0
            })
            .count();
        if miss < best_miss || (miss == best_miss && eta > best_eta) {
            best_miss = miss;
            best_eta = eta;
        }
    }
    Ok(best_eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: f64, d: usize) -> Vec<f64> {
        vec![v; d]
    }

    #[test]
    fn kernel_identity_and_substitution() {
        let x = vec![0.3; 325];
        assert_eq!(kernel(&x, &x, default_gamma()).unwrap(), 1.0);
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let k = kernel(&x, &y, default_gamma()).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        assert!(kernel(&x, &y[..10], 0.1).is_err());
    }

    #[test]
    fn batch_scoring_matches_direct() {
        let mut e = KernelExpansion::new(0.01);
        for k in 0..40 {
            let c: Vec<f64> = (0..37).map(|i| ((i * 7 + k * 3) % 11) as f64 / 5.0).collect();
            e.add(&c, if k % 2 == 0 { 1.5 } else { -0.7 });
        }
        let xs: Vec<Vec<f64>> = (0..120).map(|m| (0..37).map(|i| ((i + m) % 13) as f64 / 6.0).collect()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let batch = e.score_batch(&refs);
        for (x, b) in xs.iter().zip(&batch) {
            assert!((e.score(x) - b).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_centres_merge() {
        let mut e = KernelExpansion::new(1.0);
        e.add(&[1.0, 2.0], 1.0);
        e.add(&[1.0, 2.0], 2.0);
        e.add(&[0.0, 2.0], 1.0);
        assert_eq!(e.len(), 2);
        assert!((e.score(&[1.0, 2.0]) - (3.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn empty_model_scores_zero() {
        let m = train(&[], 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(m.score(&unit(0.2, 4)), 0.0);
    }

    #[test]
    fn eta_schedule_endpoints() {
        assert_eq!(eta_schedule(1, 100), 1.0);
        assert!((eta_schedule(100, 100) - 0.7).abs() < 1e-15);
        assert!((eta_schedule(50, 100) - (1.0 - 0.3 * 49.0 / 99.0)).abs() < 1e-15);
        assert_eq!(eta_schedule(1, 1), 1.0);
    }

    #[test]
    fn json_round_trip() {
        let r = vec![FormResponse::new(unit(0.0, 3), unit(1.0, 3), 2.0)];
        let m = train(&r, 0.3, &SolverOptions::default()).unwrap();
        let back = FormModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
