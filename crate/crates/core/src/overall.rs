//! Overall utility `U = λ·s + βᵀa` over the form score and function-attribute dummies.
//!
//! Online estimation is a linear rank SVM with population shrinkage; offline estimation
//! is a hierarchical Bayes binary logit sampled by Metropolis-within-Gibbs.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rank_svm::{self, Gram, SolverOptions};
use crate::seeds;

pub const DEFAULT_LEVELS: usize = 5;

/// One level per function attribute, 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FunctionProfile {
    pub levels: Vec<usize>,
}

impl FunctionProfile {
    pub fn new(levels: Vec<usize>) -> Self {
        FunctionProfile { levels }
    }

    /// The two-attribute (price, MPG) profile.
    pub fn price_mpg(price: usize, mpg: usize) -> Self {
        FunctionProfile { levels: vec![price, mpg] }
    }

    pub fn validate(&self, n_levels: usize) -> Result<()> {
        for (k, &l) in self.levels.iter().enumerate() {
            if l < 1 || l > n_levels {
                return Err(Error::domain(format!(
                    "attribute {} level {l} outside 1..={n_levels}",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// All profiles in lexicographic order.
    pub fn enumerate(n_attributes: usize, n_levels: usize) -> Vec<FunctionProfile> {
        let total = n_levels.pow(n_attributes as u32);
        (0..total)
            .map(|mut code| {
                let mut levels = vec![0; n_attributes];
                for k in (0..n_attributes).rev() {
                    levels[k] = code % n_levels + 1;
                    code /= n_levels;
                }
                FunctionProfile { levels }
            })
            .collect()
    }
}

/// Level `L > 1` sets dummy `L − 1` of its attribute block; level 1 is the all-zero baseline.
pub fn dummy_code(profile: &FunctionProfile, n_levels: usize) -> Result<Vec<f64>> {
    profile.validate(n_levels)?;
    let block = n_levels - 1;
    let mut a = vec![0.0; profile.levels.len() * block];
    for (k, &l) in profile.levels.iter().enumerate() {
        if l > 1 {
            a[k * block + l - 2] = 1.0;
        }
    }
    Ok(a)
}

pub fn dummy_decode(a: &[f64], n_levels: usize) -> Result<FunctionProfile> {
    let block = n_levels - 1;
    if block == 0 || a.len() % block != 0 {
        return Err(Error::domain("dummy vector length is not a multiple of the block size"));
    }
    let mut levels = Vec::with_capacity(a.len() / block);
    for chunk in a.chunks(block) {
        let ones: Vec<usize> = chunk.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        if chunk.iter().any(|v| *v != 0.0 && *v != 1.0) || ones.len() > 1 {
            return Err(Error::domain("dummy block is not one-hot"));
        }
        levels.push(ones.first().map_or(1, |i| i + 2));
    }
    Ok(FunctionProfile { levels })
}

/// `X = [s, a]`.
pub fn utility_input(s: f64, dummies: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(dummies.len() + 1);
    x.push(s);
    x.extend_from_slice(dummies);
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `P(choose X1) = 1 / (1 + exp(Wᵀ(X2 − X1)))`.
pub fn predict_choice(w: &[f64], x1: &[f64], x2: &[f64]) -> f64 {
    let z: f64 = w.iter().zip(x1.iter().zip(x2)).map(|(wi, (a, b))| wi * (a - b)).sum();
    logistic(z)
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_logistic(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallModelOnline {
    pub w: Vec<f64>,
    pub alphas: Vec<f64>,
    pub converged: bool,
}

impl OverallModelOnline {
    pub fn zero(dim: usize) -> Self {
        OverallModelOnline {
            w: vec![0.0; dim],
            alphas: Vec::new(),
            converged: true,
        }
    }

    pub fn utility(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }
}

/// Linear rank SVM over `(chosen, unchosen)` inputs with margin `margin`; `W = Σ α_j (X1 − X2)`.
pub fn train_online(questions: &[(Vec<f64>, Vec<f64>)], margin: f64, opts: &SolverOptions) -> Result<OverallModelOnline> {
    let Some(first) = questions.first() else {
        return Err(Error::domain("online training needs at least one question"));
    };
    let dim = first.0.len();
    let mut diffs = Vec::with_capacity(questions.len());
    for (a, b) in questions {
        if a.len() != dim || b.len() != dim {
            return Err(Error::domain("utility inputs differ in dimension"));
        }
        if a.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::domain("utility input has non-finite entries"));
        }
        diffs.push(a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>());
    }
    let q = Gram::from_fn(diffs.len(), |i, j| dot(&diffs[i], &diffs[j]));
    let c = vec![margin; diffs.len()];
    let sol = rank_svm::solve(&q, &c, opts)?;
    let mut w = vec![0.0; dim];
    for (d, al) in diffs.iter().zip(&sol.alphas) {
        for (wk, dk) in w.iter_mut().zip(d) {
            *wk += al * dk;
        }
    }
    Ok(OverallModelOnline {
        w,
        alphas: sol.alphas,
        converged: sol.converged,
    })
}

/// `η·W_i + (1 − η)·mean(population)`.
pub fn shrink(w_i: &[f64], population: &[Vec<f64>], eta: f64) -> Vec<f64> {
    if population.is_empty() || eta == 1.0 {
        return w_i.to_vec();
    }
    let n = population.len() as f64;
    w_i.iter()
        .enumerate()
        .map(|(k, w)| {
            let mean = population.iter().map(|p| p[k]).sum::<f64>() / n;
            eta * w + (1.0 - eta) * mean
        })
        .collect()
}

/// One binary choice: the chosen input first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub chosen: Vec<f64>,
    pub unchosen: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    /// Prior degrees of freedom are `dim + nu_offset`.
    pub nu_offset: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 10,
            target_acceptance: 0.3,
            nu_offset: 3.0,
            seed: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::config("mcmc.burn_in", "must be smaller than iterations"));
        }
        if self.thin == 0 {
            return Err(Error::config("mcmc.thin", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.target_acceptance) || self.target_acceptance == 0.0 {
            return Err(Error::config("mcmc.target_acceptance", "must lie in (0, 1)"));
        }
        if self.nu_offset <= 1.0 {
            return Err(Error::config("mcmc.nu_offset", "must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbDiagnostics {
    pub acceptance: Vec<f64>,
    pub draws: usize,
    /// Respondents whose post-burn-in acceptance fell outside [0.05, 0.8].
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HbPosterior {
    pub dim: usize,
    /// `draws[i][k]` is the k-th kept draw of respondent i.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// Row-major `dim × dim` covariance draws.
    pub lambda_draws: Vec<Vec<f64>>,
    pub diagnostics: HbDiagnostics,
    pub config: McmcConfig,
    pub data_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Mean and population SD (divide by the draw count) over a chain.
pub fn summarize_chain(chain: &[Vec<f64>]) -> WSummary {
    let n = chain.len().max(1) as f64;
    let dim = chain.first().map_or(0, |d| d.len());
    let mut mean = vec![0.0; dim];
    for d in chain {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for d in chain {
        for ((s, v), m) in sd.iter_mut().zip(d).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt());
    WSummary { mean, sd }
}

impl HbPosterior {
    pub fn n_respondents(&self) -> usize {
        self.draws.len()
    }

    pub fn posterior_mean(&self, respondent: usize) -> Result<WSummary> {
        let chain = self.draws.get(respondent).ok_or(Error::NotFound {
            kind: "respondent",
            id: respondent.to_string(),
        })?;
        Ok(summarize_chain(chain))
    }

    pub fn posterior_means(&self) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| summarize_chain(c).mean).collect()
    }

    /// Writes one JSON line per kept draw plus a manifest line first.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let manifest = serde_json::json!({
            "kind": "manifest",
            "dim": self.dim,
            "respondents": self.draws.len(),
            "draws": self.diagnostics.draws,
            "config": self.config,
            "data_hash": self.data_hash,
            "acceptance": self.diagnostics.acceptance,
            "flagged": self.diagnostics.flagged,
        });
        writeln!(out, "{manifest}")?;
        for (i, chain) in self.draws.iter().enumerate() {
            for (k, w) in chain.iter().enumerate() {
                writeln!(out, "{}", serde_json::json!({"kind": "w", "respondent": i, "draw": k, "w": w}))?;
            }
        }
        for (k, l) in self.lambda_draws.iter().enumerate() {
            writeln!(out, "{}", serde_json::json!({"kind": "lambda", "draw": k, "lambda": l}))?;
        }
        Ok(())
    }
}

/// SHA-256 over the serialized choice data; ties a posterior to its inputs.
pub fn data_hash(data: &[Vec<Choice>]) -> String {
    let bytes = serde_json::to_vec(data).expect("choices serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn sym_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Draw from `InverseWishart(ν, S)` as the inverse of `Wishart(ν, S⁻¹)` via Bartlett.
pub fn sample_inverse_wishart(nu: f64, scale: &DMatrix<f64>, rng: &mut seeds::Rng) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    let s_inv = sym_inverse(scale)?;
    let l = s_inv
        .cholesky()
        .ok_or_else(|| Error::numerical("inverse-Wishart scale is not positive definite"))?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = &l * &a;
    let wishart = &la * la.transpose();
    sym_inverse(&wishart)
}

fn log_lik(w: &DVector<f64>, diffs: &[DVector<f64>]) -> f64 {
    diffs.iter().map(|d| log_logistic(w.dot(d))).sum()
}

fn log_prior(w: &DVector<f64>, prec: &DMatrix<f64>) -> f64 {
    -0.5 * (w.transpose() * prec * w)[(0, 0)]
}

/// Hierarchical binary logit: `W_i ~ N(0, Λ)`, `Λ ~ IW(dim + nu_offset, (dim + nu_offset)·I)`.
pub fn fit_hb(data: &[Vec<Choice>], cfg: &McmcConfig) -> Result<HbPosterior> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::domain("no respondents to fit"));
    }
    let dim = data
        .iter()
        .flat_map(|r| r.first())
        .map(|c| c.chosen.len())
        .next()
        .ok_or_else(|| Error::domain("no purchase questions"))?;
    let mut diffs: Vec<Vec<DVector<f64>>> = Vec::with_capacity(n);
    for (i, resp) in data.iter().enumerate() {
        if resp.is_empty() {
            return Err(Error::domain(format!("respondent {i} has no purchase questions")));
        }
        let mut rd = Vec::with_capacity(resp.len());
        for c in resp {
            if c.chosen.len() != dim || c.unchosen.len() != dim {
                return Err(Error::domain("choice inputs differ in dimension"));
            }
            let d: Vec<f64> = c.chosen.iter().zip(&c.unchosen).map(|(a, b)| a - b).collect();
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("respondent {i} has non-finite choice data")));
            }
            rd.push(DVector::from_vec(d));
        }
        diffs.push(rd);
    }

    let nu0 = dim as f64 + cfg.nu_offset;
    let scale0 = DMatrix::<f64>::identity(dim, dim) * nu0;
    let mut rng = seeds::rng(cfg.seed, &[seeds::tag::MCMC]);

    // Fisher information at W = 0: ¼ Σ d dᵀ
    let info: Vec<DMatrix<f64>> = diffs
        .iter()
        .map(|rd| rd.iter().fold(DMatrix::zeros(dim, dim), |acc, d| acc + d * d.transpose() * 0.25))
        .collect();

    let mut w: Vec<DVector<f64>> = vec![DVector::zeros(dim); n];
    let mut ll: Vec<f64> = w.iter().zip(&diffs).map(|(wi, d)| log_lik(wi, d)).collect();
    let mut lambda = DMatrix::<f64>::identity(dim, dim);
    let mut prec = sym_inverse(&lambda)?;
    let mut log_scale = vec![(2.38 / (dim as f64).sqrt()).ln(); n];
    let mut prop_chol: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let refresh = |prec: &DMatrix<f64>, out: &mut Vec<DMatrix<f64>>| -> Result<()> {
        out.clear();
        for h in &info {
            let v = sym_inverse(&(h + prec))?;
            out.push(
                v.cholesky()
                    .ok_or_else(|| Error::numerical("proposal covariance is not positive definite"))?
                    .l(),
            );
        }
        Ok(())
    };
    refresh(&prec, &mut prop_chol)?;

    let keep = (cfg.iterations - cfg.burn_in) / cfg.thin;
    let mut draws: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(keep); n];
    let mut lambda_draws = Vec::with_capacity(keep);
    let mut window_acc = vec![0usize; n];
    let mut post_acc = vec![0usize; n];
    const WINDOW: usize = 50;
    let mut z = DVector::<f64>::zeros(dim);

    for it in 0..cfg.iterations {
        let burning = it < cfg.burn_in;
        for i in 0..n {
            for k in 0..dim {
                z[k] = StandardNormal.sample(&mut rng);
            }
            let step = &prop_chol[i] * &z * log_scale[i].exp();
            let cand = &w[i] + step;
            let ll_c = log_lik(&cand, &diffs[i]);
            if !ll_c.is_finite() {
                return Err(Error::numerical(format!("non-finite likelihood for respondent {i}")));
            }
            let log_r = ll_c + log_prior(&cand, &prec) - ll[i] - log_prior(&w[i], &prec);
            let u: f64 = rng.random();
            if u.ln() < log_r {
                w[i] = cand;
                ll[i] = ll_c;
                if burning {
                    window_acc[i] += 1;
                } else {
                    post_acc[i] += 1;
                }
            }
        }

        let mut s = scale0.clone();
        for wi in &w {
            s += wi * wi.transpose();
        }
        lambda = sample_inverse_wishart(nu0 + n as f64, &s, &mut rng)?;
        prec = sym_inverse(&lambda)?;

        if burning && (it + 1) % WINDOW == 0 {
            let t = ((it + 1) / WINDOW) as f64;
            for i in 0..n {
                let rate = window_acc[i] as f64 / WINDOW as f64;
                log_scale[i] += (rate - cfg.target_acceptance) / t.sqrt();
                window_acc[i] = 0;
            }
            refresh(&prec, &mut prop_chol)?;
        }
        if !burning && (it - cfg.burn_in + 1) % cfg.thin == 0 {
            for i in 0..n {
                draws[i].push(w[i].iter().copied().collect());
            }
            lambda_draws.push(lambda.transpose().iter().copied().collect());
        }
    }

    let post = (cfg.iterations - cfg.burn_in) as f64;
    let acceptance: Vec<f64> = post_acc.iter().map(|&a| a as f64 / post).collect();
    let flagged: Vec<usize> = acceptance
        .iter()
        .enumerate()
        .filter(|(_, a)| !(0.05..=0.8).contains(*a))
        .map(|(i, _)| i)
        .collect();
    if !flagged.is_empty() {
        log::warn!("HB acceptance outside [0.05, 0.8] for {} respondents", flagged.len());
    }
    Ok(HbPosterior {
        dim,
        diagnostics: HbDiagnostics {
            acceptance,
            draws: lambda_draws.len(),
            flagged,
        },
        draws,
        lambda_draws,
        config: cfg.clone(),
        data_hash: data_hash(data),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dummy_coding_baseline_and_blocks() {
        assert_eq!(dummy_code(&FunctionProfile::price_mpg(1, 1), 5).unwrap(), vec![0.0; 8]);
        assert_eq!(
            dummy_code(&FunctionProfile::price_mpg(3, 5), 5).unwrap(),
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert!(dummy_code(&FunctionProfile::price_mpg(6, 1), 5).is_err());
        assert!(dummy_code(&FunctionProfile::price_mpg(0, 1), 5).is_err());
    }

    #[test]
    fn dummy_round_trip_all_profiles() {
        let all = FunctionProfile::enumerate(2, 5);
        assert_eq!(all.len(), 25);
        assert_eq!(all[0], FunctionProfile::price_mpg(1, 1));
        assert_eq!(all[24], FunctionProfile::price_mpg(5, 5));
        for p in all {
            assert_eq!(dummy_decode(&dummy_code(&p, 5).unwrap(), 5).unwrap(), p);
        }
    }

    #[test]
    fn logit_reference_value() {
        let w = [3.0];
        assert!((predict_choice(&w, &[1.0], &[0.0]) - 0.952_574_126_822_433_1).abs() < 1e-15);
        assert_eq!(predict_choice(&[0.0, 0.0], &[1.0, 2.0], &[3.0, 4.0]), 0.5);
    }

    #[test]
    fn chain_summary_population_convention() {
        let s = summarize_chain(&[vec![0.0], vec![2.0]]);
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.sd, vec![1.0]);
        let c = summarize_chain(&[vec![4.0], vec![4.0], vec![4.0]]);
        assert_eq!(c.sd, vec![0.0]);
    }

    #[test]
    fn shrink_formula() {
        let pop = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(shrink(&[0.0, 0.0], &pop, 0.5), vec![1.0, 1.5]);
        assert_eq!(shrink(&[5.0, 6.0], &pop, 1.0), vec![5.0, 6.0]);
        let same = shrink(&[5.0, 6.0], &[vec![5.0, 6.0]], 0.3);
        assert!((same[0] - 5.0).abs() < 1e-14 && (same[1] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_wishart_draws_are_spd() {
        let mut rng = seeds::rng(3, &[]);
        let s = DMatrix::<f64>::identity(4, 4) * 7.0;
        for _ in 0..50 {
            let l = sample_inverse_wishart(7.0, &s, &mut rng).unwrap();
            assert!((&l - l.transpose()).abs().max() < 1e-12);
            assert!(l.clone().cholesky().is_some());
        }
    }
}
