//! Post-hoc analytics over finalized models: importances, segmentation, group-optimal
//! designs, local sensitivities and willingness-to-trade-off tables.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::form::KernelExpansion;
use crate::geometry::{DesignVector, NormalizationStats, N_DESIGN_VARS};
use crate::overall::HbPosterior;
use crate::sampler::{design_scores, ga_optimize, GaConfig};
use crate::seeds::{self, tag};
use crate::survey::FinalModels;

/// Finite-difference step, also the perturbation behind the trade-off tables.
pub const FD_STEP: f64 = 0.01;

/// Per-level partworths of every attribute from a dummy-coded `W = [λ, β…]`, baseline level 1 at 0.
pub fn level_partworths(w: &[f64], n_attributes: usize, n_levels: usize) -> Result<Vec<Vec<f64>>> {
    if n_levels < 2 || w.len() != 1 + n_attributes * (n_levels - 1) {
        return Err(Error::domain(format!(
            "W has {} entries, expected {} for {n_attributes} attributes of {n_levels} levels",
            w.len(),
            1 + n_attributes * (n_levels.max(1) - 1)
        )));
    }
    Ok((0..n_attributes)
        .map(|a| std::iter::once(0.0).chain(w[1 + a * (n_levels - 1)..1 + (a + 1) * (n_levels - 1)].iter().copied()).collect())
        .collect())
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTriple {
    pub form: f64,
    pub price: f64,
    pub mpg: f64,
}

impl ImportanceTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.form, self.price, self.mpg]
    }
}

/// Where price and mileage sit among the attributes, and which levels bracket the
/// interquartile step of each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffLevels {
    pub n_attributes: usize,
    pub n_levels: usize,
    pub price_attribute: usize,
    /// 1-based levels; utility per unit is `(pw[cheap] − pw[dear]) / price_step`.
    pub price_cheap: usize,
    pub price_dear: usize,
    /// Price difference between the two levels, in $1000.
    pub price_step: f64,
    pub mpg_attribute: usize,
    pub mpg_good: usize,
    pub mpg_poor: usize,
    /// Mileage difference between the two levels, in MPG.
    pub mpg_step: f64,
}

impl Default for TradeoffLevels {
    /// `$25K` vs `$29K` and `25/31` vs `23/29` on the default attributes.
    fn default() -> Self {
        TradeoffLevels {
            n_attributes: 2,
            n_levels: 5,
            price_attribute: 0,
            price_cheap: 2,
            price_dear: 4,
            price_step: 4.0,
            mpg_attribute: 1,
            mpg_good: 4,
            mpg_poor: 2,
            mpg_step: 2.0,
        }
    }
}

impl TradeoffLevels {
    /// Utility of $1000 less and of one MPG more.
    pub fn per_unit(&self, levels: &[Vec<f64>]) -> (f64, f64) {
        let p = &levels[self.price_attribute];
        let m = &levels[self.mpg_attribute];
        (
            (p[self.price_cheap - 1] - p[self.price_dear - 1]) / self.price_step,
            (m[self.mpg_good - 1] - m[self.mpg_poor - 1]) / self.mpg_step,
        )
    }
}

/// Form weight and the two function ranges of each respondent, averaged over the draws.
pub fn importances(posterior: &HbPosterior, levels: &TradeoffLevels) -> Result<Vec<ImportanceTriple>> {
    posterior
        .draws
        .iter()
        .map(|chain| {
            if chain.is_empty() {
                return Ok(ImportanceTriple { form: 0.0, price: 0.0, mpg: 0.0 });
            }
            let mut acc = [0.0; 3];
            for w in chain {
                let lv = level_partworths(w, levels.n_attributes, levels.n_levels)?;
                acc[0] += w[0];
                acc[1] += spread(&lv[levels.price_attribute]);
                acc[2] += spread(&lv[levels.mpg_attribute]);
            }
            let n = chain.len() as f64;
            Ok(ImportanceTriple {
                form: acc[0] / n,
                price: acc[1] / n,
                mpg: acc[2] / n,
            })
        })
        .collect()
}

/// Column-wise z-scores with the population standard deviation; constant columns map to 0.
pub fn zscore(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut out = rows.to_vec();
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (o, r) in out.iter_mut().zip(rows) {
            o[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ward-linkage agglomeration cut at `k` groups. Labels are numbered by first appearance.
pub fn ward(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut label: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    // Lance-Williams on squared Euclidean distances, halved so merge cost is the SSE increase
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * sq(&points[i], &points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut clusters = n;
    while clusters > k.max(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if alive[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dij, a, b) = best;
        for m in 0..n {
            if !alive[m] || m == a || m == b {
                continue;
            }
            let (na, nb, nm) = (size[a] as f64, size[b] as f64, size[m] as f64);
            let v = ((na + nm) * d[a][m] + (nb + nm) * d[b][m] - nm * dij) / (na + nb + nm);
            d[a][m] = v;
            d[m][a] = v;
        }
        size[a] += size[b];
        alive[b] = false;
        for l in label.iter_mut() {
            if *l == b {
                *l = a;
            }
        }
        clusters -= 1;
    }
    renumber(&label)
}

fn renumber(label: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    label
        .iter()
        .map(|l| match map.iter().find(|(from, _)| from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((*l, to));
                to
            }
        })
        .collect()
}

fn centroids(points: &[Vec<f64>], label: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points.first().map_or(0, Vec::len);
    let mut c = vec![vec![0.0; d]; k];
    let mut n = vec![0usize; k];
    for (p, &l) in points.iter().zip(label) {
        n[l] += 1;
        for (cj, pj) in c[l].iter_mut().zip(p) {
            *cj += pj;
        }
    }
    for (cl, &nl) in c.iter_mut().zip(&n) {
        if nl > 0 {
            cl.iter_mut().for_each(|v| *v /= nl as f64);
        }
    }
    c
}

fn assign(points: &[Vec<f64>], c: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            (0..c.len())
                .min_by(|&a, &b| sq(p, &c[a]).total_cmp(&sq(p, &c[b])))
                .unwrap_or(0)
        })
        .collect()
}

fn sse(points: &[Vec<f64>], label: &[usize], c: &[Vec<f64>]) -> f64 {
    points.iter().zip(label).map(|(p, &l)| sq(p, &c[l])).sum()
}

/// Lloyd iterations from the given centres until assignments settle.
fn lloyd(points: &[Vec<f64>], mut c: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = c.len();
    let mut label = assign(points, &c);
    for _ in 0..300 {
        let next_c = centroids(points, &label, k);
        // an emptied group keeps its old centre
        for (j, nc) in next_c.into_iter().enumerate() {
            if label.contains(&j) {
                c[j] = nc;
            }
        }
        let next = assign(points, &c);
        if next == label {
            break;
        }
        label = next;
    }
    (label, c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    pub centroids_raw: Vec<[f64; 3]>,
    pub centroids_std: Vec<[f64; 3]>,
    pub within_sse: f64,
}

/// Ward on z-scored triples seeds K-means; five seeded k-means++ restarts compete and the
/// lowest within-group sum of squares wins, ties going to the Ward start.
pub fn cluster(triples: &[ImportanceTriple], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > triples.len() {
        return Err(Error::domain(format!("cannot form {k} groups from {} respondents", triples.len())));
    }
    let raw: Vec<Vec<f64>> = triples.iter().map(|t| t.as_array().to_vec()).collect();
    let z = zscore(&raw);
    let w = ward(&z, k);
    let mut best = lloyd(&z, centroids(&z, &w, k));
    let mut best_sse = sse(&z, &best.0, &best.1);
    let mut rng = seeds::rng(seed, &[tag::ANALYSIS]);
    for _ in 0..5 {
        let mut c: Vec<Vec<f64>> = vec![z[rng.random_range(0..z.len())].clone()];
        while c.len() < k {
            let dist: Vec<f64> = z.iter().map(|p| c.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min)).collect();
            let total: f64 = dist.iter().sum();
            if total == 0.0 {
                c.push(z[rng.random_range(0..z.len())].clone());
                continue;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = dist.len() - 1;
            for (i, di) in dist.iter().enumerate() {
                if u < *di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            c.push(z[pick].clone());
        }
        let cand = lloyd(&z, c);
        let s = sse(&z, &cand.0, &cand.1);
        if s < best_sse - 1e-12 {
            best = cand;
            best_sse = s;
        }
    }
    let label = renumber(&best.0);
    let k_eff = label.iter().max().map_or(0, |m| m + 1);
    let to3 = |v: Vec<f64>| [v[0], v[1], v[2]];
    let sizes = (0..k_eff).map(|g| label.iter().filter(|&&l| l == g).count()).collect();
    Ok(Clustering {
        k: k_eff,
        centroids_raw: centroids(&raw, &label, k_eff).into_iter().map(to3).collect(),
        centroids_std: centroids(&z, &label, k_eff).into_iter().map(to3).collect(),
        within_sse: best_sse,
        sizes,
        assignments: label,
    })
}

/// A form scorer over design vectors.
pub trait DesignScorer: Sync {
    fn score_batch(&self, xs: &[Vec<f64>]) -> Vec<f64>;

    fn score(&self, x: &[f64]) -> f64 {
        self.score_batch(&[x.to_vec()])[0]
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> DesignScorer for F {
    fn score_batch(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self(x)).collect()
    }
}

/// A kernel expansion over normalized features, evaluated at clamped designs.
pub struct KernelScorer<'a> {
    pub expansion: KernelExpansion,
    pub norm: &'a NormalizationStats,
}

impl DesignScorer for KernelScorer<'_> {
    fn score_batch(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        design_scores(&self.expansion, self.norm, xs)
    }
}

/// Unweighted mean of the members' final scorers.
pub fn group_expansion(models: &FinalModels, members: &[usize]) -> KernelExpansion {
    let gamma = models.population_mean.gamma();
    let mut e = KernelExpansion::new(gamma);
    if members.is_empty() {
        return e;
    }
    let w = 1.0 / members.len() as f64;
    for &i in members {
        e.add_scaled(&models.scorer(i), w);
    }
    e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalDesign {
    pub design: DesignVector,
    pub score: f64,
    /// The scorer did not vary over the search, so any box point is optimal.
    pub degenerate: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Maximizes `f` over `[0, 1]` by golden-section search, never returning worse than `at`.
fn golden_max(f: &mut dyn FnMut(f64) -> f64, at: f64, f_at: f64) -> (f64, f64) {
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let (x, fx) = if fc > fd { (c, fc) } else { (d, fd) };
    if fx > f_at {
        (x, fx)
    } else {
        (at, f_at)
    }
}

/// GA maximum of the scorer, best of `restarts` seeded runs, then coordinate-wise
/// golden-section polish until a sweep gains nothing.
pub fn optimal_design(scorer: &dyn DesignScorer, ga: &GaConfig, restarts: usize, seed: u64) -> Result<OptimalDesign> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in 0..restarts.max(1) {
        let cfg = ga.with_seed(seeds::derive(seed, &[tag::ANALYSIS, r as u64]));
        let mut obj = |xs: &[Vec<f64>]| {
            let s = scorer.score_batch(xs);
            for v in &s {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            s
        };
        let res = ga_optimize(&mut obj, N_DESIGN_VARS, (0.0, 1.0), &cfg, &[])?;
        if best.as_ref().is_none_or(|(_, v)| res.value > *v) {
            best = Some((res.best, res.value));
        }
    }
    let (mut x, mut fx) = best.ok_or_else(|| Error::numerical("optimizer returned nothing"))?;
    let degenerate = !(hi - lo > 1e-12 * hi.abs().max(1.0));
    if !degenerate {
        for _ in 0..3 {
            let before = fx;
            for k in 0..N_DESIGN_VARS {
                let mut probe = x.clone();
                let mut f1 = |v: f64| {
                    probe[k] = v;
                    scorer.score(&probe)
                };
                let (v, fv) = golden_max(&mut f1, x[k], fx);
                x[k] = v;
                fx = fv;
            }
            if fx <= before {
                break;
            }
        }
    }
    Ok(OptimalDesign {
        design: DesignVector::clamped(&x),
        score: fx,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub gradient: Vec<f64>,
    pub hessian_diag: Vec<f64>,
    /// Every coordinate lies at least one step inside the box.
    pub interior: bool,
    /// Gradient ∞-norm below `10·h²·max|H_kk|`.
    pub stationary: bool,
}

/// Central differences of `λ·S` at `x` with step [`FD_STEP`].
pub fn sensitivities(scorer: &dyn DesignScorer, lambda: f64, x: &[f64]) -> Sensitivity {
    let h = FD_STEP;
    let mut pts = vec![x.to_vec()];
    for k in 0..x.len() {
        let mut p = x.to_vec();
        p[k] += h;
        pts.push(p.clone());
        p[k] -= 2.0 * h;
        pts.push(p);
    }
    let s = scorer.score_batch(&pts);
    let mut gradient = Vec::with_capacity(x.len());
    let mut hessian_diag = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let (up, down) = (s[1 + 2 * k], s[2 + 2 * k]);
        gradient.push(lambda * (up - down) / (2.0 * h));
        hessian_diag.push(lambda * (up - 2.0 * s[0] + down) / (h * h));
    }
    let hmax = hessian_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gmax = gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Sensitivity {
        interior: x.iter().all(|&v| v >= h && v <= 1.0 - h),
        stationary: gmax < 10.0 * h * h * hmax,
        gradient,
        hessian_diag,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    /// 1-based design variable.
    pub design_var: usize,
    pub hessian_diag: f64,
    /// $1000 per unit change; `None` when the per-$1000 utility is not positive.
    pub wttp: Option<f64>,
    /// MPG per unit change; `None` when the per-MPG utility is not positive.
    pub wttm: Option<f64>,
}

/// Willingness to trade off each design variable against price and mileage at `x`.
///
/// `ΔS_k = S(x) − ½[S(x + h e_k) + S(x − h e_k)]` with `h = 0.01`, and
/// `WTTP_k = 100·λ·ΔS_k / u_$1000`, `WTTM_k = 100·λ·ΔS_k / u_MPG`.
pub fn wtt(scorer: &dyn DesignScorer, lambda: f64, partworths: &[Vec<f64>], levels: &TradeoffLevels, x: &[f64]) -> Vec<TradeoffRow> {
    let sens = sensitivities(scorer, lambda, x);
    let h = FD_STEP;
    let mut pts = vec![x.to_vec()];
    for k in 0..x.len() {
        let mut p = x.to_vec();
        p[k] += h;
        pts.push(p.clone());
        p[k] -= 2.0 * h;
        pts.push(p);
    }
    let s = scorer.score_batch(&pts);
    let (per_k, per_mpg) = levels.per_unit(partworths);
    (0..x.len())
        .map(|k| {
            let ds = s[0] - 0.5 * (s[1 + 2 * k] + s[2 + 2 * k]);
            let v = 100.0 * lambda * ds;
            TradeoffRow {
                design_var: k + 1,
                hessian_diag: sens.hessian_diag[k],
                wttp: (per_k > 0.0).then(|| v / per_k),
                wttm: (per_mpg > 0.0).then(|| v / per_mpg),
            }
        })
        .collect()
}

/// Dollars per MPG: `u_MPG / u_$1000 × 1000`. `None` when the per-$1000 utility is zero or
/// not finite.
pub fn wtp_mpg(partworths: &[Vec<f64>], levels: &TradeoffLevels) -> Option<f64> {
    let (per_k, per_mpg) = levels.per_unit(partworths);
    (per_k != 0.0 && per_k.is_finite() && per_mpg.is_finite()).then(|| per_mpg / per_k * 1000.0)
}

/// Median of the finite values, `None` if there are none.
pub fn median(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = v.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RespondentTradeoffs {
    pub respondent: usize,
    pub group: usize,
    pub lambda: f64,
    pub optimum: DesignVector,
    pub rows: Vec<TradeoffRow>,
    pub wtp_mpg: Option<f64>,
    pub stationary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub k: usize,
    pub ga: GaConfig,
    pub restarts: usize,
    pub levels: TradeoffLevels,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            k: 4,
            ga: GaConfig::first_form(),
            restarts: 5,
            levels: TradeoffLevels::default(),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub importances: Vec<ImportanceTriple>,
    pub clustering: Clustering,
    pub group_designs: Vec<OptimalDesign>,
    pub respondents: Vec<RespondentTradeoffs>,
}

/// Importances, groups, group designs and per-respondent trade-offs at each respondent's own optimum.
pub fn analyze(models: &FinalModels, norm: &NormalizationStats, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let triples = importances(&models.posterior, &cfg.levels)?;
    let k = cfg.k.min(triples.len());
    let clustering = cluster(&triples, k, cfg.seed)?;
    let mut group_designs = Vec::with_capacity(clustering.k);
    for g in 0..clustering.k {
        let members: Vec<usize> = (0..triples.len()).filter(|&i| clustering.assignments[i] == g).collect();
        let scorer = KernelScorer {
            expansion: group_expansion(models, &members),
            norm,
        };
        group_designs.push(optimal_design(&scorer, &cfg.ga, cfg.restarts, seeds::derive(cfg.seed, &[g as u64]))?);
    }
    let means = models.posterior.posterior_means();
    let mut respondents = Vec::with_capacity(triples.len());
    for (i, w) in means.iter().enumerate() {
        let scorer = KernelScorer {
            expansion: models.scorer(i),
            norm,
        };
        let opt = optimal_design(&scorer, &cfg.ga, cfg.restarts, seeds::derive(cfg.seed, &[1000 + i as u64]))?;
        let lv = level_partworths(w, cfg.levels.n_attributes, cfg.levels.n_levels)?;
        let sens = sensitivities(&scorer, w[0], opt.design.as_slice());
        respondents.push(RespondentTradeoffs {
            respondent: i,
            group: clustering.assignments[i],
            lambda: w[0],
            rows: wtt(&scorer, w[0], &lv, &cfg.levels, opt.design.as_slice()),
            optimum: opt.design,
            wtp_mpg: wtp_mpg(&lv, &cfg.levels),
            stationary: sens.stationary,
        });
    }
    Ok(AnalysisReport {
        importances: triples,
        clustering,
        group_designs,
        respondents,
    })
}

/// Trade-off table: one line per design variable with the median Hessian diagonal and median
/// WTTP and WTTM overall and per group, then the column averages and the $1000-per-MPG line.
pub fn write_tradeoff_csv(report: &AnalysisReport, out: impl Write) -> Result<()> {
    let k = report.clustering.k;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["design_var".to_string(), "hessian_median".to_string(), "wttp_overall".to_string()];
    header.extend((1..=k).map(|g| format!("wttp_group{g}")));
    header.push("wttm_overall".into());
    header.extend((1..=k).map(|g| format!("wttm_group{g}")));
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let groups: Vec<Option<usize>> = std::iter::once(None).chain((0..k).map(Some)).collect();
    let pick = |g: Option<usize>| -> Vec<&RespondentTradeoffs> {
        report.respondents.iter().filter(|r| g.is_none_or(|g| r.group == g)).collect()
    };
    let mut sums = vec![(0.0, 0usize); 1 + 2 * groups.len()];
    for var in 0..N_DESIGN_VARS {
        let mut cells: Vec<Option<f64>> = vec![median(report.respondents.iter().map(|r| r.rows[var].hessian_diag))];
        for g in &groups {
            cells.push(median(pick(*g).iter().filter_map(|r| r.rows[var].wttp)));
        }
        for g in &groups {
            cells.push(median(pick(*g).iter().filter_map(|r| r.rows[var].wttm)));
        }
        for (s, c) in sums.iter_mut().zip(&cells) {
            if let Some(v) = c {
                s.0 += v;
                s.1 += 1;
            }
        }
        let mut rec = vec![format!("x{}", var + 1)];
        rec.extend(cells.into_iter().map(fmt));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["average".to_string()];
    rec.extend(sums.iter().map(|(s, n)| fmt((*n > 0).then(|| s / *n as f64))));
    w.write_record(&rec)?;
    let mut rec = vec!["mpg".to_string(), String::new()];
    for g in &groups {
        rec.push(fmt(median(pick(*g).iter().filter_map(|r| r.wtp_mpg)).map(|v| v / 1000.0)));
    }
    rec.extend(std::iter::repeat_n("1".to_string(), groups.len()));
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}
