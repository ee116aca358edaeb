//! Box-constrained dual of the no-bias rank SVM:
//!
//! ```text
//! min_α  ½ αᵀQα − cᵀα   s.t. 0 ≤ α ≤ C
//! ```
//!
//! Solved by two-variable working-set decomposition. The first index is the maximal KKT
//! violator; the second is chosen by the second-order gain it would achieve on its own.
//! Each 2×2 subproblem is solved exactly over the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CAP: f64 = 1e6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub cap: f64,
    /// KKT violation tolerance, relative to `max(c)`.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cap: DEFAULT_CAP,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some multiplier sits on the upper bound (the responses are not separable hard-margin).
    pub at_cap: bool,
}

/// Dense symmetric matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Gram { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn objective(q: &Gram, c: &[f64], alpha: &[f64]) -> f64 {
    let mut f = 0.0;
    for i in 0..q.n {
        let qa: f64 = q.row(i).iter().zip(alpha).map(|(a, b)| a * b).sum();
        f += 0.5 * alpha[i] * qa - c[i] * alpha[i];
    }
    f
}

/// Largest problem handed to the exact active-set finish.
const POLISH_MAX_N: usize = 60;

/// Primal active-set iterations from the coordinate-descent point.
///
/// Coordinate descent stops on the gradient tolerance, which leaves a large objective error along
/// near-null directions of an ill-conditioned Gram; Newton steps on the free set remove it. The
/// result is kept only if it lowers the objective without a worse KKT violation.
fn polish(q: &Gram, c: &[f64], cap: f64, tol: f64, alpha: &mut Vec<f64>, g: &mut Vec<f64>) {
    let n = q.n;
    let before = objective(q, c, alpha);
    let (viol_before, _) = violation(g, alpha, cap);
    let mut a = alpha.clone();
    let mut free: Vec<bool> = a.iter().map(|&v| v > 0.0 && v < cap).collect();
    let grad = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| q.row(i).iter().zip(a).map(|(x, y)| x * y).sum::<f64>() - c[i]).collect() };
    for _ in 0..4 * n + 4 {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        if !idx.is_empty() {
            let m = idx.len();
            let qff = nalgebra::DMatrix::from_fn(m, m, |r, s| q.get(idx[r], idx[s]));
            let gr = grad(&a);
            let rhs = nalgebra::DVector::from_fn(m, |r, _| -gr[idx[r]]);
            // Newton step on the free set, or a zero-curvature descent ray when the gradient has a
            // component in the null space of a singular block
            let svd = qff.svd(true, true);
            let (Some(u), Some(vt)) = (svd.u.as_ref(), svd.v_t.as_ref()) else { return };
            let smax = svd.singular_values.max();
            let cut = 1e-10 * smax.max(1e-300);
            let mut step = nalgebra::DVector::zeros(m);
            let mut ray = nalgebra::DVector::zeros(m);
            for k in 0..m {
                let sk = svd.singular_values[k];
                let vk = vt.row(k).transpose();
                if sk > cut {
                    step += &vk * (u.column(k).dot(&rhs) / sk);
                } else {
                    ray += &vk * vk.dot(&rhs);
                }
            }
            let unbounded_ray = ray.norm() > 1e-9 * rhs.norm().max(1e-300);
            let step = if unbounded_ray { ray } else { step };
            // longest feasible fraction of the Newton step
            let mut t = if unbounded_ray { f64::INFINITY } else { 1.0f64 };
            let mut blocking = None;
            for (r, &i) in idx.iter().enumerate() {
                let d = step[r];
                let lim = if d < 0.0 {
                    a[i] / -d
                } else if d > 0.0 {
                    (cap - a[i]) / d
                } else {
                    f64::INFINITY
                };
                if lim < t {
                    t = lim;
                    blocking = Some(i);
                }
            }
            if !t.is_finite() {
                return;
            }
            for (r, &i) in idx.iter().enumerate() {
                a[i] = (a[i] + t * step[r]).clamp(0.0, cap);
            }
            if let Some(b) = blocking {
                a[b] = if step[idx.iter().position(|&i| i == b).unwrap()] < 0.0 { 0.0 } else { cap };
                free[b] = false;
                continue;
            }
        }
        // release the bound variable with the most negative multiplier
        let gr = grad(&a);
        let mut worst = tol;
        let mut release = None;
        for i in (0..n).filter(|&i| !free[i]) {
            let v = if a[i] <= 0.0 { -gr[i] } else { gr[i] };
            if v > worst {
                worst = v;
                release = Some(i);
            }
        }
        match release {
            Some(i) => free[i] = true,
            None => break,
        }
    }
    let ga = grad(&a);
    let (viol_after, _) = violation(&ga, &a, cap);
    if objective(q, c, &a) < before && viol_after <= viol_before.max(tol) {
        *alpha = a;
        *g = ga;
    }
}

/// Largest KKT violation given the gradient `g = Qα − c`.
fn violation(g: &[f64], alpha: &[f64], cap: f64) -> (f64, Option<usize>) {
    let mut best = 0.0;
    let mut idx = None;
    for (i, (&gi, &ai)) in g.iter().zip(alpha).enumerate() {
        let v = if gi < 0.0 && ai < cap {
            -gi
        } else if gi > 0.0 && ai > 0.0 {
            gi
        } else {
            0.0
        };
        if v > best {
            best = v;
            idx = Some(i);
        }
    }
    (best, idx)
}

/// Exact minimizer of `½[a b]ᵀ[[p, r], [r, s]][a b] + u·a + v·b` over `[0,C]²`.
fn solve_box_2x2(p: f64, r: f64, s: f64, u: f64, v: f64, cap: f64, start: (f64, f64)) -> (f64, f64) {
    let val = |a: f64, b: f64| 0.5 * (p * a * a + 2.0 * r * a * b + s * b * b) + u * a + v * b;
    let clamp = |x: f64| x.clamp(0.0, cap);
    let mut cands = Vec::with_capacity(9);
    cands.push(start);
    let det = p * s - r * r;
    if det > 1e-12 * (p * s).abs().max(1e-300) {
        let a = (-u * s + v * r) / det;
        let b = (-v * p + u * r) / det;
        if (0.0..=cap).contains(&a) && (0.0..=cap).contains(&b) {
            cands.push((a, b));
        }
    }
    for edge in [0.0, cap] {
        // a fixed, optimize b
        let b = if s > 0.0 { clamp(-(v + r * edge) / s) } else if v + r * edge < 0.0 { cap } else { 0.0 };
        cands.push((edge, b));
        let a = if p > 0.0 { clamp(-(u + r * edge) / p) } else if u + r * edge < 0.0 { cap } else { 0.0 };
        cands.push((a, edge));
    }
    let mut best = cands[0];
    let mut best_val = val(best.0, best.1);
    for &(a, b) in &cands[1..] {
        let f = val(a, b);
        if f < best_val {
            best_val = f;
            best = (a, b);
        }
    }
    best
}

pub fn solve(q: &Gram, c: &[f64], opts: &SolverOptions) -> Result<DualSolution> {
    let n = q.n;
    if c.len() != n {
        return Err(Error::domain("margin vector length differs from Gram size"));
    }
    if q.data.iter().chain(c).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite entry in dual problem"));
    }
    let cap = opts.cap;
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tol = opts.tolerance * scale;
    let mut alpha = vec![0.0; n];
    let mut g: Vec<f64> = c.iter().map(|v| -v).collect();
    let mut iterations = 0;
    let mut converged = false;

    if n == 0 {
        return Ok(DualSolution {
            alphas: alpha,
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
            at_cap: false,
        });
    }

    while iterations < opts.max_iter {
        let (viol, first) = violation(&g, &alpha, cap);
        if viol <= tol {
            converged = true;
            break;
        }
        let i = first.expect("violation implies an index");

        // second index: largest single-variable gain among the remaining violators
        let mut j_best = None;
        let mut gain_best = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let gj = g[j];
            let movable = (gj < 0.0 && alpha[j] < cap) || (gj > 0.0 && alpha[j] > 0.0);
            if !movable {
                continue;
            }
            let qjj = q.get(j, j);
            let step = if qjj > 0.0 { -gj / qjj } else { -gj.signum() * cap };
            let step = (alpha[j] + step).clamp(0.0, cap) - alpha[j];
            let gain = -(gj * step + 0.5 * qjj * step * step);
            if gain > gain_best {
                gain_best = gain;
                j_best = Some(j);
            }
        }

        let (ai, aj) = if let Some(j) = j_best {
            let p = q.get(i, i);
            let r = q.get(i, j);
            let s = q.get(j, j);
            // linear terms of the subproblem in the new (α_i, α_j) holding others fixed
            let u = g[i] - p * alpha[i] - r * alpha[j];
            let v = g[j] - r * alpha[i] - s * alpha[j];
            let (na, nb) = solve_box_2x2(p, r, s, u, v, cap, (alpha[i], alpha[j]));
            (na - alpha[i], nb - alpha[j])
        } else {
            let p = q.get(i, i);
            let na = if p > 0.0 {
                (alpha[i] - g[i] / p).clamp(0.0, cap)
            } else if g[i] < 0.0 {
                cap
            } else {
                0.0
            };
            (na - alpha[i], 0.0)
        };

        if ai == 0.0 && aj == 0.0 {
            // no progress possible in floating point
            break;
        }
        alpha[i] += ai;
        if ai != 0.0 {
            for (gk, qk) in g.iter_mut().zip(q.row(i)) {
                *gk += qk * ai;
            }
        }
        if let Some(j) = j_best {
            alpha[j] += aj;
            if aj != 0.0 {
                for (gk, qk) in g.iter_mut().zip(q.row(j)) {
                    *gk += qk * aj;
                }
            }
        }
        iterations += 1;
    }

    if n <= POLISH_MAX_N {
        polish(q, c, cap, tol, &mut alpha, &mut g);
    }

    let (kkt_residual, _) = violation(&g, &alpha, cap);
    if !converged && kkt_residual <= tol {
        converged = true;
    }
    let at_cap = alpha.iter().any(|&a| a >= cap * (1.0 - 1e-12));
    let objective = objective(q, c, &alpha);
    if !objective.is_finite() {
        return Err(Error::numerical("dual objective is not finite"));
    }
    Ok(DualSolution {
        alphas: alpha,
        objective,
        kkt_residual: kkt_residual / scale,
        iterations,
        converged,
        at_cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_constraint_closed_form() {
        let q = Gram::from_fn(1, |_, _| 0.8);
        let s = solve(&q, &[2.0], &SolverOptions::default()).unwrap();
        assert!((s.alphas[0] - 2.5).abs() < 1e-15);
        assert!(s.converged);
    }

    #[test]
    fn empty_problem_is_trivial() {
        let q = Gram::from_fn(0, |_, _| 0.0);
        let s = solve(&q, &[], &SolverOptions::default()).unwrap();
        assert!(s.alphas.is_empty() && s.converged);
    }

    #[test]
    fn contradictory_pair_hits_the_cap() {
        // the same pair asked twice with opposite answers
        let q = Gram::from_fn(2, |i, j| if i == j { 1.0 } else { -1.0 });
        let s = solve(&q, &[1.0, 1.0], &SolverOptions::default()).unwrap();
        assert!(s.at_cap);
        assert!(s.alphas.iter().all(|a| *a >= 0.0 && *a <= DEFAULT_CAP));
    }

    #[test]
    fn box_2x2_matches_grid_search() {
        let (p, r, s, u, v, cap) = (2.0, 0.5, 1.0, -3.0, 1.0, 1.5);
        let (a, b) = solve_box_2x2(p, r, s, u, v, cap, (0.0, 0.0));
        let f = |a: f64, b: f64| 0.5 * (p * a * a + 2.0 * r * a * b + s * b * b) + u * a + v * b;
        let mut best = f64::INFINITY;
        for i in 0..=300 {
            for k in 0..=300 {
                best = best.min(f(cap * i as f64 / 300.0, cap * k as f64 / 300.0));
            }
        }
        assert!(f(a, b) <= best + 1e-12);
    }
}
