//! Synthetic respondents: scenario cells, true preference functions and simulated answers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DesignVector, N_DESIGN_VARS};
use crate::overall::{logistic, FunctionProfile};
use crate::seeds::{self, tag, Rng};
use crate::survey::{Answer, FormAnswer, Question, Side};

pub const N_INTERACTIONS: usize = N_DESIGN_VARS * (N_DESIGN_VARS - 1) / 2;
pub const SPLINE_KNOTS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
pub const CALIBRATION_PAIRS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    High,
}

impl Level {
    fn name(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::High => "high",
        }
    }

    fn parse(s: &str) -> Option<Level> {
        match s {
            "low" => Some(Level::Low),
            "high" => Some(Level::High),
            _ => None,
        }
    }
}

/// Normal distribution given by mean and variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian {
    pub fn new(mean: f64, variance: f64) -> Self {
        Gaussian { mean, variance }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.variance == 0.0 {
            return self.mean;
        }
        // validated finite and non-negative
        Normal::new(self.mean, self.variance.sqrt()).map(|n| n.sample(rng)).unwrap_or(self.mean)
    }

    fn validate(&self, path: &str) -> Result<()> {
        if !self.mean.is_finite() || !self.variance.is_finite() || self.variance < 0.0 {
            return Err(Error::config(path, "needs a finite mean and a non-negative variance"));
        }
        Ok(())
    }
}

/// Shape of the per-variable main effects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainEffects {
    /// Natural spline through `(−γ/3, γ, −γ, γ/3)`.
    #[default]
    Wave,
    /// Knot values `(−γ, −γ/3, γ/3, γ)`, so the spline is the straight line `γ(2x − 1)`.
    Linear,
}

/// One consumer preference cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub form_importance: Level,
    pub response_accuracy: Level,
    pub heterogeneity: Level,
    /// Form score weight.
    pub lambda: f64,
    pub gamma: Gaussian,
    pub delta: Gaussian,
    /// Partworth magnitude; the four levels are `(−β, −β/3, β/3, β)`.
    pub beta: Gaussian,
    #[serde(default = "default_attributes")]
    pub n_attributes: usize,
    #[serde(default = "default_levels")]
    pub n_levels: usize,
    #[serde(default)]
    pub main_effects: MainEffects,
    /// One `β` per respondent shared by all attributes instead of one per attribute.
    #[serde(default)]
    pub shared_beta: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_attributes() -> usize {
    2
}

fn default_levels() -> usize {
    5
}

fn default_seed() -> u64 {
    1
}

const LAMBDA: [f64; 8] = [0.0043, 0.0044, 0.0028, 0.0057, 0.0173, 0.0176, 0.0112, 0.0230];
const GAMMA: [(f64, f64); 4] = [(0.5, 0.25), (0.5, 1.5), (3.0, 1.5), (3.0, 9.0)];
const DELTA_VAR: [f64; 4] = [4.80, 13.7, 56.3, 88.4];

impl Scenario {
    /// The tabled cell for the three factors.
    pub fn cell(form_importance: Level, response_accuracy: Level, heterogeneity: Level) -> Self {
        let bit = |l: Level| usize::from(l == Level::High);
        let inner = 2 * bit(response_accuracy) + bit(heterogeneity);
        let (gm, gv) = GAMMA[inner];
        Scenario {
            form_importance,
            response_accuracy,
            heterogeneity,
            lambda: LAMBDA[4 * bit(form_importance) + inner],
            gamma: Gaussian::new(gm, gv),
            delta: Gaussian::new(0.0, DELTA_VAR[inner]),
            beta: Gaussian::new(gm, gv),
            n_attributes: default_attributes(),
            n_levels: default_levels(),
            main_effects: MainEffects::Wave,
            shared_beta: false,
            seed: default_seed(),
        }
    }

    /// All eight cells in table order.
    pub fn all() -> Vec<Scenario> {
        let lv = [Level::Low, Level::High];
        let mut out = Vec::with_capacity(8);
        for f in lv {
            for a in lv {
                for h in lv {
                    out.push(Scenario::cell(f, a, h));
                }
            }
        }
        out
    }

    /// `form-accuracy-heterogeneity`, for example `high-low-high`.
    pub fn name(&self) -> String {
        format!(
            "{}-{}-{}",
            self.form_importance.name(),
            self.response_accuracy.name(),
            self.heterogeneity.name()
        )
    }

    pub fn by_name(name: &str) -> Result<Scenario> {
        let parts: Vec<Option<Level>> = name.split('-').map(Level::parse).collect();
        match parts.as_slice() {
            [Some(f), Some(a), Some(h)] => Ok(Scenario::cell(*f, *a, *h)),
            _ => Err(Error::config(
                "scenario",
                format!("`{name}` is not of the form low|high-low|high-low|high"),
            )),
        }
    }

    pub fn from_json(s: &str) -> Result<Scenario> {
        let sc: Scenario = crate::config::from_json_with_path(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        Scenario { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        self.gamma.validate("gamma")?;
        self.delta.validate("delta")?;
        self.beta.validate("beta")?;
        if self.n_attributes == 0 {
            return Err(Error::config("n_attributes", "must be at least 1"));
        }
        if !(4..=5).contains(&self.n_levels) {
            return Err(Error::config("n_levels", "must be 4 or 5"));
        }
        Ok(())
    }
}

/// Natural cubic spline through `(knots[i], values[i])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaturalSpline {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Second derivatives at the knots, zero at both ends.
    pub second: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(knots: &[f64], values: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::domain("a spline needs at least two knots and one value per knot"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("spline knots must be strictly increasing"));
        }
        let mut second = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for the interior second derivatives
            let m = n - 2;
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let mut diag = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h[i + 1] - (values[i + 1] - values[i]) / h[i]);
            }
            for i in 1..m {
                let f = h[i] / diag[i - 1];
                diag[i] -= f * h[i];
                rhs[i] -= f * rhs[i - 1];
            }
            for i in (0..m).rev() {
                let next = if i + 1 < m { second[i + 2] } else { 0.0 };
                second[i + 1] = (rhs[i] - h[i + 1] * next) / diag[i];
            }
        }
        Ok(NaturalSpline {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let i = match self.knots[1..n - 1].iter().position(|&k| x < k) {
            Some(p) => p,
            None => n - 2,
        };
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }
}

/// Knot values of the main effect for one drawn coefficient.
pub fn main_effect_values(shape: MainEffects, g: f64) -> [f64; 4] {
    match shape {
        MainEffects::Wave => [-g / 3.0, g, -g, g / 3.0],
        MainEffects::Linear => [-g, -g / 3.0, g / 3.0, g],
    }
}

/// Partworths of one attribute for all levels, level by level.
pub fn partworth_levels(beta: f64, n_levels: usize) -> Vec<f64> {
    let four = [-beta, -beta / 3.0, beta / 3.0, beta];
    if n_levels == 5 {
        // the four values sit on levels 2..=5, level 1 is the zero baseline
        std::iter::once(0.0).chain(four).collect()
    } else {
        four.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueRespondent {
    pub gamma: Vec<f64>,
    pub splines: Vec<NaturalSpline>,
    /// `δ_ij` for `i > j`, ordered by `i` then `j`.
    pub delta: Vec<f64>,
    pub beta: Vec<f64>,
    /// One entry per level, per attribute.
    pub partworths: Vec<Vec<f64>>,
    pub lambda: f64,
    /// Median `|ΔS|` over calibration pairs; larger gaps are answered "much better".
    pub much_threshold: f64,
}

impl TrueRespondent {
    pub fn form_score(&self, x: &[f64]) -> f64 {
        let mut s: f64 = self.splines.iter().zip(x).map(|(sp, &v)| sp.eval(v)).sum();
        let mut k = 0;
        for i in 1..N_DESIGN_VARS {
            let mut inner = 0.0;
            for xj in &x[..i] {
                inner += self.delta[k] * xj;
                k += 1;
            }
            s += inner * x[i];
        }
        s
    }

    pub fn function_utility(&self, p: &FunctionProfile) -> f64 {
        p.levels.iter().zip(&self.partworths).map(|(&l, pw)| pw[l - 1]).sum()
    }

    pub fn utility(&self, x: &[f64], p: &FunctionProfile) -> f64 {
        self.lambda * self.form_score(x) + self.function_utility(p)
    }

    /// `max − min` of the function part over all profiles.
    pub fn function_range(&self) -> f64 {
        self.partworths
            .iter()
            .map(|pw| {
                let hi = pw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = pw.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .sum()
    }
}

fn random_design(rng: &mut Rng) -> [f64; N_DESIGN_VARS] {
    std::array::from_fn(|_| rng.random::<f64>())
}

fn draw_beta(scenario: &Scenario, rng: &mut Rng) -> Vec<f64> {
    if scenario.shared_beta {
        vec![scenario.beta.sample(rng); scenario.n_attributes]
    } else {
        (0..scenario.n_attributes).map(|_| scenario.beta.sample(rng)).collect()
    }
}

/// Draws respondent `index` of a scenario. The same `(scenario, index)` always gives the same truth.
pub fn gen_respondent(scenario: &Scenario, index: usize) -> TrueRespondent {
    let mut rng = seeds::rng(scenario.seed, &[tag::RESPONDENT, index as u64]);
    let gamma: Vec<f64> = (0..N_DESIGN_VARS).map(|_| scenario.gamma.sample(&mut rng)).collect();
    let splines = gamma
        .iter()
        .map(|&g| {
            NaturalSpline::new(&SPLINE_KNOTS, &main_effect_values(scenario.main_effects, g))
                .expect("fixed knots are increasing")
        })
        .collect();
    let delta = (0..N_INTERACTIONS).map(|_| scenario.delta.sample(&mut rng)).collect();
    let beta = draw_beta(scenario, &mut rng);
    let partworths = beta.iter().map(|&b| partworth_levels(b, scenario.n_levels)).collect();
    let mut r = TrueRespondent {
        gamma,
        splines,
        delta,
        beta,
        partworths,
        lambda: scenario.lambda,
        much_threshold: 0.0,
    };
    let mut cal = seeds::rng(scenario.seed, &[tag::CALIBRATION, index as u64]);
    let mut gaps: Vec<f64> = (0..CALIBRATION_PAIRS)
        .map(|_| (r.form_score(&random_design(&mut cal)) - r.form_score(&random_design(&mut cal))).abs())
        .collect();
    gaps.sort_by(f64::total_cmp);
    r.much_threshold = 0.5 * (gaps[CALIBRATION_PAIRS / 2 - 1] + gaps[CALIBRATION_PAIRS / 2]);
    r
}

/// Interaction-term variance that puts the mean absolute main-effect term at `ratio` times the
/// mean absolute interaction term, each evaluated at uniform design values.
pub fn calibrate_delta_variance(gamma: Gaussian, shape: MainEffects, ratio: f64, n: usize, seed: u64) -> Result<f64> {
    if !(ratio > 0.0) || n == 0 {
        return Err(Error::domain("ratio must be positive and n at least 1"));
    }
    let mut rng = seeds::rng(seed, &[tag::CALIBRATION]);
    let mut main = 0.0;
    for _ in 0..n {
        let g = gamma.sample(&mut rng);
        let sp = NaturalSpline::new(&SPLINE_KNOTS, &main_effect_values(shape, g))?;
        main += sp.eval(rng.random()).abs();
    }
    let unit = Gaussian::new(0.0, 1.0);
    let mut inter = 0.0;
    for _ in 0..n {
        inter += (unit.sample(&mut rng) * rng.random::<f64>() * rng.random::<f64>()).abs();
    }
    // the interaction mean scales linearly with the standard deviation
    let sd = main / (ratio * inter);
    Ok(sd * sd)
}

/// Form score weight giving `ratio = mean over draws of |λ·S| / |βᵀa|`, drawing a fresh
/// respondent, design and profile each time. Draws with `βᵀa = 0` are skipped.
pub fn calibrate_lambda(scenario: &Scenario, ratio: f64, n: usize, seed: u64) -> Result<f64> {
    if !(ratio > 0.0) || n == 0 {
        return Err(Error::domain("ratio must be positive and n at least 1"));
    }
    let mut rng = seeds::rng(seed, &[tag::CALIBRATION, 1]);
    let mut sum = 0.0;
    let mut used = 0usize;
    let nl = scenario.n_levels;
    for _ in 0..n {
        let gamma: Vec<f64> = (0..N_DESIGN_VARS).map(|_| scenario.gamma.sample(&mut rng)).collect();
        let splines = gamma
            .iter()
            .map(|&g| NaturalSpline::new(&SPLINE_KNOTS, &main_effect_values(scenario.main_effects, g)))
            .collect::<Result<Vec<_>>>()?;
        let delta = (0..N_INTERACTIONS).map(|_| scenario.delta.sample(&mut rng)).collect();
        let beta = draw_beta(scenario, &mut rng);
        let r = TrueRespondent {
            gamma,
            splines,
            delta,
            partworths: beta.iter().map(|&b| partworth_levels(b, nl)).collect(),
            beta,
            lambda: 1.0,
            much_threshold: 0.0,
        };
        let x = random_design(&mut rng);
        let p = FunctionProfile::new((0..scenario.n_attributes).map(|_| rng.random_range(1..=nl)).collect());
        let f = r.function_utility(&p).abs();
        if f == 0.0 {
            continue;
        }
        sum += r.form_score(&x).abs() / f;
        used += 1;
    }
    if used == 0 || sum == 0.0 {
        return Err(Error::numerical("every calibration draw had a zero form or function part"));
    }
    Ok(ratio * used as f64 / sum)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormAnswerRule {
    /// The truly better design wins.
    #[default]
    Deterministic,
    /// Left wins with probability `logistic(scale · λ · ΔS)`.
    Logit { scale: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurchaseAnswerRule {
    /// Bernoulli on the logistic of the true utility difference.
    #[default]
    Logit,
    Deterministic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseModel {
    /// Probability that a form answer is reversed.
    pub flip_prob: f64,
    pub form: FormAnswerRule,
    pub purchase: PurchaseAnswerRule,
}

impl ResponseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("response.flip_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn simulate_form_answer(r: &TrueRespondent, designs: &[DesignVector; 2], model: &ResponseModel, rng: &mut Rng) -> FormAnswer {
    let d = r.form_score(designs[0].as_slice()) - r.form_score(designs[1].as_slice());
    let mut left = match model.form {
        FormAnswerRule::Deterministic => d > 0.0,
        FormAnswerRule::Logit { scale } => rng.random::<f64>() < logistic(scale * r.lambda * d),
    };
    let much = d.abs() > r.much_threshold;
    if model.flip_prob > 0.0 && rng.random::<f64>() < model.flip_prob {
        left = !left;
    }
    match (left, much) {
        (true, true) => FormAnswer::LeftMuchBetter,
        (true, false) => FormAnswer::LeftBetter,
        (false, false) => FormAnswer::RightBetter,
        (false, true) => FormAnswer::RightMuchBetter,
    }
}

/// Probability of choosing the left alternative.
pub fn choice_probability(r: &TrueRespondent, designs: &[DesignVector; 2], profiles: &[FunctionProfile; 2]) -> f64 {
    logistic(r.utility(designs[0].as_slice(), &profiles[0]) - r.utility(designs[1].as_slice(), &profiles[1]))
}

pub fn simulate_purchase_answer(
    r: &TrueRespondent,
    designs: &[DesignVector; 2],
    profiles: &[FunctionProfile; 2],
    model: &ResponseModel,
    rng: &mut Rng,
) -> Side {
    let p = choice_probability(r, designs, profiles);
    let left = match model.purchase {
        PurchaseAnswerRule::Logit => rng.random::<f64>() < p,
        PurchaseAnswerRule::Deterministic => p > 0.5,
    };
    if left {
        Side::Left
    } else {
        Side::Right
    }
}

/// Answer of a synthetic respondent to any survey question.
pub fn simulate_response(r: &TrueRespondent, q: &Question, model: &ResponseModel, rng: &mut Rng) -> Result<Answer> {
    if q.kind.is_form() {
        return Ok(Answer::Form(simulate_form_answer(r, &q.designs, model, rng)));
    }
    let profiles = q
        .profiles
        .as_ref()
        .ok_or_else(|| Error::domain(format!("purchase question {} carries no profiles", q.seq)))?;
    Ok(Answer::Purchase(simulate_purchase_answer(r, &q.designs, profiles, model, rng)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_cells_enumerate_all_factor_combinations() {
        let all = Scenario::all();
        assert_eq!(all.len(), 8);
        let names: std::collections::BTreeSet<String> = all.iter().map(|s| s.name()).collect();
        assert_eq!(names.len(), 8);
        let lll = Scenario::by_name("low-low-low").unwrap();
        assert_eq!(lll.lambda, 0.0043);
        assert_eq!(lll.gamma, Gaussian::new(0.5, 0.25));
        assert_eq!(lll.delta, Gaussian::new(0.0, 4.80));
        let hll = Scenario::by_name("high-low-low").unwrap();
        assert_eq!(hll.lambda, 0.0173);
        let hhh = Scenario::by_name("high-high-high").unwrap();
        assert_eq!((hhh.lambda, hhh.delta.variance, hhh.beta.variance), (0.0230, 88.4, 9.0));
        assert!(Scenario::by_name("mid-low-low").is_err());
    }

    #[test]
    fn spline_interpolates_and_is_natural() {
        let v = [-0.2, 0.6, -0.6, 0.2];
        let s = NaturalSpline::new(&SPLINE_KNOTS, &v).unwrap();
        for (k, want) in SPLINE_KNOTS.iter().zip(v) {
            assert!((s.eval(*k) - want).abs() < 1e-9);
        }
        assert_eq!(s.second[0], 0.0);
        assert_eq!(s.second[3], 0.0);
        // second derivative from a central difference near the ends tends to zero
        let h = 1e-4;
        let d2 = (s.eval(2.0 * h) - 2.0 * s.eval(h) + s.eval(0.0)) / (h * h);
        assert!(d2.abs() < 1e-2 * s.second[1].abs().max(1.0));
    }

    #[test]
    fn linear_knot_values_give_a_line() {
        let s = NaturalSpline::new(&SPLINE_KNOTS, &main_effect_values(MainEffects::Linear, 1.5)).unwrap();
        for x in [0.0, 0.1, 0.45, 0.8, 1.0] {
            assert!((s.eval(x) - 1.5 * (2.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn respondent_shape_and_determinism() {
        let sc = Scenario::cell(Level::Low, Level::Low, Level::Low).with_seed(9);
        let a = gen_respondent(&sc, 3);
        assert_eq!(a.splines.len(), 19);
        assert_eq!(a.delta.len(), 171);
        assert_eq!(a.partworths.len(), 2);
        assert_eq!(a.partworths[0][0], 0.0);
        assert_eq!(a, gen_respondent(&sc, 3));
        assert_ne!(a, gen_respondent(&sc, 4));
        assert!(a.much_threshold > 0.0);
    }

    #[test]
    fn zeroed_truth_scores_zero_and_single_interaction_is_its_coefficient() {
        let sc = Scenario::cell(Level::Low, Level::Low, Level::Low);
        let mut r = gen_respondent(&sc, 0);
        for sp in &mut r.splines {
            *sp = NaturalSpline::new(&SPLINE_KNOTS, &[0.0; 4]).unwrap();
        }
        r.delta.iter_mut().for_each(|d| *d = 0.0);
        assert_eq!(r.form_score(&[0.7; 19]), 0.0);
        // δ_21 is the first stored interaction
        r.delta[0] = 2.0;
        assert_eq!(r.form_score(&[1.0; 19]), 2.0);
    }

    #[test]
    fn purchase_probability_is_one_half_at_equal_utility() {
        let sc = Scenario::cell(Level::High, Level::High, Level::Low);
        let r = gen_respondent(&sc, 1);
        let d = DesignVector::uniform(0.3);
        let p = FunctionProfile::new(vec![2, 4]);
        assert_eq!(choice_probability(&r, &[d, d], &[p.clone(), p]), 0.5);
    }

    #[test]
    fn certain_flips_always_reverse_the_truth() {
        let sc = Scenario::cell(Level::High, Level::High, Level::Low);
        let r = gen_respondent(&sc, 2);
        let model = ResponseModel {
            flip_prob: 1.0,
            ..Default::default()
        };
        let mut rng = seeds::rng(5, &[]);
        for _ in 0..50 {
            let pair = [DesignVector::clamped(&random_design(&mut rng)), DesignVector::clamped(&random_design(&mut rng))];
            let truth = r.form_score(pair[0].as_slice()) > r.form_score(pair[1].as_slice());
            let a = simulate_form_answer(&r, &pair, &model, &mut rng);
            assert_eq!(a.left_chosen(), !truth);
        }
    }

    #[test]
    fn calibrations_respond_to_their_inputs() {
        let g = Gaussian::new(0.5, 0.25);
        let v1 = calibrate_delta_variance(g, MainEffects::Wave, 2.0, 1000, 3).unwrap();
        let v2 = calibrate_delta_variance(Gaussian::new(0.5, 0.5), MainEffects::Wave, 2.0, 1000, 3).unwrap();
        assert!(v2 > v1);
        let z = calibrate_delta_variance(Gaussian::new(0.0, 0.0), MainEffects::Wave, 2.0, 1000, 3).unwrap();
        assert!(z < 1e-12);
        let sc = Scenario::cell(Level::Low, Level::Low, Level::Low);
        let a = calibrate_lambda(&sc, 0.5, 2000, 4).unwrap();
        let b = calibrate_lambda(&sc, 1.0, 2000, 4).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
        assert_eq!(a, calibrate_lambda(&sc, 0.5, 2000, 4).unwrap());
    }
}
