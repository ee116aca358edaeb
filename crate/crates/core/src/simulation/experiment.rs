use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{default_attributes, AttributeSpec, EtaConfig, StudyConfig, ValidationSpec};
use crate::error::{Error, Result};
use crate::form::{default_gamma, FormResponse};
use crate::geometry::{DesignVector, NormalizationStats, N_DESIGN_VARS};
use crate::lhs::{lhs_continuous, lhs_levels};
use crate::overall::{self, dummy_code, Choice, FunctionProfile, McmcConfig};
use crate::rank_svm::SolverOptions;
use crate::sampler::GaConfig;
use crate::seeds::{self, tag, Rng};
use crate::survey::{self, Answer, Engine, PopulationSnapshot, RespondentData, SessionState, SessionStatus, Side, ValidationBlock};

use super::truth::{gen_respondent, simulate_form_answer, simulate_purchase_answer, simulate_response, ResponseModel, Scenario, TrueRespondent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Single-level linear HB over design variables and dummies, purchase questions only.
    M1,
    /// Function attributes only.
    #[serde(rename = "M1a_field")]
    M1aField,
    /// Bi-level model on non-adaptive Latin hypercube questions.
    M2,
    /// Bi-level model on adaptively sampled questions.
    M3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::M1, Variant::M1aField, Variant::M2, Variant::M3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::M1 => "M1",
            Variant::M1aField => "M1a_field",
            Variant::M2 => "M2",
            Variant::M3 => "M3",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`, expected one of M1, M1a_field, M2, M3")))
    }
}

/// Reference hit rates in percent as `(form, overall)` for M1, M2 and M3, per cell in table order.
pub const REFERENCE_HIT_RATES: [[(f64, f64); 3]; 8] = [
    [(50.8, 90.5), (65.2, 91.9), (66.2, 93.2)],
    [(51.0, 91.6), (65.6, 91.7), (65.3, 90.1)],
    [(52.0, 92.7), (63.3, 93.6), (66.7, 94.6)],
    [(51.2, 89.7), (63.4, 92.3), (65.2, 92.8)],
    [(52.5, 87.2), (65.1, 87.9), (66.1, 90.1)],
    [(52.3, 87.2), (65.2, 88.1), (65.1, 88.7)],
    [(53.5, 93.0), (62.9, 92.8), (66.3, 94.4)],
    [(53.2, 87.5), (62.4, 88.5), (64.7, 89.8)],
];

fn reference(scenario: &Scenario, variant: Variant) -> Option<(f64, f64)> {
    let col = match variant {
        Variant::M1 => 0,
        Variant::M2 => 1,
        Variant::M3 => 2,
        Variant::M1aField => return None,
    };
    let idx = Scenario::all().iter().position(|s| {
        s.form_importance == scenario.form_importance
            && s.response_accuracy == scenario.response_accuracy
            && s.heterogeneity == scenario.heterogeneity
    })?;
    Some(REFERENCE_HIT_RATES[idx][col])
}

/// Protocol of one simulated study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub respondents: usize,
    /// Purchase questions for M1; half form and half purchase for the bi-level variants.
    pub questions: usize,
    pub holdout_form: usize,
    pub holdout_purchase: usize,
    pub response: ResponseModel,
    pub margins: [f64; 2],
    pub gamma: f64,
    pub ga_first: GaConfig,
    pub ga_second: GaConfig,
    pub mcmc: McmcConfig,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            respondents: 100,
            questions: 20,
            holdout_form: 100,
            holdout_purchase: 100,
            response: ResponseModel::default(),
            margins: [1.0, 2.0],
            gamma: default_gamma(),
            ga_first: GaConfig::first_form(),
            ga_second: GaConfig::second_form(),
            mcmc: McmcConfig::default(),
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if self.respondents == 0 {
            return Err(Error::config("respondents", "must be at least 1"));
        }
        if self.questions < 2 || self.questions % 2 != 0 {
            return Err(Error::config("questions", "must be an even number of at least 2"));
        }
        if self.holdout_form == 0 || self.holdout_purchase == 0 {
            return Err(Error::config("holdout_form", "both holdout counts must be positive"));
        }
        self.response.validate()?;
        self.mcmc.validate()
    }

    fn study_config(&self, scenario: &Scenario, seed: u64) -> Result<StudyConfig> {
        let attributes = if scenario.n_attributes == 2 && scenario.n_levels == 5 {
            default_attributes()
        } else {
            (0..scenario.n_attributes)
                .map(|k| AttributeSpec {
                    name: format!("attribute_{}", k + 1),
                    levels: (1..=scenario.n_levels).map(|l| format!("level {l}")).collect(),
                })
                .collect()
        };
        let mut cfg = StudyConfig {
            attributes,
            rounds: self.questions / 2,
            ga_first: self.ga_first.clone(),
            ga_second: self.ga_second.clone(),
            eta: EtaConfig {
                expected_respondents: self.respondents,
                ..EtaConfig::default()
            },
            gamma: self.gamma,
            solver: SolverOptions::default(),
            margins: self.margins,
            mcmc: McmcConfig {
                seed: seeds::derive(seed, &[tag::MCMC]),
                ..self.mcmc.clone()
            },
            seed,
            ..StudyConfig::default()
        };
        cfg.validate()?;
        // holdouts are scored outside the questionnaire
        cfg.validation = ValidationSpec { form: 0, purchase: 0 };
        Ok(cfg)
    }
}

/// Hit counts of one variant on one seeded scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRateReport {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub respondents: usize,
    pub form_hits: usize,
    pub form_holdouts: usize,
    pub overall_hits: usize,
    pub overall_holdouts: usize,
    /// `None` for a variant without a form model.
    pub form_hit_rate: Option<f64>,
    pub overall_hit_rate: f64,
    pub form_importance_rmse: Option<f64>,
}

/// Holdout questions shared by every respondent of one seeded run.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutBattery {
    pub form: Vec<[DesignVector; 2]>,
    pub purchase: Vec<([DesignVector; 2], [FunctionProfile; 2])>,
}

fn design_pairs(points: Vec<Vec<f64>>) -> Vec<[DesignVector; 2]> {
    points
        .chunks(2)
        .map(|c| [DesignVector::clamped(&c[0]), DesignVector::clamped(&c[1])])
        .collect()
}

fn profile_pairs(levels: Vec<Vec<usize>>) -> Vec<[FunctionProfile; 2]> {
    levels
        .chunks(2)
        .map(|c| [FunctionProfile::new(c[0].clone()), FunctionProfile::new(c[1].clone())])
        .collect()
}

/// Latin hypercube pairs, each design and level column stratified over all `2n` members.
fn lhs_questions(n: usize, scenario: &Scenario, rng: &mut Rng) -> Vec<([DesignVector; 2], [FunctionProfile; 2])> {
    let designs = design_pairs(lhs_continuous(2 * n, N_DESIGN_VARS, rng));
    let profiles = profile_pairs(lhs_levels(2 * n, scenario.n_attributes, scenario.n_levels, rng));
    designs.into_iter().zip(profiles).collect()
}

pub fn holdout_battery(scenario: &Scenario, settings: &SimSettings, seed: u64) -> HoldoutBattery {
    let mut rng = seeds::rng(seed, &[tag::HOLDOUT]);
    let form = design_pairs(lhs_continuous(2 * settings.holdout_form, N_DESIGN_VARS, &mut rng));
    let purchase = lhs_questions(settings.holdout_purchase, scenario, &mut rng);
    HoldoutBattery { form, purchase }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max − min` of a dummy-coded function part, the baseline level counting as zero.
fn dummy_range(w: &[f64], n_attributes: usize, n_levels: usize) -> f64 {
    (0..n_attributes)
        .map(|a| {
            let lv = &w[a * (n_levels - 1)..(a + 1) * (n_levels - 1)];
            let hi = lv.iter().cloned().fold(0.0, f64::max);
            let lo = lv.iter().cloned().fold(0.0, f64::min);
            hi - lo
        })
        .sum()
}

fn range(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// Orders agree, with a predicted tie counting as a miss.
fn hit(predicted: f64, truth: f64) -> bool {
    (predicted > 0.0 && truth > 0.0) || (predicted < 0.0 && truth < 0.0)
}

/// Range of `λS` over the form holdout designs divided by the range of the function part.
fn true_importance(r: &TrueRespondent, battery: &HoldoutBattery) -> f64 {
    range(battery.form.iter().flatten().map(|d| r.lambda * r.form_score(d.as_slice()))) / r.function_range()
}

struct Tally {
    form_hits: usize,
    form_total: usize,
    overall_hits: usize,
    overall_total: usize,
    importance_sq: f64,
    importance_n: usize,
}

impl Tally {
    fn new() -> Self {
        Tally {
            form_hits: 0,
            form_total: 0,
            overall_hits: 0,
            overall_total: 0,
            importance_sq: 0.0,
            importance_n: 0,
        }
    }

    fn importance(&mut self, estimated: f64, truth: f64) {
        if estimated.is_finite() && truth.is_finite() {
            self.importance_sq += (estimated - truth).powi(2);
            self.importance_n += 1;
        }
    }

    fn report(self, scenario: &Scenario, variant: Variant, seed: u64, respondents: usize, has_form: bool) -> HitRateReport {
        let rate = |h: usize, t: usize| if t == 0 { 0.0 } else { h as f64 / t as f64 };
        HitRateReport {
            scenario: scenario.name(),
            variant,
            seed,
            respondents,
            form_hits: self.form_hits,
            form_holdouts: self.form_total,
            overall_hits: self.overall_hits,
            overall_holdouts: self.overall_total,
            form_hit_rate: has_form.then(|| rate(self.form_hits, self.form_total)),
            overall_hit_rate: rate(self.overall_hits, self.overall_total),
            form_importance_rmse: (has_form && self.importance_n > 0)
                .then(|| (self.importance_sq / self.importance_n as f64).sqrt()),
        }
    }
}

fn response_rng(seed: u64, respondent: usize) -> Rng {
    seeds::rng(seed, &[tag::RESPONSE, respondent as u64])
}

fn single_level(
    variant: Variant,
    scenario: &Scenario,
    settings: &SimSettings,
    seed: u64,
    truths: &[TrueRespondent],
    battery: &HoldoutBattery,
) -> Result<HitRateReport> {
    let with_form = variant == Variant::M1;
    let nl = scenario.n_levels;
    let input = |d: &DesignVector, p: &FunctionProfile| -> Result<Vec<f64>> {
        let mut x = if with_form { d.as_slice().to_vec() } else { Vec::new() };
        x.extend(dummy_code(p, nl)?);
        Ok(x)
    };
    let mut data = Vec::with_capacity(truths.len());
    for (i, r) in truths.iter().enumerate() {
        let mut rng = response_rng(seed, i);
        let mut q_rng = seeds::rng(seed, &[tag::LHS, i as u64]);
        let mut choices = Vec::with_capacity(settings.questions);
        for (d, p) in lhs_questions(settings.questions, scenario, &mut q_rng) {
            let side = simulate_purchase_answer(r, &d, &p, &settings.response, &mut rng);
            let (a, b) = (input(&d[0], &p[0])?, input(&d[1], &p[1])?);
            choices.push(match side {
                Side::Left => Choice { chosen: a, unchosen: b },
                Side::Right => Choice { chosen: b, unchosen: a },
            });
        }
        data.push(choices);
    }
    let mcmc = McmcConfig {
        seed: seeds::derive(seed, &[tag::MCMC]),
        ..settings.mcmc.clone()
    };
    let posterior = overall::fit_hb(&data, &mcmc)?;
    let means = posterior.posterior_means();
    let mut t = Tally::new();
    let off = if with_form { N_DESIGN_VARS } else { 0 };
    for (r, w) in truths.iter().zip(&means) {
        if with_form {
            let wx = &w[..N_DESIGN_VARS];
            for [a, b] in &battery.form {
                let pred = dot(wx, a.as_slice()) - dot(wx, b.as_slice());
                t.form_hits += usize::from(hit(pred, r.form_score(a.as_slice()) - r.form_score(b.as_slice())));
                t.form_total += 1;
            }
            let est = range(battery.form.iter().flatten().map(|d| dot(wx, d.as_slice())))
                / dummy_range(&w[off..], scenario.n_attributes, nl);
            t.importance(est, true_importance(r, battery));
        }
        for ([a, b], [pa, pb]) in &battery.purchase {
            let pred = dot(w, &input(a, pa)?) - dot(w, &input(b, pb)?);
            let truth = r.utility(a.as_slice(), pa) - r.utility(b.as_slice(), pb);
            t.overall_hits += usize::from(hit(pred, truth));
            t.overall_total += 1;
        }
    }
    Ok(t.report(scenario, variant, seed, truths.len(), with_form))
}

/// Non-adaptive transcripts: each round shows one Latin hypercube pair for the form question
/// and the same pair with Latin hypercube profiles for the purchase question.
fn lhs_transcripts(
    scenario: &Scenario,
    settings: &SimSettings,
    cfg: &StudyConfig,
    norm: &NormalizationStats,
    seed: u64,
    truths: &[TrueRespondent],
) -> Result<Vec<RespondentData>> {
    let nl = scenario.n_levels;
    let mut out = Vec::with_capacity(truths.len());
    for (i, r) in truths.iter().enumerate() {
        let mut rng = response_rng(seed, i);
        let mut q_rng = seeds::rng(seed, &[tag::LHS, i as u64]);
        let mut data = RespondentData {
            id: format!("r{:04}", i + 1),
            ..Default::default()
        };
        for (d, p) in lhs_questions(cfg.rounds, scenario, &mut q_rng) {
            let f = simulate_form_answer(r, &d, &settings.response, &mut rng);
            let (c, u) = if f.left_chosen() { (d[0], d[1]) } else { (d[1], d[0]) };
            data.form.push(FormResponse::new(
                norm.normalize_design(&c),
                norm.normalize_design(&u),
                cfg.margins[usize::from(f.much())],
            ));
            let side = simulate_purchase_answer(r, &d, &p, &settings.response, &mut rng);
            let (c, u) = if side == Side::Left { (0, 1) } else { (1, 0) };
            data.purchases.push((
                norm.normalize_design(&d[c]),
                norm.normalize_design(&d[u]),
                dummy_code(&p[c], nl)?,
                dummy_code(&p[u], nl)?,
            ));
        }
        out.push(data);
    }
    Ok(out)
}

/// Runs every respondent through the live questionnaire, one after the other, so each sees the
/// population of those finished before.
fn adaptive_transcripts(
    settings: &SimSettings,
    cfg: &StudyConfig,
    norm: &NormalizationStats,
    seed: u64,
    truths: &[TrueRespondent],
) -> Result<Vec<RespondentData>> {
    let validation = ValidationBlock {
        form: Vec::new(),
        purchase: Vec::new(),
    };
    let engine = Engine::new(cfg, norm, &validation);
    let mut pop = PopulationSnapshot::empty(cfg.gamma);
    let mut out = Vec::with_capacity(truths.len());
    for (i, r) in truths.iter().enumerate() {
        let mut rng = response_rng(seed, i);
        let mut s = SessionState::new(format!("r{:04}", i + 1), i + 1, cfg, 0.0);
        while s.status != SessionStatus::Finished {
            let q = engine.next_question(&mut s, &pop)?;
            let a: Answer = simulate_response(r, &q, &settings.response, &mut rng)?;
            engine.submit(&mut s, &pop, a, 0.0)?;
        }
        out.push(RespondentData::from_session(&s, cfg, norm)?);
        pop = pop.with_finished(&s);
    }
    Ok(out)
}

fn bi_level(
    variant: Variant,
    scenario: &Scenario,
    settings: &SimSettings,
    seed: u64,
    truths: &[TrueRespondent],
    battery: &HoldoutBattery,
) -> Result<HitRateReport> {
    let norm = NormalizationStats::builtin();
    let cfg = settings.study_config(scenario, seed)?;
    let data = if variant == Variant::M3 {
        adaptive_transcripts(settings, &cfg, norm, seed, truths)?
    } else {
        lhs_transcripts(scenario, settings, &cfg, norm, seed, truths)?
    };
    let (models, _) = survey::finalize(&data, &cfg)?;
    let nl = scenario.n_levels;

    let feats: Vec<Vec<f64>> = battery
        .form
        .iter()
        .flatten()
        .chain(battery.purchase.iter().flat_map(|(d, _)| d.iter()))
        .map(|d| norm.normalize_design(d))
        .collect();
    let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
    let pops = models.population_scores(&refs);
    let nf = 2 * battery.form.len();
    let means = models.posterior.posterior_means();

    let mut t = Tally::new();
    for (i, r) in truths.iter().enumerate() {
        let s = models.form_scores(i, &refs, &pops);
        let w = &means[i];
        for (k, [a, b]) in battery.form.iter().enumerate() {
            let truth = r.form_score(a.as_slice()) - r.form_score(b.as_slice());
            t.form_hits += usize::from(hit(s[2 * k] - s[2 * k + 1], truth));
            t.form_total += 1;
        }
        let est = range(s[..nf].iter().map(|v| w[0] * v)) / dummy_range(&w[1..], scenario.n_attributes, nl);
        t.importance(est, true_importance(r, battery));
        for (k, ([a, b], [pa, pb])) in battery.purchase.iter().enumerate() {
            let ua = w[0] * s[nf + 2 * k] + dot(&w[1..], &dummy_code(pa, nl)?);
            let ub = w[0] * s[nf + 2 * k + 1] + dot(&w[1..], &dummy_code(pb, nl)?);
            let truth = r.utility(a.as_slice(), pa) - r.utility(b.as_slice(), pb);
            t.overall_hits += usize::from(hit(ua - ub, truth));
            t.overall_total += 1;
        }
    }
    Ok(t.report(scenario, variant, seed, truths.len(), true))
}

/// One variant on one seeded scenario. The respondents and holdouts depend only on the
/// scenario and seed, so all variants of a cell face the same people and questions.
pub fn run_experiment(variant: Variant, scenario: &Scenario, settings: &SimSettings, seed: u64) -> Result<HitRateReport> {
    scenario.validate()?;
    settings.validate()?;
    let sc = scenario.with_seed(seed);
    let truths: Vec<TrueRespondent> = (0..settings.respondents).map(|i| gen_respondent(&sc, i)).collect();
    let battery = holdout_battery(&sc, settings, seed);
    match variant {
        Variant::M1 | Variant::M1aField => single_level(variant, &sc, settings, seed, &truths, &battery),
        Variant::M2 | Variant::M3 => bi_level(variant, &sc, settings, seed, &truths, &battery),
    }
}

/// Every `(scenario, seed, variant)` cell, in that nesting order.
pub fn run_grid(scenarios: &[Scenario], variants: &[Variant], settings: &SimSettings, seeds: &[u64]) -> Result<Vec<HitRateReport>> {
    let cells: Vec<(&Scenario, u64, Variant)> = scenarios
        .iter()
        .flat_map(|s| seeds.iter().flat_map(move |&seed| variants.iter().map(move |&v| (s, seed, v))))
        .collect();
    cells
        .into_par_iter()
        .map(|(s, seed, v)| run_experiment(v, s, settings, seed))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Questions,
    Attributes,
    Noise,
    CjScale,
    CjRatio,
}

impl SweepKind {
    /// Default grid: question totals, attribute counts, flip probabilities, the smaller margin
    /// with the 1:2 ratio kept, or the larger margin with the smaller fixed at 1.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::Questions => vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            SweepKind::Attributes => (2..=10).map(f64::from).collect(),
            SweepKind::Noise => vec![0.0, 0.1, 0.2],
            SweepKind::CjScale => vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            SweepKind::CjRatio => vec![2.0, 4.0, 6.0, 8.0, 10.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Questions => "questions",
            SweepKind::Attributes => "attributes",
            SweepKind::Noise => "noise",
            SweepKind::CjScale => "cj_scale",
            SweepKind::CjRatio => "cj_ratio",
        }
    }

    /// Scenario and settings of one grid point.
    pub fn apply(self, value: f64, scenario: &Scenario, settings: &SimSettings) -> Result<(Scenario, SimSettings)> {
        let mut sc = scenario.clone();
        let mut st = settings.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config("sweep", format!("{} needs whole values, got {value}", self.name())))
            }
        };
        match self {
            SweepKind::Questions => st.questions = count()?,
            SweepKind::Attributes => sc.n_attributes = count()?,
            SweepKind::Noise => st.response.flip_prob = value,
            SweepKind::CjScale => st.margins = [value, 2.0 * value],
            SweepKind::CjRatio => st.margins = [1.0, value],
        }
        sc.validate()?;
        st.validate()?;
        Ok((sc, st))
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepKind> {
        [
            SweepKind::Questions,
            SweepKind::Attributes,
            SweepKind::Noise,
            SweepKind::CjScale,
            SweepKind::CjRatio,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::config("sweep", format!("unknown sweep `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub kind: SweepKind,
    pub value: f64,
    pub report: HitRateReport,
}

pub fn robustness_sweep(
    kind: SweepKind,
    values: &[f64],
    base: &Scenario,
    variants: &[Variant],
    settings: &SimSettings,
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for &v in values {
        let (sc, st) = kind.apply(v, base, settings)?;
        for r in run_grid(std::slice::from_ref(&sc), variants, &st, seeds)? {
            cells.push(SweepCell {
                kind,
                value: v,
                report: r,
            });
        }
    }
    Ok(cells)
}

/// Mean of a metric over the seeds of one `(scenario, variant)`; `None` if any seed lacks it.
pub fn mean_over_seeds(reports: &[HitRateReport], scenario: &str, variant: Variant, metric: impl Fn(&HitRateReport) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = reports
        .iter()
        .filter(|r| r.scenario == scenario && r.variant == variant)
        .map(metric)
        .collect();
    let vals = vals?;
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// One line of the long-format result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario: String,
    pub variant: String,
    pub seed: u64,
    pub sweep: String,
    pub sweep_value: Option<f64>,
    pub respondents: usize,
    pub form_hits: usize,
    pub form_holdouts: usize,
    pub form_hit_rate: Option<f64>,
    pub overall_hits: usize,
    pub overall_holdouts: usize,
    pub overall_hit_rate: f64,
    pub form_importance_rmse: Option<f64>,
    pub reference_form_hit_rate: Option<f64>,
    pub reference_overall_hit_rate: Option<f64>,
}

impl CsvRow {
    pub fn new(r: &HitRateReport, sweep: Option<(SweepKind, f64)>) -> Self {
        let pub_rates = Scenario::by_name(&r.scenario).ok().and_then(|s| reference(&s, r.variant));
        CsvRow {
            scenario: r.scenario.clone(),
            variant: r.variant.name().to_string(),
            seed: r.seed,
            sweep: sweep.map_or(String::new(), |(k, _)| k.name().to_string()),
            sweep_value: sweep.map(|(_, v)| v),
            respondents: r.respondents,
            form_hits: r.form_hits,
            form_holdouts: r.form_holdouts,
            form_hit_rate: r.form_hit_rate,
            overall_hits: r.overall_hits,
            overall_holdouts: r.overall_holdouts,
            overall_hit_rate: r.overall_hit_rate,
            form_importance_rmse: r.form_importance_rmse,
            reference_form_hit_rate: pub_rates.map(|p| p.0 / 100.0),
            reference_overall_hit_rate: pub_rates.map(|p| p.1 / 100.0),
        }
    }
}

pub fn write_csv(rows: &[CsvRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub crate_version: String,
    pub scenarios: Vec<Scenario>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub settings: SimSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<(SweepKind, Vec<f64>)>,
    pub rows: usize,
    /// SHA-256 of the CSV bytes.
    pub csv_sha256: String,
}

impl SimManifest {
    pub fn new(
        scenarios: &[Scenario],
        variants: &[Variant],
        seeds: &[u64],
        settings: &SimSettings,
        sweep: Option<(SweepKind, Vec<f64>)>,
        rows: usize,
        csv: &[u8],
    ) -> Self {
        let digest = Sha256::digest(csv);
        SimManifest {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            scenarios: scenarios.to_vec(),
            variants: variants.to_vec(),
            seeds: seeds.to_vec(),
            settings: settings.clone(),
            sweep,
            rows,
            csv_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip_and_unknown_is_a_config_error() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!(matches!("M4".parse::<Variant>(), Err(Error::Config { .. })));
    }

    #[test]
    fn dummy_range_counts_the_baseline() {
        // levels 0, 1, -2, 0.5, 3 and 0, -1, -1, -1, -1
        let w = [1.0, -2.0, 0.5, 3.0, -1.0, -1.0, -1.0, -1.0];
        assert_eq!(dummy_range(&w, 2, 5), 5.0 + 1.0);
    }

    #[test]
    fn sweep_points_set_the_right_knob() {
        let sc = Scenario::by_name("high-low-high").unwrap();
        let st = SimSettings::default();
        let (_, s) = SweepKind::CjScale.apply(1000.0, &sc, &st).unwrap();
        assert_eq!(s.margins, [1000.0, 2000.0]);
        let (_, s) = SweepKind::CjRatio.apply(10.0, &sc, &st).unwrap();
        assert_eq!(s.margins, [1.0, 10.0]);
        let (c, _) = SweepKind::Attributes.apply(6.0, &sc, &st).unwrap();
        assert_eq!(c.n_attributes, 6);
        assert!(SweepKind::Questions.apply(15.0, &sc, &st).is_err());
        assert!(SweepKind::Noise.apply(1.5, &sc, &st).is_err());
    }

    #[test]
    fn holdout_battery_is_seeded() {
        let sc = Scenario::by_name("low-low-low").unwrap();
        let st = SimSettings::default();
        let a = holdout_battery(&sc, &st, 3);
        assert_eq!(a.form.len(), 100);
        assert_eq!(a.purchase.len(), 100);
        assert_eq!(a, holdout_battery(&sc, &st, 3));
        assert_ne!(a, holdout_battery(&sc, &st, 4));
    }
}
