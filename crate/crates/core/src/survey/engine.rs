use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::form::{self, FormModel, FormResponse, KernelExpansion, PopulationFormModel};
use crate::geometry::{DesignVector, NormalizationStats, N_DESIGN_VARS};
use crate::lhs;
use crate::overall::{self, dummy_code, utility_input, FunctionProfile, OverallModelOnline};
use crate::sampler::{self, design_scores, AuditRecord, GaConfig};
use crate::seeds::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Form,
    Purchase,
    ValidationForm,
    ValidationPurchase,
}

impl QuestionKind {
    pub fn is_form(self) -> bool {
        matches!(self, QuestionKind::Form | QuestionKind::ValidationForm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    FormFirst,
    PurchaseFirst,
}

impl Order {
    pub fn for_round(round: usize) -> Order {
        if round % 2 == 1 {
            Order::FormFirst
        } else {
            Order::PurchaseFirst
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    /// 0-based position in the session transcript.
    pub seq: usize,
    /// Learning round 1..=m; validation questions carry m + 1.
    pub round: usize,
    pub kind: QuestionKind,
    pub order: Order,
    pub designs: [DesignVector; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<[FunctionProfile; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormAnswer {
    LeftMuchBetter,
    LeftBetter,
    RightBetter,
    RightMuchBetter,
}

impl FormAnswer {
    pub fn left_chosen(self) -> bool {
        matches!(self, FormAnswer::LeftMuchBetter | FormAnswer::LeftBetter)
    }

    pub fn much(self) -> bool {
        matches!(self, FormAnswer::LeftMuchBetter | FormAnswer::RightMuchBetter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Answer {
    Form(FormAnswer),
    Purchase(Side),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Validating,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurchaseRecord {
    pub chosen: DesignVector,
    pub unchosen: DesignVector,
    pub chosen_profile: FunctionProfile,
    pub unchosen_profile: FunctionProfile,
}

/// Study-wide holdout questions, frozen at study creation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationBlock {
    pub form: Vec<[DesignVector; 2]>,
    pub purchase: Vec<([DesignVector; 2], [FunctionProfile; 2])>,
}

impl ValidationBlock {
    /// Latin hypercube designs plus stratified random level profiles.
    pub fn generate(cfg: &StudyConfig) -> Self {
        let mut rng = seeds::rng(cfg.seed, &[tag::HOLDOUT]);
        let nf = cfg.validation.form;
        let np = cfg.validation.purchase;
        let pts = lhs::lhs_continuous(2 * (nf + np), N_DESIGN_VARS, &mut rng);
        let levels = lhs::lhs_levels(2 * np, cfg.n_attributes(), cfg.n_levels(), &mut rng);
        let d = |i: usize| DesignVector::clamped(&pts[i]);
        let form = (0..nf).map(|k| [d(2 * k), d(2 * k + 1)]).collect();
        let purchase = (0..np)
            .map(|k| {
                let base = 2 * nf + 2 * k;
                (
                    [d(base), d(base + 1)],
                    [
                        FunctionProfile::new(levels[2 * k].clone()),
                        FunctionProfile::new(levels[2 * k + 1].clone()),
                    ],
                )
            })
            .collect();
        ValidationBlock { form, purchase }
    }

    pub fn len(&self) -> usize {
        self.form.len() + self.purchase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable view of the respondents that have finished so far.
#[derive(Clone, Debug)]
pub struct PopulationSnapshot {
    pub version: usize,
    pub form_models: Vec<FormModel>,
    pub online_w: Vec<Vec<f64>>,
    pub design_history: Vec<Vec<f64>>,
    pub profile_history: Vec<FunctionProfile>,
    mean_expansion: KernelExpansion,
}

impl PopulationSnapshot {
    pub fn empty(gamma: f64) -> Self {
        PopulationSnapshot {
            version: 0,
            form_models: Vec::new(),
            online_w: Vec::new(),
            design_history: Vec::new(),
            profile_history: Vec::new(),
            mean_expansion: KernelExpansion::new(gamma),
        }
    }

    pub fn n(&self) -> usize {
        self.form_models.len()
    }

    pub fn mean_expansion(&self) -> &KernelExpansion {
        &self.mean_expansion
    }

    /// A new snapshot with one more finished respondent.
    pub fn with_finished(&self, s: &SessionState) -> Self {
        let mut form_models = self.form_models.clone();
        form_models.push(s.form_model.clone());
        let mut online_w = self.online_w.clone();
        online_w.push(s.online.w.clone());
        let mut design_history = self.design_history.clone();
        design_history.extend(s.own_designs().into_iter().map(|d| d.as_slice().to_vec()));
        let mut profile_history = self.profile_history.clone();
        profile_history.extend(s.own_profiles());
        let gamma = self.mean_expansion.gamma();
        let mean_expansion = PopulationFormModel::new(form_models.clone()).mean_expansion(gamma);
        PopulationSnapshot {
            version: self.version + 1,
            form_models,
            online_w,
            design_history,
            profile_history,
            mean_expansion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub respondent: usize,
    pub status: SessionStatus,
    pub round: usize,
    /// 0 or 1 within the current round.
    pub step: usize,
    pub validation_index: usize,
    pub pending: Option<Question>,
    pub transcript: Vec<(Question, Answer)>,
    pub round_pair: Option<[DesignVector; 2]>,
    pub round_profiles: Option<[FunctionProfile; 2]>,
    pub form_model: FormModel,
    pub online: OverallModelOnline,
    pub created_at: f64,
    pub last_activity: f64,
    #[serde(skip)]
    pub last_audit: Option<AuditRecord>,
}

impl SessionState {
    pub fn new(id: String, respondent: usize, cfg: &StudyConfig, now: f64) -> Self {
        SessionState {
            id,
            respondent,
            status: SessionStatus::Active,
            round: 1,
            step: 0,
            validation_index: 0,
            pending: None,
            transcript: Vec::new(),
            round_pair: None,
            round_profiles: None,
            form_model: FormModel::empty(cfg.gamma),
            online: OverallModelOnline::zero(cfg.utility_dim()),
            created_at: now,
            last_activity: now,
            last_audit: None,
        }
    }

    /// Learning-round designs shown so far, in order, without repeats within a round.
    pub fn own_designs(&self) -> Vec<DesignVector> {
        let mut out = Vec::new();
        let mut last_round = 0;
        for (q, _) in &self.transcript {
            if matches!(q.kind, QuestionKind::Form | QuestionKind::Purchase) && q.round != last_round {
                out.extend_from_slice(&q.designs);
                last_round = q.round;
            }
        }
        if let Some(p) = &self.round_pair {
            if last_round != self.round {
                out.extend_from_slice(p);
            }
        }
        out
    }

    pub fn own_profiles(&self) -> Vec<FunctionProfile> {
        self.transcript
            .iter()
            .filter(|(q, _)| q.kind == QuestionKind::Purchase)
            .flat_map(|(q, _)| q.profiles.clone().into_iter().flatten())
            .collect()
    }

    pub fn form_responses(&self) -> Vec<(DesignVector, DesignVector, bool)> {
        self.transcript
            .iter()
            .filter_map(|(q, a)| match (q.kind, a) {
                (QuestionKind::Form, Answer::Form(f)) => {
                    let [l, r] = q.designs;
                    Some(if f.left_chosen() { (l, r, f.much()) } else { (r, l, f.much()) })
                }
                _ => None,
            })
            .collect()
    }

    pub fn purchases(&self) -> Vec<PurchaseRecord> {
        self.transcript
            .iter()
            .filter_map(|(q, a)| match (q.kind, a, &q.profiles) {
                (QuestionKind::Purchase, Answer::Purchase(side), Some([pl, pr])) => {
                    let [l, r] = q.designs;
                    Some(match side {
                        Side::Left => PurchaseRecord {
                            chosen: l,
                            unchosen: r,
                            chosen_profile: pl.clone(),
                            unchosen_profile: pr.clone(),
                        },
                        Side::Right => PurchaseRecord {
                            chosen: r,
                            unchosen: l,
                            chosen_profile: pr.clone(),
                            unchosen_profile: pl.clone(),
                        },
                    })
                }
                _ => None,
            })
            .collect()
    }

    pub fn learning_answers(&self) -> (usize, usize) {
        let f = self.transcript.iter().filter(|(q, _)| q.kind == QuestionKind::Form).count();
        let p = self.transcript.iter().filter(|(q, _)| q.kind == QuestionKind::Purchase).count();
        (f, p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitSummary {
    pub seq: usize,
    pub kind: QuestionKind,
    pub status: SessionStatus,
    pub form_pairs: usize,
    pub purchase_questions: usize,
    pub w: Vec<f64>,
}

/// Stateless driver of the per-session state machine.
pub struct Engine<'a> {
    pub cfg: &'a StudyConfig,
    pub norm: &'a NormalizationStats,
    pub validation: &'a ValidationBlock,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a StudyConfig, norm: &'a NormalizationStats, validation: &'a ValidationBlock) -> Self {
        Engine { cfg, norm, validation }
    }

    fn eta(&self, s: &SessionState) -> f64 {
        self.cfg.eta.schedule(s.respondent)
    }

    /// The in-session scorer `η·S_i + (1 − η)·S_pop`.
    pub fn mix_expansion(&self, s: &SessionState, pop: &PopulationSnapshot) -> KernelExpansion {
        let eta = self.eta(s);
        let mut e = s.form_model.expansion();
        if pop.n() == 0 || eta == 1.0 {
            return e;
        }
        let mut mixed = KernelExpansion::new(self.cfg.gamma);
        mixed.add_scaled(&e, eta);
        mixed.add_scaled(pop.mean_expansion(), 1.0 - eta);
        e = mixed;
        e
    }

    fn ga_seed(&self, s: &SessionState, purpose: u64) -> u64 {
        seeds::derive(self.cfg.seed, &[s.respondent as u64, s.round as u64, purpose])
    }

    fn ga_config(&self, base: &GaConfig, seed: u64) -> GaConfig {
        let mut c = base.with_seed(seed);
        if c.time_limit_ms.is_none() {
            // half the per-round budget for each GA
            c.time_limit_ms = self.cfg.latency_budget_ms.map(|b| b / 2);
        }
        c
    }

    fn generate_form_pair(&self, s: &mut SessionState, pop: &PopulationSnapshot) -> Result<[DesignVector; 2]> {
        if s.round == 1 {
            return Ok(self.cfg.first_pair);
        }
        let started = Instant::now();
        let mut history = pop.design_history.clone();
        history.extend(s.own_designs().into_iter().map(|d| d.as_slice().to_vec()));
        let seed1 = self.ga_seed(s, tag::FIRST_FORM);
        let (x1, r1) = sampler::sample_first_form(&history, &self.ga_config(&self.cfg.ga_first, seed1))?;
        let seed2 = self.ga_seed(s, tag::SECOND_FORM);
        let model = self.mix_expansion(s, pop);
        let (x2, r2) = sampler::sample_second_form(
            &x1,
            &model,
            self.norm,
            &history,
            &self.cfg.weights,
            &self.ga_config(&self.cfg.ga_second, seed2),
        )?;
        s.last_audit = Some(AuditRecord {
            session: s.id.clone(),
            round: s.round,
            first_form_objective: r1.value,
            second_form_objective: r2.value,
            function_objective: f64::NAN,
            ga_seeds: [seed1, seed2],
            generations: [r1.generations, r2.generations],
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        Ok([x1, x2])
    }

    fn shrunk_w(&self, s: &SessionState, pop: &PopulationSnapshot) -> Vec<f64> {
        overall::shrink(&s.online.w, &pop.online_w, self.eta(s))
    }

    fn generate_profiles(&self, s: &mut SessionState, pop: &PopulationSnapshot, pair: &[DesignVector; 2]) -> Result<[FunctionProfile; 2]> {
        let started = Instant::now();
        let model = self.mix_expansion(s, pop);
        let scores = design_scores(&model, self.norm, &[pair[0].as_slice().to_vec(), pair[1].as_slice().to_vec()]);
        let w = self.shrunk_w(s, pop);
        let mut history = pop.profile_history.clone();
        history.extend(s.own_profiles());
        let r = sampler::sample_function_pair(
            scores[0],
            scores[1],
            &w,
            &history,
            self.cfg.n_attributes(),
            self.cfg.n_levels(),
            &self.cfg.weights,
            self.ga_seed(s, tag::FUNCTION_PAIR),
        )?;
        let ms = started.elapsed().as_secs_f64() * 1e3;
        match s.last_audit.as_mut().filter(|a| a.round == s.round) {
            Some(a) => {
                a.function_objective = r.objective;
                a.wall_time_ms += ms;
            }
            // the fixed first round has no form GA
            None => {
                s.last_audit = Some(AuditRecord {
                    session: s.id.clone(),
                    round: s.round,
                    first_form_objective: f64::NAN,
                    second_form_objective: f64::NAN,
                    function_objective: r.objective,
                    ga_seeds: [0, 0],
                    generations: [0, 0],
                    wall_time_ms: ms,
                })
            }
        }
        Ok([r.first, r.second])
    }

    /// Kind of the next question for a session that has nothing pending.
    pub fn expected_kind(&self, s: &SessionState) -> Option<QuestionKind> {
        match s.status {
            SessionStatus::Finished => None,
            SessionStatus::Active => {
                let form_now = (Order::for_round(s.round) == Order::FormFirst) == (s.step == 0);
                Some(if form_now { QuestionKind::Form } else { QuestionKind::Purchase })
            }
            SessionStatus::Validating => Some(if s.validation_index < self.validation.form.len() {
                QuestionKind::ValidationForm
            } else {
                QuestionKind::ValidationPurchase
            }),
        }
    }

    /// Makes a previously issued question pending again without regenerating it.
    pub fn install_question(&self, s: &mut SessionState, q: Question) -> Result<()> {
        if s.pending.is_some() {
            return Err(Error::state(format!("session {} already has a pending question", s.id)));
        }
        if q.seq != s.transcript.len() || Some(q.kind) != self.expected_kind(s) {
            return Err(Error::state(format!(
                "question {} ({:?}) does not fit session {} at position {}",
                q.seq,
                q.kind,
                s.id,
                s.transcript.len()
            )));
        }
        if matches!(q.kind, QuestionKind::Form | QuestionKind::Purchase) {
            match s.round_pair {
                Some(p) if p != q.designs => {
                    return Err(Error::state(format!("question {} changes the round pair", q.seq)))
                }
                Some(_) => {}
                None => s.round_pair = Some(q.designs),
            }
            if q.kind == QuestionKind::Purchase {
                s.round_profiles = q.profiles.clone();
            }
        }
        s.pending = Some(q);
        Ok(())
    }

    /// The pending question, if `answer` is of the matching type.
    pub fn check_answer(&self, s: &SessionState, answer: &Answer) -> Result<Question> {
        let Some(q) = s.pending.clone() else {
            return Err(Error::state("no question is pending"));
        };
        match (q.kind.is_form(), answer) {
            (true, Answer::Form(_)) | (false, Answer::Purchase(_)) => Ok(q),
            _ => Err(Error::state(format!(
                "answer type does not match pending {:?} question",
                q.kind
            ))),
        }
    }

    /// Returns the pending question, generating it if needed. Repeated calls are idempotent.
    pub fn next_question(&self, s: &mut SessionState, pop: &PopulationSnapshot) -> Result<Question> {
        if s.status == SessionStatus::Finished {
            return Err(Error::state(format!("session {} is finished", s.id)));
        }
        if let Some(q) = &s.pending {
            return Ok(q.clone());
        }
        let seq = s.transcript.len();
        let m = self.cfg.rounds;
        let q = if s.status == SessionStatus::Active {
            let pair = match s.round_pair {
                Some(p) => p,
                None => {
                    let p = self.generate_form_pair(s, pop)?;
                    s.round_pair = Some(p);
                    p
                }
            };
            let order = Order::for_round(s.round);
            let form_now = (order == Order::FormFirst) == (s.step == 0);
            if form_now {
                Question {
                    seq,
                    round: s.round,
                    kind: QuestionKind::Form,
                    order,
                    designs: pair,
                    profiles: None,
                }
            } else {
                let profiles = match &s.round_profiles {
                    Some(p) => p.clone(),
                    None => {
                        let p = self.generate_profiles(s, pop, &pair)?;
                        s.round_profiles = Some(p.clone());
                        p
                    }
                };
                Question {
                    seq,
                    round: s.round,
                    kind: QuestionKind::Purchase,
                    order,
                    designs: pair,
                    profiles: Some(profiles),
                }
            }
        } else {
            let v = s.validation_index;
            let nf = self.validation.form.len();
            if v < nf {
                Question {
                    seq,
                    round: m + 1,
                    kind: QuestionKind::ValidationForm,
                    order: Order::FormFirst,
                    designs: self.validation.form[v],
                    profiles: None,
                }
            } else {
                let (d, p) = &self.validation.purchase[v - nf];
                Question {
                    seq,
                    round: m + 1,
                    kind: QuestionKind::ValidationPurchase,
                    order: Order::FormFirst,
                    designs: *d,
                    profiles: Some(p.clone()),
                }
            }
        };
        s.pending = Some(q.clone());
        Ok(q)
    }

    fn normalized(&self, d: &DesignVector) -> Vec<f64> {
        self.norm.normalize_design(d)
    }

    fn retrain_form(&self, s: &mut SessionState) -> Result<()> {
        let responses: Vec<FormResponse> = s
            .form_responses()
            .iter()
            .map(|(c, u, much)| {
                FormResponse::new(self.normalized(c), self.normalized(u), self.cfg.margins[usize::from(*much)])
            })
            .collect();
        s.form_model = form::train(&responses, self.cfg.gamma, &self.cfg.solver)?;
        Ok(())
    }

    /// Refits the online overall model with the current form scores of every shown design.
    fn retrain_overall(&self, s: &mut SessionState, pop: &PopulationSnapshot) -> Result<()> {
        let records = s.purchases();
        if records.is_empty() {
            return Ok(());
        }
        let model = self.mix_expansion(s, pop);
        let nl = self.cfg.n_levels();
        let mut designs = Vec::with_capacity(2 * records.len());
        for r in &records {
            designs.push(r.chosen.as_slice().to_vec());
            designs.push(r.unchosen.as_slice().to_vec());
        }
        let scores = design_scores(&model, self.norm, &designs);
        let mut questions = Vec::with_capacity(records.len());
        for (k, r) in records.iter().enumerate() {
            let a = utility_input(scores[2 * k], &dummy_code(&r.chosen_profile, nl)?);
            let b = utility_input(scores[2 * k + 1], &dummy_code(&r.unchosen_profile, nl)?);
            questions.push((a, b));
        }
        s.online = overall::train_online(&questions, self.cfg.overall_margin, &self.cfg.solver)?;
        Ok(())
    }

    /// Records an answer to the pending question, then updates the models.
    pub fn submit(&self, s: &mut SessionState, pop: &PopulationSnapshot, answer: Answer, now: f64) -> Result<SubmitSummary> {
        let q = self.check_answer(s, &answer)?;
        s.pending = None;
        s.transcript.push((q.clone(), answer));
        s.last_activity = now;
        match q.kind {
            QuestionKind::Form => {
                self.retrain_form(s)?;
                self.retrain_overall(s, pop)?;
            }
            QuestionKind::Purchase => self.retrain_overall(s, pop)?,
            QuestionKind::ValidationForm | QuestionKind::ValidationPurchase => s.validation_index += 1,
        }
        if s.status == SessionStatus::Active {
            s.step += 1;
            if s.step == 2 {
                s.step = 0;
                s.round += 1;
                s.round_pair = None;
                s.round_profiles = None;
                if s.round > self.cfg.rounds {
                    s.status = if self.validation.is_empty() {
                        SessionStatus::Finished
                    } else {
                        SessionStatus::Validating
                    };
                }
            }
        } else if s.status == SessionStatus::Validating && s.validation_index >= self.validation.len() {
            s.status = SessionStatus::Finished;
        }
        let (f, p) = s.learning_answers();
        Ok(SubmitSummary {
            seq: q.seq,
            kind: q.kind,
            status: s.status,
            form_pairs: f,
            purchase_questions: p,
            w: s.online.w.clone(),
        })
    }
}
