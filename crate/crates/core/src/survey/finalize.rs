use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::form::{self, FormModel, FormResponse, KernelExpansion, PopulationFormModel};
use crate::geometry::NormalizationStats;
use crate::overall::{self, dummy_code, utility_input, Choice, HbDiagnostics, HbPosterior};

use super::engine::{Answer, QuestionKind, SessionState, Side};

/// Everything finalization needs from one respondent, already in feature space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RespondentData {
    pub id: String,
    pub form: Vec<FormResponse>,
    /// `(chosen features, unchosen features, chosen dummies, unchosen dummies)`.
    pub purchases: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>,
    /// `(left features, right features, left chosen)`.
    pub validation_form: Vec<(Vec<f64>, Vec<f64>, bool)>,
    /// `(left features, right features, left dummies, right dummies, left chosen)`.
    pub validation_purchase: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, bool)>,
}

impl RespondentData {
    /// Feature-space view of a session transcript.
    pub fn from_session(s: &SessionState, cfg: &StudyConfig, norm: &NormalizationStats) -> Result<Self> {
        let nl = cfg.n_levels();
        let form = s
            .form_responses()
            .iter()
            .map(|(c, u, much)| {
                FormResponse::new(norm.normalize_design(c), norm.normalize_design(u), cfg.margins[usize::from(*much)])
            })
            .collect();
        let purchases = s
            .purchases()
            .iter()
            .map(|r| {
                Ok((
                    norm.normalize_design(&r.chosen),
                    norm.normalize_design(&r.unchosen),
                    dummy_code(&r.chosen_profile, nl)?,
                    dummy_code(&r.unchosen_profile, nl)?,
                ))
            })
            .collect::<Result<_>>()?;
        let mut validation_form = Vec::new();
        let mut validation_purchase = Vec::new();
        for (q, a) in &s.transcript {
            let [l, r] = &q.designs;
            match (q.kind, a, &q.profiles) {
                (QuestionKind::ValidationForm, Answer::Form(f), _) => {
                    validation_form.push((norm.normalize_design(l), norm.normalize_design(r), f.left_chosen()))
                }
                (QuestionKind::ValidationPurchase, Answer::Purchase(side), Some([pl, pr])) => validation_purchase.push((
                    norm.normalize_design(l),
                    norm.normalize_design(r),
                    dummy_code(pl, nl)?,
                    dummy_code(pr, nl)?,
                    *side == Side::Left,
                )),
                _ => {}
            }
        }
        Ok(RespondentData {
            id: s.id.clone(),
            form,
            purchases,
            validation_form,
            validation_purchase,
        })
    }
}

/// Final per-respondent form models, shrinkage weights and the HB posterior.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinalModels {
    pub individual: Vec<FormModel>,
    pub eta: Vec<f64>,
    pub population_mean: KernelExpansion,
    pub posterior: HbPosterior,
}

impl FinalModels {
    /// Final form scores of respondent `i` at many points, sharing one population pass.
    pub fn form_scores(&self, i: usize, xs: &[&[f64]], population_scores: &[f64]) -> Vec<f64> {
        let eta = self.eta[i];
        xs.iter()
            .zip(population_scores)
            .map(|(x, p)| {
                let s = self.individual[i].score(x);
                if eta == 1.0 {
                    s
                } else {
                    eta * s + (1.0 - eta) * p
                }
            })
            .collect()
    }

    pub fn population_scores(&self, xs: &[&[f64]]) -> Vec<f64> {
        self.population_mean.score_batch(xs)
    }

    /// The whole final scorer of respondent `i` as one expansion.
    pub fn scorer(&self, i: usize) -> KernelExpansion {
        let eta = self.eta[i];
        let mut e = KernelExpansion::new(self.individual[i].gamma);
        e.add_scaled(&self.individual[i].expansion(), eta);
        if eta != 1.0 {
            e.add_scaled(&self.population_mean, 1.0 - eta);
        }
        e
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RespondentResult {
    pub id: String,
    pub eta: f64,
    pub form_model: FormModel,
    pub w_mean: Vec<f64>,
    pub w_sd: Vec<f64>,
    pub form_hits: usize,
    pub form_total: usize,
    pub overall_hits: usize,
    pub overall_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub respondents: Vec<RespondentResult>,
    pub form_hit_rate: Option<f64>,
    pub overall_hit_rate: Option<f64>,
    pub hb: HbDiagnostics,
    pub data_hash: String,
    pub gamma: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Individual form models, η by leave-one-out over the finished population, final mixed
/// scores of all purchase designs, then one HB fit over every respondent.
pub fn finalize(data: &[RespondentData], cfg: &StudyConfig) -> Result<(FinalModels, FinalReport)> {
    if data.is_empty() {
        return Err(Error::state("no finished respondents to finalize"));
    }
    let gamma = cfg.gamma;
    let individual: Vec<FormModel> = data
        .iter()
        .map(|r| form::train(&r.form, gamma, &cfg.solver))
        .collect::<Result<_>>()?;
    let population = PopulationFormModel::new(individual.clone());
    let population_mean = population.mean_expansion(gamma);
    let pop_score = |x: &[f64]| population_mean.score(x);
    let mut eta = Vec::with_capacity(data.len());
    for (i, r) in data.iter().enumerate() {
        let fallback = cfg.eta.schedule(i + 1);
        // a single respondent has nobody to shrink toward
        let e = if data.len() == 1 {
            1.0
        } else {
            form::select_eta_cv_with(&r.form, Some(&pop_score), &cfg.eta.grid, gamma, &cfg.solver, fallback)?
        };
        eta.push(e);
    }

    let placeholder = HbPosterior {
        dim: 0,
        draws: Vec::new(),
        lambda_draws: Vec::new(),
        diagnostics: HbDiagnostics {
            acceptance: Vec::new(),
            draws: 0,
            flagged: Vec::new(),
        },
        config: cfg.mcmc.clone(),
        data_hash: String::new(),
    };
    let mut models = FinalModels {
        individual,
        eta,
        population_mean,
        posterior: placeholder,
    };

    // final form scores for every design that enters the overall model
    let mut choices: Vec<Vec<Choice>> = Vec::with_capacity(data.len());
    let mut val_scores: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(data.len());
    for (i, r) in data.iter().enumerate() {
        let mut xs: Vec<&[f64]> = Vec::new();
        for (c, u, _, _) in &r.purchases {
            xs.push(c);
            xs.push(u);
        }
        for (l, rr, _) in &r.validation_form {
            xs.push(l);
            xs.push(rr);
        }
        for (l, rr, _, _, _) in &r.validation_purchase {
            xs.push(l);
            xs.push(rr);
        }
        let pops = models.population_scores(&xs);
        let s = models.form_scores(i, &xs, &pops);
        let np = r.purchases.len();
        choices.push(
            r.purchases
                .iter()
                .enumerate()
                .map(|(k, (_, _, ca, ua))| Choice {
                    chosen: utility_input(s[2 * k], ca),
                    unchosen: utility_input(s[2 * k + 1], ua),
                })
                .collect(),
        );
        let nf = r.validation_form.len();
        val_scores.push((s[2 * np..2 * (np + nf)].to_vec(), s[2 * (np + nf)..].to_vec()));
    }
    let posterior = overall::fit_hb(&choices, &cfg.mcmc)?;

    let mut respondents = Vec::with_capacity(data.len());
    let (mut fh, mut ft, mut oh, mut ot) = (0, 0, 0, 0);
    for (i, r) in data.iter().enumerate() {
        let summary = posterior.posterior_mean(i)?;
        let (vf, vp) = &val_scores[i];
        let form_hits = r
            .validation_form
            .iter()
            .enumerate()
            .filter(|(k, (_, _, left))| {
                let d = vf[2 * k] - vf[2 * k + 1];
                (d > 0.0 && *left) || (d < 0.0 && !*left)
            })
            .count();
        let overall_hits = r
            .validation_purchase
            .iter()
            .enumerate()
            .filter(|(k, (_, _, la, ra, left))| {
                let ul = dot(&summary.mean, &utility_input(vp[2 * k], la));
                let ur = dot(&summary.mean, &utility_input(vp[2 * k + 1], ra));
                (ul > ur && *left) || (ul < ur && !*left)
            })
            .count();
        fh += form_hits;
        ft += r.validation_form.len();
        oh += overall_hits;
        ot += r.validation_purchase.len();
        respondents.push(RespondentResult {
            id: r.id.clone(),
            eta: models.eta[i],
            form_model: models.individual[i].clone(),
            w_mean: summary.mean,
            w_sd: summary.sd,
            form_hits,
            form_total: r.validation_form.len(),
            overall_hits,
            overall_total: r.validation_purchase.len(),
        });
    }
    let report = FinalReport {
        respondents,
        form_hit_rate: rate(fh, ft),
        overall_hit_rate: rate(oh, ot),
        hb: posterior.diagnostics.clone(),
        data_hash: posterior.data_hash.clone(),
        gamma,
    };
    models.posterior = posterior;
    Ok((models, report))
}
