//! Synthetic-respondent experiments: known true preferences, four model variants and
//! holdout hit rates, plus robustness sweeps over the protocol.

mod experiment;
mod truth;

pub use experiment::{
    holdout_battery, mean_over_seeds, robustness_sweep, run_experiment, run_grid, write_csv, CsvRow, HitRateReport,
    HoldoutBattery, SimManifest, SimSettings, SweepCell, SweepKind, Variant, REFERENCE_HIT_RATES,
};
pub use truth::{
    calibrate_delta_variance, calibrate_lambda, choice_probability, gen_respondent, main_effect_values,
    partworth_levels, simulate_form_answer, simulate_purchase_answer, simulate_response, FormAnswerRule, Gaussian,
    Level, MainEffects, NaturalSpline, PurchaseAnswerRule, ResponseModel, Scenario, TrueRespondent,
    CALIBRATION_PAIRS, N_INTERACTIONS, SPLINE_KNOTS,
};
