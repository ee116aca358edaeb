//! Command line front end. Each subcommand maps library errors onto the process exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, AnalysisConfig, TradeoffLevels};
use crate::config::{from_json_with_path, StudyConfig};
use crate::error::{Error, Result};
use crate::geometry::{self, tessellate, DesignVector, NormalizationStats};
use crate::sampler::GaConfig;
use crate::simulation::{
    robustness_sweep, run_grid, write_csv, CsvRow, Scenario, SimManifest, SimSettings, SweepKind, Variant,
};
use crate::survey::{http, FinalModels, Service, SystemClock};

#[derive(Debug, Parser)]
#[command(name = "bilevel", version, about = "Bi-level adaptive conjoint engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the survey service over HTTP.
    Serve(ServeArgs),
    /// Simulate synthetic respondents and write hit-rate tables.
    Simulate(SimulateArgs),
    /// Finalize a stored study and write its models.
    Estimate(EstimateArgs),
    /// Importances, segments, group designs and trade-off tables from finalized models.
    Analyze(AnalyzeArgs),
    /// Tessellate a design vector into a mesh.
    ExportMesh(ExportMeshArgs),
    /// Refit the feature normalization from uniform random designs.
    FitNormalization(FitNormalizationArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding the study event logs; in-memory when omitted.
    #[arg(long)]
    pub store_path: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Overrides the seed of every study created by this process.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub latency_budget_ms: Option<u64>,
    /// Study config to create at start-up.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario names (`low-low-low`, ...), `all`, or a scenario JSON file. Comma separated.
    #[arg(long, default_value = "all")]
    pub scenario: String,
    /// Comma separated variants.
    #[arg(long, default_value = "M1,M2,M3")]
    pub variant: String,
    #[arg(long, default_value = "1,2,3,4,5")]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulation settings JSON.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    /// Robustness sweep over one knob of the first scenario.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Comma separated sweep values; the knob's defaults when omitted.
    #[arg(long)]
    pub sweep_values: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub store_path: PathBuf,
    /// Study id; required when the store holds more than one study.
    #[arg(long)]
    pub study: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// `models.json` written by `estimate`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// GA config JSON for the design searches.
    #[arg(long)]
    pub ga: Option<PathBuf>,
    /// Trade-off level JSON; the default price and MPG attributes when omitted.
    #[arg(long)]
    pub levels: Option<PathBuf>,
    #[arg(long, default_value_t = http::DEFAULT_MESH_RESOLUTION)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct ExportMeshArgs {
    /// JSON array of 19 values in [0, 1].
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, default_value_t = http::DEFAULT_MESH_RESOLUTION)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitNormalizationArgs {
    #[arg(long, default_value_t = geometry::DEFAULT_SAMPLE_SIZE)]
    pub samples: usize,
    #[arg(long, default_value_t = geometry::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn list<T>(s: &str, what: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let v = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(parse).collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::config(what, "empty list"));
    }
    Ok(v)
}

fn parse_f64(t: &str, what: &str) -> Result<f64> {
    t.parse().map_err(|_| Error::config(what, format!("`{t}` is not a number")))
}

fn scenarios(spec: &str) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for t in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if t == "all" {
            out.extend(Scenario::all());
        } else if t.ends_with(".json") || Path::new(t).is_file() {
            out.push(Scenario::from_json(&read(Path::new(t))?)?);
        } else {
            out.push(Scenario::by_name(t)?);
        }
    }
    if out.is_empty() {
        return Err(Error::config("scenario", "no scenario given"));
    }
    Ok(out)
}

/// Writes `hit_rates.csv` and `manifest.json` under `--out`.
pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let scenarios = scenarios(&a.scenario)?;
    let variants = list(&a.variant, "variant", |t| t.parse::<Variant>())?;
    let seeds = list(&a.seeds, "seeds", |t| t.parse::<u64>().map_err(|_| Error::config("seeds", format!("`{t}` is not a seed"))))?;
    let settings = match &a.settings {
        Some(p) => from_json_with_path::<SimSettings>(&read(p)?)?,
        None => SimSettings::default(),
    };
    settings.validate()?;
    let (rows, sweep) = match &a.sweep {
        Some(k) => {
            let kind: SweepKind = k.parse()?;
            let values = match &a.sweep_values {
                Some(v) => list(v, "sweep_values", |t| parse_f64(t, "sweep_values"))?,
                None => kind.default_values(),
            };
            let cells = robustness_sweep(kind, &values, &scenarios[0], &variants, &settings, &seeds)?;
            let rows: Vec<CsvRow> = cells.iter().map(|c| CsvRow::new(&c.report, Some((c.kind, c.value)))).collect();
            (rows, Some((kind, values)))
        }
        None => {
            let reports = run_grid(&scenarios, &variants, &settings, &seeds)?;
            (reports.iter().map(|r| CsvRow::new(r, None)).collect(), None)
        }
    };
    fs::create_dir_all(&a.out)?;
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    fs::write(a.out.join("hit_rates.csv"), &csv)?;
    let used: Vec<Scenario> = if sweep.is_some() { vec![scenarios[0].clone()] } else { scenarios };
    let manifest = SimManifest::new(&used, &variants, &seeds, &settings, sweep, rows.len(), &csv);
    write_json(&a.out.join("manifest.json"), &manifest)
}

#[derive(Serialize)]
struct EstimateManifest<'a> {
    study: &'a str,
    seed: u64,
    mcmc_seed: u64,
    respondents: usize,
    data_hash: &'a str,
}

/// Writes `models.json`, `report.json`, `posterior.jsonl` and `manifest.json` under `--out`.
pub fn estimate(a: &EstimateArgs) -> Result<()> {
    let svc = Service::open(&a.store_path, Arc::new(SystemClock))?;
    let id = match &a.study {
        Some(id) => id.clone(),
        None => {
            let ids = svc.study_ids();
            match ids.as_slice() {
                [one] => one.clone(),
                [] => return Err(Error::state("the store holds no study")),
                _ => return Err(Error::config("study", format!("choose one of {}", ids.join(", ")))),
            }
        }
    };
    let study = svc.study(&id)?;
    let (models, report) = study.finalize()?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("models.json"), &models)?;
    write_json(&a.out.join("report.json"), &report)?;
    let mut post = Vec::new();
    models.posterior.write_jsonl(&mut post)?;
    fs::write(a.out.join("posterior.jsonl"), post)?;
    write_json(
        &a.out.join("manifest.json"),
        &EstimateManifest {
            study: &id,
            seed: study.config.seed,
            mcmc_seed: models.posterior.config.seed,
            respondents: models.individual.len(),
            data_hash: &report.data_hash,
        },
    )
}

#[derive(Serialize)]
struct GroupSummary {
    group: usize,
    size: usize,
    centroid: [f64; 3],
    centroid_std: [f64; 3],
}

/// Writes `importances.csv`, `clusters.json`, `tradeoffs.csv`, `analysis.json` and one design
/// and mesh per group under `--out`.
pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let models: FinalModels = from_json_with_path(&read(&a.models)?)?;
    let levels = match &a.levels {
        Some(p) => from_json_with_path::<TradeoffLevels>(&read(p)?)?,
        None => TradeoffLevels::default(),
    };
    let ga = match &a.ga {
        Some(p) => from_json_with_path::<GaConfig>(&read(p)?)?,
        None => GaConfig::first_form(),
    };
    ga.validate("ga")?;
    let cfg = AnalysisConfig {
        k: a.k,
        ga,
        restarts: a.restarts,
        levels,
        seed: a.seed,
    };
    let report = analysis::analyze(&models, NormalizationStats::builtin(), &cfg)?;
    fs::create_dir_all(&a.out)?;

    let mut w = csv::Writer::from_path(a.out.join("importances.csv"))?;
    w.write_record(["respondent", "group", "form", "price", "mpg"])?;
    for (i, t) in report.importances.iter().enumerate() {
        w.write_record([
            i.to_string(),
            (report.clustering.assignments[i] + 1).to_string(),
            t.form.to_string(),
            t.price.to_string(),
            t.mpg.to_string(),
        ])?;
    }
    w.flush()?;

    let groups: Vec<GroupSummary> = (0..report.clustering.k)
        .map(|g| GroupSummary {
            group: g + 1,
            size: report.clustering.sizes[g],
            centroid: report.clustering.centroids_raw[g],
            centroid_std: report.clustering.centroids_std[g],
        })
        .collect();
    write_json(&a.out.join("clusters.json"), &groups)?;
    analysis::write_tradeoff_csv(&report, fs::File::create(a.out.join("tradeoffs.csv"))?)?;
    for (g, d) in report.group_designs.iter().enumerate() {
        write_json(&a.out.join(format!("group{}_design.json", g + 1)), d)?;
        fs::write(a.out.join(format!("group{}_mesh.json", g + 1)), tessellate(&d.design, a.resolution).to_json())?;
    }
    write_json(&a.out.join("analysis.json"), &serde_json::json!({ "config": cfg, "report": report }))
}

pub fn export_mesh(a: &ExportMeshArgs) -> Result<()> {
    let design: DesignVector = from_json_with_path(&read(&a.design)?)?;
    if a.resolution == 0 {
        return Err(Error::config("resolution", "must be at least 1"));
    }
    fs::write(&a.out, tessellate(&design, a.resolution).to_json())?;
    Ok(())
}

pub fn fit_normalization(a: &FitNormalizationArgs) -> Result<()> {
    let stats = geometry::fit_normalization(a.samples, a.seed)?;
    write_json(&a.out, &stats)
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let clock = Arc::new(SystemClock);
    let svc = match &a.store_path {
        Some(p) => Service::open(p, clock)?,
        None => Service::new(clock),
    }
    .with_seed(a.seed)
    .with_latency_budget(a.latency_budget_ms);
    if let Some(p) = &a.config {
        let cfg = StudyConfig::load(p)?;
        let st = svc.create_study(cfg)?;
        println!("study {}", st.id);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(http::serve(Arc::new(svc), a.port))?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Analyze(a) => analyze(a),
        Command::ExportMesh(a) => export_mesh(a),
        Command::FitNormalization(a) => fit_normalization(a),
    }
}
