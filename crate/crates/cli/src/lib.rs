//! Subcommand implementations for the `coachrank` binary.
//!
//! Each `cmd_*` function does the work of one subcommand and returns a
//! summary; `main.rs` only parses arguments, prints and maps exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use coachrank::experiments::{
    generate_synthetic, sensitivity_run, ExperimentError, Perturbation, SensitivityReport,
    SyntheticSpec,
};
use coachrank::ingest::{
    build_season_dataset, parse_coaches, read_games, read_to_string, seasons_of, write_coaches_csv,
    write_games_csv, AliasTable, CoachAssignment, GameRecord, IngestError, SeasonDataset,
};
use coachrank::model::ModelConfig;
use coachrank::network::{
    build_network, graphml_string, CentralityConfig, DEFAULT_EPSILON, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use coachrank::optimize::{derive_seed, FitResult, PowellConfig};
use coachrank::pipeline::{centrality_of, run_season, PipelineConfig, PipelineError};
use coachrank::rank::{
    career_csv, career_values, CareerRecord, RankEntry, DEFAULT_K, DEFAULT_MIN_YEARS,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_FATAL: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    /// Every error that reaches the top level is fatal.
    pub fn exit_code(&self) -> i32 {
        EXIT_FATAL
    }
}

fn io_error(path: &Path, err: impl ToString) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    body.push('\n');
    write_file(path, body)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllSeasons {
    All,
}

/// `"all"`, `[1975, 1976]` or `{"from": 1975, "to": 1980}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeasonSelection {
    All(AllSeasons),
    List(Vec<i32>),
    Range { from: i32, to: i32 },
}

impl Default for SeasonSelection {
    fn default() -> Self {
        SeasonSelection::All(AllSeasons::All)
    }
}

impl SeasonSelection {
    /// Selected seasons that have games, ascending.
    pub fn resolve(&self, available: &[i32]) -> Vec<i32> {
        let keep = |s: &i32| match self {
            SeasonSelection::All(_) => true,
            SeasonSelection::List(list) => list.contains(s),
            SeasonSelection::Range { from, to } => (*from..=*to).contains(s),
        };
        available.iter().copied().filter(keep).collect()
    }

    fn is_empty(&self) -> bool {
        match self {
            SeasonSelection::All(_) => false,
            SeasonSelection::List(list) => list.is_empty(),
            SeasonSelection::Range { from, to } => from > to,
        }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_min_years() -> usize {
    DEFAULT_MIN_YEARS
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

/// Run configuration. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub games: PathBuf,
    pub coaches: PathBuf,
    #[serde(default)]
    pub aliases: Option<PathBuf>,
    #[serde(default)]
    pub seasons: SeasonSelection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: PowellConfig,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_min_years")]
    pub min_years: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub rescale_centrality: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut config: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.games);
        resolve(&mut config.coaches);
        if let Some(a) = config.aliases.as_mut() {
            resolve(a);
        }
        resolve(&mut config.output_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.seasons.is_empty() {
            return bad("no seasons selected");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a finite non-negative number");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        self.optimizer
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Pipeline settings for one season; the optimizer seed is derived from
    /// the run seed and the season.
    pub fn pipeline(&self, seed: u64, season: i32) -> PipelineConfig {
        PipelineConfig {
            model: self.model,
            optimizer: PowellConfig {
                seed: derive_seed(seed, season as u64),
                ..self.optimizer
            },
            centrality: CentralityConfig {
                epsilon: self.epsilon,
                tol: DEFAULT_TOL,
                max_iter: DEFAULT_MAX_ITER,
            },
            rescale_centrality: self.rescale_centrality,
        }
    }
}

/// Parsed and alias-resolved inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub games: Vec<GameRecord>,
    pub coaches: Vec<CoachAssignment>,
}

impl Inputs {
    pub fn season(&self, season: i32) -> Result<SeasonDataset, IngestError> {
        build_season_dataset(&self.games, &self.coaches, season)
    }
}

fn load_aliases(config: &RunConfig) -> Result<AliasTable, IngestError> {
    match &config.aliases {
        Some(path) => AliasTable::load(path),
        None => Ok(AliasTable::new()),
    }
}

/// Loads every input, failing on the first file with any bad row.
pub fn load_inputs(config: &RunConfig) -> Result<Inputs, CliError> {
    let aliases = load_aliases(config)?;
    let report = read_games(&config.games, &aliases)?;
    if !report.errors.is_empty() {
        return Err(IngestError::Rows(report.errors).into());
    }
    let coaches = parse_coaches(&config.coaches, &aliases)?;
    Ok(Inputs {
        games: report.games,
        coaches,
    })
}

/// One problem found while validating inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: String,
    pub line: Option<u64>,
    pub message: String,
}

impl From<&IngestError> for Issue {
    fn from(err: &IngestError) -> Self {
        let (kind, line) = match err {
            IngestError::MissingFile(_) => ("MissingFile", None),
            IngestError::MalformedRow { line, .. } => ("MalformedRow", Some(*line)),
            IngestError::TieGame { line } => ("TieGame", Some(*line)),
            IngestError::DuplicateAssignment { .. } => ("DuplicateAssignment", None),
            IngestError::AliasChain { .. } => ("AliasChain", None),
            IngestError::EmptySeason(_) => ("EmptySeason", None),
            IngestError::Rows(_) => ("Rows", None),
            IngestError::Io { .. } => ("Io", None),
        };
        Issue {
            kind: kind.to_string(),
            line,
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonCoverage {
    pub season: i32,
    pub games: usize,
    pub teams: usize,
    pub coached_teams: usize,
    /// Teams without a coach; they are fitted with a fixed coach skill.
    pub unmatched_teams: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub seasons: Vec<SeasonCoverage>,
}

impl ValidationReport {
    pub fn exit_code(&self) -> i32 {
        if self.errors.is_empty() {
            EXIT_OK
        } else {
            EXIT_FATAL
        }
    }
}

/// Parses every input and reports all row errors plus per-season coverage.
pub fn cmd_validate(config: &RunConfig) -> ValidationReport {
    let mut errors: Vec<Issue> = Vec::new();
    let mut push = |err: IngestError| errors.extend(err.into_list().iter().map(Issue::from));
    let aliases = match load_aliases(config) {
        Ok(a) => a,
        Err(err) => {
            push(err);
            AliasTable::new()
        }
    };
    let games = match read_games(&config.games, &aliases) {
        Ok(report) => {
            for err in report.errors {
                push(err);
            }
            report.games
        }
        Err(err) => {
            push(err);
            Vec::new()
        }
    };
    let coaches = parse_coaches(&config.coaches, &aliases).unwrap_or_else(|err| {
        push(err);
        Vec::new()
    });
    let seasons = config
        .seasons
        .resolve(&seasons_of(&games))
        .into_iter()
        .filter_map(|season| build_season_dataset(&games, &coaches, season).ok())
        .map(|ds| {
            let teams = ds.teams().len();
            SeasonCoverage {
                season: ds.season,
                games: ds.games.len(),
                teams,
                coached_teams: teams - ds.unmatched_teams.len(),
                unmatched_teams: ds.unmatched_teams,
            }
        })
        .collect();
    ValidationReport { errors, seasons }
}

/// Contents of `season_<year>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonOutput {
    pub season: i32,
    pub fit: FitResult,
    pub top_k: Vec<RankEntry>,
    pub tie_broken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonFailure {
    pub season: i32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub seasons: Vec<i32>,
    pub failures: Vec<SeasonFailure>,
    pub career: Vec<CareerRecord>,
}

impl RankSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn create_output_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn selected_datasets(config: &RunConfig, inputs: &Inputs) -> Result<Vec<SeasonDataset>, CliError> {
    let seasons = config.seasons.resolve(&seasons_of(&inputs.games));
    if seasons.is_empty() {
        return Err(CliError::Config("no selected season has games".into()));
    }
    Ok(seasons
        .into_iter()
        .map(|s| inputs.season(s))
        .collect::<Result<_, _>>()?)
}

/// Fits every selected season, writes per-season outputs, the failure
/// manifest and the career table. `jobs = 0` uses one worker per core.
pub fn cmd_rank(config: &RunConfig, seed: u64, jobs: usize) -> Result<RankSummary, CliError> {
    let inputs = load_inputs(config)?;
    let datasets = selected_datasets(config, &inputs)?;
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<_, PipelineError>> = pool.install(|| {
        use rayon::prelude::*;
        datasets
            .par_iter()
            .map(|ds| run_season(ds, &config.pipeline(seed, ds.season)))
            .collect()
    });

    let out = &config.output_dir;
    create_output_dir(out)?;
    let mut rankings = Vec::new();
    let mut seasons = Vec::new();
    let mut failures = Vec::new();
    for (ds, result) in datasets.iter().zip(results) {
        let result = match result {
            Ok(r) => r,
            Err(err) => {
                failures.push(SeasonFailure {
                    season: ds.season,
                    error: err.to_string(),
                });
                continue;
            }
        };
        let year = result.season;
        let output = SeasonOutput {
            season: year,
            fit: result.fit.clone(),
            top_k: result.ranking.top(config.k).to_vec(),
            tie_broken: top_k_tie(&result.ranking.entries, config.k),
        };
        write_json(&out.join(format!("season_{year}.json")), &output)?;
        write_file(
            &out.join(format!("centrality_{year}.csv")),
            result.centrality.to_csv(),
        )?;
        let graphml =
            graphml_string(&result.network, &result.centrality).map_err(|e| io_error(out, e))?;
        write_file(&out.join(format!("network_{year}.graphml")), graphml)?;
        seasons.push(year);
        rankings.push(result.ranking);
    }
    // Careers only count seasons that produced a ranking.
    let assignments: Vec<CoachAssignment> = inputs
        .coaches
        .iter()
        .filter(|a| seasons.contains(&a.season))
        .cloned()
        .collect();
    let career = career_values(&rankings, &assignments, config.k, config.min_years);
    write_file(&out.join("career.csv"), career_csv(&career))?;
    write_json(&out.join("career.json"), &career)?;
    write_json(&out.join("failures.json"), &failures)?;
    Ok(RankSummary {
        seasons,
        failures,
        career,
    })
}

fn top_k_tie(entries: &[RankEntry], k: usize) -> bool {
    let considered = k.saturating_add(1).min(entries.len());
    entries[..considered]
        .windows(2)
        .any(|w| w[0].skill == w[1].skill)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralitySummary {
    pub seasons: Vec<i32>,
    pub failures: Vec<SeasonFailure>,
}

impl CentralitySummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

/// Stops after centrality: writes `centrality_<year>.csv`,
/// `network_<year>.graphml` and `failures.json`.
pub fn cmd_centrality(config: &RunConfig) -> Result<CentralitySummary, CliError> {
    let inputs = load_inputs(config)?;
    let datasets = selected_datasets(config, &inputs)?;
    let out = &config.output_dir;
    create_output_dir(out)?;
    let mut seasons = Vec::new();
    let mut failures = Vec::new();
    for ds in &datasets {
        let network = build_network(ds);
        let pipeline = config.pipeline(0, ds.season);
        match centrality_of(&network, &pipeline.centrality) {
            Ok(c) => {
                write_file(
                    &out.join(format!("centrality_{}.csv", ds.season)),
                    c.to_csv(),
                )?;
                let graphml = graphml_string(&network, &c).map_err(|e| io_error(out, e))?;
                write_file(&out.join(format!("network_{}.graphml", ds.season)), graphml)?;
                seasons.push(ds.season);
            }
            Err(err) => failures.push(SeasonFailure {
                season: ds.season,
                error: err.to_string(),
            }),
        }
    }
    write_json(&out.join("failures.json"), &failures)?;
    Ok(CentralitySummary { seasons, failures })
}

/// One entry of a perturbation file. Without `focus_coach` the baseline
/// top-ranked coach of the target season is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRequest {
    #[serde(flatten)]
    pub perturbation: Perturbation,
    #[serde(default)]
    pub focus_coach: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PerturbationFile {
    One(PerturbationRequest),
    Many(Vec<PerturbationRequest>),
}

pub fn read_perturbations(path: &Path) -> Result<Vec<PerturbationRequest>, CliError> {
    Ok(match read_json::<PerturbationFile>(path)? {
        PerturbationFile::One(p) => vec![p],
        PerturbationFile::Many(list) => list,
    })
}

/// Runs each requested perturbation against its season and writes the
/// reports to `out` (default `<output_dir>/sensitivity.json`).
pub fn cmd_sensitivity(
    config: &RunConfig,
    perturbations: &Path,
    out: Option<&Path>,
    seed: u64,
) -> Result<Vec<SensitivityReport>, CliError> {
    let requests = read_perturbations(perturbations)?;
    let inputs = load_inputs(config)?;
    let mut datasets: BTreeMap<i32, SeasonDataset> = BTreeMap::new();
    let mut reports = Vec::new();
    for req in &requests {
        let target = &req.perturbation.target;
        let season = target.season;
        if !datasets.contains_key(&season) {
            let ds = inputs
                .season(season)
                .map_err(|_| ExperimentError::TargetNotFound(target.clone()))?;
            datasets.insert(season, ds);
        }
        let ds = &datasets[&season];
        let pipeline = config.pipeline(seed, season);
        let focus = match &req.focus_coach {
            Some(c) => c.clone(),
            None => {
                let baseline = run_season(ds, &pipeline).map_err(ExperimentError::from)?;
                baseline
                    .ranking
                    .entries
                    .first()
                    .map(|e| e.coach.clone())
                    .ok_or_else(|| CliError::Config(format!("no coach fitted in {season}")))?
            }
        };
        reports.push(sensitivity_run(ds, &req.perturbation, &focus, &pipeline)?);
    }
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            create_output_dir(&config.output_dir)?;
            config.output_dir.join("sensitivity.json")
        }
    };
    write_json(&path, &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub games: usize,
    pub teams: usize,
    pub season: i32,
}

/// Generates a synthetic season and writes `games.csv`, `coaches.csv` and
/// `truth.json` into `out_dir`. `seed` overrides the spec's own seed.
pub fn cmd_synth(spec: &Path, out_dir: &Path, seed: Option<u64>) -> Result<SynthSummary, CliError> {
    let mut spec: SyntheticSpec = read_json(spec)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (dataset, truth) = generate_synthetic(&spec)?;
    create_output_dir(out_dir)?;
    let mut games = Vec::new();
    write_games_csv(&dataset.games, &mut games).map_err(|e| io_error(out_dir, e))?;
    write_file(&out_dir.join("games.csv"), games)?;
    let mut coaches = Vec::new();
    write_coaches_csv(&dataset.coaches, &mut coaches).map_err(|e| io_error(out_dir, e))?;
    write_file(&out_dir.join("coaches.csv"), coaches)?;
    write_json(&out_dir.join("truth.json"), &truth)?;
    Ok(SynthSummary {
        games: dataset.games.len(),
        teams: dataset.teams().len(),
        season: dataset.season,
    })
}
