//! Run configuration and the pipeline stages behind the command line.
//!
//! Every stage writes into its own directory under the output root and
//! finishes with a manifest of content hashes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::adlib::{
    assemble_dataset, dataset_stats, fetch_advertiser_list, fetch_reports, Fetcher, HttpFetcher, Mode,
    RateLimiter, ReplayFetcher, RetryPolicy, TargetingDataset,
};
use crate::analytics::{
    compute_spend_skew_points, coverage_correlation, fit_spend_vs_audience_skew, load_affiliations,
    render_top_spend_text, spend_distribution, top_spend_table, usage_shares, write_top_spend_csv, Group, SkewLookup,
};
use crate::audience::{
    build_uniform_audience, load_voter_records, size_mismatch, verify_disjoint, AudienceSpec, LoadOptions,
};
use crate::demographics::{Pair, Selector};
use crate::pages::{
    bias_coverage, compute_page_skew, load_domain_bias, load_interest_pages, page_skew_records,
    pruning_tradeoff_curve, rank_domain_prevalence,
};
use crate::reach::{batch_estimate, BatchOptions, EstimateMatrix, NoiseModel, ReachBackend, ReplayBackend, SyntheticBackend};
use crate::report::{emit_plots, AnalysisBundle, Manifest};
use crate::skew::{
    derive_tertile_thresholds, read_skew_records, skew_histogram, skew_table, write_skew_records, Histogram, Leaning,
    SkewTable, SkewThresholds, DEFAULT_MIN_COUNT,
};
use crate::synthworld::{export_voter_file, generate_population, true_skew, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Config,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct PipelineError {
    pub class: ErrorClass,
    pub message: String,
}

impl PipelineError {
    pub fn data(m: impl Into<String>) -> Self {
        PipelineError { class: ErrorClass::Data, message: m.into() }
    }
    pub fn config(m: impl Into<String>) -> Self {
        PipelineError { class: ErrorClass::Config, message: m.into() }
    }
    pub fn backend(m: impl Into<String>) -> Self {
        PipelineError { class: ErrorClass::Backend, message: m.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Data => 1,
            ErrorClass::Config => 2,
            ErrorClass::Backend => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// World definition (TOML or JSON); the built-in demo world when absent.
    pub world_config: Option<PathBuf>,
    /// Voter file; defaults to the one the `world` stage writes.
    pub voter_file: Option<PathBuf>,
    /// Ad-library replay directory.
    pub replay_dir: Option<PathBuf>,
    /// Reach counts for the replay estimator.
    pub estimates_replay: Option<PathBuf>,
    pub domain_bias: Option<PathBuf>,
    pub interest_pages: Option<PathBuf>,
    pub affiliations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudienceConfig {
    pub size: usize,
    /// Falls back to the run seed.
    pub seed: Option<u64>,
}

impl Default for AudienceConfig {
    fn default() -> Self {
        AudienceConfig { size: 2000, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub backend: BackendKind,
    pub noise: NoiseModel,
    pub min_count: u64,
    pub retries: u32,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { backend: BackendKind::Synthetic, noise: NoiseModel::default(), min_count: DEFAULT_MIN_COUNT, retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    /// `"midterms"` for the fixed cut points or `"derive"` for corpus tertiles.
    Named(String),
    Explicit { democratic_below: f64, republican_at_or_above: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewConfig {
    pub thresholds: ThresholdSetting,
    pub histogram_bin_width: f64,
}

impl Default for SkewConfig {
    fn default() -> Self {
        SkewConfig { thresholds: ThresholdSetting::Named("midterms".into()), histogram_bin_width: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageSkewConfig {
    pub drop_top_k: usize,
    pub max_k: usize,
}

impl Default for PageSkewConfig {
    fn default() -> Self {
        PageSkewConfig { drop_top_k: 1, max_k: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_delay_ms: u64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub endpoint: Option<String>,
    /// Collection days to request from an endpoint; a replay directory lists its own.
    pub dates: Vec<NaiveDate>,
    pub timeout_ms: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { min_delay_ms: 100, max_in_flight: 1, max_retries: 3, endpoint: None, dates: Vec::new(), timeout_ms: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub top_n: usize,
    pub political_criteria: Vec<String>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            top_n: 60,
            political_criteria: crate::analytics::DEFAULT_POLITICAL_CRITERIA.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub audiences: AudienceConfig,
    pub estimator: EstimatorConfig,
    pub skew: SkewConfig,
    pub pageskew: PageSkewConfig,
    pub ingest: IngestConfig,
    pub analyze: AnalyzeConfig,
    /// Directory relative paths are resolved against; the config file's own.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            seed: None,
            paths: PathsConfig::default(),
            audiences: AudienceConfig::default(),
            estimator: EstimatorConfig::default(),
            skew: SkewConfig::default(),
            pageskew: PageSkewConfig::default(),
            ingest: IngestConfig::default(),
            analyze: AnalyzeConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.output_dir = cfg.resolve(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| PipelineError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn stage_dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }

    pub fn audience_seed(&self) -> u64 {
        self.audiences.seed.or(self.seed).unwrap_or(crate::demo::DEMO_SEED)
    }

    pub fn thresholds_setting(&self) -> Result<Option<SkewThresholds>> {
        match &self.skew.thresholds {
            ThresholdSetting::Named(n) if n == "midterms" => Ok(Some(SkewThresholds::MIDTERMS_2022)),
            ThresholdSetting::Named(n) if n == "derive" => Ok(None),
            ThresholdSetting::Named(n) => Err(PipelineError::config(format!("skew.thresholds: unknown setting `{n}`"))),
            ThresholdSetting::Explicit { democratic_below, republican_at_or_above } => {
                SkewThresholds::new(*democratic_below, *republican_at_or_above)
                    .map(Some)
                    .map_err(|e| PipelineError::config(format!("skew.thresholds: {e}")))
            }
        }
    }

    /// Checks settings and every configured input path.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        for (name, path) in [
            ("paths.world_config", &p.world_config),
            ("paths.voter_file", &p.voter_file),
            ("paths.replay_dir", &p.replay_dir),
            ("paths.estimates_replay", &p.estimates_replay),
            ("paths.domain_bias", &p.domain_bias),
            ("paths.interest_pages", &p.interest_pages),
            ("paths.affiliations", &p.affiliations),
        ] {
            if let Some(path) = path {
                let full = self.resolve(path);
                if !full.exists() {
                    return Err(PipelineError::config(format!("{name}: {} does not exist", full.display())));
                }
            }
        }
        if self.audiences.size == 0 {
            return Err(PipelineError::config("audiences.size must be positive"));
        }
        if !(self.skew.histogram_bin_width > 0.0 && self.skew.histogram_bin_width <= 2.0) {
            return Err(PipelineError::config("skew.histogram_bin_width must be in (0, 2]"));
        }
        if self.analyze.top_n == 0 {
            return Err(PipelineError::config("analyze.top_n must be at least 1"));
        }
        self.thresholds_setting()?;
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| PipelineError::config(format!("output dir {}: {e}", self.output_dir.display())))?;
        Ok(())
    }

    /// Config as echoed into manifests: no output location, so runs into
    /// different directories stay comparable.
    fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        v
    }

    fn input_label(&self, path: &Path) -> String {
        if let Ok(rel) = path.strip_prefix(&self.output_dir) {
            return format!("$OUT/{}", rel.display());
        }
        if let Ok(rel) = path.strip_prefix(&self.base_dir) {
            return rel.display().to_string();
        }
        path.display().to_string()
    }

    fn finish(&self, command: &str, dir: &Path, inputs: &[PathBuf]) -> Result<()> {
        let mut manifest =
            Manifest::build(command, self.echo(), inputs, dir).map_err(|e| PipelineError::data(format!("manifest: {e}")))?;
        for (entry, raw) in manifest.inputs.iter_mut().zip(expand_inputs(inputs)) {
            entry.path = self.input_label(&raw);
        }
        manifest.write(dir).map_err(io_err(dir))?;
        Ok(())
    }
}

fn expand_inputs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = Vec::new();
            let mut stack = vec![p.clone()];
            while let Some(d) = stack.pop() {
                if let Ok(rd) = fs::read_dir(&d) {
                    let mut entries: Vec<_> = rd.flatten().collect();
                    entries.sort_by_key(|e| e.file_name());
                    for e in entries {
                        if e.path().is_dir() {
                            stack.push(e.path());
                        } else {
                            files.push(e.path());
                        }
                    }
                }
            }
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    out
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))
}

fn require(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::config(format!("{what} not found: {}", path.display())))
    }
}

// ---- world ----

pub fn world_config(cfg: &RunConfig) -> Result<WorldConfig> {
    let mut world = match &cfg.paths.world_config {
        Some(p) => {
            let path = require(cfg.resolve(p), "world config")?;
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?
        }
        None => crate::demo::demo_world(cfg.seed.unwrap_or(crate::demo::DEMO_SEED)),
    };
    if let Some(seed) = cfg.seed {
        world.rng_seed = seed;
    }
    world.validate().map_err(|e| PipelineError::config(format!("world config: {e}")))?;
    Ok(world)
}

pub fn run_world(cfg: &RunConfig) -> Result<()> {
    let world = world_config(cfg)?;
    let dir = cfg.stage_dir("world");
    fresh_dir(&dir)?;
    let pop = generate_population(&world).map_err(|e| PipelineError::config(e.to_string()))?;
    write_json(&dir.join("world_config.json"), &world)?;
    export_voter_file(&pop, &dir.join("voter_file.csv")).map_err(|e| PipelineError::data(e.to_string()))?;

    let mut w = csv::Writer::from_path(dir.join("true_skew.csv")).map_err(|e| PipelineError::data(e.to_string()))?;
    let header = ["interest_id", "interest_name", "pair", "value", "a_with", "a_total", "b_with", "b_total"];
    w.write_record(header).map_err(|e| PipelineError::data(e.to_string()))?;
    for (id, name) in pop.interest_ids.iter().zip(&pop.interest_names) {
        for pair in Pair::ALL {
            let t = true_skew(&pop, id, pair).map_err(|e| PipelineError::data(e.to_string()))?;
            w.write_record([
                id.clone(),
                name.clone(),
                pair.to_string(),
                t.value.map_or_else(String::new, |v| v.to_string()),
                t.a_with.to_string(),
                t.a_total.to_string(),
                t.b_with.to_string(),
                t.b_total.to_string(),
            ])
            .map_err(|e| PipelineError::data(e.to_string()))?;
        }
    }
    w.flush().map_err(io_err(&dir))?;
    let inputs: Vec<PathBuf> = cfg.paths.world_config.iter().map(|p| cfg.resolve(p)).collect();
    cfg.finish("world", &dir, &inputs)
}

// ---- audiences ----

pub fn run_audiences(cfg: &RunConfig) -> Result<Vec<AudienceSpec>> {
    let voter_file = match &cfg.paths.voter_file {
        Some(p) => cfg.resolve(p),
        None => cfg.stage_dir("world").join("voter_file.csv"),
    };
    let voter_file = require(voter_file, "voter file")?;
    let (records, report) = load_voter_records(&voter_file, &LoadOptions::default()).map_err(|e| PipelineError::data(e.to_string()))?;
    if !report.is_empty() {
        log::warn!("voter file: {} of {} rows rejected", report.rejected.len(), report.total_rows);
    }
    let dir = cfg.stage_dir("audiences");
    fresh_dir(&dir)?;
    let seed = cfg.audience_seed();
    let mut specs = Vec::new();
    for (i, sel) in Selector::STANDARD.iter().enumerate() {
        let spec = build_uniform_audience(&records, *sel, cfg.audiences.size, seed.wrapping_add(i as u64))
            .map_err(|e| PipelineError::data(e.to_string()))?;
        let path = dir.join(format!("{}.json", spec.label));
        fs::write(&path, spec.to_json().map_err(|e| PipelineError::data(e.to_string()))?).map_err(io_err(&path))?;
        specs.push(spec);
    }
    let mut w = csv::Writer::from_path(dir.join("audiences.csv")).map_err(|e| PipelineError::data(e.to_string()))?;
    let _ = w.write_record(["label", "seed", "requested_size", "size", "shortfall"]);
    for s in &specs {
        let _ = w.write_record([
            s.label.clone(),
            s.sample_seed.to_string(),
            s.requested_size.to_string(),
            s.len().to_string(),
            s.shortfall().to_string(),
        ]);
    }
    w.flush().map_err(io_err(&dir))?;
    for pair in Pair::ALL {
        let (a, b) = pair.selectors();
        let find = |sel: Selector| specs.iter().find(|s| s.label == sel.label());
        if let (Some(x), Some(y)) = (find(a), find(b)) {
            let overlap = verify_disjoint(x, y);
            if overlap > 0 {
                return Err(PipelineError::data(format!("audiences {} and {} share {overlap} members", x.label, y.label)));
            }
            size_mismatch(x, y);
        }
    }
    cfg.finish("audiences", &dir, &[voter_file])?;
    Ok(specs)
}

fn load_audiences(cfg: &RunConfig) -> Result<Vec<AudienceSpec>> {
    let dir = cfg.stage_dir("audiences");
    Selector::STANDARD
        .iter()
        .map(|sel| {
            let path = require(dir.join(format!("{}.json", sel.label())), "audience")?;
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            AudienceSpec::from_json(&text).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))
        })
        .collect()
}

// ---- estimate ----

fn interest_names(cfg: &RunConfig) -> HashMap<String, String> {
    let path = cfg.stage_dir("world").join("world_config.json");
    match read_json::<WorldConfig>(&path) {
        Ok(w) => w.interests.iter().map(|i| (i.interest_id.clone(), i.display_name().to_string())).collect(),
        Err(_) => HashMap::new(),
    }
}

pub fn run_estimate(cfg: &RunConfig) -> Result<EstimateMatrix> {
    let audiences = load_audiences(cfg)?;
    let mut inputs: Vec<PathBuf> =
        Selector::STANDARD.iter().map(|s| cfg.stage_dir("audiences").join(format!("{}.json", s.label()))).collect();
    let (backend, interests): (Box<dyn ReachBackend>, Vec<String>) = match cfg.estimator.backend {
        BackendKind::Synthetic => {
            let path = require(cfg.stage_dir("world").join("world_config.json"), "world config (run `world` first)")?;
            let world: WorldConfig = read_json(&path)?;
            inputs.push(path);
            let pop = generate_population(&world).map_err(|e| PipelineError::config(e.to_string()))?;
            let ids = pop.interest_ids.clone();
            (Box::new(SyntheticBackend::new(Arc::new(pop), cfg.estimator.noise)), ids)
        }
        BackendKind::Replay => {
            let raw = cfg.paths.estimates_replay.as_ref().ok_or_else(|| PipelineError::config("paths.estimates_replay is required for the replay backend"))?;
            let path = require(cfg.resolve(raw), "estimates replay")?;
            let matrix = EstimateMatrix::from_replay(&path).map_err(|e| PipelineError::data(e.to_string()))?;
            let backend = ReplayBackend::load(&path).map_err(|e| PipelineError::data(e.to_string()))?;
            inputs.push(path);
            (Box::new(backend), matrix.interests.clone())
        }
    };
    let dir = cfg.stage_dir("estimate");
    fresh_dir(&dir)?;
    // the checkpoint lives beside the stage output and is removed once the matrix is complete
    let state = cfg.output_dir.join(".state");
    fs::create_dir_all(&state).map_err(io_err(&state))?;
    let checkpoint = state.join("estimate_checkpoint.csv");
    let opts = BatchOptions { checkpoint: Some(checkpoint.clone()), retries: cfg.estimator.retries, progress: None };
    let matrix = batch_estimate(backend.as_ref(), &audiences, &interests, &opts).map_err(|e| {
        if e.is_retryable() {
            PipelineError::backend(format!("estimator: {e}"))
        } else {
            PipelineError::data(format!("estimator: {e}"))
        }
    })?;
    if matrix.error_count() > 0 {
        log::warn!("{} of {} cells failed", matrix.error_count(), matrix.cell_count());
    }
    let path = dir.join("estimates.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    matrix.write_replay(file).map_err(|e| PipelineError::data(e.to_string()))?;
    let _ = fs::remove_file(&checkpoint);
    cfg.finish("estimate", &dir, &inputs)?;
    Ok(matrix)
}

// ---- skew ----

fn load_matrix(cfg: &RunConfig) -> Result<EstimateMatrix> {
    let path = require(cfg.stage_dir("estimate").join("estimates.csv"), "estimates (run `estimate` first)")?;
    EstimateMatrix::from_replay(&path).map_err(|e| PipelineError::data(e.to_string()))
}

pub fn run_skew(cfg: &RunConfig) -> Result<SkewTable> {
    let matrix = load_matrix(cfg)?;
    let names = interest_names(cfg);
    let table = skew_table(&matrix, &Pair::ALL, &names, cfg.estimator.min_count).map_err(|e| PipelineError::data(e.to_string()))?;
    let dir = cfg.stage_dir("skew");
    fresh_dir(&dir)?;
    let path = dir.join("skew_table.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    table.write_csv(file).map_err(|e| PipelineError::data(e.to_string()))?;
    let thresholds = resolve_thresholds(cfg, &table)?;
    write_json(&dir.join("thresholds.json"), &thresholds)?;
    cfg.finish("skew", &dir, &[cfg.stage_dir("estimate").join("estimates.csv")])?;
    Ok(table)
}

fn resolve_thresholds(cfg: &RunConfig, table: &SkewTable) -> Result<SkewThresholds> {
    match cfg.thresholds_setting()? {
        Some(t) => Ok(t),
        None => {
            let d = derive_tertile_thresholds(table.scores(Pair::RD).map(|r| &r.score))
                .map_err(|e| PipelineError::data(format!("deriving tertiles: {e}")))?;
            d.thresholds().map_err(|e| PipelineError::data(format!("deriving tertiles: {e}")))
        }
    }
}

fn load_skew_table(cfg: &RunConfig) -> Result<SkewTable> {
    let path = require(cfg.stage_dir("skew").join("skew_table.csv"), "skew table (run `skew` first)")?;
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let records = read_skew_records(file).map_err(|e| PipelineError::data(e.to_string()))?;
    SkewTable::from_records(&records, cfg.estimator.min_count).map_err(|e| PipelineError::data(e.to_string()))
}

// ---- pageskew ----

pub fn run_pageskew(cfg: &RunConfig) -> Result<()> {
    let need = |p: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
        let raw = p.as_ref().ok_or_else(|| PipelineError::config(format!("paths.{name} is required for pageskew")))?;
        require(cfg.resolve(raw), name)
    };
    let pages_path = need(&cfg.paths.interest_pages, "interest_pages")?;
    let bias_path = need(&cfg.paths.domain_bias, "domain_bias")?;
    let (records, pages_report) = load_interest_pages(&pages_path).map_err(|e| PipelineError::data(e.to_string()))?;
    let (table, bias_report) = load_domain_bias(&bias_path).map_err(|e| PipelineError::data(e.to_string()))?;
    if !bias_report.rejected.is_empty() {
        log::warn!("domain bias: {} rows rejected", bias_report.rejected.len());
    }
    let prevalence = rank_domain_prevalence(&records).map_err(|e| PipelineError::data(e.to_string()))?;
    let results: Vec<_> = records.iter().map(|r| compute_page_skew(r, &table, cfg.pageskew.drop_top_k, &prevalence)).collect();

    let dir = cfg.stage_dir("pageskew");
    fresh_dir(&dir)?;
    let names: HashMap<String, String> =
        records.iter().map(|r| (r.interest_id.clone(), r.name.clone().unwrap_or_else(|| r.interest_id.clone()))).collect();
    let path = dir.join("page_skew.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_skew_records(&page_skew_records(&results, &names), file).map_err(|e| PipelineError::data(e.to_string()))?;

    let mut w = csv::Writer::from_path(dir.join("domain_prevalence.csv")).map_err(|e| PipelineError::data(e.to_string()))?;
    let _ = w.write_record(["rank", "domain", "fraction", "bias"]);
    for (i, p) in prevalence.iter().enumerate() {
        let _ = w.write_record([
            (i + 1).to_string(),
            p.domain.clone(),
            p.fraction.to_string(),
            table.get(&p.domain).map_or_else(String::new, |b| b.to_string()),
        ]);
    }
    w.flush().map_err(io_err(&dir))?;

    let mut w = csv::Writer::from_path(dir.join("dropped_urls.csv")).map_err(|e| PipelineError::data(e.to_string()))?;
    let _ = w.write_record(["line", "url", "reason"]);
    for (line, url, reason) in &pages_report.dropped_urls {
        let _ = w.write_record([line.to_string(), url.clone(), reason.clone()]);
    }
    w.flush().map_err(io_err(&dir))?;

    write_json(&dir.join("bias_coverage.json"), &bias_coverage(&records, &table))?;

    let mut inputs = vec![pages_path, bias_path];
    let skew_path = cfg.stage_dir("skew").join("skew_table.csv");
    if skew_path.exists() {
        let skews = load_skew_table(cfg)?;
        let voter: HashMap<String, f64> =
            skews.scores(Pair::RD).filter_map(|r| Some((r.interest_id.clone(), r.score.usable()?))).collect();
        let curve = pruning_tradeoff_curve(&records, &table, &voter, 0..=cfg.pageskew.max_k)
            .map_err(|e| PipelineError::data(e.to_string()))?;
        write_json(&dir.join("tradeoff.json"), &curve)?;
        inputs.push(skew_path);
    }
    cfg.finish("pageskew", &dir, &inputs)
}

// ---- ingest ----

pub fn run_ingest(cfg: &RunConfig) -> Result<TargetingDataset> {
    let ic = &cfg.ingest;
    let limiter = RateLimiter::new(Duration::from_millis(ic.min_delay_ms), ic.max_in_flight);
    let policy = RetryPolicy { max_retries: ic.max_retries, ..RetryPolicy::default() };
    let (fetcher, dates, inputs): (Box<dyn Fetcher>, Vec<NaiveDate>, Vec<PathBuf>) = match (&ic.endpoint, &cfg.paths.replay_dir) {
        (Some(url), _) => {
            if ic.dates.is_empty() {
                return Err(PipelineError::config("ingest.dates must list collection days when an endpoint is used"));
            }
            (Box::new(HttpFetcher::new(url, Duration::from_millis(ic.timeout_ms))), ic.dates.clone(), Vec::new())
        }
        (None, Some(dir)) => {
            let dir = require(cfg.resolve(dir), "replay directory")?;
            let replay = ReplayFetcher::new(&dir);
            let mut dates = replay.list_dates().map_err(io_err(&dir))?;
            if !ic.dates.is_empty() {
                dates.retain(|d| ic.dates.contains(d));
            }
            (Box::new(replay), dates, vec![dir])
        }
        (None, None) => return Err(PipelineError::config("ingest needs paths.replay_dir or ingest.endpoint")),
    };

    let mut requests = Vec::new();
    let mut list_failures = 0;
    for &date in &dates {
        match fetch_advertiser_list(fetcher.as_ref(), date, &limiter, &policy) {
            Ok(list) => requests.extend(list.ids.into_iter().map(|id| (id, date))),
            Err(e) => {
                log::warn!("advertiser list for {date}: {e}");
                list_failures += 1;
            }
        }
    }
    if !dates.is_empty() && list_failures == dates.len() {
        return Err(PipelineError::backend("every advertiser list request failed"));
    }
    let records = fetch_reports(fetcher.as_ref(), &requests, &limiter, &policy);
    let (dataset, parse_errors) = assemble_dataset(&records);
    if !records.is_empty() && dataset.fetch.failed == records.len() {
        return Err(PipelineError::backend("every report request failed"));
    }

    let dir = cfg.stage_dir("ingest");
    fresh_dir(&dir)?;
    write_json(&dir.join("dataset.json"), &dataset)?;
    write_json(&dir.join("dataset_stats.json"), &dataset_stats(&dataset))?;
    let path = dir.join("criterion_spend.csv");
    dataset.write_criterion_spends(fs::File::create(&path).map_err(io_err(&path))?).map_err(|e| PipelineError::data(e.to_string()))?;
    let mut w = csv::Writer::from_path(dir.join("fetch_log.csv")).map_err(|e| PipelineError::data(e.to_string()))?;
    let _ = w.write_record(["advertiser_id", "date", "status", "retries", "detail"]);
    for r in &records {
        let (status, detail) = match &r.outcome {
            crate::adlib::FetchOutcome::Payload { .. } => ("payload", String::new()),
            crate::adlib::FetchOutcome::MissingData => ("missing", String::new()),
            crate::adlib::FetchOutcome::Failed { reason } => ("failed", reason.clone()),
        };
        let _ = w.write_record([r.advertiser_id.clone(), r.date.to_string(), status.into(), r.retries.to_string(), detail]);
    }
    for (adv, date, e) in &parse_errors {
        let _ = w.write_record([adv.clone(), date.to_string(), "parse_error".into(), "0".into(), e.to_string()]);
    }
    w.flush().map_err(io_err(&dir))?;
    cfg.finish("ingest", &dir, &inputs)?;
    Ok(dataset)
}

// ---- analyze ----

pub fn run_analyze(cfg: &RunConfig) -> Result<AnalysisBundle> {
    let skews = load_skew_table(cfg)?;
    let matrix = load_matrix(cfg)?;
    let thresholds = resolve_thresholds(cfg, &skews)?;
    let lookup = SkewLookup::new(&skews);
    let mut bundle = AnalysisBundle::default();
    let mut inputs = vec![cfg.stage_dir("skew").join("skew_table.csv"), cfg.stage_dir("estimate").join("estimates.csv")];

    let hist = skew_histogram(skews.rows.iter().map(|r| &r.score), cfg.skew.histogram_bin_width)
        .map_err(|e| PipelineError::config(e.to_string()))?;
    bundle.skew_histograms = hist.into_iter().map(|(p, h)| (p.to_string(), h)).collect();
    let page_path = cfg.stage_dir("pageskew").join("page_skew.csv");
    if page_path.exists() {
        let file = fs::File::open(&page_path).map_err(io_err(&page_path))?;
        let recs = read_skew_records(file).map_err(|e| PipelineError::data(e.to_string()))?;
        let mut h = Histogram::empty(cfg.skew.histogram_bin_width);
        for r in &recs {
            h.add(r.value);
        }
        bundle.skew_histograms.insert(crate::pages::PAGE_PAIR_LABEL.to_string(), h);
        let tradeoff = cfg.stage_dir("pageskew").join("tradeoff.json");
        if tradeoff.exists() {
            bundle.tradeoff = read_json(&tradeoff)?;
        }
        inputs.push(page_path);
    }
    for pair in Pair::ALL {
        match coverage_correlation(&matrix, pair) {
            Ok(c) => bundle.coverage.push(c),
            Err(e) => log::warn!("coverage {pair}: {e}"),
        }
    }

    let dir = cfg.stage_dir("analyze");
    let dataset_path = cfg.stage_dir("ingest").join("dataset.json");
    if dataset_path.exists() {
        let dataset: TargetingDataset = read_json(&dataset_path)?;
        inputs.push(dataset_path);
        bundle.dataset_stats = Some(dataset_stats(&dataset));
        bundle.top_spend = top_spend_table(&dataset, &lookup, cfg.analyze.top_n, &thresholds, &cfg.analyze.political_criteria);
        if let Some(raw) = &cfg.paths.affiliations {
            let path = require(cfg.resolve(raw), "affiliations")?;
            let (aff, report) = load_affiliations(&path).map_err(|e| PipelineError::data(e.to_string()))?;
            if !report.rejected.is_empty() {
                log::warn!("affiliations: {} rows rejected", report.rejected.len());
            }
            inputs.push(path);
            bundle.usage = Some(usage_shares(&dataset, &aff, &lookup, &thresholds).map_err(|e| PipelineError::data(e.to_string()))?);
            for mode in Mode::ALL {
                for group in [Group::Conservatives, Group::Progressives] {
                    for leaning in [Leaning::RepublicanSkew, Leaning::DemocraticSkew] {
                        match spend_distribution(&dataset, &aff, group, mode, Some((leaning, &lookup, &thresholds))) {
                            Ok(d) => bundle.spend_cdfs.push(d),
                            Err(e) => log::info!("spend distribution {group}/{}: {e}", leaning.as_str()),
                        }
                    }
                }
                let points = compute_spend_skew_points(&dataset, &aff, &lookup, mode);
                match fit_spend_vs_audience_skew(&points) {
                    Ok(f) => {
                        bundle.fits.insert(mode, f);
                    }
                    Err(e) => {
                        log::warn!("fit {mode}: {e}");
                        bundle.fit_failures.insert(mode, e.to_string());
                    }
                }
                bundle.spend_points.insert(mode, points);
            }
        }
    }

    fresh_dir(&dir)?;
    write_json(&dir.join("bundle.json"), &bundle)?;
    write_json(&dir.join("thresholds.json"), &thresholds)?;
    if !bundle.top_spend.is_empty() {
        let path = dir.join("top_spend.csv");
        write_top_spend_csv(&bundle.top_spend, fs::File::create(&path).map_err(io_err(&path))?).map_err(|e| PipelineError::data(e.to_string()))?;
        let path = dir.join("top_spend.txt");
        fs::write(&path, render_top_spend_text(&bundle.top_spend)).map_err(io_err(&path))?;
    }
    if let Some(usage) = &bundle.usage {
        let mut w = csv::Writer::from_path(dir.join("usage_shares.csv")).map_err(|e| PipelineError::data(e.to_string()))?;
        let _ = w.write_record(["group", "mode", "leaning", "count", "fraction"]);
        for (group, u) in &usage.groups {
            for mode in Mode::ALL {
                for leaning in Leaning::DEFINED {
                    let _ = w.write_record([
                        group.to_string(),
                        mode.to_string(),
                        leaning.as_str().to_string(),
                        u.count(mode, leaning).to_string(),
                        format!("{:.4}", u.fraction(mode, leaning)),
                    ]);
                }
            }
            let _ = w.write_record([group.to_string(), String::new(), "unavailable".into(), u.unavailable.to_string(), String::new()]);
        }
        w.flush().map_err(io_err(&dir))?;
    }
    let fits: BTreeMap<String, serde_json::Value> = Mode::ALL
        .iter()
        .map(|m| {
            let v = match (bundle.fits.get(m), bundle.fit_failures.get(m)) {
                (Some(f), _) => serde_json::to_value(f).unwrap_or_default(),
                (None, Some(e)) => serde_json::json!({ "error": e }),
                _ => serde_json::Value::Null,
            };
            (m.to_string(), v)
        })
        .collect();
    write_json(&dir.join("fits.json"), &fits)?;
    cfg.finish("analyze", &dir, &inputs)?;
    Ok(bundle)
}

// ---- report ----

pub fn run_report(cfg: &RunConfig) -> Result<crate::report::EmitReport> {
    let bundle_path = require(cfg.stage_dir("analyze").join("bundle.json"), "analysis bundle (run `analyze` first)")?;
    let bundle: AnalysisBundle = read_json(&bundle_path)?;
    let dir = cfg.stage_dir("report");
    fresh_dir(&dir)?;
    let report = emit_plots(&bundle, &dir).map_err(io_err(&dir))?;
    let mut summary = String::new();
    for p in &report.written {
        summary += &format!("wrote {}\n", p.file_name().and_then(|n| n.to_str()).unwrap_or_default());
    }
    for (stem, why) in &report.skipped {
        summary += &format!("skipped {stem}: {why}\n");
    }
    if !bundle.top_spend.is_empty() {
        fs::write(dir.join("top_spend.txt"), render_top_spend_text(&bundle.top_spend)).map_err(io_err(&dir))?;
    }
    fs::write(dir.join("plots.txt"), summary).map_err(io_err(&dir))?;
    cfg.finish("report", &dir, &[bundle_path])?;
    Ok(report)
}

// ---- all ----

pub fn run_all(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    run_world(cfg)?;
    run_audiences(cfg)?;
    run_estimate(cfg)?;
    run_skew(cfg)?;
    if cfg.paths.interest_pages.is_some() && cfg.paths.domain_bias.is_some() {
        run_pageskew(cfg)?;
    }
    if cfg.paths.replay_dir.is_some() || cfg.ingest.endpoint.is_some() {
        run_ingest(cfg)?;
    }
    run_analyze(cfg)?;
    run_report(cfg)?;
    let state = cfg.output_dir.join(".state");
    if state.exists() {
        let _ = fs::remove_dir_all(&state);
    }
    let inputs: Vec<PathBuf> = [
        &cfg.paths.world_config,
        &cfg.paths.replay_dir,
        &cfg.paths.domain_bias,
        &cfg.paths.interest_pages,
        &cfg.paths.affiliations,
    ]
    .into_iter()
    .flatten()
    .map(|p| cfg.resolve(p))
    .collect();
    cfg.finish("all", &cfg.output_dir, &inputs)
}
