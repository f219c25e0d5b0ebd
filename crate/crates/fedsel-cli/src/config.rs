//! TOML run configuration: dataset, delay model, selector list, and engine
//! settings. Unknown keys are rejected so typos fail loudly instead of
//! silently falling back to defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub delays: DelayBlock,
    pub selectors: Vec<SelectorBlock>,
    pub engine: EngineBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Quadratic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(rename = "type")]
    pub kind: DatasetKind,
    /// Number of clients.
    pub m: usize,
    /// Training points per client; the test split draws the same amount.
    pub n: usize,
    /// Feature dimension.
    pub d: usize,
    pub eig_range: [f64; 2],
    pub noise_std: f64,
    /// Minibatch size for live dissimilarity estimation; omit to compute
    /// exact statistics once.
    pub covariance_batch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    Synthetic,
    Trace,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayBlock {
    #[serde(rename = "type")]
    pub kind: DelayKind,
    pub model_size_bytes: Option<f64>,
    pub link_speed_range: Option<[f64; 2]>,
    pub compute_range: Option<[f64; 2]>,
    /// Trace CSV path, relative to the config file's directory.
    pub path: Option<PathBuf>,
    /// Multiplicative jitter strength for trace delays; 0 freezes delays at
    /// their means. Synthetic delays are constant per client and reject this.
    pub lognormal_sigma: Option<f64>,
}

pub const DEFAULT_TRACE_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Submodular,
    Sampling,
    Random,
    PowerOfChoice,
    Divfl,
    Flanp,
}

impl SelectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectorKind::Submodular => "submodular",
            SelectorKind::Sampling => "sampling",
            SelectorKind::Random => "random",
            SelectorKind::PowerOfChoice => "power_of_choice",
            SelectorKind::Divfl => "divfl",
            SelectorKind::Flanp => "flanp",
        }
    }

    fn takes_k(&self) -> bool {
        matches!(
            self,
            SelectorKind::Sampling
                | SelectorKind::Random
                | SelectorKind::PowerOfChoice
                | SelectorKind::Divfl
        )
    }

    fn takes_mode(&self) -> bool {
        matches!(self, SelectorKind::Submodular | SelectorKind::Sampling)
    }

    fn takes_reuse(&self) -> bool {
        matches!(self, SelectorKind::Submodular | SelectorKind::Sampling)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorBlock {
    #[serde(rename = "type")]
    pub kind: SelectorKind,
    /// Output file prefix; defaults to the selector type.
    pub label: Option<String>,
    pub k: Option<usize>,
    /// submodular: "auto" | "minnorm" | "exhaustive"; sampling: "exact" | "k1".
    pub mode: Option<String>,
    /// Freeze the first round's set (submodular) or distribution (sampling).
    pub reuse_decision: Option<bool>,
}

impl SelectorBlock {
    pub fn effective_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.kind.as_str().to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EtaValue {
    Named(String),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetricName {
    TrainLoss,
    TestMetric,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineBlock {
    /// "auto" (1/L) or a positive number capped at 1/L.
    pub eta: Option<EtaValue>,
    pub local_steps: Option<usize>,
    pub max_rounds: usize,
    pub target_metric: Option<TargetMetricName>,
    pub target_value: Option<f64>,
}

pub fn parse_config_str(text: &str) -> Result<SimConfig> {
    let cfg: SimConfig = toml::from_str(text).context("config does not match the schema")?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn validate(cfg: &SimConfig) -> Result<()> {
    if cfg.schema_version != SCHEMA_VERSION {
        bail!(
            "schema_version {} is not supported, expected {SCHEMA_VERSION}",
            cfg.schema_version
        );
    }
    if cfg.seeds.is_empty() {
        bail!("seeds must list at least one seed");
    }
    let mut sorted_seeds = cfg.seeds.clone();
    sorted_seeds.sort_unstable();
    if sorted_seeds.windows(2).any(|w| w[0] == w[1]) {
        bail!("seeds must be distinct, output files are named by seed");
    }

    validate_dataset(&cfg.dataset)?;
    validate_delays(&cfg.delays)?;

    if cfg.selectors.is_empty() {
        bail!("at least one [[selectors]] block is required");
    }
    let mut labels: Vec<String> = Vec::new();
    for (i, sel) in cfg.selectors.iter().enumerate() {
        validate_selector(sel, i, cfg.dataset.m)?;
        let label = sel.effective_label();
        if labels.contains(&label) {
            bail!(
                "selectors[{i}] (type \"{}\"): label \"{label}\" is already used; give each block a unique label",
                sel.kind.as_str()
            );
        }
        labels.push(label);
    }

    validate_engine(&cfg.engine)?;
    Ok(())
}

fn validate_dataset(ds: &DatasetConfig) -> Result<()> {
    if ds.m == 0 || ds.n == 0 || ds.d == 0 {
        bail!("dataset m, n, d must all be at least 1");
    }
    let [lo, hi] = ds.eig_range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
        bail!("dataset eig_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]");
    }
    if !(ds.noise_std.is_finite() && ds.noise_std >= 0.0) {
        bail!("dataset noise_std must be nonnegative, got {}", ds.noise_std);
    }
    if let Some(b) = ds.covariance_batch {
        if b == 0 || b > ds.n {
            bail!(
                "dataset covariance_batch must be in 1..={}, got {b}",
                ds.n
            );
        }
    }
    Ok(())
}

fn validate_delays(dl: &DelayBlock) -> Result<()> {
    if let Some(sigma) = dl.lognormal_sigma {
        if !(sigma.is_finite() && sigma >= 0.0) {
            bail!("delays lognormal_sigma must be nonnegative, got {sigma}");
        }
    }
    match dl.kind {
        DelayKind::Synthetic => {
            if dl.path.is_some() {
                bail!("delays of type \"synthetic\" do not accept a path");
            }
            if dl.lognormal_sigma.is_some() {
                bail!(
                    "delays of type \"synthetic\" are constant per client and do not accept lognormal_sigma"
                );
            }
        }
        DelayKind::Trace => {
            if dl.path.is_none() {
                bail!("delays of type \"trace\" require a path");
            }
            if dl.model_size_bytes.is_some()
                || dl.link_speed_range.is_some()
                || dl.compute_range.is_some()
            {
                bail!("delays of type \"trace\" do not accept synthetic parameters");
            }
        }
    }
    Ok(())
}

fn validate_selector(sel: &SelectorBlock, i: usize, m: usize) -> Result<()> {
    let kind = sel.kind.as_str();
    match sel.k {
        Some(k) if !sel.kind.takes_k() => {
            bail!("selectors[{i}] (type \"{kind}\"): k = {k} is not accepted by this type")
        }
        Some(0) => bail!("selectors[{i}] (type \"{kind}\"): k must be at least 1"),
        Some(k) if k > m => {
            bail!("selectors[{i}] (type \"{kind}\"): k = {k} exceeds the {m}-client roster")
        }
        None if sel.kind.takes_k() => {
            bail!("selectors[{i}] (type \"{kind}\"): k is required")
        }
        _ => {}
    }
    match (&sel.mode, sel.kind) {
        (None, _) => {}
        (Some(mode), SelectorKind::Submodular) => {
            if !matches!(mode.as_str(), "auto" | "minnorm" | "exhaustive") {
                bail!(
                    "selectors[{i}] (type \"submodular\"): mode \"{mode}\" is not one of auto, minnorm, exhaustive"
                );
            }
        }
        (Some(mode), SelectorKind::Sampling) => {
            if !matches!(mode.as_str(), "exact" | "k1") {
                bail!(
                    "selectors[{i}] (type \"sampling\"): mode \"{mode}\" is not one of exact, k1"
                );
            }
        }
        (Some(mode), _) => {
            bail!("selectors[{i}] (type \"{kind}\"): mode \"{mode}\" is not accepted by this type")
        }
    }
    if sel.reuse_decision.is_some() && !sel.kind.takes_reuse() {
        bail!("selectors[{i}] (type \"{kind}\"): reuse_decision is not accepted by this type");
    }
    if let Some(label) = &sel.label {
        if label.is_empty()
            || !label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            bail!(
                "selectors[{i}] (type \"{kind}\"): label \"{label}\" must be nonempty and use only letters, digits, '_' or '-'"
            );
        }
    }
    let _ = sel.kind.takes_mode();
    Ok(())
}

fn validate_engine(engine: &EngineBlock) -> Result<()> {
    if engine.max_rounds == 0 {
        bail!("engine max_rounds must be at least 1");
    }
    if engine.local_steps == Some(0) {
        bail!("engine local_steps must be at least 1");
    }
    match &engine.eta {
        None => {}
        Some(EtaValue::Named(name)) => {
            if name != "auto" {
                bail!("engine eta must be \"auto\" or a positive number, got \"{name}\"");
            }
        }
        Some(EtaValue::Fixed(v)) => {
            if !(v.is_finite() && *v > 0.0) {
                bail!("engine eta must be positive and finite, got {v}");
            }
        }
    }
    match (engine.target_metric, engine.target_value) {
        (None, None) => {}
        (Some(_), Some(v)) => {
            if !v.is_finite() {
                bail!("engine target_value must be finite, got {v}");
            }
        }
        (Some(_), None) => bail!("engine target_metric is set but target_value is missing"),
        (None, Some(_)) => bail!("engine target_value is set but target_metric is missing"),
    }
    Ok(())
}
