//! Experiment configuration: one TOML file per experiment, with one
//! section per subcommand plus a few shared sections. Unknown keys are
//! rejected so a typo cannot silently fall back to a default. The three
//! global knobs (seed, output directory, worker count) resolve in the
//! order command-line flag, then `FIELDTUNE_*` environment variable,
//! then config file, then built-in default.

use crate::fail::{CliError, CliResult};
use fieldtune_core::data::{AugmentConfig, DomainSpec, FinetuneSetSpec};
use fieldtune_core::loss::LossScenario;
use fieldtune_core::nn::{ArchDescriptor, UpdateStrategy};
use fieldtune_core::odom::OdomNoiseParams;
use fieldtune_core::train::{AdamConfig, TrainConfig};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable overriding the global seed.
pub const ENV_SEED: &str = "FIELDTUNE_SEED";
/// Environment variable overriding the output directory.
pub const ENV_OUT: &str = "FIELDTUNE_OUT";
/// Environment variable overriding the worker count.
pub const ENV_JOBS: &str = "FIELDTUNE_JOBS";

/// The config file as written, before flag/env resolution.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub arch: Option<ArchSection>,
    pub synth: Option<SynthSection>,
    pub pretrain: Option<PretrainSection>,
    pub odometry: Option<OdometrySection>,
    pub finetune: Option<FinetuneSection>,
    pub eval: Option<EvalSection>,
    pub acquisition: Option<AcquisitionSection>,
    pub methods: Option<MethodsSection>,
    pub ladder: Option<LadderSection>,
    pub cost: Option<CostSection>,
}

/// Which network descriptor commands train and evaluate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    #[serde(default = "d_arch_compact")]
    pub name: String,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection { name: d_arch_compact() }
    }
}

impl ArchSection {
    pub fn descriptor(&self) -> CliResult<ArchDescriptor> {
        descriptor_by_name(&self.name)
    }
}

pub fn descriptor_by_name(name: &str) -> CliResult<ArchDescriptor> {
    match name {
        "compact" => Ok(ArchDescriptor::compact()),
        "reference" => Ok(ArchDescriptor::reference()),
        other => Err(CliError::config(format!(
            "unknown arch {other:?}; expected \"compact\" or \"reference\""
        ))),
    }
}

/// Synthetic data generation: which domains and subjects, frames per
/// sequence.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "d_frames")]
    pub frames: usize,
    #[serde(default = "d_subjects")]
    pub subjects: Vec<String>,
    #[serde(default = "d_domains")]
    pub domains: Vec<String>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            frames: d_frames(),
            subjects: d_subjects(),
            domains: d_domains(),
        }
    }
}

impl SynthSection {
    pub fn validate(&self) -> CliResult<()> {
        if self.frames < 2 {
            return Err(CliError::config("synth.frames must be at least 2"));
        }
        if self.subjects.is_empty() {
            return Err(CliError::config("synth.subjects must be non-empty"));
        }
        if self.domains.is_empty() {
            return Err(CliError::config("synth.domains must be non-empty"));
        }
        for d in &self.domains {
            domain_by_name(d)?;
        }
        Ok(())
    }
}

pub fn domain_by_name(name: &str) -> CliResult<DomainSpec> {
    match name {
        "a" => Ok(DomainSpec::domain_a()),
        "b" => Ok(DomainSpec::domain_b()),
        other => Err(CliError::config(format!(
            "unknown domain {other:?}; expected \"a\" or \"b\""
        ))),
    }
}

/// Supervised pretraining on a labeled dataset directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    /// A sequence directory, or a directory of sequence directories.
    pub data: PathBuf,
    #[serde(default = "d_pretrain_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "d_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
}

impl PretrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.learning_rate, ..AdamConfig::default() },
            batch_size: self.batch_size,
            pretrain_epochs: self.epochs,
            val_fraction: self.val_fraction,
            bn_momentum: self.bn_momentum,
            augment: augment_option(self.augment),
            seed,
            ..TrainConfig::default()
        }
    }
}

/// Odometry noise used wherever a scenario calls for noisy drone poses.
/// Sigmas are per native frame step; the walk seed is derived from the
/// run seed, not configured here.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdometrySection {
    #[serde(default = "d_sigma_xy")]
    pub sigma_x: f64,
    #[serde(default = "d_sigma_xy")]
    pub sigma_y: f64,
    #[serde(default = "d_sigma_z")]
    pub sigma_z: f64,
    #[serde(default = "d_sigma_yaw")]
    pub sigma_yaw: f64,
}

impl Default for OdometrySection {
    fn default() -> Self {
        OdometrySection {
            sigma_x: d_sigma_xy(),
            sigma_y: d_sigma_xy(),
            sigma_z: d_sigma_z(),
            sigma_yaw: d_sigma_yaw(),
        }
    }
}

impl OdometrySection {
    pub fn params(&self) -> OdomNoiseParams {
        OdomNoiseParams {
            sigma_x: self.sigma_x,
            sigma_y: self.sigma_y,
            sigma_z: self.sigma_z,
            sigma_yaw: self.sigma_yaw,
            ..OdomNoiseParams::default()
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
            ("sigma_yaw", self.sigma_yaw),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::config(format!(
                    "odometry.{name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// A single fine-tuning run from a pretrained checkpoint.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub checkpoint: PathBuf,
    pub sequence: PathBuf,
    #[serde(default = "d_scenario")]
    pub scenario: String,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_lambda")]
    pub lambda_sc: f64,
    #[serde(default = "d_strategy")]
    pub strategy: String,
    #[serde(default = "d_duration")]
    pub duration_s: f64,
    #[serde(default = "d_rate")]
    pub rate_hz: f64,
    pub max_samples: Option<usize>,
    #[serde(default = "d_finetune_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_pair_batch")]
    pub pair_batch: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
}

impl FinetuneSection {
    pub fn parsed_scenario(&self) -> CliResult<LossScenario> {
        LossScenario::from_label(&self.scenario, self.dt, self.lambda_sc)
            .map_err(CliError::config)
    }

    pub fn parsed_strategy(&self) -> CliResult<UpdateStrategy> {
        UpdateStrategy::parse(&self.strategy).map_err(CliError::config)
    }

    pub fn set_spec(&self) -> FinetuneSetSpec {
        FinetuneSetSpec {
            duration_s: self.duration_s,
            rate_hz: self.rate_hz,
            max_samples: self.max_samples.unwrap_or(usize::MAX),
        }
    }
}

/// Evaluate a checkpoint on a labeled sequence.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    pub sequence: PathBuf,
}

/// Acquisition sweep: grid over (set size, rate) with the all-parameter
/// strategy and ideal labels, cross-validated over subjects and folds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub checkpoint: PathBuf,
    /// Directory of sequence directories, one per subject.
    pub data: PathBuf,
    #[serde(default = "d_subjects")]
    pub subjects: Vec<String>,
    #[serde(default = "d_folds")]
    pub folds: usize,
    #[serde(default = "d_set_sizes")]
    pub set_sizes: Vec<usize>,
    #[serde(default = "d_rates")]
    pub rates_hz: Vec<f64>,
    /// Longest flight segment the acquisition protocol allows.
    #[serde(default = "d_duration")]
    pub max_duration_s: f64,
    #[serde(default = "d_finetune_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
}

impl AcquisitionSection {
    pub fn validate(&self) -> CliResult<()> {
        validate_plan(&self.subjects, self.folds, "acquisition")?;
        if self.set_sizes.is_empty() || self.rates_hz.is_empty() {
            return Err(CliError::config(
                "acquisition.set_sizes and acquisition.rates_hz must be non-empty",
            ));
        }
        if self.rates_hz.iter().any(|r| !(r > &0.0)) {
            return Err(CliError::config("acquisition.rates_hz must be positive"));
        }
        if !(self.max_duration_s > 0.0) {
            return Err(CliError::config("acquisition.max_duration_s must be positive"));
        }
        Ok(())
    }
}

/// Strategy comparison: the four update strategies across set sizes,
/// ideal labels.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsSection {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    #[serde(default = "d_subjects")]
    pub subjects: Vec<String>,
    #[serde(default = "d_folds")]
    pub folds: usize,
    #[serde(default = "d_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "d_method_sizes")]
    pub set_sizes: Vec<usize>,
    #[serde(default = "d_rate")]
    pub rate_hz: f64,
    #[serde(default = "d_duration")]
    pub max_duration_s: f64,
    #[serde(default = "d_finetune_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
}

impl MethodsSection {
    pub fn parsed_strategies(&self) -> CliResult<Vec<UpdateStrategy>> {
        self.strategies
            .iter()
            .map(|s| UpdateStrategy::parse(s).map_err(CliError::config))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        validate_plan(&self.subjects, self.folds, "methods")?;
        if self.strategies.is_empty() || self.set_sizes.is_empty() {
            return Err(CliError::config(
                "methods.strategies and methods.set_sizes must be non-empty",
            ));
        }
        if !(self.rate_hz > 0.0) {
            return Err(CliError::config("methods.rate_hz must be positive"));
        }
        self.parsed_strategies()?;
        Ok(())
    }
}

/// Loss-scenario ladder over a pair-delta grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    #[serde(default = "d_subjects")]
    pub subjects: Vec<String>,
    #[serde(default = "d_folds")]
    pub folds: usize,
    #[serde(default = "d_ladder")]
    pub scenarios: Vec<String>,
    #[serde(default = "d_dts")]
    pub dts: Vec<f64>,
    #[serde(default = "d_lambda")]
    pub lambda_sc: f64,
    #[serde(default = "d_strategy")]
    pub strategy: String,
    #[serde(default = "d_duration")]
    pub duration_s: f64,
    #[serde(default = "d_rate")]
    pub rate_hz: f64,
    #[serde(default = "d_finetune_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_pair_batch")]
    pub pair_batch: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
}

impl LadderSection {
    pub fn validate(&self) -> CliResult<()> {
        validate_plan(&self.subjects, self.folds, "ladder")?;
        if self.scenarios.is_empty() || self.dts.is_empty() {
            return Err(CliError::config(
                "ladder.scenarios and ladder.dts must be non-empty",
            ));
        }
        if self.dts.iter().any(|dt| !(dt > &0.0)) {
            return Err(CliError::config("ladder.dts must be positive"));
        }
        for label in &self.scenarios {
            LossScenario::from_label(label, self.dts[0], self.lambda_sc)
                .map_err(CliError::config)?;
        }
        UpdateStrategy::parse(&self.strategy).map_err(CliError::config)?;
        Ok(())
    }
}

/// Analytic workload table: no training involved.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "d_arch_reference")]
    pub arch: String,
    #[serde(default = "d_method_sizes")]
    pub set_sizes: Vec<usize>,
    #[serde(default = "d_finetune_epochs")]
    pub epochs: usize,
    #[serde(default = "d_socs")]
    pub socs: Vec<String>,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            arch: d_arch_reference(),
            set_sizes: d_method_sizes(),
            epochs: d_finetune_epochs(),
            socs: d_socs(),
        }
    }
}

fn validate_plan(subjects: &[String], folds: usize, what: &str) -> CliResult<()> {
    if subjects.is_empty() {
        return Err(CliError::config(format!("{what}.subjects must be non-empty")));
    }
    if folds == 0 {
        return Err(CliError::config(format!("{what}.folds must be at least 1")));
    }
    Ok(())
}

pub fn augment_option(enabled: bool) -> Option<AugmentConfig> {
    enabled.then(AugmentConfig::default)
}

fn d_arch_compact() -> String {
    "compact".to_string()
}
fn d_arch_reference() -> String {
    "reference".to_string()
}
fn d_frames() -> usize {
    2048
}
fn d_subjects() -> Vec<String> {
    vec!["s1".to_string(), "s2".to_string(), "s3".to_string()]
}
fn d_domains() -> Vec<String> {
    vec!["a".to_string(), "b".to_string()]
}
fn d_pretrain_epochs() -> usize {
    16
}
fn d_finetune_epochs() -> usize {
    5
}
fn d_batch() -> usize {
    32
}
fn d_pair_batch() -> usize {
    16
}
fn d_lr() -> f64 {
    1e-3
}
fn d_val_fraction() -> f64 {
    0.1
}
fn d_bn_momentum() -> f64 {
    0.1
}
fn d_true() -> bool {
    true
}
fn d_sigma_xy() -> f64 {
    0.01
}
fn d_sigma_z() -> f64 {
    0.02
}
fn d_sigma_yaw() -> f64 {
    0.002
}
fn d_scenario() -> String {
    "t(a)".to_string()
}
fn d_dt() -> f64 {
    2.0
}
fn d_lambda() -> f64 {
    1.0
}
fn d_strategy() -> String {
    "all_wb".to_string()
}
fn d_duration() -> f64 {
    128.0
}
fn d_rate() -> f64 {
    4.0
}
fn d_folds() -> usize {
    2
}
fn d_set_sizes() -> Vec<usize> {
    vec![32, 64, 128, 256, 512]
}
fn d_method_sizes() -> Vec<usize> {
    vec![512, 128]
}
fn d_rates() -> Vec<f64> {
    vec![4.0, 2.0, 1.0, 0.5]
}
fn d_dts() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}
fn d_strategies() -> Vec<String> {
    vec![
        "all_wb".to_string(),
        "bn_wb".to_string(),
        "fc_wb".to_string(),
        "bias".to_string(),
    ]
}
fn d_ladder() -> Vec<String> {
    vec![
        "t(a)".to_string(),
        "sc(a,dD,dH)".to_string(),
        "sc(a,dD~,dH)".to_string(),
        "sc(a,dD~,H?)".to_string(),
        "sc(a,dD,H?)".to_string(),
        "t(s32)+sc(a,dD~,H?)".to_string(),
        "t(s32)+sc(s128,dD~,H?)".to_string(),
    ]
}
fn d_socs() -> Vec<String> {
    vec!["gap9".to_string(), "gap8".to_string()]
}

/// Fully resolved invocation context shared by every command.
#[derive(Debug)]
pub struct Ctx {
    pub file: FileConfig,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub config_sha256: String,
}

impl Ctx {
    /// Section accessors that turn an absent section into a config error
    /// naming what is missing.
    pub fn pretrain(&self) -> CliResult<&PretrainSection> {
        self.file
            .pretrain
            .as_ref()
            .ok_or_else(|| CliError::config("missing [pretrain] section"))
    }

    pub fn finetune(&self) -> CliResult<&FinetuneSection> {
        self.file
            .finetune
            .as_ref()
            .ok_or_else(|| CliError::config("missing [finetune] section"))
    }

    pub fn eval(&self) -> CliResult<&EvalSection> {
        self.file
            .eval
            .as_ref()
            .ok_or_else(|| CliError::config("missing [eval] section"))
    }

    pub fn acquisition(&self) -> CliResult<&AcquisitionSection> {
        self.file
            .acquisition
            .as_ref()
            .ok_or_else(|| CliError::config("missing [acquisition] section"))
    }

    pub fn methods(&self) -> CliResult<&MethodsSection> {
        self.file
            .methods
            .as_ref()
            .ok_or_else(|| CliError::config("missing [methods] section"))
    }

    pub fn ladder(&self) -> CliResult<&LadderSection> {
        self.file
            .ladder
            .as_ref()
            .ok_or_else(|| CliError::config("missing [ladder] section"))
    }

    pub fn arch(&self) -> ArchSection {
        self.file.arch.clone().unwrap_or_default()
    }

    pub fn synth(&self) -> SynthSection {
        self.file.synth.clone().unwrap_or_default()
    }

    pub fn odometry(&self) -> OdometrySection {
        self.file.odometry.clone().unwrap_or_default()
    }

    pub fn cost(&self) -> CostSection {
        self.file.cost.clone().unwrap_or_default()
    }
}

/// Loads the config file (when given), applies flag and environment
/// overrides, and produces the invocation context. The config hash is
/// the SHA-256 of the file bytes, or of the empty string when no file
/// was given, so the manifest pins exactly what the run saw.
pub fn resolve(
    config: Option<&Path>,
    seed_flag: Option<u64>,
    out_flag: Option<PathBuf>,
    jobs_flag: Option<usize>,
) -> CliResult<Ctx> {
    let bytes = match config {
        Some(path) => std::fs::read(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?,
        None => Vec::new(),
    };
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::config("config file is not valid UTF-8"))?;
    let file: FileConfig = toml::from_str(&text).map_err(CliError::config)?;

    let seed = match (seed_flag, env_parse::<u64>(ENV_SEED)?) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => file.seed.unwrap_or(0),
    };
    let jobs = match (jobs_flag, env_parse::<usize>(ENV_JOBS)?) {
        (Some(j), _) => j,
        (None, Some(j)) => j,
        (None, None) => file.jobs.unwrap_or(1),
    };
    if jobs == 0 {
        return Err(CliError::config("jobs must be at least 1"));
    }
    let out = out_flag
        .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .or_else(|| file.out.clone())
        .ok_or_else(|| {
            CliError::config(format!("no output directory: pass --out, set {ENV_OUT}, or set out in the config"))
        })?;

    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let config_sha256 = hex(&hasher.finalize());

    Ok(Ctx { file, seed, jobs, out, config_sha256 })
}

fn env_parse<T: std::str::FromStr>(name: &str) -> CliResult<Option<T>> {
    match std::env::var(name) {
        Ok(text) => text
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::config(format!("cannot parse {name}={text:?}"))),
        Err(_) => Ok(None),
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
