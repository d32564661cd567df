//! TOML run configuration with dotted command-line overrides.
//!
//! Every section is optional and falls back to the defaults below; unknown
//! keys anywhere are rejected. The effective configuration is what gets
//! echoed next to a run's outputs, and loading that echo reproduces it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use deblur_core::augment::AugmentConfig;
use deblur_core::losses::LossConfig;
use deblur_core::metrics::{DEFAULT_HI_DB, DEFAULT_LO_DB};
use deblur_core::train::{AdamWConfig, LadderStep, TrainConfig, TrainSchedule};
use deblur_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::dataset::Layout;
use crate::error::{with_path, CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub enc_blocks: [usize; 4],
    pub dec_blocks: [usize; 3],
    pub heads: [usize; 4],
    pub refinement_blocks: usize,
    pub gamma: f64,
}

impl From<&ModelConfig> for ModelSection {
    fn from(c: &ModelConfig) -> Self {
        ModelSection {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            base_channels: c.base_channels,
            enc_blocks: c.enc_blocks,
            dec_blocks: c.dec_blocks,
            heads: c.heads,
            refinement_blocks: c.refinement_blocks,
            gamma: c.gamma,
        }
    }
}

impl From<&ModelSection> for ModelConfig {
    fn from(s: &ModelSection) -> Self {
        ModelConfig {
            in_channels: s.in_channels,
            out_channels: s.out_channels,
            base_channels: s.base_channels,
            enc_blocks: s.enc_blocks,
            dec_blocks: s.dec_blocks,
            heads: s.heads,
            refinement_blocks: s.refinement_blocks,
            gamma: s.gamma,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        (&ModelConfig::baseline()).into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda_freq: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda_freq: LossConfig::default().lambda_freq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub total_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// `[start_iter, patch, batch]` rungs.
    pub ladder: Vec<[usize; 3]>,
}

impl From<&TrainSchedule> for ScheduleSection {
    fn from(s: &TrainSchedule) -> Self {
        ScheduleSection {
            total_iters: s.total_iters,
            lr_start: s.lr_start,
            lr_end: s.lr_end,
            ladder: s.ladder.iter().map(|r| [r.start_iter, r.patch, r.batch]).collect(),
        }
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        (&TrainSchedule::paper_8gpu()).into()
    }
}

impl ScheduleSection {
    pub fn to_core(&self) -> TrainSchedule {
        TrainSchedule {
            total_iters: self.total_iters,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            ladder: self
                .ladder
                .iter()
                .map(|&[start_iter, patch, batch]| LadderStep { start_iter, patch, batch })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = AdamWConfig::default();
        OptimSection {
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            weight_decay: d.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_jitter: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub p_blur: f64,
    pub blur_sigma: [f64; 2],
    pub blur_kernel: usize,
    pub p_perspective: f64,
    pub perspective_scale: f64,
}

impl From<&AugmentConfig> for AugmentSection {
    fn from(a: &AugmentConfig) -> Self {
        AugmentSection {
            p_hflip: a.p_hflip,
            p_vflip: a.p_vflip,
            p_jitter: a.p_jitter,
            brightness: a.brightness,
            contrast: a.contrast,
            saturation: a.saturation,
            hue: a.hue,
            p_blur: a.p_blur,
            blur_sigma: [a.blur_sigma.0, a.blur_sigma.1],
            blur_kernel: a.blur_kernel,
            p_perspective: a.p_perspective,
            perspective_scale: a.perspective_scale,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        (&AugmentConfig::default()).into()
    }
}

impl AugmentSection {
    pub fn to_core(&self) -> AugmentConfig {
        AugmentConfig {
            p_hflip: self.p_hflip,
            p_vflip: self.p_vflip,
            p_jitter: self.p_jitter,
            brightness: self.brightness,
            contrast: self.contrast,
            saturation: self.saturation,
            hue: self.hue,
            p_blur: self.p_blur,
            blur_sigma: (self.blur_sigma[0], self.blur_sigma[1]),
            blur_kernel: self.blur_kernel,
            p_perspective: self.p_perspective,
            perspective_scale: self.perspective_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub seed: u64,
    pub log_every: usize,
    /// 0 validates only at the end.
    pub val_every: usize,
    /// 0 keeps only the final `last.ckpt`.
    pub checkpoint_every: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 0,
            log_every: 100,
            val_every: 1000,
            checkpoint_every: 1000,
            grad_clip: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    /// `blur/` and `sharp/` directories with matching file names.
    #[default]
    Dirs,
    Manifest,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_root: PathBuf,
    pub layout: LayoutKind,
    /// Manifest path for `layout = "manifest"`; defaults to `<train_root>/manifest.tsv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Separate validation tree, scanned with the same layout rules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_root: Option<PathBuf>,
    /// File of ids (one per line) held out of `train_root` for validation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_file: Option<PathBuf>,
}

impl DataSection {
    pub fn layout_for(&self, root: &Path) -> Layout {
        match self.layout {
            LayoutKind::Dirs => Layout::ParallelDirs,
            LayoutKind::Manifest => Layout::Manifest(self.manifest.clone().unwrap_or_else(|| root.join("manifest.tsv"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Below this PSNR (dB) an image is a hard negative.
    pub lo_db: f64,
    /// Above this PSNR (dB) an image is a hard positive.
    pub hi_db: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            lo_db: DEFAULT_LO_DB,
            hi_db: DEFAULT_HI_DB,
        }
    }
}

/// What was invoked; informational, ignored when loaded back.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub command: String,
    pub args: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunFile {
    pub run: RunSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub schedule: ScheduleSection,
    pub optim: OptimSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl RunFile {
    pub fn model_config(&self) -> ModelConfig {
        (&self.model).into()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model_config(),
            loss: LossConfig {
                lambda_freq: self.loss.lambda_freq,
            },
            schedule: self.schedule.to_core(),
            optim: AdamWConfig {
                beta1: self.optim.beta1,
                beta2: self.optim.beta2,
                eps: self.optim.eps,
                weight_decay: self.optim.weight_decay,
            },
            augment: self.augment.to_core(),
            seed: self.train.seed,
            log_every: self.train.log_every,
            val_every: self.train.val_every,
            checkpoint_every: self.train.checkpoint_every,
            grad_clip: (self.train.grad_clip > 0.0).then_some(self.train.grad_clip),
        }
    }

    /// Checks every section against the core validators.
    pub fn validate(&self) -> CliResult<()> {
        let cfg = self.train_config();
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.grad_clip < 0.0 || !self.train.grad_clip.is_finite() {
            return Err(CliError::Config(format!("train.grad_clip must be ≥ 0, got {}", self.train.grad_clip)));
        }
        if self.train.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("train.seed must be at most {}", i64::MAX)));
        }
        if !(self.eval.lo_db < self.eval.hi_db) {
            return Err(CliError::Config(format!(
                "eval.lo_db ({}) must be below eval.hi_db ({})",
                self.eval.lo_db, self.eval.hi_db
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config is always representable")
    }

    /// Writes the effective configuration to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(with_path(dir))?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_toml()).map_err(with_path(&path))?;
        Ok(path)
    }
}

/// Name of the effective-config echo inside an output directory.
pub const ECHO_FILE: &str = "config.toml";

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string so `data.train_root=/some/dir` needs no quoting.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} is malformed")));
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn from_table(table: toml::Table) -> CliResult<RunFile> {
    RunFile::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}

pub fn parse(text: &str) -> CliResult<RunFile> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    from_table(table)
}

/// File (or defaults), then overrides in order, then `seed`; validated.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<RunFile> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg = from_table(table)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A named preset (`baseline`, `improved`, `toy`) or a run-config path.
pub fn model_from_spec(spec: &str) -> CliResult<ModelConfig> {
    match spec {
        "baseline" => Ok(ModelConfig::baseline()),
        "improved" => Ok(ModelConfig::improved()),
        "toy" => Ok(ModelConfig::toy()),
        path => {
            let cfg = load(Some(Path::new(path)), &[], None)?;
            Ok(cfg.model_config())
        }
    }
}
