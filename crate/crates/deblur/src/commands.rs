//! The five subcommands as library functions; [`crate::cli`] adds argument
//! parsing, the config echo and exit codes.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deblur_core::metrics::{self, MetricReport};
use deblur_core::model::{self, param_count};
use deblur_core::train::{self, CheckpointKind, LogRecord, Observer, Status};
use deblur_core::{Image, ModelConfig, ParamStore};
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::{EvalSection, RunFile};
use crate::dataset::{self, PairedDataset};
use crate::error::{with_path, CliError, CliResult};
use crate::ppm;
use crate::report::{self, ArchComparison, MineCounts};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

pub const TRAIN_LOG_HEADER: &str = "iter,loss,l1,freq,lr,patch,batch,psnr,ssim,wall_time";

/// Streams log rows to `train_log.csv` and checkpoints to disk.
struct DiskObserver {
    dir: PathBuf,
    model: ModelConfig,
    log: File,
    start: Instant,
    error: Option<CliError>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl DiskObserver {
    /// Keeps the first IO failure; the core loop only sees a generic error.
    fn keep(&mut self, r: CliResult<()>) -> deblur_core::Result<()> {
        r.map_err(|e| {
            let msg = e.to_string();
            self.error.get_or_insert(e);
            deblur_core::Error::InvalidArgument(msg)
        })
    }
}

impl Observer for DiskObserver {
    fn record(&mut self, r: &LogRecord) -> deblur_core::Result<()> {
        let line = format!(
            "{},{},{},{},{},{},{},{},{},{:.3}\n",
            r.iter,
            r.loss,
            r.l1,
            r.freq,
            r.lr,
            r.patch,
            r.batch,
            opt(r.psnr),
            opt(r.ssim),
            self.start.elapsed().as_secs_f64()
        );
        let path = self.dir.join(TRAIN_LOG);
        let res = self.log.write_all(line.as_bytes()).map_err(with_path(&path));
        self.keep(res)
    }

    fn checkpoint(&mut self, _iter: usize, kind: CheckpointKind, params: &ParamStore<f32>) -> deblur_core::Result<()> {
        let name = match kind {
            CheckpointKind::Best => BEST_CKPT,
            CheckpointKind::Periodic | CheckpointKind::Final => LAST_CKPT,
        };
        let res = checkpoint::save(&self.dir.join(name), &self.model, params);
        self.keep(res)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub best_psnr: Option<f64>,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub checkpoint: PathBuf,
}

fn report_warnings(ds: &PairedDataset) {
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
}

/// Resolves the training and validation sets named by `cfg.data`.
pub fn datasets(cfg: &RunFile) -> CliResult<(PairedDataset, Option<PairedDataset>)> {
    let d = &cfg.data;
    if d.train_root.as_os_str().is_empty() {
        return Err(CliError::Config("data.train_root is not set".into()));
    }
    if !d.train_root.is_dir() {
        return Err(CliError::missing(&d.train_root));
    }
    let train = dataset::scan_pairs(&d.train_root, &d.layout_for(&d.train_root))?;
    report_warnings(&train);
    match (&d.val_root, &d.split_file) {
        (Some(_), Some(_)) => Err(CliError::Config("set at most one of data.val_root and data.split_file".into())),
        (Some(root), None) => {
            let val = dataset::scan_pairs(root, &d.layout_for(root))?;
            report_warnings(&val);
            Ok((train, Some(val)))
        }
        (None, Some(split)) => {
            let (train, val) = train.split(&dataset::read_id_list(split)?)?;
            if train.is_empty() {
                return Err(CliError::Data("split file holds out every pair".into()));
            }
            Ok((train, Some(val)))
        }
        (None, None) => Ok((train, None)),
    }
}

/// Trains per `cfg`, writing `train_log.csv`, `last.ckpt` and `best.ckpt`
/// (when validating) under `out`. A numeric abort leaves the previously
/// written checkpoints untouched.
pub fn cmd_train(cfg: &RunFile, out: &Path) -> CliResult<TrainSummary> {
    let (train_ds, val_ds) = datasets(cfg)?;
    let train_set = train_ds.load()?;
    let val_set = match &val_ds {
        Some(v) => v.load()?,
        None => Vec::new(),
    };
    fs::create_dir_all(out).map_err(with_path(out))?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = File::create(&log_path).map_err(with_path(&log_path))?;
    writeln!(log, "{TRAIN_LOG_HEADER}").map_err(with_path(&log_path))?;
    let tc = cfg.train_config();
    let mut obs = DiskObserver {
        dir: out.to_path_buf(),
        model: tc.model.clone(),
        log,
        start: Instant::now(),
        error: None,
    };
    let outcome = train::train(&tc, &train_set, &val_set, None, &mut obs);
    if let Some(e) = obs.error.take() {
        return Err(e);
    }
    let outcome = outcome.map_err(|e| CliError::from_core("training", e))?;
    if let Status::Aborted { iter, error } = &outcome.status {
        return Err(CliError::Numeric(format!(
            "training aborted at iteration {iter}: {error}; last good checkpoint kept in {}",
            out.display()
        )));
    }
    Ok(TrainSummary {
        iterations: outcome.losses.len(),
        final_loss: outcome.losses.last().copied(),
        best_psnr: outcome.best_psnr,
        train_pairs: train_set.len(),
        val_pairs: val_set.len(),
        checkpoint: out.join(LAST_CKPT),
    })
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Restores every image in `input` into `out` under the same file name.
/// Sizes that are not a multiple of 8 are reflect-padded and cropped back.
pub fn cmd_infer(ckpt: &Path, input: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (cfg, params) = checkpoint::load(ckpt)?;
    if cfg.in_channels != Image::CHANNELS || cfg.out_channels != Image::CHANNELS {
        return Err(CliError::Config(format!(
            "checkpoint maps {} to {} channels; RGB images need 3 to 3",
            cfg.in_channels, cfg.out_channels
        )));
    }
    let images = dataset::list_images(input)?;
    if images.is_empty() {
        return Err(CliError::Data(format!("no images in {}", input.display())));
    }
    fs::create_dir_all(out).map_err(with_path(out))?;
    if same_dir(input, out) {
        return Err(CliError::Config("output directory must differ from the input directory".into()));
    }
    let jobs: Vec<(&String, &PathBuf)> = images.iter().collect();
    jobs.par_iter()
        .map(|(name, path)| {
            let img = ppm::load_image(path)?;
            let x = Image::batch::<f32>(&[&img]).map_err(|e| CliError::from_core(name, e))?;
            let y = model::restore(&params, &cfg, &x).map_err(|e| CliError::from_core(name, e))?;
            let restored = Image::from_batch(&y, 0).map_err(|e| CliError::from_core(name, e))?;
            let dest = out.join(name);
            ppm::save_image(&restored, &dest)?;
            Ok(dest)
        })
        .collect()
}

/// Matches `restored` against `gt` by file name; any unmatched file is an error.
pub fn matched_images(restored: &Path, gt: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let a = dataset::list_images(restored)?;
    let b = dataset::list_images(gt)?;
    let only_a: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
    let only_b: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(CliError::Data(format!(
            "unmatched files: only in {}: {only_a:?}; only in {}: {only_b:?}",
            restored.display(),
            gt.display()
        )));
    }
    if a.is_empty() {
        return Err(CliError::Data(format!("no images in {}", restored.display())));
    }
    Ok(a.into_iter()
        .map(|(name, path)| {
            let g = b[&name].clone();
            let id = Path::new(&name).file_stem().and_then(|s| s.to_str()).unwrap_or(&name).to_string();
            (id, path, g)
        })
        .collect())
}

/// Scores `restored` against `gt` and writes the per-image report and summary.
/// Images are processed in parallel; rows keep file-name order.
pub fn cmd_eval(restored: &Path, gt: &Path, out: &Path, eval: &EvalSection) -> CliResult<MetricReport> {
    let pairs = matched_images(restored, gt)?;
    let records = pairs
        .par_iter()
        .map(|(id, r, g)| {
            let (ri, gi) = (ppm::load_image(r)?, ppm::load_image(g)?);
            if !ri.same_size(&gi) {
                return Err(CliError::Data(format!(
                    "{id}: restored is {}x{} but reference is {}x{}",
                    ri.width(),
                    ri.height(),
                    gi.width(),
                    gi.height()
                )));
            }
            metrics::evaluate_pair(id, &ri, &gi).map_err(|e| CliError::from_core(id, e))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = metrics::mine_hard(records, eval.lo_db, eval.hi_db).map_err(|e| CliError::from_core("", e))?;
    report::write_metric_report(&report, out)?;
    Ok(report)
}

/// Re-labels an eval report against the configured band.
pub fn cmd_mine(report_csv: &Path, out: &Path, eval: &EvalSection) -> CliResult<MineCounts> {
    let records = report::read_metric_csv(report_csv)?;
    let report = metrics::mine_hard(records, eval.lo_db, eval.hi_db).map_err(|e| CliError::from_core("", e))?;
    report::write_mine(&report, out)
}

pub fn cmd_arch(name_a: &str, a: &ModelConfig, name_b: &str, b: &ModelConfig, out: Option<&Path>) -> CliResult<ArchComparison> {
    let ra = param_count(a).map_err(|e| CliError::Config(format!("{name_a}: {e}")))?;
    let rb = param_count(b).map_err(|e| CliError::Config(format!("{name_b}: {e}")))?;
    let cmp = report::compare(name_a, &ra, name_b, &rb);
    if let Some(dir) = out {
        report::write_arch(&cmp, dir)?;
    }
    Ok(cmp)
}
