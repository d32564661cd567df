//! Discovery of blurred/sharp image pairs on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use deblur_core::augment::Pair;
use sha2::{Digest, Sha256};

use crate::error::{with_path, CliError, CliResult};
use crate::ppm;

/// File extensions treated as images.
pub const IMAGE_EXTENSIONS: [&str; 2] = ["ppm", "PPM"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `root/blur/NAME` pairs with `root/sharp/NAME`.
    ParallelDirs,
    /// UTF-8 lines `id<TAB>blur_path<TAB>sharp_path`; relative paths resolve
    /// against the manifest's directory.
    Manifest(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub id: String,
    pub blur: PathBuf,
    pub sharp: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedDataset {
    pub root: PathBuf,
    /// Sorted by id.
    pub pairs: Vec<PairEntry>,
    /// SHA-256 over the `id, blur, sharp` lines, hex encoded.
    pub checksum: String,
    /// Files that had no partner.
    pub warnings: Vec<String>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Decodes every pair.
    pub fn load(&self) -> CliResult<Vec<Pair>> {
        self.pairs
            .iter()
            .map(|p| {
                Ok(Pair {
                    blur: ppm::load_image(&p.blur)?,
                    sharp: ppm::load_image(&p.sharp)?,
                })
            })
            .collect()
    }

    /// Splits off the pairs whose ids are listed in `held_out`.
    pub fn split(self, held_out: &BTreeSet<String>) -> CliResult<(PairedDataset, PairedDataset)> {
        let known: BTreeSet<&str> = self.pairs.iter().map(|p| p.id.as_str()).collect();
        if let Some(missing) = held_out.iter().find(|id| !known.contains(id.as_str())) {
            return Err(CliError::Data(format!("split lists unknown id {missing:?}")));
        }
        let (val, train): (Vec<_>, Vec<_>) = self.pairs.into_iter().partition(|p| held_out.contains(&p.id));
        Ok((
            PairedDataset::finish(self.root.clone(), train, self.warnings)?,
            PairedDataset::finish(self.root, val, Vec::new())?,
        ))
    }

    fn finish(root: PathBuf, mut pairs: Vec<PairEntry>, warnings: Vec<String>) -> CliResult<Self> {
        pairs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut h = Sha256::new();
        for p in &pairs {
            h.update(format!("{}\t{}\t{}\n", p.id, p.blur.display(), p.sharp.display()));
        }
        Ok(PairedDataset {
            root,
            pairs,
            checksum: format!("{:x}", h.finalize()),
            warnings,
        })
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e))
}

/// Image files directly inside `dir`, keyed by file name.
pub fn list_images(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::missing(dir));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(with_path(dir))? {
        let path = entry.map_err(with_path(dir))?.path();
        if path.is_file() && is_image(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
        .to_string()
}

/// Finds the pairs under `root`, checks that both images of every pair have
/// equal dimensions and fails on an empty result.
pub fn scan_pairs(root: &Path, layout: &Layout) -> CliResult<PairedDataset> {
    let mut warnings = Vec::new();
    let pairs = match layout {
        Layout::ParallelDirs => {
            let blur = list_images(&root.join("blur"))?;
            let sharp = list_images(&root.join("sharp"))?;
            for (name, path) in &blur {
                if !sharp.contains_key(name) {
                    warnings.push(format!("{} has no sharp counterpart", path.display()));
                }
            }
            for (name, path) in &sharp {
                if !blur.contains_key(name) {
                    warnings.push(format!("{} has no blurred counterpart", path.display()));
                }
            }
            blur.iter()
                .filter_map(|(name, b)| {
                    sharp.get(name).map(|s| PairEntry {
                        id: stem(name),
                        blur: b.clone(),
                        sharp: s.clone(),
                    })
                })
                .collect()
        }
        Layout::Manifest(manifest) => parse_manifest(manifest)?,
    };
    let mut seen = BTreeSet::new();
    for p in &pairs {
        if !seen.insert(p.id.as_str()) {
            return Err(CliError::Data(format!("duplicate pair id {:?}", p.id)));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("no image pairs found under {}", root.display())));
    }
    for p in &pairs {
        let (bd, sd) = (ppm::read_dims(&p.blur)?, ppm::read_dims(&p.sharp)?);
        if bd != sd {
            return Err(CliError::Data(format!(
                "pair {:?}: blurred image is {}x{} but sharp image is {}x{}",
                p.id, bd.1, bd.0, sd.1, sd.0
            )));
        }
    }
    PairedDataset::finish(root.to_path_buf(), pairs, warnings)
}

fn parse_manifest(manifest: &Path) -> CliResult<Vec<PairEntry>> {
    let text = fs::read_to_string(manifest).map_err(with_path(manifest))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, blur, sharp] = fields[..] else {
            return Err(CliError::Data(format!(
                "{}:{}: expected id<TAB>blur<TAB>sharp",
                manifest.display(),
                n + 1
            )));
        };
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let entry = PairEntry {
            id: id.to_string(),
            blur: resolve(blur),
            sharp: resolve(sharp),
        };
        for p in [&entry.blur, &entry.sharp] {
            if !p.is_file() {
                return Err(CliError::missing(p));
            }
        }
        pairs.push(entry);
    }
    Ok(pairs)
}

/// Ids listed one per line; blank lines and `#` comments are skipped.
pub fn read_id_list(path: &Path) -> CliResult<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
