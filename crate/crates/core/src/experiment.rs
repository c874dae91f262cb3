//! Filter-count sweep, attention ablation, atomic output directories and
//! run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::metrics::CandidateMode;
use crate::recommender::{ModelConfig, ModelKind};
use crate::train::{run_thrice, SeedRuns, TrainConfig};

pub const FILTER_GRID: [usize; 5] = [8, 16, 32, 64, 128];

/// `(variant, transformer layers)`.
pub const ABLATION_VARIANTS: [(&str, usize); 2] = [("off", 0), ("on", 2)];

/// One filter count of a sweep. A failed cell keeps its error message.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub filters: usize,
    pub outcome: std::result::Result<SeedRuns, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub filters: usize,
    pub recall10: Option<f64>,
    pub ndcg10: Option<f64>,
}

/// Trains CTNCF thrice per filter count and test-evaluates each run.
pub fn sweep(
    base: &ModelConfig,
    split: &SplitDataset,
    tc: &TrainConfig,
    seed: u64,
    mode: CandidateMode,
    grid: &[usize],
) -> Vec<SweepCell> {
    grid.iter()
        .map(|&filters| {
            let mut config = base.clone();
            config.kind = ModelKind::Ctncf;
            config.ctncf.num_filters = filters;
            let outcome = run_thrice(&config, split, tc, seed, &[10], mode).map_err(|e| e.to_string());
            SweepCell { filters, outcome }
        })
        .collect()
}

pub fn sweep_rows(cells: &[SweepCell]) -> Vec<SweepRow> {
    cells
        .iter()
        .map(|c| {
            let ok = c.outcome.as_ref().ok();
            SweepRow {
                filters: c.filters,
                recall10: ok.and_then(|r| r.mean.recall_at(10)),
                ndcg10: ok.and_then(|r| r.mean.ndcg_at(10)),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub variant: String,
    pub layers: usize,
    pub runs: SeedRuns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub variant: String,
    pub recall10: f64,
    pub ndcg10: f64,
}

/// Trains CTNCF thrice without and with the transformer stack.
pub fn ablate(
    base: &ModelConfig,
    split: &SplitDataset,
    tc: &TrainConfig,
    seed: u64,
    mode: CandidateMode,
) -> Result<Vec<AblationVariant>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&(variant, layers)| {
            let mut config = base.clone();
            config.kind = ModelKind::Ctncf;
            config.ctncf.num_transformer_layers = layers;
            Ok(AblationVariant {
                variant: variant.to_owned(),
                layers,
                runs: run_thrice(&config, split, tc, seed, &[10], mode)?,
            })
        })
        .collect()
}

pub fn ablate_rows(variants: &[AblationVariant]) -> Vec<AblateRow> {
    variants
        .iter()
        .map(|v| AblateRow {
            variant: v.variant.clone(),
            recall10: v.runs.mean.recall_at(10).unwrap_or(f64::NAN),
            ndcg10: v.runs.mean.ndcg_at(10).unwrap_or(f64::NAN),
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// A directory that is filled under a staging name and renamed into place
/// on [`OutputDir::commit`]. Dropping it uncommitted removes the staging
/// directory.
#[derive(Debug)]
pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl OutputDir {
    pub fn create(target: impl AsRef<Path>) -> Result<Self> {
        let target = target.as_ref().to_path_buf();
        let name = target
            .file_name()
            .ok_or_else(|| Error::Config(format!("output path {} has no final component", target.display())))?
            .to_string_lossy()
            .into_owned();
        let staging = target.with_file_name(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(OutputDir {
            target,
            staging,
            committed: false,
        })
    }

    /// Where files are written before commit.
    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.file(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Replaces any existing target directory with the staged one.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            let old = self.target.with_file_name(format!(
                ".{}.old-{}",
                self.target.file_name().expect("checked").to_string_lossy(),
                std::process::id()
            ));
            fs::rename(&self.target, &old).map_err(|e| Error::io(&self.target, e))?;
            fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

pub const MANIFEST_FILE: &str = "run.json";

/// What a command was asked to do and what it produced. `args` is the full
/// command line after the program name, so a run can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            args,
            seed,
            outputs: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.details.insert(key.to_owned(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Arguments of a recorded run with the `--out` value replaced.
pub fn replay_args(manifest: &RunManifest, out: &Path) -> Vec<String> {
    let mut args = Vec::with_capacity(manifest.args.len() + 2);
    let mut it = manifest.args.iter();
    let mut replaced = false;
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            args.push("--out".to_owned());
            args.push(out.to_string_lossy().into_owned());
            replaced = true;
        } else if a.starts_with("--out=") {
            args.push(format!("--out={}", out.to_string_lossy()));
            replaced = true;
        } else {
            args.push(a.clone());
        }
    }
    if !replaced {
        args.push("--out".to_owned());
        args.push(out.to_string_lossy().into_owned());
    }
    args
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_dir_appears_only_on_commit() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        let dir = OutputDir::create(&target).unwrap();
        dir.write("a.txt", b"x").unwrap();
        assert!(!target.exists());
        dir.commit().unwrap();
        assert_eq!(fs::read(target.join("a.txt")).unwrap(), b"x");

        let again = OutputDir::create(&target).unwrap();
        again.write("b.txt", b"y").unwrap();
        again.commit().unwrap();
        assert!(!target.join("a.txt").exists());
        assert!(target.join("b.txt").exists());
    }

    #[test]
    fn dropped_dir_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        {
            let dir = OutputDir::create(&target).unwrap();
            dir.write("a.txt", b"x").unwrap();
        }
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn replay_replaces_out() {
        let m = RunManifest::new("train", vec!["train".into(), "--out".into(), "a".into(), "--seed".into(), "3".into()], 3);
        assert_eq!(replay_args(&m, Path::new("b")), vec!["train", "--out", "b", "--seed", "3"]);
    }

    #[test]
    fn sweep_rows_keep_failures() {
        let cells = vec![SweepCell {
            filters: 8,
            outcome: Err("boom".into()),
        }];
        let rows = sweep_rows(&cells);
        assert_eq!(rows, vec![SweepRow { filters: 8, recall10: None, ndcg10: None }]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "filters,recall10,ndcg10\n8,,\n");
    }
}
