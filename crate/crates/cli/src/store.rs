//! Append-only result shards keyed by configuration hash and sample range.

use std::fs;
use std::path::{Path, PathBuf};

use magclt_core::experiments::{EnsembleResult, SampleRecord};
use magclt_core::geometry::BoundaryCondition;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shard {path} is unreadable: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("shard {path} belongs to config hash {found}, this run has hash {expected}; refusing to mix")]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{dir} already holds shards for this run; pass --resume to continue it")]
    ExistingShards { dir: PathBuf },
    #[error("samples {0} appear in several shards with different values")]
    Conflict(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub config_hash: String,
    pub dim: usize,
    pub side: u32,
    pub bc: BoundaryCondition,
    pub start: usize,
    pub end: usize,
    pub samples: Vec<SampleRecord>,
}

fn bc_name(bc: BoundaryCondition) -> &'static str {
    match bc {
        BoundaryCondition::Dirichlet => "dirichlet",
        BoundaryCondition::Neumann => "neumann",
    }
}

/// Shard directory with a single writer.
pub struct ShardStore {
    dir: PathBuf,
    hash: String,
}

impl ShardStore {
    /// Opens `dir`, rejecting shards written under another configuration.
    pub fn open(dir: &Path, hash: &str) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let store = ShardStore {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
        };
        for path in store.shard_paths()? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let found = name.trim_start_matches("shard-").split('-').next().unwrap_or_default().to_string();
            if found != hash {
                return Err(StoreError::HashMismatch {
                    path,
                    found,
                    expected: hash.to_string(),
                });
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn shard_paths(&self) -> Result<Vec<PathBuf>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.starts_with("shard-") && name.ends_with(".json") {
                out.push(path);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.shard_paths()?.is_empty())
    }

    fn read(&self, path: &Path) -> Result<Shard, StoreError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let shard: Shard = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if shard.config_hash != self.hash {
            return Err(StoreError::HashMismatch {
                path: path.to_path_buf(),
                found: shard.config_hash,
                expected: self.hash.clone(),
            });
        }
        Ok(shard)
    }

    fn shards_for(&self, side: u32, bc: BoundaryCondition) -> Result<Vec<Shard>, StoreError> {
        let mut out = Vec::new();
        for path in self.shard_paths()? {
            let shard = self.read(&path)?;
            if shard.side == side && shard.bc == bc {
                out.push(shard);
            }
        }
        Ok(out)
    }

    pub fn has_shards(&self, side: u32, bc: BoundaryCondition) -> Result<bool, StoreError> {
        Ok(!self.shards_for(side, bc)?.is_empty())
    }

    pub fn write(&self, shard: &Shard) -> Result<PathBuf, StoreError> {
        let name = format!(
            "shard-{}-{}-{}-{}-{}.json",
            self.hash,
            shard.side,
            bc_name(shard.bc),
            shard.start,
            shard.end
        );
        let path = self.dir.join(name);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(shard).expect("shards serialize");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Sample ranges in `0..total` not covered by any shard.
    pub fn missing(&self, side: u32, bc: BoundaryCondition, total: usize) -> Result<Vec<(usize, usize)>, StoreError> {
        let mut have = vec![false; total];
        for s in self.shards_for(side, bc)? {
            for rec in &s.samples {
                if rec.index < total {
                    have[rec.index] = true;
                }
            }
        }
        let mut out = Vec::new();
        let mut j = 0;
        while j < total {
            if have[j] {
                j += 1;
                continue;
            }
            let start = j;
            while j < total && !have[j] {
                j += 1;
            }
            out.push((start, j));
        }
        Ok(out)
    }

    /// Samples `0..total` merged from all shards; `None` if any is missing.
    pub fn load(&self, dim: usize, side: u32, bc: BoundaryCondition, total: usize) -> Result<Option<EnsembleResult>, StoreError> {
        let mut slots: Vec<Option<SampleRecord>> = vec![None; total];
        for s in self.shards_for(side, bc)? {
            for rec in s.samples {
                if rec.index >= total {
                    continue;
                }
                match &slots[rec.index] {
                    Some(prev) if prev.trace.to_bits() != rec.trace.to_bits() || prev.seed != rec.seed => {
                        return Err(StoreError::Conflict(rec.index));
                    }
                    _ => slots[rec.index] = Some(rec),
                }
            }
        }
        let samples: Option<Vec<SampleRecord>> = slots.into_iter().collect();
        Ok(samples.map(|s| EnsembleResult::from_samples(dim, side, bc, s)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shard(hash: &str, start: usize, end: usize) -> Shard {
        Shard {
            config_hash: hash.into(),
            dim: 1,
            side: 8,
            bc: BoundaryCondition::Dirichlet,
            start,
            end,
            samples: (start..end)
                .map(|i| SampleRecord {
                    index: i,
                    seed: i as u64 * 7,
                    trace: 0.1 * i as f64 + 1.0 / 3.0,
                })
                .collect(),
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = ShardStore::open(dir.path(), "abc").unwrap();
        store.write(&shard("abc", 0, 3)).unwrap();
        assert!(store.load(1, 8, BoundaryCondition::Dirichlet, 5).unwrap().is_none());
        assert_eq!(store.missing(8, BoundaryCondition::Dirichlet, 5).unwrap(), vec![(3, 5)]);
        store.write(&shard("abc", 3, 5)).unwrap();
        let r = store.load(1, 8, BoundaryCondition::Dirichlet, 5).unwrap().unwrap();
        assert_eq!(r.samples, shard("abc", 0, 5).samples);
    }

    #[test]
    fn foreign_hash_rejected() {
        let dir = tempfile::tempdir().unwrap();
        ShardStore::open(dir.path(), "aaa").unwrap().write(&shard("aaa", 0, 2)).unwrap();
        let err = ShardStore::open(dir.path(), "bbb").err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("aaa") && msg.contains("bbb"), "{msg}");
    }
}
