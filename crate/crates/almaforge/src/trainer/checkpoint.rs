//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!   magic "ALMAFORGE" | version u32 | meta_len u64 | meta JSON |
//!   table_len u64 | table JSON | raw f32 arrays
//!
//! The table rows are (name, dtype, rows, cols, offset) with offsets
//! relative to the start of the array region, so a reader can fetch one
//! array without decoding the rest.

use crate::error::{Error, Result};
use crate::lora::{AdapterSet, LowRankPair};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 9] = b"ALMAFORGE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraMeta {
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train_digest: String,
    step: u64,
    #[serde(default)]
    lora: Option<LoraMeta>,
    #[serde(default)]
    val_history: Vec<ValPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableRow {
    name: String,
    dtype: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train_digest: String,
    pub step: u64,
    pub lora: Option<LoraMeta>,
    pub val_history: Vec<ValPoint>,
    /// Model parameters under their canonical names; adapters under
    /// `lora/{target}.a` and `lora/{target}.b`.
    pub arrays: IndexMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Meta {
            model: self.model,
            train_digest: self.train_digest.clone(),
            step: self.step,
            lora: self.lora,
            val_history: self.val_history.clone(),
        };
        let meta_bytes = serde_json::to_vec(&meta)?;
        let mut table = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for (name, t) in &self.arrays {
            table.push(TableRow {
                name: name.clone(),
                dtype: "f32".into(),
                rows: t.rows(),
                cols: t.cols(),
                offset,
            });
            offset += (t.numel() * 4) as u64;
        }
        let table_bytes = serde_json::to_vec(&table)?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&meta_bytes)?;
        w.write_all(&(table_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&table_bytes)?;
        for t in self.arrays.values() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
            match at.checked_add(n).filter(|e| *e <= bytes.len()) {
                Some(end) => {
                    let s = &bytes[*at..end];
                    *at = end;
                    Ok(s)
                }
                None => Err(Error::Checkpoint(format!(
                    "file truncated at byte {at}: wanted {n} more of {}",
                    bytes.len()
                ))),
            }
        }

        let bytes = std::fs::read(path)?;
        let at = &mut 0usize;
        let magic = take(&bytes, at, MAGIC.len())?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}; not a checkpoint file",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = u32::from_le_bytes(take(&bytes, at, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version}, expected {VERSION}"
            )));
        }
        let meta_len = u64::from_le_bytes(take(&bytes, at, 8)?.try_into().unwrap()) as usize;
        let meta: Meta = serde_json::from_slice(take(&bytes, at, meta_len)?)?;
        let table_len = u64::from_le_bytes(take(&bytes, at, 8)?.try_into().unwrap()) as usize;
        let table: Vec<TableRow> = serde_json::from_slice(take(&bytes, at, table_len)?)?;

        let base = *at;
        let mut arrays = IndexMap::with_capacity(table.len());
        for row in &table {
            if row.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "array {} has unsupported dtype {}",
                    row.name, row.dtype
                )));
            }
            let n = row.rows * row.cols;
            let start = base
                .checked_add(row.offset as usize)
                .filter(|s| s.checked_add(n * 4).is_some_and(|e| e <= bytes.len()))
                .ok_or_else(|| {
                    Error::Checkpoint(format!("array {} extends past end of file", row.name))
                })?;
            let data: Vec<f32> = bytes[start..start + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(row.rows, row.cols, data)
                .map_err(|e| Error::Checkpoint(format!("array {}: {e}", row.name)))?;
            if arrays.insert(row.name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate array {}", row.name)));
            }
        }
        Ok(Checkpoint {
            model: meta.model,
            train_digest: meta.train_digest,
            step: meta.step,
            lora: meta.lora,
            val_history: meta.val_history,
            arrays,
        })
    }

    /// The base model parameters, validated against the canonical table.
    pub fn params(&self) -> Result<ModelParams<f32>> {
        ModelParams::from_tensors(&self.model, &self.arrays)
    }

    /// Rebuild the live training state: base parameters plus any adapters.
    pub fn state(&self) -> Result<super::TrainState> {
        Ok(super::TrainState {
            params: self.params()?,
            adapters: self.adapters()?,
        })
    }

    /// Reassemble adapters from the `lora/` arrays, if any were saved.
    pub fn adapters(&self) -> Result<Option<AdapterSet<f32>>> {
        let Some(meta) = self.lora else {
            return Ok(None);
        };
        let mut pairs: IndexMap<String, LowRankPair<f32>> = IndexMap::new();
        for name in self.arrays.keys() {
            let Some(rest) = name.strip_prefix("lora/") else {
                continue;
            };
            let Some(target) = rest.strip_suffix(".a") else {
                continue;
            };
            let b_name = format!("lora/{target}.b");
            let b = self.arrays.get(&b_name).ok_or_else(|| {
                Error::Checkpoint(format!("adapter {target} has an A array but no {b_name}"))
            })?;
            pairs.insert(
                target.to_string(),
                LowRankPair {
                    a: self.arrays[name].clone(),
                    b: b.clone(),
                },
            );
        }
        if pairs.is_empty() {
            return Err(Error::Checkpoint(
                "metadata declares adapters but no lora/ arrays are present".into(),
            ));
        }
        Ok(Some(AdapterSet {
            rank: meta.rank,
            alpha: meta.alpha,
            pairs,
            warnings: vec![],
        }))
    }
}
