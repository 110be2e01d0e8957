//! Binary parameter container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "PRCK" | version | header length | header JSON
//! | tensor count | { name length | name | rows | cols | rows*cols f64 LE }*
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::files::{write_atomic, RunMeta};
use crate::nn::{ParamStore, Tensor2};
use crate::ranking::ScoringStrategy;
use crate::victim::{Arch, VictimConfig, VictimModel};

pub const MAGIC: &[u8; 4] = b"PRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointHeader {
    Victim {
        config: VictimConfig,
        trained: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meta: Option<RunMeta>,
    },
    Strategy {
        victim_arch: Arch,
        embed_dim: usize,
        seed: u64,
        trained: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        meta: Option<RunMeta>,
    },
}

impl CheckpointHeader {
    pub fn meta(&self) -> Option<&RunMeta> {
        match self {
            CheckpointHeader::Victim { meta, .. } | CheckpointHeader::Strategy { meta, .. } => meta.as_ref(),
        }
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(header: &CheckpointHeader, params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(header)?;
    push_u32(&mut out, json.len(), "header length")?;
    out.extend_from_slice(&json);
    push_u32(&mut out, params.len(), "tensor count")?;
    for (name, t) in params.named_values() {
        push_u32(&mut out, name.len(), "name length")?;
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, t.rows(), "rows")?;
        push_u32(&mut out, t.cols(), "cols")?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ParamStore)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = r.u32("header length")?;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("rows")?;
        let cols = r.u32("cols")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(len.saturating_mul(8), "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
            .collect();
        entries.push((name, Tensor2::from_vec(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((header, ParamStore::from_named(entries)))
}

/// Checkpoint bytes without run metadata; the hash of these identifies the
/// model in reports.
pub fn victim_to_bytes(model: &VictimModel) -> Result<Vec<u8>> {
    victim_to_bytes_with(model, None)
}

pub fn victim_to_bytes_with(model: &VictimModel, meta: Option<&RunMeta>) -> Result<Vec<u8>> {
    let header = CheckpointHeader::Victim {
        config: *model.config(),
        trained: model.is_trained(),
        meta: meta.cloned(),
    };
    encode(&header, model.params())
}

pub fn victim_from_bytes(bytes: &[u8]) -> Result<VictimModel> {
    match decode(bytes)? {
        (CheckpointHeader::Victim { config, trained, .. }, params) => VictimModel::from_parts(config, params, trained)
            .map_err(|e| Error::Checkpoint(format!("victim parameters do not fit the header: {e}"))),
        _ => Err(Error::Checkpoint("checkpoint does not hold a victim model".into())),
    }
}

pub fn strategy_to_bytes(strategy: &ScoringStrategy) -> Result<Vec<u8>> {
    strategy_to_bytes_with(strategy, None)
}

pub fn strategy_to_bytes_with(strategy: &ScoringStrategy, meta: Option<&RunMeta>) -> Result<Vec<u8>> {
    let header = CheckpointHeader::Strategy {
        victim_arch: strategy.victim_arch(),
        embed_dim: strategy.embed_dim(),
        seed: strategy.seed(),
        trained: strategy.is_trained(),
        meta: meta.cloned(),
    };
    encode(&header, strategy.params())
}

pub fn strategy_from_bytes(bytes: &[u8]) -> Result<ScoringStrategy> {
    match decode(bytes)? {
        (
            CheckpointHeader::Strategy {
                victim_arch,
                embed_dim,
                seed,
                trained,
                ..
            },
            params,
        ) => ScoringStrategy::from_parts(embed_dim, victim_arch, seed, params, trained)
            .map_err(|e| Error::Checkpoint(format!("strategy parameters do not fit the header: {e}"))),
        _ => Err(Error::Checkpoint("checkpoint does not hold a scoring strategy".into())),
    }
}

pub fn save_victim(model: &VictimModel, meta: Option<&RunMeta>, path: &Path, force: bool) -> Result<()> {
    write_atomic(path, &victim_to_bytes_with(model, meta)?, force)
}

pub fn load_victim(path: &Path) -> Result<VictimModel> {
    victim_from_bytes(&std::fs::read(path)?)
}

pub fn save_strategy(strategy: &ScoringStrategy, meta: Option<&RunMeta>, path: &Path, force: bool) -> Result<()> {
    write_atomic(path, &strategy_to_bytes_with(strategy, meta)?, force)
}

pub fn load_strategy(path: &Path) -> Result<ScoringStrategy> {
    strategy_from_bytes(&std::fs::read(path)?)
}

/// Run metadata stored in a checkpoint file, if any.
pub fn checkpoint_meta(path: &Path) -> Result<Option<RunMeta>> {
    let (header, _) = decode(&std::fs::read(path)?)?;
    Ok(header.meta().cloned())
}
