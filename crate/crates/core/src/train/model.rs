//! Cluster-centroid heads and the LTCK checkpoint format.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use super::backbone::{Backbone, Layer};
use crate::cluster::GranularitySet;
use crate::data::{decode_feature_matrix_prefix, encode_feature_matrix, write_file, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Local,
    Global,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Local => "local",
            Branch::Global => "global",
        }
    }
}

/// One centroid matrix per granularity level, used as linear heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub branch: Branch,
    pub granularities: GranularitySet,
    /// `heads[l]` has `granularities.levels()[l]` rows.
    pub heads: Vec<Array2<f64>>,
}

impl ClusterModel {
    pub fn new(branch: Branch, granularities: GranularitySet, heads: Vec<Array2<f64>>) -> Result<Self> {
        if heads.len() != granularities.levels().len() {
            return Err(Error::Shape(format!("{} heads for granularities {granularities}", heads.len())));
        }
        let c = heads[0].ncols();
        for (h, &k) in heads.iter().zip(granularities.levels()) {
            if h.nrows() != k || h.ncols() != c {
                return Err(Error::Shape(format!("head {:?} for level {k} with C = {c}", h.dim())));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{} head {k} has non-finite entries", branch.name())));
            }
        }
        Ok(Self { branch, granularities, heads })
    }

    pub fn feature_dim(&self) -> usize {
        self.heads[0].ncols()
    }

    pub fn n_prototypes(&self) -> usize {
        self.granularities.total()
    }
}

/// All heads of all models stacked in order: models first, then levels.
pub fn concat_prototypes(models: &[&ClusterModel]) -> Result<Array2<f64>> {
    let Some(first) = models.first() else {
        return Err(Error::Config("no cluster models to concatenate".into()));
    };
    let c = first.feature_dim();
    let views: Vec<ArrayView2<'_, f64>> = models.iter().flat_map(|m| m.heads.iter().map(|h| h.view())).collect();
    if let Some(bad) = views.iter().find(|v| v.ncols() != c) {
        return Err(Error::Shape(format!("head width {} differs from {c}", bad.ncols())));
    }
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("widths checked"))
}

/// Backbone plus heads, as persisted between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub backbone: Backbone,
    pub local: ClusterModel,
    pub global: Option<ClusterModel>,
}

const CK_MAGIC: &[u8; 4] = b"LTCK";
const CK_VERSION: u32 = 1;

fn tensors(ck: &Checkpoint) -> Result<Vec<(String, FeatureMatrix)>> {
    let mut out = Vec::new();
    for (i, l) in ck.backbone.layers().iter().enumerate() {
        out.push((format!("backbone.{i}.weight"), FeatureMatrix::from_array(l.weight.view())?));
        let b = l.bias.view().insert_axis(ndarray::Axis(0));
        out.push((format!("backbone.{i}.bias"), FeatureMatrix::from_array(b)?));
    }
    for m in std::iter::once(&ck.local).chain(ck.global.as_ref()) {
        for (h, k) in m.heads.iter().zip(m.granularities.levels()) {
            out.push((format!("{}.{k}", m.branch.name()), FeatureMatrix::from_array(h.view())?));
        }
    }
    Ok(out)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = tensors(ck)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CK_MAGIC);
    buf.extend_from_slice(&CK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in &tensors {
        let block = encode_feature_matrix(m);
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(block.len() as u64).to_le_bytes());
        buf.extend_from_slice(&block);
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncation(format!("checkpoint ends inside {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != CK_MAGIC {
        return Err(Error::Format("not an LTCK checkpoint".into()));
    }
    let version = cur.u32("version")?;
    if version != CK_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = cur.u32("tensor count")?;
    let mut layer_w: Vec<Array2<f64>> = Vec::new();
    let mut layer_b: Vec<Array1<f64>> = Vec::new();
    let mut heads: [(Vec<usize>, Vec<Array2<f64>>); 2] = Default::default();
    for _ in 0..n {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let block_len =
            usize::try_from(cur.u64("block length")?).map_err(|_| Error::Format("block length overflows".into()))?;
        let (m, used) = decode_feature_matrix_prefix(cur.take(block_len, "tensor block")?)?;
        if used != block_len {
            return Err(Error::Format(format!("tensor {name}: block has trailing bytes")));
        }
        let a = m.to_array();
        let parts: Vec<&str> = name.split('.').collect();
        let bad = || Error::Format(format!("unknown tensor name {name:?}"));
        match parts.as_slice() {
            ["backbone", i, kind] => {
                let i: usize = i.parse().map_err(|_| bad())?;
                let (list_len, is_w) = match *kind {
                    "weight" => (layer_w.len(), true),
                    "bias" => (layer_b.len(), false),
                    _ => return Err(bad()),
                };
                if i != list_len {
                    return Err(Error::Format(format!("tensor {name} out of order")));
                }
                if is_w {
                    layer_w.push(a);
                } else {
                    if a.nrows() != 1 {
                        return Err(Error::Shape(format!("bias {name} has {} rows", a.nrows())));
                    }
                    layer_b.push(a.row(0).to_owned());
                }
            }
            [branch, k] => {
                let slot = match *branch {
                    "local" => 0,
                    "global" => 1,
                    _ => return Err(bad()),
                };
                let k: usize = k.parse().map_err(|_| bad())?;
                heads[slot].0.push(k);
                heads[slot].1.push(a);
            }
            _ => return Err(bad()),
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    if layer_w.len() != layer_b.len() {
        return Err(Error::Format("backbone weights and biases do not pair up".into()));
    }
    let layers = layer_w.into_iter().zip(layer_b).map(|(weight, bias)| Layer { weight, bias }).collect();
    let backbone = Backbone::from_layers(layers)?;
    let [local, global] = heads;
    if local.0.is_empty() {
        return Err(Error::Format("checkpoint has no local heads".into()));
    }
    let local = ClusterModel::new(Branch::Local, GranularitySet::new(local.0)?, local.1)?;
    let global = if global.0.is_empty() {
        None
    } else {
        Some(ClusterModel::new(Branch::Global, GranularitySet::new(global.0)?, global.1)?)
    };
    Ok(Checkpoint { backbone, local, global })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
