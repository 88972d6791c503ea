//! Domain types and the binary file formats shared by every stage.
//!
//! All on-disk reals are `f32` little-endian. In memory, numeric work happens
//! on `ndarray::Array2<f64>`; [`FeatureMatrix`] is the storage type that
//! round-trips through files bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const LTFM_MAGIC: &[u8; 4] = b"LTFM";
pub const LTSP_MAGIC: &[u8; 4] = b"LTSP";
pub const LTLB_MAGIC: &[u8; 4] = b"LTLB";
pub const FORMAT_VERSION: u32 = 1;

/// Dense row-major `f32` matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("data length {} does not match {rows}x{cols}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at row {}, col {}", pos / cols, pos % cols)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Converts from a computation matrix, rounding to `f32`.
    pub fn from_array(a: ArrayView2<'_, f64>) -> Result<Self> {
        let data = a.iter().map(|&v| v as f32).collect();
        Self::new(a.nrows(), a.ncols(), data)
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| self.data[r * self.cols + c] as f64)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Point-to-superpoint assignment with dense ids `0..n_superpoints`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointPartition {
    assignment: Vec<u32>,
    n_superpoints: usize,
}

impl SuperpointPartition {
    /// Builds a partition from ids that must already be dense.
    pub fn new(assignment: Vec<u32>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::Shape("superpoint partition has no points".into()));
        }
        let n = assignment.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut seen = vec![false; n];
        for &id in &assignment {
            seen[id as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("superpoint ids are not dense: id {missing} is unused")));
        }
        Ok(Self { assignment, n_superpoints: n })
    }

    /// Re-densifies arbitrary ids in order of increasing original id.
    /// Returns the partition and `original[dense_id]`.
    pub fn from_raw_ids(raw: &[u32]) -> Result<(Self, Vec<u32>)> {
        let mut original: Vec<u32> = raw.to_vec();
        original.sort_unstable();
        original.dedup();
        let lookup: BTreeMap<u32, u32> = original.iter().enumerate().map(|(dense, &id)| (id, dense as u32)).collect();
        let dense = raw.iter().map(|id| lookup[id]).collect();
        Ok((Self::new(dense)?, original))
    }

    /// Every point its own superpoint.
    pub fn identity(n_points: usize) -> Result<Self> {
        Self::new((0..n_points as u32).collect())
    }

    pub fn n_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_superpoints(&self) -> usize {
        self.n_superpoints
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    /// Number of points in each superpoint.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_superpoints];
        for &id in &self.assignment {
            sizes[id as usize] += 1;
        }
        sizes
    }
}

/// Per-item labels; `-1` marks an ignored item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<i32>);

impl LabelVector {
    pub const IGNORE: i32 = -1;

    pub fn new(labels: Vec<i32>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l < Self::IGNORE) {
            return Err(Error::Data(format!("label {bad} is below -1")));
        }
        Ok(Self(labels))
    }

    pub fn from_usize(labels: &[usize]) -> Self {
        Self(labels.iter().map(|&l| l as i32).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i32> {
        self.0
    }

    /// Number of distinct non-ignored labels.
    pub fn n_distinct(&self) -> usize {
        let mut v: Vec<i32> = self.0.iter().copied().filter(|&l| l >= 0).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

/// One language-described entity and the 3D masks it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityRecord {
    pub entity_id: u64,
    pub text: String,
    pub text_embedding: Vec<f32>,
    /// `(scene_id, sorted unique point indices)`.
    pub masks: Vec<(String, Vec<u64>)>,
}

impl EntityRecord {
    pub fn validate(&self) -> Result<()> {
        let norm: f64 = self.text_embedding.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Data(format!("entity {} has a degenerate text embedding", self.entity_id)));
        }
        if self.text.contains(['\t', '\n', '\r']) {
            return Err(Error::Data(format!("entity {} text contains a tab or newline", self.entity_id)));
        }
        for (scene, idx) in &self.masks {
            if idx.is_empty() {
                return Err(Error::Data(format!("entity {} has an empty mask in scene {scene}", self.entity_id)));
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!(
                    "entity {} mask in scene {scene} is not sorted and unique",
                    self.entity_id
                )));
            }
        }
        Ok(())
    }
}

/// One scene: raw inputs, superpoints and optional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    pub points: FeatureMatrix,
    pub superpoints: SuperpointPartition,
    pub distill_targets: Option<FeatureMatrix>,
    pub gt_labels: Option<LabelVector>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        let n = self.points.rows();
        if self.superpoints.n_points() != n {
            return Err(Error::Shape(format!(
                "scene {}: {} points but {} superpoint assignments",
                self.scene_id,
                n,
                self.superpoints.n_points()
            )));
        }
        if let Some(t) = &self.distill_targets {
            if t.rows() != n {
                return Err(Error::Shape(format!(
                    "scene {}: distill targets have {} rows, expected {n}",
                    self.scene_id,
                    t.rows()
                )));
            }
        }
        if let Some(l) = &self.gt_labels {
            if l.len() != n {
                return Err(Error::Shape(format!("scene {}: {} labels, expected {n}", self.scene_id, l.len())));
            }
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.points.rows()
    }
}

/// Mean of point features per superpoint, accumulated in `f64`.
pub fn pool_by_superpoint(points: ArrayView2<'_, f64>, part: &SuperpointPartition) -> Result<Array2<f64>> {
    if points.nrows() != part.n_points() {
        return Err(Error::Shape(format!(
            "{} feature rows but partition covers {} points",
            points.nrows(),
            part.n_points()
        )));
    }
    let mut out = Array2::<f64>::zeros((part.n_superpoints(), points.ncols()));
    for (row, &sp) in points.outer_iter().zip(part.assignment()) {
        let mut acc = out.row_mut(sp as usize);
        acc += &row;
    }
    for (mut acc, size) in out.outer_iter_mut().zip(part.sizes()) {
        acc /= size as f64;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Binary encoding

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncation(format!(
                "{}: needed {n} bytes at offset {}, only {} remain",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("{}: unsupported version {v}", self.what)));
        }
        Ok(())
    }

    fn count(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > remaining {
            return Err(Error::Truncation(format!(
                "{}: header declares {n} elements but only {remaining} bytes remain",
                self.what
            )));
        }
        Ok(n as usize)
    }

    fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_feature_matrix(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * m.data.len());
    out.extend_from_slice(LTFM_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes one LTFM block from the front of `buf`, returning the bytes consumed.
pub fn decode_feature_matrix_prefix(buf: &[u8]) -> Result<(FeatureMatrix, usize)> {
    let mut r = ByteReader::new(buf, "LTFM");
    r.magic(LTFM_MAGIC)?;
    r.version()?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| Error::Format(format!("LTFM: {rows}x{cols} overflows")))?;
    let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("LTFM: size overflow".into()))?)?;
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((FeatureMatrix::new(rows, cols, data)?, r.position()))
}

pub fn decode_feature_matrix(buf: &[u8]) -> Result<FeatureMatrix> {
    let (m, used) = decode_feature_matrix_prefix(buf)?;
    if used != buf.len() {
        return Err(Error::Format(format!("LTFM: {} trailing bytes after payload", buf.len() - used)));
    }
    Ok(m)
}

pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_feature_matrix(&read_file(path.as_ref())?)
}

pub fn write_feature_matrix(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    write_file(path.as_ref(), &encode_feature_matrix(m))
}

/// Reads an LTSP file, re-densifying ids. Returns the partition and
/// `original[dense_id]`.
pub fn read_superpoints(path: impl AsRef<Path>) -> Result<(SuperpointPartition, Vec<u32>)> {
    let buf = read_file(path.as_ref())?;
    let mut r = ByteReader::new(&buf, "LTSP");
    r.magic(LTSP_MAGIC)?;
    r.version()?;
    let n = r.count(4)?;
    let ids: Vec<u32> = r.take(n * 4)?.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    if !r.is_done() {
        return Err(Error::Format("LTSP: trailing bytes".into()));
    }
    SuperpointPartition::from_raw_ids(&ids)
}

pub fn write_superpoints(path: impl AsRef<Path>, part: &SuperpointPartition) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * part.n_points());
    out.extend_from_slice(LTSP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(part.n_points() as u64).to_le_bytes());
    for id in part.assignment() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    write_file(path.as_ref(), &out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let buf = read_file(path.as_ref())?;
    let mut r = ByteReader::new(&buf, "LTLB");
    r.magic(LTLB_MAGIC)?;
    r.version()?;
    let n = r.count(4)?;
    let labels = r.take(n * 4)?.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect();
    if !r.is_done() {
        return Err(Error::Format("LTLB: trailing bytes".into()));
    }
    LabelVector::new(labels)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelVector) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * labels.len());
    out.extend_from_slice(LTLB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for l in labels.as_slice() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    write_file(path.as_ref(), &out)
}

// ---------------------------------------------------------------------------
// Entity bank directory

/// Per-scene mask file: `(entity_id, point indices)` sorted by entity id.
pub fn encode_scene_masks(entries: &[(u64, &[u64])]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (id, idx) in entries {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(idx.len() as u64).to_le_bytes());
        for i in *idx {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn decode_scene_masks(buf: &[u8]) -> Result<Vec<(u64, Vec<u64>)>> {
    let mut r = ByteReader::new(buf, "mask file");
    r.version()?;
    let n = r.count(16)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let count = r.count(8)?;
        let idx = r.take(count * 8)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((id, idx));
    }
    if !r.is_done() {
        return Err(Error::Format("mask file: trailing bytes".into()));
    }
    Ok(out)
}

/// Writes `entities.tsv`, `embeddings.ltfm` and `masks/<scene>.bin`.
/// Entities are written in ascending id order.
pub fn write_entity_bank(dir: impl AsRef<Path>, entities: &[EntityRecord]) -> Result<()> {
    let dir = dir.as_ref();
    if entities.is_empty() {
        return Err(Error::Data("entity bank is empty".into()));
    }
    let mut sorted: Vec<&EntityRecord> = entities.iter().collect();
    sorted.sort_by_key(|e| e.entity_id);
    if sorted.windows(2).any(|w| w[0].entity_id == w[1].entity_id) {
        return Err(Error::Data("duplicate entity ids".into()));
    }
    let dim = sorted[0].text_embedding.len();
    for e in &sorted {
        e.validate()?;
        if e.text_embedding.len() != dim {
            return Err(Error::Shape(format!(
                "entity {} embedding has {} dims, expected {dim}",
                e.entity_id,
                e.text_embedding.len()
            )));
        }
    }
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    write_file(&dir.join("entities.tsv"), encode_entities_tsv(sorted.iter().copied()).as_bytes())?;

    let emb: Vec<f32> = sorted.iter().flat_map(|e| e.text_embedding.iter().copied()).collect();
    write_feature_matrix(dir.join("embeddings.ltfm"), &FeatureMatrix::new(sorted.len(), dim, emb)?)?;

    let mut per_scene: BTreeMap<&str, Vec<(u64, &[u64])>> = BTreeMap::new();
    for e in &sorted {
        for (scene, idx) in &e.masks {
            per_scene.entry(scene.as_str()).or_default().push((e.entity_id, idx.as_slice()));
        }
    }
    for (scene, entries) in per_scene {
        write_file(&masks_dir.join(format!("{scene}.bin")), &encode_scene_masks(&entries))?;
    }
    Ok(())
}

/// `entity_id \t text \t scene_count` lines in the given order.
pub fn encode_entities_tsv<'a>(entities: impl IntoIterator<Item = &'a EntityRecord>) -> String {
    let mut tsv = String::new();
    for e in entities {
        tsv.push_str(&format!("{}\t{}\t{}\n", e.entity_id, e.text, e.masks.len()));
    }
    tsv
}

/// Parsed `entities.tsv` row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityIndexRow {
    pub entity_id: u64,
    pub text: String,
    pub scene_count: usize,
}

pub fn read_entities_tsv(path: impl AsRef<Path>) -> Result<Vec<EntityIndexRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!("{}:{}: expected 3 tab-separated fields", path.display(), lineno + 1)));
        }
        let parse_err = |what: &str| Error::Format(format!("{}:{}: bad {what}", path.display(), lineno + 1));
        rows.push(EntityIndexRow {
            entity_id: fields[0].parse().map_err(|_| parse_err("entity id"))?,
            text: fields[1].to_string(),
            scene_count: fields[2].parse().map_err(|_| parse_err("scene count"))?,
        });
    }
    Ok(rows)
}

/// Reads a bank directory back into entity records (ascending id order).
pub fn read_entity_bank(dir: impl AsRef<Path>) -> Result<Vec<EntityRecord>> {
    let dir = dir.as_ref();
    let index = read_entities_tsv(dir.join("entities.tsv"))?;
    let emb = read_feature_matrix(dir.join("embeddings.ltfm"))?;
    if emb.rows() != index.len() {
        return Err(Error::Shape(format!(
            "entities.tsv lists {} entities but embeddings.ltfm has {} rows",
            index.len(),
            emb.rows()
        )));
    }
    let mut records: Vec<EntityRecord> = index
        .iter()
        .enumerate()
        .map(|(i, row)| EntityRecord {
            entity_id: row.entity_id,
            text: row.text.clone(),
            text_embedding: emb.row(i).to_vec(),
            masks: Vec::new(),
        })
        .collect();
    let pos: BTreeMap<u64, usize> = records.iter().enumerate().map(|(i, r)| (r.entity_id, i)).collect();

    let masks_dir = dir.join("masks");
    let mut files: Vec<_> = fs::read_dir(&masks_dir)
        .map_err(|e| Error::io(&masks_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    for file in files {
        let scene = file
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Format(format!("bad mask file name {}", file.display())))?
            .to_string();
        for (id, idx) in decode_scene_masks(&read_file(&file)?)? {
            let &i = pos
                .get(&id)
                .ok_or_else(|| Error::Data(format!("mask file {} names unknown entity {id}", file.display())))?;
            records[i].masks.push((scene.clone(), idx));
        }
    }
    for (rec, row) in records.iter().zip(&index) {
        if rec.masks.len() != row.scene_count {
            return Err(Error::Data(format!(
                "entity {} lists {} scenes but {} masks were found",
                rec.entity_id,
                row.scene_count,
                rec.masks.len()
            )));
        }
        rec.validate()?;
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Scenes and corpora

pub fn write_scene(dir: impl AsRef<Path>, scene: &SceneBundle) -> Result<()> {
    let dir = dir.as_ref();
    scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_feature_matrix(dir.join("points.ltfm"), &scene.points)?;
    write_superpoints(dir.join("superpoints.ltsp"), &scene.superpoints)?;
    if let Some(l) = &scene.gt_labels {
        write_labels(dir.join("labels.ltlb"), l)?;
    }
    if let Some(t) = &scene.distill_targets {
        write_feature_matrix(dir.join("distill.ltfm"), t)?;
    }
    Ok(())
}

pub fn read_scene(dir: impl AsRef<Path>, scene_id: &str) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let points = read_feature_matrix(dir.join("points.ltfm"))?;
    let (superpoints, _) = read_superpoints(dir.join("superpoints.ltsp"))?;
    let labels_path = dir.join("labels.ltlb");
    let gt_labels = if labels_path.exists() { Some(read_labels(&labels_path)?) } else { None };
    let distill_path = dir.join("distill.ltfm");
    let distill_targets = if distill_path.exists() { Some(read_feature_matrix(&distill_path)?) } else { None };
    let scene = SceneBundle { scene_id: scene_id.to_string(), points, superpoints, distill_targets, gt_labels };
    scene.validate()?;
    Ok(scene)
}

/// Writes `scenes/<id>/…`, `manifest.tsv` and the corpus-wide `labels.ltlb`
/// (scene labels concatenated in manifest order) when every scene has labels.
pub fn write_corpus_scenes(dir: impl AsRef<Path>, scenes: &[SceneBundle]) -> Result<()> {
    let dir = dir.as_ref();
    let mut manifest = String::new();
    for s in scenes {
        write_scene(dir.join("scenes").join(&s.scene_id), s)?;
        manifest.push_str(&format!("{}\t{}\n", s.scene_id, s.n_points()));
    }
    write_file(&dir.join("manifest.tsv"), manifest.as_bytes())?;
    if scenes.iter().all(|s| s.gt_labels.is_some()) {
        let all: Vec<i32> =
            scenes.iter().flat_map(|s| s.gt_labels.as_ref().unwrap().as_slice().iter().copied()).collect();
        write_labels(dir.join("labels.ltlb"), &LabelVector::new(all)?)?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| {
            let mut f = line.split('\t');
            let id = f.next().unwrap_or_default().to_string();
            let n = f
                .next()
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}:{}: bad manifest line", path.display(), i + 1)))?;
            Ok((id, n))
        })
        .collect()
}

pub fn read_corpus_scenes(dir: impl AsRef<Path>) -> Result<Vec<SceneBundle>> {
    let dir = dir.as_ref();
    read_manifest(dir.join("manifest.tsv"))?
        .into_iter()
        .map(|(id, n)| {
            let s = read_scene(dir.join("scenes").join(&id), &id)?;
            if s.n_points() != n {
                return Err(Error::Data(format!("manifest says scene {id} has {n} points, file has {}", s.n_points())));
            }
            Ok(s)
        })
        .collect()
}
