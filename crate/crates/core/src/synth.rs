//! Deterministic long-tail synthetic scenes with ground truth, entity masks
//! and text embeddings.
//!
//! Each point's raw input is `[x, y, z, appearance...]`. Classes own an
//! appearance mean; instances of a class sit somewhere in the room and are
//! made of 2 to 4 spatial sub-blobs that become the superpoints. Point
//! counts per class follow a Zipf law.
//!
//! Random streams are ChaCha8 keyed by `(seed, scene_index, stream)`, so
//! scenes can be generated independently and in any order.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cluster::kmeans;
use crate::data::{
    write_corpus_scenes, write_entity_bank, EntityRecord, FeatureMatrix, LabelVector, SceneBundle, SuperpointPartition,
};
use crate::error::{Error, Result};

/// Number of leading spatial columns in every synthetic point.
pub const SPATIAL_DIMS: usize = 3;
pub const TEXT_EMBEDDING_DIM: usize = 512;
/// Norm of the perturbation that turns a class embedding into an alias.
pub const ALIAS_PERTURBATION: f64 = 0.05;

const CLASS_NAMES: [&str; 20] = [
    "wall",
    "floor",
    "cabinet",
    "bed",
    "chair",
    "sofa",
    "table",
    "door",
    "window",
    "bookshelf",
    "picture",
    "counter",
    "desk",
    "curtain",
    "refrigerator",
    "shower curtain",
    "toilet",
    "sink",
    "bathtub",
    "otherfurniture",
];
const ALIAS_ADJECTIVES: [&str; 6] = ["red", "blue", "small", "large", "old", "white"];

/// Scene-independent streams use this in place of a scene index.
const SHARED: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    ClassMeans,
    TextEmbeddings,
    DistillProjection,
    Layout,
    Points,
    Superpoints,
    Entities,
}

fn stream_rng(seed: u64, scene: u64, stream: Stream) -> ChaCha8Rng {
    // splitmix-style mixing of the seed and scene index into the key
    let mut z = seed ^ scene.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub points_per_scene: usize,
    pub n_scenes: usize,
    pub zipf_exponent: f64,
    /// Total raw input width, spatial columns included.
    pub input_dim: usize,
    /// Minimum distance between class appearance means.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub entity_alias_rate: f64,
    pub seed: u64,
    /// Side length of the cubic room instances are placed in.
    pub spatial_extent: f64,
    /// Width of the distillation targets; 0 disables them.
    pub distill_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            points_per_scene: 2000,
            n_scenes: 10,
            zipf_exponent: 1.2,
            input_dim: 12,
            class_separation: 1.0,
            noise_sigma: 0.1,
            entity_alias_rate: 0.3,
            seed: 0,
            spatial_extent: 8.0,
            distill_dim: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return fail(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.points_per_scene < self.n_classes {
            return fail(format!(
                "points_per_scene ({}) must be >= n_classes ({})",
                self.points_per_scene, self.n_classes
            ));
        }
        if self.n_scenes == 0 {
            return fail("n_scenes must be >= 1".into());
        }
        if self.input_dim <= SPATIAL_DIMS {
            return fail(format!("input_dim must exceed {SPATIAL_DIMS}, got {}", self.input_dim));
        }
        if !(self.zipf_exponent >= 0.0) || !self.zipf_exponent.is_finite() {
            return fail(format!("zipf_exponent must be >= 0, got {}", self.zipf_exponent));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return fail(format!("class_separation must be > 0, got {}", self.class_separation));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.entity_alias_rate) {
            return fail(format!("entity_alias_rate must be in [0,1], got {}", self.entity_alias_rate));
        }
        if !(self.spatial_extent >= 0.0) || !self.spatial_extent.is_finite() {
            return fail(format!("spatial_extent must be >= 0, got {}", self.spatial_extent));
        }
        Ok(())
    }

    pub fn class_name(&self, c: usize) -> String {
        if self.n_classes <= CLASS_NAMES.len() {
            CLASS_NAMES[c].to_string()
        } else {
            format!("object {c}")
        }
    }
}

/// Zipf-shaped integer counts summing to `total`: `total * (c+1)^-exponent / Z`
/// rounded by largest remainder (ties to the lower class), then any class
/// left at zero is lifted to 1 at the expense of the most frequent class.
pub fn zipf_class_counts(n_classes: usize, exponent: f64, total: usize) -> Result<Vec<usize>> {
    if n_classes == 0 || total < n_classes {
        return Err(Error::Config(format!("cannot spread {total} points over {n_classes} classes with one each")));
    }
    let weights: Vec<f64> = (0..n_classes).map(|c| ((c + 1) as f64).powf(-exponent)).collect();
    let z: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| total as f64 * w / z).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = total.saturating_sub(counts.iter().sum::<usize>());
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    for c in 0..n_classes {
        if counts[c] == 0 {
            let donor = (0..n_classes).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            counts[donor] -= 1;
            counts[c] = 1;
        }
    }
    Ok(counts)
}

/// Appearance means with pairwise distance at least `class_separation`:
/// scaled one-hot vectors when there are enough appearance columns, else
/// random directions rescaled to the required minimum distance.
fn class_means(cfg: &SynthConfig) -> Array2<f64> {
    let dims = cfg.input_dim - SPATIAL_DIMS;
    let k = cfg.n_classes;
    if dims >= k {
        let scale = cfg.class_separation / std::f64::consts::SQRT_2;
        return Array2::from_shape_fn((k, dims), |(c, d)| if c == d { scale } else { 0.0 });
    }
    let mut rng = stream_rng(cfg.seed, SHARED, Stream::ClassMeans);
    let mut m = Array2::from_shape_fn((k, dims), |_| rng.sample::<f64, _>(StandardNormal));
    let mut min_d = f64::INFINITY;
    for i in 0..k {
        for j in 0..i {
            let d = (&m.row(i) - &m.row(j)).mapv(|v| v * v).sum().sqrt();
            min_d = min_d.min(d);
        }
    }
    if min_d > 0.0 {
        m *= cfg.class_separation / min_d;
    }
    m
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Fixed random unit vector per class, shared by every scene.
pub fn class_text_embeddings(cfg: &SynthConfig) -> Array2<f64> {
    let mut rng = stream_rng(cfg.seed, SHARED, Stream::TextEmbeddings);
    let mut out = Array2::zeros((cfg.n_classes, TEXT_EMBEDDING_DIM));
    for c in 0..cfg.n_classes {
        out.row_mut(c).assign(&random_unit(&mut rng, TEXT_EMBEDDING_DIM));
    }
    out
}

/// Fixed nonlinear teacher `tanh(W x + b)` standing in for unprojected 2D
/// features.
fn distill_teacher(cfg: &SynthConfig) -> (Array2<f64>, Array1<f64>) {
    let mut rng = stream_rng(cfg.seed, SHARED, Stream::DistillProjection);
    let scale = 1.0 / (cfg.input_dim as f64).sqrt();
    let w = Array2::from_shape_fn((cfg.distill_dim, cfg.input_dim), |_| scale * rng.sample::<f64, _>(StandardNormal));
    let b = Array1::from_shape_fn(cfg.distill_dim, |_| 0.5 + rng.random::<f64>());
    (w, b)
}

/// Instances per class in a scene: one per 300 points, between 1 and 3.
fn instances_for(count: usize) -> usize {
    (count / 300).clamp(1, 3)
}

pub fn entity_id(scene_index: usize, local: usize) -> u64 {
    ((scene_index as u64) << 20) | local as u64
}

pub fn scene_name(scene_index: usize) -> String {
    format!("scene_{scene_index:04}")
}

/// One synthetic scene and the entities observed in it.
pub fn generate_scene(cfg: &SynthConfig, scene_index: usize) -> Result<(SceneBundle, Vec<EntityRecord>)> {
    cfg.validate()?;
    let s = scene_index as u64;
    let counts = zipf_class_counts(cfg.n_classes, cfg.zipf_exponent, cfg.points_per_scene)?;
    let means = class_means(cfg);
    let text = class_text_embeddings(cfg);
    let scene_id = scene_name(scene_index);

    let mut layout = stream_rng(cfg.seed, s, Stream::Layout);
    let mut noise = stream_rng(cfg.seed, s, Stream::Points);
    let mut sp_rng = stream_rng(cfg.seed, s, Stream::Superpoints);
    let mut ent_rng = stream_rng(cfg.seed, s, Stream::Entities);

    let n = cfg.points_per_scene;
    let d = cfg.input_dim;
    let mut points = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut superpoints: Vec<u32> = Vec::with_capacity(n);
    let mut entities = Vec::new();
    let mut next_sp = 0u32;
    let mut row = 0usize;

    for (c, &count) in counts.iter().enumerate() {
        let n_inst = instances_for(count);
        for inst in 0..n_inst {
            let inst_points = count / n_inst + usize::from(inst < count % n_inst);
            let centre: Vec<f64> = (0..SPATIAL_DIMS).map(|_| layout.random::<f64>() * cfg.spatial_extent).collect();
            let n_sub = layout.random_range(2..=4usize).min(inst_points);
            let sub_centres: Vec<Vec<f64>> = (0..n_sub)
                .map(|_| centre.iter().map(|x| x + (layout.random::<f64>() - 0.5) * 0.2 * cfg.spatial_extent).collect())
                .collect();

            let start = row;
            for p in 0..inst_points {
                let sub = &sub_centres[p % n_sub];
                for j in 0..d {
                    let base = if j < SPATIAL_DIMS { sub[j] } else { means[[c, j - SPATIAL_DIMS]] };
                    points[[row, j]] = base + cfg.noise_sigma * noise.sample::<f64, _>(StandardNormal);
                }
                labels.push(c as i32);
                row += 1;
            }

            let xyz = points.slice(ndarray::s![start..row, ..SPATIAL_DIMS]).to_owned();
            let km = kmeans(xyz.view(), n_sub, sp_rng.random(), 50)?;
            let mut dense = vec![u32::MAX; n_sub];
            for &a in &km.assignments {
                if dense[a] == u32::MAX {
                    dense[a] = next_sp;
                    next_sp += 1;
                }
                superpoints.push(dense[a]);
            }

            let mask: Vec<u64> = (start as u64..row as u64).collect();
            let local = entities.len();
            entities.push(EntityRecord {
                entity_id: entity_id(scene_index, local),
                text: cfg.class_name(c),
                text_embedding: text.row(c).iter().map(|&v| v as f32).collect(),
                masks: vec![(scene_id.clone(), mask.clone())],
            });
            if ent_rng.random::<f64>() < cfg.entity_alias_rate {
                let adj = ALIAS_ADJECTIVES.choose(&mut ent_rng).unwrap();
                let emb = &text.row(c) + &(random_unit(&mut ent_rng, TEXT_EMBEDDING_DIM) * ALIAS_PERTURBATION);
                entities.push(EntityRecord {
                    entity_id: entity_id(scene_index, local + 1),
                    text: format!("{adj} {}", cfg.class_name(c)),
                    text_embedding: emb.iter().map(|&v| v as f32).collect(),
                    masks: vec![(scene_id.clone(), mask)],
                });
            }
        }
    }

    let distill_targets = if cfg.distill_dim > 0 {
        let (w, b) = distill_teacher(cfg);
        let t = (points.dot(&w.t()) + &b).mapv(f64::tanh);
        Some(FeatureMatrix::from_array(t.view())?)
    } else {
        None
    };

    let scene = SceneBundle {
        scene_id,
        points: FeatureMatrix::from_array(points.view())?,
        superpoints: SuperpointPartition::new(superpoints)?,
        distill_targets,
        gt_labels: Some(LabelVector::new(labels)?),
    };
    scene.validate()?;
    Ok((scene, entities))
}

/// All scenes of a corpus plus the consolidated entity list.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub scenes: Vec<SceneBundle>,
    pub entities: Vec<EntityRecord>,
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    let mut entities = Vec::new();
    for i in 0..cfg.n_scenes {
        let (scene, ents) = generate_scene(cfg, i)?;
        scenes.push(scene);
        entities.extend(ents);
    }
    Ok(Corpus { scenes, entities })
}

/// Generates a corpus and writes `scenes/`, `bank/`, `manifest.tsv` and the
/// corpus-wide `labels.ltlb` under `dir`.
pub fn write_corpus(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let corpus = generate_corpus(cfg)?;
    write_corpus_scenes(dir, &corpus.scenes)?;
    write_entity_bank(dir.join("bank"), &corpus.entities)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { n_classes: 4, points_per_scene: 400, n_scenes: 3, input_dim: 6, ..SynthConfig::default() }
    }

    #[test]
    fn zipf_examples() {
        assert_eq!(zipf_class_counts(4, 0.0, 100).unwrap(), vec![25, 25, 25, 25]);
        assert_eq!(zipf_class_counts(2, 1.0, 30).unwrap(), vec![20, 10]);
        assert!(matches!(zipf_class_counts(5, 1.0, 3), Err(Error::Config(_))));
        assert_eq!(zipf_class_counts(3, 5.0, 3).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn noise_free_scene_geometry() {
        let cfg = SynthConfig {
            n_classes: 2,
            points_per_scene: 60,
            input_dim: 5,
            class_separation: 10.0,
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let (scene, _) = generate_scene(&cfg, 0).unwrap();
        let x = scene.points.to_array();
        let labels = scene.gt_labels.as_ref().unwrap().as_slice();
        let sp = scene.superpoints.assignment();
        for i in 0..x.nrows() {
            for j in 0..i {
                let d = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
                if labels[i] != labels[j] {
                    assert!(d >= 10.0 - 1e-5, "cross-class distance {d}");
                } else if sp[i] == sp[j] {
                    assert_eq!(d, 0.0);
                }
            }
        }
    }

    #[test]
    fn alias_rate_controls_entity_count() {
        for (rate, factor) in [(0.0, 1), (1.0, 2)] {
            let cfg = SynthConfig { entity_alias_rate: rate, ..small_cfg() };
            let counts = zipf_class_counts(cfg.n_classes, cfg.zipf_exponent, cfg.points_per_scene).unwrap();
            let instances: usize = counts.iter().map(|&c| instances_for(c)).sum();
            let (_, ents) = generate_scene(&cfg, 1).unwrap();
            assert_eq!(ents.len(), factor * instances);
        }
    }

    #[test]
    fn masks_stay_inside_one_class() {
        let cfg = SynthConfig { entity_alias_rate: 0.5, ..small_cfg() };
        let (scene, ents) = generate_scene(&cfg, 2).unwrap();
        let labels = scene.gt_labels.as_ref().unwrap().as_slice();
        for e in &ents {
            e.validate().unwrap();
            let (_, idx) = &e.masks[0];
            let c = labels[idx[0] as usize];
            assert!(idx.iter().all(|&i| labels[i as usize] == c));
        }
    }

    #[test]
    fn superpoints_never_cross_classes() {
        let (scene, _) = generate_scene(&small_cfg(), 0).unwrap();
        let labels = scene.gt_labels.as_ref().unwrap().as_slice();
        let mut class_of_sp = vec![None; scene.superpoints.n_superpoints()];
        for (&sp, &l) in scene.superpoints.assignment().iter().zip(labels) {
            let slot = &mut class_of_sp[sp as usize];
            assert!(slot.is_none_or(|c| c == l));
            *slot = Some(l);
        }
    }

    #[test]
    fn single_scene_corpus_matches_scene() {
        let cfg = SynthConfig { n_scenes: 1, ..small_cfg() };
        let corpus = generate_corpus(&cfg).unwrap();
        let (scene, ents) = generate_scene(&cfg, 0).unwrap();
        assert_eq!(corpus.scenes, vec![scene]);
        assert_eq!(corpus.entities, ents);
    }

    #[test]
    fn aggregate_histogram_tracks_zipf() {
        let cfg =
            SynthConfig { n_classes: 8, points_per_scene: 500, n_scenes: 10, input_dim: 12, ..SynthConfig::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let mut hist = vec![0usize; 8];
        for s in &corpus.scenes {
            for &l in s.gt_labels.as_ref().unwrap().as_slice() {
                hist[l as usize] += 1;
            }
        }
        let expect = zipf_class_counts(8, cfg.zipf_exponent, 5000).unwrap();
        for (h, e) in hist.iter().zip(&expect) {
            assert!(h.abs_diff(*e) <= cfg.n_scenes, "{hist:?} vs {expect:?}");
        }
    }

    #[test]
    fn tail_ratio_follows_power_law() {
        // rarest/most frequent tracks n^-s; it falls under 5% once n^s > 20
        for (n, s) in [(8usize, 1.0f64), (8, 1.2), (8, 1.5), (12, 1.3)] {
            let counts = zipf_class_counts(n, s, 20_000).unwrap();
            let ratio = counts[n - 1] as f64 / counts[0] as f64;
            assert!((ratio - (n as f64).powf(-s)).abs() < 2e-3);
            assert_eq!(ratio < 0.05, (n as f64).powf(s) > 20.0);
        }
    }

    #[test]
    fn distill_targets_have_requested_width() {
        let cfg = SynthConfig { distill_dim: 16, ..small_cfg() };
        let (scene, _) = generate_scene(&cfg, 0).unwrap();
        let t = scene.distill_targets.unwrap();
        assert_eq!((t.rows(), t.cols()), (400, 16));
    }

    #[test]
    fn corpora_are_byte_identical() {
        let cfg = small_cfg();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(&cfg, a.path()).unwrap();
        write_corpus(&cfg, b.path()).unwrap();
        let files = |root: &Path| {
            let mut v = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(p) = stack.pop() {
                for e in std::fs::read_dir(&p).unwrap() {
                    let e = e.unwrap().path();
                    if e.is_dir() {
                        stack.push(e);
                    } else {
                        v.push((e.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&e).unwrap()));
                    }
                }
            }
            v.sort();
            v
        };
        let fa = files(a.path());
        assert!(!fa.is_empty());
        assert_eq!(fa, files(b.path()));
        let back = crate::data::read_corpus_scenes(a.path()).unwrap();
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig { n_classes: 1, ..small_cfg() }.validate().is_err());
        assert!(SynthConfig { points_per_scene: 3, ..small_cfg() }.validate().is_err());
        assert!(SynthConfig { entity_alias_rate: 1.5, ..small_cfg() }.validate().is_err());
    }
}
