//! Entity-level semantic bank: mask aggregation, Gram alignment against text
//! embeddings, and the class-balanced entity contrastive loss.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EntityRecord, SceneBundle};
use crate::error::{Error, Result};
use crate::spectral::l2_normalize_rows;

/// Aligned entity prototypes plus the inputs they were aligned against.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBank {
    /// `T x C` aligned prototypes.
    pub prototypes: Array2<f64>,
    pub entity_ids: Vec<u64>,
    /// `T x D` text embeddings, rows unit-normalized.
    pub text_embeddings: Array2<f64>,
    pub alignment_loss_trace: Vec<f64>,
}

impl SemanticBank {
    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    /// Unit-normalized prototypes for the sampled entities, in batch order.
    pub fn batch_prototypes(&self, batch: &EntityBatchSample) -> Array2<f64> {
        let rows = Array2::from_shape_fn((batch.entity_indices.len(), self.prototypes.ncols()), |(r, c)| {
            self.prototypes[[batch.entity_indices[r], c]]
        });
        l2_normalize_rows(rows.view())
    }
}

/// Mask-averaged backbone features per entity: the mean over scenes where the
/// entity has a mask of the mean feature over the mask's points.
///
/// Masks that name scenes outside `scenes` are ignored.
pub fn aggregate_entity_features(
    scenes: &[SceneBundle],
    features: &[Array2<f64>],
    entities: &[EntityRecord],
) -> Result<Array2<f64>> {
    if scenes.len() != features.len() {
        return Err(Error::Shape(format!("{} scenes but {} feature matrices", scenes.len(), features.len())));
    }
    let c = features.first().map(|f| f.ncols()).ok_or_else(|| Error::Data("no scenes".into()))?;
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for (i, (s, f)) in scenes.iter().zip(features).enumerate() {
        if f.nrows() != s.n_points() || f.ncols() != c {
            return Err(Error::Shape(format!(
                "scene {} has {} points but features are {:?}",
                s.scene_id,
                s.n_points(),
                f.dim()
            )));
        }
        by_id.insert(s.scene_id.as_str(), i);
    }

    let mut out = Array2::<f64>::zeros((entities.len(), c));
    for (t, e) in entities.iter().enumerate() {
        let mut acc = Array1::<f64>::zeros(c);
        let mut n_scenes = 0usize;
        for (scene_id, idx) in &e.masks {
            let Some(&si) = by_id.get(scene_id.as_str()) else { continue };
            if idx.is_empty() {
                continue;
            }
            let f = &features[si];
            let mut mean = Array1::<f64>::zeros(c);
            for &p in idx {
                let p = p as usize;
                if p >= f.nrows() {
                    return Err(Error::Data(format!(
                        "entity {} mask index {p} out of range for scene {scene_id}",
                        e.entity_id
                    )));
                }
                mean += &f.row(p);
            }
            acc += &(mean / idx.len() as f64);
            n_scenes += 1;
        }
        if n_scenes == 0 {
            return Err(Error::EmptyMask { entity_id: e.entity_id });
        }
        out.row_mut(t).assign(&(acc / n_scenes as f64));
    }
    Ok(out)
}

/// `G(X) = X X^T`.
pub fn gram(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.dot(&x.t())
}

/// `|G(F) - target|_F^2` and its gradient `4 (G(F) - target) F`.
pub fn gram_loss(f: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let diff = gram(f) - target;
    let loss = diff.iter().map(|v| v * v).sum();
    let grad = diff.dot(&f) * 4.0;
    (loss, grad)
}

fn gram_loss_value(f: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> f64 {
    (gram(f) - target).iter().map(|v| v * v).sum()
}

/// Smallest step tried before the line search gives up.
const MIN_STEP: f64 = 1e-30;

/// Gradient descent on the Gram mismatch with a halving line search.
/// Text embedding rows are unit-normalized first.
pub fn align_gram(
    init: ArrayView2<'_, f64>,
    text_embeddings: ArrayView2<'_, f64>,
    entity_ids: Vec<u64>,
    steps: usize,
    lr: f64,
) -> Result<SemanticBank> {
    let t = init.nrows();
    if text_embeddings.nrows() != t || entity_ids.len() != t {
        return Err(Error::Shape(format!(
            "{} point prototypes, {} text embeddings, {} ids",
            t,
            text_embeddings.nrows(),
            entity_ids.len()
        )));
    }
    if steps == 0 || !(lr > 0.0) {
        return Err(Error::Config("alignment needs steps >= 1 and lr > 0".into()));
    }
    let text = l2_normalize_rows(text_embeddings);
    let target = gram(text.view());

    let mut f = init.to_owned();
    let (mut loss, _) = gram_loss(f.view(), target.view());
    let initial = loss;
    let mut trace = vec![loss];
    let mut step_size = lr;
    for step in 0..steps {
        let (_, grad) = gram_loss(f.view(), target.view());
        let accepted = loop {
            let cand = &f - &(&grad * step_size);
            let cand_loss = gram_loss_value(cand.view(), target.view());
            if !cand_loss.is_finite() || cand_loss > 1e3 * initial.max(f64::MIN_POSITIVE) {
                if step_size < MIN_STEP {
                    return Err(Error::Divergence { step, loss: cand_loss });
                }
            } else if cand_loss <= loss {
                break Some((cand, cand_loss));
            }
            step_size *= 0.5;
            if step_size < MIN_STEP {
                break None;
            }
        };
        let Some((cand, cand_loss)) = accepted else {
            log::debug!("gram alignment stalled at step {step}, loss {loss:e}");
            break;
        };
        f = cand;
        loss = cand_loss;
        trace.push(loss);
        if loss == 0.0 {
            break;
        }
    }
    log::info!("gram alignment: loss {initial:.4e} -> {loss:.4e} over {} steps", trace.len() - 1);
    Ok(SemanticBank { prototypes: f, entity_ids, text_embeddings: text, alignment_loss_trace: trace })
}

/// `w_c = 1 / sqrt(n_c)` for each class count.
pub fn balance_weights(class_counts: &[usize]) -> Vec<f64> {
    class_counts.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect()
}

/// A uniformly sampled subset of bank entities with per-entity balance weights.
/// Every other sampled prototype serves as a negative for a given anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityBatchSample {
    /// Indices into the bank, ascending.
    pub entity_indices: Vec<usize>,
    /// Balance weight of each sampled entity, in batch order.
    pub weights: Vec<f64>,
}

impl EntityBatchSample {
    pub fn len(&self) -> usize {
        self.entity_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_indices.is_empty()
    }
}

/// Samples `batch_size` of `n_entities` without replacement. Without a class
/// hint each entity is its own class, so every weight is 1.
pub fn sample_entity_batch(
    n_entities: usize,
    batch_size: usize,
    seed: u64,
    class_hint: Option<&[usize]>,
) -> Result<EntityBatchSample> {
    if batch_size > n_entities {
        return Err(Error::Config(format!("entity batch size {batch_size} exceeds bank size {n_entities}")));
    }
    if let Some(h) = class_hint {
        if h.len() != n_entities {
            return Err(Error::Shape(format!("class hint covers {} of {n_entities} entities", h.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entity_indices = index::sample(&mut rng, n_entities, batch_size).into_vec();
    entity_indices.sort_unstable();

    let class_of = |i: usize| class_hint.map_or(i, |h| h[i]);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in &entity_indices {
        *counts.entry(class_of(i)).or_default() += 1;
    }
    let weights = entity_indices.iter().map(|&i| balance_weights(&[counts[&class_of(i)]])[0]).collect();
    Ok(EntityBatchSample { entity_indices, weights })
}

/// Weighted InfoNCE over dot-product similarities.
///
/// `anchors` row `a` pairs with prototype row `slots[a]` as its positive;
/// every other prototype row is a negative. Returns the mean loss over
/// anchors and its gradient with respect to `anchors`.
pub fn entity_contrastive_loss(
    anchors: ArrayView2<'_, f64>,
    slots: &[usize],
    prototypes: ArrayView2<'_, f64>,
    weights: &[f64],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let a_n = anchors.nrows();
    if slots.len() != a_n || weights.len() != prototypes.nrows() || anchors.ncols() != prototypes.ncols() {
        return Err(Error::Shape(format!(
            "anchors {:?}, {} slots, prototypes {:?}, {} weights",
            anchors.dim(),
            slots.len(),
            prototypes.dim(),
            weights.len()
        )));
    }
    if let Some(&bad) = slots.iter().find(|&&s| s >= prototypes.nrows()) {
        return Err(Error::Shape(format!("slot {bad} outside batch of {}", prototypes.nrows())));
    }
    if a_n == 0 {
        return Ok((0.0, Array2::zeros(anchors.dim())));
    }
    let logits = anchors.dot(&prototypes.t()) / tau;
    let (loss, dlogits) = weighted_info_nce(logits.view(), slots, weights);
    Ok((loss, dlogits.dot(&prototypes) / tau))
}

/// Mean weighted `-log softmax(logits)[slot]` per row, with the gradient
/// with respect to the logits. Log-sum-exp is max-shifted.
fn weighted_info_nce(logits: ArrayView2<'_, f64>, slots: &[usize], weights: &[f64]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut dlogits = Array2::<f64>::zeros(logits.dim());
    let mut loss = 0.0;
    for (a, row) in logits.outer_iter().enumerate() {
        let pos = slots[a];
        let w = weights[pos];
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += w * (lse - row[pos]);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp() - if j == pos { 1.0 } else { 0.0 };
            dlogits[[a, j]] = w * p / n;
        }
    }
    (loss / n, dlogits)
}
