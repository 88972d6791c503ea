//! The plain learning-by-clustering loop (single-level Ward pseudo-labels and
//! one cross-entropy head), written out directly as a reference.

use ndarray::Array2;

use super::backbone::{backbone_backward, Backbone};
use super::loss::head_ce_loss;
use super::optim::{poly_lr, AdamW};
use super::pipeline::{apply_backbone_step, apply_head_step, epoch_batches, infer_scenes, stack_points};
use super::{sub_seed, SeedTag, TrainConfig};
use crate::cluster::{multi_granularity_labels_capped, GranularitySet};
use crate::data::{pool_by_superpoint, SceneBundle};
use crate::error::{Error, Result};

/// Mean head loss of every epoch. `cfg.granularities` must hold one level.
pub fn run_baseline(cfg: &TrainConfig, scenes: &[SceneBundle]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let &[k] = cfg.granularities.levels() else {
        return Err(Error::Config(format!("the baseline uses one granularity, got {}", cfg.granularities)));
    };
    let level = GranularitySet::new(vec![k])?;
    let first = scenes.first().ok_or_else(|| Error::Data("corpus has no scenes".into()))?;
    let mut backbone =
        Backbone::new(first.points.cols(), &cfg.hidden, cfg.feature_dim, sub_seed(cfg.seed, SeedTag::Backbone, 0))?;
    let mut opt = AdamW::new(cfg.adamw);
    let total_steps = cfg.epochs * scenes.len().div_ceil(cfg.batch_scenes);
    let mut step = 0;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut round = 0;
    while losses.len() < cfg.epochs {
        // cluster pooled superpoint features; centroids become the head
        let feats = infer_scenes(&backbone, scenes, 1)?;
        let mut rows = Vec::new();
        let mut offsets = Vec::new();
        for (s, f) in scenes.iter().zip(&feats) {
            offsets.push(rows.len());
            let pooled = pool_by_superpoint(f.view(), &s.superpoints)?;
            rows.extend(pooled.outer_iter().map(|r| r.to_owned()));
        }
        let c = backbone.output_dim();
        let sp = Array2::from_shape_fn((rows.len(), c), |(i, j)| rows[i][j]);
        let cut = multi_granularity_labels_capped(
            sp.view(),
            &level,
            cfg.superpoint_cap,
            sub_seed(cfg.seed, SeedTag::Cluster, round),
        )?
        .remove(0);
        let mut head = cut.centroids;
        let mut head_opt = AdamW::new(cfg.adamw);
        let point_labels: Vec<Vec<i32>> = scenes
            .iter()
            .zip(&offsets)
            .map(|(s, &o)| s.superpoints.assignment().iter().map(|&a| cut.labels[o + a as usize] as i32).collect())
            .collect();

        for _ in 0..cfg.recluster_every {
            let epoch = losses.len();
            if epoch == cfg.epochs {
                break;
            }
            let batches = epoch_batches(scenes.len(), cfg.batch_scenes, cfg.seed, epoch);
            let mut sum = 0.0;
            for batch in &batches {
                let x = stack_points(scenes, batch);
                let y: Vec<i32> = batch.iter().flat_map(|&s| point_labels[s].iter().copied()).collect();
                let cache = backbone.forward(x.view())?;
                let (loss, g_feat, g_head) = head_ce_loss(cache.output.view(), head.view(), &y)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite baseline loss at step {step}")));
                }
                let grads = backbone_backward(&backbone, &cache, g_feat.view())?;
                let lr = poly_lr(step, total_steps, cfg);
                apply_backbone_step(&mut opt, &mut backbone, &grads, lr);
                apply_head_step(&mut head_opt, &mut [&mut head], &[g_head], lr);
                sum += loss;
                step += 1;
            }
            losses.push(sum / batches.len() as f64);
        }
        round += 1;
    }
    Ok(losses)
}
