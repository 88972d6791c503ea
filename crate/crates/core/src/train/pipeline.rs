//! Pseudo-labelling, the per-epoch optimisation step and the full run.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::{backbone_backward, Backbone, BackboneGrads};
use super::loss::{distill_warmup_loss, head_ce_loss};
use super::model::{write_checkpoint, Branch, Checkpoint, ClusterModel};
use super::optim::{poly_lr, AdamW};
use super::{sub_seed, SeedTag, TrainConfig};
use crate::bank::{aggregate_entity_features, align_gram, entity_contrastive_loss, sample_entity_batch, SemanticBank};
use crate::cluster::{cluster_means, multi_granularity_labels_capped, GranularitySet};
use crate::data::{
    encode_entities_tsv, pool_by_superpoint, read_corpus_scenes, read_entity_bank, write_feature_matrix, write_file,
    write_labels, EntityRecord, FeatureMatrix, LabelVector, SceneBundle, SuperpointPartition,
};
use crate::error::{Error, Result};
use crate::eval::{assign_to_prototypes, confusion, match_and_score, write_report_tsv, EvalReport};
use crate::spectral::{spectral_pass, SpectralPass};

/// Cluster labels of every superpoint at every level, with the heads they
/// initialise.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchLabels {
    pub model: ClusterModel,
    /// `labels[l][s]` is superpoint `s`'s cluster at level `l`.
    pub labels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub local: BranchLabels,
    pub global: Option<BranchLabels>,
}

/// Ward pseudo-labels for both branches. The local branch clusters the
/// pooled backbone features; the global branch clusters `spectral_features`
/// (rows of `V`). Heads of both are means of `superpoint_features` over
/// their clusters.
pub fn build_pseudo_labels(
    superpoint_features: ArrayView2<'_, f64>,
    spectral_features: Option<ArrayView2<'_, f64>>,
    g: &GranularitySet,
    cap: usize,
    seed: u64,
) -> Result<PseudoLabels> {
    let n = superpoint_features.nrows();
    if g.finest() > n {
        return Err(Error::Config(format!("finest granularity {} exceeds the {n} superpoints available", g.finest())));
    }
    let branch = |branch: Branch, x: ArrayView2<'_, f64>| -> Result<BranchLabels> {
        let levels = multi_granularity_labels_capped(x, g, cap, seed)?;
        let heads = levels.iter().map(|l| cluster_means(superpoint_features, &l.labels, l.k)).collect();
        Ok(BranchLabels {
            model: ClusterModel::new(branch, g.clone(), heads)?,
            labels: levels.into_iter().map(|l| l.labels).collect(),
        })
    };
    let local = branch(Branch::Local, superpoint_features)?;
    let global = match spectral_features {
        Some(v) => {
            if v.nrows() != n {
                return Err(Error::Shape(format!("{} spectral rows for {n} superpoints", v.nrows())));
            }
            Some(branch(Branch::Global, v)?)
        }
        None => None,
    };
    Ok(PseudoLabels { local, global })
}

/// Backbone features of every scene, optionally spread over threads.
pub fn infer_scenes(backbone: &Backbone, scenes: &[SceneBundle], threads: usize) -> Result<Vec<Array2<f64>>> {
    let run = |s: &SceneBundle| backbone.forward(s.points.to_array().view()).map(|c| c.output);
    if threads <= 1 || scenes.len() <= 1 {
        return scenes.iter().map(run).collect();
    }
    let chunk = scenes.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(scenes.len());
        for h in handles {
            out.extend(h.join().expect("inference thread panicked")?);
        }
        Ok(out)
    })
}

fn pooled_superpoints(scenes: &[SceneBundle], features: &[Array2<f64>]) -> Result<Array2<f64>> {
    let pooled = scenes
        .iter()
        .zip(features)
        .map(|(s, f)| pool_by_superpoint(f.view(), &s.superpoints))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = pooled.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Superpoint labels of one scene broadcast to its points.
fn broadcast(labels: &[usize], offset: usize, part: &SuperpointPartition) -> Vec<i32> {
    part.assignment().iter().map(|&sp| labels[offset + sp as usize] as i32).collect()
}

/// Point-level pseudo-labels: `[branch][level][scene]`.
type PointLabels = Vec<Vec<Vec<Vec<i32>>>>;

fn point_labels(pl: &PseudoLabels, scenes: &[SceneBundle]) -> PointLabels {
    let mut offsets = Vec::with_capacity(scenes.len());
    let mut acc = 0;
    for s in scenes {
        offsets.push(acc);
        acc += s.superpoints.n_superpoints();
    }
    std::iter::once(&pl.local)
        .chain(pl.global.as_ref())
        .map(|b| {
            b.labels
                .iter()
                .map(|lv| scenes.iter().zip(&offsets).map(|(s, &o)| broadcast(lv, o, &s.superpoints)).collect())
                .collect()
        })
        .collect()
}

/// Scene mini-batches of one epoch, in a seeded shuffled order.
pub(crate) fn epoch_batches(n_scenes: usize, batch_scenes: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SeedTag::Shuffle, epoch as u64));
    order.shuffle(&mut rng);
    order.chunks(batch_scenes).map(|c| c.to_vec()).collect()
}

pub(crate) fn stack_points(scenes: &[SceneBundle], batch: &[usize]) -> Array2<f64> {
    let parts: Vec<Array2<f64>> = batch.iter().map(|&s| scenes[s].points.to_array()).collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("scenes share the input width")
}

pub(crate) fn apply_backbone_step(opt: &mut AdamW, backbone: &mut Backbone, grads: &BackboneGrads, lr: f64) {
    let mut tensors: Vec<(&mut [f64], &[f64])> = Vec::new();
    for ((layer, gw), gb) in backbone.layers_mut().iter_mut().zip(&grads.weights).zip(&grads.biases) {
        tensors.push((layer.weight.as_slice_mut().expect("contiguous"), gw.as_slice().expect("contiguous")));
        tensors.push((layer.bias.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous")));
    }
    opt.step(lr, &mut tensors);
}

pub(crate) fn apply_head_step(opt: &mut AdamW, heads: &mut [&mut Array2<f64>], grads: &[Array2<f64>], lr: f64) {
    let mut tensors: Vec<(&mut [f64], &[f64])> = heads
        .iter_mut()
        .zip(grads)
        .map(|(h, g)| (h.as_slice_mut().expect("contiguous"), g.as_slice().expect("contiguous")))
        .collect();
    opt.step(lr, &mut tensors);
}

/// Mean losses of one epoch. `total` is recomputed from the means so that
/// `total = local + global + lambda * entity` holds for the reported values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub local: f64,
    pub global: f64,
    pub entity: f64,
    pub total: f64,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
}

pub fn render_losses_tsv(losses: &[EpochLosses]) -> String {
    let mut out = String::from("epoch\tlocal\tglobal\tentity\ttotal\tlr\n");
    for l in losses {
        writeln!(out, "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}", l.epoch, l.local, l.global, l.entity, l.total, l.lr).unwrap();
    }
    out
}

/// Mutable optimisation state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub backbone: Backbone,
    pub local: ClusterModel,
    pub global: Option<ClusterModel>,
    pub backbone_opt: AdamW,
    pub head_opt: AdamW,
    /// Optimisation steps taken so far, for the schedule.
    pub step: usize,
}

/// Entity masks indexed by scene: `(bank row, point indices)`.
type SceneMasks = Vec<Vec<(usize, Vec<usize>)>>;

fn scene_masks(scenes: &[SceneBundle], entities: &[EntityRecord]) -> SceneMasks {
    let mut out: SceneMasks = vec![Vec::new(); scenes.len()];
    for (t, e) in entities.iter().enumerate() {
        for (scene_id, idx) in &e.masks {
            if let Some(s) = scenes.iter().position(|s| &s.scene_id == scene_id) {
                if !idx.is_empty() {
                    out[s].push((t, idx.iter().map(|&i| i as usize).collect()));
                }
            }
        }
    }
    out
}

/// The bank and what the entity loss needs to use it.
struct EntityContext<'a> {
    bank: &'a SemanticBank,
    masks: SceneMasks,
}

/// Entity loss on one stacked mini-batch: sampled bank entities present in
/// the batch become anchors (mask means, then L2-normalized). Returns the
/// loss and `dL/dF` over the stacked rows, or `None` when no sampled entity
/// is present.
fn entity_step(
    ctx: &EntityContext<'_>,
    features: ArrayView2<'_, f64>,
    batch: &[usize],
    row_offsets: &[usize],
    cfg: &TrainConfig,
    step: usize,
) -> Result<Option<(f64, Array2<f64>)>> {
    let t = ctx.bank.len();
    let size = cfg.entity_batch.min(t);
    let sample = sample_entity_batch(t, size, sub_seed(cfg.seed, SeedTag::Entity, step as u64), None)?;
    let mut slot_of = vec![usize::MAX; t];
    for (slot, &e) in sample.entity_indices.iter().enumerate() {
        slot_of[e] = slot;
    }
    // per sampled entity: the (row offset, mask) parts inside this batch
    let mut parts: Vec<Vec<(usize, &[usize])>> = vec![Vec::new(); size];
    for (&s, &off) in batch.iter().zip(row_offsets) {
        for (e, idx) in &ctx.masks[s] {
            if slot_of[*e] != usize::MAX {
                parts[slot_of[*e]].push((off, idx.as_slice()));
            }
        }
    }
    let present: Vec<usize> = (0..size).filter(|&s| !parts[s].is_empty()).collect();
    if present.is_empty() {
        return Ok(None);
    }
    let c = features.ncols();
    let mut raw = Array2::<f64>::zeros((present.len(), c));
    for (a, &slot) in present.iter().enumerate() {
        let mut acc = Array1::<f64>::zeros(c);
        for &(off, idx) in &parts[slot] {
            let mut mean = Array1::<f64>::zeros(c);
            for &i in idx {
                mean += &features.row(off + i);
            }
            acc += &(mean / idx.len() as f64);
        }
        raw.row_mut(a).assign(&(acc / parts[slot].len() as f64));
    }
    let mut anchors = raw.clone();
    let mut norms = Vec::with_capacity(present.len());
    for (a, mut row) in anchors.outer_iter_mut().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) {
            return Err(Error::Numeric(format!(
                "entity {} has a zero mean feature",
                ctx.bank.entity_ids[sample.entity_indices[present[a]]]
            )));
        }
        row /= n;
        norms.push(n);
    }
    let protos = ctx.bank.batch_prototypes(&sample);
    let (loss, g_anchor) = entity_contrastive_loss(anchors.view(), &present, protos.view(), &sample.weights, cfg.tau)?;

    let mut grad = Array2::<f64>::zeros(features.dim());
    for (a, &slot) in present.iter().enumerate() {
        // through the row normalization, then the double mean
        let y = anchors.row(a);
        let g = g_anchor.row(a);
        let g_raw = (&g - &(&y * g.dot(&y))) / norms[a];
        let n_parts = parts[slot].len() as f64;
        for &(off, idx) in &parts[slot] {
            let share = &g_raw / (n_parts * idx.len() as f64);
            for &i in idx {
                let mut r = grad.row_mut(off + i);
                r += &share;
            }
        }
    }
    Ok(Some((loss, grad)))
}

/// One pass over the scenes in seeded mini-batches. Each step minimises the
/// local and global head losses (summed over levels) plus `lambda` times the
/// entity loss, updating the backbone and the heads.
pub fn train_epoch(
    state: &mut TrainState,
    scenes: &[SceneBundle],
    labels: &PointLabels,
    bank: Option<&SemanticBank>,
    entities_by_scene: Option<&SceneMasks>,
    cfg: &TrainConfig,
    epoch: usize,
    total_steps: usize,
) -> Result<EpochLosses> {
    let batches = epoch_batches(scenes.len(), cfg.batch_scenes, cfg.seed, epoch);
    let ctx = match (bank, entities_by_scene) {
        (Some(bank), Some(masks)) if cfg.lambda > 0.0 => Some(EntityContext { bank, masks: masks.clone() }),
        _ => None,
    };
    let (mut sum_local, mut sum_global, mut sum_entity) = (0.0, 0.0, 0.0);
    let first_lr = poly_lr(state.step, total_steps, cfg);
    for batch in &batches {
        let x = stack_points(scenes, batch);
        let mut row_offsets = Vec::with_capacity(batch.len());
        let mut acc = 0;
        for &s in batch {
            row_offsets.push(acc);
            acc += scenes[s].n_points();
        }
        let cache = state.backbone.forward(x.view())?;
        let f = cache.output.view();
        let mut grad = Array2::<f64>::zeros(f.dim());
        let mut head_grads: Vec<Array2<f64>> = Vec::new();

        let mut branch_loss = |model: &ClusterModel, branch_labels: &Vec<Vec<Vec<i32>>>| -> Result<f64> {
            let mut total = 0.0;
            for (head, per_scene) in model.heads.iter().zip(branch_labels) {
                let l: Vec<i32> = batch.iter().flat_map(|&s| per_scene[s].iter().copied()).collect();
                let (loss, gf, gm) = head_ce_loss(f, head.view(), &l)?;
                total += loss;
                grad += &gf;
                head_grads.push(gm);
            }
            Ok(total)
        };
        let local = branch_loss(&state.local, &labels[0])?;
        let global = match &state.global {
            Some(m) => branch_loss(m, &labels[1])?,
            None => 0.0,
        };
        let entity = match &ctx {
            Some(ctx) => match entity_step(ctx, f, batch, &row_offsets, cfg, state.step)? {
                Some((loss, g)) => {
                    grad.scaled_add(cfg.lambda, &g);
                    loss
                }
                None => 0.0,
            },
            None => 0.0,
        };
        let total = local + global + cfg.lambda * entity;
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {epoch}, step {}: local {local}, global {global}, entity {entity}",
                state.step
            )));
        }
        let grads = backbone_backward(&state.backbone, &cache, grad.view())?;
        let lr = poly_lr(state.step, total_steps, cfg);
        apply_backbone_step(&mut state.backbone_opt, &mut state.backbone, &grads, lr);
        let mut heads: Vec<&mut Array2<f64>> = state.local.heads.iter_mut().collect();
        if let Some(g) = state.global.as_mut() {
            heads.extend(g.heads.iter_mut());
        }
        apply_head_step(&mut state.head_opt, &mut heads, &head_grads, lr);
        state.step += 1;
        sum_local += local;
        sum_global += global;
        sum_entity += entity;
    }
    let n = batches.len() as f64;
    let (local, global, entity) = (sum_local / n, sum_global / n, sum_entity / n);
    Ok(EpochLosses { epoch, local, global, entity, total: local + global + cfg.lambda * entity, lr: first_lr })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub checkpoint: Checkpoint,
    pub losses: Vec<EpochLosses>,
    pub warmup_losses: Vec<f64>,
    pub bank: Option<SemanticBank>,
    /// Prototype assignments of all points, scenes in corpus order.
    pub predictions: LabelVector,
    pub report: Option<EvalReport>,
}

fn warmup(backbone: &mut Backbone, scenes: &[SceneBundle], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let targets: Option<Vec<&FeatureMatrix>> = scenes.iter().map(|s| s.distill_targets.as_ref()).collect();
    let Some(targets) = targets else {
        log::info!("no distillation targets; skipping warmup");
        return Ok(Vec::new());
    };
    if let Some(t) = targets.iter().find(|t| t.cols() != backbone.output_dim()) {
        return Err(Error::Shape(format!(
            "distillation targets have {} columns but the backbone emits {}",
            t.cols(),
            backbone.output_dim()
        )));
    }
    let mut opt = AdamW::new(cfg.adamw);
    let mut out = Vec::with_capacity(cfg.warmup_epochs);
    for e in 0..cfg.warmup_epochs {
        let batches = epoch_batches(scenes.len(), cfg.batch_scenes, cfg.seed ^ 0x5741_524d, e);
        let mut sum = 0.0;
        for batch in &batches {
            let x = stack_points(scenes, batch);
            let parts: Vec<Array2<f64>> = batch.iter().map(|&s| targets[s].to_array()).collect();
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            let t = concatenate(Axis(0), &views).expect("same width");
            let cache = backbone.forward(x.view())?;
            let (loss, g) = distill_warmup_loss(cache.output.view(), t.view())?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite distillation loss in warmup epoch {e}")));
            }
            let grads = backbone_backward(backbone, &cache, g.view())?;
            apply_backbone_step(&mut opt, backbone, &grads, cfg.lr0);
            sum += loss;
        }
        let mean = sum / batches.len() as f64;
        log::info!("warmup epoch {e}: distill {mean:.6}");
        out.push(mean);
    }
    Ok(out)
}

/// The untrained backbone a run with `cfg` starts from.
pub fn initial_backbone(cfg: &TrainConfig, input_dim: usize) -> Result<Backbone> {
    Backbone::new(input_dim, &cfg.hidden, cfg.feature_dim, sub_seed(cfg.seed, SeedTag::Backbone, 0))
}

/// Aggregates entity features under `backbone` and aligns them to the text
/// embeddings.
pub fn build_bank(
    backbone: &Backbone,
    scenes: &[SceneBundle],
    entities: &[EntityRecord],
    cfg: &TrainConfig,
) -> Result<SemanticBank> {
    let first = entities.first().ok_or_else(|| Error::Data("entity bank is empty".into()))?;
    let feats = infer_scenes(backbone, scenes, cfg.threads)?;
    let init = aggregate_entity_features(scenes, &feats, entities)?;
    let text = Array2::from_shape_fn((entities.len(), first.text_embedding.len()), |(t, d)| {
        entities[t].text_embedding[d] as f64
    });
    let ids = entities.iter().map(|e| e.entity_id).collect();
    align_gram(init.view(), text.view(), ids, cfg.align_steps, cfg.align_lr)
}

/// Trains on in-memory scenes. With `out_dir`, a checkpoint is written
/// before each clustering round (and spectral dumps when enabled).
pub fn train_corpus(
    cfg: &TrainConfig,
    scenes: &[SceneBundle],
    entities: &[EntityRecord],
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let first = scenes.first().ok_or_else(|| Error::Data("corpus has no scenes".into()))?;
    for s in scenes {
        s.validate()?;
        if s.points.cols() != first.points.cols() {
            return Err(Error::Shape(format!(
                "scene {} has {} input columns, expected {}",
                s.scene_id,
                s.points.cols(),
                first.points.cols()
            )));
        }
    }
    let mut backbone = initial_backbone(cfg, first.points.cols())?;

    let warmup_losses = if cfg.warmup_epochs > 0 { warmup(&mut backbone, scenes, cfg)? } else { Vec::new() };

    let bank = if cfg.lambda > 0.0 && !entities.is_empty() {
        Some(build_bank(&backbone, scenes, entities, cfg)?)
    } else {
        None
    };
    let masks = bank.as_ref().map(|_| scene_masks(scenes, entities));

    let n_batches = scenes.len().div_ceil(cfg.batch_scenes);
    let total_steps = cfg.epochs * n_batches;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut state: Option<TrainState> = None;
    let mut frozen_spectral: Option<SpectralPass> = None;
    let mut round = 0usize;
    let mut epoch = 0usize;
    loop {
        if epoch >= cfg.epochs && state.is_some() {
            break;
        }
        let feats = infer_scenes(backbone_of(&state, &backbone), scenes, cfg.threads)?;
        let sp = pooled_superpoints(scenes, &feats)?;
        let spectral = if cfg.global_branch {
            let pass = match (&frozen_spectral, cfg.freeze_spectral) {
                (Some(p), true) => p.clone(),
                _ => spectral_pass(
                    sp.view(),
                    cfg.s_prime,
                    sub_seed(cfg.seed, SeedTag::Spectral, round as u64),
                    cfg.normalize_freq,
                )?,
            };
            if let (Some(dir), true) = (out_dir, cfg.dump_spectral) {
                let d = dir.join("spectral");
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                let values = pass.basis.values.view().insert_axis(Axis(0));
                write_feature_matrix(
                    d.join(format!("round{round:03}_lambda.ltfm")),
                    &FeatureMatrix::from_array(values)?,
                )?;
                write_feature_matrix(
                    d.join(format!("round{round:03}_v.ltfm")),
                    &FeatureMatrix::from_array(pass.patterns.v.view())?,
                )?;
            }
            if frozen_spectral.is_none() {
                frozen_spectral = Some(pass.clone());
            }
            Some(pass)
        } else {
            None
        };
        let pl = build_pseudo_labels(
            sp.view(),
            spectral.as_ref().map(|p| p.patterns.v.view()),
            &cfg.granularities,
            cfg.superpoint_cap,
            sub_seed(cfg.seed, SeedTag::Cluster, round as u64),
        )?;
        let labels = point_labels(&pl, scenes);
        let st = match state.take() {
            Some(mut st) => {
                st.local = pl.local.model;
                st.global = pl.global.map(|g| g.model);
                st.head_opt = AdamW::new(cfg.adamw);
                st
            }
            None => TrainState {
                backbone: backbone.clone(),
                local: pl.local.model,
                global: pl.global.map(|g| g.model),
                backbone_opt: AdamW::new(cfg.adamw),
                head_opt: AdamW::new(cfg.adamw),
                step: 0,
            },
        };
        let st = state.insert(st);
        if let Some(dir) = out_dir {
            write_checkpoint(dir.join(format!("checkpoint_round{round:03}.ltck")), &checkpoint_of(st))?;
        }
        let end = (epoch + cfg.recluster_every).min(cfg.epochs);
        while epoch < end {
            let l = train_epoch(st, scenes, &labels, bank.as_ref(), masks.as_ref(), cfg, epoch, total_steps)?;
            log::info!(
                "epoch {epoch}: local {:.5} global {:.5} entity {:.5} total {:.5} lr {:.3e}",
                l.local,
                l.global,
                l.entity,
                l.total,
                l.lr
            );
            losses.push(l);
            epoch += 1;
        }
        round += 1;
    }
    let state = state.expect("at least one clustering round");
    let checkpoint = checkpoint_of(&state);
    let feats = infer_scenes(&checkpoint.backbone, scenes, cfg.threads)?;
    let models: Vec<&ClusterModel> = std::iter::once(&checkpoint.local).chain(checkpoint.global.as_ref()).collect();
    let protos = super::model::concat_prototypes(&models)?;
    let mut pred = Vec::with_capacity(scenes.iter().map(|s| s.n_points()).sum());
    for f in &feats {
        pred.extend(assign_to_prototypes(protos.view(), f.view())?.into_inner());
    }
    let predictions = LabelVector::new(pred)?;
    let gt: Option<Vec<i32>> = scenes
        .iter()
        .map(|s| s.gt_labels.as_ref().map(|l| l.as_slice().to_vec()))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());
    let report = match gt {
        Some(gt) => Some(match_and_score(&confusion(&predictions, &LabelVector::new(gt)?)?, cfg.unmatched)?),
        None => None,
    };
    Ok(RunOutput { checkpoint, losses, warmup_losses, bank, predictions, report })
}

fn backbone_of<'a>(state: &'a Option<TrainState>, initial: &'a Backbone) -> &'a Backbone {
    state.as_ref().map_or(initial, |s| &s.backbone)
}

fn checkpoint_of(st: &TrainState) -> Checkpoint {
    Checkpoint { backbone: st.backbone.clone(), local: st.local.clone(), global: st.global.clone() }
}

/// Reads a corpus directory, trains, and writes `checkpoint.ltck`,
/// `losses.tsv`, `pred.ltlb`, the aligned bank and, with ground truth,
/// `report.tsv` under `out_dir`.
pub fn run_pipeline(
    cfg: &TrainConfig,
    corpus_dir: impl AsRef<Path>,
    bank_dir: Option<&Path>,
    out_dir: impl AsRef<Path>,
) -> Result<RunOutput> {
    let corpus_dir = corpus_dir.as_ref();
    let out_dir = out_dir.as_ref();
    let scenes = read_corpus_scenes(corpus_dir)?;
    let default_bank = corpus_dir.join("bank");
    let bank_dir = bank_dir.unwrap_or(&default_bank);
    let entities = if cfg.lambda > 0.0 {
        if !bank_dir.join("entities.tsv").exists() {
            return Err(Error::Data(format!("no entity bank at {}", bank_dir.display())));
        }
        read_entity_bank(bank_dir)?
    } else {
        Vec::new()
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = train_corpus(cfg, &scenes, &entities, Some(out_dir))?;
    write_checkpoint(out_dir.join("checkpoint.ltck"), &out.checkpoint)?;
    write_file(&out_dir.join("losses.tsv"), render_losses_tsv(&out.losses).as_bytes())?;
    if !out.warmup_losses.is_empty() {
        let mut s = String::from("epoch\tdistill\n");
        for (e, l) in out.warmup_losses.iter().enumerate() {
            writeln!(s, "{e}\t{l:e}").unwrap();
        }
        write_file(&out_dir.join("warmup.tsv"), s.as_bytes())?;
    }
    if let Some(bank) = &out.bank {
        write_bank_outputs(out_dir, bank, &entities)?;
    }
    write_labels(out_dir.join("pred.ltlb"), &out.predictions)?;
    if let Some(r) = &out.report {
        write_report_tsv(out_dir.join("report.tsv"), r)?;
    }
    Ok(out)
}

/// `bank_aligned.ltfm`, `trace.tsv` and a copy of `entities.tsv`.
pub fn write_bank_outputs(dir: &Path, bank: &SemanticBank, entities: &[EntityRecord]) -> Result<()> {
    write_feature_matrix(dir.join("bank_aligned.ltfm"), &FeatureMatrix::from_array(bank.prototypes.view())?)?;
    let mut trace = String::from("step\tloss\n");
    for (i, l) in bank.alignment_loss_trace.iter().enumerate() {
        writeln!(trace, "{i}\t{l:e}").unwrap();
    }
    write_file(&dir.join("trace.tsv"), trace.as_bytes())?;
    write_file(&dir.join("entities.tsv"), encode_entities_tsv(entities).as_bytes())
}
