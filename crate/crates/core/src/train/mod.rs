//! Backbone, heads, losses and the iterative learning-by-clustering loop.

mod backbone;
mod baseline;
mod loss;
mod model;
mod optim;
mod pipeline;

pub use backbone::{backbone_backward, backbone_forward, Backbone, BackboneGrads, ForwardCache, Layer};
pub use baseline::run_baseline;
pub use loss::{distill_warmup_loss, head_ce_loss};
pub use model::{
    concat_prototypes, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Branch, Checkpoint,
    ClusterModel,
};
pub use optim::{poly_lr, AdamW, AdamWParams};
pub use pipeline::{
    build_bank, build_pseudo_labels, infer_scenes, initial_backbone, render_losses_tsv, run_pipeline, train_corpus,
    train_epoch, write_bank_outputs, BranchLabels, EpochLosses, PseudoLabels, RunOutput, TrainState,
};

use crate::cluster::GranularitySet;
use crate::error::{Error, Result};
use crate::eval::UnmatchedMode;

/// Superpoint count above which trees are built on a uniform subsample.
pub const SUPERPOINT_CAP: usize = 30_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the entity loss.
    pub lambda: f64,
    pub granularities: GranularitySet,
    pub epochs: usize,
    pub batch_scenes: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub poly_power: f64,
    pub recluster_every: usize,
    pub tau: f64,
    pub seed: u64,
    /// Distillation-only epochs before clustering; skipped without targets.
    pub warmup_epochs: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub entity_batch: usize,
    pub s_prime: usize,
    pub normalize_freq: bool,
    pub global_branch: bool,
    /// Reuse the first round's spectral basis instead of recomputing it.
    pub freeze_spectral: bool,
    pub align_steps: usize,
    pub align_lr: f64,
    pub adamw: AdamWParams,
    pub superpoint_cap: usize,
    pub threads: usize,
    pub unmatched: UnmatchedMode,
    pub dump_spectral: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            granularities: GranularitySet::new(vec![120, 80, 20]).expect("valid"),
            epochs: 200,
            batch_scenes: 8,
            lr0: 1e-4,
            lr_min: 1e-8,
            poly_power: 0.9,
            recluster_every: 10,
            tau: 0.07,
            seed: 0,
            warmup_epochs: 5,
            hidden: vec![256],
            feature_dim: 384,
            entity_batch: 64,
            s_prime: 64,
            normalize_freq: false,
            global_branch: true,
            freeze_spectral: false,
            align_steps: 500,
            align_lr: 1e-2,
            adamw: AdamWParams::default(),
            superpoint_cap: SUPERPOINT_CAP,
            threads: 1,
            unmatched: UnmatchedMode::Merge,
            dump_spectral: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr_min > 0.0 && self.lr0 > self.lr_min) || !self.lr0.is_finite() {
            return fail(format!("need lr0 > lr_min > 0, got {} and {}", self.lr0, self.lr_min));
        }
        if !(self.poly_power >= 0.0) {
            return fail(format!("poly_power must be >= 0, got {}", self.poly_power));
        }
        if self.batch_scenes == 0 || self.recluster_every == 0 || self.feature_dim == 0 {
            return fail("batch_scenes, recluster_every and feature_dim must be positive".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if self.entity_batch == 0 || self.s_prime == 0 || self.align_steps == 0 || self.threads == 0 {
            return fail("entity_batch, s_prime, align_steps and threads must be positive".into());
        }
        if !(self.align_lr > 0.0) {
            return fail(format!("align_lr must be > 0, got {}", self.align_lr));
        }
        if self.superpoint_cap < self.granularities.finest() {
            return fail(format!(
                "superpoint cap {} is below the finest granularity {}",
                self.superpoint_cap,
                self.granularities.finest()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum SeedTag {
    Backbone = 1,
    Shuffle,
    Cluster,
    Spectral,
    Entity,
}

/// Independent seed for one purpose and index.
pub(crate) fn sub_seed(seed: u64, tag: SeedTag, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add((tag as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
