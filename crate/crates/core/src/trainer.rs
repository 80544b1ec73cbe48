//! End-to-end optimization: a small strided conv stack feeds both head
//! branches, one adaptive-moment optimizer step per batch, then center
//! updates and batch-norm running-stat folds.
//!
//! Two runs with the same seed and config produce bit-identical checkpoint
//! files; everything random flows through one seeded generator.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::TensorArchive;
use crate::autograd::{Graph, Gradients, Var};
use crate::backbone::{backbone_forward, BackboneParams, BackboneVars};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::head::{forward_batch, BnMode, HeadConfig, HeadParams, HeadVars};
use crate::losses::{total_loss, ClassCenters, LossBreakdown, LossInputs, LossWeights};
use crate::params::BatchNormParams;
use crate::sampler::{sample_pk_batch, Batch, BatchSpec, Dataset};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> AdamParams {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adaptive-moment optimizer. Moment buffers are keyed by canonical
/// parameter name so checkpoint order never depends on map iteration.
pub struct Adam {
    hp: AdamParams,
    steps: u64,
    slots: HashMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(hp: AdamParams) -> Adam {
        Adam { hp, steps: 0, slots: HashMap::new() }
    }

    /// One optimizer step over every (name, parameter, gradient) triple.
    /// Parameters without a gradient this batch are left untouched.
    pub fn step<'a, I>(&mut self, lr: f64, updates: I)
    where
        I: IntoIterator<Item = (String, &'a mut Tensor, Option<&'a Tensor>)>,
    {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.hp.beta1.powi(t);
        let bc2 = 1.0 - self.hp.beta2.powi(t);
        for (name, param, grad) in updates {
            let Some(grad) = grad else { continue };
            let n = param.len();
            debug_assert_eq!(grad.len(), n, "gradient shape for {name}");
            let slot = self
                .slots
                .entry(name)
                .or_insert_with(|| AdamSlot { m: vec![0.0; n], v: vec![0.0; n] });
            let p = param.data_mut();
            let g = grad.data();
            for i in 0..n {
                slot.m[i] = self.hp.beta1 * slot.m[i] + (1.0 - self.hp.beta1) * g[i];
                slot.v[i] = self.hp.beta2 * slot.v[i] + (1.0 - self.hp.beta2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.hp.epsilon);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub head: HeadConfig,
    pub spec: BatchSpec,
    pub weights: LossWeights,
    pub adam: AdamParams,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// 0 means enough batches to cover the dataset once per epoch.
    pub iters_per_epoch: usize,
    /// 0 means only the final checkpoint is written.
    pub checkpoint_every: usize,
    pub center_update_rate: f64,
}

impl TrainConfig {
    pub fn from_run(run: &RunConfig, num_classes: usize) -> Result<TrainConfig> {
        run.validate()?;
        let cfg = TrainConfig {
            head: run.head_config(num_classes)?,
            spec: BatchSpec { p: run.p, k: run.k, t: run.t },
            weights: run.loss_weights(),
            adam: AdamParams {
                beta1: run.adam_beta1,
                beta2: run.adam_beta2,
                epsilon: run.adam_epsilon,
            },
            epochs: run.epochs,
            base_lr: run.base_lr,
            warmup_epochs: run.warmup_epochs,
            decay_epochs: run.lr_decay_epochs.clone(),
            decay_factor: run.lr_decay_factor,
            seed: run.seed,
            iters_per_epoch: run.iters_per_epoch,
            checkpoint_every: run.checkpoint_every,
            center_update_rate: run.center_update_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.spec.validate()?;
        self.weights.validate()?;
        if self.base_lr <= 0.0 {
            return Err(Error::invalid("base_lr must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("decay_factor must be in (0, 1]"));
        }
        if !(self.center_update_rate > 0.0 && self.center_update_rate <= 1.0) {
            return Err(Error::invalid("center_update_rate must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Learning rate for a 1-indexed epoch: linear ramp over the warmup epochs,
/// then a step decay at each listed boundary.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = if cfg.warmup_epochs > 0 && epoch <= cfg.warmup_epochs {
        cfg.base_lr * epoch as f64 / cfg.warmup_epochs as f64
    } else {
        cfg.base_lr
    };
    for &boundary in &cfg.decay_epochs {
        if epoch >= boundary {
            lr *= cfg.decay_factor;
        }
    }
    lr
}

/// Everything that changes while training.
pub struct TrainState {
    pub backbone: BackboneParams,
    pub head: HeadParams,
    pub centers: ClassCenters,
    pub adam: Adam,
}

impl TrainState {
    pub fn init<R: Rng>(cfg: &TrainConfig, rng: &mut R) -> Result<TrainState> {
        cfg.validate()?;
        let backbone = BackboneParams::init(3, cfg.head.c_backbone, rng)?;
        let head = HeadParams::init(&cfg.head, rng)?;
        let centers = ClassCenters::new(
            cfg.head.num_classes,
            cfg.head.embed_dim(),
            cfg.center_update_rate,
        )?;
        Ok(TrainState { backbone, head, centers, adam: Adam::new(cfg.adam) })
    }
}

struct ForwardArtifacts {
    loss: Var,
    breakdown: LossBreakdown,
    f_star: Tensor,
    pre_bn_coarse: Option<Tensor>,
    pre_bn_fine: Option<Tensor>,
    backbone_vars: BackboneVars,
    head_vars: HeadVars,
}

/// Shared forward pass: pixels through the conv stack, one feature map per
/// clip feeding both head branches, then the full objective.
fn forward_loss(
    g: &mut Graph,
    state: &TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<ForwardArtifacts> {
    let backbone_vars = BackboneVars::insert(g, &state.backbone);
    let head_vars = HeadVars::insert(g, &state.head);
    let mut clips = Vec::with_capacity(batch.clips.len());
    for clip in &batch.clips {
        let frames = g.constant(clip.to_tensor());
        let feat = backbone_forward(g, &backbone_vars, frames)?;
        clips.push((feat, feat));
    }
    let out = forward_batch(g, &cfg.head, &state.head, &head_vars, &clips, BnMode::Train, false)?;
    let inputs =
        LossInputs { f_star: out.f_star, y1: out.y1, y2: out.y2, labels: &batch.labels };
    let (loss, breakdown) = total_loss(g, &inputs, &state.centers, &cfg.weights)?;
    for (name, value) in breakdown.terms() {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name}")));
        }
    }
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("total loss".to_string()));
    }
    Ok(ForwardArtifacts {
        loss,
        breakdown,
        f_star: g.value(out.f_star).clone(),
        pre_bn_coarse: out.pre_bn_coarse.map(|v| g.value(v).clone()),
        pre_bn_fine: out.pre_bn_fine.map(|v| g.value(v).clone()),
        backbone_vars,
        head_vars,
    })
}

/// Loss of a batch under the current parameters, mutating nothing.
pub fn batch_loss(state: &TrainState, batch: &Batch, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    Ok(forward_loss(&mut g, state, batch, cfg)?.breakdown)
}

fn apply_gradients(
    state: &mut TrainState,
    grads: &Gradients,
    backbone_vars: &BackboneVars,
    head_vars: &HeadVars,
    lr: f64,
) {
    let leaves: Vec<Var> = backbone_vars
        .leaf_list()
        .into_iter()
        .chain(head_vars.leaf_list())
        .collect();
    let named: Vec<(String, &mut Tensor)> = state
        .backbone
        .named_mut("backbone")
        .into_iter()
        .chain(state.head.named_mut())
        .collect();
    debug_assert_eq!(leaves.len(), named.len());
    let updates = named
        .into_iter()
        .zip(&leaves)
        .map(|((name, param), &var)| (name, param, grads.get(var)));
    state.adam.step(lr, updates);
}

fn fold_bn(bn: &mut BatchNormParams, pre: &Option<Tensor>) -> Result<()> {
    if let Some(x) = pre {
        let (mean, var) = BatchNormParams::batch_stats(x)?;
        bn.fold_running_stats(&mean, &var, x.dims()[0]);
    }
    Ok(())
}

/// One optimizer step: forward, objective, backward, parameter update,
/// running-stat fold, center update. Returns the pre-step loss breakdown.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let art = forward_loss(&mut g, state, batch, cfg)?;
    let grads = g.backward(art.loss)?;
    apply_gradients(state, &grads, &art.backbone_vars, &art.head_vars, lr);
    fold_bn(&mut state.head.bn_coarse, &art.pre_bn_coarse)?;
    fold_bn(&mut state.head.bn_fine, &art.pre_bn_fine)?;
    state.centers.update(&art.f_star, &batch.labels)?;
    Ok(art.breakdown)
}

/// Loss term names that are switched on, in breakdown order.
pub fn enabled_terms(w: &LossWeights) -> Vec<&'static str> {
    let flags = [
        ("ce", w.enable_ce),
        ("triplet", w.enable_triplet),
        ("osm", w.enable_osm),
        ("variance", w.enable_var),
        ("center", w.enable_center),
        ("kl", w.enable_kl),
        ("sr", w.enable_sr),
    ];
    flags.into_iter().filter(|&(_, on)| on).map(|(n, _)| n).collect()
}

#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    /// Mean breakdown across the epoch's batches.
    pub breakdown: LossBreakdown,
}

/// Comma-separated metrics: epoch, lr, one column per enabled term, total.
pub fn metrics_csv(rows: &[EpochRow], w: &LossWeights) -> String {
    let terms = enabled_terms(w);
    let mut out = String::from("epoch,lr");
    for t in &terms {
        out.push(',');
        out.push_str(t);
    }
    out.push_str(",total\n");
    for row in rows {
        out.push_str(&format!("{},{}", row.epoch, row.lr));
        let by_name: HashMap<&str, f64> = row.breakdown.terms().into_iter().collect();
        for t in &terms {
            out.push_str(&format!(",{}", by_name[t]));
        }
        out.push_str(&format!(",{}\n", row.breakdown.total));
    }
    out
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<EpochRow>,
}

/// Full optimization schedule over a dataset. With an output directory,
/// writes `metrics.csv`, per-epoch checkpoints at the configured cadence,
/// and a final `checkpoint.fgrd`.
pub fn train_loop(dataset: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.tracklets.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".to_string()));
    }
    if dataset.num_identities() != cfg.head.num_classes {
        return Err(Error::Config(format!(
            "head expects {} classes but the dataset has {} identities",
            cfg.head.num_classes,
            dataset.num_identities()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState::init(cfg, &mut rng)?;
    let iters = if cfg.iters_per_epoch > 0 {
        cfg.iters_per_epoch
    } else {
        dataset.tracklets.len().div_ceil(cfg.spec.batch_size()).max(1)
    };

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let mut sum = [0.0f64; 8];
        for _ in 0..iters {
            let batch = sample_pk_batch(dataset, &cfg.spec, &mut rng)?;
            let b = train_step(&mut state, &batch, lr, cfg)?;
            for (i, (_, v)) in b.terms().into_iter().enumerate() {
                sum[i] += v;
            }
            sum[7] += b.total;
        }
        let n = iters as f64;
        let breakdown = LossBreakdown {
            ce: sum[0] / n,
            triplet: sum[1] / n,
            osm: sum[2] / n,
            variance: sum[3] / n,
            center: sum[4] / n,
            kl: sum[5] / n,
            sr: sum[6] / n,
            total: sum[7] / n,
        };
        metrics.push(EpochRow { epoch, lr, breakdown });
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("checkpoint_epoch_{epoch:04}.fgrd"));
                save_checkpoint(&path, &state)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("metrics.csv"), metrics_csv(&metrics, &cfg.weights))
            .map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
        save_checkpoint(&dir.join("checkpoint.fgrd"), &state)?;
    }
    Ok(TrainOutcome { state, metrics })
}

/// All learnable tensors, running statistics, and class centers, in one
/// canonically ordered archive.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut ar = TensorArchive::new();
    for (name, t) in state.backbone.named("backbone") {
        ar.insert(&name, t.clone())?;
    }
    for (name, t) in state.head.named() {
        ar.insert(&name, t.clone())?;
    }
    for (name, t) in state.head.buffers() {
        ar.insert(&name, t.clone())?;
    }
    ar.insert("centers", state.centers.centers.clone())?;
    ar.save(path)
}

/// Rebuild a training state from a checkpoint. The config must describe the
/// same structure the checkpoint was written with; any missing, extra, or
/// reshaped tensor is an error.
pub fn load_checkpoint(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let ar = TensorArchive::load(path)?;
    let mut throwaway = ChaCha8Rng::seed_from_u64(0);
    let mut state = TrainState::init(cfg, &mut throwaway)?;

    let mut expected = 0usize;
    {
        let mut fill = |name: String, slot: &mut Tensor| -> Result<()> {
            expected += 1;
            let stored = ar.require(&name)?;
            if stored.dims() != slot.dims() {
                return Err(Error::shape(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {:?}",
                    stored.dims(),
                    slot.dims()
                )));
            }
            *slot = stored.clone();
            Ok(())
        };
        for (name, slot) in state.backbone.named_mut("backbone") {
            fill(name, slot)?;
        }
        for (name, slot) in state.head.named_mut() {
            fill(name, slot)?;
        }
        for (name, slot) in state.head.buffers_mut() {
            fill(name, slot)?;
        }
        fill("centers".to_string(), &mut state.centers.centers)?;
    }
    if ar.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, this structure needs {expected}",
            ar.len()
        )));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_dataset;

    fn tiny_config(num_classes: usize) -> TrainConfig {
        let mut run = RunConfig::default();
        run.c_backbone = 8;
        run.c_star = 8;
        run.p = 2;
        run.k = 2;
        run.t = 2;
        run.epochs = 2;
        run.warmup_epochs = 2;
        run.lr_decay_epochs = vec![];
        run.iters_per_epoch = 1;
        run.checkpoint_every = 0;
        TrainConfig::from_run(&run, num_classes).unwrap()
    }

    fn tiny_setup(seed: u64) -> (Dataset, TrainConfig, TrainState, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = synth_dataset(3, 2, 4, 16, &mut rng).unwrap();
        let cfg = tiny_config(3);
        let state = TrainState::init(&cfg, &mut rng).unwrap();
        let batch = sample_pk_batch(&ds, &cfg.spec, &mut rng).unwrap();
        (ds, cfg, state, batch)
    }

    fn snapshot(state: &TrainState) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (n, t) in state.backbone.named("backbone") {
            out.push((n, t.data().to_vec()));
        }
        for (n, t) in state.head.named() {
            out.push((n, t.data().to_vec()));
        }
        out
    }

    #[test]
    fn warmup_ramps_then_decay_steps() {
        let mut cfg = tiny_config(3);
        cfg.base_lr = 1.0;
        cfg.warmup_epochs = 5;
        cfg.decay_epochs = vec![40, 70];
        cfg.decay_factor = 0.1;
        assert_eq!(learning_rate(&cfg, 1), 0.2);
        assert_eq!(learning_rate(&cfg, 3), 0.6);
        assert_eq!(learning_rate(&cfg, 5), 1.0);
        assert_eq!(learning_rate(&cfg, 6), 1.0);
        assert_eq!(learning_rate(&cfg, 39), 1.0);
        assert!((learning_rate(&cfg, 40) - 0.1).abs() < 1e-15);
        assert!((learning_rate(&cfg, 69) - 0.1).abs() < 1e-15);
        assert!((learning_rate(&cfg, 70) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (_ds, cfg, mut state, batch) = tiny_setup(5);
        let before = snapshot(&state);
        let breakdown = train_step(&mut state, &batch, 0.0, &cfg).unwrap();
        assert!(breakdown.total.is_finite());
        let after = snapshot(&state);
        for ((n, a), (_, b)) in before.iter().zip(&after) {
            assert_eq!(a, b, "{n} moved under lr 0");
        }
    }

    #[test]
    fn one_step_descends_on_the_same_batch() {
        let (_ds, cfg, mut state, batch) = tiny_setup(6);
        let before = batch_loss(&state, &batch, &cfg).unwrap().total;
        train_step(&mut state, &batch, 1e-4, &cfg).unwrap();
        let after = batch_loss(&state, &batch, &cfg).unwrap().total;
        assert!(after < before, "loss rose: {before} -> {after}");
    }

    #[test]
    fn running_stats_fold_after_a_step() {
        let (_ds, cfg, mut state, batch) = tiny_setup(7);
        let rm_before = state.head.bn_fine.running_mean.data().to_vec();
        train_step(&mut state, &batch, 1e-4, &cfg).unwrap();
        assert!(state.head.bn_fine.running_mean.data() != rm_before.as_slice());
    }

    #[test]
    fn centers_move_toward_batch_means() {
        let (_ds, cfg, mut state, batch) = tiny_setup(8);
        let before = state.centers.centers.data().to_vec();
        train_step(&mut state, &batch, 0.0, &cfg).unwrap();
        assert!(state.centers.centers.data() != before.as_slice());
    }

    #[test]
    fn non_finite_loss_is_diagnosed() {
        let (_ds, cfg, mut state, batch) = tiny_setup(9);
        for v in state.head.classifier.weight.data_mut().iter_mut() {
            *v = 1e308;
        }
        let err = train_step(&mut state, &batch, 1e-4, &cfg).unwrap_err();
        assert!(err.to_string().contains("finite"), "got: {err}");
    }

    #[test]
    fn breakdown_keys_follow_the_enabled_set() {
        let (_ds, mut cfg, mut state, batch) = tiny_setup(10);
        cfg.weights.enable_osm = false;
        cfg.weights.enable_center = false;
        let b = train_step(&mut state, &batch, 1e-4, &cfg).unwrap();
        assert_eq!(enabled_terms(&cfg.weights), vec!["ce", "triplet", "variance", "kl", "sr"]);
        assert_eq!(b.osm, 0.0);
        assert_eq!(b.center, 0.0);
        assert!(b.ce > 0.0);
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let (_ds, cfg, mut state, batch) = tiny_setup(11);
        train_step(&mut state, &batch, 1e-3, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fgrd");
        let p2 = dir.path().join("b.fgrd");
        save_checkpoint(&p1, &state).unwrap();
        let loaded = load_checkpoint(&p1, &cfg).unwrap();
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_rejects_mismatched_structure() {
        let (_ds, cfg, state, _batch) = tiny_setup(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fgrd");
        save_checkpoint(&path, &state).unwrap();
        let mut other = cfg.clone();
        other.head.distinct_kq = true;
        assert!(load_checkpoint(&path, &other).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ds = synth_dataset(3, 2, 4, 16, &mut rng).unwrap();
        let mut cfg = tiny_config(3);
        cfg.epochs = 0;
        let out = train_loop(&ds, &cfg, None).unwrap();
        assert!(out.metrics.is_empty());

        // the initial state under the same seed is reproduced exactly
        let mut rng2 = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = TrainState::init(&cfg, &mut rng2).unwrap();
        assert_eq!(snapshot(&out.state), snapshot(&fresh));
    }

    #[test]
    fn same_seed_runs_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ds = synth_dataset(3, 2, 4, 16, &mut rng).unwrap();
        let mut cfg = tiny_config(3);
        cfg.epochs = 2;
        cfg.checkpoint_every = 1;
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            train_loop(&ds, &cfg, Some(dir.path())).unwrap();
            (
                std::fs::read(dir.path().join("checkpoint.fgrd")).unwrap(),
                std::fs::read(dir.path().join("checkpoint_epoch_0002.fgrd")).unwrap(),
                std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn metrics_log_carries_the_schedule_and_enabled_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ds = synth_dataset(3, 2, 4, 16, &mut rng).unwrap();
        let mut cfg = tiny_config(3);
        cfg.epochs = 3;
        cfg.warmup_epochs = 3;
        cfg.base_lr = 0.003;
        cfg.weights.enable_kl = false;
        let out = train_loop(&ds, &cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 3);
        for (i, row) in out.metrics.iter().enumerate() {
            assert_eq!(row.epoch, i + 1);
            assert!((row.lr - 0.003 * (i + 1) as f64 / 3.0).abs() < 1e-15);
        }
        let csv = metrics_csv(&out.metrics, &cfg.weights);
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "epoch,lr,ce,triplet,osm,variance,center,sr,total");
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn training_wants_matching_class_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let ds = synth_dataset(4, 2, 4, 16, &mut rng).unwrap();
        let cfg = tiny_config(3);
        assert!(train_loop(&ds, &cfg, None).is_err());
    }
}
