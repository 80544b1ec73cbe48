//! The dual-branch embedding head.
//!
//! Two backbone feature maps enter, one per branch. The coarse branch is
//! reduced to `c_star` channels, pooled spatially then temporally, and batch
//! normalized into `f_hat_coarse`. The fine branch is reduced the same way,
//! weighted by a parameterless spatial attention derived from the coarse
//! branch, passed through a shared-query/key non-local block, pooled by the
//! attention mass, and normalized into `f_hat_fine`. The concatenation
//! `f_star` is the retrieval embedding; a single classifier shared by both
//! branches produces the per-branch label distributions `y1` and `y2`.
//!
//! Everything runs on the autograd graph so the training step and the
//! inference path share one implementation; inference just never calls
//! `backward`.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{BatchNormParams, ProjectionParams};
use crate::tensor::{FeatureMap, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Channels delivered by each backbone branch.
    pub c_backbone: usize,
    /// Reduced per-branch embedding width. Must be divisible by 4; the
    /// non-local block works at `c_star / 4`.
    pub c_star: usize,
    pub num_classes: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub l2_eps: f64,
    /// Channel softmax weights in the spatial attention; off means uniform
    /// `1 / c_star`.
    pub use_channel_weights: bool,
    /// Non-local context block in the fine branch; off short-circuits it.
    pub use_nonlocal: bool,
    /// Give K its own projection instead of sharing Q's.
    pub distinct_kq: bool,
    /// Keep the coarse embedding in `f_star` (and produce `y1`).
    pub use_gfm: bool,
    /// Spatial attention; off means all-ones maps and a plain spatial mean.
    pub use_fgm: bool,
    /// Keep the fine branch at all; off reduces the model to the coarse
    /// embedding alone.
    pub use_fine: bool,
}

impl HeadConfig {
    pub fn new(c_backbone: usize, c_star: usize, num_classes: usize) -> Result<HeadConfig> {
        let cfg = HeadConfig {
            c_backbone,
            c_star,
            num_classes,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
            l2_eps: 1e-12,
            use_channel_weights: true,
            use_nonlocal: true,
            distinct_kq: false,
            use_gfm: true,
            use_fgm: true,
            use_fine: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_backbone == 0 || self.c_star == 0 || self.num_classes == 0 {
            return Err(Error::invalid("head extents must all be positive".to_string()));
        }
        if self.c_star % 4 != 0 {
            return Err(Error::invalid(format!(
                "c_star must be divisible by 4, got {}",
                self.c_star
            )));
        }
        if !self.use_gfm && !self.use_fine {
            return Err(Error::invalid(
                "at least one of the coarse and fine branches must stay enabled".to_string(),
            ));
        }
        Ok(())
    }

    /// Width of the non-local block's internal space.
    pub fn c_bar(&self) -> usize {
        self.c_star / 4
    }

    /// Width of `f_star` under the current branch flags.
    pub fn embed_dim(&self) -> usize {
        let mut d = 0;
        if self.use_gfm {
            d += self.c_star;
        }
        if self.use_fine {
            d += self.c_star;
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub reduce_coarse: ProjectionParams,
    pub reduce_fine: ProjectionParams,
    pub theta: ProjectionParams,
    /// Distinct key projection; `None` shares the query projection.
    pub k_proj: Option<ProjectionParams>,
    pub delta: ProjectionParams,
    pub beta_proj: ProjectionParams,
    /// One classifier, applied to both branch embeddings.
    pub classifier: ProjectionParams,
    pub bn_coarse: BatchNormParams,
    pub bn_fine: BatchNormParams,
}

impl HeadParams {
    pub fn init<R: Rng>(cfg: &HeadConfig, rng: &mut R) -> Result<HeadParams> {
        cfg.validate()?;
        let (cb, cs, cbar) = (cfg.c_backbone, cfg.c_star, cfg.c_bar());
        Ok(HeadParams {
            reduce_coarse: ProjectionParams::init(cb, cs, rng),
            reduce_fine: ProjectionParams::init(cb, cs, rng),
            theta: ProjectionParams::init(cs, cbar, rng),
            k_proj: if cfg.distinct_kq { Some(ProjectionParams::init(cs, cbar, rng)) } else { None },
            delta: ProjectionParams::init(cs, cbar, rng),
            beta_proj: ProjectionParams::init(cbar, cs, rng),
            classifier: ProjectionParams::init(cs, cfg.num_classes, rng),
            bn_coarse: BatchNormParams::new(cs, cfg.bn_momentum, cfg.bn_epsilon),
            bn_fine: BatchNormParams::new(cs, cfg.bn_momentum, cfg.bn_epsilon),
        })
    }

    /// Learnable tensors in a fixed canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("head.reduce_coarse.weight".into(), &self.reduce_coarse.weight));
        out.push(("head.reduce_coarse.bias".into(), &self.reduce_coarse.bias));
        out.push(("head.reduce_fine.weight".into(), &self.reduce_fine.weight));
        out.push(("head.reduce_fine.bias".into(), &self.reduce_fine.bias));
        out.push(("head.theta.weight".into(), &self.theta.weight));
        out.push(("head.theta.bias".into(), &self.theta.bias));
        if let Some(k) = &self.k_proj {
            out.push(("head.k_proj.weight".into(), &k.weight));
            out.push(("head.k_proj.bias".into(), &k.bias));
        }
        out.push(("head.delta.weight".into(), &self.delta.weight));
        out.push(("head.delta.bias".into(), &self.delta.bias));
        out.push(("head.beta_proj.weight".into(), &self.beta_proj.weight));
        out.push(("head.beta_proj.bias".into(), &self.beta_proj.bias));
        out.push(("head.classifier.weight".into(), &self.classifier.weight));
        out.push(("head.classifier.bias".into(), &self.classifier.bias));
        out.push(("head.bn_coarse.gamma".into(), &self.bn_coarse.gamma));
        out.push(("head.bn_coarse.beta".into(), &self.bn_coarse.beta));
        out.push(("head.bn_fine.gamma".into(), &self.bn_fine.gamma));
        out.push(("head.bn_fine.beta".into(), &self.bn_fine.beta));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("head.reduce_coarse.weight".into(), &mut self.reduce_coarse.weight));
        out.push(("head.reduce_coarse.bias".into(), &mut self.reduce_coarse.bias));
        out.push(("head.reduce_fine.weight".into(), &mut self.reduce_fine.weight));
        out.push(("head.reduce_fine.bias".into(), &mut self.reduce_fine.bias));
        out.push(("head.theta.weight".into(), &mut self.theta.weight));
        out.push(("head.theta.bias".into(), &mut self.theta.bias));
        if let Some(k) = &mut self.k_proj {
            out.push(("head.k_proj.weight".into(), &mut k.weight));
            out.push(("head.k_proj.bias".into(), &mut k.bias));
        }
        out.push(("head.delta.weight".into(), &mut self.delta.weight));
        out.push(("head.delta.bias".into(), &mut self.delta.bias));
        out.push(("head.beta_proj.weight".into(), &mut self.beta_proj.weight));
        out.push(("head.beta_proj.bias".into(), &mut self.beta_proj.bias));
        out.push(("head.classifier.weight".into(), &mut self.classifier.weight));
        out.push(("head.classifier.bias".into(), &mut self.classifier.bias));
        out.push(("head.bn_coarse.gamma".into(), &mut self.bn_coarse.gamma));
        out.push(("head.bn_coarse.beta".into(), &mut self.bn_coarse.beta));
        out.push(("head.bn_fine.gamma".into(), &mut self.bn_fine.gamma));
        out.push(("head.bn_fine.beta".into(), &mut self.bn_fine.beta));
        out
    }

    /// Non-learnable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("head.bn_coarse.running_mean".into(), &self.bn_coarse.running_mean),
            ("head.bn_coarse.running_var".into(), &self.bn_coarse.running_var),
            ("head.bn_fine.running_mean".into(), &self.bn_fine.running_mean),
            ("head.bn_fine.running_var".into(), &self.bn_fine.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("head.bn_coarse.running_mean".into(), &mut self.bn_coarse.running_mean),
            ("head.bn_coarse.running_var".into(), &mut self.bn_coarse.running_var),
            ("head.bn_fine.running_mean".into(), &mut self.bn_fine.running_mean),
            ("head.bn_fine.running_var".into(), &mut self.bn_fine.running_var),
        ]
    }
}

/// Parameter component inventory, computed in closed form from the config.
#[derive(Clone, Debug)]
pub struct ParamCountReport {
    pub components: Vec<(String, usize)>,
    pub total: usize,
    /// Parameters a distinct key projection adds over sharing Q.
    pub kqv_delta: usize,
}

pub fn param_count(cfg: &HeadConfig) -> Result<ParamCountReport> {
    cfg.validate()?;
    let (cb, cs, cbar, n) = (cfg.c_backbone, cfg.c_star, cfg.c_bar(), cfg.num_classes);
    let proj = |c_in: usize, c_out: usize| c_in * c_out + c_out;
    let mut components = vec![
        ("reduce_coarse".to_string(), proj(cb, cs)),
        ("reduce_fine".to_string(), proj(cb, cs)),
        ("theta".to_string(), proj(cs, cbar)),
        ("delta".to_string(), proj(cs, cbar)),
        ("beta_proj".to_string(), proj(cbar, cs)),
    ];
    if cfg.distinct_kq {
        components.push(("k_proj".to_string(), proj(cs, cbar)));
    }
    components.push(("classifier".to_string(), proj(cs, n)));
    components.push(("bn_coarse".to_string(), 2 * cs));
    components.push(("bn_fine".to_string(), 2 * cs));
    let total = components.iter().map(|(_, c)| c).sum();
    Ok(ParamCountReport { components, total, kqv_delta: proj(cs, cbar) })
}

/// Structural inventory read off actual parameters rather than the config.
#[derive(Clone, Debug)]
pub struct StructureAudit {
    /// (name, c_in, c_out, parameter count) per 1x1 projection.
    pub projections: Vec<(String, usize, usize, usize)>,
    /// (name, channels, learnable parameter count) per batch-norm set.
    pub batch_norms: Vec<(String, usize, usize)>,
    pub classifier_count: usize,
    pub total_learnable: usize,
}

pub fn audit(params: &HeadParams) -> StructureAudit {
    let mut projections = Vec::new();
    let push = |name: &str, p: &ProjectionParams, projections: &mut Vec<(String, usize, usize, usize)>| {
        projections.push((name.to_string(), p.c_in(), p.c_out(), p.param_count()));
    };
    push("reduce_coarse", &params.reduce_coarse, &mut projections);
    push("reduce_fine", &params.reduce_fine, &mut projections);
    push("theta", &params.theta, &mut projections);
    if let Some(k) = &params.k_proj {
        push("k_proj", k, &mut projections);
    }
    push("delta", &params.delta, &mut projections);
    push("beta_proj", &params.beta_proj, &mut projections);
    let batch_norms = vec![
        ("bn_coarse".to_string(), params.bn_coarse.channels(), params.bn_coarse.param_count()),
        ("bn_fine".to_string(), params.bn_fine.channels(), params.bn_fine.param_count()),
    ];
    let total_learnable = params.named().iter().map(|(_, t)| t.len()).sum();
    StructureAudit { projections, batch_norms, classifier_count: 1, total_learnable }
}

/// Graph handles for every learnable head tensor, inserted once per graph so
/// all clips in a batch share the same leaves.
pub struct HeadVars {
    pub reduce_coarse: (Var, Var),
    pub reduce_fine: (Var, Var),
    pub theta: (Var, Var),
    pub k_proj: Option<(Var, Var)>,
    pub delta: (Var, Var),
    pub beta_proj: (Var, Var),
    pub classifier: (Var, Var),
    pub bn_coarse: (Var, Var),
    pub bn_fine: (Var, Var),
}

impl HeadVars {
    pub fn insert(g: &mut Graph, p: &HeadParams) -> HeadVars {
        let proj = |g: &mut Graph, pp: &ProjectionParams| {
            (g.leaf(pp.weight.clone()), g.leaf(pp.bias.clone()))
        };
        HeadVars {
            reduce_coarse: proj(g, &p.reduce_coarse),
            reduce_fine: proj(g, &p.reduce_fine),
            theta: proj(g, &p.theta),
            k_proj: p.k_proj.as_ref().map(|k| proj(g, k)),
            delta: proj(g, &p.delta),
            beta_proj: proj(g, &p.beta_proj),
            classifier: proj(g, &p.classifier),
            bn_coarse: (g.leaf(p.bn_coarse.gamma.clone()), g.leaf(p.bn_coarse.beta.clone())),
            bn_fine: (g.leaf(p.bn_fine.gamma.clone()), g.leaf(p.bn_fine.beta.clone())),
        }
    }

    /// Leaves in the same order as [`HeadParams::named`].
    pub fn leaf_list(&self) -> Vec<Var> {
        let mut out = vec![
            self.reduce_coarse.0,
            self.reduce_coarse.1,
            self.reduce_fine.0,
            self.reduce_fine.1,
            self.theta.0,
            self.theta.1,
        ];
        if let Some(k) = self.k_proj {
            out.push(k.0);
            out.push(k.1);
        }
        out.extend([
            self.delta.0,
            self.delta.1,
            self.beta_proj.0,
            self.beta_proj.1,
            self.classifier.0,
            self.classifier.1,
            self.bn_coarse.0,
            self.bn_coarse.1,
            self.bn_fine.0,
            self.bn_fine.1,
        ]);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

fn bn_apply(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &BatchNormParams,
    mode: BnMode,
) -> Result<Var> {
    match mode {
        BnMode::Train => g.batch_norm_train(x, gamma, beta, stats.epsilon),
        BnMode::Infer => {
            // gamma (x - mean) / sqrt(var + eps) + beta with frozen statistics
            let inv = stats.running_var.map(|v| 1.0 / (v + stats.epsilon).sqrt());
            let mean = g.constant(stats.running_mean.clone());
            let inv = g.constant(inv);
            let centered = g.sub(x, mean)?;
            let scale = g.mul(gamma, inv)?;
            let scaled = g.mul(centered, scale)?;
            g.add(scaled, beta)
        }
    }
}

/// Per-frame channel weights from the spatially pooled coarse features:
/// softmax over the channel axis, or uniform `1 / c` when disabled.
pub fn channel_weights(g: &mut Graph, a_gap: Var, enabled: bool) -> Result<Var> {
    let dims = g.value(a_gap).dims().to_vec();
    let c = *dims.last().unwrap();
    if enabled {
        g.softmax(a_gap, dims.len() - 1)
    } else {
        Ok(g.constant(Tensor::full(&dims, 1.0 / c as f64)))
    }
}

/// Parameterless spatial attention: shift the reduced coarse features to be
/// non-negative by subtracting their global minimum, weigh channels, sum
/// them away and squash. Output lives strictly inside (0, 1).
pub fn attention_maps(g: &mut Graph, f_coarse: Var, s_channel: Var) -> Result<Var> {
    let min = g.min_all(f_coarse);
    let shifted = g.sub(f_coarse, min)?;
    let weighted = g.mul(shifted, s_channel)?;
    let summed = g.sum_axes(weighted, &[3])?; // (t, h, w, 1)
    Ok(g.sigmoid(summed))
}

/// Gate the fine features with the attention maps (broadcast over channels).
pub fn apply_attention(g: &mut Graph, f_fine: Var, a_maps: Var) -> Result<Var> {
    g.mul(f_fine, a_maps)
}

/// Non-local context block with L2-normalized, shared (or distinct) query
/// and key spaces. Rows of the affinity matrix are queries and sum to one.
/// Returns the residual output and the affinity matrix.
pub fn nonlocal_block(
    g: &mut Graph,
    a1: Var,
    theta: (Var, Var),
    k_proj: Option<(Var, Var)>,
    delta: (Var, Var),
    beta_proj: (Var, Var),
    l2_eps: f64,
) -> Result<(Var, Var)> {
    let dims = g.value(a1).dims().to_vec();
    let (t, h, w, _c) = (dims[0], dims[1], dims[2], dims[3]);
    let positions = t * h * w;
    let c_bar = g.value(theta.0).dims()[1];

    let embed = |g: &mut Graph, p: (Var, Var)| -> Result<Var> {
        let lin = g.linear(a1, p.0, p.1)?;
        let act = g.relu(lin);
        g.reshape(act, &[positions, c_bar])
    };
    let q_raw = embed(g, theta)?;
    let q = g.l2_normalize(q_raw, l2_eps)?;
    let k = match k_proj {
        Some(kp) => {
            let k_raw = embed(g, kp)?;
            g.l2_normalize(k_raw, l2_eps)?
        }
        None => q,
    };
    let v = embed(g, delta)?;

    let kt = g.transpose2(k)?;
    let logits = g.matmul(q, kt)?;
    let affinity = g.softmax(logits, 1)?;
    let mixed = g.matmul(affinity, v)?;
    let mixed = g.reshape(mixed, &[t, h, w, c_bar])?;
    let lifted = g.linear(mixed, beta_proj.0, beta_proj.1)?;
    let out = g.add(lifted, a1)?;
    Ok((out, affinity))
}

/// Attention-mass pooling: per frame, spatial sum of the features divided by
/// the spatial sum of the attention maps. With all-ones maps this is the
/// plain spatial mean.
pub fn attentive_pool(g: &mut Graph, a2: Var, a_maps: Var) -> Result<Var> {
    let num = g.sum_axes(a2, &[1, 2])?; // (t, 1, 1, c)
    let den = g.sum_axes(a_maps, &[1, 2])?; // (t, 1, 1, 1)
    let pooled = g.div(num, den)?;
    let dims = g.value(pooled).dims().to_vec();
    g.reshape(pooled, &[dims[0], dims[3]])
}

/// Everything one clip contributes before batch norm, plus optional
/// intermediate values for inspection.
pub struct ClipStage {
    /// `(1, c_star)` row, present when the coarse branch is enabled.
    pub coarse_row: Option<Var>,
    /// `(1, c_star)` row, present when the fine branch is enabled.
    pub fine_row: Option<Var>,
    pub a_maps: Var,
    pub trace: Option<IntermediateTrace>,
}

/// Intermediate tensors of one clip's forward pass, for export and tests.
#[derive(Clone, Debug)]
pub struct IntermediateTrace {
    pub a_gap: Tensor,            // (t, c_star)
    pub s_channel: Tensor,        // (t, c_star)
    pub a_maps: Tensor,           // (t, h, w, 1)
    pub a1: Option<Tensor>,       // (t, h, w, c_star)
    pub a2: Option<Tensor>,       // (t, h, w, c_star)
    pub a3: Option<Tensor>,       // (t, c_star)
    pub affinity: Option<Tensor>, // (t h w, t h w)
}

/// Run both branches of one clip up to the pre-batch-norm vectors.
pub fn clip_stage(
    g: &mut Graph,
    cfg: &HeadConfig,
    vars: &HeadVars,
    coarse_raw: Var,
    fine_raw: Var,
    want_trace: bool,
) -> Result<ClipStage> {
    for (label, v) in [("coarse", coarse_raw), ("fine", fine_raw)] {
        let d = g.value(v).dims();
        if d.len() != 4 || d[3] != cfg.c_backbone {
            return Err(Error::shape(format!(
                "{label} input must be (t, h, w, {}), got {d:?}",
                cfg.c_backbone
            )));
        }
    }
    let in_dims = g.value(coarse_raw).dims().to_vec();
    if g.value(fine_raw).dims() != in_dims.as_slice() {
        return Err(Error::shape("branch inputs must share one shape".to_string()));
    }
    let (t, h, w) = (in_dims[0], in_dims[1], in_dims[2]);

    // coarse reduction feeds the attention even when its embedding is off
    let f_coarse = g.linear(coarse_raw, vars.reduce_coarse.0, vars.reduce_coarse.1)?;
    let a_gap = g.mean_axes(f_coarse, &[1, 2])?; // (t, 1, 1, c_star)
    let s_channel = channel_weights(g, a_gap, cfg.use_channel_weights)?;
    let a_maps = if cfg.use_fgm {
        attention_maps(g, f_coarse, s_channel)?
    } else {
        g.constant(Tensor::full(&[t, h, w, 1], 1.0))
    };

    let coarse_row = if cfg.use_gfm {
        let pooled = g.mean_axes(a_gap, &[0])?; // (1, 1, 1, c_star)
        Some(g.reshape(pooled, &[1, cfg.c_star])?)
    } else {
        None
    };

    let mut a1_val = None;
    let mut a2_val = None;
    let mut a3_val = None;
    let mut affinity_val = None;
    let fine_row = if cfg.use_fine {
        let f_fine = g.linear(fine_raw, vars.reduce_fine.0, vars.reduce_fine.1)?;
        let a1 = apply_attention(g, f_fine, a_maps)?;
        let a2 = if cfg.use_nonlocal {
            let (a2, affinity) =
                nonlocal_block(g, a1, vars.theta, vars.k_proj, vars.delta, vars.beta_proj, cfg.l2_eps)?;
            if want_trace {
                affinity_val = Some(g.value(affinity).clone());
            }
            a2
        } else {
            a1
        };
        let a3 = attentive_pool(g, a2, a_maps)?; // (t, c_star)
        if want_trace {
            a1_val = Some(g.value(a1).clone());
            a2_val = Some(g.value(a2).clone());
            a3_val = Some(g.value(a3).clone());
        }
        let pooled = g.mean_axes(a3, &[0])?; // (1, c_star)
        Some(pooled)
    } else {
        None
    };

    let trace = if want_trace {
        Some(IntermediateTrace {
            a_gap: g.value(a_gap).reshape(&[t, cfg.c_star])?,
            s_channel: g.value(s_channel).reshape(&[t, cfg.c_star])?,
            a_maps: g.value(a_maps).clone(),
            a1: a1_val,
            a2: a2_val,
            a3: a3_val,
            affinity: affinity_val,
        })
    } else {
        None
    };

    Ok(ClipStage { coarse_row, fine_row, a_maps, trace })
}

/// A batch forward pass: per-branch embeddings, `f_star`, and the label
/// distributions. Pre-batch-norm matrices are exposed so the trainer can
/// fold running statistics.
pub struct BatchOutput {
    pub f_star: Var,
    pub coarse_embed: Option<Var>,
    pub fine_embed: Option<Var>,
    pub y1: Option<Var>,
    pub y2: Option<Var>,
    pub pre_bn_coarse: Option<Var>,
    pub pre_bn_fine: Option<Var>,
    pub a_maps: Vec<Var>,
    pub traces: Vec<IntermediateTrace>,
}

pub fn forward_batch(
    g: &mut Graph,
    cfg: &HeadConfig,
    params: &HeadParams,
    vars: &HeadVars,
    clips: &[(Var, Var)],
    mode: BnMode,
    want_trace: bool,
) -> Result<BatchOutput> {
    if clips.is_empty() {
        return Err(Error::invalid("forward_batch needs at least one clip".to_string()));
    }
    let mut coarse_rows = Vec::new();
    let mut fine_rows = Vec::new();
    let mut a_maps = Vec::new();
    let mut traces = Vec::new();
    for &(coarse_raw, fine_raw) in clips {
        let stage = clip_stage(g, cfg, vars, coarse_raw, fine_raw, want_trace)?;
        if let Some(r) = stage.coarse_row {
            coarse_rows.push(r);
        }
        if let Some(r) = stage.fine_row {
            fine_rows.push(r);
        }
        a_maps.push(stage.a_maps);
        if let Some(tr) = stage.trace {
            traces.push(tr);
        }
    }

    let branch = |g: &mut Graph,
                  rows: Vec<Var>,
                  bn_vars: (Var, Var),
                  stats: &BatchNormParams|
     -> Result<(Option<Var>, Option<Var>)> {
        if rows.is_empty() {
            return Ok((None, None));
        }
        let pre = g.concat(&rows, 0)?; // (B, c_star)
        let post = bn_apply(g, pre, bn_vars.0, bn_vars.1, stats, mode)?;
        Ok((Some(pre), Some(post)))
    };
    let (pre_bn_coarse, coarse_embed) = branch(g, coarse_rows, vars.bn_coarse, &params.bn_coarse)?;
    let (pre_bn_fine, fine_embed) = branch(g, fine_rows, vars.bn_fine, &params.bn_fine)?;

    let f_star = match (coarse_embed, fine_embed) {
        (Some(c), Some(f)) => g.concat(&[c, f], 1)?,
        (Some(c), None) => c,
        (None, Some(f)) => f,
        (None, None) => unreachable!("config validation keeps one branch on"),
    };

    let classify_branch = |g: &mut Graph, embed: Option<Var>| -> Result<Option<Var>> {
        match embed {
            Some(e) => {
                let logits = g.linear(e, vars.classifier.0, vars.classifier.1)?;
                Ok(Some(g.softmax(logits, 1)?))
            }
            None => Ok(None),
        }
    };
    let y1 = classify_branch(g, coarse_embed)?;
    let y2 = classify_branch(g, fine_embed)?;

    Ok(BatchOutput {
        f_star,
        coarse_embed,
        fine_embed,
        y1,
        y2,
        pre_bn_coarse,
        pre_bn_fine,
        a_maps,
        traces,
    })
}

/// Classifier distribution over labels for a single embedding row.
pub fn classify(g: &mut Graph, embed: Var, vars: &HeadVars) -> Result<Var> {
    let logits = g.linear(embed, vars.classifier.0, vars.classifier.1)?;
    g.softmax(logits, 1)
}

/// One clip's inference output.
#[derive(Clone, Debug)]
pub struct EmbeddingBundle {
    pub f_hat_coarse: Option<Tensor>,
    pub f_hat_fine: Option<Tensor>,
    /// Concatenation of the enabled branch embeddings.
    pub f_star: Tensor,
    pub y1: Option<Tensor>,
    pub y2: Option<Tensor>,
    /// Spatial attention actually applied, `(t, h, w, 1)`.
    pub a_maps: FeatureMap,
}

/// Single-clip inference: batch norm uses running statistics, nothing is
/// differentiated. Returns the embeddings plus the intermediate trace.
pub fn forward(
    coarse_raw: &FeatureMap,
    fine_raw: &FeatureMap,
    cfg: &HeadConfig,
    params: &HeadParams,
) -> Result<(EmbeddingBundle, IntermediateTrace)> {
    let mut g = Graph::new();
    let vars = HeadVars::insert(&mut g, params);
    let c = g.leaf(coarse_raw.to_tensor());
    let f = g.leaf(fine_raw.to_tensor());
    let out = forward_batch(&mut g, cfg, params, &vars, &[(c, f)], BnMode::Infer, true)?;

    let row = |g: &Graph, v: Option<Var>| -> Result<Option<Tensor>> {
        match v {
            Some(v) => {
                let val = g.value(v);
                Ok(Some(val.reshape(&[val.len()])?))
            }
            None => Ok(None),
        }
    };
    let f_star = g.value(out.f_star).reshape(&[g.value(out.f_star).len()])?;
    f_star.ensure_finite("f_star")?;
    let bundle = EmbeddingBundle {
        f_hat_coarse: row(&g, out.coarse_embed)?,
        f_hat_fine: row(&g, out.fine_embed)?,
        f_star,
        y1: row(&g, out.y1)?,
        y2: row(&g, out.y2)?,
        a_maps: FeatureMap::from_tensor(g.value(out.a_maps[0]))?,
    };
    let trace = out.traces.into_iter().next().expect("trace requested");
    Ok((bundle, trace))
}
