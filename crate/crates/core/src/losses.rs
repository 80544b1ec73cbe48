//! The training objective: smoothed cross-entropy on both label
//! distributions, batch-hard triplet, an online-soft-mining contrastive
//! term anchored at class centers, center loss, within-class variance
//! regularization, a KL consistency term between the branches, and a rank
//! hinge keeping the coarse branch honest. All terms build on the autograd
//! graph; the combination is a fixed-order weighted sum so the reported
//! breakdown adds up to the total exactly.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LOG_FLOOR: f64 = 1e-12;
const DIST_FLOOR: f64 = 1e-12;

/// Weights and switches for [`total_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Mixes triplet against the soft-mining term: `(1 - beta_mix)` on
    /// triplet, `beta_mix` on soft-mining. In `[0, 1]`.
    pub beta_mix: f64,
    pub w_var: f64,
    pub w_center: f64,
    pub w_kl: f64,
    pub w_sr: f64,
    /// Label-smoothing mass spread over all classes. In `[0, 1)`.
    pub smoothing_eps: f64,
    pub triplet_margin: f64,
    pub sr_margin: f64,
    /// Reverse the KL direction (see [`kl_consistency`]).
    pub kl_swapped: bool,
    pub enable_ce: bool,
    pub enable_triplet: bool,
    pub enable_osm: bool,
    pub enable_var: bool,
    pub enable_center: bool,
    pub enable_kl: bool,
    pub enable_sr: bool,
    pub osm: OsmParams,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            beta_mix: 0.5,
            w_var: 0.01,
            w_center: 0.0005,
            w_kl: 1.0,
            w_sr: 1.0,
            smoothing_eps: 0.1,
            triplet_margin: 0.3,
            sr_margin: 0.05,
            kl_swapped: false,
            enable_ce: true,
            enable_triplet: true,
            enable_osm: true,
            enable_var: true,
            enable_center: true,
            enable_kl: true,
            enable_sr: true,
            osm: OsmParams::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta_mix) {
            return Err(Error::invalid(format!("beta_mix must be in [0, 1], got {}", self.beta_mix)));
        }
        if !(0.0..1.0).contains(&self.smoothing_eps) {
            return Err(Error::invalid(format!(
                "smoothing_eps must be in [0, 1), got {}",
                self.smoothing_eps
            )));
        }
        if self.triplet_margin <= 0.0 {
            return Err(Error::invalid(format!(
                "triplet_margin must be positive, got {}",
                self.triplet_margin
            )));
        }
        for (name, v) in [
            ("w_var", self.w_var),
            ("w_center", self.w_center),
            ("w_kl", self.w_kl),
            ("w_sr", self.w_sr),
            ("sr_margin", self.sr_margin),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a nonnegative finite value, got {v}")));
            }
        }
        self.osm.validate()
    }
}

/// Knobs of the online-soft-mining term.
#[derive(Clone, Debug, PartialEq)]
pub struct OsmParams {
    /// Negative-pair margin on the unit sphere (distances live in [0, 2]).
    pub alpha: f64,
    /// Mixes the positive against the negative half. In `[0, 1]`.
    pub mix: f64,
    /// Width of the positive-pair similarity kernel.
    pub sigma: f64,
}

impl Default for OsmParams {
    fn default() -> OsmParams {
        OsmParams { alpha: 1.2, mix: 0.5, sigma: 0.8 }
    }
}

impl OsmParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.sigma <= 0.0 || !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::invalid(format!(
                "soft-mining wants alpha > 0, sigma > 0, mix in [0, 1]; got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Per-class embedding centers, updated outside the gradient step.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCenters {
    /// `(num_classes, dim)`.
    pub centers: Tensor,
    /// Step fraction toward each batch class mean. In `(0, 1]`.
    pub update_rate: f64,
}

impl ClassCenters {
    pub fn new(num_classes: usize, dim: usize, update_rate: f64) -> Result<ClassCenters> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::invalid("centers need positive class count and dimension".to_string()));
        }
        if !(update_rate > 0.0 && update_rate <= 1.0) {
            return Err(Error::invalid(format!("update_rate must be in (0, 1], got {update_rate}")));
        }
        Ok(ClassCenters { centers: Tensor::zeros(&[num_classes, dim]), update_rate })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.dims()[1]
    }

    /// Move every class center present in the batch toward that class's
    /// batch mean by `update_rate`.
    pub fn update(&mut self, embeddings: &Tensor, labels: &[usize]) -> Result<()> {
        check_batch(embeddings, labels, Some(self.num_classes()))?;
        if embeddings.dims()[1] != self.dim() {
            return Err(Error::shape(format!(
                "embeddings have dim {}, centers have {}",
                embeddings.dims()[1],
                self.dim()
            )));
        }
        let d = self.dim();
        let mut sums = vec![0.0f64; self.num_classes() * d];
        let mut counts = vec![0usize; self.num_classes()];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[l * d + j] += embeddings.data()[i * d + j];
            }
        }
        let data = self.centers.data_mut();
        for (l, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for j in 0..d {
                let mean = sums[l * d + j] / n as f64;
                data[l * d + j] += self.update_rate * (mean - data[l * d + j]);
            }
        }
        Ok(())
    }
}

fn check_batch(x: &Tensor, labels: &[usize], num_classes: Option<usize>) -> Result<()> {
    if x.rank() != 2 {
        return Err(Error::shape(format!("expected a (B, d) batch, got {:?}", x.dims())));
    }
    if labels.len() != x.dims()[0] {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {}",
            labels.len(),
            x.dims()[0]
        )));
    }
    if let Some(n) = num_classes {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::invalid(format!("label {bad} out of range for {n} classes")));
        }
    }
    Ok(())
}

fn check_distributions(g: &Graph, y: Var, labels: &[usize]) -> Result<()> {
    let yv = g.value(y);
    check_batch(yv, labels, Some(yv.dims()[1]))?;
    let n = yv.dims()[1];
    // loose enough that finite-difference probes (steps up to 1e-3) of a
    // valid distribution still pass, tight enough to reject logits
    for (i, row) in yv.data().chunks(n).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-2 || row.iter().any(|&p| p < -1e-12) {
            return Err(Error::invalid(format!(
                "row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// One-hot rows for `labels`, used to pick per-row entries differentiably.
fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * num_classes + l] = 1.0;
    }
    t
}

/// `(B, 1)` column holding each row's entry at its label.
fn gather_label_column(g: &mut Graph, y: Var, labels: &[usize]) -> Result<Var> {
    let n = g.value(y).dims()[1];
    let mask = g.constant(one_hot(labels, n));
    let picked = g.mul(y, mask)?;
    g.sum_axes(picked, &[1])
}

/// Label-smoothed cross-entropy against predicted distributions `(B, N)`,
/// averaged over the batch. The target puts `1 - eps` on the true class and
/// spreads `eps` uniformly over all `N` classes.
pub fn ce_label_smooth(g: &mut Graph, y: Var, labels: &[usize], eps: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!("smoothing eps must be in [0, 1), got {eps}")));
    }
    check_distributions(g, y, labels)?;
    let (b, n) = (g.value(y).dims()[0], g.value(y).dims()[1]);
    let mut target = one_hot(labels, n);
    for v in target.data_mut() {
        *v = (1.0 - eps) * *v + eps / n as f64;
    }
    let target = g.constant(target);
    let logs = g.ln_clamped(y, LOG_FLOOR);
    let prod = g.mul(target, logs)?;
    let total = g.sum_all(prod)?;
    Ok(g.scale(total, -1.0 / b as f64))
}

/// Mean of the smoothed cross-entropies of the two branch distributions.
pub fn ce_avg(g: &mut Graph, y1: Var, y2: Var, labels: &[usize], eps: f64) -> Result<Var> {
    let a = ce_label_smooth(g, y1, labels, eps)?;
    let b = ce_label_smooth(g, y2, labels, eps)?;
    let sum = g.add(a, b)?;
    Ok(g.scale(sum, 0.5))
}

/// Batch-hard triplet over `(B, d)` embeddings: hardest positive minus
/// nearest negative per anchor, hinged at the margin, Euclidean distances.
pub fn batch_hard_triplet(g: &mut Graph, embeddings: Var, labels: &[usize], margin: f64) -> Result<Var> {
    check_batch(g.value(embeddings), labels, None)?;
    g.batch_hard_triplet(embeddings, labels, margin)
}

/// Mean squared Euclidean distance from each embedding to its class center.
/// Centers enter as constants; their motion is [`ClassCenters::update`].
pub fn center_loss(g: &mut Graph, embeddings: Var, labels: &[usize], centers: &ClassCenters) -> Result<Var> {
    let ev = g.value(embeddings);
    check_batch(ev, labels, Some(centers.num_classes()))?;
    if ev.dims()[1] != centers.dim() {
        return Err(Error::shape(format!(
            "embeddings have dim {}, centers have {}",
            ev.dims()[1],
            centers.dim()
        )));
    }
    let b = ev.dims()[0];
    let d = centers.dim();
    let mut picked = Tensor::zeros(&[b, d]);
    for (i, &l) in labels.iter().enumerate() {
        let row = &centers.centers.data()[l * d..(l + 1) * d];
        picked.data_mut()[i * d..(i + 1) * d].copy_from_slice(row);
    }
    let picked = g.constant(picked);
    let diff = g.sub(embeddings, picked)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum_all(sq)?;
    Ok(g.scale(total, 1.0 / b as f64))
}

/// `(n, n)` squared Euclidean distances between the rows of `x`.
fn pairwise_sq_dists(g: &mut Graph, x: Var) -> Result<Var> {
    let n = g.value(x).dims()[0];
    let sq = g.mul(x, x)?;
    let row = g.sum_axes(sq, &[1])?; // (n, 1)
    let col = g.reshape(row, &[1, n])?;
    let xt = g.transpose2(x)?;
    let cross = g.matmul(x, xt)?;
    let sums = g.add(row, col)?;
    let twice = g.scale(cross, 2.0);
    g.sub(sums, twice)
}

/// Online-soft-mining contrastive term anchored at class centers.
///
/// Embeddings are L2-normalized. Positive pairs are weighted by a Gaussian
/// kernel of their distance, negative pairs by their margin shortfall
/// `alpha - d`; every pair is further weighted by the smaller of the two
/// members' attention, the softmax probability of the own class under the
/// normalized centers. The positive half averages squared distances, the
/// negative half averages squared hinge shortfalls, and `mix` combines the
/// halves. An empty half (no positive or no negative pairs) contributes 0.
pub fn osm_cl(
    g: &mut Graph,
    embeddings: Var,
    labels: &[usize],
    centers: &ClassCenters,
    params: &OsmParams,
) -> Result<Var> {
    params.validate()?;
    let ev = g.value(embeddings);
    check_batch(ev, labels, Some(centers.num_classes()))?;
    if ev.dims()[1] != centers.dim() {
        return Err(Error::shape(format!(
            "embeddings have dim {}, centers have {}",
            ev.dims()[1],
            centers.dim()
        )));
    }
    let n = ev.dims()[0];

    let x = g.l2_normalize(embeddings, LOG_FLOOR)?;
    let d2 = pairwise_sq_dists(g, x)?;
    let d = g.sqrt_clamped(d2, DIST_FLOOR);
    let dsq = g.mul(d, d)?;

    let mut pos = Tensor::zeros(&[n, n]);
    let mut neg = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue; // self-pairs carry no information
            }
            if labels[i] == labels[j] {
                pos.data_mut()[i * n + j] = 1.0;
            } else {
                neg.data_mut()[i * n + j] = 1.0;
            }
        }
    }
    let pos_mask = g.constant(pos);
    let neg_mask = g.constant(neg);

    // per-row attention: softmax over classes of x . normalized-center
    let centers_leaf = g.constant(centers.centers.clone());
    let centers_unit = g.l2_normalize(centers_leaf, LOG_FLOOR)?;
    let ct = g.transpose2(centers_unit)?;
    let logits = g.matmul(x, ct)?;
    let att = g.softmax(logits, 1)?;
    let a_col = gather_label_column(g, att, labels)?; // (n, 1)
    let a_row = g.reshape(a_col, &[1, n])?;
    let a_pair = g.minimum(a_col, a_row)?; // (n, n)

    let neg_short = {
        let negd = g.scale(d, -1.0);
        let shifted = g.add_scalar(negd, params.alpha);
        g.clamp_min(shifted, 0.0)
    };
    let s_pos = {
        let scaled = g.scale(dsq, -1.0 / (params.sigma * params.sigma));
        g.exp(scaled)
    };
    let s_neg = {
        let negd = g.scale(d, -1.0);
        let shifted = g.add_scalar(negd, params.alpha);
        g.clamp_min(shifted, DIST_FLOOR)
    };

    let half = |g: &mut Graph, kernel: Var, mask: Var, cost: Var| -> Result<Var> {
        let w = g.mul(kernel, a_pair)?;
        let w = g.mul(w, mask)?;
        let den = g.sum_all(w)?;
        if g.value(den).item() <= DIST_FLOOR {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let weighted = g.mul(w, cost)?;
        let num = g.sum_all(weighted)?;
        let ratio = g.div(num, den)?;
        Ok(g.scale(ratio, 0.5))
    };
    let l_pos = half(g, s_pos, pos_mask, dsq)?;
    let neg_cost = g.mul(neg_short, neg_short)?;
    let l_neg = half(g, s_neg, neg_mask, neg_cost)?;

    let p = g.scale(l_pos, 1.0 - params.mix);
    let q = g.scale(l_neg, params.mix);
    g.add(p, q)
}

/// Within-class variance penalty: for every class in the batch, the mean
/// squared deviation of its members from their class mean (summed over
/// feature dimensions), summed over classes. Singleton classes contribute 0.
pub fn variance_reg(g: &mut Graph, embeddings: Var, labels: &[usize]) -> Result<Var> {
    let ev = g.value(embeddings);
    check_batch(ev, labels, None)?;
    let b = ev.dims()[0];
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    // P e = per-row class mean; (1 - P) e are the deviations
    let mut p = Tensor::zeros(&[b, b]);
    let mut row_w = Tensor::zeros(&[b, 1]);
    for i in 0..b {
        let n_c = counts[&labels[i]] as f64;
        row_w.data_mut()[i] = 1.0 / n_c;
        for j in 0..b {
            if labels[i] == labels[j] {
                p.data_mut()[i * b + j] = 1.0 / n_c;
            }
        }
    }
    let p = g.constant(p);
    let row_w = g.constant(row_w);
    let means = g.matmul(p, embeddings)?;
    let dev = g.sub(embeddings, means)?;
    let sq = g.mul(dev, dev)?;
    let per_row = g.sum_axes(sq, &[1])?; // (b, 1)
    let weighted = g.mul(per_row, row_w)?;
    g.sum_all(weighted)
}

/// Consistency between the branch distributions, batch-averaged.
/// Default direction treats the fine branch as the target:
/// `D_KL(y2 || y1) = sum y2 (ln y2 - ln y1)`. `swapped` reverses it.
pub fn kl_consistency(g: &mut Graph, y1: Var, y2: Var, swapped: bool) -> Result<Var> {
    let (p, q) = if swapped { (y1, y2) } else { (y2, y1) };
    let pv = g.value(p);
    if pv.rank() != 2 || g.value(q).dims() != pv.dims() {
        return Err(Error::shape(format!(
            "kl wants two equal (B, N) distributions, got {:?} and {:?}",
            g.value(y1).dims(),
            g.value(y2).dims()
        )));
    }
    let b = pv.dims()[0];
    let labels: Vec<usize> = vec![0; b];
    check_distributions(g, y1, &labels)?;
    check_distributions(g, y2, &labels)?;
    let ln_p = g.ln_clamped(p, LOG_FLOOR);
    let ln_q = g.ln_clamped(q, LOG_FLOOR);
    let diff = g.sub(ln_p, ln_q)?;
    let prod = g.mul(p, diff)?;
    let total = g.sum_all(prod)?;
    Ok(g.scale(total, 1.0 / b as f64))
}

/// Rank hinge on the true-class probabilities, batch-averaged:
/// `hinge(y1[l] - y2[l] + m)` keeps the coarse branch from dominating,
/// `hinge(m - y1[l])` keeps it from collapsing.
pub fn satisfied_rank(g: &mut Graph, y1: Var, y2: Var, labels: &[usize], sr_margin: f64) -> Result<Var> {
    if sr_margin < 0.0 {
        return Err(Error::invalid(format!("sr_margin must be nonnegative, got {sr_margin}")));
    }
    check_distributions(g, y1, labels)?;
    check_distributions(g, y2, labels)?;
    let b = labels.len();
    let p1 = gather_label_column(g, y1, labels)?;
    let p2 = gather_label_column(g, y2, labels)?;
    let rank = {
        let diff = g.sub(p1, p2)?;
        let shifted = g.add_scalar(diff, sr_margin);
        g.relu(shifted)
    };
    let limit = {
        let negp = g.scale(p1, -1.0);
        let shifted = g.add_scalar(negp, sr_margin);
        g.relu(shifted)
    };
    let sum = g.add(rank, limit)?;
    let total = g.sum_all(sum)?;
    Ok(g.scale(total, 1.0 / b as f64))
}

/// Weighted per-term contributions, in combination order. Sums to the total
/// exactly when added left to right.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub triplet: f64,
    pub osm: f64,
    pub variance: f64,
    pub center: f64,
    pub kl: f64,
    pub sr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("ce", self.ce),
            ("triplet", self.triplet),
            ("osm", self.osm),
            ("variance", self.variance),
            ("center", self.center),
            ("kl", self.kl),
            ("sr", self.sr),
        ]
    }
}

/// Combine already-computed raw component values exactly the way
/// [`total_loss`] does: ce + (1-beta) trip + beta osm + w_var var
/// + w_center center + w_kl kl + w_sr sr, left to right.
pub fn weighted_total(components: [f64; 7], w: &LossWeights) -> (f64, LossBreakdown) {
    let [ce, trip, osm, var, center, kl, sr] = components;
    let b = LossBreakdown {
        ce: if w.enable_ce { ce } else { 0.0 },
        triplet: if w.enable_triplet { (1.0 - w.beta_mix) * trip } else { 0.0 },
        osm: if w.enable_osm { w.beta_mix * osm } else { 0.0 },
        variance: if w.enable_var { w.w_var * var } else { 0.0 },
        center: if w.enable_center { w.w_center * center } else { 0.0 },
        kl: if w.enable_kl { w.w_kl * kl } else { 0.0 },
        sr: if w.enable_sr { w.w_sr * sr } else { 0.0 },
        total: 0.0,
    };
    let total = (((((b.ce + b.triplet) + b.osm) + b.variance) + b.center) + b.kl) + b.sr;
    (total, LossBreakdown { total, ..b })
}

/// All inputs the objective needs from one training batch. Branch
/// distributions are optional because branch ablations drop them; terms
/// that need a missing distribution contribute 0.
pub struct LossInputs<'a> {
    pub f_star: Var,
    pub y1: Option<Var>,
    pub y2: Option<Var>,
    pub labels: &'a [usize],
}

/// Build the full objective on the graph. Returns the scalar loss node and
/// the per-term weighted breakdown.
pub fn total_loss(
    g: &mut Graph,
    inputs: &LossInputs,
    centers: &ClassCenters,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    w.validate()?;
    let labels = inputs.labels;

    let ce = if w.enable_ce {
        match (inputs.y1, inputs.y2) {
            (Some(y1), Some(y2)) => Some(ce_avg(g, y1, y2, labels, w.smoothing_eps)?),
            (Some(y), None) | (None, Some(y)) => Some(ce_label_smooth(g, y, labels, w.smoothing_eps)?),
            (None, None) => None,
        }
    } else {
        None
    };
    let trip = if w.enable_triplet {
        Some(batch_hard_triplet(g, inputs.f_star, labels, w.triplet_margin)?)
    } else {
        None
    };
    let osm = if w.enable_osm {
        Some(osm_cl(g, inputs.f_star, labels, centers, &w.osm)?)
    } else {
        None
    };
    let var = if w.enable_var { Some(variance_reg(g, inputs.f_star, labels)?) } else { None };
    let center = if w.enable_center {
        Some(center_loss(g, inputs.f_star, labels, centers)?)
    } else {
        None
    };
    let both = |a: Option<Var>, b: Option<Var>| a.zip(b);
    let kl = if w.enable_kl {
        match both(inputs.y1, inputs.y2) {
            Some((y1, y2)) => Some(kl_consistency(g, y1, y2, w.kl_swapped)?),
            None => None,
        }
    } else {
        None
    };
    let sr = if w.enable_sr {
        match both(inputs.y1, inputs.y2) {
            Some((y1, y2)) => Some(satisfied_rank(g, y1, y2, labels, w.sr_margin)?),
            None => None,
        }
    } else {
        None
    };

    let mut weighted: Vec<Var> = Vec::with_capacity(7);
    let mut raw = [0.0f64; 7];
    let push = |g: &mut Graph, slot: &mut f64, term: Option<Var>, scale: f64, out: &mut Vec<Var>| {
        if let Some(t) = term {
            *slot = g.value(t).item();
            out.push(g.scale(t, scale));
        }
    };
    push(g, &mut raw[0], ce, 1.0, &mut weighted);
    push(g, &mut raw[1], trip, 1.0 - w.beta_mix, &mut weighted);
    push(g, &mut raw[2], osm, w.beta_mix, &mut weighted);
    push(g, &mut raw[3], var, w.w_var, &mut weighted);
    push(g, &mut raw[4], center, w.w_center, &mut weighted);
    push(g, &mut raw[5], kl, w.w_kl, &mut weighted);
    push(g, &mut raw[6], sr, w.w_sr, &mut weighted);

    let mut total = match weighted.first() {
        Some(&v) => v,
        None => g.constant(Tensor::scalar(0.0)),
    };
    for &v in weighted.iter().skip(1) {
        total = g.add(total, v)?;
    }

    // missing-branch terms stay 0 in the breakdown
    let mut effective = w.clone();
    effective.enable_ce &= ce.is_some();
    effective.enable_triplet &= trip.is_some();
    effective.enable_osm &= osm.is_some();
    effective.enable_var &= var.is_some();
    effective.enable_center &= center.is_some();
    effective.enable_kl &= kl.is_some();
    effective.enable_sr &= sr.is_some();
    let (_, breakdown) = weighted_total(raw, &effective);
    Ok((total, LossBreakdown { total: g.value(total).item(), ..breakdown }))
}
