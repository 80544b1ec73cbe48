//! A small convolutional backbone for end-to-end runs on synthetic data.
//!
//! Three 3x3 stride-2 pad-1 convolutions with relu, widening toward the
//! requested channel count. It exists so the head can be trained and tested
//! without a real feature extractor; anything producing a `(t, h, w, c)` map
//! can stand in for it.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest input side: three halvings must leave at least one cell.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Debug)]
pub struct ConvStage {
    /// `(3, 3, c_in, c_out)`.
    pub weight: Tensor,
    /// `(c_out,)`.
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub stages: Vec<ConvStage>,
}

impl BackboneParams {
    /// Three stages from `c_in` image channels up to `c_out`, widths
    /// `c_out / 4`, `c_out / 2`, `c_out`.
    pub fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Result<BackboneParams> {
        if c_in == 0 {
            return Err(Error::invalid("backbone input channels must be positive".to_string()));
        }
        if c_out < 4 || c_out % 4 != 0 {
            return Err(Error::invalid(format!(
                "backbone output channels must be a positive multiple of 4, got {c_out}"
            )));
        }
        let widths = [c_out / 4, c_out / 2, c_out];
        let mut stages = Vec::with_capacity(3);
        let mut prev = c_in;
        for w in widths {
            let fan_in = 9 * prev;
            let bound = (2.0 / fan_in as f64).sqrt();
            stages.push(ConvStage {
                weight: Tensor::rand_uniform(&[3, 3, prev, w], -bound, bound, rng),
                bias: Tensor::zeros(&[w]),
            });
            prev = w;
        }
        Ok(BackboneParams { stages })
    }

    pub fn c_in(&self) -> usize {
        self.stages[0].weight.dims()[2]
    }

    pub fn c_out(&self) -> usize {
        self.stages.last().unwrap().weight.dims()[3]
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|s| s.weight.len() + s.bias.len()).sum()
    }

    /// Learnable tensors in a fixed canonical order. `prefix` distinguishes
    /// multiple backbone instances in one checkpoint.
    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("{prefix}.stage{i}.weight"), &s.weight));
            out.push((format!("{prefix}.stage{i}.bias"), &s.bias));
        }
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(2 * self.stages.len());
        for (i, s) in self.stages.iter_mut().enumerate() {
            out.push((format!("{prefix}.stage{i}.weight"), &mut s.weight));
            out.push((format!("{prefix}.stage{i}.bias"), &mut s.bias));
        }
        out
    }
}

/// Graph leaves for the backbone, inserted once per graph.
pub struct BackboneVars {
    pub stages: Vec<(Var, Var)>,
}

impl BackboneVars {
    pub fn insert(g: &mut Graph, p: &BackboneParams) -> BackboneVars {
        BackboneVars {
            stages: p
                .stages
                .iter()
                .map(|s| (g.leaf(s.weight.clone()), g.leaf(s.bias.clone())))
                .collect(),
        }
    }

    /// Leaves in the same order as [`BackboneParams::named`].
    pub fn leaf_list(&self) -> Vec<Var> {
        self.stages.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Run the stack over `(t, h, w, c_in)` frames. Spatial extents halve per
/// stage (rounding up), so `h, w >= 8` is required.
pub fn backbone_forward(g: &mut Graph, vars: &BackboneVars, frames: Var) -> Result<Var> {
    let dims = g.value(frames).dims().to_vec();
    if dims.len() != 4 {
        return Err(Error::shape(format!("backbone wants (t, h, w, c), got {dims:?}")));
    }
    if dims[1] < MIN_SIDE || dims[2] < MIN_SIDE {
        return Err(Error::invalid(format!(
            "backbone needs frames of at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            dims[1], dims[2]
        )));
    }
    let mut x = frames;
    for &(w, b) in &vars.stages {
        let conv = g.conv3x3_s2(x, w, b)?;
        x = g.relu(conv);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn output_shape_halves_three_times() {
        let params = BackboneParams::init(3, 16, &mut rng(1)).unwrap();
        let mut g = Graph::new();
        let vars = BackboneVars::insert(&mut g, &params);
        let frames = g.leaf(Tensor::rand_uniform(&[2, 32, 24, 3], 0.0, 1.0, &mut rng(2)));
        let out = backbone_forward(&mut g, &vars, frames).unwrap();
        assert_eq!(g.value(out).dims(), &[2, 4, 3, 16]);
    }

    #[test]
    fn widths_follow_quarter_half_full_schedule() {
        let params = BackboneParams::init(3, 64, &mut rng(3)).unwrap();
        let widths: Vec<usize> = params.stages.iter().map(|s| s.weight.dims()[3]).collect();
        assert_eq!(widths, [16, 32, 64]);
        assert_eq!(params.c_in(), 3);
        assert_eq!(params.c_out(), 64);
    }

    #[test]
    fn rejects_small_frames() {
        let params = BackboneParams::init(3, 16, &mut rng(4)).unwrap();
        let mut g = Graph::new();
        let vars = BackboneVars::insert(&mut g, &params);
        let frames = g.leaf(Tensor::zeros(&[1, 7, 32, 3]));
        assert!(backbone_forward(&mut g, &vars, frames).is_err());
    }

    #[test]
    fn rejects_indivisible_output_width() {
        assert!(BackboneParams::init(3, 6, &mut rng(5)).is_err());
        assert!(BackboneParams::init(3, 0, &mut rng(5)).is_err());
    }

    #[test]
    fn param_count_matches_closed_form() {
        let params = BackboneParams::init(3, 16, &mut rng(6)).unwrap();
        let expect = (9 * 3 * 4 + 4) + (9 * 4 * 8 + 8) + (9 * 8 * 16 + 16);
        assert_eq!(params.param_count(), expect);
        assert_eq!(params.named("backbone").len(), 6);
    }

    #[test]
    fn named_order_matches_leaf_list() {
        let params = BackboneParams::init(3, 16, &mut rng(7)).unwrap();
        let mut g = Graph::new();
        let vars = BackboneVars::insert(&mut g, &params);
        let leaves = vars.leaf_list();
        for ((_, tensor), var) in params.named("b").iter().zip(&leaves) {
            assert_eq!(g.value(*var).data(), tensor.data());
        }
    }

    #[test]
    fn output_is_nonnegative_after_relu() {
        let params = BackboneParams::init(3, 8, &mut rng(8)).unwrap();
        let mut g = Graph::new();
        let vars = BackboneVars::insert(&mut g, &params);
        let frames = g.leaf(Tensor::rand_uniform(&[1, 8, 8, 3], -1.0, 1.0, &mut rng(9)));
        let out = backbone_forward(&mut g, &vars, frames).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v >= 0.0));
    }
}
