//! Flat `key = value` run configuration.
//!
//! One file covers the model shape, batch construction, loss weights,
//! optimizer schedule, and evaluation options. Parsing is strict: unknown
//! keys, duplicate keys, and untypable values are errors. Serialization
//! emits every key in a fixed order with round-trip-exact number formatting,
//! so parse -> serialize -> parse is a fixed point.

use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::losses::{LossWeights, OsmParams};

/// Typed parse and exact display for config values.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self>;
    fn display_value(&self) -> String;
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> Result<usize> {
        s.parse().map_err(|_| Error::Config(format!("expected a nonnegative integer, got {s:?}")))
    }
    fn display_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> Result<u64> {
        s.parse().map_err(|_| Error::Config(format!("expected a nonnegative integer, got {s:?}")))
    }
    fn display_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<f64> {
        let v: f64 =
            s.parse().map_err(|_| Error::Config(format!("expected a number, got {s:?}")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("number must be finite, got {s:?}")));
        }
        Ok(v)
    }
    fn display_value(&self) -> String {
        // shortest decimal that parses back to the same bits
        format!("{self}")
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Result<bool> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(Error::Config(format!("expected true or false, got {s:?}"))),
        }
    }
    fn display_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> Result<Vec<usize>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|part| usize::parse_value(part.trim())).collect()
    }
    fn display_value(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Scoring rule for ranking gallery embeddings against a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Dot product of L2-normalized vectors (cosine).
    Dot,
    /// Negated Euclidean distance.
    Euclidean,
}

impl ConfigValue for Metric {
    fn parse_value(s: &str) -> Result<Metric> {
        match s {
            "dot" => Ok(Metric::Dot),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Config(format!("expected dot or euclidean, got {s:?}"))),
        }
    }
    fn display_value(&self) -> String {
        match self {
            Metric::Dot => "dot".to_string(),
            Metric::Euclidean => "euclidean".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
}

impl ConfigValue for OptimizerKind {
    fn parse_value(s: &str) -> Result<OptimizerKind> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("expected adam, got {s:?}"))),
        }
    }
    fn display_value(&self) -> String {
        "adam".to_string()
    }
}

macro_rules! run_config {
    ($(($field:ident, $ty:ty, $default:expr)),+ $(,)?) => {
        /// Every runtime knob, one flat namespace. Field names are the file
        /// keys. See [`RunConfig::default`] for the documented defaults.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty,)+
        }

        impl Default for RunConfig {
            fn default() -> RunConfig {
                RunConfig { $($field: $default,)+ }
            }
        }

        impl RunConfig {
            /// Assign one field from its text form, rejecting unknown keys.
            pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("key {key}: {e}")))?;
                        Ok(())
                    })+
                    _ => Err(Error::Config(format!("unknown key {key:?}"))),
                }
            }

            /// All keys in serialization order.
            pub fn keys() -> &'static [&'static str] {
                &[$(stringify!($field)),+]
            }

            /// One `key = value` line per field, fixed order.
            pub fn serialize(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($field));
                    out.push_str(" = ");
                    out.push_str(&self.$field.display_value());
                    out.push('\n');
                )+
                out
            }
        }
    };
}

run_config! {
    // model shape
    (c_backbone, usize, 2048),
    (c_star, usize, 1024),
    // 0 means "derive from the training dataset"; the default matches the
    // video-profile identity count the reference totals are quoted at
    (num_classes, usize, 625),
    (bn_momentum, f64, 0.1),
    (bn_epsilon, f64, 1e-5),
    (use_channel_weights, bool, true),
    (use_nonlocal, bool, true),
    (distinct_kq, bool, false),
    (use_gfm, bool, true),
    (use_fgm, bool, true),
    (use_fine, bool, true),
    // batch construction
    (p, usize, 32),
    (k, usize, 5),
    (t, usize, 4),
    (input_h, usize, 250),
    (input_w, usize, 150),
    // objective
    (beta_mix, f64, 0.5),
    (w_var, f64, 0.01),
    (w_center, f64, 0.0005),
    (w_kl, f64, 1.0),
    (w_sr, f64, 1.0),
    (smoothing_eps, f64, 0.1),
    (triplet_margin, f64, 0.3),
    (sr_margin, f64, 0.05),
    (kl_swapped, bool, false),
    (enable_ce, bool, true),
    (enable_triplet, bool, true),
    (enable_osm, bool, true),
    (enable_var, bool, true),
    (enable_center, bool, true),
    (enable_kl, bool, true),
    (enable_sr, bool, true),
    (osm_alpha, f64, 1.2),
    (osm_mix, f64, 0.5),
    (osm_sigma, f64, 0.8),
    (center_update_rate, f64, 0.5),
    // optimizer schedule
    (epochs, usize, 80),
    (base_lr, f64, 3.5e-4),
    (warmup_epochs, usize, 10),
    (lr_decay_epochs, Vec<usize>, vec![40, 70]),
    (lr_decay_factor, f64, 0.1),
    (seed, u64, 1),
    (optimizer, OptimizerKind, OptimizerKind::Adam),
    (adam_beta1, f64, 0.9),
    (adam_beta2, f64, 0.999),
    (adam_epsilon, f64, 1e-8),
    // 0 means "enough batches to cover the dataset once"
    (iters_per_epoch, usize, 0),
    // 0 means "final checkpoint only"
    (checkpoint_every, usize, 1),
    // evaluation
    (eval_metric, Metric, Metric::Dot),
    (eval_max_clips, usize, 32),
    (rerank_k1, usize, 20),
    (rerank_k2, usize, 6),
    (rerank_lambda, f64, 0.3),
    (eval_ranks, Vec<usize>, vec![1, 5, 10, 20]),
}

impl RunConfig {
    /// Parse a config file body. Lines are `key = value`; `#` starts a
    /// comment; blank lines are ignored. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key {key:?} repeated", lineno + 1)));
            }
            cfg.set_key(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Named starting points. `mars-like` is the video profile (clips of 4,
    /// 32 identities by 5 instances); `image-like` is the single-frame
    /// profile (32 by 4). Both default to 250x150 inputs.
    pub fn preset(name: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        match name {
            "mars-like" => {
                cfg.t = 4;
                cfg.p = 32;
                cfg.k = 5;
            }
            "image-like" => {
                cfg.t = 1;
                cfg.p = 32;
                cfg.k = 4;
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?}; available: mars-like, image-like"
                )))
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!(
                "batches need p >= 2 and k >= 2 for hard mining, got p={} k={}",
                self.p, self.k
            )));
        }
        if self.t < 1 {
            return Err(Error::Config("t must be at least 1".to_string()));
        }
        if self.input_h == 0 || self.input_w == 0 {
            return Err(Error::Config("input extents must be positive".to_string()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if !(self.center_update_rate > 0.0 && self.center_update_rate <= 1.0) {
            return Err(Error::Config(format!(
                "center_update_rate must be in (0, 1], got {}",
                self.center_update_rate
            )));
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::Config("adam_epsilon must be positive".to_string()));
        }
        if self.eval_max_clips == 0 {
            return Err(Error::Config("eval_max_clips must be at least 1".to_string()));
        }
        if self.rerank_k2 < 1 || self.rerank_k1 <= self.rerank_k2 {
            return Err(Error::Config(format!(
                "re-ranking needs k1 > k2 >= 1, got k1={} k2={}",
                self.rerank_k1, self.rerank_k2
            )));
        }
        if !(0.0..=1.0).contains(&self.rerank_lambda) {
            return Err(Error::Config(format!(
                "rerank_lambda must be in [0, 1], got {}",
                self.rerank_lambda
            )));
        }
        if self.eval_ranks.is_empty() || self.eval_ranks.iter().any(|&r| r == 0) {
            return Err(Error::Config("eval_ranks must be nonempty positive ranks".to_string()));
        }
        // loss weights and the head shape validate through their own types
        self.loss_weights().validate()?;
        let probe_classes = if self.num_classes == 0 { 1 } else { self.num_classes };
        self.head_config(probe_classes)?;
        Ok(())
    }

    /// Head shape with an explicit class count (training derives it from
    /// the dataset; analysis commands pass `num_classes` through).
    pub fn head_config(&self, num_classes: usize) -> Result<HeadConfig> {
        let mut cfg = HeadConfig::new(self.c_backbone, self.c_star, num_classes)?;
        cfg.bn_momentum = self.bn_momentum;
        cfg.bn_epsilon = self.bn_epsilon;
        cfg.use_channel_weights = self.use_channel_weights;
        cfg.use_nonlocal = self.use_nonlocal;
        cfg.distinct_kq = self.distinct_kq;
        cfg.use_gfm = self.use_gfm;
        cfg.use_fgm = self.use_fgm;
        cfg.use_fine = self.use_fine;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            beta_mix: self.beta_mix,
            w_var: self.w_var,
            w_center: self.w_center,
            w_kl: self.w_kl,
            w_sr: self.w_sr,
            smoothing_eps: self.smoothing_eps,
            triplet_margin: self.triplet_margin,
            sr_margin: self.sr_margin,
            kl_swapped: self.kl_swapped,
            enable_ce: self.enable_ce,
            enable_triplet: self.enable_triplet,
            enable_osm: self.enable_osm,
            enable_var: self.enable_var,
            enable_center: self.enable_center,
            enable_kl: self.enable_kl,
            enable_sr: self.enable_sr,
            osm: OsmParams { alpha: self.osm_alpha, mix: self.osm_mix, sigma: self.osm_sigma },
        }
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn presets_set_the_documented_profiles() {
        let mars = RunConfig::preset("mars-like").unwrap();
        assert_eq!((mars.t, mars.p, mars.k), (4, 32, 5));
        assert_eq!((mars.input_h, mars.input_w), (250, 150));
        let image = RunConfig::preset("image-like").unwrap();
        assert_eq!((image.t, image.p, image.k), (1, 32, 4));
        assert!(RunConfig::preset("tiny").is_err());
    }

    #[test]
    fn parse_overrides_and_ignores_comments() {
        let cfg = RunConfig::parse(
            "# a comment\n\
             c_star = 64\n\
             \n\
             beta_mix = 0.25  # trailing comment\n\
             use_nonlocal = false\n\
             lr_decay_epochs = 10,20\n",
        )
        .unwrap();
        assert_eq!(cfg.c_star, 64);
        assert_eq!(cfg.beta_mix, 0.25);
        assert!(!cfg.use_nonlocal);
        assert_eq!(cfg.lr_decay_epochs, vec![10, 20]);
        // untouched keys keep defaults
        assert_eq!(cfg.c_backbone, 2048);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("c_starr = 64\n").unwrap_err();
        assert!(err.to_string().contains("c_starr"));
    }

    #[test]
    fn repeated_key_is_rejected() {
        assert!(RunConfig::parse("p = 4\np = 8\n").is_err());
    }

    #[test]
    fn typed_values_are_enforced() {
        assert!(RunConfig::parse("p = четыре\n").is_err());
        assert!(RunConfig::parse("use_gfm = maybe\n").is_err());
        assert!(RunConfig::parse("base_lr = fast\n").is_err());
        assert!(RunConfig::parse("eval_metric = cosine?\n").is_err());
        assert!(RunConfig::parse("optimizer = sgd\n").is_err());
        assert!(RunConfig::parse("just a line\n").is_err());
    }

    #[test]
    fn serialize_parse_is_a_fixed_point() {
        let mut cfg = RunConfig::preset("image-like").unwrap();
        cfg.base_lr = 3.5e-4;
        cfg.w_center = 0.0005;
        cfg.seed = 12345;
        cfg.eval_metric = Metric::Euclidean;
        cfg.lr_decay_epochs = vec![];
        let s1 = cfg.serialize();
        let back = RunConfig::parse(&s1).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.serialize(), s1);
    }

    #[test]
    fn every_key_survives_a_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        assert_eq!(text.lines().count(), RunConfig::keys().len());
        for key in RunConfig::keys() {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{key} ="))),
                "missing {key}"
            );
        }
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn cross_field_validation_catches_bad_shapes() {
        assert!(RunConfig::parse("p = 1\n").is_err());
        assert!(RunConfig::parse("k = 1\n").is_err());
        assert!(RunConfig::parse("t = 0\n").is_err());
        assert!(RunConfig::parse("c_star = 30\n").is_err()); // not divisible by 4
        assert!(RunConfig::parse("rerank_k2 = 25\n").is_err()); // k2 >= k1
        assert!(RunConfig::parse("rerank_lambda = 1.5\n").is_err());
        assert!(RunConfig::parse("use_gfm = false\nuse_fine = false\n").is_err());
        assert!(RunConfig::parse("smoothing_eps = 1.0\n").is_err());
        assert!(RunConfig::parse("eval_ranks = \n").is_err());
    }

    #[test]
    fn head_config_carries_the_flags() {
        let cfg = RunConfig::parse("distinct_kq = true\nuse_fgm = false\nc_backbone = 64\nc_star = 32\n")
            .unwrap();
        let head = cfg.head_config(10).unwrap();
        assert!(head.distinct_kq);
        assert!(!head.use_fgm);
        assert_eq!(head.num_classes, 10);
        assert_eq!(head.c_bar(), 8);
    }

    #[test]
    fn loss_weights_carry_the_knobs() {
        let cfg = RunConfig::parse("beta_mix = 0.7\nenable_sr = false\nosm_sigma = 0.5\n").unwrap();
        let w = cfg.loss_weights();
        assert_eq!(w.beta_mix, 0.7);
        assert!(!w.enable_sr);
        assert_eq!(w.osm.sigma, 0.5);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }
}
