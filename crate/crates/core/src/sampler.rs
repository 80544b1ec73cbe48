//! Identity-balanced batch construction.
//!
//! A batch holds p distinct identities with k clips each, every clip t
//! frames long. Clip frames are drawn at uniform stride so a clip spans the
//! tracklet's whole temporal extent instead of one contiguous burst.

use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// One image sequence of a single person from a single camera.
/// Still images are tracklets with one frame.
#[derive(Clone, Debug)]
pub struct Tracklet {
    pub tracklet_id: usize,
    pub identity: usize,
    pub camera: usize,
    /// Pixels, shape (frames, h, w, 3), values in [0, 1].
    pub frames: FeatureMap,
}

impl Tracklet {
    pub fn num_frames(&self) -> usize {
        self.frames.t()
    }

    /// Frames at the given indices as a clip, in order.
    pub fn clip(&self, indices: &[usize]) -> FeatureMap {
        let (h, w, c) = (self.frames.h(), self.frames.w(), self.frames.c());
        let frame_len = h * w * c;
        let mut out = FeatureMap::zeros(indices.len(), h, w, c);
        for (row, &src) in indices.iter().enumerate() {
            let from = &self.frames.data()[src * frame_len..(src + 1) * frame_len];
            out.data_mut()[row * frame_len..(row + 1) * frame_len].copy_from_slice(from);
        }
        out
    }
}

/// An in-memory training or evaluation split.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub tracklets: Vec<Tracklet>,
}

impl Dataset {
    /// Distinct identities in ascending order. Their positions double as
    /// classifier class indices.
    pub fn classes(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.tracklets.iter().map(|t| t.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn num_identities(&self) -> usize {
        self.classes().len()
    }

    /// Tracklet indices grouped per identity, ascending identity order.
    fn by_identity(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.tracklets.iter().enumerate() {
            map.entry(t.identity).or_default().push(i);
        }
        map
    }
}

/// Batch shape: p identities, k clips per identity, t frames per clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSpec {
    pub p: usize,
    pub k: usize,
    pub t: usize,
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            // hard mining needs at least two identities and two instances
            return Err(Error::invalid(format!(
                "batch spec needs p >= 2 and k >= 2, got p={} k={}",
                self.p, self.k
            )));
        }
        if self.t < 1 {
            return Err(Error::invalid("batch spec needs t >= 1"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

/// One training batch. `labels` are class indices aligned with
/// [`Dataset::classes`], not raw identity numbers.
#[derive(Clone, Debug)]
pub struct Batch {
    pub clips: Vec<FeatureMap>,
    pub labels: Vec<usize>,
}

/// Frame indices for one clip: stride max(1, n/t) with a random phase when
/// the tracklet is long enough, cyclic repetition when it is shorter than t.
pub fn clip_indices<R: Rng>(num_frames: usize, t: usize, rng: &mut R) -> Vec<usize> {
    assert!(num_frames > 0 && t > 0);
    if num_frames < t {
        return (0..t).map(|i| i % num_frames).collect();
    }
    let stride = num_frames / t;
    let span = stride * (t - 1);
    let start = rng.gen_range(0..num_frames - span);
    (0..t).map(|i| start + i * stride).collect()
}

pub fn sample_pk_batch<R: Rng>(dataset: &Dataset, spec: &BatchSpec, rng: &mut R) -> Result<Batch> {
    spec.validate()?;
    let groups = dataset.by_identity();
    if groups.len() < spec.p {
        return Err(Error::Dataset(format!(
            "batch wants {} identities but the dataset has {}",
            spec.p,
            groups.len()
        )));
    }
    let classes = dataset.classes();
    let class_of = |identity: usize| classes.binary_search(&identity).expect("known identity");

    let identities: Vec<usize> = groups.keys().copied().collect();
    let chosen: Vec<usize> =
        identities.choose_multiple(rng, spec.p).copied().collect();

    let mut clips = Vec::with_capacity(spec.batch_size());
    let mut labels = Vec::with_capacity(spec.batch_size());
    for &identity in &chosen {
        let pool = &groups[&identity];
        let picks: Vec<usize> = if pool.len() >= spec.k {
            pool.choose_multiple(rng, spec.k).copied().collect()
        } else {
            // replacement keeps the k-per-identity contract
            (0..spec.k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        };
        for tracklet_idx in picks {
            let tracklet = &dataset.tracklets[tracklet_idx];
            let indices = clip_indices(tracklet.num_frames(), spec.t, rng);
            clips.push(tracklet.clip(&indices));
            labels.push(class_of(identity));
        }
    }
    Ok(Batch { clips, labels })
}
