//! Retrieval evaluation: tracklet embeddings, similarity scoring, and the
//! standard ranking metrics.
//!
//! Embedding extraction is generic over the clip embedder so the splitting
//! and averaging rules can be verified against trivial oracles; the real
//! model plugs in the same way.
//!
//! Ranking follows the cross-camera protocol: gallery entries that share
//! both identity and camera with the query are ignored, and queries left
//! without any valid match are skipped and tallied rather than scored.

use std::path::Path;

use crate::archive::TensorArchive;
use crate::config::Metric;
use crate::error::{Error, Result};
use crate::sampler::Tracklet;
use crate::tensor::{l2_normalize, matmul, Tensor};

/// One tracklet's pooled embedding plus the metadata ranking needs.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub tracklet_id: usize,
    pub identity: usize,
    pub camera: usize,
    pub embedding: Vec<f64>,
}

/// Pool one embedding out of a whole tracklet: split into non-overlapping
/// clips of length t (cyclic repetition when the tracklet is shorter than
/// t), keep at most `max_clips` of them evenly spaced, embed each, average.
pub fn extract_tracklet_embedding<F>(
    tracklet: &Tracklet,
    t: usize,
    max_clips: usize,
    mut embed: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&crate::tensor::FeatureMap) -> Result<Vec<f64>>,
{
    if t == 0 || max_clips == 0 {
        return Err(Error::invalid("clip length and clip cap must be positive"));
    }
    let n = tracklet.num_frames();
    if n == 0 {
        return Err(Error::invalid(format!(
            "tracklet {} has no frames to embed",
            tracklet.tracklet_id
        )));
    }

    let starts: Vec<usize> = if n < t {
        vec![0]
    } else {
        let all = n / t;
        let used = all.min(max_clips);
        (0..used).map(|j| (j * all / used) * t).collect()
    };

    let mut pooled: Option<Vec<f64>> = None;
    for &start in &starts {
        let indices: Vec<usize> = (0..t).map(|i| (start + i) % n).collect();
        let clip = tracklet.clip(&indices);
        let e = embed(&clip)?;
        if e.is_empty() {
            return Err(Error::invalid("embedder returned an empty vector"));
        }
        match &mut pooled {
            None => pooled = Some(e),
            Some(acc) => {
                if acc.len() != e.len() {
                    return Err(Error::shape(format!(
                        "embedder changed dimension: {} then {}",
                        acc.len(),
                        e.len()
                    )));
                }
                for (a, v) in acc.iter_mut().zip(&e) {
                    *a += v;
                }
            }
        }
    }
    let mut out = pooled.expect("at least one clip");
    let scale = 1.0 / starts.len() as f64;
    for v in &mut out {
        *v *= scale;
    }
    Ok(out)
}

fn embedding_matrix(records: &[EmbeddingRecord]) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::invalid("no embeddings"));
    }
    let d = records[0].embedding.len();
    if d == 0 || records.iter().any(|r| r.embedding.len() != d) {
        return Err(Error::shape("embeddings must share one positive dimension".to_string()));
    }
    let data: Vec<f64> = records.iter().flat_map(|r| r.embedding.iter().copied()).collect();
    Tensor::from_vec(&[records.len(), d], data)
}

/// Query-by-gallery score matrix; larger always means more alike. Dot mode
/// normalizes both sides first (cosine), euclidean mode negates distances.
pub fn similarity_matrix(query: &Tensor, gallery: &Tensor, metric: Metric) -> Result<Tensor> {
    if query.rank() != 2 || gallery.rank() != 2 || query.dims()[1] != gallery.dims()[1] {
        return Err(Error::shape(format!(
            "expected (Q, d) and (G, d), got {:?} and {:?}",
            query.dims(),
            gallery.dims()
        )));
    }
    match metric {
        Metric::Dot => {
            let qn = l2_normalize(query, 1e-12)?;
            let gn = l2_normalize(gallery, 1e-12)?;
            matmul(&qn, &gn.transpose2()?)
        }
        Metric::Euclidean => {
            let (q, g, d) = (query.dims()[0], gallery.dims()[0], query.dims()[1]);
            let mut out = Tensor::zeros(&[q, g]);
            for i in 0..q {
                for j in 0..g {
                    let mut acc = 0.0;
                    for k in 0..d {
                        let diff = query.data()[i * d + k] - gallery.data()[j * d + k];
                        acc += diff * diff;
                    }
                    out.data_mut()[i * g + j] = -acc.sqrt();
                }
            }
            Ok(out)
        }
    }
}

/// Identity and camera of one embedding row.
#[derive(Clone, Copy, Debug)]
pub struct EvalItem {
    pub identity: usize,
    pub camera: usize,
}

impl From<&EmbeddingRecord> for EvalItem {
    fn from(r: &EmbeddingRecord) -> EvalItem {
        EvalItem { identity: r.identity, camera: r.camera }
    }
}

#[derive(Clone, Debug)]
pub struct RankingResult {
    /// Mean average precision over evaluated queries.
    pub map: f64,
    /// (rank, fraction of evaluated queries with a hit at or before rank).
    pub cmc: Vec<(usize, f64)>,
    /// One entry per query; None marks a skipped query.
    pub per_query_ap: Vec<Option<f64>>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Gallery order for one score row: valid entries only, best score first,
/// ties broken by gallery index so results never depend on sort internals.
fn ranked_gallery(scores: &[f64], query: EvalItem, gallery: &[EvalItem]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..gallery.len())
        .filter(|&j| !(gallery[j].identity == query.identity && gallery[j].camera == query.camera))
        .collect();
    idx.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b))
    });
    idx
}

/// Full ranking pass: average precision per query, mAP, and the CMC curve
/// at the requested ranks.
pub fn rank_and_score(
    scores: &Tensor,
    queries: &[EvalItem],
    gallery: &[EvalItem],
    ranks: &[usize],
) -> Result<RankingResult> {
    if scores.rank() != 2
        || scores.dims()[0] != queries.len()
        || scores.dims()[1] != gallery.len()
    {
        return Err(Error::shape(format!(
            "score matrix {:?} does not match {} queries by {} gallery",
            scores.dims(),
            queries.len(),
            gallery.len()
        )));
    }
    if ranks.is_empty() || ranks.iter().any(|&r| r == 0) {
        return Err(Error::invalid("ranks must be nonempty and positive"));
    }
    scores.ensure_finite("similarity scores")?;

    let g = gallery.len();
    let mut per_query_ap = Vec::with_capacity(queries.len());
    let mut first_hits: Vec<usize> = Vec::new();
    let mut skipped = 0usize;
    for (i, q) in queries.iter().enumerate() {
        let row = &scores.data()[i * g..(i + 1) * g];
        let order = ranked_gallery(row, *q, gallery);
        let relevant = order.iter().filter(|&&j| gallery[j].identity == q.identity).count();
        if relevant == 0 {
            skipped += 1;
            per_query_ap.push(None);
            continue;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        let mut first_hit = None;
        for (pos, &j) in order.iter().enumerate() {
            if gallery[j].identity == q.identity {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
                if first_hit.is_none() {
                    first_hit = Some(pos + 1);
                }
            }
        }
        per_query_ap.push(Some(ap / relevant as f64));
        first_hits.push(first_hit.expect("relevant > 0"));
    }

    let evaluated = first_hits.len();
    if evaluated == 0 {
        return Err(Error::invalid("every query was skipped; nothing to score"));
    }
    let map = per_query_ap.iter().flatten().sum::<f64>() / evaluated as f64;
    let cmc = ranks
        .iter()
        .map(|&r| {
            let hits = first_hits.iter().filter(|&&h| h <= r).count();
            (r, hits as f64 / evaluated as f64)
        })
        .collect();
    Ok(RankingResult { map, cmc, per_query_ap, evaluated, skipped })
}

pub fn compute_map(scores: &Tensor, queries: &[EvalItem], gallery: &[EvalItem]) -> Result<f64> {
    Ok(rank_and_score(scores, queries, gallery, &[1])?.map)
}

pub fn compute_cmc(
    scores: &Tensor,
    queries: &[EvalItem],
    gallery: &[EvalItem],
    ranks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    Ok(rank_and_score(scores, queries, gallery, ranks)?.cmc)
}

/// Score two embedding record sets end to end.
pub fn evaluate_records(
    queries: &[EmbeddingRecord],
    gallery: &[EmbeddingRecord],
    metric: Metric,
    ranks: &[usize],
) -> Result<RankingResult> {
    let q = embedding_matrix(queries)?;
    let g = embedding_matrix(gallery)?;
    let scores = similarity_matrix(&q, &g, metric)?;
    let q_items: Vec<EvalItem> = queries.iter().map(EvalItem::from).collect();
    let g_items: Vec<EvalItem> = gallery.iter().map(EvalItem::from).collect();
    rank_and_score(&scores, &q_items, &g_items, ranks)
}

/// Embedding archive layout: one (N, d) tensor of rows plus one (N, 3)
/// tensor of (tracklet_id, identity, camera). Counts stay exact in the
/// 32-bit float payload up to 2^24.
pub fn save_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    const EXACT: usize = 1 << 24;
    let mut meta = Vec::with_capacity(records.len() * 3);
    for r in records {
        for v in [r.tracklet_id, r.identity, r.camera] {
            if v >= EXACT {
                return Err(Error::invalid(format!("metadata value {v} exceeds exact range")));
            }
            meta.push(v as f64);
        }
    }
    let mut ar = TensorArchive::new();
    ar.insert("embeddings", embedding_matrix(records)?)?;
    ar.insert("meta", Tensor::from_vec(&[records.len(), 3], meta)?)?;
    ar.save(path)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let ar = TensorArchive::load(path)?;
    let emb = ar.require("embeddings")?;
    let meta = ar.require("meta")?;
    if emb.rank() != 2 || meta.rank() != 2 || meta.dims() != [emb.dims()[0], 3] {
        return Err(Error::Format(format!(
            "embedding archive has shapes {:?} and {:?}",
            emb.dims(),
            meta.dims()
        )));
    }
    let (n, d) = (emb.dims()[0], emb.dims()[1]);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let m = &meta.data()[i * 3..(i + 1) * 3];
        if m.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Format(format!("metadata row {i} is not a count: {m:?}")));
        }
        out.push(EmbeddingRecord {
            tracklet_id: m[0] as usize,
            identity: m[1] as usize,
            camera: m[2] as usize,
            embedding: emb.data()[i * d..(i + 1) * d].to_vec(),
        });
    }
    Ok(out)
}
