//! k-reciprocal re-ranking.
//!
//! Queries and gallery are pooled into one point set. Each point gets an
//! expanded k-reciprocal neighbor set, encoded as an exp-weighted,
//! L1-normalized membership vector; ranking then blends the original
//! Euclidean distance with the Jaccard distance between those vectors:
//! d* = lambda * d + (1 - lambda) * d_jaccard.
//!
//! Neighbor lists include the point itself (it is trivially reciprocal),
//! and ties in distance break by point index so results are reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn pairwise_dist(points: &Tensor) -> Tensor {
    let (n, d) = (points.dims()[0], points.dims()[1]);
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for k in 0..d {
                let diff = points.data()[i * d + k] - points.data()[j * d + k];
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            out.data_mut()[i * n + j] = dist;
            out.data_mut()[j * n + i] = dist;
        }
    }
    out
}

/// Indices of each row sorted by ascending distance, self first.
fn sorted_neighbors(dist: &Tensor) -> Vec<Vec<usize>> {
    let n = dist.dims()[0];
    (0..n)
        .map(|i| {
            let row = &dist.data()[i * n..(i + 1) * n];
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("finite").then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// k-reciprocal set of i: the k+1 nearest of i (self included) that also
/// count i among their own k+1 nearest.
fn reciprocal_set(sorted: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    let near = &sorted[i][..k + 1];
    near.iter()
        .copied()
        .filter(|&j| sorted[j][..k + 1].contains(&i))
        .collect()
}

pub fn k_reciprocal_rerank(
    q_embeddings: &Tensor,
    g_embeddings: &Tensor,
    k1: usize,
    k2: usize,
    lambda: f64,
) -> Result<Tensor> {
    if q_embeddings.rank() != 2
        || g_embeddings.rank() != 2
        || q_embeddings.dims()[1] != g_embeddings.dims()[1]
    {
        return Err(Error::shape(format!(
            "expected (Q, d) and (G, d), got {:?} and {:?}",
            q_embeddings.dims(),
            g_embeddings.dims()
        )));
    }
    let (nq, ng) = (q_embeddings.dims()[0], g_embeddings.dims()[0]);
    if nq == 0 || ng == 0 {
        return Err(Error::invalid("re-ranking needs at least one query and one gallery row"));
    }
    if k2 < 1 || k1 <= k2 {
        return Err(Error::invalid(format!("need k1 > k2 >= 1, got k1={k1} k2={k2}")));
    }
    if k1 >= ng {
        return Err(Error::invalid(format!(
            "k1={k1} must be smaller than the gallery size {ng}"
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must be in [0, 1], got {lambda}")));
    }

    let d = q_embeddings.dims()[1];
    let n = nq + ng;
    let mut joint = Vec::with_capacity(n * d);
    joint.extend_from_slice(q_embeddings.data());
    joint.extend_from_slice(g_embeddings.data());
    let points = Tensor::from_vec(&[n, d], joint)?;
    let dist = pairwise_dist(&points);
    let sorted = sorted_neighbors(&dist);

    // expanded reciprocal sets: pull in a neighbor's half-k set when two
    // thirds of it is already shared
    let half = k1 / 2;
    let mut memberships: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let base = reciprocal_set(&sorted, i, k1);
        let mut expanded = base.clone();
        for &j in &base {
            let cand = reciprocal_set(&sorted, j, half);
            let overlap = cand.iter().filter(|m| base.contains(m)).count();
            if 3 * overlap >= 2 * cand.len() {
                expanded.extend_from_slice(&cand);
            }
        }
        expanded.sort_unstable();
        expanded.dedup();
        memberships.push(expanded);
    }

    // exp-weighted membership vectors, L1-normalized
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        let mut sum = 0.0;
        for &j in &memberships[i] {
            let w = (-dist.data()[i * n + j]).exp();
            v[i * n + j] = w;
            sum += w;
        }
        for &j in &memberships[i] {
            v[i * n + j] /= sum;
        }
    }

    // query expansion: average the vectors of the k2 nearest (self included)
    let mut ve = vec![0.0f64; n * n];
    for i in 0..n {
        for &j in &sorted[i][..k2] {
            for m in 0..n {
                ve[i * n + m] += v[j * n + m] / k2 as f64;
            }
        }
    }

    let mut out = Tensor::zeros(&[nq, ng]);
    for qi in 0..nq {
        for gj in 0..ng {
            let g = nq + gj;
            let (mut mins, mut maxs) = (0.0f64, 0.0f64);
            for m in 0..n {
                let (a, b) = (ve[qi * n + m], ve[g * n + m]);
                mins += a.min(b);
                maxs += a.max(b);
            }
            let jaccard = if maxs > 0.0 { 1.0 - mins / maxs } else { 1.0 };
            out.data_mut()[qi * ng + gj] =
                lambda * dist.data()[qi * n + g] + (1.0 - lambda) * jaccard;
        }
    }
    Ok(out)
}
