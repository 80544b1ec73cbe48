//! The full artifact pipeline behind the command-line surface: dataset
//! generation, training runs, embedding extraction, retrieval reports,
//! attention overlays, parameter accounting, and named ablation variants.
//!
//! Everything here is a plain function over paths and configs so the same
//! entry points serve the CLI, the integration tests, and the acceptance
//! gate.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::TensorArchive;
use crate::autograd::Graph;
use crate::backbone::{backbone_forward, BackboneVars};
use crate::config::{Metric, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_records, extract_tracklet_embedding, load_embeddings, rank_and_score,
    save_embeddings, EmbeddingRecord, EvalItem, RankingResult,
};
use crate::head::{self, audit, param_count, EmbeddingBundle, IntermediateTrace};
use crate::manifest::{Manifest, ManifestEntry};
use crate::overlay::render_overlays;
use crate::rerank::k_reciprocal_rerank;
use crate::sampler::{Dataset, Tracklet};
use crate::synth::synth_dataset;
use crate::tensor::{FeatureMap, Tensor};
use crate::trainer::{load_checkpoint, train_loop, TrainConfig, TrainOutcome, TrainState};

/// Pixel archives hold one tensor: the frame stack (frames, h, w, 3).
const FRAMES_TENSOR: &str = "frames";

pub fn save_tracklet_pixels(path: &Path, frames: &FeatureMap) -> Result<()> {
    let mut ar = TensorArchive::new();
    ar.insert(FRAMES_TENSOR, frames.to_tensor())?;
    ar.save(path)
}

pub fn load_tracklet_pixels(path: &Path) -> Result<FeatureMap> {
    let ar = TensorArchive::load(path)?;
    let t = ar.require(FRAMES_TENSOR)?;
    if t.rank() != 4 || t.dims()[3] != 3 {
        return Err(Error::Format(format!(
            "{}: expected (frames, h, w, 3) pixels, got {:?}",
            path.display(),
            t.dims()
        )));
    }
    FeatureMap::from_tensor(t)
}

/// Load every tracklet a manifest lists.
pub fn load_dataset(manifest: &Manifest) -> Result<Dataset> {
    let mut tracklets = Vec::with_capacity(manifest.entries().len());
    for e in manifest.entries() {
        let frames = load_tracklet_pixels(&manifest.resolve(e))?;
        if frames.t() != e.frames {
            return Err(Error::Dataset(format!(
                "tracklet {}: manifest says {} frames, archive holds {}",
                e.tracklet_id,
                e.frames,
                frames.t()
            )));
        }
        tracklets.push(Tracklet {
            tracklet_id: e.tracklet_id,
            identity: e.identity,
            camera: e.camera,
            frames,
        });
    }
    Ok(Dataset { tracklets })
}

#[derive(Debug)]
pub struct SynthGenReport {
    pub tracklets: usize,
    pub manifest: PathBuf,
    pub query_manifest: PathBuf,
    pub gallery_manifest: PathBuf,
}

/// Generate a synthetic dataset on disk: one pixel archive per tracklet,
/// a full manifest, and camera-split query/gallery manifests.
pub fn run_synth_gen(
    out_dir: &Path,
    num_identities: usize,
    tracklets_per_id: usize,
    frames: usize,
    image_size: usize,
    seed: u64,
) -> Result<SynthGenReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = synth_dataset(num_identities, tracklets_per_id, frames, image_size, &mut rng)?;
    let tdir = out_dir.join("tracklets");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;

    let mut entries = Vec::new();
    for t in &ds.tracklets {
        let rel = format!("tracklets/tracklet_{:04}.fgrd", t.tracklet_id);
        save_tracklet_pixels(&out_dir.join(&rel), &t.frames)?;
        entries.push(ManifestEntry {
            tracklet_id: t.tracklet_id,
            identity: t.identity,
            camera: t.camera,
            path: rel,
            frames: t.frames.t(),
        });
    }
    let write = |name: &str, subset: Vec<ManifestEntry>| -> Result<PathBuf> {
        let path = out_dir.join(name);
        Manifest::new(subset, out_dir)?.save(&path)?;
        Ok(path)
    };
    let manifest = write("manifest.jsonl", entries.clone())?;
    let query_manifest =
        write("query.jsonl", entries.iter().filter(|e| e.camera == 0).cloned().collect())?;
    let gallery_manifest =
        write("gallery.jsonl", entries.iter().filter(|e| e.camera == 1).cloned().collect())?;
    Ok(SynthGenReport {
        tracklets: ds.tracklets.len(),
        manifest,
        query_manifest,
        gallery_manifest,
    })
}

#[derive(Debug)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_total_loss: f64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub resolved_config: PathBuf,
}

/// Train from a run config and a manifest. Alongside the checkpoint and the
/// metrics log, writes `config_resolved.cfg` with the derived class count
/// so downstream commands can rebuild the exact structure.
pub fn run_train(run: &RunConfig, manifest_path: &Path, out_dir: &Path) -> Result<TrainReport> {
    run.validate()?;
    let manifest = Manifest::load(manifest_path)?;
    let dataset = load_dataset(&manifest)?;
    let classes = dataset.num_identities();
    if run.num_classes != 0 && run.num_classes != classes {
        return Err(Error::Config(format!(
            "config says num_classes={} but the dataset has {classes} identities \
             (set num_classes=0 to derive it)",
            run.num_classes
        )));
    }
    let cfg = TrainConfig::from_run(run, classes)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outcome: TrainOutcome = train_loop(&dataset, &cfg, Some(out_dir))?;

    let mut resolved = run.clone();
    resolved.num_classes = classes;
    let resolved_path = out_dir.join("config_resolved.cfg");
    resolved.save(&resolved_path)?;

    Ok(TrainReport {
        epochs: cfg.epochs,
        final_total_loss: outcome.metrics.last().map(|r| r.breakdown.total).unwrap_or(f64::NAN),
        checkpoint: out_dir.join("checkpoint.fgrd"),
        metrics: out_dir.join("metrics.csv"),
        resolved_config: resolved_path,
    })
}

/// Rebuild a trained model from a resolved config and its checkpoint.
pub fn load_model(run: &RunConfig, checkpoint: &Path) -> Result<(TrainConfig, TrainState)> {
    if run.num_classes == 0 {
        return Err(Error::Config(
            "extraction needs the resolved config (num_classes > 0) written by training"
                .to_string(),
        ));
    }
    let cfg = TrainConfig::from_run(run, run.num_classes)?;
    let state = load_checkpoint(checkpoint, &cfg)?;
    Ok((cfg, state))
}

/// Run the conv stack and the head on one pixel clip, inference mode.
pub fn embed_clip(
    state: &TrainState,
    cfg: &TrainConfig,
    clip: &FeatureMap,
) -> Result<(EmbeddingBundle, IntermediateTrace)> {
    let mut g = Graph::new();
    let vars = BackboneVars::insert(&mut g, &state.backbone);
    let frames = g.constant(clip.to_tensor());
    let feat = backbone_forward(&mut g, &vars, frames)?;
    let fm = FeatureMap::from_tensor(g.value(feat))?;
    head::forward(&fm, &fm, &cfg.head, &state.head)
}

/// Embed every tracklet of a manifest and write the embedding archive.
pub fn run_extract(
    run: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    out_path: &Path,
) -> Result<usize> {
    let (cfg, state) = load_model(run, checkpoint)?;
    let manifest = Manifest::load(manifest_path)?;
    let dataset = load_dataset(&manifest)?;
    let mut records = Vec::with_capacity(dataset.tracklets.len());
    for t in &dataset.tracklets {
        let embedding = extract_tracklet_embedding(t, cfg.spec.t, run.eval_max_clips, |clip| {
            let (bundle, _) = embed_clip(&state, &cfg, clip)?;
            Ok(bundle.f_star.data().to_vec())
        })?;
        records.push(EmbeddingRecord {
            tracklet_id: t.tracklet_id,
            identity: t.identity,
            camera: t.camera,
            embedding,
        });
    }
    save_embeddings(out_path, &records)?;
    Ok(records.len())
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub metric: Metric,
    pub ranks: Vec<usize>,
    /// (k1, k2, lambda) when re-ranking is requested.
    pub rerank: Option<(usize, usize, f64)>,
}

impl EvalOptions {
    pub fn from_run(run: &RunConfig, rerank: bool) -> EvalOptions {
        EvalOptions {
            metric: run.eval_metric,
            ranks: run.eval_ranks.clone(),
            rerank: rerank.then_some((run.rerank_k1, run.rerank_k2, run.rerank_lambda)),
        }
    }
}

#[derive(Debug)]
pub struct EvalReport {
    pub result: RankingResult,
    pub reranked: bool,
    pub queries: usize,
    pub gallery: usize,
}

impl EvalReport {
    /// Comma-separated table: metric name, value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("map,{}\n", self.result.map));
        for (rank, v) in &self.result.cmc {
            out.push_str(&format!("rank-{rank},{v}\n"));
        }
        out.push_str(&format!("evaluated,{}\n", self.result.evaluated));
        out.push_str(&format!("skipped,{}\n", self.result.skipped));
        out
    }

    pub fn to_summary(&self) -> String {
        let cmc: Vec<String> = self
            .result
            .cmc
            .iter()
            .map(|(r, v)| format!("R-{r} {:.4}", v))
            .collect();
        format!(
            "{} queries vs {} gallery{}: mAP {:.4}, {} ({} skipped)",
            self.queries,
            self.gallery,
            if self.reranked { " (re-ranked)" } else { "" },
            self.result.map,
            cmc.join(", "),
            self.result.skipped
        )
    }
}

fn records_matrix(records: &[EmbeddingRecord]) -> Result<Tensor> {
    if records.is_empty() {
        return Err(Error::invalid("no embedding records"));
    }
    let d = records[0].embedding.len();
    let data: Vec<f64> = records.iter().flat_map(|r| r.embedding.iter().copied()).collect();
    Tensor::from_vec(&[records.len(), d], data)
}

/// Score stored query embeddings against stored gallery embeddings.
/// Re-ranking runs on L2-normalized rows when the metric is dot so its
/// internal Euclidean distances live on the same scale as the cosine
/// scores they replace.
pub fn run_eval(query_path: &Path, gallery_path: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let queries = load_embeddings(query_path)?;
    let gallery = load_embeddings(gallery_path)?;
    let result = match opts.rerank {
        None => evaluate_records(&queries, &gallery, opts.metric, &opts.ranks)?,
        Some((k1, k2, lambda)) => {
            let mut q = records_matrix(&queries)?;
            let mut g = records_matrix(&gallery)?;
            if opts.metric == Metric::Dot {
                q = crate::tensor::l2_normalize(&q, 1e-12)?;
                g = crate::tensor::l2_normalize(&g, 1e-12)?;
            }
            let dist = k_reciprocal_rerank(&q, &g, k1, k2, lambda)?;
            let scores = dist.scale(-1.0);
            let qi: Vec<EvalItem> = queries.iter().map(EvalItem::from).collect();
            let gi: Vec<EvalItem> = gallery.iter().map(EvalItem::from).collect();
            rank_and_score(&scores, &qi, &gi, &opts.ranks)?
        }
    };
    Ok(EvalReport {
        result,
        reranked: opts.rerank.is_some(),
        queries: queries.len(),
        gallery: gallery.len(),
    })
}

/// Write one P6 overlay image per frame of a tracklet's first eval clip.
pub fn run_attn_export(
    run: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    tracklet_id: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (cfg, state) = load_model(run, checkpoint)?;
    let manifest = Manifest::load(manifest_path)?;
    let entry = manifest
        .entries()
        .iter()
        .find(|e| e.tracklet_id == tracklet_id)
        .ok_or_else(|| {
            Error::Dataset(format!("tracklet {tracklet_id} is not in the manifest"))
        })?;
    let frames = load_tracklet_pixels(&manifest.resolve(entry))?;
    let tracklet = Tracklet {
        tracklet_id: entry.tracklet_id,
        identity: entry.identity,
        camera: entry.camera,
        frames,
    };
    let n = tracklet.num_frames();
    let indices: Vec<usize> = (0..cfg.spec.t).map(|i| i % n.max(1)).collect();
    let clip = tracklet.clip(&indices);
    let (bundle, _) = embed_clip(&state, &cfg, &clip)?;
    let images = render_overlays(&clip, &bundle.a_maps)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for (i, bytes) in images.iter().enumerate() {
        let path = out_dir.join(format!("attn_{tracklet_id:04}_{i:02}.ppm"));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Parameter accounting report: per-component counts, the structural
/// summary, and optionally the shared-versus-distinct projection delta.
pub fn run_param_count(run: &RunConfig, compare_kqv: bool) -> Result<String> {
    let cfg = run.head_config(if run.num_classes == 0 { 1 } else { run.num_classes })?;
    let report = param_count(&cfg)?;
    let mut out = String::from("component,parameters\n");
    for (name, count) in &report.components {
        out.push_str(&format!("{name},{count}\n"));
    }
    out.push_str(&format!("total,{}\n", report.total));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = crate::head::HeadParams::init(&cfg, &mut rng)?;
    let a = audit(&params);
    out.push_str(&format!(
        "summary: {} projection layers, {} classifier, {} batch-norm parameter sets, \
         {} learnable parameters\n",
        a.projections.len(),
        a.classifier_count,
        a.batch_norms.len(),
        a.total_learnable
    ));
    if compare_kqv {
        out.push_str(&format!("kqv_delta,{}\n", report.kqv_delta));
    }
    Ok(out)
}

/// Named head variants matching the ablation rows: each name maps to one
/// flag flip on top of the base config.
pub fn ablation_variant(name: &str, base: &RunConfig) -> Result<RunConfig> {
    let mut run = base.clone();
    match name {
        "full" => {}
        "wo-gfm" => run.use_gfm = false,
        "only-gfm" => run.use_fine = false,
        "wo-fgm" => run.use_fgm = false,
        "wo-nonlocal" => run.use_nonlocal = false,
        "wo-channel-weights" => run.use_channel_weights = false,
        "distinct-kqv" => run.distinct_kq = true,
        _ => {
            return Err(Error::Config(format!(
                "unknown ablation {name:?}; available: full, wo-gfm, only-gfm, wo-fgm, \
                 wo-nonlocal, wo-channel-weights, distinct-kqv"
            )))
        }
    }
    run.validate()?;
    Ok(run)
}

#[derive(Debug)]
pub struct AblateReport {
    pub name: String,
    pub eval: EvalReport,
    pub train: TrainReport,
}

impl AblateReport {
    pub fn to_csv(&self) -> String {
        format!("ablation,{}\n{}", self.name, self.eval.to_csv())
    }
}

/// Train and evaluate one named variant against a synth-gen data directory
/// (manifest.jsonl, query.jsonl, gallery.jsonl).
pub fn run_ablate(
    name: &str,
    base: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<AblateReport> {
    let run = ablation_variant(name, base)?;
    let train = run_train(&run, &data_dir.join("manifest.jsonl"), out_dir)?;
    let mut resolved = run.clone();
    let manifest = Manifest::load(&data_dir.join("manifest.jsonl"))?;
    resolved.num_classes = load_dataset(&manifest)?.num_identities();
    let q_path = out_dir.join("query_embeddings.fgrd");
    let g_path = out_dir.join("gallery_embeddings.fgrd");
    run_extract(&resolved, &train.checkpoint, &data_dir.join("query.jsonl"), &q_path)?;
    run_extract(&resolved, &train.checkpoint, &data_dir.join("gallery.jsonl"), &g_path)?;
    let eval = run_eval(&q_path, &g_path, &EvalOptions::from_run(&resolved, false))?;
    Ok(AblateReport { name: name.to_string(), eval, train })
}
