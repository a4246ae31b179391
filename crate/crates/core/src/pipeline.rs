//! End-to-end runs over a frame source: voxelize, train the autoencoder,
//! fit and map the mixture, segment every frame and score it.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rustc_hash::FxHashMap;

use crate::autoencoder::{train, AeParameters, TrainReport};
use crate::clustering::{assign_all, fit_gmm, map_clusters, sample_for_fit, sample_indices, segment, ClusterMapping, GmmModel};
use crate::config::{DataConfig, PipelineConfig, ReferenceFrame};
use crate::error::{Error, Result};
use crate::evaluation::{frame_iou, lift_labels, sequence_miou, FrameEval, SequenceEval};
use crate::ingest::{
    apply_pose, label_path_for, list_frame_files, load_labels, load_point_frame, load_poses, remove_ground, write_text,
    MovingClasses, PointFrame, PointLabels, Pose,
};
use crate::mots::{extract_frame_with, gather, neighbor_offsets, MotsFeature};
use crate::par::{self, Exec};
use crate::synthetic::Scene;
use crate::voxelgrid::{voxelize, SparseFrameState, VoxelCoord};

/// Random streams derived from the one configured seed.
const TAG_TRAIN_SAMPLE: u64 = 1;
const TAG_GMM_SAMPLE: u64 = 2;
const TAG_GMM_INIT: u64 = 3;

fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// A sequence of frames in one fixed sensor frame.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frame `t` and, when available, labels for its points.
    fn load(&self, t: usize) -> Result<(PointFrame, Option<PointLabels>)>;
}

impl FrameSource for Scene {
    fn len(&self) -> usize {
        Scene::len(self)
    }

    fn load(&self, t: usize) -> Result<(PointFrame, Option<PointLabels>)> {
        self.frame(t).map(|(f, l)| (f, Some(l)))
    }
}

/// Frames and labels on disk, optionally registered with per-frame poses.
#[derive(Debug, Clone)]
pub struct DiskSequence {
    files: Vec<PathBuf>,
    labels_dir: Option<PathBuf>,
    poses: Option<Vec<Pose>>,
    classes: MovingClasses,
}

impl DiskSequence {
    pub fn open(data: &DataConfig) -> Result<Self> {
        let dir = data
            .frames
            .as_ref()
            .ok_or_else(|| Error::Config("data.frames is not set".into()))?;
        if !dir.is_dir() {
            return Err(Error::Data(format!("frames directory {} does not exist", dir.display())));
        }
        let files = list_frame_files(dir)?;
        if files.is_empty() {
            return Err(Error::Data(format!("no *.bin frames in {}", dir.display())));
        }
        if let Some(l) = &data.labels {
            if !l.is_dir() {
                return Err(Error::Data(format!("labels directory {} does not exist", l.display())));
            }
        }
        let poses = match &data.poses {
            Some(p) => {
                let poses = load_poses(p)?;
                if poses.len() < files.len() {
                    return Err(Error::Data(format!(
                        "{} poses for {} frames in {}",
                        poses.len(),
                        files.len(),
                        p.display()
                    )));
                }
                Some(poses)
            }
            None => None,
        };
        Ok(DiskSequence {
            files,
            labels_dir: data.labels.clone(),
            poses,
            classes: MovingClasses::new(data.moving_labels.iter().copied()),
        })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl FrameSource for DiskSequence {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn load(&self, t: usize) -> Result<(PointFrame, Option<PointLabels>)> {
        let raw = load_point_frame(&self.files[t], t)?;
        let labels = match &self.labels_dir {
            Some(dir) => {
                let path = label_path_for(&self.files[t], dir);
                if path.exists() {
                    Some(load_labels(&path, &self.classes, t)?.align_to(&raw)?)
                } else {
                    None
                }
            }
            None => None,
        };
        let frame = match &self.poses {
            Some(p) => apply_pose(&raw, &p[t], &p[0]),
            None => raw,
        };
        Ok((frame, labels))
    }
}

/// Occupied voxels of one frame after ground removal, with lifted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFrame {
    pub frame_index: usize,
    /// Sorted.
    pub voxels: Vec<VoxelCoord>,
    pub truth: Option<Vec<bool>>,
    /// Points left after ground removal.
    pub points: usize,
}

impl PreparedFrame {
    pub fn moving_voxels(&self) -> Vec<VoxelCoord> {
        match &self.truth {
            Some(t) => self.voxels.iter().zip(t).filter(|(_, &m)| m).map(|(v, _)| *v).collect(),
            None => Vec::new(),
        }
    }
}

pub fn prepare_frame(frame: &PointFrame, labels: Option<&PointLabels>, cfg: &PipelineConfig) -> Result<PreparedFrame> {
    let (kept, idx) = remove_ground(frame, cfg.eval.ground_z);
    let vox = voxelize(&kept, cfg.grid.resolution);
    let truth = match labels {
        Some(l) => {
            if l.moving.len() != frame.len() {
                return Err(Error::Data(format!(
                    "frame {}: {} labels for {} points",
                    frame.frame_index,
                    l.moving.len(),
                    frame.len()
                )));
            }
            Some(lift_labels(&l.select(&idx), &vox.point_indices, cfg.eval.lift)?)
        }
        None => None,
    };
    Ok(PreparedFrame {
        frame_index: frame.frame_index,
        voxels: vox.voxels,
        truth,
        points: kept.len(),
    })
}

pub fn prepare(source: &dyn FrameSource, cfg: &PipelineConfig) -> Result<Vec<PreparedFrame>> {
    if source.is_empty() {
        return Err(Error::Data("the sequence has no frames".into()));
    }
    let start = Instant::now();
    let frames = par::map_range(cfg.exec, source.len(), |t| {
        let (frame, labels) = source.load(t)?;
        prepare_frame(&frame, labels.as_ref(), cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let voxels: usize = frames.iter().map(|f| f.voxels.len()).sum();
    log::info!(
        "prepared {} frames, {:.0} voxels per frame, in {:.1?}",
        frames.len(),
        voxels as f64 / frames.len() as f64,
        start.elapsed()
    );
    Ok(frames)
}

/// Uniform sample of MOTS features over the whole sequence, at most
/// `train.max_samples` of them (all when 0).
pub fn training_features(frames: &[PreparedFrame], cfg: &PipelineConfig) -> Result<Vec<MotsFeature>> {
    let sizes: Vec<usize> = frames.iter().map(|f| f.voxels.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Data("no occupied voxels to train on".into()));
    }
    let target = if cfg.train.max_samples == 0 {
        total
    } else {
        cfg.train.max_samples.min(total)
    };
    let picks = sample_indices(&sizes, frames.len(), target, derive_seed(cfg.model.seed, TAG_TRAIN_SAMPLE));
    let offsets = neighbor_offsets(cfg.grid.radius as i64)?;
    let mut state = SparseFrameState::new(cfg.grid.window)?;
    let mut out = Vec::with_capacity(picks.len());
    let mut next = 0;
    for (t, f) in frames.iter().enumerate() {
        state.advance(&f.voxels);
        let end = next + picks[next..].iter().take_while(|p| p.0 == t).count();
        let centers: Vec<VoxelCoord> = picks[next..end].iter().map(|&(_, i)| f.voxels[i]).collect();
        out.extend(par::map(cfg.exec, &centers, |&c| gather(&state, &offsets, c)));
        next = end;
    }
    Ok(out)
}

pub fn train_model(frames: &[PreparedFrame], cfg: &PipelineConfig) -> Result<TrainReport> {
    let features = training_features(frames, cfg)?;
    let start = Instant::now();
    log::info!("training on {} features", features.len());
    let report = train(&features, cfg.architecture(), &cfg.train_config())?;
    log::info!("trained {} steps in {:.1?}", report.steps, start.elapsed());
    Ok(report)
}

/// Encodes frames, reusing codes of features seen before. Identical
/// features get identical codes, so the cache never changes results.
pub struct Embedder<'a> {
    params: &'a AeParameters,
    exec: Exec,
    cache: FxHashMap<Vec<u64>, Vec<f64>>,
    capacity: usize,
    pub hits: usize,
    pub misses: usize,
}

impl<'a> Embedder<'a> {
    pub const DEFAULT_CAPACITY: usize = 200_000;

    /// Cached codes are dropped wholesale once `capacity` would be exceeded.
    pub fn with_capacity(params: &'a AeParameters, exec: Exec, capacity: usize) -> Self {
        Embedder {
            capacity,
            ..Self::new(params, exec)
        }
    }

    pub fn new(params: &'a AeParameters, exec: Exec) -> Self {
        Embedder {
            params,
            exec,
            cache: FxHashMap::default(),
            capacity: Self::DEFAULT_CAPACITY,
            hits: 0,
            misses: 0,
        }
    }

    pub fn embed(&mut self, features: &[MotsFeature]) -> Result<Vec<Vec<f64>>> {
        if self.cache.len() + features.len() > self.capacity {
            self.cache.clear();
        }
        let mut missing: Vec<MotsFeature> = Vec::new();
        let mut pending: FxHashMap<&[u64], ()> = FxHashMap::default();
        for f in features {
            if !self.cache.contains_key(&f.rows) && pending.insert(&f.rows, ()).is_none() {
                missing.push(f.clone());
            }
        }
        self.misses += missing.len();
        self.hits += features.len() - missing.len();
        let codes = self.params.encode_batch(self.exec, &missing)?;
        let mut fresh: FxHashMap<&[u64], Vec<f64>> = FxHashMap::default();
        for (f, e) in missing.iter().zip(codes) {
            fresh.insert(&f.rows, e.code);
        }
        let out = features
            .iter()
            .map(|f| {
                self.cache
                    .get(&f.rows)
                    .or_else(|| fresh.get(f.rows.as_slice()))
                    .cloned()
                    .expect("every feature is cached or freshly encoded")
            })
            .collect();
        for (rows, code) in fresh {
            self.cache.insert(rows.to_vec(), code);
        }
        Ok(out)
    }
}

/// Streams per-frame codes of `frames[..end]` to `visit`.
fn for_each_embedded<F>(params: &AeParameters, frames: &[PreparedFrame], cfg: &PipelineConfig, end: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, Vec<Vec<f64>>) -> Result<()>,
{
    let offsets = neighbor_offsets(cfg.grid.radius as i64)?;
    let mut state = SparseFrameState::new(cfg.grid.window)?;
    let mut embedder = Embedder::new(params, cfg.exec);
    for (t, f) in frames[..end].iter().enumerate() {
        state.advance(&f.voxels);
        let batch = extract_frame_with(cfg.exec, &state, &offsets);
        visit(t, embedder.embed(&batch.features)?)?;
    }
    log::debug!("embedding cache: {} hits, {} misses", embedder.hits, embedder.misses);
    Ok(())
}

/// Mixture fitted on the embeddings of `fit_frames`, mapped on `reference_frame`.
#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub model: GmmModel,
    pub mapping: ClusterMapping,
    pub reference_frame: usize,
    pub fit_frames: Range<usize>,
}

pub fn reference_frame(frames: &[PreparedFrame], cfg: &PipelineConfig) -> Result<usize> {
    let r = cfg.gmm.reference_frame.resolve(cfg.grid.window);
    if r < frames.len() {
        return Ok(r);
    }
    match cfg.gmm.reference_frame {
        ReferenceFrame::FirstFull => {
            log::warn!("sequence shorter than the window; using the last frame as reference");
            Ok(frames.len() - 1)
        }
        ReferenceFrame::Index(i) => Err(Error::Config(format!(
            "gmm.reference_frame = {i} but the sequence has {} frames",
            frames.len()
        ))),
    }
}

pub fn fit_clusters(params: &AeParameters, frames: &[PreparedFrame], cfg: &PipelineConfig) -> Result<ClusterFit> {
    let reference = reference_frame(frames, cfg)?;
    let truth = frames[reference]
        .truth
        .as_ref()
        .ok_or_else(|| Error::Data(format!("reference frame {reference} has no labels")))?;
    let fit_frames = reference..(reference + cfg.gmm.first_n_frames).min(frames.len());
    let mut pooled: Vec<Vec<Vec<f64>>> = Vec::with_capacity(fit_frames.len());
    for_each_embedded(params, frames, cfg, fit_frames.end, |t, codes| {
        if t >= fit_frames.start {
            pooled.push(codes);
        }
        Ok(())
    })?;
    let samples = sample_for_fit(&pooled, pooled.len(), cfg.gmm.sample_target, derive_seed(cfg.model.seed, TAG_GMM_SAMPLE));
    let start = Instant::now();
    let model = fit_gmm(&samples, cfg.gmm.k, derive_seed(cfg.model.seed, TAG_GMM_INIT), &cfg.gmm_options())?;
    log::info!(
        "fitted {} components on {} embeddings from frames {:?} in {} iterations ({:.1?})",
        cfg.gmm.k,
        samples.len(),
        fit_frames,
        model.log_likelihood.len(),
        start.elapsed()
    );
    let assignments = assign_all(&model, &pooled[0], cfg.exec)?;
    let mapping = map_clusters(&assignments, truth, cfg.gmm.k, cfg.gmm.threshold)?;
    if let Some(w) = &mapping.warning {
        log::warn!("{w}");
    }
    log::info!("clusters mapped to moving on frame {reference}: {:?}", mapping.moving);
    Ok(ClusterFit {
        model,
        mapping,
        reference_frame: reference,
        fit_frames,
    })
}

/// Moving flags for the sorted voxels of every frame.
pub fn segment_sequence(
    params: &AeParameters,
    model: &GmmModel,
    mapping: &ClusterMapping,
    frames: &[PreparedFrame],
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<bool>>> {
    let start = Instant::now();
    let mut out = Vec::with_capacity(frames.len());
    for_each_embedded(params, frames, cfg, frames.len(), |_, codes| {
        out.push(segment(model, mapping, &codes)?);
        Ok(())
    })?;
    log::info!("segmented {} frames in {:.1?}", frames.len(), start.elapsed());
    Ok(out)
}

/// Scores the frames that carry labels. `None` when no frame does.
pub fn evaluate(frames: &[PreparedFrame], predictions: &[Vec<bool>]) -> Result<Option<SequenceEval>> {
    if frames.len() != predictions.len() {
        return Err(Error::Data(format!("{} prediction frames for {} frames", predictions.len(), frames.len())));
    }
    let evals = frames
        .iter()
        .zip(predictions)
        .filter_map(|(f, p)| f.truth.as_ref().map(|t| FrameEval::from_masks(p, t, f.frame_index)))
        .collect::<Result<Vec<_>>>()?;
    if evals.is_empty() {
        return Ok(None);
    }
    sequence_miou(evals).map(Some)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<PreparedFrame>,
    pub report: TrainReport,
    pub clusters: ClusterFit,
    pub predictions: Vec<Vec<bool>>,
    pub eval: Option<SequenceEval>,
}

/// Train, fit, segment and score in one go.
pub fn run(source: &dyn FrameSource, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let frames = prepare(source, cfg)?;
    let report = train_model(&frames, cfg)?;
    let clusters = fit_clusters(&report.params, &frames, cfg)?;
    let predictions = segment_sequence(&report.params, &clusters.model, &clusters.mapping, &frames, cfg)?;
    let eval = evaluate(&frames, &predictions)?;
    if let Some(e) = &eval {
        log::info!("mIoU {:.4} over {} frames", e.miou, e.frames.len());
    }
    Ok(RunOutput {
        frames,
        report,
        clusters,
        predictions,
        eval,
    })
}

pub const PREDICTIONS_HEADER: &str = "ix,iy,iz,t,label";

/// One `ix,iy,iz,t,label` line per voxel and frame; label 1 is moving.
pub fn write_predictions_csv(path: &Path, frames: &[PreparedFrame], predictions: &[Vec<bool>]) -> Result<()> {
    write_text(path, |w| {
        writeln!(w, "{PREDICTIONS_HEADER}")?;
        for (f, p) in frames.iter().zip(predictions) {
            for (v, &m) in f.voxels.iter().zip(p) {
                writeln!(w, "{},{},{},{},{}", v.ix, v.iy, v.iz, f.frame_index, m as u8)?;
            }
        }
        Ok(())
    })
}

/// Moving voxels per frame index, with every frame that has any record.
pub fn read_predictions_csv(path: &Path) -> Result<BTreeMap<usize, Vec<(VoxelCoord, bool)>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PREDICTIONS_HEADER) {
        return Err(Error::format(path, format!("expected header {PREDICTIONS_HEADER:?}")));
    }
    let mut out: BTreeMap<usize, Vec<(VoxelCoord, bool)>> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected ix,iy,iz,t,label in {line:?}", n + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let c = |i: usize| f[i].parse::<i32>().map_err(|_| bad());
        let v = VoxelCoord::new(c(0)?, c(1)?, c(2)?);
        let t: usize = f[3].parse().map_err(|_| bad())?;
        let m = match f[4] {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        };
        out.entry(t).or_default().push((v, m));
    }
    Ok(out)
}

/// Scores exported predictions against the labels of `frames`. Frames
/// without records count as all static.
pub fn evaluate_predictions(frames: &[PreparedFrame], predictions: &BTreeMap<usize, Vec<(VoxelCoord, bool)>>) -> Result<SequenceEval> {
    if let Some((&t, _)) = predictions.iter().find(|(&t, _)| t >= frames.len()) {
        return Err(Error::Data(format!("predictions for frame {t} but the sequence has {} frames", frames.len())));
    }
    let evals = frames
        .iter()
        .map(|f| {
            if f.truth.is_none() {
                return Err(Error::Data(format!("frame {} has no labels", f.frame_index)));
            }
            let pred: Vec<VoxelCoord> = predictions
                .get(&f.frame_index)
                .map(|p| p.iter().filter(|(_, m)| *m).map(|(v, _)| *v).collect())
                .unwrap_or_default();
            frame_iou(&pred, &f.moving_voxels(), &f.voxels, f.frame_index)
        })
        .collect::<Result<Vec<_>>>()?;
    sequence_miou(evals)
}

pub fn write_results_csv(path: &Path, eval: &SequenceEval) -> Result<()> {
    write_text(path, |w| {
        writeln!(w, "t,tp,fp,fn,iou")?;
        for f in &eval.frames {
            writeln!(w, "{},{},{},{},{:.6}", f.frame_index, f.tp, f.fp, f.fn_, f.iou)?;
        }
        writeln!(w, "mean,,,,{:.6}", eval.miou)
    })
}

/// Per-record moving flags for frame `t`: points above ground take their
/// voxel's prediction, everything else is static.
pub fn point_predictions(source: &dyn FrameSource, frame: &PreparedFrame, prediction: &[bool], cfg: &PipelineConfig) -> Result<Vec<bool>> {
    let (points, _) = source.load(frame.frame_index)?;
    let records = points.len() + points.dropped.len();
    let mut out = vec![false; records];
    let mut dropped = points.dropped.iter().peekable();
    let mut record = 0;
    for p in &points.points {
        while dropped.peek() == Some(&&record) {
            dropped.next();
            record += 1;
        }
        if p[2] > cfg.eval.ground_z {
            let v = VoxelCoord::of_point(p, cfg.grid.resolution);
            if let Ok(i) = frame.voxels.binary_search(&v) {
                out[record] = prediction[i];
            }
        }
        record += 1;
    }
    Ok(out)
}
