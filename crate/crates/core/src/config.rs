//! Pipeline configuration: line-oriented `section.key = value` text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autoencoder::{AeArchitecture, TrainConfig};
use crate::clustering::{GmmOptions, DEFAULT_IOU_THRESHOLD};
use crate::error::{Error, Result};
use crate::evaluation::{LiftRule, SweepGrid};
use crate::ingest::{MovingClasses, DEFAULT_MOVING_CLASSES};
use crate::par::Exec;
use crate::voxelgrid::GridConfig;

/// Which labeled frame decides the cluster → moving mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceFrame {
    /// The first frame with a full occupancy window, `w − 1`.
    #[default]
    FirstFull,
    Index(usize),
}

impl ReferenceFrame {
    pub fn resolve(self, window: usize) -> usize {
        match self {
            ReferenceFrame::FirstFull => window - 1,
            ReferenceFrame::Index(i) => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub frames: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub output: PathBuf,
    pub moving_labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// `None` picks the plan for the radius.
    pub conv: Option<[usize; 3]>,
    pub fc_hidden: usize,
    pub code: usize,
    pub seed: u64,
    pub relu_code: bool,
    pub relu_output: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Training features drawn uniformly from the sequence; 0 uses all.
    pub max_samples: usize,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSection {
    pub k: usize,
    pub sample_target: usize,
    pub first_n_frames: usize,
    pub threshold: f64,
    pub reference_frame: ReferenceFrame,
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    /// Points with `z ≤ ground_z` are dropped before voxelization.
    pub ground_z: f64,
    pub lift: LiftRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub grid: SweepGrid,
    /// Scene directories, or `preset:NAME` for a built-in synthetic scene.
    pub scenes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub gmm: GmmSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataConfig {
                frames: None,
                labels: None,
                poses: None,
                output: PathBuf::from("out"),
                moving_labels: DEFAULT_MOVING_CLASSES.to_vec(),
            },
            grid: GridConfig::default(),
            model: ModelConfig {
                conv: None,
                fc_hidden: 64,
                code: 32,
                seed: 0,
                relu_code: false,
                relu_output: false,
            },
            train: TrainSection {
                batch_size: 1024,
                learning_rate: 1e-4,
                epochs: 2,
                max_samples: 0,
                log_every: 10,
            },
            gmm: GmmSection {
                k: 20,
                sample_target: 200_000,
                first_n_frames: 10,
                threshold: DEFAULT_IOU_THRESHOLD,
                reference_frame: ReferenceFrame::FirstFull,
                max_iter: 100,
                tol: 1e-4,
                var_floor: 1e-6,
            },
            eval: EvalSection {
                ground_z: -1.0,
                lift: LiftRule::Any,
            },
            sweep: SweepSection {
                grid: SweepGrid {
                    radius: vec![0, 1, 2],
                    code: vec![16, 32],
                    clusters: vec![10, 15, 20],
                    window: vec![8, 10, 15, 20],
                },
                scenes: Vec::new(),
            },
            exec: Exec::default(),
        }
    }
}

/// Every recognized key with its help text.
pub const KEYS: &[(&str, &str)] = &[
    ("data.frames", "directory of point frames (*.bin)"),
    ("data.labels", "directory of per-point label files (*.label)"),
    ("data.poses", "pose file, one 3x4 row-major matrix per line"),
    ("data.output", "output directory"),
    ("data.moving_labels", "comma-separated label values counted as moving"),
    ("grid.m", "voxel edge length in meters"),
    ("grid.w", "occupancy window length in frames"),
    ("grid.r", "neighborhood radius in voxels"),
    ("model.conv", "encoder conv channels c1,c2,c3 or auto"),
    ("model.fc_hidden", "hidden fully connected width"),
    ("model.e", "embedding dimension"),
    ("model.seed", "seed for all randomness"),
    ("model.relu_code", "apply ReLU to the code layer (true|false)"),
    ("model.relu_output", "apply ReLU to the reconstruction (true|false)"),
    ("train.batch", "minibatch size"),
    ("train.lr", "Adam learning rate"),
    ("train.epochs", "passes over the training features"),
    ("train.max_samples", "training features sampled from the sequence, 0 = all"),
    ("train.log_every", "steps per loss log entry"),
    ("gmm.k", "number of mixture components"),
    ("gmm.sample_target", "embeddings sampled for fitting"),
    ("gmm.first_n_frames", "frames pooled for fitting, from the reference frame on"),
    ("gmm.threshold", "IoU needed to map a cluster to moving"),
    ("gmm.reference_frame", "labeled frame for the mapping: auto (= w-1) or an index"),
    ("gmm.max_iter", "EM iteration cap"),
    ("gmm.tol", "EM stop when mean log-likelihood gains less than this"),
    ("gmm.var_floor", "variance floor"),
    ("eval.ground_z", "drop points with z at or below this height"),
    ("eval.lift", "point to voxel label rule: any|majority"),
    ("sweep.r", "radii to sweep"),
    ("sweep.e", "embedding dimensions to sweep"),
    ("sweep.k", "cluster counts to sweep"),
    ("sweep.w", "window lengths to sweep"),
    ("sweep.scenes", "comma-separated scene directories or preset:NAME"),
    ("run.parallel", "use the thread pool (true|false)"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn config_message(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    if v.is_empty() {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data.frames" => self.data.frames = opt_path(v),
            "data.labels" => self.data.labels = opt_path(v),
            "data.poses" => self.data.poses = opt_path(v),
            "data.output" => self.data.output = PathBuf::from(v),
            "data.moving_labels" => self.data.moving_labels = parse_list(key, v)?,
            "grid.m" => self.grid.resolution = parse(key, v)?,
            "grid.w" => self.grid.window = parse(key, v)?,
            "grid.r" => self.grid.radius = parse(key, v)?,
            "model.conv" => {
                self.model.conv = if v == "auto" {
                    None
                } else {
                    let c: Vec<usize> = parse_list(key, v)?;
                    Some(c.try_into().map_err(|_| Error::Config(format!("{key}: expected three values or auto, got {v:?}")))?)
                }
            }
            "model.fc_hidden" => self.model.fc_hidden = parse(key, v)?,
            "model.e" => self.model.code = parse(key, v)?,
            "model.seed" => self.model.seed = parse(key, v)?,
            "model.relu_code" => self.model.relu_code = parse(key, v)?,
            "model.relu_output" => self.model.relu_output = parse(key, v)?,
            "train.batch" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.learning_rate = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.max_samples" => self.train.max_samples = parse(key, v)?,
            "train.log_every" => self.train.log_every = parse(key, v)?,
            "gmm.k" => self.gmm.k = parse(key, v)?,
            "gmm.sample_target" => self.gmm.sample_target = parse(key, v)?,
            "gmm.first_n_frames" => self.gmm.first_n_frames = parse(key, v)?,
            "gmm.threshold" => self.gmm.threshold = parse(key, v)?,
            "gmm.reference_frame" => {
                self.gmm.reference_frame = if v == "auto" {
                    ReferenceFrame::FirstFull
                } else {
                    ReferenceFrame::Index(parse(key, v)?)
                }
            }
            "gmm.max_iter" => self.gmm.max_iter = parse(key, v)?,
            "gmm.tol" => self.gmm.tol = parse(key, v)?,
            "gmm.var_floor" => self.gmm.var_floor = parse(key, v)?,
            "eval.ground_z" => self.eval.ground_z = parse(key, v)?,
            "eval.lift" => self.eval.lift = v.parse()?,
            "sweep.r" => self.sweep.grid.radius = parse_list(key, v)?,
            "sweep.e" => self.sweep.grid.code = parse_list(key, v)?,
            "sweep.k" => self.sweep.grid.clusters = parse_list(key, v)?,
            "sweep.w" => self.sweep.grid.window = parse_list(key, v)?,
            "sweep.scenes" => {
                self.sweep.scenes = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "run.parallel" => {
                self.exec = if parse::<bool>(key, v)? {
                    Exec::Parallel
                } else {
                    Exec::Sequential
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data.frames" => show_path(&self.data.frames),
            "data.labels" => show_path(&self.data.labels),
            "data.poses" => show_path(&self.data.poses),
            "data.output" => self.data.output.display().to_string(),
            "data.moving_labels" => join(&self.data.moving_labels),
            "grid.m" => self.grid.resolution.to_string(),
            "grid.w" => self.grid.window.to_string(),
            "grid.r" => self.grid.radius.to_string(),
            "model.conv" => self.model.conv.map(|c| join(&c)).unwrap_or_else(|| "auto".into()),
            "model.fc_hidden" => self.model.fc_hidden.to_string(),
            "model.e" => self.model.code.to_string(),
            "model.seed" => self.model.seed.to_string(),
            "model.relu_code" => self.model.relu_code.to_string(),
            "model.relu_output" => self.model.relu_output.to_string(),
            "train.batch" => self.train.batch_size.to_string(),
            "train.lr" => self.train.learning_rate.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.max_samples" => self.train.max_samples.to_string(),
            "train.log_every" => self.train.log_every.to_string(),
            "gmm.k" => self.gmm.k.to_string(),
            "gmm.sample_target" => self.gmm.sample_target.to_string(),
            "gmm.first_n_frames" => self.gmm.first_n_frames.to_string(),
            "gmm.threshold" => self.gmm.threshold.to_string(),
            "gmm.reference_frame" => match self.gmm.reference_frame {
                ReferenceFrame::FirstFull => "auto".into(),
                ReferenceFrame::Index(i) => i.to_string(),
            },
            "gmm.max_iter" => self.gmm.max_iter.to_string(),
            "gmm.tol" => self.gmm.tol.to_string(),
            "gmm.var_floor" => self.gmm.var_floor.to_string(),
            "eval.ground_z" => self.eval.ground_z.to_string(),
            "eval.lift" => self.eval.lift.to_string(),
            "sweep.r" => join(&self.sweep.grid.radius),
            "sweep.e" => join(&self.sweep.grid.code),
            "sweep.k" => join(&self.sweep.grid.clusters),
            "sweep.w" => join(&self.sweep.grid.window),
            "sweep.scenes" => self.sweep.scenes.join(","),
            "run.parallel" => (self.exec == Exec::Parallel).to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values. `#` starts
    /// a comment; blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, config_message(e))))?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), config_message(e))))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.grid.window < 7 {
            return bad(format!("grid.w = {} must be at least 7", self.grid.window));
        }
        self.architecture().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.batch_size == 0 || self.train.epochs == 0 || self.train.log_every == 0 {
            return bad("train.batch, train.epochs and train.log_every must be positive".into());
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return bad(format!("train.lr = {} must be positive", self.train.learning_rate));
        }
        let g = &self.gmm;
        if g.k == 0 || g.sample_target == 0 || g.first_n_frames == 0 || g.max_iter == 0 {
            return bad("gmm.k, gmm.sample_target, gmm.first_n_frames and gmm.max_iter must be positive".into());
        }
        if !(g.threshold > 0.0 && g.threshold <= 1.0) {
            return bad(format!("gmm.threshold = {} must lie in (0, 1]", g.threshold));
        }
        if !(g.tol >= 0.0 && g.var_floor > 0.0) {
            return bad("gmm.tol must be non-negative and gmm.var_floor positive".into());
        }
        if !self.eval.ground_z.is_finite() {
            return bad("eval.ground_z must be finite".into());
        }
        if self.data.moving_labels.is_empty() {
            return bad("data.moving_labels is empty".into());
        }
        self.sweep.grid.validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> AeArchitecture {
        let mut a = AeArchitecture::for_radius(self.grid.radius, self.grid.window, self.model.code);
        if let Some(c) = self.model.conv {
            a.conv = c;
        }
        a.fc_hidden = self.model.fc_hidden;
        a.relu_code = self.model.relu_code;
        a.relu_output = self.model.relu_output;
        a
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            seed: self.model.seed,
            log_every: self.train.log_every,
            exec: self.exec,
        }
    }

    pub fn gmm_options(&self) -> GmmOptions {
        GmmOptions {
            max_iter: self.gmm.max_iter,
            tol: self.gmm.tol,
            var_floor: self.gmm.var_floor,
            exec: self.exec,
        }
    }

    pub fn moving_classes(&self) -> MovingClasses {
        MovingClasses::new(self.data.moving_labels.iter().copied())
    }
}
