//! Labeled synthetic scenes for a stationary sensor: static boxes and
//! planes plus rigid boxes moving at constant velocity.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{write_point_frame, write_raw_labels, Point3, PointFrame, PointLabels};
use crate::par::{self, Exec};

/// Height of the ground plane in the presets, in sensor coordinates.
pub const GROUND_Z: f64 = -1.73;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.02;
pub const PEDESTRIAN_SPEED: f64 = 1.4;
pub const CAR_SPEED: f64 = 8.0;

/// Label values written by [`write_scene`].
pub const LABEL_STATIC: u32 = 0;
pub const LABEL_MOVING: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StaticElement {
    /// Axis-aligned box; all six faces are sampled.
    Box { min: Point3, size: Point3, density: f64 },
    /// Parallelogram spanned by `u` and `v` from `origin`.
    Plane { origin: Point3, u: Point3, v: Point3, density: f64 },
}

/// An axis-aligned box translating at constant velocity. With
/// `route_length` set, it jumps back to `start` after travelling that far.
#[derive(Debug, Clone, PartialEq)]
pub struct Mover {
    pub name: String,
    pub size: Point3,
    /// Minimum corner at frame 0.
    pub start: Point3,
    /// m/s.
    pub velocity: Point3,
    pub route_length: Option<f64>,
    pub density: f64,
}

impl Mover {
    pub fn speed(&self) -> f64 {
        norm(self.velocity)
    }

    /// Translation of the minimum corner from `start` at time `seconds`.
    pub fn displacement(&self, seconds: f64) -> Point3 {
        let d = self.velocity.map(|v| v * seconds);
        match self.route_length {
            Some(l) if self.speed() > 0.0 => {
                let dist = self.speed() * seconds;
                let wrapped = dist.rem_euclid(l);
                d.map(|x| x * wrapped / dist.max(f64::MIN_POSITIVE))
            }
            _ => d,
        }
    }
}

/// Drops points hidden behind a nearer point of the same angular bin, seen
/// from `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occlusion {
    pub origin: Point3,
    pub azimuth_step_deg: f64,
    pub elevation_step_deg: f64,
    /// Points up to this far behind the nearest one in a bin are kept.
    pub margin: f64,
}

impl Default for Occlusion {
    fn default() -> Self {
        Occlusion {
            origin: [0.0; 3],
            azimuth_step_deg: 1.0,
            elevation_step_deg: 2.0,
            margin: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub frames: usize,
    pub rate_hz: f64,
    pub statics: Vec<StaticElement>,
    pub movers: Vec<Mover>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub occlusion: Option<Occlusion>,
}

fn finite(p: &Point3) -> bool {
    p.iter().all(|x| x.is_finite())
}

fn norm(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scene {:?}: {msg}", self.name)));
        if self.frames == 0 {
            return bad("needs at least one frame".into());
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("frame rate {} must be positive", self.rate_hz));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        for (i, s) in self.statics.iter().enumerate() {
            let (ok_geom, density) = match s {
                StaticElement::Box { min, size, density } => (finite(min) && finite(size) && size.iter().all(|&x| x >= 0.0), *density),
                StaticElement::Plane { origin, u, v, density } => (finite(origin) && finite(u) && finite(v), *density),
            };
            if !ok_geom {
                return bad(format!("static element {i} has invalid geometry"));
            }
            if !(density > 0.0 && density.is_finite()) {
                return bad(format!("static element {i} density {density} must be positive"));
            }
        }
        for m in &self.movers {
            if !(finite(&m.size) && finite(&m.start) && finite(&m.velocity)) || m.size.iter().any(|&x| x < 0.0) {
                return bad(format!("mover {:?} has invalid geometry", m.name));
            }
            if !(m.density > 0.0 && m.density.is_finite()) {
                return bad(format!("mover {:?} density {} must be positive", m.name, m.density));
            }
            if let Some(l) = m.route_length {
                if !(l > 0.0 && l.is_finite()) {
                    return bad(format!("mover {:?} route length {l} must be positive", m.name));
                }
            }
        }
        Ok(())
    }

    /// Also requires at least `window` frames.
    pub fn validate_for_window(&self, window: usize) -> Result<()> {
        self.validate()?;
        if self.frames < window {
            return Err(Error::Config(format!(
                "scene {:?} has {} frames, fewer than the window {window}",
                self.name, self.frames
            )));
        }
        Ok(())
    }
}

/// Faces of a box as (origin, u, v).
fn box_faces(min: Point3, size: Point3) -> [(Point3, Point3, Point3); 6] {
    let [sx, sy, sz] = size;
    let ex = [sx, 0.0, 0.0];
    let ey = [0.0, sy, 0.0];
    let ez = [0.0, 0.0, sz];
    let shift = |d: Point3| [min[0] + d[0], min[1] + d[1], min[2] + d[2]];
    [
        (min, ey, ez),
        (shift(ex), ey, ez),
        (min, ex, ez),
        (shift(ey), ex, ez),
        (min, ex, ey),
        (shift(ez), ex, ey),
    ]
}

fn sample_patch(rng: &mut ChaCha8Rng, origin: Point3, u: Point3, v: Point3, density: f64, out: &mut Vec<Point3>) {
    let area = norm(cross(u, v));
    let n = (area * density).round() as usize;
    for _ in 0..n {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        out.push([0, 1, 2].map(|i| origin[i] + a * u[i] + b * v[i]));
    }
}

/// A scene with its surfaces sampled; frames are produced on demand.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    static_points: Vec<Point3>,
    /// Relative to each mover's minimum corner.
    mover_points: Vec<Vec<Point3>>,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut static_points = Vec::new();
        for s in &spec.statics {
            match *s {
                StaticElement::Box { min, size, density } => {
                    for (o, u, v) in box_faces(min, size) {
                        sample_patch(&mut rng, o, u, v, density, &mut static_points);
                    }
                }
                StaticElement::Plane { origin, u, v, density } => sample_patch(&mut rng, origin, u, v, density, &mut static_points),
            }
        }
        let mover_points = spec
            .movers
            .iter()
            .map(|m| {
                let mut pts = Vec::new();
                for (o, u, v) in box_faces([0.0; 3], m.size) {
                    sample_patch(&mut rng, o, u, v, m.density, &mut pts);
                }
                pts
            })
            .collect();
        Ok(Scene {
            spec,
            static_points,
            mover_points,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.frames
    }

    pub fn is_empty(&self) -> bool {
        self.spec.frames == 0
    }

    /// Noise-free surface samples of the static elements.
    pub fn static_points(&self) -> &[Point3] {
        &self.static_points
    }

    /// Noise-free surface samples of mover `i` relative to its minimum corner.
    pub fn mover_points(&self, i: usize) -> &[Point3] {
        &self.mover_points[i]
    }

    /// Minimum corner of mover `i` at frame `t`.
    pub fn mover_position(&self, i: usize, t: usize) -> Point3 {
        let m = &self.spec.movers[i];
        let d = m.displacement(t as f64 / self.spec.rate_hz);
        [0, 1, 2].map(|k| m.start[k] + d[k])
    }

    pub fn frame(&self, t: usize) -> Result<(PointFrame, PointLabels)> {
        if t >= self.spec.frames {
            return Err(Error::Argument(format!("frame {t} out of range for {} frames", self.spec.frames)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(t as u64 + 1);
        let noise = Normal::new(0.0, self.spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let total = self.static_points.len() + self.mover_points.iter().map(Vec::len).sum::<usize>();
        let mut points = Vec::with_capacity(total);
        let mut moving = Vec::with_capacity(total);
        let jitter = |p: Point3, rng: &mut ChaCha8Rng| p.map(|x| x + noise.sample(rng));
        for &p in &self.static_points {
            points.push(jitter(p, &mut rng));
            moving.push(false);
        }
        for (i, body) in self.mover_points.iter().enumerate() {
            let at = self.mover_position(i, t);
            for p in body {
                points.push(jitter([p[0] + at[0], p[1] + at[1], p[2] + at[2]], &mut rng));
                moving.push(true);
            }
        }
        if let Some(occ) = &self.spec.occlusion {
            let keep = visible(&points, occ);
            points = keep.iter().map(|&i| points[i]).collect();
            moving = keep.iter().map(|&i| moving[i]).collect();
        }
        let intensities = moving.iter().map(|&m| if m { 0.6 } else { 0.3 }).collect();
        let frame = PointFrame::new(points, intensities, t)?;
        Ok((frame, PointLabels { moving, frame_index: t }))
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<(PointFrame, PointLabels)>> + '_ {
        (0..self.len()).map(move |t| self.frame(t))
    }
}

/// Indices of the points not shadowed, ascending.
fn visible(points: &[Point3], occ: &Occlusion) -> Vec<usize> {
    let az_step = occ.azimuth_step_deg.to_radians();
    let el_step = occ.elevation_step_deg.to_radians();
    let bins: Vec<((i64, i64), f64)> = points
        .iter()
        .map(|p| {
            let d = [p[0] - occ.origin[0], p[1] - occ.origin[1], p[2] - occ.origin[2]];
            let range = norm(d);
            let az = d[1].atan2(d[0]);
            let el = d[2].atan2((d[0] * d[0] + d[1] * d[1]).sqrt());
            (((az / az_step).floor() as i64, (el / el_step).floor() as i64), range)
        })
        .collect();
    let mut nearest: rustc_hash::FxHashMap<(i64, i64), f64> = Default::default();
    for &(bin, r) in &bins {
        let e = nearest.entry(bin).or_insert(f64::INFINITY);
        if r < *e {
            *e = r;
        }
    }
    (0..points.len())
        .filter(|&i| bins[i].1 <= nearest[&bins[i].0] + occ.margin)
        .collect()
}

/// All frames in memory.
pub fn generate(spec: SceneSpec) -> Result<Vec<(PointFrame, PointLabels)>> {
    Scene::new(spec)?.frames().collect()
}

/// Writes `velodyne/NNNNNN.bin` and `labels/NNNNNN.label` (0 static, 1
/// moving) under `dir`. Returns the number of frames written.
pub fn write_scene(scene: &Scene, dir: &Path, exec: Exec) -> Result<usize> {
    let velodyne = dir.join("velodyne");
    let labels = dir.join("labels");
    for d in [&velodyne, &labels] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let results = par::map_range(exec, scene.len(), |t| -> Result<()> {
        let (frame, lab) = scene.frame(t)?;
        write_point_frame(&velodyne.join(format!("{t:06}.bin")), &frame)?;
        let raw: Vec<u32> = lab.moving.iter().map(|&m| if m { LABEL_MOVING } else { LABEL_STATIC }).collect();
        write_raw_labels(&labels.join(format!("{t:06}.label")), &raw)
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(scene.len())
}

fn ground(half: f64, density: f64) -> StaticElement {
    StaticElement::Plane {
        origin: [-half, -half, GROUND_Z],
        u: [2.0 * half, 0.0, 0.0],
        v: [0.0, 2.0 * half, 0.0],
        density,
    }
}

fn wall(min: Point3, size: Point3) -> StaticElement {
    StaticElement::Box { min, size, density: 60.0 }
}

fn pedestrian(name: &str, start: Point3, direction: Point3, route: f64) -> Mover {
    Mover {
        name: name.into(),
        size: [0.5, 0.5, 1.8],
        start,
        velocity: direction.map(|d| d * PEDESTRIAN_SPEED),
        route_length: Some(route),
        density: 150.0,
    }
}

fn car(start: Point3, route: f64) -> Mover {
    Mover {
        name: "car".into(),
        size: [4.5, 1.8, 1.5],
        start,
        velocity: [CAR_SPEED, 0.0, 0.0],
        route_length: Some(route),
        density: 60.0,
    }
}

fn base(name: &str) -> SceneSpec {
    SceneSpec {
        name: name.into(),
        frames: 200,
        rate_hz: 10.0,
        statics: vec![ground(25.0, 4.0)],
        movers: Vec::new(),
        noise_sigma: DEFAULT_NOISE_SIGMA,
        seed: 0,
        occlusion: None,
    }
}

/// Built-in scenes, 200 frames at 10 Hz each.
pub fn presets() -> Vec<SceneSpec> {
    let z = GROUND_Z;
    let mut peds = base("crossing-pedestrians");
    peds.statics.push(wall([-15.0, 10.0, z], [30.0, 0.3, 4.0]));
    peds.statics.push(wall([-12.0, -9.0, z], [0.3, 6.0, 3.0]));
    peds.movers = vec![
        pedestrian("pedestrian-east", [-6.0, 4.0, z], [1.0, 0.0, 0.0], 14.0),
        pedestrian("pedestrian-north", [2.0, -6.0, z], [0.0, 1.0, 0.0], 14.0),
    ];

    let mut car_scene = base("passing-car");
    car_scene.statics.push(wall([-20.0, 9.0, z], [40.0, 0.3, 5.0]));
    car_scene.statics.push(wall([-20.0, -8.0, z], [40.0, 0.3, 2.0]));
    car_scene.movers = vec![car([-18.0, 1.5, z], 32.0)];

    let mut mixed = base("mixed-intersection");
    for (x, y) in [(-16.0, 7.0), (6.0, 7.0)] {
        mixed.statics.push(wall([x, y, z], [10.0, 0.3, 4.0]));
    }
    for (x, y) in [(-16.0, -9.0), (6.0, -9.0)] {
        mixed.statics.push(wall([x, y, z], [10.0, 0.3, 3.0]));
    }
    for (x, y) in [(-5.0, 5.0), (4.0, 5.0), (-5.0, -6.0), (4.0, -6.0)] {
        mixed.statics.push(wall([x, y, z], [0.4, 0.4, 3.0]));
    }
    mixed.movers = vec![
        car([-18.0, -2.0, z], 32.0),
        pedestrian("pedestrian-east", [-5.0, 3.5, z], [1.0, 0.0, 0.0], 10.0),
        pedestrian("pedestrian-north", [1.5, -7.0, z], [0.0, 1.0, 0.0], 12.0),
    ];
    vec![peds, car_scene, mixed]
}

pub fn preset(name: &str) -> Option<SceneSpec> {
    presets().into_iter().find(|s| s.name == name)
}
