//! Procedural tracked-scan generator.
//!
//! Synthetic scans reproduce the acquisition geometry of the real protocol
//! (straight / C / S probe paths, perpendicular or parallel plane
//! orientation, variable sweep speed) over a procedural 3D phantom, so the
//! whole pipeline is testable at desk scale with exact ground truth.
//!
//! The phantom is a voxelised scalar field of anisotropic tubes and
//! ellipsoidal blobs over a smoothly varying background, sampled trilinearly
//! at each image pixel's world position; speckle is multiplicative
//! Rayleigh-distributed noise. No acoustic realism is claimed: the point is
//! position-dependent image content with exact poses.
//!
//! Probe paths run in the world x-y plane starting at the origin heading +x;
//! the image plane hangs below it (depth along -z). `perpendicular` keeps the
//! plane normal along the travel direction, `parallel` puts the travel
//! direction inside the plane.

use std::f64::consts::PI;
use std::path::Path;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    make_split, save_scan, Arm, DataError, Frame, ImageGeom, Orientation, Protocol, Scan,
    ScanMeta, SplitManifest, SPLIT_FILE,
};
use crate::geometry::{compose, invert, GeometryError, RigidTransform};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("turn of {turn_deg} degrees would self-intersect the path")]
    ExcessiveCurvature { turn_deg: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sweep speed along the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedProfile {
    /// Equal arc length between consecutive frames.
    Constant,
    /// Speed changes linearly from `v0` to `v1` (relative units).
    Ramp { v0: f64, v1: f64 },
    /// Per-step length jitter: `max(0.05, 1 + sigma * N(0,1))`, renormalised.
    Jitter { sigma: f64 },
}

/// One synthetic probe sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub shape: Protocol,
    pub length_mm: f64,
    pub n_frames: u32,
    pub orientation: Orientation,
    pub speed: SpeedProfile,
    /// Total heading change in degrees for a C path; each half of an S path
    /// turns by `+turn_deg/2` then `-turn_deg/2`. Ignored for straight.
    pub turn_deg: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_frames < 2 {
            return Err(SynthError::BadSpec(format!(
                "n_frames must be at least 2, got {}",
                self.n_frames
            )));
        }
        if !(self.length_mm > 0.0) {
            return Err(SynthError::BadSpec(format!(
                "length_mm must be positive, got {}",
                self.length_mm
            )));
        }
        if self.shape != Protocol::Straight && self.turn_deg.abs() > 300.0 {
            return Err(SynthError::ExcessiveCurvature { turn_deg: self.turn_deg });
        }
        Ok(())
    }
}

/// Procedural phantom content description. Deterministic under `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
    pub seed: u64,
    pub n_tubes: usize,
    pub n_blobs: usize,
    /// Multiplicative speckle strength in [0, 1]; 0 disables noise.
    pub speckle: f64,
    /// Voxel pitch of the sampled field (mm).
    pub voxel_mm: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for c in 0..3 {
            if !(self.extent_max[c] > self.extent_min[c]) {
                return Err(SynthError::BadSpec("phantom extent is degenerate".into()));
            }
        }
        if !(self.voxel_mm > 0.0) {
            return Err(SynthError::BadSpec("phantom voxel pitch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.speckle) {
            return Err(SynthError::BadSpec(format!(
                "speckle must be in [0,1], got {}",
                self.speckle
            )));
        }
        Ok(())
    }

    /// Extent that covers every path of the given maximum length plus the
    /// hanging image plane, with margin.
    pub fn covering(max_length_mm: f64, geom: &ImageGeom, seed: u64) -> Self {
        let img_w = (geom.width - 1) as f64 * geom.spacing_mm;
        let img_h = (geom.height - 1) as f64 * geom.spacing_mm;
        let margin = 15.0 + img_w;
        let side = 0.8 * max_length_mm + margin;
        let extent_min = [-margin, -side, -(img_h + 20.0)];
        let extent_max = [max_length_mm + margin, side, 20.0];
        Self {
            extent_min,
            extent_max,
            seed,
            n_tubes: 18,
            n_blobs: 24,
            speckle: 0.08,
            voxel_mm: 1.25,
        }
    }
}

/// Voxelised scalar field in [0, 1], sampled trilinearly.
pub struct Phantom {
    spec: PhantomSpec,
    grid: Vec<f64>,
    dims: [usize; 3],
}

impl Phantom {
    pub fn generate(spec: &PhantomSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let size = [
            spec.extent_max[0] - spec.extent_min[0],
            spec.extent_max[1] - spec.extent_min[1],
            spec.extent_max[2] - spec.extent_min[2],
        ];

        // Background: a global linear ramp plus a few long-wavelength
        // cosines. The ramp keeps image content changing monotonically over
        // whole-scan distances instead of saturating at the feature scale;
        // its direction leans along +x, the distal-to-proximal travel axis,
        // the way limb anatomy drifts along the limb.
        let ramp_dir = {
            let tilt_y = rng.gen_range(-0.2..0.2);
            let tilt_z = rng.gen_range(-0.2..0.2);
            let n = (1.0f64 + tilt_y * tilt_y + tilt_z * tilt_z).sqrt();
            [1.0 / n, tilt_y / n, tilt_z / n]
        };
        let ramp_amp = rng.gen_range(0.30..0.40) / 100.0; // per mm
        // Wavelengths stay well below the scan scale: longer waves would
        // carry gradients that can cancel the ramp along whole path
        // sections; these saturate within 20-60 mm and read as texture.
        let waves: Vec<([f64; 3], f64, f64, f64)> = (0..4)
            .map(|_| {
                let dir = random_unit(&mut rng);
                let wavelength = rng.gen_range(40.0..120.0);
                let phase = rng.gen_range(0.0..(2.0 * PI));
                let amp = rng.gen_range(0.03..0.05);
                (dir, wavelength, phase, amp)
            })
            .collect();

        struct Tube {
            point: [f64; 3],
            dir: [f64; 3],
            radius: f64,
            half_len: f64,
            amp: f64,
        }
        // Finite segments: an endless tube lying nearly parallel to a scan
        // path would add a slow coherent gradient that can cancel the ramp.
        let tubes: Vec<Tube> = (0..spec.n_tubes)
            .map(|_| Tube {
                point: random_in_box(&mut rng, &spec.extent_min, &spec.extent_max),
                dir: random_unit(&mut rng),
                radius: rng.gen_range(2.0..5.0),
                half_len: rng.gen_range(15.0..45.0),
                amp: rng.gen_range(0.10..0.22) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            })
            .collect();

        struct Blob {
            center: [f64; 3],
            semi: [f64; 3],
            amp: f64,
        }
        let blobs: Vec<Blob> = (0..spec.n_blobs)
            .map(|_| Blob {
                center: random_in_box(&mut rng, &spec.extent_min, &spec.extent_max),
                semi: [
                    rng.gen_range(3.0..10.0),
                    rng.gen_range(3.0..10.0),
                    rng.gen_range(3.0..10.0),
                ],
                amp: rng.gen_range(0.10..0.24) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            })
            .collect();

        let dims = [
            (size[0] / spec.voxel_mm).ceil() as usize + 2,
            (size[1] / spec.voxel_mm).ceil() as usize + 2,
            (size[2] / spec.voxel_mm).ceil() as usize + 2,
        ];
        let mut grid = vec![0.0; dims[0] * dims[1] * dims[2]];
        for ix in 0..dims[0] {
            let x = spec.extent_min[0] + ix as f64 * spec.voxel_mm;
            for iy in 0..dims[1] {
                let y = spec.extent_min[1] + iy as f64 * spec.voxel_mm;
                for iz in 0..dims[2] {
                    let z = spec.extent_min[2] + iz as f64 * spec.voxel_mm;
                    let p = [x, y, z];
                    let centred = [
                        p[0] - (spec.extent_min[0] + spec.extent_max[0]) / 2.0,
                        p[1] - (spec.extent_min[1] + spec.extent_max[1]) / 2.0,
                        p[2] - (spec.extent_min[2] + spec.extent_max[2]) / 2.0,
                    ];
                    let mut v = 0.5
                        + ramp_amp
                            * (ramp_dir[0] * centred[0]
                                + ramp_dir[1] * centred[1]
                                + ramp_dir[2] * centred[2]);
                    for (dir, wavelength, phase, amp) in &waves {
                        let proj = dir[0] * p[0] + dir[1] * p[1] + dir[2] * p[2];
                        v += amp * (2.0 * PI * proj / wavelength + phase).cos();
                    }
                    for tube in &tubes {
                        let d = [p[0] - tube.point[0], p[1] - tube.point[1], p[2] - tube.point[2]];
                        let along =
                            (d[0] * tube.dir[0] + d[1] * tube.dir[1] + d[2] * tube.dir[2])
                                .clamp(-tube.half_len, tube.half_len);
                        let dr = [
                            d[0] - along * tube.dir[0],
                            d[1] - along * tube.dir[1],
                            d[2] - along * tube.dir[2],
                        ];
                        let perp2 = dr[0] * dr[0] + dr[1] * dr[1] + dr[2] * dr[2];
                        v += tube.amp * (-perp2 / (2.0 * tube.radius * tube.radius)).exp();
                    }
                    for blob in &blobs {
                        let mut q = 0.0;
                        for c in 0..3 {
                            let t = (p[c] - blob.center[c]) / blob.semi[c];
                            q += t * t;
                        }
                        v += blob.amp * (-q / 2.0).exp();
                    }
                    grid[(ix * dims[1] + iy) * dims[2] + iz] = v.clamp(0.02, 0.98);
                }
            }
        }
        Ok(Self { spec: spec.clone(), grid, dims })
    }

    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    /// Trilinear sample at a world point; coordinates clamp to the grid.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for c in 0..3 {
            let g = ((p[c] - self.spec.extent_min[c]) / self.spec.voxel_mm)
                .clamp(0.0, (self.dims[c] - 2) as f64);
            idx[c] = g.floor() as usize;
            frac[c] = g - g.floor();
        }
        let at = |dx: usize, dy: usize, dz: usize| -> f64 {
            self.grid[((idx[0] + dx) * self.dims[1] + idx[1] + dy) * self.dims[2] + idx[2] + dz]
        };
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(at(0, 0, 0), at(1, 0, 0), frac[0]);
        let c10 = lerp(at(0, 1, 0), at(1, 1, 0), frac[0]);
        let c01 = lerp(at(0, 0, 1), at(1, 0, 1), frac[0]);
        let c11 = lerp(at(0, 1, 1), at(1, 1, 1), frac[0]);
        let c0 = lerp(c00, c10, frac[1]);
        let c1 = lerp(c01, c11, frac[1]);
        lerp(c0, c1, frac[2])
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-3 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn random_in_box<R: Rng>(rng: &mut R, min: &[f64; 3], max: &[f64; 3]) -> [f64; 3] {
    [
        rng.gen_range(min[0]..max[0]),
        rng.gen_range(min[1]..max[1]),
        rng.gen_range(min[2]..max[2]),
    ]
}

/// Arc-length positions of the frames along the path for a speed profile.
fn frame_arclengths(spec: &TrajectorySpec, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let n = spec.n_frames as usize;
    let len = spec.length_mm;
    match spec.speed {
        SpeedProfile::Constant => (0..n)
            .map(|m| len * m as f64 / (n - 1) as f64)
            .collect(),
        SpeedProfile::Ramp { v0, v1 } => {
            let total = v0 + (v1 - v0) / 2.0;
            (0..n)
                .map(|m| {
                    let f = m as f64 / (n - 1) as f64;
                    len * (v0 * f + (v1 - v0) * f * f / 2.0) / total
                })
                .collect()
        }
        SpeedProfile::Jitter { sigma } => {
            let normal = Normal::new(0.0, 1.0).expect("valid normal");
            let mut steps: Vec<f64> = (1..n)
                .map(|_| (1.0 + sigma * normal.sample(rng)).max(0.05))
                .collect();
            let total: f64 = steps.iter().sum();
            for s in &mut steps {
                *s *= len / total;
            }
            let mut u = Vec::with_capacity(n);
            let mut acc = 0.0;
            u.push(0.0);
            for s in steps {
                acc += s;
                u.push(acc);
            }
            u
        }
    }
}

/// Heading angle at arc position `u` for the given shape.
fn heading(spec: &TrajectorySpec, u: f64) -> f64 {
    let len = spec.length_mm;
    let turn = spec.turn_deg.to_radians();
    match spec.shape {
        Protocol::Straight => 0.0,
        Protocol::CShape => turn * u / len,
        Protocol::SShape => {
            // +turn/2 over the first half, back to 0 over the second.
            let half = len / 2.0;
            if u <= half {
                (turn / 2.0) * u / half
            } else {
                (turn / 2.0) * (1.0 - (u - half) / half)
            }
        }
    }
}

/// Position on the path at arc position `u` (piecewise-circular arcs).
fn path_position(spec: &TrajectorySpec, u: f64) -> [f64; 3] {
    let len = spec.length_mm;
    let turn = spec.turn_deg.to_radians();
    match spec.shape {
        Protocol::Straight => [u, 0.0, 0.0],
        Protocol::CShape => {
            if turn.abs() < 1e-12 {
                return [u, 0.0, 0.0];
            }
            let kappa = turn / len;
            [kappa.recip() * (kappa * u).sin(), kappa.recip() * (1.0 - (kappa * u).cos()), 0.0]
        }
        Protocol::SShape => {
            if turn.abs() < 1e-12 {
                return [u, 0.0, 0.0];
            }
            let half = len / 2.0;
            let kappa = (turn / 2.0) / half;
            if u <= half {
                [kappa.recip() * (kappa * u).sin(), kappa.recip() * (1.0 - (kappa * u).cos()), 0.0]
            } else {
                // Mirror arc: curvature flips sign at the midpoint.
                let theta_mid = turn / 2.0;
                let mid = [
                    kappa.recip() * theta_mid.sin(),
                    kappa.recip() * (1.0 - theta_mid.cos()),
                ];
                let du = u - half;
                let k2 = -kappa;
                let x = mid[0]
                    + k2.recip() * ((theta_mid + k2 * du).sin() - theta_mid.sin());
                let y = mid[1]
                    - k2.recip() * ((theta_mid + k2 * du).cos() - theta_mid.cos());
                [x, y, 0.0]
            }
        }
    }
}

/// Orthonormal image axes at heading `theta`: `e_x` lateral, `e_y` depth
/// (world -z), `e_z` plane normal.
fn image_axes(orientation: Orientation, theta: f64) -> [[f64; 3]; 3] {
    let t = [theta.cos(), theta.sin(), 0.0];
    match orientation {
        Orientation::Perpendicular => {
            let e_x = [-t[1], t[0], 0.0];
            let e_y = [0.0, 0.0, -1.0];
            let e_z = [-t[0], -t[1], 0.0];
            [e_x, e_y, e_z]
        }
        Orientation::Parallel => {
            let e_x = t;
            let e_y = [0.0, 0.0, -1.0];
            let e_z = [-t[1], t[0], 0.0];
            [e_x, e_y, e_z]
        }
    }
}

/// Tool-to-world pose for a frame: image axes and origin composed with the
/// inverse calibration.
fn frame_pose(
    spec: &TrajectorySpec,
    geom: &ImageGeom,
    calib: &RigidTransform,
    u: f64,
) -> RigidTransform {
    let theta = heading(spec, u);
    let p = path_position(spec, u);
    let axes = image_axes(spec.orientation, theta);
    let half_w = (geom.width - 1) as f64 * geom.spacing_mm / 2.0;
    let origin = [
        p[0] - axes[0][0] * half_w,
        p[1] - axes[0][1] * half_w,
        p[2] - axes[0][2] * half_w,
    ];
    let mut r = [[0.0; 3]; 3];
    for row in 0..3 {
        for (col, axis) in axes.iter().enumerate() {
            r[row][col] = axis[row];
        }
    }
    let world_from_image =
        RigidTransform::from_parts(r, origin).expect("axes are orthonormal");
    compose(&world_from_image, &invert(calib))
}

/// Render one synthetic tracked scan.
#[allow(clippy::too_many_arguments)]
pub fn generate_scan(
    id: &str,
    traj: &TrajectorySpec,
    phantom: &Phantom,
    geom: &ImageGeom,
    calib: &RigidTransform,
    subject_id: &str,
    arm: Arm,
    fps: f64,
    seed: u64,
) -> Result<Scan, SynthError> {
    traj.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let arcs = frame_arclengths(traj, &mut rng);
    let speckle = phantom.spec().speckle;
    let rayleigh_mean = (PI / 2.0).sqrt();

    let mut frames = Vec::with_capacity(arcs.len());
    let mut poses = Vec::with_capacity(arcs.len());
    for (k, &u) in arcs.iter().enumerate() {
        let pose = frame_pose(traj, geom, calib, u);
        // Frame pixels: world position of each pixel through the image axes.
        let world_from_image = compose(&pose, calib);
        let mut img = GrayImage::new(geom.width, geom.height);
        let mut noise_rng = ChaCha12Rng::seed_from_u64(seed ^ ((k as u64 + 1) << 20));
        for y in 0..geom.height {
            for x in 0..geom.width {
                let p_img = [
                    x as f64 * geom.spacing_mm,
                    y as f64 * geom.spacing_mm,
                    0.0,
                ];
                let p_world = world_from_image.apply(p_img);
                let mut v = phantom.sample(p_world);
                if speckle > 0.0 {
                    let uniform: f64 = noise_rng.gen_range(f64::EPSILON..1.0);
                    let rayleigh = (-2.0 * uniform.ln()).sqrt();
                    let factor = (1.0 - speckle) + speckle * rayleigh / rayleigh_mean;
                    v *= factor;
                }
                img.put_pixel(x, y, image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
            }
        }
        frames.push(Frame {
            index: (k + 1) as u32,
            image: img,
            timestamp_s: Some(k as f64 / fps),
        });
        poses.push(pose);
    }

    let meta = ScanMeta {
        subject_id: subject_id.to_string(),
        arm,
        protocol: traj.shape,
        orientation: traj.orientation,
        fps,
        pixel_spacing: geom.spacing_mm,
    };
    Ok(Scan::new(id.to_string(), frames, poses, *calib, meta)?)
}

fn default_fps() -> f64 {
    20.0
}

fn default_frames_range() -> (u32, u32) {
    (36, 430)
}

fn default_length_range() -> (f64, f64) {
    (100.0, 200.0)
}

fn default_speed() -> SpeedPolicy {
    SpeedPolicy::RandomRamp { lo: 0.6, hi: 1.5 }
}

fn default_turn_c() -> f64 {
    75.0
}

fn default_turn_s() -> f64 {
    60.0
}

fn default_speckle() -> f64 {
    0.08
}

fn default_split_ratio() -> [u32; 3] {
    [3, 1, 1]
}

/// How per-scan speed profiles are drawn when generating a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedPolicy {
    Constant,
    /// Each scan draws its own ramp endpoints uniformly from `[lo, hi]`.
    RandomRamp { lo: f64, hi: f64 },
    Jitter { sigma: f64 },
}

/// Corpus layout: each subject contributes the full protocol x orientation
/// grid (six scans) per arm, with a distinct phantom per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_subjects: u32,
    /// 1 or 2 arms per subject.
    pub arms: u32,
    pub image: ImageGeom,
    #[serde(default = "default_frames_range")]
    pub frames_range: (u32, u32),
    #[serde(default = "default_length_range")]
    pub length_range_mm: (f64, f64),
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_speed")]
    pub speed: SpeedPolicy,
    #[serde(default = "default_turn_c")]
    pub turn_deg_c: f64,
    #[serde(default = "default_turn_s")]
    pub turn_deg_s: f64,
    #[serde(default = "default_speckle")]
    pub speckle: f64,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: [u32; 3],
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_subjects < 2 {
            return Err(SynthError::BadSpec(format!(
                "need at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(1..=2).contains(&self.arms) {
            return Err(SynthError::BadSpec(format!("arms must be 1 or 2, got {}", self.arms)));
        }
        if self.frames_range.0 < 2 || self.frames_range.0 > self.frames_range.1 {
            return Err(SynthError::BadSpec(format!(
                "bad frames range {:?}",
                self.frames_range
            )));
        }
        if !(self.length_range_mm.0 > 0.0) || self.length_range_mm.0 > self.length_range_mm.1 {
            return Err(SynthError::BadSpec(format!(
                "bad length range {:?}",
                self.length_range_mm
            )));
        }
        Ok(())
    }
}

/// Provenance entry for one generated scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanProvenance {
    pub id: String,
    pub subject: String,
    pub arm: Arm,
    pub phantom_seed: u64,
    pub scan_seed: u64,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusProvenance {
    pub spec: CorpusSpec,
    pub calib: Vec<f64>,
    pub scans: Vec<ScanProvenance>,
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub scan_ids: Vec<String>,
    pub split: SplitManifest,
}

pub const PROVENANCE_FILE: &str = "provenance.json";

/// Fixed image-to-tool calibration used for synthetic corpora: a modest
/// rotation plus offset so nothing accidentally relies on it being identity.
pub fn synthetic_calib() -> RigidTransform {
    compose(
        &compose(&RigidTransform::rot_x(0.04), &RigidTransform::rot_y(-0.03)),
        &RigidTransform::translation(1.5, -2.0, 3.5),
    )
}

/// Generate the full corpus into `out_dir`: one directory per scan plus
/// `split.json` and `provenance.json`. Byte-identical under a fixed seed.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusSummary, SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let calib = synthetic_calib();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut provenance = Vec::new();
    let mut scan_ids = Vec::new();

    for subject in 0..spec.n_subjects {
        let subject_id = format!("sub{subject:03}");
        let phantom_seed = spec.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(subject as u64 + 1));
        let phantom_spec =
            PhantomSpec { speckle: spec.speckle, ..PhantomSpec::covering(spec.length_range_mm.1, &spec.image, phantom_seed) };
        let phantom = Phantom::generate(&phantom_spec)?;

        for arm_idx in 0..spec.arms {
            let arm = if arm_idx == 0 { Arm::Left } else { Arm::Right };
            let arm_name = if arm_idx == 0 { "left" } else { "right" };
            for protocol in Protocol::ALL {
                for orientation in Orientation::ALL {
                    let n_frames = rng.gen_range(spec.frames_range.0..=spec.frames_range.1);
                    let length_mm =
                        rng.gen_range(spec.length_range_mm.0..=spec.length_range_mm.1);
                    let speed = match spec.speed {
                        SpeedPolicy::Constant => SpeedProfile::Constant,
                        SpeedPolicy::RandomRamp { lo, hi } => SpeedProfile::Ramp {
                            v0: rng.gen_range(lo..=hi),
                            v1: rng.gen_range(lo..=hi),
                        },
                        SpeedPolicy::Jitter { sigma } => SpeedProfile::Jitter { sigma },
                    };
                    let turn_deg = match protocol {
                        Protocol::Straight => 0.0,
                        Protocol::CShape => spec.turn_deg_c,
                        Protocol::SShape => spec.turn_deg_s,
                    };
                    let traj = TrajectorySpec {
                        shape: protocol,
                        length_mm,
                        n_frames,
                        orientation,
                        speed,
                        turn_deg,
                    };
                    let scan_seed = rng.gen::<u64>();
                    let id = format!("{subject_id}_{arm_name}_{protocol}_{orientation}");
                    let scan = generate_scan(
                        &id,
                        &traj,
                        &phantom,
                        &spec.image,
                        &calib,
                        &subject_id,
                        arm,
                        spec.fps,
                        scan_seed,
                    )?;
                    save_scan(&scan, &out_dir.join(&id))?;
                    provenance.push(ScanProvenance {
                        id: id.clone(),
                        subject: subject_id.clone(),
                        arm,
                        phantom_seed,
                        scan_seed,
                        trajectory: traj,
                    });
                    scan_ids.push(id);
                }
            }
        }
    }

    let split = make_split(&scan_ids, spec.split_ratio, spec.seed)?;
    split.save(&out_dir.join(SPLIT_FILE))?;
    let prov = CorpusProvenance {
        spec: spec.clone(),
        calib: calib.to_flat16().to_vec(),
        scans: provenance,
    };
    std::fs::write(
        out_dir.join(PROVENANCE_FILE),
        serde_json::to_string_pretty(&prov)?,
    )?;
    Ok(CorpusSummary { scan_ids, split })
}

/// Spearman rank correlation between inter-frame pose distance and mean
/// absolute intensity difference, over a deterministic subsample of frame
/// pairs. This is the learnable image-pose coupling; synthetic corpora are
/// asserted to have it, not assumed.
pub fn image_pose_spearman(scan: &Scan, max_pairs: usize) -> f64 {
    let n = scan.len() as usize;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    if pairs.len() > max_pairs {
        let step = pairs.len() as f64 / max_pairs as f64;
        pairs = (0..max_pairs)
            .map(|k| pairs[(k as f64 * step) as usize])
            .collect();
    }

    let images: Vec<ndarray::Array2<f64>> =
        scan.frames.iter().map(|f| f.to_normalized()).collect();
    let geom = scan.geom();
    let corners = crate::geometry::corner_points(geom.width, geom.height, geom.spacing_mm)
        .expect("valid geometry");

    let mut pose_dist = Vec::with_capacity(pairs.len());
    let mut image_dist = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let rel = crate::geometry::relative_gt(
            &scan.world_poses[i],
            &scan.world_poses[j],
            &scan.calib,
        );
        let same = crate::geometry::relative_gt(
            &scan.world_poses[j],
            &scan.world_poses[j],
            &scan.calib,
        );
        pose_dist.push(crate::reconstruct::frame_error(&same, &rel, &corners));
        let diff = (&images[i] - &images[j]).mapv(f64::abs).mean().unwrap();
        image_dist.push(diff);
    }
    spearman(&pose_dist, &image_dist)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[k]] {
            end += 1;
        }
        let avg = (k + end) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=end] {
            out[idx] = avg;
        }
        k = end + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    let n = ra.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for k in 0..ra.len() {
        let da = ra[k] - mean_a;
        let db = rb[k] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    cov / (var_a.sqrt() * var_b.sqrt())
}
