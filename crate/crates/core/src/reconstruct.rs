//! Whole-scan trajectory reconstruction and the four evaluation metrics.
//!
//! A trained model predicts the main-task transform between frames `i*` and
//! `j*` of an `M`-frame window. Consecutive windows overlap so that the
//! previous window's `j*` frame is the next window's `i*` frame, and the
//! per-window predictions chain into a whole-scan trajectory.
//!
//! Coordinate convention: a prediction for pair `(i, j)` approximates
//! `(world_j)^-1 * world_i * calib` (image-i mm coordinates into tool-j
//! coordinates). Chaining strips the calibration from the right, composes in
//! tool space, and the resulting [`Trajectory`] stores, for every frame, the
//! transform that maps that frame's tool coordinates into the first frame's
//! tool coordinates; the reference entry is the identity. Placing image
//! content (corners, pixels) therefore goes through `G(m) * calib`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{ImageGeom, Scan};
use crate::geometry::{
    compose, corner_points, interpolate, invert, matrix_to_params, params_to_matrix, relative_gt,
    GeometryError, PointSet, RigidTransform,
};
use crate::objective::TaskPrediction;
use crate::sampling::{dependency_of, DependencyProfile, SamplingError, TaskPair, TaskSet};

#[derive(Error, Debug)]
pub enum ReconstructError {
    #[error("scan {scan_id} has {len} frames, shorter than M = {m}")]
    ScanTooShort { scan_id: String, len: u32, m: u32 },
    #[error("main task ({},{}) not in the model's task set", main.i, main.j)]
    MainNotInTaskSet { main: TaskPair },
    #[error("predictor returned {found} predictions, expected {expected}")]
    WrongPredictionCount { expected: usize, found: usize },
    #[error("trajectories cover {a} and {b} frames; metrics need matching frame sets")]
    FrameSetMismatch { a: usize, b: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("occupancy grid is empty")]
    EmptyOccupancy,
    #[error("stride must be at least 1")]
    BadStride,
    #[error("voxel size must be positive, got {0}")]
    BadVoxel(f64),
    #[error("predictor: {0}")]
    Predictor(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// How a frame's transform was obtained during chaining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// The scan's first frame; identity by definition.
    Reference,
    /// Anchor placed by composing main-task predictions.
    MainChain,
    /// Placed by an auxiliary-task prediction (possibly several hops).
    Auxiliary,
    /// No prediction path available; screw-linear interpolation between the
    /// nearest placed neighbours.
    Interpolated,
}

/// Per-frame transforms into the reference (first-frame tool) coordinate
/// system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Entry `m - 1` maps frame `m`'s tool coordinates into the reference
    /// tool coordinates. The reference entry is the identity.
    pub transforms: Vec<RigidTransform>,
    pub placements: Vec<Placement>,
    pub calib: RigidTransform,
    pub geom: ImageGeom,
}

impl Trajectory {
    /// Ground-truth trajectory from tracked poses.
    pub fn ground_truth(scan: &Scan) -> Self {
        let w1_inv = invert(&scan.world_poses[0]);
        let transforms: Vec<RigidTransform> = scan
            .world_poses
            .iter()
            .map(|w| compose(&w1_inv, w))
            .collect();
        let mut placements = vec![Placement::MainChain; transforms.len()];
        placements[0] = Placement::Reference;
        Self { transforms, placements, calib: scan.calib, geom: scan.geom() }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    /// Number of frames placed by interpolation rather than prediction.
    pub fn interpolated_count(&self) -> usize {
        self.placements
            .iter()
            .filter(|p| **p == Placement::Interpolated)
            .count()
    }

    /// Image-placement transform for frame `m` (1-based): `G(m) * calib`.
    pub fn image_transform(&self, m: usize) -> RigidTransform {
        compose(&self.transforms[m - 1], &self.calib)
    }

    /// Write per-frame rows `frame_index,t00..t23` (first three rows of each
    /// 4x4 transform, row-major), the same convention as poses.csv.
    pub fn save_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        use std::io::Write;
        let mut f = std::fs::File::create(path)?;
        let mut header = vec!["frame_index".to_string()];
        for i in 0..3 {
            for j in 0..4 {
                header.push(format!("t{i}{j}"));
            }
        }
        writeln!(f, "{}", header.join(","))?;
        for (k, t) in self.transforms.iter().enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend(t.to_rows12().iter().map(|v| v.to_string()));
            writeln!(f, "{}", rec.join(","))?;
        }
        Ok(())
    }
}

/// Anything that can predict the task-set transforms for a window of a scan.
///
/// Trained models implement this by looking only at the window's frames;
/// the oracle implementation reads the tracked poses instead and is used to
/// validate the chaining and metric machinery.
pub trait ScanPredictor: Sync {
    fn tasks(&self) -> &TaskSet;

    /// Predictions for the window starting at 1-based frame `start`, in the
    /// task set's pair order.
    fn predict_window(
        &self,
        scan: &Scan,
        start: u32,
    ) -> Result<Vec<TaskPrediction>, ReconstructError>;
}

/// Perfect predictor: returns the ground-truth transform for every task.
pub struct OraclePredictor {
    tasks: TaskSet,
}

impl OraclePredictor {
    pub fn new(tasks: TaskSet) -> Self {
        Self { tasks }
    }
}

impl ScanPredictor for OraclePredictor {
    fn tasks(&self) -> &TaskSet {
        &self.tasks
    }

    fn predict_window(
        &self,
        scan: &Scan,
        start: u32,
    ) -> Result<Vec<TaskPrediction>, ReconstructError> {
        self.tasks
            .pairs
            .iter()
            .map(|pair| {
                let wi = &scan.world_poses[(start + pair.i - 2) as usize];
                let wj = &scan.world_poses[(start + pair.j - 2) as usize];
                let gt = relative_gt(wi, wj, &scan.calib);
                Ok(TaskPrediction { pair: *pair, params: matrix_to_params(&gt).params })
            })
            .collect()
    }
}

/// Window start indices for chaining: starts advance by the main-task
/// interval so the previous `j*` frame is the next `i*` frame; a final
/// window at `L - M + 1` is appended when the regular grid stops short of
/// the scan end.
pub fn window_starts(len: u32, m: u32, main: TaskPair) -> Vec<u32> {
    let step = main.interval();
    let last_valid = len - m + 1;
    let mut starts = Vec::new();
    let mut s = 1;
    while s <= last_valid {
        starts.push(s);
        s += step;
    }
    if *starts.last().unwrap() != last_valid {
        starts.push(last_valid);
    }
    starts
}

/// Chain per-window predictions into a whole-scan trajectory.
///
/// `window_preds[w]` must hold the predictions for `starts[w]` in task-pair
/// order. Placement priority inside each window: main-task anchors first,
/// then auxiliary tasks (repeated passes, so multi-hop auxiliary chains
/// resolve), and screw-linear interpolation as the flagged fallback once all
/// windows are processed.
pub fn chain_from_predictions(
    scan_len: u32,
    calib: &RigidTransform,
    geom: ImageGeom,
    tasks: &TaskSet,
    main: TaskPair,
    starts: &[u32],
    window_preds: &[Vec<TaskPrediction>],
) -> Result<Trajectory, ReconstructError> {
    let m = tasks.m;
    let main_idx = tasks
        .index_of(main)
        .ok_or(ReconstructError::MainNotInTaskSet { main })?;
    let calib_inv = invert(calib);

    // Tool-to-tool relative transforms per window, task order.
    let mut window_rel: Vec<Vec<RigidTransform>> = Vec::with_capacity(window_preds.len());
    for preds in window_preds {
        if preds.len() != tasks.tau_plus_1() {
            return Err(ReconstructError::WrongPredictionCount {
                expected: tasks.tau_plus_1(),
                found: preds.len(),
            });
        }
        let rel = preds
            .iter()
            .map(|p| Ok(compose(&params_to_matrix(&p.params)?, &calib_inv)))
            .collect::<Result<Vec<_>, GeometryError>>()?;
        window_rel.push(rel);
    }

    let n = scan_len as usize;
    let mut placed: Vec<Option<RigidTransform>> = vec![None; n];
    let mut modes: Vec<Placement> = vec![Placement::Interpolated; n];
    placed[0] = Some(RigidTransform::identity());
    modes[0] = Placement::Reference;

    for (w, &start) in starts.iter().enumerate() {
        let rel = &window_rel[w];
        let a = (start + main.i - 2) as usize; // 0-based anchor indices
        let b = (start + main.j - 2) as usize;
        loop {
            let mut progressed = false;

            // Main task has priority for the anchors.
            let u_main = &rel[main_idx];
            if placed[a].is_some() && placed[b].is_none() {
                placed[b] = Some(compose(placed[a].as_ref().unwrap(), &invert(u_main)));
                modes[b] = Placement::MainChain;
                progressed = true;
            } else if placed[b].is_some() && placed[a].is_none() {
                placed[a] = Some(compose(placed[b].as_ref().unwrap(), u_main));
                modes[a] = Placement::MainChain;
                progressed = true;
            }

            // One auxiliary pass in pair order. The j* anchor stays reserved
            // for the main chain while its partner is still unplaced.
            for (k, pair) in tasks.pairs.iter().enumerate() {
                if k == main_idx {
                    continue;
                }
                let pu = (start + pair.i - 2) as usize;
                let pv = (start + pair.j - 2) as usize;
                let u = &rel[k];
                if placed[pu].is_some() && placed[pv].is_none() {
                    if pv == b && placed[a].is_none() {
                        continue;
                    }
                    placed[pv] = Some(compose(placed[pu].as_ref().unwrap(), &invert(u)));
                    modes[pv] = Placement::Auxiliary;
                    progressed = true;
                } else if placed[pv].is_some() && placed[pu].is_none() {
                    if pu == b && placed[a].is_none() {
                        continue;
                    }
                    placed[pu] = Some(compose(placed[pv].as_ref().unwrap(), u));
                    modes[pu] = Placement::Auxiliary;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        // Release the anchor reservation if the main route never connected.
        if placed[b].is_none() {
            for (k, pair) in tasks.pairs.iter().enumerate() {
                let pu = (start + pair.i - 2) as usize;
                let pv = (start + pair.j - 2) as usize;
                if pv == b && placed[pu].is_some() {
                    placed[pv] = Some(compose(placed[pu].as_ref().unwrap(), &invert(&rel[k])));
                    modes[pv] = Placement::Auxiliary;
                    break;
                }
            }
        }
        let _ = m;
    }

    // Fallback: screw-linear interpolation between the nearest placed
    // neighbours, flagged per frame.
    let placed_idx: Vec<usize> = (0..n).filter(|&i| placed[i].is_some()).collect();
    if placed_idx.is_empty() {
        return Err(ReconstructError::EmptyTrajectory);
    }
    for i in 0..n {
        if placed[i].is_some() {
            continue;
        }
        let below = placed_idx.iter().rev().find(|&&p| p < i).copied();
        let above = placed_idx.iter().find(|&&p| p > i).copied();
        let g = match (below, above) {
            (Some(p), Some(q)) => {
                let t = (i - p) as f64 / (q - p) as f64;
                interpolate(placed[p].as_ref().unwrap(), placed[q].as_ref().unwrap(), t)
            }
            (Some(p), None) => *placed[p].as_ref().unwrap(),
            (None, Some(q)) => *placed[q].as_ref().unwrap(),
            (None, None) => unreachable!("placed_idx is non-empty"),
        };
        placed[i] = Some(g);
        modes[i] = Placement::Interpolated;
    }

    Ok(Trajectory {
        transforms: placed.into_iter().map(|g| g.unwrap()).collect(),
        placements: modes,
        calib: *calib,
        geom,
    })
}

/// Reconstruct a scan's trajectory with a predictor.
pub fn chain(
    scan: &Scan,
    predictor: &dyn ScanPredictor,
    main: TaskPair,
) -> Result<Trajectory, ReconstructError> {
    let tasks = predictor.tasks();
    let m = tasks.m;
    if scan.len() < m {
        return Err(ReconstructError::ScanTooShort {
            scan_id: scan.id.clone(),
            len: scan.len(),
            m,
        });
    }
    if !tasks.contains(main) {
        return Err(ReconstructError::MainNotInTaskSet { main });
    }
    let starts = window_starts(scan.len(), m, main);
    let mut window_preds = Vec::with_capacity(starts.len());
    for &s in &starts {
        window_preds.push(predictor.predict_window(scan, s)?);
    }
    chain_from_predictions(
        scan.len(),
        &scan.calib,
        scan.geom(),
        tasks,
        main,
        &starts,
        &window_preds,
    )
}

/// Mean Euclidean distance over the corner points between `gt`- and
/// `pred`-transformed positions.
pub fn frame_error(gt: &RigidTransform, pred: &RigidTransform, corners: &PointSet) -> f64 {
    let mut acc = 0.0;
    for &p in corners.points() {
        let a = gt.apply(p);
        let b = pred.apply(p);
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        acc += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    acc / corners.len() as f64
}

fn check_pair(gt: &Trajectory, pred: &Trajectory) -> Result<(), ReconstructError> {
    if gt.len() != pred.len() {
        return Err(ReconstructError::FrameSetMismatch { a: gt.len(), b: pred.len() });
    }
    if gt.is_empty() {
        return Err(ReconstructError::EmptyTrajectory);
    }
    Ok(())
}

/// Mean Euclidean distance over all reconstructed frames and the (strided)
/// pixel lattice between ground-truth- and prediction-placed pixel
/// positions. Stride 1 covers every pixel; larger strides are a recorded
/// approximation.
pub fn accumulated_error(
    gt: &Trajectory,
    pred: &Trajectory,
    geom: &ImageGeom,
    stride: u32,
) -> Result<f64, ReconstructError> {
    check_pair(gt, pred)?;
    if stride == 0 {
        return Err(ReconstructError::BadStride);
    }
    let lattice = pixel_lattice(geom, stride);
    let mut acc = 0.0;
    let mut count = 0usize;
    for m in 2..=gt.len() {
        let a = gt.image_transform(m);
        let b = pred.image_transform(m);
        for &p in &lattice {
            let pa = a.apply(p);
            let pb = b.apply(p);
            let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
            acc += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn pixel_lattice(geom: &ImageGeom, stride: u32) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    let s = geom.spacing_mm;
    let mut y = 0;
    while y < geom.height {
        let mut x = 0;
        while x < geom.width {
            pts.push([x as f64 * s, y as f64 * s, 0.0]);
            x += stride;
        }
        y += stride;
    }
    pts
}

/// Dice overlap of the voxelised pixel clouds of the two trajectories.
pub fn dice_overlap(
    gt: &Trajectory,
    pred: &Trajectory,
    geom: &ImageGeom,
    voxel_mm: f64,
) -> Result<f64, ReconstructError> {
    check_pair(gt, pred)?;
    if !(voxel_mm > 0.0) {
        return Err(ReconstructError::BadVoxel(voxel_mm));
    }
    let lattice = pixel_lattice(geom, 1);
    let clouds: Vec<Vec<[f64; 3]>> = [gt, pred]
        .iter()
        .map(|traj| {
            let mut cloud = Vec::with_capacity(lattice.len() * traj.len());
            for m in 1..=traj.len() {
                let t = traj.image_transform(m);
                for &p in &lattice {
                    cloud.push(t.apply(p));
                }
            }
            cloud
        })
        .collect();

    let mut min = [f64::INFINITY; 3];
    for cloud in &clouds {
        for p in cloud {
            for c in 0..3 {
                min[c] = min[c].min(p[c]);
            }
        }
    }

    let voxelise = |cloud: &Vec<[f64; 3]>| -> HashSet<(i64, i64, i64)> {
        cloud
            .iter()
            .map(|p| {
                (
                    ((p[0] - min[0]) / voxel_mm).floor() as i64,
                    ((p[1] - min[1]) / voxel_mm).floor() as i64,
                    ((p[2] - min[2]) / voxel_mm).floor() as i64,
                )
            })
            .collect()
    };
    let a = voxelise(&clouds[0]);
    let b = voxelise(&clouds[1]);
    if a.is_empty() || b.is_empty() {
        return Err(ReconstructError::EmptyOccupancy);
    }
    let inter = a.intersection(&b).count();
    Ok(2.0 * inter as f64 / (a.len() + b.len()) as f64)
}

/// Mean corner distance on the scan's last frame.
pub fn final_drift(
    gt: &Trajectory,
    pred: &Trajectory,
    corners: &PointSet,
) -> Result<f64, ReconstructError> {
    check_pair(gt, pred)?;
    let last = gt.len();
    Ok(frame_error(
        &gt.image_transform(last),
        &pred.image_transform(last),
        corners,
    ))
}

/// Evaluation knobs; defaults follow the acceptance configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalOptions {
    pub acc_stride: u32,
    pub voxel_mm: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { acc_stride: 1, voxel_mm: 1.0 }
    }
}

/// All four metrics for one scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub scan_id: String,
    pub eps_frame: f64,
    pub eps_acc: f64,
    pub eps_dice: f64,
    pub eps_drift: f64,
    pub windows: usize,
    pub interpolated_frames: usize,
}

/// Metrics aggregated over a set of scans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eps_frame: f64,
    pub eps_acc: f64,
    pub eps_dice: f64,
    pub eps_drift: f64,
    pub per_scan: Vec<ScanMetrics>,
    pub skipped_scans: Vec<String>,
    pub dependency: DependencyProfile,
    pub acc_stride: u32,
    pub voxel_mm: f64,
    pub interpolated_frames: usize,
}

/// Run chaining plus all four metrics for one scan.
pub fn evaluate_scan(
    scan: &Scan,
    predictor: &dyn ScanPredictor,
    main: TaskPair,
    opts: &EvalOptions,
) -> Result<ScanMetrics, ReconstructError> {
    let tasks = predictor.tasks();
    let m = tasks.m;
    if scan.len() < m {
        return Err(ReconstructError::ScanTooShort {
            scan_id: scan.id.clone(),
            len: scan.len(),
            m,
        });
    }
    let main_idx = tasks
        .index_of(main)
        .ok_or(ReconstructError::MainNotInTaskSet { main })?;
    let geom = scan.geom();
    let corners = corner_points(geom.width, geom.height, geom.spacing_mm)?;

    let starts = window_starts(scan.len(), m, main);
    let mut window_preds = Vec::with_capacity(starts.len());
    for &s in &starts {
        window_preds.push(predictor.predict_window(scan, s)?);
    }

    // Frame prediction accuracy: per-window main-task error, not chained.
    let mut eps_frame = 0.0;
    for (w, &start) in starts.iter().enumerate() {
        let wi = &scan.world_poses[(start + main.i - 2) as usize];
        let wj = &scan.world_poses[(start + main.j - 2) as usize];
        let gt_rel = relative_gt(wi, wj, &scan.calib);
        let pred_rel = params_to_matrix(&window_preds[w][main_idx].params)?;
        eps_frame += frame_error(&gt_rel, &pred_rel, &corners);
    }
    eps_frame /= starts.len() as f64;

    let pred_traj = chain_from_predictions(
        scan.len(),
        &scan.calib,
        geom,
        tasks,
        main,
        &starts,
        &window_preds,
    )?;
    let gt_traj = Trajectory::ground_truth(scan);

    let eps_acc = accumulated_error(&gt_traj, &pred_traj, &geom, opts.acc_stride)?;
    let eps_dice = dice_overlap(&gt_traj, &pred_traj, &geom, opts.voxel_mm)?;
    let eps_drift = final_drift(&gt_traj, &pred_traj, &corners)?;

    Ok(ScanMetrics {
        scan_id: scan.id.clone(),
        eps_frame,
        eps_acc,
        eps_dice,
        eps_drift,
        windows: starts.len(),
        interpolated_frames: pred_traj.interpolated_count(),
    })
}

/// Evaluate a set of scans; scans shorter than `M` are skipped and listed.
pub fn evaluate_scans(
    scans: &[Scan],
    predictor: &dyn ScanPredictor,
    main: TaskPair,
    opts: &EvalOptions,
) -> Result<MetricsReport, ReconstructError> {
    let tasks = predictor.tasks();
    let dependency = dependency_of(tasks.m, main.i, main.j)?;
    let mut per_scan = Vec::new();
    let mut skipped = Vec::new();
    for scan in scans {
        if scan.len() < tasks.m {
            skipped.push(scan.id.clone());
            continue;
        }
        per_scan.push(evaluate_scan(scan, predictor, main, opts)?);
    }
    if per_scan.is_empty() {
        return Err(ReconstructError::EmptyTrajectory);
    }
    let n = per_scan.len() as f64;
    let mean = |f: fn(&ScanMetrics) -> f64| per_scan.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        eps_frame: mean(|s| s.eps_frame),
        eps_acc: mean(|s| s.eps_acc),
        eps_dice: mean(|s| s.eps_dice),
        eps_drift: mean(|s| s.eps_drift),
        interpolated_frames: per_scan.iter().map(|s| s.interpolated_frames).sum(),
        per_scan,
        skipped_scans: skipped,
        dependency,
        acc_stride: opts.acc_stride,
        voxel_mm: opts.voxel_mm,
    })
}
