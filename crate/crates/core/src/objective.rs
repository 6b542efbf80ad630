//! The multi-transformation training loss.
//!
//! Each task's error is the mean, over the four image corner points and the
//! three coordinates, of squared differences between the ground-truth- and
//! prediction-transformed points (mm^2). The overall loss is the unweighted
//! mean over the sampled tasks.
//!
//! Normalisation note: with a sampled task subset the mean is taken over the
//! realised task count (`tau + 1`) rather than the full `M(M-1)/2` universe,
//! so loss values stay comparable across `M`; a constant factor does not move
//! the optimum. [`universe_normalised`] converts for logs that want the
//! universe convention, and training logs record both.

use thiserror::Error;

use crate::geometry::{
    euler_zyx, euler_zyx_derivs, params_to_matrix, GeometryError, PointSet, RigidTransform,
    TransformParams,
};
use crate::sampling::{SequenceSample, TaskPair};

#[derive(Error, Debug)]
pub enum ObjectiveError {
    #[error("no ground truth for predicted pair ({},{})", pair.i, pair.j)]
    MissingGroundTruth { pair: TaskPair },
    #[error("no predictions")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One network output: the predicted transform for a task pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskPrediction {
    pub pair: TaskPair,
    pub params: TransformParams,
}

/// Mean over points of the per-point coordinate-mean squared difference
/// between `gt`- and `pred`-transformed points.
pub fn point_mse(gt: &RigidTransform, pred: &RigidTransform, pts: &PointSet) -> f64 {
    let n = pts.len() as f64;
    let mut acc = 0.0;
    for &p in pts.points() {
        let a = gt.apply(p);
        let b = pred.apply(p);
        let d0 = b[0] - a[0];
        let d1 = b[1] - a[1];
        let d2 = b[2] - a[2];
        acc += (d0 * d0 + d1 * d1 + d2 * d2) / 3.0;
    }
    acc / n
}

/// [`point_mse`] for a prediction given in parameter form, together with its
/// gradient with respect to the six parameters (rx, ry, rz, tx, ty, tz).
fn point_mse_with_grad(
    gt: &RigidTransform,
    pred: &TransformParams,
    pts: &PointSet,
) -> (f64, [f64; 6]) {
    let r = euler_zyx(pred.rx, pred.ry, pred.rz);
    let dr = euler_zyx_derivs(pred.rx, pred.ry, pred.rz);
    let t = [pred.tx, pred.ty, pred.tz];
    let n = pts.len() as f64;
    let scale = 2.0 / (3.0 * n);

    let mut value = 0.0;
    let mut grad = [0.0; 6];
    for &p in pts.points() {
        let a = gt.apply(p);
        let mut b = [0.0; 3];
        for c in 0..3 {
            b[c] = r[c][0] * p[0] + r[c][1] * p[1] + r[c][2] * p[2] + t[c];
        }
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        value += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / (3.0 * n);
        for c in 0..3 {
            // translation components
            grad[3 + c] += scale * d[c];
            // rotation components: d b_c / d angle_k = (dR_k * p)_c
            for k in 0..3 {
                let db = dr[k][c][0] * p[0] + dr[k][c][1] * p[1] + dr[k][c][2] * p[2];
                grad[k] += scale * d[c] * db;
            }
        }
    }
    (value, grad)
}

/// Unweighted mean of [`point_mse`] over the predicted tasks, with ground
/// truth looked up in the sample.
pub fn multi_task_loss(
    preds: &[TaskPrediction],
    sample: &SequenceSample,
    corners: &PointSet,
) -> Result<f64, ObjectiveError> {
    if preds.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    let mut acc = 0.0;
    for pred in preds {
        let gt = sample
            .gt_pairs
            .get(&pred.pair)
            .ok_or(ObjectiveError::MissingGroundTruth { pair: pred.pair })?;
        let mat = params_to_matrix(&pred.params)?;
        acc += point_mse(gt, &mat, corners);
    }
    Ok(acc / preds.len() as f64)
}

/// Loss value plus the gradient with respect to each task's six parameters,
/// in the order of `preds`.
pub fn multi_task_loss_and_grad(
    preds: &[TaskPrediction],
    sample: &SequenceSample,
    corners: &PointSet,
) -> Result<(f64, Vec<[f64; 6]>), ObjectiveError> {
    if preds.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    let k = preds.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for pred in preds {
        let gt = sample
            .gt_pairs
            .get(&pred.pair)
            .ok_or(ObjectiveError::MissingGroundTruth { pair: pred.pair })?;
        if !pred.params.is_finite() {
            return Err(ObjectiveError::Geometry(GeometryError::NonFinite));
        }
        let (v, mut g) = point_mse_with_grad(gt, &pred.params, corners);
        value += v / k;
        for gi in &mut g {
            *gi /= k;
        }
        grads.push(g);
    }
    Ok((value, grads))
}

/// Rescale a realised-count loss to the `M(M-1)/2` universe convention.
pub fn universe_normalised(loss: f64, realised: usize, m: u32) -> f64 {
    loss * realised as f64 / crate::sampling::universe_size(m) as f64
}
