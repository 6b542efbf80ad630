//! SE(3) rigid-transform algebra.
//!
//! Every pose, calibration and prediction in the pipeline is an element of
//! SE(3), stored as a 4x4 homogeneous matrix with an orthonormal rotation
//! block and translation in millimetres. Construction validates the group
//! invariants, so a [`RigidTransform`] value is always a valid group element.
//!
//! Conventions used throughout the crate:
//!
//! * the 6-parameter view is intrinsic Z-Y-X Euler angles (radians) followed
//!   by translation (mm): `R = Rz(rz) * Ry(ry) * Rx(rx)`;
//! * image points live on the plane `z = 0`, `x` along the width, `y` along
//!   the height, both in mm (pixel index times spacing);
//! * all angles are radians, all lengths are millimetres.

use thiserror::Error;

/// Tolerance for the SE(3) validity checks.
pub const SE3_TOL: f64 = 1e-9;

/// Default pixel spacing: 9 cm imaging depth over 480 rows.
pub const DEFAULT_PIXEL_SPACING_MM: f64 = 0.1875;

#[derive(Error, Debug)]
pub enum GeometryError {
    #[error("rotation block not orthonormal: ||R*R^T - I||_F = {dev:.3e}")]
    NotOrthonormal { dev: f64 },
    #[error("rotation determinant is {det:.6}, expected +1")]
    BadDeterminant { det: f64 },
    #[error("last row must be [0,0,0,1], found {row:?}")]
    BadLastRow { row: [f64; 4] },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("image dimensions must be at least 2x2, got {width}x{height}")]
    BadImageSize { width: u32, height: u32 },
    #[error("pixel spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("point set must contain at least one point")]
    EmptyPointSet,
}

/// An element of SE(3): a 4x4 homogeneous matrix whose rotation block is
/// orthonormal with determinant +1 and whose last row is exactly [0,0,0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    m: [[f64; 4]; 4],
}

/// Euler-angle + translation view of a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformParams {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

/// Result of extracting Euler parameters from a matrix. `gimbal_locked` is
/// set when |ry| = pi/2 and the `rx := 0` branch was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamExtraction {
    pub params: TransformParams,
    pub gimbal_locked: bool,
}

/// An ordered, non-empty set of 3D points (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<[f64; 3]>,
}

impl TransformParams {
    pub fn zero() -> Self {
        Self { rx: 0.0, ry: 0.0, rz: 0.0, tx: 0.0, ty: 0.0, tz: 0.0 }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { rx: a[0], ry: a[1], rz: a[2], tx: a[3], ty: a[4], tz: a[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.rx, self.ry, self.rz, self.tx, self.ty, self.tz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat3_transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn mat3_det(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn mat3_inv(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = mat3_det(a);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv_det;
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_det;
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_det;
    out[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv_det;
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_det;
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_det;
    out[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv_det;
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_det;
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_det;
    Some(out)
}

/// Frobenius norm of `R*R^T - I`.
pub fn orthonormality_deviation(r: &[[f64; 3]; 3]) -> f64 {
    let rrt = mat3_mul(r, &mat3_transpose(r));
    let mut sum = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = rrt[i][j] - target;
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Nearest rotation matrix in the Frobenius sense (polar factor), computed by
/// Newton iteration: `X <- (X + X^-T) / 2`. Returns the corrected rotation
/// and the Frobenius distance between input and output.
pub fn orthonormalize(r: &[[f64; 3]; 3]) -> Option<([[f64; 3]; 3], f64)> {
    let mut x = *r;
    for _ in 0..50 {
        let xinv = mat3_inv(&x)?;
        let xinv_t = mat3_transpose(&xinv);
        let mut next = [[0.0; 3]; 3];
        let mut delta: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = 0.5 * (x[i][j] + xinv_t[i][j]);
                delta = delta.max((next[i][j] - x[i][j]).abs());
            }
        }
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    if mat3_det(&x) < 0.0 {
        return None;
    }
    let mut dist = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = x[i][j] - r[i][j];
            dist += d * d;
        }
    }
    Some((x, dist.sqrt()))
}

impl RigidTransform {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { m }
    }

    /// Validating constructor from a full homogeneous matrix.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self, GeometryError> {
        let t = Self { m };
        t.validate()?;
        Ok(t)
    }

    /// Construct from a rotation block and translation vector.
    pub fn from_parts(r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self, GeometryError> {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j];
            }
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        Self::from_matrix(m)
    }

    pub(crate) fn from_parts_unchecked(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j];
            }
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        Self { m }
    }

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        let mut t = Self::identity();
        t.m[0][3] = tx;
        t.m[1][3] = ty;
        t.m[2][3] = tz;
        t
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts_unchecked([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], [0.0; 3])
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts_unchecked([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], [0.0; 3])
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_parts_unchecked([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.m[i][j];
            }
        }
        r
    }

    pub fn translation_vec(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Check the SE(3) invariants at [`SE3_TOL`].
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let last = self.m[3];
        if (last[0] != 0.0 && last[0].abs() > SE3_TOL)
            || (last[1] != 0.0 && last[1].abs() > SE3_TOL)
            || (last[2] != 0.0 && last[2].abs() > SE3_TOL)
            || (last[3] - 1.0).abs() > SE3_TOL
        {
            return Err(GeometryError::BadLastRow { row: last });
        }
        let r = self.rotation();
        let dev = orthonormality_deviation(&r);
        if dev > SE3_TOL {
            return Err(GeometryError::NotOrthonormal { dev });
        }
        let det = mat3_det(&r);
        if (det - 1.0).abs() > SE3_TOL {
            return Err(GeometryError::BadDeterminant { det });
        }
        Ok(())
    }

    /// First three rows, row-major: the on-disk pose representation.
    pub fn to_rows12(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                out[i * 4 + j] = self.m[i][j];
            }
        }
        out
    }

    pub fn from_rows12(rows: [f64; 12]) -> Result<Self, GeometryError> {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..4 {
                m[i][j] = rows[i * 4 + j];
            }
        }
        m[3][3] = 1.0;
        Self::from_matrix(m)
    }

    pub fn to_flat16(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[i * 4 + j] = self.m[i][j];
            }
        }
        out
    }

    pub fn from_flat16(v: [f64; 16]) -> Result<Self, GeometryError> {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = v[i * 4 + j];
            }
        }
        Self::from_matrix(m)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                max = max.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        max
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    /// Apply to a single point: `R*p + t`.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }
}

/// Group composition `a * b` (apply `b` first, then `a`).
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let (am, bm) = (a.matrix(), b.matrix());
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..4 {
            m[i][j] = am[i][0] * bm[0][j] + am[i][1] * bm[1][j] + am[i][2] * bm[2][j]
                + am[i][3] * bm[3][j];
        }
    }
    m[3] = [0.0, 0.0, 0.0, 1.0];
    RigidTransform { m }
}

/// Group inverse, in closed form: `[R^T, -R^T t]`.
pub fn invert(t: &RigidTransform) -> RigidTransform {
    let r = t.rotation();
    let rt = mat3_transpose(&r);
    let tv = t.translation_vec();
    let neg = [
        -(rt[0][0] * tv[0] + rt[0][1] * tv[1] + rt[0][2] * tv[2]),
        -(rt[1][0] * tv[0] + rt[1][1] * tv[1] + rt[1][2] * tv[2]),
        -(rt[2][0] * tv[0] + rt[2][1] * tv[1] + rt[2][2] * tv[2]),
    ];
    RigidTransform::from_parts_unchecked(rt, neg)
}

/// Rotation matrix for intrinsic Z-Y-X Euler angles: `Rz(rz)*Ry(ry)*Rx(rx)`.
pub fn euler_zyx(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    [
        [cz * cy, -sz * cx + cz * sy * sx, sz * sx + cz * sy * cx],
        [sz * cy, cz * cx + sz * sy * sx, -cz * sx + sz * sy * cx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Partial derivatives of [`euler_zyx`] with respect to `rx`, `ry`, `rz`.
pub fn euler_zyx_derivs(rx: f64, ry: f64, rz: f64) -> [[[f64; 3]; 3]; 3] {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    // d/drx: only the Rx factor varies.
    let d_rx = [
        [0.0, sz * sx + cz * sy * cx, sz * cx - cz * sy * sx],
        [0.0, -cz * sx + sz * sy * cx, -cz * cx - sz * sy * sx],
        [0.0, cy * cx, -cy * sx],
    ];
    let d_ry = [
        [-cz * sy, cz * cy * sx, cz * cy * cx],
        [-sz * sy, sz * cy * sx, sz * cy * cx],
        [-cy, -sy * sx, -sy * cx],
    ];
    let d_rz = [
        [-sz * cy, -cz * cx - sz * sy * sx, cz * sx - sz * sy * cx],
        [cz * cy, -sz * cx + cz * sy * sx, sz * sx + cz * sy * cx],
        [0.0, 0.0, 0.0],
    ];
    [d_rx, d_ry, d_rz]
}

/// Build the matrix view from the 6-parameter view.
pub fn params_to_matrix(p: &TransformParams) -> Result<RigidTransform, GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    Ok(RigidTransform::from_parts_unchecked(
        euler_zyx(p.rx, p.ry, p.rz),
        [p.tx, p.ty, p.tz],
    ))
}

/// Recover the 6-parameter view. Total on all of SE(3): at |ry| = pi/2 the
/// decomposition is degenerate and the `rx := 0` branch is taken, with the
/// remaining rotation folded into `rz` and the extraction flagged.
pub fn matrix_to_params(t: &RigidTransform) -> ParamExtraction {
    let m = t.matrix();
    let [tx, ty, tz] = t.translation_vec();
    let sy = -m[2][0];
    let cy = (m[2][1] * m[2][1] + m[2][2] * m[2][2]).sqrt();
    if cy > 1e-12 {
        let ry = sy.atan2(cy);
        let rx = m[2][1].atan2(m[2][2]);
        let rz = m[1][0].atan2(m[0][0]);
        ParamExtraction {
            params: TransformParams { rx, ry, rz, tx, ty, tz },
            gimbal_locked: false,
        }
    } else if sy > 0.0 {
        // ry = +pi/2: R[0][1] = sin(rx - rz), R[0][2] = cos(rx - rz).
        let rz = -m[0][1].atan2(m[0][2]);
        ParamExtraction {
            params: TransformParams {
                rx: 0.0,
                ry: std::f64::consts::FRAC_PI_2,
                rz,
                tx,
                ty,
                tz,
            },
            gimbal_locked: true,
        }
    } else {
        // ry = -pi/2: R[0][1] = -sin(rx + rz), R[0][2] = -cos(rx + rz).
        let rz = (-m[0][1]).atan2(-m[0][2]);
        ParamExtraction {
            params: TransformParams {
                rx: 0.0,
                ry: -std::f64::consts::FRAC_PI_2,
                rz,
                tx,
                ty,
                tz,
            },
            gimbal_locked: true,
        }
    }
}

/// Relative ground-truth transform between two tracked frames, expressed in
/// the j-th tool coordinate system:
/// `(world_j)^-1 * world_i * calib`, mapping image-i points (mm) into tool-j
/// coordinates. The last row is rebuilt exactly; no other renormalisation.
pub fn relative_gt(
    world_i: &RigidTransform,
    world_j: &RigidTransform,
    calib: &RigidTransform,
) -> RigidTransform {
    compose(&compose(&invert(world_j), world_i), calib)
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyPointSet);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Transform every point: `R*p + t` each.
pub fn transform_points(t: &RigidTransform, pts: &PointSet) -> PointSet {
    PointSet {
        points: pts.points.iter().map(|&p| t.apply(p)).collect(),
    }
}

/// The four image corner points in image-plane mm coordinates (z = 0):
/// `(0,0)`, `((W-1)s, 0)`, `(0, (H-1)s)`, `((W-1)s, (H-1)s)`.
pub fn corner_points(
    width_px: u32,
    height_px: u32,
    spacing_mm: f64,
) -> Result<PointSet, GeometryError> {
    if width_px < 2 || height_px < 2 {
        return Err(GeometryError::BadImageSize { width: width_px, height: height_px });
    }
    if !(spacing_mm > 0.0) || !spacing_mm.is_finite() {
        return Err(GeometryError::BadSpacing(spacing_mm));
    }
    let w = (width_px - 1) as f64 * spacing_mm;
    let h = (height_px - 1) as f64 * spacing_mm;
    PointSet::new(vec![
        [0.0, 0.0, 0.0],
        [w, 0.0, 0.0],
        [0.0, h, 0.0],
        [w, h, 0.0],
    ])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn so3_exp(w: [f64; 3]) -> [[f64; 3]; 3] {
    let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-9 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let wx = [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]];
    let wx2 = mat3_mul(&wx, &wx);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let eye = if i == j { 1.0 } else { 0.0 };
            r[i][j] = eye + a * wx[i][j] + b * wx2[i][j];
        }
    }
    r
}

fn so3_log(r: &[[f64; 3]; 3]) -> [f64; 3] {
    let trace = r[0][0] + r[1][1] + r[2][2];
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-9 {
        // First-order: skew part is theta * axis.
        return [
            0.5 * (r[2][1] - r[1][2]),
            0.5 * (r[0][2] - r[2][0]),
            0.5 * (r[1][0] - r[0][1]),
        ];
    }
    if (std::f64::consts::PI - theta) < 1e-6 {
        // Near pi the skew part vanishes; recover the axis from R + I.
        let xx = (r[0][0] + 1.0) * 0.5;
        let yy = (r[1][1] + 1.0) * 0.5;
        let zz = (r[2][2] + 1.0) * 0.5;
        let mut axis = if xx >= yy && xx >= zz {
            let x = xx.max(0.0).sqrt();
            [x, (r[0][1] + r[1][0]) / (4.0 * x), (r[0][2] + r[2][0]) / (4.0 * x)]
        } else if yy >= zz {
            let y = yy.max(0.0).sqrt();
            [(r[0][1] + r[1][0]) / (4.0 * y), y, (r[1][2] + r[2][1]) / (4.0 * y)]
        } else {
            let z = zz.max(0.0).sqrt();
            [(r[0][2] + r[2][0]) / (4.0 * z), (r[1][2] + r[2][1]) / (4.0 * z), z]
        };
        // Fix the sign using the skew part.
        let skew = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
        let dot = axis[0] * skew[0] + axis[1] * skew[1] + axis[2] * skew[2];
        if dot < 0.0 {
            axis = [-axis[0], -axis[1], -axis[2]];
        }
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        return [
            axis[0] / norm * theta,
            axis[1] / norm * theta,
            axis[2] / norm * theta,
        ];
    }
    let k = theta / (2.0 * theta.sin());
    [
        k * (r[2][1] - r[1][2]),
        k * (r[0][2] - r[2][0]),
        k * (r[1][0] - r[0][1]),
    ]
}

/// SE(3) logarithm: the twist `(v, w)` with `T = exp([w]x, v)`.
fn se3_log(t: &RigidTransform) -> ([f64; 3], [f64; 3]) {
    let r = t.rotation();
    let w = so3_log(&r);
    let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let theta = theta2.sqrt();
    // V^-1 = I - [w]x/2 + c * [w]x^2
    let c = if theta < 1e-6 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        (1.0 - theta * (1.0 + theta.cos()) / (2.0 * theta.sin())) / theta2
    };
    let tv = t.translation_vec();
    let wxt = cross(w, tv);
    let wxwxt = cross(w, wxt);
    let v = [
        tv[0] - 0.5 * wxt[0] + c * wxwxt[0],
        tv[1] - 0.5 * wxt[1] + c * wxwxt[1],
        tv[2] - 0.5 * wxt[2] + c * wxwxt[2],
    ];
    (v, w)
}

fn se3_exp(v: [f64; 3], w: [f64; 3]) -> RigidTransform {
    let r = so3_exp(w);
    let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let theta = theta2.sqrt();
    let (b, c) = if theta < 1e-9 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let wxv = cross(w, v);
    let wxwxv = cross(w, wxv);
    let t = [
        v[0] + b * wxv[0] + c * wxwxv[0],
        v[1] + b * wxv[1] + c * wxwxv[1],
        v[2] + b * wxv[2] + c * wxwxv[2],
    ];
    RigidTransform::from_parts_unchecked(r, t)
}

/// Screw-linear interpolation: `a * exp(t * log(a^-1 * b))`. `t = 0` gives
/// `a`, `t = 1` gives `b`, and intermediate poses follow the constant-twist
/// path between them.
pub fn interpolate(a: &RigidTransform, b: &RigidTransform, t: f64) -> RigidTransform {
    let delta = compose(&invert(a), b);
    let (v, w) = se3_log(&delta);
    let step = se3_exp(
        [v[0] * t, v[1] * t, v[2] * t],
        [w[0] * t, w[1] * t, w[2] * t],
    );
    compose(a, &step)
}

/// Rotation angle (radians) of the relative rotation between two transforms.
pub fn rotation_angle_between(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let d = compose(&invert(a), b);
    let w = so3_log(&d.rotation());
    (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt()
}

/// Rotation-vector (axis * angle) of a transform's rotation block.
pub fn rotation_log(t: &RigidTransform) -> [f64; 3] {
    so3_log(&t.rotation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn identity_is_valid() {
        RigidTransform::identity().validate().unwrap();
    }

    #[test]
    fn compose_identity_is_noop() {
        let t = RigidTransform::translation(1.0, -2.0, 3.5);
        let id = RigidTransform::identity();
        assert_eq!(compose(&id, &t), t);
        assert_eq!(compose(&t, &id), t);
    }

    #[test]
    fn compose_translations_adds() {
        let a = RigidTransform::translation(1.0, 0.0, 0.0);
        let b = RigidTransform::translation(2.0, 0.0, 0.0);
        let c = compose(&a, &b);
        assert!(c.approx_eq(&RigidTransform::translation(3.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn compose_rotations_adds_angle() {
        let c = compose(&RigidTransform::rot_z(FRAC_PI_2), &RigidTransform::rot_z(FRAC_PI_2));
        assert!(c.approx_eq(&RigidTransform::rot_z(PI), 1e-12));
    }

    #[test]
    fn invert_identity() {
        assert_eq!(invert(&RigidTransform::identity()), RigidTransform::identity());
    }

    #[test]
    fn invert_translation() {
        let t = invert(&RigidTransform::translation(5.0, 0.0, 0.0));
        assert!(t.approx_eq(&RigidTransform::translation(-5.0, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn from_matrix_rejects_non_orthonormal() {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 2.0;
        m[1][1] = 1.0;
        m[2][2] = 1.0;
        m[3][3] = 1.0;
        match RigidTransform::from_matrix(m) {
            Err(GeometryError::NotOrthonormal { .. }) => {}
            other => panic!("expected NotOrthonormal, got {other:?}"),
        }
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = -1.0;
        m[1][1] = 1.0;
        m[2][2] = 1.0;
        m[3][3] = 1.0;
        match RigidTransform::from_matrix(m) {
            Err(GeometryError::BadDeterminant { .. }) => {}
            other => panic!("expected BadDeterminant, got {other:?}"),
        }
    }

    #[test]
    fn params_zero_is_identity() {
        let t = params_to_matrix(&TransformParams::zero()).unwrap();
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn params_rz_quarter_turn() {
        let p = TransformParams { rx: 0.0, ry: 0.0, rz: FRAC_PI_2, tx: 0.0, ty: 0.0, tz: 0.0 };
        let t = params_to_matrix(&p).unwrap();
        let m = t.matrix();
        assert!((m[0][1] + 1.0).abs() < 1e-15);
        assert!((m[1][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn params_roundtrip_grid() {
        // 5^3 angle grid in (-1.5, 1.5) rad; fixed translation.
        let vals = [-1.5, -0.75, 0.0, 0.75, 1.5];
        let mut max_err = 0.0f64;
        for &rx in &vals {
            for &ry in &vals {
                for &rz in &vals {
                    let p = TransformParams { rx, ry, rz, tx: 1.0, ty: -2.0, tz: 3.0 };
                    let t = params_to_matrix(&p).unwrap();
                    let back = matrix_to_params(&t);
                    assert!(!back.gimbal_locked);
                    let a = p.to_array();
                    let b = back.params.to_array();
                    for k in 0..6 {
                        max_err = max_err.max((a[k] - b[k]).abs());
                    }
                }
            }
        }
        assert!(max_err < 1e-9, "round-trip error {max_err}");
    }

    #[test]
    fn gimbal_lock_branch_is_flagged_and_consistent() {
        for &ry in &[FRAC_PI_2, -FRAC_PI_2] {
            let p = TransformParams { rx: 0.3, ry, rz: -0.7, tx: 1.0, ty: 2.0, tz: 3.0 };
            let t = params_to_matrix(&p).unwrap();
            let out = matrix_to_params(&t);
            assert!(out.gimbal_locked);
            assert_eq!(out.params.rx, 0.0);
            // The branch must still reproduce the same matrix.
            let rebuilt = params_to_matrix(&out.params).unwrap();
            assert!(rebuilt.approx_eq(&t, 1e-9), "diff {}", rebuilt.max_abs_diff(&t));
        }
    }

    #[test]
    fn relative_gt_equal_poses_gives_calib() {
        let w = compose(&RigidTransform::rot_y(0.4), &RigidTransform::translation(4.0, 5.0, 6.0));
        let calib = compose(&RigidTransform::rot_x(0.2), &RigidTransform::translation(1.0, 0.0, 0.0));
        let rel = relative_gt(&w, &w, &calib);
        assert!(rel.approx_eq(&calib, 1e-12));
    }

    #[test]
    fn relative_gt_identity_calib_pure_translation() {
        let rel = relative_gt(
            &RigidTransform::identity(),
            &RigidTransform::translation(3.0, 0.0, 0.0),
            &RigidTransform::identity(),
        );
        assert!(rel.approx_eq(&RigidTransform::translation(-3.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn transform_points_translation() {
        let pts = PointSet::new(vec![[1.0, 1.0, 1.0]]).unwrap();
        let out = transform_points(&RigidTransform::translation(0.0, 0.0, 2.0), &pts);
        assert_eq!(out.points()[0], [1.0, 1.0, 3.0]);
    }

    #[test]
    fn corner_points_2x2_unit() {
        let pts = corner_points(2, 2, 1.0).unwrap();
        assert_eq!(
            pts.points(),
            &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn corner_points_full_size() {
        let pts = corner_points(640, 480, DEFAULT_PIXEL_SPACING_MM).unwrap();
        let max_x = pts.points().iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        assert!((max_x - 119.8125).abs() < 1e-12);
    }

    #[test]
    fn corner_points_rejects_zero_spacing() {
        assert!(matches!(corner_points(4, 4, 0.0), Err(GeometryError::BadSpacing(_))));
    }

    #[test]
    fn interpolate_endpoints() {
        let a = compose(&RigidTransform::rot_z(0.3), &RigidTransform::translation(1.0, 2.0, 3.0));
        let b = compose(&RigidTransform::rot_x(-0.8), &RigidTransform::translation(-4.0, 0.5, 2.0));
        assert!(interpolate(&a, &b, 0.0).approx_eq(&a, 1e-12));
        assert!(interpolate(&a, &b, 1.0).approx_eq(&b, 1e-10));
    }

    #[test]
    fn interpolate_midpoint_is_screw_consistent() {
        let a = RigidTransform::identity();
        let b = compose(&RigidTransform::rot_z(1.0), &RigidTransform::translation(10.0, 0.0, 0.0));
        let mid = interpolate(&a, &b, 0.5);
        // Two half-steps equal one full step.
        let two = compose(&mid, &compose(&invert(&a), &mid));
        assert!(two.approx_eq(&b, 1e-10));
    }

    #[test]
    fn orthonormalize_fixes_small_noise() {
        let r = RigidTransform::rot_y(0.7).rotation();
        let mut noisy = r;
        noisy[0][0] += 3e-7;
        noisy[1][2] -= 2e-7;
        let (fixed, dist) = orthonormalize(&noisy).unwrap();
        assert!(orthonormality_deviation(&fixed) < 1e-12);
        assert!(dist < 1e-5);
    }
}
