//! On-disk scan container, loader/validator and split bookkeeping.
//!
//! A scan is stored as one directory:
//!
//! ```text
//! <scan>/
//!   manifest.json     meta, calib (16 row-major numbers), frame count,
//!                     image size, spacing, optional timestamps
//!   poses.csv         frame_index,t00,...,t23 (first three rows of the
//!                     4x4 tool-to-world pose, row-major; last row implied)
//!   frames/000001.png 8-bit grayscale, one file per frame
//! ```
//!
//! The layout is deliberately inspectable and language-neutral. Loading is
//! strict: pose rows are validated as SE(3) at tracker-noise tolerance and
//! renormalised via polar decomposition when slightly off; rows whose
//! rotation block deviates by more than 1e-3 fail the load.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orthonormality_deviation, orthonormalize, GeometryError, RigidTransform};

/// Pose rows with a rotation-block deviation above this are renormalised.
pub const POSE_NOISE_TOL: f64 = 1e-9;
/// Pose rows with a rotation-block deviation above this fail the load.
pub const POSE_REJECT_TOL: f64 = 1e-3;

/// Scan lengths outside this range are warned about, never rejected.
pub const EXPECTED_LENGTH_RANGE: (u32, u32) = (36, 430);

pub const MANIFEST_FILE: &str = "manifest.json";
pub const POSES_FILE: &str = "poses.csv";
pub const FRAMES_DIR: &str = "frames";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Error, Debug)]
pub enum DataError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("manifest declares {expected} frames but poses.csv has {found} rows: row {row} missing or extra")]
    PoseCountMismatch { expected: u32, found: u32, row: u32 },
    #[error("pose row {row}: rotation block deviates by {deviation:.3e} (limit {POSE_REJECT_TOL:.0e})")]
    PoseRow { row: u32, deviation: f64 },
    #[error("pose row {row}: {message}")]
    PoseParse { row: u32, message: String },
    #[error("frame {index}: image is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    FrameSizeMismatch {
        index: u32,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("timestamps list has {found} entries, expected {expected}")]
    TimestampCount { expected: u32, found: u32 },
    #[error("need at least {required} scans to split, got {found}")]
    InsufficientScans { found: usize, required: usize },
    #[error("split ratio parts must all be positive, got {0:?}")]
    BadRatio([u32; 3]),
    #[error("invalid scan: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Which arm a scan was acquired on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Left,
    Right,
}

/// Scanning trajectory protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Straight,
    CShape,
    SShape,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Straight, Protocol::CShape, Protocol::SShape];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Straight => write!(f, "straight"),
            Protocol::CShape => write!(f, "c_shape"),
            Protocol::SShape => write!(f, "s_shape"),
        }
    }
}

/// Probe orientation relative to the travel direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Perpendicular,
    Parallel,
}

impl Orientation {
    pub const ALL: [Orientation; 2] = [Orientation::Perpendicular, Orientation::Parallel];
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::Perpendicular => write!(f, "perpendicular"),
            Orientation::Parallel => write!(f, "parallel"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub subject_id: String,
    pub arm: Arm,
    pub protocol: Protocol,
    pub orientation: Orientation,
    pub fps: f64,
    pub pixel_spacing: f64,
}

/// One 2D ultrasound frame. Indices are 1-based and contiguous within a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub image: GrayImage,
    pub timestamp_s: Option<f64>,
}

impl Frame {
    /// Pixels normalised to [0, 1], shape (H, W).
    pub fn to_normalized(&self) -> Array2<f64> {
        let (w, h) = self.image.dimensions();
        Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            self.image.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
        })
    }
}

/// Image lattice geometry shared by every frame of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGeom {
    pub width: u32,
    pub height: u32,
    pub spacing_mm: f64,
}

/// An ordered sequence of frames with tool-to-world poses and calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub id: String,
    pub frames: Vec<Frame>,
    pub world_poses: Vec<RigidTransform>,
    pub calib: RigidTransform,
    pub meta: ScanMeta,
}

impl Scan {
    pub fn new(
        id: String,
        frames: Vec<Frame>,
        world_poses: Vec<RigidTransform>,
        calib: RigidTransform,
        meta: ScanMeta,
    ) -> Result<Self, DataError> {
        let scan = Self { id, frames, world_poses, calib, meta };
        scan.validate()?;
        Ok(scan)
    }

    pub fn len(&self) -> u32 {
        self.frames.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn geom(&self) -> ImageGeom {
        let (w, h) = self
            .frames
            .first()
            .map(|f| f.image.dimensions())
            .unwrap_or((0, 0));
        ImageGeom { width: w, height: h, spacing_mm: self.meta.pixel_spacing }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.frames.is_empty() {
            return Err(DataError::Invalid("scan has no frames".into()));
        }
        if self.world_poses.len() != self.frames.len() {
            return Err(DataError::PoseCountMismatch {
                expected: self.frames.len() as u32,
                found: self.world_poses.len() as u32,
                row: (self.world_poses.len().min(self.frames.len()) + 1) as u32,
            });
        }
        let (w, h) = self.frames[0].image.dimensions();
        for (k, frame) in self.frames.iter().enumerate() {
            if frame.index != (k + 1) as u32 {
                return Err(DataError::Invalid(format!(
                    "frame indices must be contiguous from 1; position {} holds index {}",
                    k + 1,
                    frame.index
                )));
            }
            let (fw, fh) = frame.image.dimensions();
            if (fw, fh) != (w, h) {
                return Err(DataError::FrameSizeMismatch {
                    index: frame.index,
                    expected_w: w,
                    expected_h: h,
                    found_w: fw,
                    found_h: fh,
                });
            }
        }
        if !(self.meta.fps > 0.0) {
            return Err(DataError::Invalid(format!("fps must be positive, got {}", self.meta.fps)));
        }
        if !(self.meta.pixel_spacing > 0.0) {
            return Err(DataError::Invalid(format!(
                "pixel_spacing must be positive, got {}",
                self.meta.pixel_spacing
            )));
        }
        Ok(())
    }

    /// Length outside the expected acquisition range is worth a warning but
    /// never an error: synthetic scans may be any length.
    pub fn length_warning(&self) -> Option<String> {
        let l = self.len();
        let (lo, hi) = EXPECTED_LENGTH_RANGE;
        if l < lo || l > hi {
            Some(format!(
                "scan {} has {} frames, outside the expected range [{lo},{hi}]",
                self.id, l
            ))
        } else {
            None
        }
    }
}

/// Correction applied to one pose row during load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCorrection {
    pub row: u32,
    /// Frobenius distance between the raw and renormalised rotation blocks.
    pub magnitude: f64,
}

/// What the loader had to do to produce a valid [`Scan`].
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub pose_corrections: Vec<PoseCorrection>,
    pub length_warning: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestJson {
    format_version: u32,
    id: String,
    meta: ScanMeta,
    calib: Vec<f64>,
    frame_count: u32,
    image_width: u32,
    image_height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamps_s: Option<Vec<f64>>,
}

const FORMAT_VERSION: u32 = 1;

fn frame_file(dir: &Path, index: u32) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{index:06}.png"))
}

/// Write a scan into `dir` (created if missing). Byte-faithful: loading the
/// directory back yields an equal scan.
pub fn save_scan(scan: &Scan, dir: &Path) -> Result<(), DataError> {
    scan.validate()?;
    fs::create_dir_all(dir.join(FRAMES_DIR)).map_err(io_err(dir))?;

    let timestamps: Option<Vec<f64>> = if scan.frames.iter().all(|f| f.timestamp_s.is_some()) {
        Some(scan.frames.iter().map(|f| f.timestamp_s.unwrap()).collect())
    } else {
        None
    };
    let (w, h) = scan.frames[0].image.dimensions();
    let manifest = ManifestJson {
        format_version: FORMAT_VERSION,
        id: scan.id.clone(),
        meta: scan.meta.clone(),
        calib: scan.calib.to_flat16().to_vec(),
        frame_count: scan.len(),
        image_width: w,
        image_height: h,
        timestamps_s: timestamps,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;

    let poses_path = dir.join(POSES_FILE);
    let mut wtr = csv::Writer::from_path(&poses_path).map_err(|e| DataError::Io {
        path: poses_path.clone(),
        source: std::io::Error::other(e),
    })?;
    let mut header = vec!["frame_index".to_string()];
    for i in 0..3 {
        for j in 0..4 {
            header.push(format!("t{i}{j}"));
        }
    }
    wtr.write_record(&header).map_err(|e| DataError::Io {
        path: poses_path.clone(),
        source: std::io::Error::other(e),
    })?;
    for (k, pose) in scan.world_poses.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(pose.to_rows12().iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(|e| DataError::Io {
            path: poses_path.clone(),
            source: std::io::Error::other(e),
        })?;
    }
    wtr.flush().map_err(io_err(&poses_path))?;

    for frame in &scan.frames {
        let path = frame_file(dir, frame.index);
        frame.image.save(&path).map_err(|e| DataError::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

/// Load a scan directory. See [`load_scan_with_report`] for the corrections
/// the loader may apply.
pub fn load_scan(dir: &Path) -> Result<Scan, DataError> {
    load_scan_with_report(dir).map(|(scan, _)| scan)
}

pub fn load_scan_with_report(dir: &Path) -> Result<(Scan, LoadReport), DataError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: ManifestJson = serde_json::from_str(&raw).map_err(|e| DataError::Json {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.calib.len() != 16 {
        return Err(DataError::Json {
            path: manifest_path.clone(),
            message: format!("calib must have 16 entries, found {}", manifest.calib.len()),
        });
    }
    let mut calib16 = [0.0; 16];
    calib16.copy_from_slice(&manifest.calib);
    let calib = RigidTransform::from_flat16(calib16)?;

    if let Some(ts) = &manifest.timestamps_s {
        if ts.len() != manifest.frame_count as usize {
            return Err(DataError::TimestampCount {
                expected: manifest.frame_count,
                found: ts.len() as u32,
            });
        }
    }

    let (world_poses, corrections) = load_poses(&dir.join(POSES_FILE), manifest.frame_count)?;

    let mut frames = Vec::with_capacity(manifest.frame_count as usize);
    for index in 1..=manifest.frame_count {
        let path = frame_file(dir, index);
        let img = image::open(&path)
            .map_err(|e| DataError::Image { path: path.clone(), message: e.to_string() })?
            .into_luma8();
        let (fw, fh) = img.dimensions();
        if (fw, fh) != (manifest.image_width, manifest.image_height) {
            return Err(DataError::FrameSizeMismatch {
                index,
                expected_w: manifest.image_width,
                expected_h: manifest.image_height,
                found_w: fw,
                found_h: fh,
            });
        }
        let timestamp_s = manifest
            .timestamps_s
            .as_ref()
            .map(|ts| ts[(index - 1) as usize]);
        frames.push(Frame { index, image: img, timestamp_s });
    }

    let scan = Scan::new(manifest.id, frames, world_poses, calib, manifest.meta)?;
    let report = LoadReport {
        pose_corrections: corrections,
        length_warning: scan.length_warning(),
    };
    if let Some(w) = &report.length_warning {
        log::warn!("{w}");
    }
    for c in &report.pose_corrections {
        log::debug!(
            "scan {}: pose row {} renormalised (correction {:.3e})",
            scan.id,
            c.row,
            c.magnitude
        );
    }
    Ok((scan, report))
}

fn load_poses(
    path: &Path,
    expected: u32,
) -> Result<(Vec<RigidTransform>, Vec<PoseCorrection>), DataError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    let mut poses = Vec::new();
    let mut corrections = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = (k + 1) as u32;
        let record = record.map_err(|e| DataError::PoseParse { row, message: e.to_string() })?;
        if record.len() != 13 {
            return Err(DataError::PoseParse {
                row,
                message: format!("expected 13 fields, found {}", record.len()),
            });
        }
        let declared: u32 = record[0]
            .parse()
            .map_err(|e| DataError::PoseParse { row, message: format!("frame_index: {e}") })?;
        if declared != row {
            return Err(DataError::PoseParse {
                row,
                message: format!("frame_index {declared} out of order"),
            });
        }
        let mut rows12 = [0.0; 12];
        for (i, slot) in rows12.iter_mut().enumerate() {
            *slot = record[i + 1].parse().map_err(|e| DataError::PoseParse {
                row,
                message: format!("field {}: {e}", i + 1),
            })?;
        }
        poses.push(parse_pose_row(rows12, row, &mut corrections)?);
    }
    if poses.len() != expected as usize {
        let found = poses.len() as u32;
        return Err(DataError::PoseCountMismatch {
            expected,
            found,
            row: found.min(expected) + 1,
        });
    }
    Ok((poses, corrections))
}

fn parse_pose_row(
    rows12: [f64; 12],
    row: u32,
    corrections: &mut Vec<PoseCorrection>,
) -> Result<RigidTransform, DataError> {
    if rows12.iter().any(|v| !v.is_finite()) {
        return Err(DataError::PoseParse { row, message: "non-finite entry".into() });
    }
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = rows12[i * 4 + j];
        }
    }
    let t = [rows12[3], rows12[7], rows12[11]];
    let dev = orthonormality_deviation(&r);
    if dev > POSE_REJECT_TOL {
        return Err(DataError::PoseRow { row, deviation: dev });
    }
    if dev > POSE_NOISE_TOL {
        let (fixed, magnitude) =
            orthonormalize(&r).ok_or(DataError::PoseRow { row, deviation: dev })?;
        corrections.push(PoseCorrection { row, magnitude });
        return RigidTransform::from_parts(fixed, t).map_err(DataError::from);
    }
    RigidTransform::from_parts(r, t).map_err(DataError::from)
}

/// Scan-level train/val/test assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratio: [u32; 3],
    pub seed: u64,
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("split serialises");
        fs::write(path, json).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&raw)
            .map_err(|e| DataError::Json { path: path.to_path_buf(), message: e.to_string() })
    }

    /// The three lists must be disjoint and cover `all_ids` exactly.
    pub fn validate(&self, all_ids: &[String]) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.clone()) {
                return Err(DataError::Invalid(format!("scan {id} assigned twice")));
            }
        }
        let expected: BTreeSet<String> = all_ids.iter().cloned().collect();
        if seen != expected {
            return Err(DataError::Invalid(
                "split does not cover the dataset exactly".into(),
            ));
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Deterministic scan-level split with largest-remainder apportionment.
pub fn make_split(
    scan_ids: &[String],
    ratio: [u32; 3],
    seed: u64,
) -> Result<SplitManifest, DataError> {
    if scan_ids.len() < 5 {
        return Err(DataError::InsufficientScans { found: scan_ids.len(), required: 5 });
    }
    if ratio.iter().any(|&r| r == 0) {
        return Err(DataError::BadRatio(ratio));
    }
    let mut ids: Vec<String> = scan_ids.to_vec();
    ids.sort();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let total: u32 = ratio.iter().sum();
    let mut counts = [0usize; 3];
    let mut fracs = [0.0f64; 3];
    let mut assigned = 0usize;
    for k in 0..3 {
        let quota = n as f64 * ratio[k] as f64 / total as f64;
        counts[k] = quota.floor() as usize;
        fracs[k] = quota - quota.floor();
        assigned += counts[k];
    }
    // Hand out the remainder largest-fraction first; ties go to the earlier
    // split (train, val, test order).
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
    let mut leftover = n - assigned;
    for &k in &order {
        if leftover == 0 {
            break;
        }
        counts[k] += 1;
        leftover -= 1;
    }

    let mut iter = ids.into_iter();
    let mut take = |count: usize| -> Vec<String> {
        let mut v: Vec<String> = iter.by_ref().take(count).collect();
        v.sort();
        v
    };
    let train = take(counts[0]);
    let val = take(counts[1]);
    let test = take(counts[2]);
    Ok(SplitManifest { train, val, test, ratio, seed })
}

/// All scan directories (containing a manifest) directly under `data_root`,
/// sorted by directory name.
pub fn list_scan_dirs(data_root: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(data_root).map_err(io_err(data_root))? {
        let entry = entry.map_err(io_err(data_root))?;
        let path = entry.path();
        if path.is_dir() && path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Load every scan under `data_root` whose id is in `ids`.
pub fn load_scans_by_id(data_root: &Path, ids: &[String]) -> Result<Vec<Scan>, DataError> {
    let mut scans = Vec::with_capacity(ids.len());
    for id in ids {
        scans.push(load_scan(&data_root.join(id))?);
    }
    Ok(scans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compose;

    fn toy_meta() -> ScanMeta {
        ScanMeta {
            subject_id: "sub001".into(),
            arm: Arm::Left,
            protocol: Protocol::Straight,
            orientation: Orientation::Perpendicular,
            fps: 20.0,
            pixel_spacing: 0.5,
        }
    }

    fn toy_scan(n: u32) -> Scan {
        let frames = (1..=n)
            .map(|index| Frame {
                index,
                image: GrayImage::from_fn(8, 6, |x, y| {
                    image::Luma([((x * 7 + y * 13 + index * 31) % 256) as u8])
                }),
                timestamp_s: Some((index - 1) as f64 / 20.0),
            })
            .collect();
        let world_poses = (0..n)
            .map(|k| {
                compose(
                    &RigidTransform::translation(k as f64 * 1.5, 0.2 * k as f64, 0.0),
                    &RigidTransform::rot_z(0.01 * k as f64),
                )
            })
            .collect();
        let calib = compose(
            &RigidTransform::rot_x(0.1),
            &RigidTransform::translation(1.0, -2.0, 3.0),
        );
        Scan::new("scan_a".into(), frames, world_poses, calib, toy_meta()).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let scan = toy_scan(3);
        save_scan(&scan, dir.path()).unwrap();
        let (loaded, report) = load_scan_with_report(dir.path()).unwrap();
        assert_eq!(scan, loaded);
        assert!(report.pose_corrections.is_empty());
        assert!(report.length_warning.is_some()); // 3 frames is outside [36,430]
    }

    #[test]
    fn pose_count_mismatch_names_missing_row() {
        let dir = tempfile::tempdir().unwrap();
        let scan = toy_scan(5);
        save_scan(&scan, dir.path()).unwrap();
        // Drop the last pose row: manifest says 5, file has 4.
        let poses = dir.path().join(POSES_FILE);
        let text = fs::read_to_string(&poses).unwrap();
        let truncated: Vec<&str> = text.lines().take(5).collect(); // header + 4 rows
        fs::write(&poses, truncated.join("\n") + "\n").unwrap();
        match load_scan(dir.path()) {
            Err(DataError::PoseCountMismatch { expected: 5, found: 4, row: 5 }) => {}
            other => panic!("expected PoseCountMismatch naming row 5, got {other:?}"),
        }
    }

    #[test]
    fn noisy_pose_is_renormalised_and_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let scan = toy_scan(3);
        save_scan(&scan, dir.path()).unwrap();
        let poses = dir.path().join(POSES_FILE);
        let text = fs::read_to_string(&poses).unwrap();
        let mut lines: Vec<String> = text.lines().map(|s| s.to_string()).collect();
        // Perturb one rotation entry of row 2 by 1e-5: inside the noise band.
        let fields: Vec<String> = lines[2].split(',').map(|s| s.to_string()).collect();
        let mut vals: Vec<f64> = fields[1..].iter().map(|s| s.parse().unwrap()).collect();
        vals[0] += 1e-5;
        lines[2] = std::iter::once(fields[0].clone())
            .chain(vals.iter().map(|v| v.to_string()))
            .collect::<Vec<_>>()
            .join(",");
        fs::write(&poses, lines.join("\n") + "\n").unwrap();
        let (_, report) = load_scan_with_report(dir.path()).unwrap();
        assert_eq!(report.pose_corrections.len(), 1);
        assert_eq!(report.pose_corrections[0].row, 2);
        assert!(report.pose_corrections[0].magnitude > 0.0);
    }

    #[test]
    fn badly_corrupt_pose_fails_load() {
        let dir = tempfile::tempdir().unwrap();
        let scan = toy_scan(3);
        save_scan(&scan, dir.path()).unwrap();
        let poses = dir.path().join(POSES_FILE);
        let text = fs::read_to_string(&poses).unwrap();
        let mut lines: Vec<String> = text.lines().map(|s| s.to_string()).collect();
        let fields: Vec<String> = lines[3].split(',').map(|s| s.to_string()).collect();
        let mut vals: Vec<f64> = fields[1..].iter().map(|s| s.parse().unwrap()).collect();
        vals[0] += 0.05; // way past the reject threshold
        lines[3] = std::iter::once(fields[0].clone())
            .chain(vals.iter().map(|v| v.to_string()))
            .collect::<Vec<_>>()
            .join(",");
        fs::write(&poses, lines.join("\n") + "\n").unwrap();
        match load_scan(dir.path()) {
            Err(DataError::PoseRow { row: 3, .. }) => {}
            other => panic!("expected PoseRow error on row 3, got {other:?}"),
        }
    }

    #[test]
    fn split_five_scans_3_1_1() {
        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let split = make_split(&ids, [3, 1, 1], 42).unwrap();
        assert_eq!(split.sizes(), (3, 1, 1));
        split.validate(&ids).unwrap();
    }

    #[test]
    fn split_228_scans_largest_first() {
        let ids: Vec<String> = (0..228).map(|i| format!("s{i:03}")).collect();
        let split = make_split(&ids, [3, 1, 1], 7).unwrap();
        assert_eq!(split.sizes(), (137, 46, 45));
        split.validate(&ids).unwrap();
    }

    #[test]
    fn split_is_deterministic() {
        let ids: Vec<String> = (0..23).map(|i| format!("s{i}")).collect();
        let a = make_split(&ids, [3, 1, 1], 99).unwrap();
        let b = make_split(&ids, [3, 1, 1], 99).unwrap();
        assert_eq!(a, b);
        // Input order must not matter.
        let mut rev = ids.clone();
        rev.reverse();
        let c = make_split(&rev, [3, 1, 1], 99).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn split_rejects_too_few() {
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        assert!(matches!(
            make_split(&ids, [3, 1, 1], 0),
            Err(DataError::InsufficientScans { found: 4, .. })
        ));
    }
}
