//! Diagnostic: dump pose-distance vs image-difference pairs for one
//! synthetic scan to see where the rank correlation breaks.

use usrecon_core::dataio::{Arm, ImageGeom, Orientation, Protocol};
use usrecon_core::geometry::{corner_points, relative_gt};
use usrecon_core::reconstruct::frame_error;
use usrecon_core::synthdata::{
    generate_scan, image_pose_spearman, synthetic_calib, Phantom, PhantomSpec, SpeedProfile,
    TrajectorySpec,
};

fn env_or<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let speckle: f64 = env_or("SPECKLE", 0.3);
    let seed: u64 = env_or("SEED", 31);
    let g = ImageGeom { width: 32, height: 32, spacing_mm: 1.5 };
    let mut spec = PhantomSpec::covering(160.0, &g, seed ^ 0xfeed);
    spec.speckle = speckle;
    let phantom = Phantom::generate(&spec).unwrap();
    let shape = match std::env::var("SHAPE").as_deref() {
        Ok("c") => Protocol::CShape,
        Ok("s") => Protocol::SShape,
        _ => Protocol::Straight,
    };
    let orientation = match std::env::var("ORIENT").as_deref() {
        Ok("par") => Orientation::Parallel,
        _ => Orientation::Perpendicular,
    };
    let traj = TrajectorySpec {
        shape,
        length_mm: 140.0,
        n_frames: 60,
        orientation,
        speed: SpeedProfile::Ramp { v0: 0.8, v1: 1.3 },
        turn_deg: if shape == Protocol::Straight { 0.0 } else { 70.0 },
    };
    let scan = generate_scan(
        "probe", &traj, &phantom, &g, &synthetic_calib(), "sub000", Arm::Left, 20.0, seed,
    )
    .unwrap();

    let images: Vec<ndarray::Array2<f64>> = scan.frames.iter().map(|f| f.to_normalized()).collect();
    let corners = corner_points(g.width, g.height, g.spacing_mm).unwrap();
    let mut rows = Vec::new();
    let n = scan.len() as usize;
    for i in (0..n).step_by(3) {
        for j in ((i + 1)..n).step_by(3) {
            let rel = relative_gt(&scan.world_poses[i], &scan.world_poses[j], &scan.calib);
            let same = relative_gt(&scan.world_poses[j], &scan.world_poses[j], &scan.calib);
            let pd = frame_error(&same, &rel, &corners);
            let mad = (&images[i] - &images[j]).mapv(f64::abs).mean().unwrap();
            rows.push((pd, mad));
        }
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for chunk in rows.chunks(rows.len() / 20) {
        let pd: f64 = chunk.iter().map(|r| r.0).sum::<f64>() / chunk.len() as f64;
        let mad: f64 = chunk.iter().map(|r| r.1).sum::<f64>() / chunk.len() as f64;
        println!("dist {pd:7.2} mm -> MAD {mad:.4}");
    }
    println!("spearman = {:.3}", image_pose_spearman(&scan, 600));
    // Band-limited rank correlations to localise violations.
    for (lo, hi) in [(0.0, 20.0), (20.0, 60.0), (60.0, 1e9), (0.0, 60.0), (20.0, 1e9)] {
        let sub: Vec<(f64, f64)> = rows.iter().filter(|r| r.0 >= lo && r.0 < hi).copied().collect();
        if sub.len() < 10 { continue; }
        let a: Vec<f64> = sub.iter().map(|r| r.0).collect();
        let b: Vec<f64> = sub.iter().map(|r| r.1).collect();
        println!("  band {lo:6.0}-{hi:6.0}: n={:4} rho={:.3}", sub.len(), usrecon_core::synthdata::spearman(&a, &b));
    }
}
