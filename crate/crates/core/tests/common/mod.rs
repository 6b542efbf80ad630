//! Shared builders for integration tests.

use image::GrayImage;
use usrecon_core::dataio::{Arm, Frame, Orientation, Protocol, Scan, ScanMeta};
use usrecon_core::geometry::{compose, params_to_matrix, RigidTransform, TransformParams};

/// A scan with analytic poses (smooth curve in pose space) and tiny
/// procedural images; cheap enough for metric and chaining tests where the
/// image content is irrelevant.
pub fn posed_scan(id: &str, n: u32, hw: u32, spacing: f64, curly: bool) -> Scan {
    let frames = (1..=n)
        .map(|index| Frame {
            index,
            image: GrayImage::from_fn(hw, hw, |x, y| {
                image::Luma([((x * 11 + y * 23 + index * 41) % 256) as u8])
            }),
            timestamp_s: Some((index - 1) as f64 / 20.0),
        })
        .collect();
    let world_poses: Vec<RigidTransform> = (0..n)
        .map(|k| {
            let t = k as f64;
            let p = if curly {
                TransformParams {
                    rx: 0.004 * t,
                    ry: -0.003 * t,
                    rz: 0.006 * t,
                    tx: 1.2 * t,
                    ty: 6.0 * (0.05 * t).sin(),
                    tz: 0.4 * t,
                }
            } else {
                TransformParams { rx: 0.0, ry: 0.0, rz: 0.0, tx: 1.5 * t, ty: 0.0, tz: 0.0 }
            };
            params_to_matrix(&p).unwrap()
        })
        .collect();
    let calib = compose(
        &compose(&RigidTransform::rot_x(0.05), &RigidTransform::rot_z(-0.04)),
        &RigidTransform::translation(2.0, -1.0, 4.0),
    );
    Scan::new(
        id.into(),
        frames,
        world_poses,
        calib,
        ScanMeta {
            subject_id: "sub000".into(),
            arm: Arm::Left,
            protocol: if curly { Protocol::SShape } else { Protocol::Straight },
            orientation: Orientation::Perpendicular,
            fps: 20.0,
            pixel_spacing: spacing,
        },
    )
    .unwrap()
}
