//! Shared fixtures for integration tests: synthetic voxel clouds shaped
//! like the objects this codec targets.
#![allow(dead_code)] // each test binary uses its own subset

use voxcodec::pointcloud::VoxelizedCloud;

/// Spherical shell: voxels whose center distance lies in [r_lo, r_hi).
pub fn sphere_shell(bits: u8, center: [f64; 3], r_lo: f64, r_hi: f64) -> VoxelizedCloud {
    let side = 1i64 << bits;
    let mut pts = Vec::new();
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let d = dist([x, y, z], center);
                if d >= r_lo && d < r_hi {
                    pts.push([x as u32, y as u32, z as u32]);
                }
            }
        }
    }
    VoxelizedCloud::new(bits, pts, None).unwrap()
}

fn dist(p: [i64; 3], c: [f64; 3]) -> f64 {
    let dx = p[0] as f64 - c[0];
    let dy = p[1] as f64 - c[1];
    let dz = p[2] as f64 - c[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Shell with a two-tone paint job split by the equator.
pub fn two_tone_shell(
    bits: u8,
    center: [f64; 3],
    r_lo: f64,
    r_hi: f64,
    top: [u8; 3],
    bottom: [u8; 3],
) -> VoxelizedCloud {
    let shell = sphere_shell(bits, center, r_lo, r_hi);
    let colors: Vec<[u8; 3]> = shell
        .points()
        .iter()
        .map(|p| if (p[2] as f64) >= center[2] { top } else { bottom })
        .collect();
    VoxelizedCloud::new(bits, shell.points().to_vec(), Some(colors)).unwrap()
}

/// Axis-aligned ellipsoid shell (|d|^2 normalized in [lo, hi)).
fn ellipsoid_shell(
    pts: &mut Vec<[u32; 3]>,
    bits: u8,
    center: [f64; 3],
    radii: [f64; 3],
    thickness: f64,
) {
    let side = 1i64 << bits;
    let lo = [
        ((center[0] - radii[0] - 1.0).max(0.0)) as i64,
        ((center[1] - radii[1] - 1.0).max(0.0)) as i64,
        ((center[2] - radii[2] - 1.0).max(0.0)) as i64,
    ];
    let hi = [
        ((center[0] + radii[0] + 1.0).min((side - 1) as f64)) as i64,
        ((center[1] + radii[1] + 1.0).min((side - 1) as f64)) as i64,
        ((center[2] + radii[2] + 1.0).min((side - 1) as f64)) as i64,
    ];
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                let n = ((x as f64 - center[0]) / radii[0]).powi(2)
                    + ((y as f64 - center[1]) / radii[1]).powi(2)
                    + ((z as f64 - center[2]) / radii[2]).powi(2);
                // keep a thin band around the unit level set
                let r = n.sqrt();
                if (r - 1.0).abs() * radii.iter().copied().fold(f64::MAX, f64::min) < thickness {
                    pts.push([x as u32, y as u32, z as u32]);
                }
            }
        }
    }
}

/// Synthetic standing-figure surface on the 2^bits grid: head, torso, two
/// arms, two legs, all as thin shells. Around 20K voxels at bits = 7.
pub fn figure_cloud(bits: u8) -> VoxelizedCloud {
    assert!(bits >= 7);
    let s = (1u32 << bits) as f64 / 128.0; // proportions tuned at 128^3
    let mut pts = Vec::new();
    let cx = 64.0 * s;
    let cy = 64.0 * s;
    // head
    ellipsoid_shell(
        &mut pts,
        bits,
        [cx, cy, 108.0 * s],
        [10.0 * s, 10.0 * s, 11.0 * s],
        0.9,
    );
    // torso
    ellipsoid_shell(
        &mut pts,
        bits,
        [cx, cy, 74.0 * s],
        [17.0 * s, 11.0 * s, 26.0 * s],
        0.9,
    );
    // arms
    for side in [-1.0, 1.0] {
        ellipsoid_shell(
            &mut pts,
            bits,
            [cx + side * 22.0 * s, cy, 72.0 * s],
            [5.0 * s, 5.0 * s, 24.0 * s],
            0.9,
        );
    }
    // legs
    for side in [-1.0, 1.0] {
        ellipsoid_shell(
            &mut pts,
            bits,
            [cx + side * 9.0 * s, cy, 26.0 * s],
            [6.5 * s, 6.5 * s, 26.0 * s],
            0.9,
        );
    }
    VoxelizedCloud::new(bits, pts, None).unwrap()
}

/// Deterministic color for a voxel, varying smoothly over space.
pub fn paint(cloud: &VoxelizedCloud) -> VoxelizedCloud {
    let bits = cloud.resolution_bits();
    let max = ((1u32 << bits) - 1) as f64;
    let colors: Vec<[u8; 3]> = cloud
        .points()
        .iter()
        .map(|p| {
            [
                (255.0 * p[0] as f64 / max) as u8,
                (255.0 * p[1] as f64 / max) as u8,
                (128.0 + 100.0 * (p[2] as f64 / max - 0.5)) as u8,
            ]
        })
        .collect();
    VoxelizedCloud::new(bits, cloud.points().to_vec(), Some(colors)).unwrap()
}
