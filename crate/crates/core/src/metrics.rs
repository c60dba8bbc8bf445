//! Quality and rate measurement: point-to-point (D1) and point-to-plane
//! (D2) geometry PSNR, Y/YUV color PSNR, bits per point.

use crate::kdtree::KdTree;
use crate::pointcloud::VoxelizedCloud;
use rayon::prelude::*;
use thiserror::Error;

/// PSNR value with an explicit sentinel for the zero-error case, so
/// infinity never leaks out of a float overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Infinite,
    Db(f64),
}

impl Psnr {
    fn from_error(peak: f64, err: f64) -> Psnr {
        if err <= 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Db(10.0 * (peak / err).log10())
        }
    }

    /// As f64 for comparisons; the sentinel maps to +inf.
    pub fn as_db(&self) -> f64 {
        match self {
            Psnr::Infinite => f64::INFINITY,
            Psnr::Db(v) => *v,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Psnr::Infinite)
    }

    /// dB mean of a set of values; infinite if any member is infinite.
    pub fn mean(values: &[Psnr]) -> Psnr {
        if values.is_empty() {
            return Psnr::Db(f64::NAN);
        }
        if values.iter().any(Psnr::is_infinite) {
            return Psnr::Infinite;
        }
        Psnr::Db(values.iter().map(Psnr::as_db).sum::<f64>() / values.len() as f64)
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Infinite => write!(f, "inf"),
            Psnr::Db(v) => write!(f, "{v:.4}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric input is empty")]
    EmptyInput,
    #[error("cloud has no colors")]
    MissingColors,
    #[error("reference has {0} points, need at least {1} for normal estimation")]
    TooFewPoints(usize, usize),
    #[error("stream is empty or original point count is zero")]
    ZeroCount,
}

fn peak(resolution_bits: u8) -> f64 {
    let m = ((1u64 << resolution_bits) - 1) as f64;
    3.0 * m * m
}

/// Mean squared point-to-point error of `test` relative to `reference`.
pub fn p2point_error(test: &[[u32; 3]], reference: &[[u32; 3]]) -> Result<f64, MetricsError> {
    if test.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let tree = KdTree::new(reference);
    let total: u128 = test
        .par_chunks(4096)
        .map(|chunk| {
            chunk
                .iter()
                .map(|q| tree.nearest(q).0 as u128)
                .sum::<u128>()
        })
        .collect::<Vec<u128>>()
        .into_iter()
        .sum();
    Ok(total as f64 / test.len() as f64)
}

/// Symmetric point-to-point PSNR with peak `3 (2^N - 1)^2`.
pub fn d1_psnr(
    test: &[[u32; 3]],
    reference: &[[u32; 3]],
    resolution_bits: u8,
) -> Result<Psnr, MetricsError> {
    let e = p2point_error(test, reference)?.max(p2point_error(reference, test)?);
    Ok(Psnr::from_error(peak(resolution_bits), e))
}

const NORMAL_NEIGHBORS: usize = 9;

/// Unoriented per-point normals estimated by PCA over each point plus its
/// 9 nearest neighbors. `None` marks degenerate neighborhoods (collinear or
/// coincident) where no plane is defined.
fn estimate_normals(points: &[[u32; 3]], tree: &KdTree) -> Vec<Option<[f64; 3]>> {
    points
        .par_iter()
        .map(|p| {
            let nbrs = tree.k_nearest(p, NORMAL_NEIGHBORS + 1);
            let n = nbrs.len();
            let mut mean = [0.0f64; 3];
            for &(_, idx) in &nbrs {
                for a in 0..3 {
                    mean[a] += points[idx][a] as f64;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let mut cov = [[0.0f64; 3]; 3];
            for &(_, idx) in &nbrs {
                let d = [
                    points[idx][0] as f64 - mean[0],
                    points[idx][1] as f64 - mean[1],
                    points[idx][2] as f64 - mean[2],
                ];
                for r in 0..3 {
                    for c in 0..3 {
                        cov[r][c] += d[r] * d[c];
                    }
                }
            }
            smallest_eigenvector(&cov)
        })
        .collect()
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix, or
/// `None` when the two smallest eigenvalues coincide (no unique normal).
fn smallest_eigenvector(a: &[[f64; 3]; 3]) -> Option<[f64; 3]> {
    let (l0, l1, l2) = symmetric_eigenvalues(a); // l0 >= l1 >= l2
    if l0 <= 0.0 {
        return None; // coincident points
    }
    // collinear (rank <= 1): middle eigenvalue also ~0
    if l1 <= 1e-9 * l0 {
        return None;
    }
    // rows of (A - l2 I); the normal is orthogonal to the row space
    let m = [
        [a[0][0] - l2, a[0][1], a[0][2]],
        [a[1][0], a[1][1] - l2, a[1][2]],
        [a[2][0], a[2][1], a[2][2] - l2],
    ];
    let cross = |u: &[f64; 3], v: &[f64; 3]| {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let candidates = [
        cross(&m[0], &m[1]),
        cross(&m[0], &m[2]),
        cross(&m[1], &m[2]),
    ];
    let norm2 = |v: &[f64; 3]| v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let best = candidates
        .iter()
        .max_by(|x, y| norm2(x).partial_cmp(&norm2(y)).unwrap())
        .unwrap();
    let n2 = norm2(best);
    if n2 <= 1e-18 * l0 * l0 {
        return None;
    }
    let inv = 1.0 / n2.sqrt();
    Some([best[0] * inv, best[1] * inv, best[2] * inv])
}

/// Eigenvalues of a symmetric 3x3 matrix, descending (closed form).
fn symmetric_eigenvalues(a: &[[f64; 3]; 3]) -> (f64, f64, f64) {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(|x, y| y.partial_cmp(x).unwrap());
        return (d[0], d[1], d[2]);
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |r: usize, c: usize| (a[r][c] - if r == c { q } else { 0.0 }) / p;
    let det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
        - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l0 = q + 2.0 * p * phi.cos();
    let l2 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let l1 = 3.0 * q - l0 - l2;
    (l0, l1, l2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D2Result {
    pub psnr: Psnr,
    /// query points that fell back to point-to-point because the reference
    /// neighborhood had no defined plane
    pub fallback_points: usize,
}

fn p2plane_error(
    test: &[[u32; 3]],
    ref_tree: &KdTree,
    ref_normals: &[Option<[f64; 3]>],
) -> (f64, usize) {
    let partials: Vec<(f64, usize)> = test
        .par_chunks(4096)
        .map(|chunk| {
            let mut sum = 0.0f64;
            let mut fallbacks = 0usize;
            for q in chunk {
                let (d2, coord, idx) = ref_tree.nearest(q);
                match ref_normals[idx] {
                    Some(n) => {
                        let diff = [
                            q[0] as f64 - coord[0] as f64,
                            q[1] as f64 - coord[1] as f64,
                            q[2] as f64 - coord[2] as f64,
                        ];
                        let proj = diff[0] * n[0] + diff[1] * n[1] + diff[2] * n[2];
                        sum += proj * proj;
                    }
                    None => {
                        sum += d2 as f64;
                        fallbacks += 1;
                    }
                }
            }
            (sum, fallbacks)
        })
        .collect();
    let (sum, fallbacks) = partials
        .into_iter()
        .fold((0.0, 0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    (sum / test.len() as f64, fallbacks)
}

/// Symmetric point-to-plane PSNR. Normals live on whichever cloud serves as
/// the reference of a direction; each direction projects the point-to-point
/// residual onto the reference normal at the nearest neighbor.
pub fn d2_psnr(
    test: &[[u32; 3]],
    reference: &[[u32; 3]],
    resolution_bits: u8,
) -> Result<D2Result, MetricsError> {
    if test.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let need = NORMAL_NEIGHBORS + 1;
    if reference.len() < need {
        return Err(MetricsError::TooFewPoints(reference.len(), need));
    }
    if test.len() < need {
        return Err(MetricsError::TooFewPoints(test.len(), need));
    }
    let ref_tree = KdTree::new(reference);
    let test_tree = KdTree::new(test);
    let ref_normals = estimate_normals(reference, &ref_tree);
    let test_normals = estimate_normals(test, &test_tree);
    let (e_fwd, fb_fwd) = p2plane_error(test, &ref_tree, &ref_normals);
    let (e_bwd, fb_bwd) = p2plane_error(reference, &test_tree, &test_normals);
    Ok(D2Result {
        psnr: Psnr::from_error(peak(resolution_bits), e_fwd.max(e_bwd)),
        fallback_points: fb_fwd + fb_bwd,
    })
}

/// BT.709 full-range RGB -> YCbCr, all channels in [0, 255].
fn rgb_to_ycbcr(c: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (c[0] as f64, c[1] as f64, c[2] as f64);
    let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    let cb = 0.5 * (b - y) / (1.0 - 0.0722) + 128.0;
    let cr = 0.5 * (r - y) / (1.0 - 0.2126) + 128.0;
    [y, cb, cr]
}

fn color_mse_direction(test: &VoxelizedCloud, reference: &VoxelizedCloud) -> [f64; 3] {
    let ref_tree = KdTree::new(reference.points());
    let ref_colors = reference.colors().unwrap();
    let test_colors = test.colors().unwrap();
    let partials: Vec<[f64; 3]> = test
        .points()
        .par_chunks(4096)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let base = chunk_idx * 4096;
            let mut sums = [0.0f64; 3];
            for (i, q) in chunk.iter().enumerate() {
                let (_, _, idx) = ref_tree.nearest(q);
                let a = rgb_to_ycbcr(test_colors[base + i]);
                let b = rgb_to_ycbcr(ref_colors[idx]);
                for ch in 0..3 {
                    let d = a[ch] - b[ch];
                    sums[ch] += d * d;
                }
            }
            sums
        })
        .collect();
    let mut total = [0.0f64; 3];
    for p in partials {
        for ch in 0..3 {
            total[ch] += p[ch];
        }
    }
    total.map(|t| t / test.len() as f64)
}

/// Y and YUV (6:1:1) PSNR with peak 255^2. Each test point is compared to
/// the color of its nearest reference point; the per-channel MSE is the max
/// over both directions.
pub fn yuv_psnr(
    test: &VoxelizedCloud,
    reference: &VoxelizedCloud,
) -> Result<(Psnr, Psnr), MetricsError> {
    if test.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !test.has_colors() || !reference.has_colors() {
        return Err(MetricsError::MissingColors);
    }
    let fwd = color_mse_direction(test, reference);
    let bwd = color_mse_direction(reference, test);
    let mse = [fwd[0].max(bwd[0]), fwd[1].max(bwd[1]), fwd[2].max(bwd[2])];
    let peak = 255.0 * 255.0;
    let y = Psnr::from_error(peak, mse[0]);
    let yuv = Psnr::from_error(peak, (6.0 * mse[0] + mse[1] + mse[2]) / 8.0);
    Ok((y, yuv))
}

/// Compressed bits divided by the original point count; bits come from the
/// actual byte length, never an estimate.
pub fn bits_per_point(stream_bytes: usize, original_points: usize) -> Result<f64, MetricsError> {
    if original_points == 0 {
        return Err(MetricsError::ZeroCount);
    }
    Ok((stream_bytes as f64 * 8.0) / original_points as f64)
}

/// Quality numbers for one reconstructed frame against its original.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub d1: Psnr,
    pub d2: Option<Psnr>,
    pub d2_fallback_points: usize,
    pub y: Option<Psnr>,
    pub yuv: Option<Psnr>,
}

/// Per-frame metrics plus their average and the stream rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
    pub average: FrameMetrics,
    pub bpp: Option<f64>,
}

/// Evaluates one reconstruction against its original. D2 is skipped when
/// either cloud is too small for normal estimation; color metrics are
/// skipped when either side lacks colors.
pub fn evaluate_frame(
    reconstructed: &VoxelizedCloud,
    original: &VoxelizedCloud,
) -> Result<FrameMetrics, MetricsError> {
    let d1 = d1_psnr(
        reconstructed.points(),
        original.points(),
        original.resolution_bits(),
    )?;
    let (d2, fallbacks) = match d2_psnr(
        reconstructed.points(),
        original.points(),
        original.resolution_bits(),
    ) {
        Ok(r) => (Some(r.psnr), r.fallback_points),
        Err(MetricsError::TooFewPoints(..)) => (None, 0),
        Err(e) => return Err(e),
    };
    let (y, yuv) = if reconstructed.has_colors() && original.has_colors() {
        let (y, yuv) = yuv_psnr(reconstructed, original)?;
        (Some(y), Some(yuv))
    } else {
        (None, None)
    };
    Ok(FrameMetrics {
        d1,
        d2,
        d2_fallback_points: fallbacks,
        y,
        yuv,
    })
}

/// Averages per-frame metrics in dB. Optional metrics average to `Some`
/// only when present on every frame.
pub fn average_metrics(frames: &[FrameMetrics]) -> FrameMetrics {
    let d1 = Psnr::mean(&frames.iter().map(|f| f.d1).collect::<Vec<_>>());
    let opt_mean = |get: fn(&FrameMetrics) -> Option<Psnr>| {
        let vals: Vec<Psnr> = frames.iter().filter_map(get).collect();
        if vals.len() == frames.len() && !vals.is_empty() {
            Some(Psnr::mean(&vals))
        } else {
            None
        }
    };
    FrameMetrics {
        d1,
        d2: opt_mean(|f| f.d2),
        d2_fallback_points: frames.iter().map(|f| f.d2_fallback_points).sum(),
        y: opt_mean(|f| f.y),
        yuv: opt_mean(|f| f.yuv),
    }
}
