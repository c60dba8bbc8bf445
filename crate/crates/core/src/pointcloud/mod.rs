//! In-memory point cloud representations and voxelization.

mod ply;

pub use ply::{parse_ply, write_ply, write_ply_raw, PlyError};

use thiserror::Error;

/// A point cloud as read from disk: real-valued coordinates plus optional
/// 8-bit RGB colors aligned with the positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl RawCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Mapping from voxel indices back to the raw coordinate frame:
/// `raw = voxel / scale + offset`, per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelTransform {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl VoxelTransform {
    pub fn identity() -> Self {
        VoxelTransform {
            scale: [1.0; 3],
            offset: [0.0; 3],
        }
    }

    pub fn devoxelize(&self, voxel: [u32; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = voxel[a] as f64 / self.scale[a] + self.offset[a];
        }
        out
    }
}

/// Integer-coordinate point set on an `N`-bit grid, the codec's unit of
/// input and output. Points are kept sorted lexicographically with no
/// duplicates; colors, when present, are aligned one-to-one with points.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizedCloud {
    resolution_bits: u8,
    points: Vec<[u32; 3]>,
    colors: Option<Vec<[u8; 3]>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum VoxelizeError {
    #[error("cannot voxelize an empty cloud")]
    EmptyCloud,
    #[error("degenerate bounding box: all {0} points share one position")]
    DegenerateBoundingBox(usize),
    #[error("coordinate component {value} outside the {bits}-bit grid")]
    OutOfRange { value: u32, bits: u8 },
    #[error("colors length {colors} does not match points length {points}")]
    ColorMismatch { points: usize, colors: usize },
}

impl VoxelizedCloud {
    /// Builds a cloud from parts, sorting and de-duplicating coordinates.
    /// Duplicate coordinates keep the first color seen.
    pub fn new(
        resolution_bits: u8,
        points: Vec<[u32; 3]>,
        colors: Option<Vec<[u8; 3]>>,
    ) -> Result<Self, VoxelizeError> {
        let limit = 1u64 << resolution_bits;
        for p in &points {
            for &c in p {
                if (c as u64) >= limit {
                    return Err(VoxelizeError::OutOfRange {
                        value: c,
                        bits: resolution_bits,
                    });
                }
            }
        }
        if let Some(ref cols) = colors {
            if cols.len() != points.len() {
                return Err(VoxelizeError::ColorMismatch {
                    points: points.len(),
                    colors: cols.len(),
                });
            }
        }
        let mut paired: Vec<([u32; 3], Option<[u8; 3]>)> = match &colors {
            Some(cols) => points
                .iter()
                .zip(cols.iter())
                .map(|(p, c)| (*p, Some(*c)))
                .collect(),
            None => points.iter().map(|p| (*p, None)).collect(),
        };
        paired.sort_by_key(|e| e.0);
        paired.dedup_by_key(|e| e.0);
        let points: Vec<[u32; 3]> = paired.iter().map(|e| e.0).collect();
        let colors = if colors.is_some() {
            Some(paired.iter().map(|e| e.1.unwrap()).collect())
        } else {
            None
        };
        Ok(VoxelizedCloud {
            resolution_bits,
            points,
            colors,
        })
    }

    pub fn resolution_bits(&self) -> u8 {
        self.resolution_bits
    }

    /// Sorted, duplicate-free coordinates.
    pub fn points(&self) -> &[[u32; 3]] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, voxel: &[u32; 3]) -> bool {
        self.points.binary_search(voxel).is_ok()
    }

    pub fn color_of(&self, voxel: &[u32; 3]) -> Option<[u8; 3]> {
        let idx = self.points.binary_search(voxel).ok()?;
        self.colors.as_ref().map(|c| c[idx])
    }
}

const ALIGN_TOL: f64 = 1e-9;

fn is_voxel_aligned(cloud: &RawCloud, resolution_bits: u8) -> bool {
    let limit = (1u64 << resolution_bits) as f64;
    cloud.positions.iter().all(|p| {
        p.iter()
            .all(|&c| (c - c.round()).abs() <= ALIGN_TOL && c.round() >= 0.0 && c.round() < limit)
    })
}

/// Voxelization mapping shared by every frame of a sequence: identity when
/// all frames are already integers on the grid, otherwise a min-max
/// normalization of the joint bounding box with a single uniform scale
/// from its longest axis.
pub fn group_transform(
    clouds: &[&RawCloud],
    resolution_bits: u8,
) -> Result<VoxelTransform, VoxelizeError> {
    assert!(
        (1..=21).contains(&resolution_bits),
        "resolution bits must be in 1..=21"
    );
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Err(VoxelizeError::EmptyCloud);
    }
    if clouds.iter().all(|c| is_voxel_aligned(c, resolution_bits)) {
        return Ok(VoxelTransform::identity());
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for cloud in clouds {
        for p in &cloud.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    if extent <= 0.0 {
        return Err(VoxelizeError::DegenerateBoundingBox(total));
    }
    let max_coord = (1u32 << resolution_bits) - 1;
    let scale = max_coord as f64 / extent;
    Ok(VoxelTransform {
        scale: [scale; 3],
        offset: lo,
    })
}

/// Quantizes one cloud onto the grid with a caller-provided transform,
/// merging raw points that land on the same voxel; the merged color is
/// the channel-wise mean, rounded half up.
pub fn voxelize_with(
    cloud: &RawCloud,
    resolution_bits: u8,
    transform: &VoxelTransform,
) -> Result<VoxelizedCloud, VoxelizeError> {
    if cloud.is_empty() {
        return Err(VoxelizeError::EmptyCloud);
    }
    if let Some(cols) = &cloud.colors {
        if cols.len() != cloud.positions.len() {
            return Err(VoxelizeError::ColorMismatch {
                points: cloud.positions.len(),
                colors: cols.len(),
            });
        }
    }
    let max_coord = (1u32 << resolution_bits) - 1;
    let quantize = |p: &[f64; 3]| -> [u32; 3] {
        let mut v = [0u32; 3];
        for a in 0..3 {
            let q = ((p[a] - transform.offset[a]) * transform.scale[a]).round();
            v[a] = (q.max(0.0) as u32).min(max_coord);
        }
        v
    };

    // Merge duplicates, accumulating color sums for the mean.
    let mut entries: Vec<([u32; 3], usize)> = cloud
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| (quantize(p), i))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut points = Vec::new();
    let mut colors = cloud.colors.as_ref().map(|_| Vec::new());
    let src_colors = cloud.colors.as_deref();
    let mut i = 0;
    while i < entries.len() {
        let coord = entries[i].0;
        let mut j = i;
        let mut sum = [0u64; 3];
        while j < entries.len() && entries[j].0 == coord {
            if let Some(cols) = src_colors {
                let c = cols[entries[j].1];
                for a in 0..3 {
                    sum[a] += c[a] as u64;
                }
            }
            j += 1;
        }
        points.push(coord);
        if let Some(out) = colors.as_mut() {
            let n = (j - i) as u64;
            // integer mean with round-half-up
            let mean = [
                ((2 * sum[0] + n) / (2 * n)) as u8,
                ((2 * sum[1] + n) / (2 * n)) as u8,
                ((2 * sum[2] + n) / (2 * n)) as u8,
            ];
            out.push(mean);
        }
        i = j;
    }

    Ok(VoxelizedCloud {
        resolution_bits,
        points,
        colors,
    })
}

/// Quantizes a raw cloud onto the `N`-bit grid.
///
/// Inputs whose coordinates are already integers inside the grid pass
/// through unchanged (identity transform); anything else is min-max
/// normalized to `[0, 2^N - 1]` per the longest bounding-box axis, then
/// rounded to the nearest integer. Returns the inverse mapping alongside
/// the cloud.
pub fn voxelize(
    cloud: &RawCloud,
    resolution_bits: u8,
) -> Result<(VoxelizedCloud, VoxelTransform), VoxelizeError> {
    let transform = group_transform(&[cloud], resolution_bits)?;
    let voxelized = voxelize_with(cloud, resolution_bits, &transform)?;
    Ok((voxelized, transform))
}
