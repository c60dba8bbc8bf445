//! Cube partition of the voxel space.
//!
//! The `N`-bit grid is split into `2^M` cubes per axis. Only cubes holding
//! at least one occupied voxel are kept; the union of their voxels is the
//! candidate set the occupancy network ever sees. Candidates are sampled
//! and traversed hierarchically (cube, then local coordinate) so the set is
//! never materialized.

use crate::pointcloud::VoxelizedCloud;
use crate::rng::CounterRng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridParams {
    resolution_bits: u8,
    cube_bits: u8,
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cube bits {cube} exceed resolution bits {resolution}")]
    CubeBitsTooLarge { cube: u8, resolution: u8 },
    #[error("resolution bits {0} outside supported range 1..=21")]
    ResolutionOutOfRange(u8),
}

impl GridParams {
    pub fn new(resolution_bits: u8, cube_bits: u8) -> Result<Self, GridError> {
        if !(1..=21).contains(&resolution_bits) {
            return Err(GridError::ResolutionOutOfRange(resolution_bits));
        }
        if cube_bits > resolution_bits {
            return Err(GridError::CubeBitsTooLarge {
                cube: cube_bits,
                resolution: resolution_bits,
            });
        }
        Ok(GridParams {
            resolution_bits,
            cube_bits,
        })
    }

    pub fn resolution_bits(&self) -> u8 {
        self.resolution_bits
    }

    pub fn cube_bits(&self) -> u8 {
        self.cube_bits
    }

    /// Voxels per cube edge, `2^(N-M)`.
    pub fn cube_edge(&self) -> u32 {
        1 << (self.resolution_bits - self.cube_bits)
    }

    /// Voxel count of one cube.
    pub fn cube_volume(&self) -> u64 {
        let e = self.cube_edge() as u64;
        e * e * e
    }

    pub fn cube_of(&self, voxel: &[u32; 3]) -> [u32; 3] {
        let shift = self.resolution_bits - self.cube_bits;
        [voxel[0] >> shift, voxel[1] >> shift, voxel[2] >> shift]
    }
}

/// Sorted set of non-empty cube coordinates for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeSet {
    grid: GridParams,
    cubes: Vec<[u32; 3]>,
}

impl CubeSet {
    /// Builds the set from explicit cube coordinates (sorted, de-duplicated).
    pub fn from_cubes(grid: GridParams, mut cubes: Vec<[u32; 3]>) -> Self {
        cubes.sort_unstable();
        cubes.dedup();
        let limit = 1u32 << grid.cube_bits;
        debug_assert!(cubes.iter().all(|c| c.iter().all(|&v| v < limit)));
        CubeSet { grid, cubes }
    }

    pub fn grid(&self) -> GridParams {
        self.grid
    }

    pub fn cubes(&self) -> &[[u32; 3]] {
        &self.cubes
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    /// Exact number of candidate voxels covered by the set.
    pub fn candidate_count(&self) -> u64 {
        self.grid.cube_volume() * self.cubes.len() as u64
    }

    /// True iff the voxel falls inside a non-empty cube.
    pub fn contains(&self, voxel: &[u32; 3]) -> bool {
        self.cubes.binary_search(&self.grid.cube_of(voxel)).is_ok()
    }

    /// Draws one voxel uniformly from the candidate set: a cube uniformly,
    /// then a local coordinate uniformly. All cubes have equal volume, so
    /// every candidate voxel has probability exactly `1/|V|`.
    pub fn sample_candidate(&self, rng: &mut CounterRng) -> [u32; 3] {
        assert!(!self.cubes.is_empty(), "sample_candidate on empty cube set");
        let cube = self.cubes[rng.below(self.cubes.len() as u64) as usize];
        let edge = self.grid.cube_edge() as u64;
        let mut v = [0u32; 3];
        for a in 0..3 {
            v[a] = (cube[a] << (self.grid.resolution_bits - self.grid.cube_bits))
                + rng.below(edge) as u32;
        }
        v
    }

    /// Streams every candidate voxel exactly once: cube-major, then local
    /// lexicographic order. O(1) memory beyond the cube set itself.
    pub fn iter_candidates(&self) -> CandidateIter<'_> {
        CandidateIter {
            set: self,
            cube_idx: 0,
            local: [0; 3],
        }
    }
}

/// Builds the non-empty cube set of a cloud: the floor-divided coordinates
/// of every occupied voxel, de-duplicated.
pub fn build_cube_set(cloud: &VoxelizedCloud, cube_bits: u8) -> Result<CubeSet, GridError> {
    let grid = GridParams::new(cloud.resolution_bits(), cube_bits)?;
    let cubes = cloud.points().iter().map(|p| grid.cube_of(p)).collect();
    Ok(CubeSet::from_cubes(grid, cubes))
}

pub struct CandidateIter<'a> {
    set: &'a CubeSet,
    cube_idx: usize,
    local: [u32; 3],
}

impl Iterator for CandidateIter<'_> {
    type Item = [u32; 3];

    fn next(&mut self) -> Option<[u32; 3]> {
        if self.cube_idx >= self.set.cubes.len() {
            return None;
        }
        let grid = self.set.grid;
        let edge = grid.cube_edge();
        let shift = grid.resolution_bits - grid.cube_bits;
        let cube = self.set.cubes[self.cube_idx];
        let out = [
            (cube[0] << shift) + self.local[0],
            (cube[1] << shift) + self.local[1],
            (cube[2] << shift) + self.local[2],
        ];
        // advance local coordinate, then cube
        self.local[2] += 1;
        if self.local[2] == edge {
            self.local[2] = 0;
            self.local[1] += 1;
            if self.local[1] == edge {
                self.local[1] = 0;
                self.local[0] += 1;
                if self.local[0] == edge {
                    self.local[0] = 0;
                    self.cube_idx += 1;
                }
            }
        }
        Some(out)
    }
}
