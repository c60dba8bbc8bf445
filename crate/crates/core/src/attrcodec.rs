//! Attribute coding: expected-color assignment by exact nearest-neighbor
//! transfer, color-network training on MSE, and attribute reconstruction.

use crate::geomcodec::{batch_loss_and_grads, normalize_coord, normalize_frame, LossTrace};
use crate::kdtree::KdTree;
use crate::neuralnet::{AdamState, Engine, NetworkArch, NetworkParams, Tape};
use crate::pointcloud::VoxelizedCloud;
use crate::rng::CounterRng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AttrError {
    #[error("original cloud has no colors to transfer")]
    MissingColors,
    #[error("reconstructed geometry is empty")]
    EmptyGeometry,
}

/// Expected color per reconstructed voxel, normalized to [0, 1]^3, aligned
/// with the reconstructed point list.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorTarget {
    pub voxels: Vec<[u32; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl ColorTarget {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Assigns every reconstructed voxel the ground-truth color of its nearest
/// neighbor in the original cloud; equidistant neighbors resolve to the
/// lexicographically smallest original coordinate.
pub fn build_color_targets(
    reconstructed: &VoxelizedCloud,
    original: &VoxelizedCloud,
) -> Result<ColorTarget, AttrError> {
    let colors = original.colors().ok_or(AttrError::MissingColors)?;
    if reconstructed.is_empty() {
        return Err(AttrError::EmptyGeometry);
    }
    let tree = KdTree::new(original.points());
    let assigned: Vec<[f64; 3]> = reconstructed
        .points()
        .par_chunks(4096)
        .map(|chunk| {
            chunk
                .iter()
                .map(|q| {
                    let (_, _, idx) = tree.nearest(q);
                    let c = colors[idx];
                    [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    Ok(ColorTarget {
        voxels: reconstructed.points().to_vec(),
        colors: assigned,
    })
}

/// Hyperparameters for one color-network training run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttrTrainConfig {
    pub l1_weight: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
}

impl AttrTrainConfig {
    pub fn schedule(&self) -> crate::neuralnet::LrSchedule {
        crate::neuralnet::LrSchedule::quarters(self.learning_rate, self.lr_decay, self.steps)
    }
}

pub struct AttrTrainOutcome {
    pub params: NetworkParams,
    pub loss_trace: LossTrace,
}

/// One frame of color-training data: targets plus the temporal position of
/// the frame inside its group (ignored by 3-input networks).
pub struct AttrFrame<'a> {
    pub targets: &'a ColorTarget,
    pub frame: u16,
    pub frame_count: u16,
}

/// Trains the color network by uniform sampling (with replacement) over
/// the reconstructed voxels of all provided frames. `original_points` is
/// the original point count that scales the L1 term; `reference` anchors
/// it for residual coding.
pub fn train_attributes(
    frames: &[AttrFrame<'_>],
    resolution_bits: u8,
    arch: &NetworkArch,
    config: &AttrTrainConfig,
    original_points: u64,
    reference: Option<&NetworkParams>,
    fresh_init: bool,
) -> Result<AttrTrainOutcome, AttrError> {
    let total: usize = frames.iter().map(|f| f.targets.len()).sum();
    if total == 0 {
        return Err(AttrError::EmptyGeometry);
    }
    // flat index over all frames' voxels
    let mut frame_base = Vec::with_capacity(frames.len());
    let mut acc = 0usize;
    for f in frames {
        frame_base.push(acc);
        acc += f.targets.len();
    }
    let locate = |flat: usize| -> (usize, usize) {
        let fi = match frame_base.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (fi, flat - frame_base[fi])
    };

    let engine = Engine::new(arch);
    let mut rng = CounterRng::new(config.seed);
    let mut params = match (reference, fresh_init) {
        (Some(r), false) => r.flatten_f64(),
        _ => NetworkParams::initialize(arch, &mut rng).flatten_f64(),
    };
    let reference_flat = reference.map(|r| r.flatten_f64());
    let mut adam = AdamState::new(params.len(), config.schedule(), config.weight_decay);
    let l1_scale = if config.l1_weight > 0.0 {
        config.l1_weight / original_points as f64
    } else {
        0.0
    };

    let in_w = arch.input_dim;
    let n = config.batch_size;
    let mut coords = vec![0.0f64; n * in_w];
    let mut expected = vec![[0.0f64; 3]; n];
    let trace_every = (config.steps / 100).max(1);
    let mut trace = LossTrace::new();

    for step in 0..config.steps {
        for i in 0..n {
            let (fi, vi) = locate(rng.below(total as u64) as usize);
            let f = &frames[fi];
            let v = f.targets.voxels[vi];
            for a in 0..3 {
                coords[i * in_w + a] = normalize_coord(v[a], resolution_bits);
            }
            if in_w == 4 {
                coords[i * in_w + 3] = normalize_frame(f.frame, f.frame_count);
            }
            expected[i] = f.targets.colors[vi];
        }
        let expected_ref = &expected;
        let (mut loss, mut grads) = batch_loss_and_grads(
            &engine,
            &params,
            &coords,
            n,
            &(|i: usize, out: &[f64], d: &mut [f64]| {
                let e = &expected_ref[i];
                let mut l = 0.0;
                for ch in 0..3 {
                    let diff = out[ch] - e[ch];
                    d[ch] = 2.0 * diff;
                    l += diff * diff;
                }
                l
            }),
        );
        if l1_scale > 0.0 {
            match &reference_flat {
                None => {
                    for (g, &p) in grads.iter_mut().zip(&params) {
                        *g += l1_scale * sign(p);
                        loss += l1_scale * p.abs();
                    }
                }
                Some(r) => {
                    for ((g, &p), &rf) in grads.iter_mut().zip(&params).zip(r) {
                        *g += l1_scale * sign(p - rf);
                        loss += l1_scale * (p - rf).abs();
                    }
                }
            }
        }
        adam.step(&mut params, &grads);
        if step % trace_every == 0 || step + 1 == config.steps {
            trace.push((step, loss));
        }
    }

    Ok(AttrTrainOutcome {
        params: NetworkParams::from_f64(arch, &params).expect("arch matches"),
        loss_trace: trace,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const INFER_CHUNK: usize = 4096;

/// Colors every voxel of the reconstructed geometry by network inference;
/// outputs in (0,1) map to 8-bit by `round(255 c)` (half up).
pub fn reconstruct_attributes(
    params: &NetworkParams,
    reconstructed: &VoxelizedCloud,
    frame: Option<(u16, u16)>,
) -> VoxelizedCloud {
    let engine = Engine::new(&params.arch);
    let flat = params.flatten_f64();
    let in_w = params.arch.input_dim;
    let bits = reconstructed.resolution_bits();
    let t_norm = frame.map(|(t, total)| normalize_frame(t, total));
    let colors: Vec<[u8; 3]> = reconstructed
        .points()
        .par_chunks(INFER_CHUNK)
        .map(|chunk| {
            let mut coords = vec![0.0f64; chunk.len() * in_w];
            for (i, v) in chunk.iter().enumerate() {
                for a in 0..3 {
                    coords[i * in_w + a] = normalize_coord(v[a], bits);
                }
                if let Some(t) = t_norm {
                    coords[i * in_w + 3] = t;
                }
            }
            let mut tape = Tape::new(&params.arch, chunk.len());
            engine.forward(&flat, &coords, chunk.len(), &mut tape);
            engine
                .outputs(&tape)
                .chunks(3)
                .map(|c| {
                    [
                        to_byte(c[0]),
                        to_byte(c[1]),
                        to_byte(c[2]),
                    ]
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    VoxelizedCloud::new(bits, reconstructed.points().to_vec(), Some(colors))
        .expect("same points as input")
}

fn to_byte(c: f64) -> u8 {
    (255.0 * c).round().clamp(0.0, 255.0) as u8
}
