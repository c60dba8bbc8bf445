//! Geometry coding: occupancy-network training under the corrected
//! sampling mixture and focal loss, batched occupancy inference,
//! thresholded reconstruction, and golden-section threshold fine-tuning.

use crate::metrics;
use crate::neuralnet::{AdamState, Engine, LrSchedule, NetworkArch, NetworkParams, Tape};
use crate::partition::CubeSet;
use crate::pointcloud::VoxelizedCloud;
use crate::rng::CounterRng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error(
        "occupied sample ratio {beta} is below the occupancy rate {zeta:.3e}; \
         raise the ratio or use smaller cubes"
    )]
    RatioBelowOccupancy { beta: f64, zeta: f64 },
    #[error("occupied ratio {0} outside (0, 1)")]
    RatioOutOfRange(f64),
    #[error("no threshold produced a non-empty reconstruction")]
    AllProbesEmpty,
    #[error("reconstruction is empty at the chosen threshold")]
    EmptyReconstruction,
}

/// Corrected training-sample distribution for the occupancy network: draw
/// from the occupied set with weight `occupied_weight` and from the whole
/// candidate set with weight `candidate_weight`, so occupied voxels appear
/// with overall frequency `occupied_ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    /// target fraction of occupied voxels among training samples
    pub occupied_ratio: f64,
    /// fraction of the candidate set that is occupied
    pub occupancy_rate: f64,
    /// mixture weight on uniform draws from the occupied set
    pub occupied_weight: f64,
    /// mixture weight on uniform draws from the candidate set
    pub candidate_weight: f64,
}

/// Builds the corrected mixture. Requires `occupied_ratio >= |X|/|V|`,
/// since candidate draws already resample occupied voxels.
pub fn make_sampling_plan(
    cloud: &VoxelizedCloud,
    cube_set: &CubeSet,
    occupied_ratio: f64,
) -> Result<SamplingPlan, GeomError> {
    make_sampling_plan_counts(cloud.len() as u64, cube_set.candidate_count(), occupied_ratio)
}

/// Count-level form shared by the 4D pipeline.
pub fn make_sampling_plan_counts(
    occupied: u64,
    candidates: u64,
    occupied_ratio: f64,
) -> Result<SamplingPlan, GeomError> {
    if !(occupied_ratio > 0.0 && occupied_ratio < 1.0) {
        return Err(GeomError::RatioOutOfRange(occupied_ratio));
    }
    let zeta = occupied as f64 / candidates as f64;
    if occupied_ratio < zeta {
        return Err(GeomError::RatioBelowOccupancy {
            beta: occupied_ratio,
            zeta,
        });
    }
    let occupied_weight = (occupied_ratio - zeta) / (1.0 - zeta);
    // complementary by construction, so the weights sum to one exactly
    let candidate_weight = 1.0 - occupied_weight;
    Ok(SamplingPlan {
        occupied_ratio,
        occupancy_rate: zeta,
        occupied_weight,
        candidate_weight,
    })
}

/// Draws one training voxel and its occupancy label from the mixture.
pub fn sample_training_voxel(
    plan: &SamplingPlan,
    cloud: &VoxelizedCloud,
    cube_set: &CubeSet,
    rng: &mut CounterRng,
) -> ([u32; 3], bool) {
    if rng.unit_f64() < plan.occupied_weight {
        let idx = rng.below(cloud.len() as u64) as usize;
        (cloud.points()[idx], true)
    } else {
        let v = cube_set.sample_candidate(rng);
        (v, cloud.contains(&v))
    }
}

const PROB_CLAMP: f64 = 1e-7;

/// Alpha-balanced focal loss for one voxel. `p` is clamped to
/// `[1e-7, 1 - 1e-7]` before the logarithm.
pub fn focal_loss(p: f64, occupied: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (p_t, a_t) = if occupied { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -a_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// d(focal)/dp, zero where the clamp is active.
pub fn focal_loss_grad(p: f64, occupied: bool, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    let (p_t, a_t, sign) = if occupied {
        (p, alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - alpha, -1.0)
    };
    let one_minus = 1.0 - p_t;
    // d/dp_t of -a (1-p_t)^g ln(p_t)
    let d = -a_t * (-gamma * one_minus.powf(gamma - 1.0) * p_t.ln() + one_minus.powf(gamma) / p_t);
    d * sign
}

/// Hyperparameters for one occupancy-network training run.
#[derive(Debug, Clone, PartialEq)]
pub struct GeomTrainConfig {
    /// L1 regularization strength (the rate-control knob)
    pub l1_weight: f64,
    pub steps: u64,
    pub batch_size: usize,
    /// target occupied fraction among training samples; the focal-loss
    /// balance weight is its complement
    pub occupied_ratio: f64,
    /// focal-loss focusing exponent
    pub focal_gamma: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
}

impl GeomTrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::quarters(self.learning_rate, self.lr_decay, self.steps)
    }
}

pub(crate) const TRAIN_CHUNK: usize = 256;

/// Per-sample loss hook: (sample index, outputs) -> loss, writing
/// dLoss/dOutput in place.
pub(crate) type SampleLoss<'a> = dyn Fn(usize, &[f64], &mut [f64]) -> f64 + Sync + 'a;

/// Mean loss and parameter gradients over one batch, evaluated in fixed
/// 256-sample chunks that are reduced in chunk order, so results are
/// identical for any worker count.
pub(crate) fn batch_loss_and_grads(
    engine: &Engine,
    params: &[f64],
    coords: &[f64],
    n: usize,
    per_sample: &SampleLoss,
) -> (f64, Vec<f64>) {
    let arch = engine.arch();
    let in_w = arch.input_dim;
    let out_w = arch.output_dim;
    let chunks: Vec<(f64, Vec<f64>)> = coords
        .par_chunks(TRAIN_CHUNK * in_w)
        .enumerate()
        .map(|(ci, chunk)| {
            let cn = chunk.len() / in_w;
            let mut tape = Tape::new(arch, cn);
            engine.forward(params, chunk, cn, &mut tape);
            let out = engine.outputs(&tape).to_vec();
            let mut d_out = vec![0.0; cn * out_w];
            let mut loss = 0.0;
            for i in 0..cn {
                loss += per_sample(
                    ci * TRAIN_CHUNK + i,
                    &out[i * out_w..(i + 1) * out_w],
                    &mut d_out[i * out_w..(i + 1) * out_w],
                );
            }
            let mut grads = vec![0.0; params.len()];
            engine.backward(params, &mut tape, &d_out, &mut grads);
            (loss, grads)
        })
        .collect();
    let mut total_loss = 0.0;
    let mut grads = vec![0.0; params.len()];
    for (l, g) in chunks {
        total_loss += l;
        for (acc, v) in grads.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let inv = 1.0 / n as f64;
    total_loss *= inv;
    for g in &mut grads {
        *g *= inv;
    }
    (total_loss, grads)
}

/// Normalizes a voxel coordinate to [-1, 1].
pub(crate) fn normalize_coord(v: u32, resolution_bits: u8) -> f64 {
    let max = ((1u64 << resolution_bits) - 1) as f64;
    2.0 * v as f64 / max - 1.0
}

/// Normalized frame index in [-1, 1]; zero for a single-frame group.
pub(crate) fn normalize_frame(t: u16, total: u16) -> f64 {
    if total <= 1 {
        0.0
    } else {
        2.0 * t as f64 / (total - 1) as f64 - 1.0
    }
}

/// Periodic training-progress samples (step, loss) for the encoder log.
pub type LossTrace = Vec<(u64, f64)>;

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub loss_trace: LossTrace,
}

/// Trains the occupancy network on one frame. `reference`, when given,
/// anchors the L1 term (residual coding) and provides the starting point
/// unless `fresh_init` is set.
pub fn train_geometry(
    cloud: &VoxelizedCloud,
    cube_set: &CubeSet,
    arch: &NetworkArch,
    config: &GeomTrainConfig,
    reference: Option<&NetworkParams>,
    fresh_init: bool,
) -> Result<TrainOutcome, GeomError> {
    let plan = make_sampling_plan(cloud, cube_set, config.occupied_ratio)?;
    let engine = Engine::new(arch);
    let mut rng = CounterRng::new(config.seed);

    let mut params = match (reference, fresh_init) {
        (Some(r), false) => r.flatten_f64(),
        _ => NetworkParams::initialize(arch, &mut rng).flatten_f64(),
    };
    let reference_flat = reference.map(|r| r.flatten_f64());
    let mut adam = AdamState::new(params.len(), config.schedule(), config.weight_decay);

    let alpha = 1.0 - config.occupied_ratio;
    let gamma = config.focal_gamma;
    let l1_scale = if config.l1_weight > 0.0 {
        config.l1_weight / cloud.len() as f64
    } else {
        0.0
    };
    let bits = cloud.resolution_bits();
    let n = config.batch_size;
    let mut coords = vec![0.0f64; n * 3];
    let mut labels = vec![false; n];
    let trace_every = (config.steps / 100).max(1);
    let mut trace = LossTrace::new();

    for step in 0..config.steps {
        for i in 0..n {
            let (v, occupied) = sample_training_voxel(&plan, cloud, cube_set, &mut rng);
            for a in 0..3 {
                coords[i * 3 + a] = normalize_coord(v[a], bits);
            }
            labels[i] = occupied;
        }
        let labels_ref = &labels;
        let (mut loss, mut grads) = batch_loss_and_grads(
            &engine,
            &params,
            &coords,
            n,
            &(|i: usize, out: &[f64], d: &mut [f64]| {
                d[0] = focal_loss_grad(out[0], labels_ref[i], alpha, gamma);
                focal_loss(out[0], labels_ref[i], alpha, gamma)
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

    Ok(TrainOutcome {
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

/// Occupancy probability of every candidate voxel, in candidate-iteration
/// order. Inference batches share the single-sample code path exactly.
pub fn occupancy_probabilities(params: &NetworkParams, cube_set: &CubeSet) -> Vec<([u32; 3], f64)> {
    let bits = cube_set.grid().resolution_bits();
    let voxels: Vec<[u32; 3]> = cube_set.iter_candidates().collect();
    occupancy_probabilities_for(params, &voxels, bits, None)
}

/// Occupancy probabilities for an explicit voxel list; `frame` adds the
/// normalized temporal coordinate for 4D networks.
pub fn occupancy_probabilities_for(
    params: &NetworkParams,
    voxels: &[[u32; 3]],
    resolution_bits: u8,
    frame: Option<(u16, u16)>,
) -> Vec<([u32; 3], f64)> {
    let engine = Engine::new(&params.arch);
    let flat = params.flatten_f64();
    let in_w = params.arch.input_dim;
    let t_norm = frame.map(|(t, total)| normalize_frame(t, total));
    voxels
        .par_chunks(INFER_CHUNK)
        .map(|chunk| {
            let mut coords = vec![0.0f64; chunk.len() * in_w];
            for (i, v) in chunk.iter().enumerate() {
                for a in 0..3 {
                    coords[i * in_w + a] = normalize_coord(v[a], resolution_bits);
                }
                if let Some(t) = t_norm {
                    coords[i * in_w + 3] = t;
                }
            }
            let mut tape = Tape::new(&params.arch, chunk.len());
            engine.forward(&flat, &coords, chunk.len(), &mut tape);
            chunk
                .iter()
                .zip(engine.outputs(&tape))
                .map(|(v, &p)| (*v, p))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Voxels whose occupancy probability strictly exceeds the threshold.
pub fn reconstruct_geometry(
    params: &NetworkParams,
    cube_set: &CubeSet,
    threshold: f64,
) -> VoxelizedCloud {
    let ops = occupancy_probabilities(params, cube_set);
    reconstruct_from_ops(&ops, cube_set.grid().resolution_bits(), threshold)
}

pub fn reconstruct_from_ops(
    ops: &[([u32; 3], f64)],
    resolution_bits: u8,
    threshold: f64,
) -> VoxelizedCloud {
    let points: Vec<[u32; 3]> = ops
        .iter()
        .filter(|(_, p)| *p > threshold)
        .map(|(v, _)| *v)
        .collect();
    VoxelizedCloud::new(resolution_bits, points, None).expect("candidates lie on the grid")
}

/// D1 PSNR of the reconstruction at a probe threshold; empty
/// reconstructions evaluate to negative infinity so the search contracts
/// away from them.
fn probe_quality(ops: &[([u32; 3], f64)], original: &VoxelizedCloud, threshold: f64) -> f64 {
    let recon = reconstruct_from_ops(ops, original.resolution_bits(), threshold);
    if recon.is_empty() {
        return f64::NEG_INFINITY;
    }
    metrics::d1_psnr(recon.points(), original.points(), original.resolution_bits())
        .expect("non-empty clouds")
        .as_db()
}

/// Golden-section search for the threshold maximizing D1 PSNR against the
/// original, on [0, 1], keeping one evaluated probe per contraction.
/// Returns the midpoint of the final interval.
pub fn fine_tune_threshold(
    params: &NetworkParams,
    cube_set: &CubeSet,
    original: &VoxelizedCloud,
    steps: u32,
) -> Result<f64, GeomError> {
    let ops = occupancy_probabilities(params, cube_set);
    fine_tune_threshold_ops(&ops, original, steps)
}

/// Search over precomputed occupancy probabilities.
pub fn fine_tune_threshold_ops(
    ops: &[([u32; 3], f64)],
    original: &VoxelizedCloud,
    steps: u32,
) -> Result<f64, GeomError> {
    assert!(steps >= 1);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let inv_phi2 = (3.0 - 5f64.sqrt()) / 2.0;
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut d1: Option<f64> = None;
    let mut d2: Option<f64> = None;
    let mut any_finite = false;
    for _ in 0..steps {
        let m1 = lo + inv_phi2 * (hi - lo);
        let m2 = lo + inv_phi * (hi - lo);
        let q1 = *d1.get_or_insert_with(|| probe_quality(ops, original, m1));
        let q2 = *d2.get_or_insert_with(|| probe_quality(ops, original, m2));
        any_finite |= q1 > f64::NEG_INFINITY;
        any_finite |= q2 > f64::NEG_INFINITY;
        if q2 != f64::NEG_INFINITY && q1 < q2 {
            lo = m1;
            d1 = Some(q2);
            d2 = None;
        } else {
            hi = m2;
            d2 = Some(q1);
            d1 = None;
        }
    }
    if !any_finite {
        return Err(GeomError::AllProbesEmpty);
    }
    Ok((lo + hi) / 2.0)
}
