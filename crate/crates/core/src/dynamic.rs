//! Frame-group orchestration for the four coding modes: per-frame intra
//! coding, parameter-residual coding, Bezier-curve coding in parameter
//! space, and a single spatio-temporal network per group.

use crate::attrcodec::{
    build_color_targets, reconstruct_attributes, train_attributes, AttrError, AttrFrame,
    AttrTrainConfig, ColorTarget,
};
use crate::bitstream::{
    decode_cube_map, decode_indices, encode_cube_map, encode_indices, threshold_from_fixed,
    threshold_to_fixed, CodedStream, Section, SectionKind, StreamError, StreamHeader, StreamMode,
    MAX_CUBE_BITS,
};
use crate::geomcodec::{
    batch_loss_and_grads, fine_tune_threshold_ops, focal_loss, focal_loss_grad,
    make_sampling_plan_counts, normalize_coord, normalize_frame, occupancy_probabilities_for,
    reconstruct_from_ops, train_geometry, GeomError, GeomTrainConfig, LossTrace, SamplingPlan,
};
use crate::neuralnet::{
    dequantize, quantize, AdamState, Engine, NetError, NetworkArch, NetworkParams,
    QuantizedParams,
};
use crate::partition::{build_cube_set, CubeSet, GridError};
use crate::pointcloud::{VoxelTransform, VoxelizedCloud};
use crate::rng::CounterRng;
use rayon::prelude::*;
use thiserror::Error;

/// Ordered frames sharing one grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGroup {
    frames: Vec<VoxelizedCloud>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("frame group is empty")]
    Empty,
    #[error("frame {index} has resolution {got}, group uses {expected}")]
    MixedResolution { index: usize, got: u8, expected: u8 },
}

impl FrameGroup {
    pub fn new(frames: Vec<VoxelizedCloud>) -> Result<Self, GroupError> {
        let first = frames.first().ok_or(GroupError::Empty)?;
        let bits = first.resolution_bits();
        for (i, f) in frames.iter().enumerate() {
            if f.resolution_bits() != bits {
                return Err(GroupError::MixedResolution {
                    index: i,
                    got: f.resolution_bits(),
                    expected: bits,
                });
            }
        }
        Ok(FrameGroup { frames })
    }

    pub fn frames(&self) -> &[VoxelizedCloud] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution_bits(&self) -> u8 {
        self.frames[0].resolution_bits()
    }

    pub fn total_points(&self) -> u64 {
        self.frames.iter().map(|f| f.len() as u64).sum()
    }

    pub fn has_colors(&self) -> bool {
        self.frames.iter().all(VoxelizedCloud::has_colors)
    }
}

/// Bezier-curve coding configuration: the number of control points
/// (degree + 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BezierConfig {
    pub control_points: usize,
}

/// Degree cap keeping binomial coefficients exact in 64-bit arithmetic.
pub const MAX_BEZIER_DEGREE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicMode {
    Intra,
    Residual,
    Curve(BezierConfig),
    FourD,
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Attributes(#[from] AttrError),
    #[error("cube bits {0} exceed the bitmap limit {MAX_CUBE_BITS}")]
    CubeBitsTooLarge(u8),
    #[error("curve mode needs 2..={} control points below the frame count, got P={got} for T={frames}", MAX_BEZIER_DEGREE + 1)]
    BadControlPoints { got: usize, frames: usize },
    #[error("curve mode needs at least 2 frames")]
    CurveNeedsFrames,
    #[error("frame {frame}: reconstruction is empty at the tuned threshold")]
    EmptyFrame { frame: usize },
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("missing {kind} section for index {index}")]
    MissingSection { kind: &'static str, index: u16 },
    #[error("header declares no attribute network but attribute sections exist")]
    UnexpectedAttributes,
}

/// Evenly spaced Bernstein combination of control points at frame `t` of
/// `total`. Endpoints return the exact control point, bit for bit.
pub fn bezier_sample(controls: &[NetworkParams], t: u16, total: u16) -> NetworkParams {
    assert!(total >= 2, "curve sampling needs at least two frames");
    assert!((t as usize) < total as usize);
    let n = controls.len() - 1;
    assert!((1..=MAX_BEZIER_DEGREE).contains(&n));
    if t == 0 {
        return controls[0].clone();
    }
    if t == total - 1 {
        return controls[n].clone();
    }
    let weights = bernstein_weights(n, t, total);
    let flats: Vec<Vec<f64>> = controls.iter().map(|c| c.flatten_f64()).collect();
    let len = flats[0].len();
    let mut out = vec![0.0f64; len];
    for (w, flat) in weights.iter().zip(&flats) {
        for (o, v) in out.iter_mut().zip(flat) {
            *o += w * v;
        }
    }
    NetworkParams::from_f64(&controls[0].arch, &out).expect("control points share one arch")
}

/// Bernstein weights with exact 64-bit binomials; they sum to one.
pub fn bernstein_weights(degree: usize, t: u16, total: u16) -> Vec<f64> {
    let s = t as f64 / (total - 1) as f64;
    (0..=degree)
        .map(|i| binomial(degree, i) as f64 * s.powi(i as i32) * (1.0 - s).powi((degree - i) as i32))
        .collect()
}

fn binomial(n: usize, k: usize) -> u64 {
    let mut out = 1u64;
    for i in 0..k {
        out = out * (n - i) as u64 / (i + 1) as u64;
    }
    out
}

/// Everything the encoder needs for one group.
#[derive(Debug, Clone)]
pub struct EncoderSettings {
    pub mode: DynamicMode,
    pub cube_bits: u8,
    pub seed: u64,
    pub geom: GeomTrainConfig,
    pub attr: AttrTrainConfig,
    /// single-frame occupancy architecture; 4D mode widens the input
    pub geom_arch: NetworkArch,
    pub attr_arch: NetworkArch,
    /// temporal positional-encoding levels for 4D mode
    pub temporal_levels: usize,
    pub geom_step: f64,
    pub attr_step: f64,
    pub threshold_steps: u32,
    /// skip attribute coding even when colors are present
    pub geometry_only: bool,
    /// residual mode: initialize each frame's training from scratch instead
    /// of the previous frame's decoded parameters
    pub fresh_init: bool,
    /// de-voxelization transform stored in the header
    pub transform: VoxelTransform,
}

/// Encoder-side result for one frame; the decoder must reproduce the
/// reconstruction exactly.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub reconstruction: VoxelizedCloud,
    pub threshold: f64,
    /// decoded-state geometry indices (absolute, after any accumulation)
    pub geom_indices: Vec<i32>,
    pub attr_indices: Option<Vec<i32>>,
}

#[derive(Debug)]
pub struct EncodeOutcome {
    pub stream: CodedStream,
    pub frames: Vec<FrameResult>,
    pub geom_traces: Vec<LossTrace>,
    pub attr_traces: Vec<LossTrace>,
}

#[derive(Debug)]
pub struct DecodeOutcome {
    pub frames: Vec<VoxelizedCloud>,
    pub transform: VoxelTransform,
    /// absolute geometry parameter indices in decoder state, per frame
    pub geom_indices: Vec<Vec<i32>>,
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // stable per-(seed, stream) value via the counter generator
    CounterRng::derive(seed, stream).next_u64()
}

fn geom_seed(stream_seed: u64, frame: usize) -> u64 {
    mix_seed(stream_seed, frame as u64 * 2 + 2)
}

fn attr_seed(stream_seed: u64, frame: usize) -> u64 {
    mix_seed(stream_seed, frame as u64 * 2 + 3)
}

/// Encodes one frame group under the chosen mode.
pub fn encode_group(
    group: &FrameGroup,
    settings: &EncoderSettings,
) -> Result<EncodeOutcome, EncodeError> {
    if settings.cube_bits > MAX_CUBE_BITS {
        return Err(EncodeError::CubeBitsTooLarge(settings.cube_bits));
    }
    let with_attrs = !settings.geometry_only && group.has_colors();
    // a single frame makes every mode degenerate to intra coding
    let mode = match settings.mode {
        DynamicMode::FourD if group.len() == 1 => DynamicMode::Intra,
        m => m,
    };
    match mode {
        DynamicMode::Intra => encode_intra(group, settings, with_attrs),
        DynamicMode::Residual => encode_residual(group, settings, with_attrs),
        DynamicMode::Curve(cfg) => encode_curve(group, settings, with_attrs, cfg),
        DynamicMode::FourD => encode_fourd(group, settings, with_attrs),
    }
}

struct FrameGeometry {
    cube_set: CubeSet,
    quantized: QuantizedParams,
    threshold_fixed: u16,
    reconstruction: VoxelizedCloud,
    trace: LossTrace,
}

/// Trains, quantizes, tunes the threshold, and reconstructs one frame with
/// a 3-input network. The reconstruction uses the dequantized parameters
/// and the fixed-point threshold, exactly as the decoder will.
fn code_frame_geometry(
    cloud: &VoxelizedCloud,
    settings: &EncoderSettings,
    seed: u64,
    reference: Option<&NetworkParams>,
) -> Result<FrameGeometry, EncodeError> {
    let cube_set = build_cube_set(cloud, settings.cube_bits)?;
    let config = GeomTrainConfig {
        seed,
        ..settings.geom.clone()
    };
    let outcome = train_geometry(
        cloud,
        &cube_set,
        &settings.geom_arch,
        &config,
        reference,
        settings.fresh_init,
    )?;
    let quantized = match reference {
        None => quantize(&outcome.params, settings.geom_step),
        Some(r) => residual_quantize(&outcome.params, r, settings.geom_step),
    };
    let decoded = dequantize(&quantized);
    let ops = crate::geomcodec::occupancy_probabilities(&decoded, &cube_set);
    let tau = fine_tune_threshold_ops(&ops, cloud, settings.threshold_steps)?;
    let threshold_fixed = threshold_to_fixed(tau);
    let reconstruction = reconstruct_from_ops(
        &ops,
        cloud.resolution_bits(),
        threshold_from_fixed(threshold_fixed),
    );
    Ok(FrameGeometry {
        cube_set,
        quantized,
        threshold_fixed,
        reconstruction,
        trace: outcome.loss_trace,
    })
}

/// Quantizes against a reference, returning ABSOLUTE indices
/// (reference indices plus the quantized delta).
fn residual_quantize(
    params: &NetworkParams,
    reference: &NetworkParams,
    step: f64,
) -> QuantizedParams {
    // reference values are exact index*step products
    let ref_q = quantize(reference, step);
    let delta = delta_indices(params, reference, step);
    let absolute: Vec<i32> = ref_q
        .flatten()
        .iter()
        .zip(&delta)
        .map(|(&r, &d)| r.wrapping_add(d))
        .collect();
    QuantizedParams::unflatten(&params.arch, step, &absolute).expect("same arch")
}

/// `round((theta - reference) / step)` per element.
fn delta_indices(params: &NetworkParams, reference: &NetworkParams, step: f64) -> Vec<i32> {
    params
        .flatten_f64()
        .iter()
        .zip(reference.flatten_f64())
        .map(|(&p, r)| ((p - r) / step).round() as i32)
        .collect()
}

struct FrameAttributes {
    quantized: QuantizedParams,
    colored: VoxelizedCloud,
    trace: LossTrace,
}

fn code_frame_attributes(
    original: &VoxelizedCloud,
    geometry: &VoxelizedCloud,
    settings: &EncoderSettings,
    seed: u64,
    reference: Option<&NetworkParams>,
) -> Result<FrameAttributes, EncodeError> {
    let targets = build_color_targets(geometry, original)?;
    let config = AttrTrainConfig {
        seed,
        ..settings.attr.clone()
    };
    let frames = [AttrFrame {
        targets: &targets,
        frame: 0,
        frame_count: 1,
    }];
    let outcome = train_attributes(
        &frames,
        original.resolution_bits(),
        &settings.attr_arch,
        &config,
        original.len() as u64,
        reference,
        settings.fresh_init,
    )?;
    let quantized = match reference {
        None => quantize(&outcome.params, settings.attr_step),
        Some(r) => residual_quantize(&outcome.params, r, settings.attr_step),
    };
    let decoded = dequantize(&quantized);
    let colored = reconstruct_attributes(&decoded, geometry, None);
    Ok(FrameAttributes {
        quantized,
        colored,
        trace: outcome.loss_trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_header(
    group: &FrameGroup,
    settings: &EncoderSettings,
    mode: StreamMode,
    with_attrs: bool,
    control_points: u8,
    geom_arch: &NetworkArch,
    attr_arch: &NetworkArch,
    thresholds: Vec<u16>,
) -> StreamHeader {
    StreamHeader {
        mode,
        resolution_bits: group.resolution_bits(),
        cube_bits: settings.cube_bits,
        frame_count: group.len() as u16,
        control_points,
        geom_arch: geom_arch.clone(),
        attr_arch: with_attrs.then(|| attr_arch.clone()),
        geom_step: settings.geom_step,
        attr_step: settings.attr_step,
        transform: settings.transform,
        thresholds,
    }
}

fn encode_intra(
    group: &FrameGroup,
    settings: &EncoderSettings,
    with_attrs: bool,
) -> Result<EncodeOutcome, EncodeError> {
    // frames are independent; parallel workers use per-frame derived seeds
    let coded: Vec<Result<(FrameGeometry, Option<FrameAttributes>), EncodeError>> = group
        .frames()
        .par_iter()
        .enumerate()
        .map(|(t, frame)| {
            let geo = code_frame_geometry(frame, settings, geom_seed(settings.seed, t), None)?;
            if geo.reconstruction.is_empty() {
                return Err(EncodeError::EmptyFrame { frame: t });
            }
            let attrs = if with_attrs {
                Some(code_frame_attributes(
                    frame,
                    &geo.reconstruction,
                    settings,
                    attr_seed(settings.seed, t),
                    None,
                )?)
            } else {
                None
            };
            Ok((geo, attrs))
        })
        .collect();

    let mut sections = Vec::new();
    let mut thresholds = Vec::new();
    let mut frames = Vec::new();
    let mut geom_traces = Vec::new();
    let mut attr_traces = Vec::new();
    for (t, item) in coded.into_iter().enumerate() {
        let (geo, attrs) = item?;
        sections.push(Section {
            kind: SectionKind::CubeMap,
            index: t as u16,
            payload: encode_cube_map(geo.cube_set.cubes(), settings.cube_bits),
        });
        sections.push(Section {
            kind: SectionKind::GeometryParams,
            index: t as u16,
            payload: encode_indices(&geo.quantized.flatten()),
        });
        thresholds.push(geo.threshold_fixed);
        geom_traces.push(geo.trace);
        let (reconstruction, attr_indices) = match attrs {
            Some(a) => {
                sections.push(Section {
                    kind: SectionKind::AttributeParams,
                    index: t as u16,
                    payload: encode_indices(&a.quantized.flatten()),
                });
                attr_traces.push(a.trace);
                (a.colored, Some(a.quantized.flatten()))
            }
            None => (geo.reconstruction, None),
        };
        frames.push(FrameResult {
            reconstruction,
            threshold: threshold_from_fixed(geo.threshold_fixed),
            geom_indices: geo.quantized.flatten(),
            attr_indices,
        });
    }

    let header = make_header(
        group,
        settings,
        StreamMode::Intra,
        with_attrs,
        0,
        &settings.geom_arch,
        &settings.attr_arch,
        thresholds,
    );
    Ok(EncodeOutcome {
        stream: CodedStream { header, sections },
        frames,
        geom_traces,
        attr_traces,
    })
}

fn encode_residual(
    group: &FrameGroup,
    settings: &EncoderSettings,
    with_attrs: bool,
) -> Result<EncodeOutcome, EncodeError> {
    let mut sections = Vec::new();
    let mut thresholds = Vec::new();
    let mut frames = Vec::new();
    let mut geom_traces = Vec::new();
    let mut attr_traces = Vec::new();
    let mut geom_state: Option<QuantizedParams> = None;
    let mut attr_state: Option<QuantizedParams> = None;

    for (t, frame) in group.frames().iter().enumerate() {
        let geom_ref = geom_state.as_ref().map(dequantize);
        let geo = code_frame_geometry(
            frame,
            settings,
            geom_seed(settings.seed, t),
            geom_ref.as_ref(),
        )?;
        if geo.reconstruction.is_empty() {
            return Err(EncodeError::EmptyFrame { frame: t });
        }
        // transmit absolute indices for frame 0, deltas afterwards
        let payload_indices = match &geom_state {
            None => geo.quantized.flatten(),
            Some(prev) => geo
                .quantized
                .flatten()
                .iter()
                .zip(prev.flatten())
                .map(|(&a, p)| a.wrapping_sub(p))
                .collect(),
        };
        sections.push(Section {
            kind: SectionKind::CubeMap,
            index: t as u16,
            payload: encode_cube_map(geo.cube_set.cubes(), settings.cube_bits),
        });
        sections.push(Section {
            kind: SectionKind::GeometryParams,
            index: t as u16,
            payload: encode_indices(&payload_indices),
        });
        thresholds.push(geo.threshold_fixed);
        geom_traces.push(geo.trace);

        let mut result = FrameResult {
            reconstruction: geo.reconstruction.clone(),
            threshold: threshold_from_fixed(geo.threshold_fixed),
            geom_indices: geo.quantized.flatten(),
            attr_indices: None,
        };
        geom_state = Some(geo.quantized);

        if with_attrs {
            let attr_ref = attr_state.as_ref().map(dequantize);
            let attrs = code_frame_attributes(
                frame,
                &geo.reconstruction,
                settings,
                attr_seed(settings.seed, t),
                attr_ref.as_ref(),
            )?;
            let payload_indices = match &attr_state {
                None => attrs.quantized.flatten(),
                Some(prev) => attrs
                    .quantized
                    .flatten()
                    .iter()
                    .zip(prev.flatten())
                    .map(|(&a, p)| a.wrapping_sub(p))
                    .collect(),
            };
            sections.push(Section {
                kind: SectionKind::AttributeParams,
                index: t as u16,
                payload: encode_indices(&payload_indices),
            });
            attr_traces.push(attrs.trace);
            result.reconstruction = attrs.colored;
            result.attr_indices = Some(attrs.quantized.flatten());
            attr_state = Some(attrs.quantized);
        }
        frames.push(result);
    }

    let header = make_header(
        group,
        settings,
        StreamMode::Residual,
        with_attrs,
        0,
        &settings.geom_arch,
        &settings.attr_arch,
        thresholds,
    );
    Ok(EncodeOutcome {
        stream: CodedStream { header, sections },
        frames,
        geom_traces,
        attr_traces,
    })
}

/// Spatio-temporal variants of the single-frame architectures.
fn fourd_arch(base: &NetworkArch, temporal_levels: usize) -> NetworkArch {
    NetworkArch {
        input_dim: 4,
        posenc_levels_temporal: temporal_levels,
        ..base.clone()
    }
}

fn locate(offsets: &[u64], flat: u64) -> (usize, u64) {
    // offsets are prefix sums; find the bucket containing `flat`
    let idx = offsets.partition_point(|&o| o <= flat) - 1;
    (idx, flat - offsets[idx])
}

fn prefix_sums<I: Iterator<Item = u64>>(lens: I) -> (Vec<u64>, u64) {
    let mut offsets = Vec::new();
    let mut acc = 0u64;
    for len in lens {
        offsets.push(acc);
        acc += len;
    }
    (offsets, acc)
}

/// Trains the spatio-temporal occupancy network over the whole group with
/// the corrected mixture applied to the 4D occupied/candidate sets.
fn train_geometry_fourd(
    group: &FrameGroup,
    cube_sets: &[CubeSet],
    arch: &NetworkArch,
    config: &GeomTrainConfig,
    plan: &SamplingPlan,
) -> (NetworkParams, LossTrace) {
    let engine = Engine::new(arch);
    let mut rng = CounterRng::new(config.seed);
    let mut params = NetworkParams::initialize(arch, &mut rng).flatten_f64();
    let mut adam = AdamState::new(params.len(), config.schedule(), config.weight_decay);

    let frames = group.frames();
    let t_count = frames.len() as u16;
    let bits = group.resolution_bits();
    let (occ_offsets, total_occ) = prefix_sums(frames.iter().map(|f| f.len() as u64));
    let (cube_offsets, total_cubes) = prefix_sums(cube_sets.iter().map(|c| c.len() as u64));
    let edge = cube_sets[0].grid().cube_edge() as u64;
    let shift = bits - cube_sets[0].grid().cube_bits();

    let alpha = 1.0 - config.occupied_ratio;
    let gamma = config.focal_gamma;
    let l1_scale = if config.l1_weight > 0.0 {
        config.l1_weight / total_occ as f64
    } else {
        0.0
    };
    let n = config.batch_size;
    let mut coords = vec![0.0f64; n * 4];
    let mut labels = vec![false; n];
    let trace_every = (config.steps / 100).max(1);
    let mut trace = LossTrace::new();

    for step in 0..config.steps {
        for i in 0..n {
            let (t, v, occupied) = if rng.unit_f64() < plan.occupied_weight {
                let (t, local) = locate(&occ_offsets, rng.below(total_occ));
                (t, frames[t].points()[local as usize], true)
            } else {
                let (t, local) = locate(&cube_offsets, rng.below(total_cubes));
                let cube = cube_sets[t].cubes()[local as usize];
                let mut v = [0u32; 3];
                for a in 0..3 {
                    v[a] = (cube[a] << shift) + rng.below(edge) as u32;
                }
                (t, v, frames[t].contains(&v))
            };
            for a in 0..3 {
                coords[i * 4 + a] = normalize_coord(v[a], bits);
            }
            coords[i * 4 + 3] = normalize_frame(t as u16, t_count);
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
            for (g, &p) in grads.iter_mut().zip(&params) {
                *g += l1_scale * sign(p);
                loss += l1_scale * p.abs();
            }
        }
        adam.step(&mut params, &grads);
        if step % trace_every == 0 || step + 1 == config.steps {
            trace.push((step, loss));
        }
    }
    (
        NetworkParams::from_f64(arch, &params).expect("arch matches"),
        trace,
    )
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

fn encode_fourd(
    group: &FrameGroup,
    settings: &EncoderSettings,
    with_attrs: bool,
) -> Result<EncodeOutcome, EncodeError> {
    let t_count = group.len() as u16;
    let bits = group.resolution_bits();
    let cube_sets: Vec<CubeSet> = group
        .frames()
        .iter()
        .map(|f| build_cube_set(f, settings.cube_bits))
        .collect::<Result<_, _>>()?;
    let geom_arch = fourd_arch(&settings.geom_arch, settings.temporal_levels);
    let attr_arch = fourd_arch(&settings.attr_arch, settings.temporal_levels);

    let total_candidates: u64 = cube_sets.iter().map(CubeSet::candidate_count).sum();
    let plan = make_sampling_plan_counts(
        group.total_points(),
        total_candidates,
        settings.geom.occupied_ratio,
    )?;
    let config = GeomTrainConfig {
        seed: geom_seed(settings.seed, 0),
        ..settings.geom.clone()
    };
    let (params, geom_trace) = train_geometry_fourd(group, &cube_sets, &geom_arch, &config, &plan);
    let quantized = quantize(&params, settings.geom_step);
    let decoded = dequantize(&quantized);

    let mut sections = Vec::new();
    let mut thresholds = Vec::new();
    let mut reconstructions = Vec::new();
    for (t, frame) in group.frames().iter().enumerate() {
        let voxels: Vec<[u32; 3]> = cube_sets[t].iter_candidates().collect();
        let ops = occupancy_probabilities_for(&decoded, &voxels, bits, Some((t as u16, t_count)));
        let tau = fine_tune_threshold_ops(&ops, frame, settings.threshold_steps)?;
        let fixed = threshold_to_fixed(tau);
        let recon = reconstruct_from_ops(&ops, bits, threshold_from_fixed(fixed));
        if recon.is_empty() {
            return Err(EncodeError::EmptyFrame { frame: t });
        }
        thresholds.push(fixed);
        sections.push(Section {
            kind: SectionKind::CubeMap,
            index: t as u16,
            payload: encode_cube_map(cube_sets[t].cubes(), settings.cube_bits),
        });
        reconstructions.push(recon);
    }
    sections.push(Section {
        kind: SectionKind::GeometryParams,
        index: 0,
        payload: encode_indices(&quantized.flatten()),
    });

    let mut attr_traces = Vec::new();
    let mut attr_flat: Option<Vec<i32>> = None;
    if with_attrs {
        // expected colors come from each frame's own original
        let targets: Vec<ColorTarget> = group
            .frames()
            .iter()
            .zip(&reconstructions)
            .map(|(orig, recon)| build_color_targets(recon, orig))
            .collect::<Result<_, _>>()?;
        let attr_frames: Vec<AttrFrame> = targets
            .iter()
            .enumerate()
            .map(|(t, targets)| AttrFrame {
                targets,
                frame: t as u16,
                frame_count: t_count,
            })
            .collect();
        let config = AttrTrainConfig {
            seed: attr_seed(settings.seed, 0),
            ..settings.attr.clone()
        };
        let outcome = train_attributes(
            &attr_frames,
            bits,
            &attr_arch,
            &config,
            group.total_points(),
            None,
            false,
        )?;
        let q = quantize(&outcome.params, settings.attr_step);
        let decoded_attr = dequantize(&q);
        for (t, recon) in reconstructions.iter_mut().enumerate() {
            *recon = reconstruct_attributes(&decoded_attr, recon, Some((t as u16, t_count)));
        }
        sections.push(Section {
            kind: SectionKind::AttributeParams,
            index: 0,
            payload: encode_indices(&q.flatten()),
        });
        attr_traces.push(outcome.loss_trace);
        attr_flat = Some(q.flatten());
    }

    let frames = reconstructions
        .into_iter()
        .enumerate()
        .map(|(t, reconstruction)| FrameResult {
            reconstruction,
            threshold: threshold_from_fixed(thresholds[t]),
            geom_indices: quantized.flatten(),
            attr_indices: attr_flat.clone(),
        })
        .collect();
    let header = make_header(
        group,
        settings,
        StreamMode::FourD,
        with_attrs,
        0,
        &geom_arch,
        &attr_arch,
        thresholds,
    );
    Ok(EncodeOutcome {
        stream: CodedStream { header, sections },
        frames,
        geom_traces: vec![geom_trace],
        attr_traces,
    })
}

/// Trains Bezier control points for the occupancy networks of a group.
/// Each step draws one frame uniformly, samples a batch from that frame's
/// mixture, and pushes the sampled-point gradient back onto every control
/// point through its Bernstein weight.
#[allow(clippy::too_many_arguments)]
fn train_curve_geometry(
    group: &FrameGroup,
    cube_sets: &[CubeSet],
    plans: &[SamplingPlan],
    arch: &NetworkArch,
    config: &GeomTrainConfig,
    control_points: usize,
) -> (Vec<NetworkParams>, LossTrace) {
    let engine = Engine::new(arch);
    let len = arch.param_count();
    let mut rng = CounterRng::new(config.seed);
    let mut controls = vec![0.0f64; control_points * len];
    for i in 0..control_points {
        let init = NetworkParams::initialize(arch, &mut rng).flatten_f64();
        controls[i * len..(i + 1) * len].copy_from_slice(&init);
    }
    let mut adam = AdamState::new(controls.len(), config.schedule(), config.weight_decay);

    let frames = group.frames();
    let t_count = frames.len() as u16;
    let bits = group.resolution_bits();
    let degree = control_points - 1;
    let weights: Vec<Vec<f64>> = (0..t_count)
        .map(|t| bernstein_weights(degree, t, t_count))
        .collect();

    let alpha = 1.0 - config.occupied_ratio;
    let gamma = config.focal_gamma;
    let l1_scale = if config.l1_weight > 0.0 {
        config.l1_weight / group.total_points() as f64
    } else {
        0.0
    };
    let n = config.batch_size;
    let mut coords = vec![0.0f64; n * 3];
    let mut labels = vec![false; n];
    let mut sampled = vec![0.0f64; len];
    let trace_every = (config.steps / 100).max(1);
    let mut trace = LossTrace::new();

    for step in 0..config.steps {
        let t = rng.below(t_count as u64) as usize;
        for i in 0..n {
            let (v, occupied) = crate::geomcodec::sample_training_voxel(
                &plans[t],
                &frames[t],
                &cube_sets[t],
                &mut rng,
            );
            for a in 0..3 {
                coords[i * 3 + a] = normalize_coord(v[a], bits);
            }
            labels[i] = occupied;
        }
        // sample the curve at frame t
        let w = &weights[t];
        sampled.fill(0.0);
        for (ci, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                let c = &controls[ci * len..(ci + 1) * len];
                for (s, v) in sampled.iter_mut().zip(c) {
                    *s += wi * v;
                }
            }
        }
        let labels_ref = &labels;
        let (mut loss, grads_sampled) = batch_loss_and_grads(
            &engine,
            &sampled,
            &coords,
            n,
            &(|i: usize, out: &[f64], d: &mut [f64]| {
                d[0] = focal_loss_grad(out[0], labels_ref[i], alpha, gamma);
                focal_loss(out[0], labels_ref[i], alpha, gamma)
            }),
        );
        let mut grads = vec![0.0f64; controls.len()];
        for (ci, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                let g = &mut grads[ci * len..(ci + 1) * len];
                for (gi, gs) in g.iter_mut().zip(&grads_sampled) {
                    *gi = wi * gs;
                }
            }
        }
        if l1_scale > 0.0 {
            for (g, &c) in grads.iter_mut().zip(&controls) {
                *g += l1_scale * sign(c);
                loss += l1_scale * c.abs();
            }
        }
        adam.step(&mut controls, &grads);
        if step % trace_every == 0 || step + 1 == config.steps {
            trace.push((step, loss));
        }
    }

    let out = (0..control_points)
        .map(|i| {
            NetworkParams::from_f64(arch, &controls[i * len..(i + 1) * len])
                .expect("arch matches")
        })
        .collect();
    (out, trace)
}

/// Curve trainer for the color networks, uniform over each frame's
/// reconstructed voxels.
fn train_curve_attributes(
    targets: &[ColorTarget],
    bits: u8,
    arch: &NetworkArch,
    config: &AttrTrainConfig,
    control_points: usize,
    total_original_points: u64,
    t_count: u16,
) -> (Vec<NetworkParams>, LossTrace) {
    let engine = Engine::new(arch);
    let len = arch.param_count();
    let mut rng = CounterRng::new(config.seed);
    let mut controls = vec![0.0f64; control_points * len];
    for i in 0..control_points {
        let init = NetworkParams::initialize(arch, &mut rng).flatten_f64();
        controls[i * len..(i + 1) * len].copy_from_slice(&init);
    }
    let mut adam = AdamState::new(controls.len(), config.schedule(), config.weight_decay);
    let degree = control_points - 1;
    let weights: Vec<Vec<f64>> = (0..t_count)
        .map(|t| bernstein_weights(degree, t, t_count))
        .collect();
    let l1_scale = if config.l1_weight > 0.0 {
        config.l1_weight / total_original_points as f64
    } else {
        0.0
    };

    let n = config.batch_size;
    let mut coords = vec![0.0f64; n * 3];
    let mut expected = vec![[0.0f64; 3]; n];
    let mut sampled = vec![0.0f64; len];
    let trace_every = (config.steps / 100).max(1);
    let mut trace = LossTrace::new();

    for step in 0..config.steps {
        let t = rng.below(t_count as u64) as usize;
        let frame_targets = &targets[t];
        for i in 0..n {
            let vi = rng.below(frame_targets.len() as u64) as usize;
            let v = frame_targets.voxels[vi];
            for a in 0..3 {
                coords[i * 3 + a] = normalize_coord(v[a], bits);
            }
            expected[i] = frame_targets.colors[vi];
        }
        let w = &weights[t];
        sampled.fill(0.0);
        for (ci, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                let c = &controls[ci * len..(ci + 1) * len];
                for (s, v) in sampled.iter_mut().zip(c) {
                    *s += wi * v;
                }
            }
        }
        let expected_ref = &expected;
        let (mut loss, grads_sampled) = batch_loss_and_grads(
            &engine,
            &sampled,
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
        let mut grads = vec![0.0f64; controls.len()];
        for (ci, wi) in w.iter().enumerate() {
            if *wi != 0.0 {
                let g = &mut grads[ci * len..(ci + 1) * len];
                for (gi, gs) in g.iter_mut().zip(&grads_sampled) {
                    *gi = wi * gs;
                }
            }
        }
        if l1_scale > 0.0 {
            for (g, &c) in grads.iter_mut().zip(&controls) {
                *g += l1_scale * sign(c);
                loss += l1_scale * c.abs();
            }
        }
        adam.step(&mut controls, &grads);
        if step % trace_every == 0 || step + 1 == config.steps {
            trace.push((step, loss));
        }
    }

    let out = (0..control_points)
        .map(|i| {
            NetworkParams::from_f64(arch, &controls[i * len..(i + 1) * len])
                .expect("arch matches")
        })
        .collect();
    (out, trace)
}

fn encode_curve(
    group: &FrameGroup,
    settings: &EncoderSettings,
    with_attrs: bool,
    cfg: BezierConfig,
) -> Result<EncodeOutcome, EncodeError> {
    let t_count = group.len();
    if t_count < 2 {
        return Err(EncodeError::CurveNeedsFrames);
    }
    let p = cfg.control_points;
    if p < 2 || p > t_count || p > MAX_BEZIER_DEGREE + 1 {
        return Err(EncodeError::BadControlPoints {
            got: p,
            frames: t_count,
        });
    }
    let bits = group.resolution_bits();
    let cube_sets: Vec<CubeSet> = group
        .frames()
        .iter()
        .map(|f| build_cube_set(f, settings.cube_bits))
        .collect::<Result<_, _>>()?;
    let plans: Vec<SamplingPlan> = group
        .frames()
        .iter()
        .zip(&cube_sets)
        .map(|(f, c)| {
            make_sampling_plan_counts(f.len() as u64, c.candidate_count(), settings.geom.occupied_ratio)
        })
        .collect::<Result<_, _>>()?;

    let config = GeomTrainConfig {
        seed: geom_seed(settings.seed, 0),
        ..settings.geom.clone()
    };
    let (controls, geom_trace) =
        train_curve_geometry(group, &cube_sets, &plans, &settings.geom_arch, &config, p);
    let quantized: Vec<QuantizedParams> = controls
        .iter()
        .map(|c| quantize(c, settings.geom_step))
        .collect();
    let decoded: Vec<NetworkParams> = quantized.iter().map(dequantize).collect();

    let mut sections = Vec::new();
    let mut thresholds = Vec::new();
    let mut reconstructions = Vec::new();
    for (t, frame) in group.frames().iter().enumerate() {
        let params_t = bezier_sample(&decoded, t as u16, t_count as u16);
        let voxels: Vec<[u32; 3]> = cube_sets[t].iter_candidates().collect();
        let ops = occupancy_probabilities_for(&params_t, &voxels, bits, None);
        let tau = fine_tune_threshold_ops(&ops, frame, settings.threshold_steps)?;
        let fixed = threshold_to_fixed(tau);
        let recon = reconstruct_from_ops(&ops, bits, threshold_from_fixed(fixed));
        if recon.is_empty() {
            return Err(EncodeError::EmptyFrame { frame: t });
        }
        thresholds.push(fixed);
        sections.push(Section {
            kind: SectionKind::CubeMap,
            index: t as u16,
            payload: encode_cube_map(cube_sets[t].cubes(), settings.cube_bits),
        });
        reconstructions.push(recon);
    }
    for (i, q) in quantized.iter().enumerate() {
        sections.push(Section {
            kind: SectionKind::GeometryParams,
            index: i as u16,
            payload: encode_indices(&q.flatten()),
        });
    }

    let mut attr_traces = Vec::new();
    if with_attrs {
        let targets: Vec<ColorTarget> = group
            .frames()
            .iter()
            .zip(&reconstructions)
            .map(|(orig, recon)| build_color_targets(recon, orig))
            .collect::<Result<_, _>>()?;
        let config = AttrTrainConfig {
            seed: attr_seed(settings.seed, 0),
            ..settings.attr.clone()
        };
        let (attr_controls, attr_trace) = train_curve_attributes(
            &targets,
            bits,
            &settings.attr_arch,
            &config,
            p,
            group.total_points(),
            t_count as u16,
        );
        let attr_quantized: Vec<QuantizedParams> = attr_controls
            .iter()
            .map(|c| quantize(c, settings.attr_step))
            .collect();
        let attr_decoded: Vec<NetworkParams> = attr_quantized.iter().map(dequantize).collect();
        for (t, recon) in reconstructions.iter_mut().enumerate() {
            let params_t = bezier_sample(&attr_decoded, t as u16, t_count as u16);
            *recon = reconstruct_attributes(&params_t, recon, None);
        }
        for (i, q) in attr_quantized.iter().enumerate() {
            sections.push(Section {
                kind: SectionKind::AttributeParams,
                index: i as u16,
                payload: encode_indices(&q.flatten()),
            });
        }
        attr_traces.push(attr_trace);
    }

    let frames = reconstructions
        .into_iter()
        .enumerate()
        .map(|(t, reconstruction)| FrameResult {
            reconstruction,
            threshold: threshold_from_fixed(thresholds[t]),
            geom_indices: Vec::new(),
            attr_indices: None,
        })
        .collect();
    let header = make_header(
        group,
        settings,
        StreamMode::Curve,
        with_attrs,
        p as u8,
        &settings.geom_arch,
        &settings.attr_arch,
        thresholds,
    );
    Ok(EncodeOutcome {
        stream: CodedStream { header, sections },
        frames,
        geom_traces: vec![geom_trace],
        attr_traces,
    })
}

fn find_section(
    stream: &CodedStream,
    kind: SectionKind,
    index: u16,
) -> Result<&Section, DecodeError> {
    stream
        .sections
        .iter()
        .find(|s| s.kind == kind && s.index == index)
        .ok_or(DecodeError::MissingSection {
            kind: kind.label(),
            index,
        })
}

/// Decodes a stream back into reconstructed frames. Requires nothing
/// beyond the stream bytes themselves.
pub fn decode_group(stream: &CodedStream) -> Result<DecodeOutcome, DecodeError> {
    let h = &stream.header;
    let t_count = h.frame_count;
    let grid = crate::partition::GridParams::new(h.resolution_bits, h.cube_bits)
        .expect("header validated");
    if h.attr_arch.is_none()
        && stream
            .sections
            .iter()
            .any(|s| s.kind == SectionKind::AttributeParams)
    {
        return Err(DecodeError::UnexpectedAttributes);
    }

    let cube_sets: Vec<CubeSet> = (0..t_count)
        .map(|t| {
            let s = find_section(stream, SectionKind::CubeMap, t)?;
            let cubes = decode_cube_map(&s.payload, h.cube_bits).map_err(StreamError::from)?;
            Ok(CubeSet::from_cubes(grid, cubes))
        })
        .collect::<Result<_, DecodeError>>()?;

    let geom_count = h.geom_arch.param_count();
    let attr_count = h.attr_arch.as_ref().map(|a| a.param_count()).unwrap_or(0);

    let mut frames = Vec::with_capacity(t_count as usize);
    let mut geom_indices_out = Vec::with_capacity(t_count as usize);

    match h.mode {
        StreamMode::Intra | StreamMode::Residual => {
            let mut geom_state: Option<Vec<i32>> = None;
            let mut attr_state: Option<Vec<i32>> = None;
            for t in 0..t_count {
                let s = find_section(stream, SectionKind::GeometryParams, t)?;
                let decoded_idx =
                    decode_indices(&s.payload, geom_count).map_err(StreamError::from)?;
                let absolute = match (&h.mode, &geom_state) {
                    (StreamMode::Residual, Some(prev)) => prev
                        .iter()
                        .zip(&decoded_idx)
                        .map(|(&p, &d)| p.wrapping_add(d))
                        .collect(),
                    _ => decoded_idx,
                };
                let q = QuantizedParams::unflatten(&h.geom_arch, h.geom_step, &absolute)?;
                let params = dequantize(&q);
                let voxels: Vec<[u32; 3]> = cube_sets[t as usize].iter_candidates().collect();
                let ops =
                    occupancy_probabilities_for(&params, &voxels, h.resolution_bits, None);
                let tau = threshold_from_fixed(h.thresholds[t as usize]);
                let mut recon = reconstruct_from_ops(&ops, h.resolution_bits, tau);
                geom_state = Some(absolute.clone());
                geom_indices_out.push(absolute);

                if let Some(attr_arch) = &h.attr_arch {
                    let s = find_section(stream, SectionKind::AttributeParams, t)?;
                    let decoded_idx =
                        decode_indices(&s.payload, attr_count).map_err(StreamError::from)?;
                    let absolute: Vec<i32> = match (&h.mode, &attr_state) {
                        (StreamMode::Residual, Some(prev)) => prev
                            .iter()
                            .zip(&decoded_idx)
                            .map(|(&p, &d)| p.wrapping_add(d))
                            .collect(),
                        _ => decoded_idx,
                    };
                    let q = QuantizedParams::unflatten(attr_arch, h.attr_step, &absolute)?;
                    recon = reconstruct_attributes(&dequantize(&q), &recon, None);
                    attr_state = Some(absolute);
                }
                frames.push(recon);
            }
        }
        StreamMode::Curve => {
            let p = h.control_points as usize;
            let mut controls = Vec::with_capacity(p);
            for i in 0..p {
                let s = find_section(stream, SectionKind::GeometryParams, i as u16)?;
                let idx = decode_indices(&s.payload, geom_count).map_err(StreamError::from)?;
                controls.push(dequantize(&QuantizedParams::unflatten(
                    &h.geom_arch,
                    h.geom_step,
                    &idx,
                )?));
            }
            let attr_controls = match &h.attr_arch {
                Some(arch) => {
                    let mut out = Vec::with_capacity(p);
                    for i in 0..p {
                        let s = find_section(stream, SectionKind::AttributeParams, i as u16)?;
                        let idx =
                            decode_indices(&s.payload, attr_count).map_err(StreamError::from)?;
                        out.push(dequantize(&QuantizedParams::unflatten(
                            arch,
                            h.attr_step,
                            &idx,
                        )?));
                    }
                    Some(out)
                }
                None => None,
            };
            for t in 0..t_count {
                let params_t = bezier_sample(&controls, t, t_count);
                let voxels: Vec<[u32; 3]> = cube_sets[t as usize].iter_candidates().collect();
                let ops =
                    occupancy_probabilities_for(&params_t, &voxels, h.resolution_bits, None);
                let tau = threshold_from_fixed(h.thresholds[t as usize]);
                let mut recon = reconstruct_from_ops(&ops, h.resolution_bits, tau);
                if let Some(ac) = &attr_controls {
                    let attr_t = bezier_sample(ac, t, t_count);
                    recon = reconstruct_attributes(&attr_t, &recon, None);
                }
                geom_indices_out.push(Vec::new());
                frames.push(recon);
            }
        }
        StreamMode::FourD => {
            let s = find_section(stream, SectionKind::GeometryParams, 0)?;
            let idx = decode_indices(&s.payload, geom_count).map_err(StreamError::from)?;
            let params = dequantize(&QuantizedParams::unflatten(
                &h.geom_arch,
                h.geom_step,
                &idx,
            )?);
            let attr_params = match &h.attr_arch {
                Some(arch) => {
                    let s = find_section(stream, SectionKind::AttributeParams, 0)?;
                    let aidx = decode_indices(&s.payload, attr_count).map_err(StreamError::from)?;
                    Some(dequantize(&QuantizedParams::unflatten(
                        arch,
                        h.attr_step,
                        &aidx,
                    )?))
                }
                None => None,
            };
            for t in 0..t_count {
                let voxels: Vec<[u32; 3]> = cube_sets[t as usize].iter_candidates().collect();
                let ops = occupancy_probabilities_for(
                    &params,
                    &voxels,
                    h.resolution_bits,
                    Some((t, t_count)),
                );
                let tau = threshold_from_fixed(h.thresholds[t as usize]);
                let mut recon = reconstruct_from_ops(&ops, h.resolution_bits, tau);
                if let Some(ap) = &attr_params {
                    recon = reconstruct_attributes(ap, &recon, Some((t, t_count)));
                }
                geom_indices_out.push(idx.clone());
                frames.push(recon);
            }
        }
    }

    Ok(DecodeOutcome {
        frames,
        transform: h.transform,
        geom_indices: geom_indices_out,
    })
}

#[cfg(test)]
mod tests;

