//! C ABI for the codec: opaque handles over coded streams and decoded
//! frame sets, status codes, and a thread-local last-error message.
//!
//! Every function is safe to call from any thread; handles must not be
//! shared across threads without external synchronization. All pointers
//! returned by the library stay valid until the owning handle is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use voxcodec::bitstream::CodedStream;
use voxcodec::dynamic::{
    decode_group, encode_group, BezierConfig, DynamicMode, EncoderSettings, FrameGroup,
};
use voxcodec::geomcodec::GeomTrainConfig;
use voxcodec::attrcodec::AttrTrainConfig;
use voxcodec::neuralnet::{Activation, NetworkArch};
use voxcodec::pointcloud::{
    group_transform, parse_ply, voxelize_with, write_ply, RawCloud, VoxelTransform, VoxelizedCloud,
};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum VcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Encode = 4,
    Stream = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn guard<F: FnOnce() -> VcStatus>(f: F) -> VcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            VcStatus::Internal
        }
    }
}

/// Copies the most recent error message of this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn vc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() - 1
    })
}

/// A parsed coded stream (one or more concatenated groups).
pub struct VcStream {
    groups: Vec<CodedStream>,
    total_bytes: usize,
}

/// Decoded frames of a stream.
pub struct VcFrames {
    frames: Vec<VoxelizedCloud>,
    transform: VoxelTransform,
    /// flattened x,y,z triples per frame
    points: Vec<Vec<u32>>,
    /// flattened r,g,b triples per frame (empty when geometry-only)
    colors: Vec<Vec<u8>>,
}

unsafe fn path_from(raw: *const c_char) -> Result<PathBuf, VcStatus> {
    if raw.is_null() {
        set_error("null path");
        return Err(VcStatus::InvalidArgument);
    }
    match CStr::from_ptr(raw).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(VcStatus::InvalidArgument)
        }
    }
}

fn parse_stream(data: &[u8], out: *mut *mut VcStream) -> VcStatus {
    match CodedStream::read_sequence(data) {
        Ok(groups) => {
            let handle = Box::new(VcStream {
                groups,
                total_bytes: data.len(),
            });
            unsafe { *out = Box::into_raw(handle) };
            VcStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            VcStatus::Stream
        }
    }
}

/// Parses a coded stream from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_read_file(
    path: *const c_char,
    out: *mut *mut VcStream,
) -> VcStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output handle");
            return VcStatus::InvalidArgument;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match std::fs::read(&path) {
            Ok(data) => parse_stream(&data, out),
            Err(e) => {
                set_error(&format!("{}: {e}", path.display()));
                VcStatus::Io
            }
        }
    })
}

/// Parses a coded stream from a byte buffer.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_read_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut VcStream,
) -> VcStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            set_error("null buffer");
            return VcStatus::InvalidArgument;
        }
        let slice = std::slice::from_raw_parts(data, len);
        parse_stream(slice, out)
    })
}

/// Frees a stream handle. Null is a no-op.
///
/// # Safety
/// `stream` must be a pointer returned by a `vc_stream_read_*` function,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_free(stream: *mut VcStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Total frame count across all groups of the stream.
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_frame_count(stream: *const VcStream) -> u16 {
    let s = &*stream;
    s.groups.iter().map(|g| g.header.frame_count).sum()
}

/// Grid resolution bits (N) of the first group.
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_resolution_bits(stream: *const VcStream) -> u8 {
    let s = &*stream;
    s.groups[0].header.resolution_bits
}

/// Cube partition bits (M) of the first group.
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_cube_bits(stream: *const VcStream) -> u8 {
    let s = &*stream;
    s.groups[0].header.cube_bits
}

/// Coding mode of the first group: 0 intra, 1 residual, 2 curve, 3 4d.
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_mode(stream: *const VcStream) -> u8 {
    use voxcodec::bitstream::StreamMode;
    let s = &*stream;
    match s.groups[0].header.mode {
        StreamMode::Intra => 0,
        StreamMode::Residual => 1,
        StreamMode::Curve => 2,
        StreamMode::FourD => 3,
    }
}

/// 1 when the stream carries color attributes.
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_has_attributes(stream: *const VcStream) -> u8 {
    let s = &*stream;
    s.groups[0].header.attr_arch.is_some() as u8
}

/// Stream size in bytes (the numerator of bits-per-point).
///
/// # Safety
/// `stream` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_total_bytes(stream: *const VcStream) -> usize {
    let s = &*stream;
    s.total_bytes
}

/// Decodes every frame of the stream.
///
/// # Safety
/// `stream` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vc_stream_decode(
    stream: *const VcStream,
    out: *mut *mut VcFrames,
) -> VcStatus {
    guard(|| {
        if stream.is_null() || out.is_null() {
            set_error("null handle");
            return VcStatus::InvalidArgument;
        }
        let s = &*stream;
        let mut frames = Vec::new();
        let mut transform = VoxelTransform::identity();
        for group in &s.groups {
            match decode_group(group) {
                Ok(decoded) => {
                    transform = decoded.transform;
                    frames.extend(decoded.frames);
                }
                Err(e) => {
                    set_error(&e.to_string());
                    return VcStatus::Stream;
                }
            }
        }
        let points = frames
            .iter()
            .map(|f| f.points().iter().flatten().copied().collect())
            .collect();
        let colors = frames
            .iter()
            .map(|f| {
                f.colors()
                    .map(|c| c.iter().flatten().copied().collect())
                    .unwrap_or_default()
            })
            .collect();
        *out = Box::into_raw(Box::new(VcFrames {
            frames,
            transform,
            points,
            colors,
        }));
        VcStatus::Ok
    })
}

/// Frees a decoded frame set. Null is a no-op.
///
/// # Safety
/// `frames` must be a pointer returned by `vc_stream_decode`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_free(frames: *mut VcFrames) {
    if !frames.is_null() {
        drop(Box::from_raw(frames));
    }
}

/// Number of decoded frames.
///
/// # Safety
/// `frames` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_count(frames: *const VcFrames) -> u16 {
    let f = &*frames;
    f.frames.len() as u16
}

/// Point count of one frame; 0 for an out-of-range index.
///
/// # Safety
/// `frames` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_point_count(frames: *const VcFrames, frame: u16) -> usize {
    let fs = &*frames;
    fs.frames.get(frame as usize).map(|f| f.len()).unwrap_or(0)
}

/// Borrowed pointer to the frame's voxel coordinates as x,y,z triples
/// (3 * point_count values). Null for an out-of-range index. Valid until
/// the handle is freed.
///
/// # Safety
/// `frames` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_points(frames: *const VcFrames, frame: u16) -> *const u32 {
    let fs = &*frames;
    fs.points
        .get(frame as usize)
        .map(|p| p.as_ptr())
        .unwrap_or(ptr::null())
}

/// Borrowed pointer to the frame's colors as r,g,b triples, or null when
/// the stream is geometry-only or the index is out of range.
///
/// # Safety
/// `frames` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_colors(frames: *const VcFrames, frame: u16) -> *const u8 {
    let fs = &*frames;
    match fs.colors.get(frame as usize) {
        Some(c) if !c.is_empty() => c.as_ptr(),
        _ => ptr::null(),
    }
}

/// De-voxelization transform of the stream (scale then offset per axis).
///
/// # Safety
/// `frames` must be a live handle; both outputs must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_transform(
    frames: *const VcFrames,
    scale_out: *mut f64,
    offset_out: *mut f64,
) {
    let fs = &*frames;
    let t = fs.transform;
    for a in 0..3 {
        *scale_out.add(a) = t.scale[a];
        *offset_out.add(a) = t.offset[a];
    }
}

/// Writes one decoded frame as a binary PLY file.
///
/// # Safety
/// `frames` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_frames_write_ply(
    frames: *const VcFrames,
    frame: u16,
    path: *const c_char,
) -> VcStatus {
    guard(|| {
        let path = match path_from(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let fs = &*frames;
        let f = match fs.frames.get(frame as usize) {
            Some(f) => f,
            None => {
                set_error("frame index out of range");
                return VcStatus::InvalidArgument;
            }
        };
        match std::fs::write(&path, write_ply(f)) {
            Ok(()) => VcStatus::Ok,
            Err(e) => {
                set_error(&format!("{}: {e}", path.display()));
                VcStatus::Io
            }
        }
    })
}

/// Encoder options mirroring the CLI defaults; produce one with
/// `vc_encode_options_default` and override fields as needed.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VcEncodeOptions {
    /// 0 intra/static, 1 residual, 2 curve, 3 4d
    pub mode: u8,
    pub resolution_bits: u8,
    pub cube_bits: u8,
    pub layer_norm: u8,
    pub geometry_only: u8,
    pub fresh_init: u8,
    pub geom_blocks: u8,
    pub attr_blocks: u8,
    pub control_points: u8,
    pub posenc_levels: u8,
    pub temporal_levels: u8,
    pub inter_width: u16,
    pub intra_width: u16,
    pub group_size: u16,
    pub threshold_steps: u32,
    pub batch_size: u32,
    pub geom_steps: u64,
    pub attr_steps: u64,
    pub seed: u64,
    pub l1_weight: f64,
    pub occupied_ratio: f64,
    pub focal_gamma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub geom_step_size: f64,
    pub attr_step_size: f64,
    pub sine_frequency: f64,
    pub steps_scale: f64,
}

/// Fills `out` with the default encoder options.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_encode_options_default(out: *mut VcEncodeOptions) {
    *out = VcEncodeOptions {
        mode: 0,
        resolution_bits: 10,
        cube_bits: 5,
        layer_norm: 1,
        geometry_only: 0,
        fresh_init: 0,
        geom_blocks: 2,
        attr_blocks: 3,
        control_points: 3,
        posenc_levels: 12,
        temporal_levels: 4,
        inter_width: 512,
        intra_width: 128,
        group_size: 32,
        threshold_steps: 30,
        batch_size: 4096,
        geom_steps: 1_200_000,
        attr_steps: 800_000,
        seed: 0,
        l1_weight: 1.0,
        occupied_ratio: 0.5,
        focal_gamma: 2.0,
        learning_rate: 1e-3,
        weight_decay: 1e-4,
        geom_step_size: 1.0 / 1024.0,
        attr_step_size: 1.0 / 4096.0,
        sine_frequency: 64.0,
        steps_scale: 1.0,
    };
}

fn settings_from(opts: &VcEncodeOptions) -> Result<(EncoderSettings, usize), String> {
    let mode = match opts.mode {
        0 => DynamicMode::Intra,
        1 => DynamicMode::Residual,
        2 => DynamicMode::Curve(BezierConfig {
            control_points: opts.control_points as usize,
        }),
        3 => DynamicMode::FourD,
        other => return Err(format!("unknown mode {other}")),
    };
    if opts.steps_scale <= 0.0 {
        return Err("steps_scale must be positive".into());
    }
    let scale = |steps: u64| ((steps as f64 * opts.steps_scale).round() as u64).max(1);
    let geom_arch = NetworkArch {
        input_dim: 3,
        posenc_levels_spatial: opts.posenc_levels as usize,
        posenc_levels_temporal: 0,
        residual_blocks: opts.geom_blocks as usize,
        inter_width: opts.inter_width as usize,
        intra_width: opts.intra_width as usize,
        output_dim: 1,
        core_activation: Activation::Relu,
        sine_frequency: opts.sine_frequency,
        layer_norm: opts.layer_norm != 0,
    };
    let attr_arch = NetworkArch {
        residual_blocks: opts.attr_blocks as usize,
        output_dim: 3,
        core_activation: Activation::Sine,
        ..geom_arch.clone()
    };
    let settings = EncoderSettings {
        mode,
        cube_bits: opts.cube_bits,
        seed: opts.seed,
        geom: GeomTrainConfig {
            l1_weight: opts.l1_weight,
            steps: scale(opts.geom_steps),
            batch_size: opts.batch_size as usize,
            occupied_ratio: opts.occupied_ratio,
            focal_gamma: opts.focal_gamma,
            seed: opts.seed,
            learning_rate: opts.learning_rate,
            lr_decay: 0.1,
            weight_decay: opts.weight_decay,
        },
        attr: AttrTrainConfig {
            l1_weight: opts.l1_weight,
            steps: scale(opts.attr_steps),
            batch_size: opts.batch_size as usize,
            seed: opts.seed,
            learning_rate: opts.learning_rate,
            lr_decay: 0.1,
            weight_decay: opts.weight_decay,
        },
        geom_arch,
        attr_arch,
        temporal_levels: opts.temporal_levels as usize,
        geom_step: opts.geom_step_size,
        attr_step: opts.attr_step_size,
        threshold_steps: opts.threshold_steps,
        geometry_only: opts.geometry_only != 0,
        fresh_init: opts.fresh_init != 0,
        transform: VoxelTransform::identity(),
    };
    Ok((settings, opts.group_size.max(1) as usize))
}

fn encode_frames(
    frames: Vec<VoxelizedCloud>,
    transform: VoxelTransform,
    settings: EncoderSettings,
    group_size: usize,
) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for (gi, chunk) in frames.chunks(group_size).enumerate() {
        let group = FrameGroup::new(chunk.to_vec()).map_err(|e| e.to_string())?;
        let mut settings = settings.clone();
        settings.transform = transform;
        if gi > 0 {
            settings.seed = voxcodec::rng::CounterRng::derive(
                settings.seed,
                0x6772_6f75_7000 + gi as u64,
            )
            .next_u64();
        }
        let outcome = encode_group(&group, &settings).map_err(|e| e.to_string())?;
        out.extend(outcome.stream.assemble());
    }
    Ok(out)
}

/// Encodes PLY files (one per frame, in order) into a coded stream file.
/// `opts` may be null for defaults.
///
/// # Safety
/// `inputs` must point to `input_count` NUL-terminated paths; `output`
/// must be a NUL-terminated path; `opts` null or valid.
#[no_mangle]
pub unsafe extern "C" fn vc_encode_files(
    inputs: *const *const c_char,
    input_count: usize,
    output: *const c_char,
    opts: *const VcEncodeOptions,
) -> VcStatus {
    guard(|| {
        if inputs.is_null() || input_count == 0 {
            set_error("no input files");
            return VcStatus::InvalidArgument;
        }
        let mut options = std::mem::MaybeUninit::<VcEncodeOptions>::uninit();
        vc_encode_options_default(options.as_mut_ptr());
        let options = if opts.is_null() {
            options.assume_init()
        } else {
            *opts
        };
        let (settings, group_size) = match settings_from(&options) {
            Ok(v) => v,
            Err(e) => {
                set_error(&e);
                return VcStatus::InvalidArgument;
            }
        };
        let out_path = match path_from(output) {
            Ok(p) => p,
            Err(s) => return s,
        };

        let mut raws = Vec::with_capacity(input_count);
        for i in 0..input_count {
            let path = match path_from(*inputs.add(i)) {
                Ok(p) => p,
                Err(s) => return s,
            };
            let data = match std::fs::read(&path) {
                Ok(d) => d,
                Err(e) => {
                    set_error(&format!("{}: {e}", path.display()));
                    return VcStatus::Io;
                }
            };
            match parse_ply(&data) {
                Ok(raw) => raws.push(raw),
                Err(e) => {
                    set_error(&format!("{}: {e}", path.display()));
                    return VcStatus::Parse;
                }
            }
        }
        let refs: Vec<&RawCloud> = raws.iter().collect();
        let transform = match group_transform(&refs, options.resolution_bits) {
            Ok(t) => t,
            Err(e) => {
                set_error(&e.to_string());
                return VcStatus::Parse;
            }
        };
        let frames: Result<Vec<VoxelizedCloud>, _> = raws
            .iter()
            .map(|r| voxelize_with(r, options.resolution_bits, &transform))
            .collect();
        let frames = match frames {
            Ok(f) => f,
            Err(e) => {
                set_error(&e.to_string());
                return VcStatus::Parse;
            }
        };
        match encode_frames(frames, transform, settings, group_size) {
            Ok(bytes) => match std::fs::write(&out_path, bytes) {
                Ok(()) => VcStatus::Ok,
                Err(e) => {
                    set_error(&format!("{}: {e}", out_path.display()));
                    VcStatus::Io
                }
            },
            Err(e) => {
                set_error(&e);
                VcStatus::Encode
            }
        }
    })
}

/// Encodes one frame from raw buffers: `points` as x,y,z voxel triples on
/// the `resolution_bits` grid of `opts`, `colors` as r,g,b triples or null
/// for geometry only. The stream is written to `output`.
///
/// # Safety
/// `points` must hold `3 * point_count` values; `colors` null or
/// `3 * point_count` bytes; `output` a NUL-terminated path; `opts` null or
/// valid.
#[no_mangle]
pub unsafe extern "C" fn vc_encode_points(
    points: *const u32,
    point_count: usize,
    colors: *const u8,
    output: *const c_char,
    opts: *const VcEncodeOptions,
) -> VcStatus {
    guard(|| {
        if points.is_null() || point_count == 0 {
            set_error("no points");
            return VcStatus::InvalidArgument;
        }
        let mut options = std::mem::MaybeUninit::<VcEncodeOptions>::uninit();
        vc_encode_options_default(options.as_mut_ptr());
        let options = if opts.is_null() {
            options.assume_init()
        } else {
            *opts
        };
        let (settings, group_size) = match settings_from(&options) {
            Ok(v) => v,
            Err(e) => {
                set_error(&e);
                return VcStatus::InvalidArgument;
            }
        };
        let out_path = match path_from(output) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let coords = std::slice::from_raw_parts(points, point_count * 3);
        let pts: Vec<[u32; 3]> = coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let cols = if colors.is_null() {
            None
        } else {
            let raw = std::slice::from_raw_parts(colors, point_count * 3);
            Some(raw.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
        };
        let cloud = match VoxelizedCloud::new(options.resolution_bits, pts, cols) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return VcStatus::InvalidArgument;
            }
        };
        match encode_frames(
            vec![cloud],
            VoxelTransform::identity(),
            settings,
            group_size,
        ) {
            Ok(bytes) => match std::fs::write(&out_path, bytes) {
                Ok(()) => VcStatus::Ok,
                Err(e) => {
                    set_error(&format!("{}: {e}", out_path.display()));
                    VcStatus::Io
                }
            },
            Err(e) => {
                set_error(&e);
                VcStatus::Encode
            }
        }
    })
}
