//! Self-describing container format plus lossless entropy coding of
//! quantized parameter indices and the non-empty-cube map.
//!
//! The wire layout is documented field by field in `docs/FORMAT.md`.

mod bytes;
mod cubemap;
mod params;
mod rangecoder;

pub use bytes::ByteError;
pub use cubemap::{decode_cube_map, encode_cube_map, MAX_CUBE_BITS};
pub use params::{decode_indices, encode_indices};
pub use rangecoder::CoderError;

use crate::neuralnet::{Activation, NetworkArch};
use crate::pointcloud::VoxelTransform;
use bytes::{ByteReader, ByteWriter};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"VOXC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("bad magic {0:02x?}, not a coded stream")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },
    #[error("invalid header field {field}: {value}")]
    InvalidField { field: &'static str, value: u64 },
    #[error("section overruns the stream: {0}")]
    Bytes(#[from] ByteError),
    #[error("entropy payload: {0}")]
    Coder(#[from] CoderError),
    #[error("{0} trailing bytes after the last section")]
    TrailingBytes(usize),
}

/// How the frames of a stream were coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// every frame coded independently (single frames are T = 1)
    Intra,
    /// frame 0 absolute, later frames as parameter-index deltas
    Residual,
    /// one parameter curve; per-frame networks sampled from control points
    Curve,
    /// one spatio-temporal network for the whole group
    FourD,
}

impl StreamMode {
    fn to_byte(self) -> u8 {
        match self {
            StreamMode::Intra => 0,
            StreamMode::Residual => 1,
            StreamMode::Curve => 2,
            StreamMode::FourD => 3,
        }
    }

    fn from_byte(b: u8) -> Result<Self, StreamError> {
        Ok(match b {
            0 => StreamMode::Intra,
            1 => StreamMode::Residual,
            2 => StreamMode::Curve,
            3 => StreamMode::FourD,
            other => {
                return Err(StreamError::InvalidField {
                    field: "mode",
                    value: other as u64,
                })
            }
        })
    }
}

impl std::fmt::Display for StreamMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StreamMode::Intra => "intra",
            StreamMode::Residual => "residual",
            StreamMode::Curve => "curve",
            StreamMode::FourD => "4d",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    CubeMap,
    GeometryParams,
    AttributeParams,
}

impl SectionKind {
    fn to_byte(self) -> u8 {
        match self {
            SectionKind::CubeMap => 0,
            SectionKind::GeometryParams => 1,
            SectionKind::AttributeParams => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self, StreamError> {
        Ok(match b {
            0 => SectionKind::CubeMap,
            1 => SectionKind::GeometryParams,
            2 => SectionKind::AttributeParams,
            other => {
                return Err(StreamError::InvalidField {
                    field: "section kind",
                    value: other as u64,
                })
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            SectionKind::CubeMap => "cube-map",
            SectionKind::GeometryParams => "geometry-params",
            SectionKind::AttributeParams => "attribute-params",
        }
    }
}

/// One entropy-coded payload. `index` is the frame for per-frame sections
/// and the control-point index for curve parameter sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub kind: SectionKind,
    pub index: u16,
    pub payload: Vec<u8>,
}

/// Everything the decoder needs besides the entropy payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub mode: StreamMode,
    pub resolution_bits: u8,
    pub cube_bits: u8,
    pub frame_count: u16,
    /// curve mode: number of control points, else 0
    pub control_points: u8,
    pub geom_arch: NetworkArch,
    pub attr_arch: Option<NetworkArch>,
    pub geom_step: f64,
    pub attr_step: f64,
    pub transform: VoxelTransform,
    /// per-frame occupancy threshold, 16-bit fixed point over (0, 1)
    pub thresholds: Vec<u16>,
}

/// Fixed-point helpers for the serialized threshold.
pub fn threshold_to_fixed(tau: f64) -> u16 {
    ((tau * 65536.0).round() as i64).clamp(1, 65535) as u16
}

pub fn threshold_from_fixed(fixed: u16) -> f64 {
    fixed as f64 / 65536.0
}

/// A complete coded stream held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedStream {
    pub header: StreamHeader,
    pub sections: Vec<Section>,
}

impl CodedStream {
    pub fn total_bytes(&self) -> usize {
        self.assemble().len()
    }

    pub fn section_bytes(&self, kind: SectionKind) -> usize {
        self.sections
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.payload.len())
            .sum()
    }

    /// Serializes header and sections to the wire format.
    pub fn assemble(&self) -> Vec<u8> {
        let h = &self.header;
        let mut w = ByteWriter::new();
        w.bytes(&MAGIC);
        w.u16(VERSION);
        w.u8(h.mode.to_byte());
        let mut flags = 0u8;
        if h.attr_arch.is_some() {
            flags |= 1;
        }
        w.u8(flags);
        w.u8(h.resolution_bits);
        w.u8(h.cube_bits);
        w.u16(h.frame_count);
        w.u8(h.control_points);
        w.u8(0); // reserved
        for a in 0..3 {
            w.f64(h.transform.scale[a]);
        }
        for a in 0..3 {
            w.f64(h.transform.offset[a]);
        }
        w.f64(h.geom_step);
        w.f64(h.attr_step);
        write_arch(&mut w, &h.geom_arch);
        if let Some(arch) = &h.attr_arch {
            write_arch(&mut w, arch);
        }
        for &t in &h.thresholds {
            w.u16(t);
        }
        w.u32(self.sections.len() as u32);
        for s in &self.sections {
            w.u8(s.kind.to_byte());
            w.u16(s.index);
            w.u64(s.payload.len() as u64);
            w.bytes(&s.payload);
        }
        w.into_vec()
    }

    /// Parses a wire-format stream; the exact inverse of [`assemble`].
    pub fn disassemble(data: &[u8]) -> Result<CodedStream, StreamError> {
        let mut r = ByteReader::new(data);
        let stream = Self::read_one(&mut r)?;
        if r.remaining() != 0 {
            return Err(StreamError::TrailingBytes(r.remaining()));
        }
        Ok(stream)
    }

    /// Parses a file holding one or more concatenated group streams.
    pub fn read_sequence(data: &[u8]) -> Result<Vec<CodedStream>, StreamError> {
        let mut r = ByteReader::new(data);
        let mut out = vec![Self::read_one(&mut r)?];
        while r.remaining() > 0 {
            out.push(Self::read_one(&mut r)?);
        }
        Ok(out)
    }

    fn read_one(r: &mut ByteReader) -> Result<CodedStream, StreamError> {
        let magic: [u8; 4] = r.bytes(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(StreamError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let mode = StreamMode::from_byte(r.u8()?)?;
        let flags = r.u8()?;
        let resolution_bits = r.u8()?;
        if !(1..=21).contains(&resolution_bits) {
            return Err(StreamError::InvalidField {
                field: "resolution bits",
                value: resolution_bits as u64,
            });
        }
        let cube_bits = r.u8()?;
        if cube_bits > resolution_bits || cube_bits > MAX_CUBE_BITS {
            return Err(StreamError::InvalidField {
                field: "cube bits",
                value: cube_bits as u64,
            });
        }
        let frame_count = r.u16()?;
        if frame_count == 0 {
            return Err(StreamError::InvalidField {
                field: "frame count",
                value: 0,
            });
        }
        let control_points = r.u8()?;
        if mode == StreamMode::Curve && !(2..=9).contains(&control_points) {
            return Err(StreamError::InvalidField {
                field: "control points",
                value: control_points as u64,
            });
        }
        let _reserved = r.u8()?;
        let mut transform = VoxelTransform::identity();
        for a in 0..3 {
            transform.scale[a] = r.f64()?;
        }
        for a in 0..3 {
            transform.offset[a] = r.f64()?;
        }
        let geom_step = r.f64()?;
        let attr_step = r.f64()?;
        let geom_arch = read_arch(r)?;
        let attr_arch = if flags & 1 != 0 {
            Some(read_arch(r)?)
        } else {
            None
        };
        let mut thresholds = Vec::with_capacity(frame_count as usize);
        for _ in 0..frame_count {
            thresholds.push(r.u16()?);
        }
        let n_sections = r.u32()?;
        let mut sections = Vec::with_capacity(n_sections as usize);
        for _ in 0..n_sections {
            let kind = SectionKind::from_byte(r.u8()?)?;
            let index = r.u16()?;
            let len = r.u64()? as usize;
            let payload = r.bytes(len)?.to_vec();
            sections.push(Section {
                kind,
                index,
                payload,
            });
        }
        Ok(CodedStream {
            header: StreamHeader {
                mode,
                resolution_bits,
                cube_bits,
                frame_count,
                control_points,
                geom_arch,
                attr_arch,
                geom_step,
                attr_step,
                transform,
                thresholds,
            },
            sections,
        })
    }
}

fn write_arch(w: &mut ByteWriter, arch: &NetworkArch) {
    w.u8(arch.input_dim as u8);
    w.u8(arch.posenc_levels_spatial as u8);
    w.u8(arch.posenc_levels_temporal as u8);
    w.u8(arch.residual_blocks as u8);
    w.u16(arch.inter_width as u16);
    w.u16(arch.intra_width as u16);
    w.u8(arch.output_dim as u8);
    w.u8(match arch.core_activation {
        Activation::Relu => 0,
        Activation::Sine => 1,
    });
    w.u8(arch.layer_norm as u8);
    w.f64(arch.sine_frequency);
}

fn read_arch(r: &mut ByteReader) -> Result<NetworkArch, StreamError> {
    let input_dim = r.u8()? as usize;
    if !(3..=4).contains(&input_dim) {
        return Err(StreamError::InvalidField {
            field: "input dim",
            value: input_dim as u64,
        });
    }
    let posenc_levels_spatial = r.u8()? as usize;
    let posenc_levels_temporal = r.u8()? as usize;
    if posenc_levels_spatial > 24 || posenc_levels_temporal > 24 {
        return Err(StreamError::InvalidField {
            field: "encoding levels",
            value: posenc_levels_spatial.max(posenc_levels_temporal) as u64,
        });
    }
    let residual_blocks = r.u8()? as usize;
    if residual_blocks > 32 {
        return Err(StreamError::InvalidField {
            field: "residual blocks",
            value: residual_blocks as u64,
        });
    }
    let inter_width = r.u16()? as usize;
    let intra_width = r.u16()? as usize;
    if inter_width == 0 || intra_width == 0 || inter_width > 8192 || intra_width > 8192 {
        return Err(StreamError::InvalidField {
            field: "hidden width",
            value: inter_width.max(intra_width) as u64,
        });
    }
    let output_dim = r.u8()? as usize;
    if !(output_dim == 1 || output_dim == 3) {
        return Err(StreamError::InvalidField {
            field: "output dim",
            value: output_dim as u64,
        });
    }
    let core_activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Sine,
        other => {
            return Err(StreamError::InvalidField {
                field: "activation",
                value: other as u64,
            })
        }
    };
    let layer_norm = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(StreamError::InvalidField {
                field: "layer norm",
                value: other as u64,
            })
        }
    };
    let sine_frequency = r.f64()?;
    Ok(NetworkArch {
        input_dim,
        posenc_levels_spatial,
        posenc_levels_temporal,
        residual_blocks,
        inter_width,
        intra_width,
        output_dim,
        core_activation,
        sine_frequency,
        layer_norm,
    })
}
