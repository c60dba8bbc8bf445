//! PLY reading and writing.
//!
//! Reads ASCII and binary-little-endian PLY files whose vertex element
//! carries `x,y,z` as 32-bit floats and optionally `red,green,blue` as
//! 8-bit unsigned. Extra scalar vertex properties are skipped. Writing
//! always produces binary-little-endian.

use super::{RawCloud, VoxelizedCloud};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("malformed header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("unsupported property at line {line}: {property}")]
    UnsupportedProperty { line: usize, property: String },
    #[error("truncated payload: vertex {vertex} of {total} missing (byte offset {offset})")]
    TruncatedPayload {
        vertex: usize,
        total: usize,
        offset: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    ty: ScalarType,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
    // line of the first list property, if any (lists make the element unskippable)
    list_line: Option<usize>,
}

#[derive(Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_start: usize, // byte offset just past "end_header\n"
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut lines = Vec::new();
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or(PlyError::MalformedHeader {
                line: line_no + 1,
                reason: "missing end_header".into(),
            })?;
        let raw = &bytes[pos..end];
        let text = std::str::from_utf8(raw)
            .map_err(|_| PlyError::MalformedHeader {
                line: line_no + 1,
                reason: "non-UTF-8 header line".into(),
            })?
            .trim_end_matches('\r')
            .to_string();
        pos = end + 1;
        line_no += 1;
        let is_end = text.trim() == "end_header";
        lines.push((line_no, text));
        if is_end {
            break;
        }
        if line_no > 10_000 {
            return Err(PlyError::MalformedHeader {
                line: line_no,
                reason: "missing end_header".into(),
            });
        }
    }

    let mut it = lines.iter();
    match it.next() {
        Some((_, magic)) if magic.trim() == "ply" => {}
        Some((line, _)) => {
            return Err(PlyError::MalformedHeader {
                line: *line,
                reason: "expected 'ply' magic".into(),
            })
        }
        None => {
            return Err(PlyError::MalformedHeader {
                line: 1,
                reason: "empty input".into(),
            })
        }
    }

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (line, text) in it {
        let line = *line;
        let mut tok = text.split_whitespace();
        match tok.next() {
            None => continue,
            Some("comment") | Some("obj_info") => continue,
            Some("end_header") => break,
            Some("format") => {
                let kind = tok.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => {
                        return Err(PlyError::MalformedHeader {
                            line,
                            reason: format!("unsupported format '{other}'"),
                        })
                    }
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| PlyError::MalformedHeader {
                    line,
                    reason: "element without name".into(),
                })?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::MalformedHeader {
                        line,
                        reason: "element without count".into(),
                    })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    list_line: None,
                });
            }
            Some("property") => {
                let elem = elements.last_mut().ok_or_else(|| PlyError::MalformedHeader {
                    line,
                    reason: "property before any element".into(),
                })?;
                let first = tok.next().unwrap_or("");
                if first == "list" {
                    if elem.list_line.is_none() {
                        elem.list_line = Some(line);
                    }
                    continue;
                }
                let ty = ScalarType::parse(first).ok_or_else(|| PlyError::UnsupportedProperty {
                    line,
                    property: format!("unknown type '{first}'"),
                })?;
                let name = tok.next().ok_or_else(|| PlyError::MalformedHeader {
                    line,
                    reason: "property without name".into(),
                })?;
                elem.properties.push(Property {
                    name: name.to_string(),
                    ty,
                });
            }
            Some(other) => {
                return Err(PlyError::MalformedHeader {
                    line,
                    reason: format!("unexpected keyword '{other}'"),
                })
            }
        }
    }

    let format = format.ok_or(PlyError::MalformedHeader {
        line: 1,
        reason: "missing format line".into(),
    })?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
    })
}

struct VertexLayout {
    x: usize,
    y: usize,
    z: usize,
    rgb: Option<[usize; 3]>,
    properties: Vec<Property>,
    row_size: usize,
}

fn vertex_layout(elem: &Element, header_line: usize) -> Result<VertexLayout, PlyError> {
    if let Some(line) = elem.list_line {
        return Err(PlyError::UnsupportedProperty {
            line,
            property: "list property in vertex element".into(),
        });
    }
    let find = |name: &str| elem.properties.iter().position(|p| p.name == name);
    let require_f32 = |name: &str| -> Result<usize, PlyError> {
        let idx = find(name).ok_or_else(|| PlyError::MalformedHeader {
            line: header_line,
            reason: format!("vertex element lacks property '{name}'"),
        })?;
        if elem.properties[idx].ty != ScalarType::F32 {
            return Err(PlyError::UnsupportedProperty {
                line: header_line,
                property: format!("'{name}' must be 32-bit float"),
            });
        }
        Ok(idx)
    };
    let x = require_f32("x")?;
    let y = require_f32("y")?;
    let z = require_f32("z")?;

    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            for idx in [r, g, b] {
                if elem.properties[idx].ty != ScalarType::U8 {
                    return Err(PlyError::UnsupportedProperty {
                        line: header_line,
                        property: format!("'{}' must be 8-bit unsigned", elem.properties[idx].name),
                    });
                }
            }
            Some([r, g, b])
        }
        (None, None, None) => None,
        _ => {
            return Err(PlyError::MalformedHeader {
                line: header_line,
                reason: "partial red/green/blue property set".into(),
            })
        }
    };
    let row_size = elem.properties.iter().map(|p| p.ty.size()).sum();
    Ok(VertexLayout {
        x,
        y,
        z,
        rgb,
        properties: elem.properties.clone(),
        row_size,
    })
}

fn read_scalar_le(bytes: &[u8], ty: ScalarType) -> f64 {
    match ty {
        ScalarType::I8 => bytes[0] as i8 as f64,
        ScalarType::U8 => bytes[0] as f64,
        ScalarType::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        ScalarType::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
        ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
    }
}

/// Parses a PLY byte buffer into a raw cloud, preserving file order.
pub fn parse_ply(bytes: &[u8]) -> Result<RawCloud, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or(PlyError::MalformedHeader {
            line: 1,
            reason: "no vertex element".into(),
        })?;
    let elem = &header.elements[vertex_pos];
    let layout = vertex_layout(elem, 1)?;

    let mut positions = Vec::with_capacity(elem.count);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(elem.count));

    match header.format {
        Format::Ascii => {
            let body = std::str::from_utf8(&bytes[header.body_start..]).map_err(|_| {
                PlyError::MalformedHeader {
                    line: 0,
                    reason: "non-UTF-8 ASCII body".into(),
                }
            })?;
            let mut rows = body.lines().filter(|l| !l.trim().is_empty());
            // skip rows of elements declared before vertex
            for e in header.elements.iter().take(vertex_pos) {
                for _ in 0..e.count {
                    rows.next();
                }
            }
            for v in 0..elem.count {
                let row = rows.next().ok_or(PlyError::TruncatedPayload {
                    vertex: v,
                    total: elem.count,
                    offset: bytes.len(),
                })?;
                let fields: Vec<&str> = row.split_whitespace().collect();
                if fields.len() < layout.properties.len() {
                    return Err(PlyError::TruncatedPayload {
                        vertex: v,
                        total: elem.count,
                        offset: bytes.len(),
                    });
                }
                let get = |idx: usize| -> Result<f64, PlyError> {
                    fields[idx].parse::<f64>().map_err(|_| PlyError::MalformedHeader {
                        line: 0,
                        reason: format!("bad numeric field '{}' in vertex {v}", fields[idx]),
                    })
                };
                positions.push([get(layout.x)?, get(layout.y)?, get(layout.z)?]);
                if let (Some([r, g, b]), Some(out)) = (layout.rgb, colors.as_mut()) {
                    out.push([get(r)? as u8, get(g)? as u8, get(b)? as u8]);
                }
            }
        }
        Format::BinaryLittleEndian => {
            let mut offset = header.body_start;
            // skip scalar-only elements declared before vertex
            for e in header.elements.iter().take(vertex_pos) {
                if let Some(line) = e.list_line {
                    return Err(PlyError::UnsupportedProperty {
                        line,
                        property: format!("list property in element '{}' before vertex", e.name),
                    });
                }
                let row: usize = e.properties.iter().map(|p| p.ty.size()).sum();
                offset += row * e.count;
            }
            // per-property byte offsets within a row
            let mut prop_offsets = Vec::with_capacity(layout.properties.len());
            let mut acc = 0usize;
            for p in &layout.properties {
                prop_offsets.push(acc);
                acc += p.ty.size();
            }
            for v in 0..elem.count {
                if offset + layout.row_size > bytes.len() {
                    return Err(PlyError::TruncatedPayload {
                        vertex: v,
                        total: elem.count,
                        offset,
                    });
                }
                let row = &bytes[offset..offset + layout.row_size];
                let get = |idx: usize| {
                    read_scalar_le(&row[prop_offsets[idx]..], layout.properties[idx].ty)
                };
                positions.push([get(layout.x), get(layout.y), get(layout.z)]);
                if let (Some([r, g, b]), Some(out)) = (layout.rgb, colors.as_mut()) {
                    out.push([get(r) as u8, get(g) as u8, get(b) as u8]);
                }
                offset += layout.row_size;
            }
        }
    }

    Ok(RawCloud { positions, colors })
}

/// Serializes real-valued positions (e.g. de-voxelized output) as
/// binary-little-endian PLY with 32-bit float coordinates.
pub fn write_ply_raw(cloud: &RawCloud) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let row = 12 + if cloud.colors.is_some() { 3 } else { 0 };
    let mut out = Vec::with_capacity(header.len() + row * cloud.len());
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.positions.iter().enumerate() {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(cols) = &cloud.colors {
            out.extend_from_slice(&cols[i]);
        }
    }
    out
}

/// Serializes a voxelized cloud as binary-little-endian PLY.
pub fn write_ply(cloud: &VoxelizedCloud) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.has_colors() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");

    let row = 12 + if cloud.has_colors() { 3 } else { 0 };
    let mut out = Vec::with_capacity(header.len() + row * cloud.len());
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.points().iter().enumerate() {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(cols) = cloud.colors() {
            out.extend_from_slice(&cols[i]);
        }
    }
    out
}
