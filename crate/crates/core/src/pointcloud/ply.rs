//! Minimal PLY 1.0 reader/writer for colored vertex clouds.
//!
//! Reads ASCII and binary little-endian files whose `vertex` element carries
//! `x, y, z` and `red, green, blue`; any other elements and properties are
//! skipped. Writes `double` coordinates and `uchar` colors.

use std::fs;
use std::path::Path;

use super::{ColorSpace, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLe,
}

impl std::str::FromStr for PlyFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" => Ok(PlyFormat::Ascii),
            "binary" | "binary_le" | "binary_little_endian" => Ok(PlyFormat::BinaryLe),
            other => Err(Error::Argument(format!("unknown PLY format '{other}' (ascii | binary_le)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count_ty: Scalar, item_ty: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let line_start = offset;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(parse_err(line_start, "header not terminated by end_header"));
        };
        let raw = &bytes[offset..offset + nl];
        offset += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(line_start, "header line is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or("");
        if first {
            if keyword != "ply" {
                return Err(parse_err(line_start, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    Some("binary_big_endian") => {
                        return Err(parse_err(line_start, "binary_big_endian PLY is not supported"));
                    }
                    other => return Err(parse_err(line_start, format!("unknown format {other:?}"))),
                });
            }
            "element" => {
                let name = words.next().ok_or_else(|| parse_err(line_start, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_start, "element without a valid count"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            "property" => {
                let element =
                    elements.last_mut().ok_or_else(|| parse_err(line_start, "property before any element"))?;
                let ty = words.next().ok_or_else(|| parse_err(line_start, "property without type"))?;
                let prop = if ty == "list" {
                    let count_ty = words.next().and_then(Scalar::parse);
                    let item_ty = words.next().and_then(Scalar::parse);
                    match (count_ty, item_ty, words.next()) {
                        (Some(count_ty), Some(item_ty), Some(_)) => Property::List { count_ty, item_ty },
                        _ => return Err(parse_err(line_start, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| parse_err(line_start, format!("unknown type '{ty}'")))?;
                    let name = words.next().ok_or_else(|| parse_err(line_start, "property without name"))?;
                    Property::Scalar { name: name.to_string(), ty }
                };
                element.props.push(prop);
            }
            "end_header" => break,
            other => return Err(parse_err(line_start, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(0, "header has no format line"))?;
    Ok(Header { format, elements, body_offset: offset })
}

/// Sequential reader over the body in either encoding.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: PlyFormat,
}

impl Body<'_> {
    fn next_value(&mut self, ty: Scalar) -> Result<f64> {
        match self.format {
            PlyFormat::BinaryLe => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(parse_err(self.pos, "unexpected end of binary data"));
                }
                let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
            PlyFormat::Ascii => {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                let start = self.pos;
                while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(parse_err(start, "unexpected end of ASCII data"));
                }
                let tok = std::str::from_utf8(&self.bytes[start..self.pos])
                    .map_err(|_| parse_err(start, "non-UTF-8 token"))?;
                tok.parse::<f64>().map_err(|_| parse_err(start, format!("invalid number '{tok}'")))
            }
        }
    }

    fn skip_property(&mut self, prop: &Property) -> Result<()> {
        match prop {
            Property::Scalar { ty, .. } => {
                self.next_value(*ty)?;
            }
            Property::List { count_ty, item_ty } => {
                let at = self.pos;
                let n = self.next_value(*count_ty)?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(parse_err(at, "invalid list length"));
                }
                for _ in 0..n as usize {
                    self.next_value(*item_ty)?;
                }
            }
        }
        Ok(())
    }
}

/// Parse a PLY file image held in memory.
pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(0, "no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    let find = |name: &str| {
        vertex.props.iter().position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
    };
    let xyz = [find("x"), find("y"), find("z")];
    if xyz.iter().any(Option::is_none) {
        return Err(parse_err(0, "vertex element lacks x/y/z"));
    }
    let rgb = [find("red"), find("green"), find("blue")];
    if rgb.iter().any(Option::is_none) {
        return Err(Error::AttributesAbsent);
    }
    if vertex.count == 0 {
        return Err(Error::EmptyCloud);
    }

    let mut body = Body { bytes, pos: header.body_offset, format: header.format };
    for element in &header.elements[..vertex_pos] {
        for _ in 0..element.count {
            for prop in &element.props {
                body.skip_property(prop)?;
            }
        }
    }

    let mut geometry = Vec::with_capacity(vertex.count);
    let mut attributes = Vec::with_capacity(vertex.count);
    let mut row = vec![0.0; vertex.props.len()];
    for _ in 0..vertex.count {
        for (slot, prop) in row.iter_mut().zip(&vertex.props) {
            match prop {
                Property::Scalar { ty, .. } => *slot = body.next_value(*ty)?,
                Property::List { .. } => body.skip_property(prop)?,
            }
        }
        geometry.push(xyz.map(|i| row[i.unwrap()]));
        attributes.push(rgb.map(|i| row[i.unwrap()].clamp(0.0, 255.0)));
    }
    PointCloud::new(geometry, attributes, ColorSpace::Rgb)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ply(&bytes)
}

/// Serialize a cloud; colors are rounded to 8 bits here and nowhere else.
pub fn write_ply(pc: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if pc.color_space() != ColorSpace::Rgb {
        return Err(Error::State("PLY output expects an RGB cloud; convert from YCbCr first".into()));
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLe => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    )
    .into_bytes();
    let colors = pc.quantized_attributes();
    match format {
        PlyFormat::Ascii => {
            use std::fmt::Write;
            let mut s = String::with_capacity(pc.len() * 48);
            for (g, c) in pc.geometry().iter().zip(&colors) {
                let _ = writeln!(s, "{} {} {} {} {} {}", g[0], g[1], g[2], c[0], c[1], c[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyFormat::BinaryLe => {
            out.reserve(pc.len() * 27);
            for (g, c) in pc.geometry().iter().zip(&colors) {
                for v in g {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(c);
            }
        }
    }
    Ok(out)
}

pub fn save_ply(pc: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_ply(pc, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
