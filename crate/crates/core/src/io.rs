//! File formats: PLY point clouds, the SFL1 flow container, scene-pair
//! directories and plain-text `key=value` configs.
//!
//! SFL1 layout (little-endian):
//!
//! ```text
//! "SFL1"            4 bytes magic
//! n                 u32 point count
//! has_validity      u8 (0 or 1)
//! vectors           n x 3 x f32
//! validity          n x u8, present only when has_validity = 1
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{FlowField, PointCloud, PseudoLabelSet, Vec3};

pub const FLOW_MAGIC: &[u8; 4] = b"SFL1";
const FLOW_HEADER_LEN: usize = 9;

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(name: &str) -> Result<Scalar> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(malformed(format!("unknown property type {other:?}"))),
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
}

fn malformed(msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("malformed header: {msg}"))
}

fn count_mismatch(msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("element count mismatch: {msg}"))
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<bool> {
        line.clear();
        Ok(reader.read_line(line)? > 0)
    };
    if !next_line(&mut line)? || line.trim_end() != "ply" {
        return Err(malformed("missing 'ply' magic line"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(&mut line)? {
            return Err(malformed("missing end_header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(malformed(format!("unsupported version {version}")));
                }
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    "binary_big_endian" => return Err(Error::Format("unsupported format: binary_big_endian".into())),
                    other => return Err(malformed(format!("unknown format {other:?}"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| malformed(format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                element.properties.push(Property::List {
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                });
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                });
            }
            _ => return Err(malformed(format!("unexpected line {:?}", line.trim_end()))),
        }
    }
    let encoding = encoding.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header { encoding, elements })
}

/// Column positions of the vertex attributes we understand.
struct VertexLayout {
    position: [usize; 3],
    color: Option<([usize; 3], Scalar)>,
    normal: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout> {
    let find = |wanted: &str| {
        element.properties.iter().position(|p| match p {
            Property::Scalar { name, .. } => name == wanted,
            Property::List { .. } => false,
        })
    };
    let triple = |names: [&str; 3]| -> Option<[usize; 3]> { Some([find(names[0])?, find(names[1])?, find(names[2])?]) };
    if element.properties.iter().any(|p| matches!(p, Property::List { .. })) {
        return Err(malformed("list properties on the vertex element are not supported"));
    }
    let position = triple(["x", "y", "z"]).ok_or_else(|| malformed("vertex element lacks x, y, z"))?;
    let color = triple(["red", "green", "blue"]).map(|idx| {
        let ty = match &element.properties[idx[0]] {
            Property::Scalar { ty, .. } => *ty,
            Property::List { .. } => unreachable!("checked above"),
        };
        (idx, ty)
    });
    let normal = triple(["nx", "ny", "nz"]);
    Ok(VertexLayout {
        position,
        color,
        normal,
    })
}

fn color_channel(value: f64, ty: Scalar) -> f64 {
    match ty {
        Scalar::U8 => value / 255.0,
        Scalar::U16 => value / 65535.0,
        _ => value,
    }
}

fn build_cloud(rows: &[Vec<f64>], layout: &VertexLayout) -> PointCloud {
    let pick = |row: &[f64], idx: [usize; 3]| Vec3::new(row[idx[0]], row[idx[1]], row[idx[2]]);
    let positions = rows.iter().map(|r| pick(r, layout.position)).collect();
    let mut cloud = PointCloud::new(positions);
    if let Some((idx, ty)) = layout.color {
        cloud.colors = Some(
            rows.iter()
                .map(|r| pick(r, idx).map(|c| color_channel(c, ty)))
                .collect(),
        );
    }
    if let Some(idx) = layout.normal {
        cloud.normals = Some(rows.iter().map(|r| pick(r, idx)).collect());
    }
    cloud
}

fn read_ascii_body<R: BufRead>(reader: R, header: &Header) -> Result<Vec<Vec<f64>>> {
    let mut lines = reader.lines();
    let mut vertices = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        for k in 0..element.count {
            let line = loop {
                match lines.next() {
                    Some(line) => {
                        let line = line?;
                        if !line.trim().is_empty() {
                            break line;
                        }
                    }
                    None => {
                        return Err(count_mismatch(format!(
                            "element {:?} declares {} entries, file ends after {k}",
                            element.name, element.count
                        )))
                    }
                }
            };
            if !is_vertex {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad number {t:?} in vertex {k}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != element.properties.len() {
                return Err(Error::Format(format!(
                    "vertex {k} has {} values, expected {}",
                    values.len(),
                    element.properties.len()
                )));
            }
            vertices.push(values);
        }
    }
    Ok(vertices)
}

fn read_binary_body<R: Read>(mut reader: R, header: &Header) -> Result<Vec<Vec<f64>>> {
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let mut at = 0usize;
    let mut take = |len: usize, what: &str| -> Result<&[u8]> {
        let slice = body
            .get(at..at + len)
            .ok_or_else(|| count_mismatch(format!("file ends inside {what}")))?;
        at += len;
        Ok(slice)
    };
    let mut vertices = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        for _ in 0..element.count {
            let mut row = Vec::with_capacity(element.properties.len());
            for prop in &element.properties {
                match prop {
                    Property::Scalar { ty, .. } => row.push(ty.decode(take(ty.size(), &element.name)?)),
                    Property::List { count, item } => {
                        let n = count.decode(take(count.size(), &element.name)?);
                        if !(n >= 0.0) {
                            return Err(Error::Format("negative list length".into()));
                        }
                        take(n as usize * item.size(), &element.name)?;
                    }
                }
            }
            if is_vertex {
                vertices.push(row);
            }
        }
    }
    Ok(vertices)
}

/// Reads a PLY file (ascii or binary little-endian). Positions come from
/// `x, y, z`; optional `red, green, blue` (8-bit values are divided by 255)
/// and `nx, ny, nz` are attached when present. Other properties and elements
/// are skipped.
pub fn read_ply_from<R: BufRead>(mut reader: R) -> Result<PointCloud> {
    let header = read_header(&mut reader)?;
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| malformed("no vertex element"))?;
    let layout = vertex_layout(vertex)?;
    let rows = match header.encoding {
        PlyEncoding::Ascii => read_ascii_body(reader, &header)?,
        PlyEncoding::BinaryLittleEndian => read_binary_body(reader, &header)?,
    };
    Ok(build_cloud(&rows, &layout))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_ply_from(BufReader::new(file))
}

/// Colors are stored as 8-bit channels; values are rounded to the nearest
/// multiple of 1/255.
fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `cloud` as PLY with double-precision positions and normals and
/// 8-bit colors.
pub fn write_ply_to<W: Write>(cloud: &PointCloud, encoding: PlyEncoding, mut out: W) -> Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {format} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if cloud.colors.is_some() {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.normals.is_some() {
        writeln!(out, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    writeln!(out, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let color = cloud.colors.as_ref().map(|c| c[i].map(color_byte));
        let normal = cloud.normals.as_ref().map(|n| n[i]);
        match encoding {
            PlyEncoding::Ascii => {
                // `{}` on f64 prints the shortest string that parses back to
                // the same value
                write!(out, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(c) = color {
                    write!(out, " {} {} {}", c.x, c.y, c.z)?;
                }
                if let Some(n) = normal {
                    write!(out, " {} {} {}", n.x, n.y, n.z)?;
                }
                writeln!(out)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = color {
                    out.write_all(&[c.x, c.y, c.z])?;
                }
                if let Some(n) = normal {
                    for v in n.iter() {
                        out.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PlyEncoding) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    write_ply_to(cloud, encoding, BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// SFL1 flow files

fn encode_flow(vectors: &[Vec3], validity: Option<&[bool]>) -> Result<Vec<u8>> {
    let n = u32::try_from(vectors.len())
        .map_err(|_| Error::InvalidParameter(format!("{} vectors do not fit a u32 count", vectors.len())))?;
    let mut bytes = Vec::with_capacity(FLOW_HEADER_LEN + vectors.len() * 13);
    bytes.extend_from_slice(FLOW_MAGIC);
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.push(validity.is_some() as u8);
    for v in vectors {
        for c in v.iter() {
            bytes.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    if let Some(valid) = validity {
        bytes.extend(valid.iter().map(|&b| b as u8));
    }
    Ok(bytes)
}

/// Decoded SFL1 contents: vectors plus the optional validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFile {
    pub vectors: Vec<Vec3>,
    pub validity: Option<Vec<bool>>,
}

impl FlowFile {
    pub fn into_flow(self) -> FlowField {
        FlowField(self.vectors)
    }

    /// Labels with the stored mask, or all valid when the file has none.
    pub fn into_labels(self) -> PseudoLabelSet {
        let n = self.vectors.len();
        PseudoLabelSet {
            labels: self.vectors,
            valid: self.validity.unwrap_or_else(|| vec![true; n]),
        }
    }
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowFile> {
    if bytes.len() < 4 || &bytes[..4] != FLOW_MAGIC {
        return Err(Error::Format("bad magic: not an SFL1 flow file".into()));
    }
    if bytes.len() < FLOW_HEADER_LEN {
        return Err(Error::Format("count mismatch: truncated SFL1 header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let flagged = match bytes[8] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad validity flag {other}"))),
    };
    let expected = FLOW_HEADER_LEN + n * 12 + if flagged { n } else { 0 };
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "count mismatch: {n} vectors need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let body = &bytes[FLOW_HEADER_LEN..];
    let f = |k: usize| f32::from_le_bytes(body[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
    let vectors = (0..n)
        .map(|i| Vec3::new(f(3 * i), f(3 * i + 1), f(3 * i + 2)))
        .collect();
    let validity = flagged.then(|| {
        body[12 * n..]
            .iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("bad validity byte {other} at {i}"))),
            })
            .collect::<Result<Vec<_>>>()
    });
    Ok(FlowFile {
        vectors,
        validity: validity.transpose()?,
    })
}

/// Writes a flow without a validity mask. Components are stored as f32.
pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    fs::write(path, encode_flow(flow.vectors(), None)?)?;
    Ok(())
}

/// Writes labels together with their validity mask.
pub fn write_labels(path: impl AsRef<Path>, labels: &PseudoLabelSet) -> Result<()> {
    fs::write(path, encode_flow(&labels.labels, Some(&labels.valid))?)?;
    Ok(())
}

pub fn read_flow_file(path: impl AsRef<Path>) -> Result<FlowFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_flow(&bytes)
}

/// Reads the vectors of a flow file, ignoring any validity mask.
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    Ok(read_flow_file(path)?.into_flow())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<PseudoLabelSet> {
    Ok(read_flow_file(path)?.into_labels())
}

pub fn encode_flow_bytes(flow: &FlowField) -> Result<Vec<u8>> {
    encode_flow(flow.vectors(), None)
}

pub fn encode_label_bytes(labels: &PseudoLabelSet) -> Result<Vec<u8>> {
    encode_flow(&labels.labels, Some(&labels.valid))
}

// ---------------------------------------------------------------------------
// Scene-pair directories

pub const FIRST_FRAME_FILE: &str = "p.ply";
pub const SECOND_FRAME_FILE: &str = "q.ply";
pub const GROUND_TRUTH_FILE: &str = "gt.sfl";
pub const PREDICTION_FILE: &str = "pred.sfl";

/// Two frames with optional ground-truth and predicted flow for the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub p: PointCloud,
    pub q: PointCloud,
    pub ground_truth: Option<FlowField>,
    pub prediction: Option<FlowField>,
}

impl ScenePair {
    pub fn check(&self) -> Result<()> {
        for flow in [&self.ground_truth, &self.prediction].into_iter().flatten() {
            if flow.len() != self.p.len() {
                return Err(Error::LengthMismatch {
                    expected: self.p.len(),
                    actual: flow.len(),
                });
            }
        }
        Ok(())
    }
}

pub fn read_scene_pair(dir: impl AsRef<Path>) -> Result<ScenePair> {
    let dir = dir.as_ref();
    let optional = |name: &str| -> Result<Option<FlowField>> {
        let path = dir.join(name);
        if path.exists() {
            read_flow(path).map(Some)
        } else {
            Ok(None)
        }
    };
    let pair = ScenePair {
        p: read_cloud(dir.join(FIRST_FRAME_FILE))?,
        q: read_cloud(dir.join(SECOND_FRAME_FILE))?,
        ground_truth: optional(GROUND_TRUTH_FILE)?,
        prediction: optional(PREDICTION_FILE)?,
    };
    pair.check()?;
    Ok(pair)
}

pub fn write_scene_pair(dir: impl AsRef<Path>, pair: &ScenePair, encoding: PlyEncoding) -> Result<()> {
    pair.check()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_cloud(dir.join(FIRST_FRAME_FILE), &pair.p, encoding)?;
    write_cloud(dir.join(SECOND_FRAME_FILE), &pair.q, encoding)?;
    if let Some(gt) = &pair.ground_truth {
        write_flow(dir.join(GROUND_TRUTH_FILE), gt)?;
    }
    if let Some(pred) = &pair.prediction {
        write_flow(dir.join(PREDICTION_FILE), pred)?;
    }
    Ok(())
}

/// Sorted subdirectories of `root` that hold a scene pair.
pub fn list_scene_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root.as_ref())? {
        let path = entry?.path();
        if path.join(FIRST_FRAME_FILE).is_file() && path.join(SECOND_FRAME_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

// ---------------------------------------------------------------------------
// key=value configs

/// Parses `key = value` lines in order. Blank lines and `#` comments are
/// skipped; keys and values are trimmed.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value, got {raw:?}", number + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Format(format!("line {}: empty key", number + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}
