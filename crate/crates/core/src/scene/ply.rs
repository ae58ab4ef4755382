//! PLY reader and writer for Gaussian scenes.
//!
//! Each `vertex` carries `x y z`, `scale_0..2` (log scale), `rot_0..3`
//! (quaternion wxyz), `opacity` (logit) and `red green blue` (linear).
//! Both `ascii` and `binary_little_endian` bodies are accepted, with `float`
//! or `double` properties. Unknown properties and elements are skipped.
//! The scene background and extent ride along as header comments.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{GaussianPoint, Scene};
use crate::{Error, Result};

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "red", "green", "blue",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    /// Binary little-endian with `double` properties (bit-exact round trip).
    BinaryF64,
    /// Binary little-endian with `float` properties, as most splat viewers expect.
    BinaryF32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    background: Option<Vector3<f64>>,
    extent: Option<f64>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::PlySchema(msg.into())
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| schema(format!("reading header: {e}")))?;
        Ok(n > 0)
    };

    if !next_line(reader, &mut line)? || line.trim_end() != "ply" {
        return Err(schema("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut background = None;
    let mut extent = None;
    loop {
        if !next_line(reader, &mut line)? {
            return Err(schema("header is not terminated by 'end_header'"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(schema(format!("unsupported version {version}")));
                }
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(schema(format!("unsupported format {other}"))),
                });
            }
            ["comment", "background", r, g, b] => {
                let parse = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| schema("bad background comment"))
                };
                background = Some(Vector3::new(parse(r)?, parse(g)?, parse(b)?));
            }
            ["comment", "extent", e] => {
                extent = Some(e.parse::<f64>().map_err(|_| schema("bad extent comment"))?);
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| schema(format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| schema("property before any element"))?;
                let count =
                    ScalarType::parse(count).ok_or_else(|| schema(format!("bad type {count}")))?;
                let item =
                    ScalarType::parse(item).ok_or_else(|| schema(format!("bad type {item}")))?;
                el.properties.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| schema("property before any element"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| schema(format!("bad type {ty}")))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => {
                return Err(schema(format!(
                    "malformed header line '{}'",
                    line.trim_end()
                )))
            }
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| schema("missing format line"))?,
        elements,
        background,
        extent,
    })
}

/// Column of each required property within the vertex element.
fn vertex_columns(el: &Element) -> Result<[usize; 14]> {
    let mut cols = [usize::MAX; 14];
    for (pi, prop) in el.properties.iter().enumerate() {
        if let Property::Scalar { name, .. } = prop {
            if let Some(k) = REQUIRED.iter().position(|r| r == name) {
                cols[k] = pi;
            }
        }
    }
    if let Some(k) = cols.iter().position(|&c| c == usize::MAX) {
        return Err(schema(format!(
            "vertex element is missing property '{}'",
            REQUIRED[k]
        )));
    }
    if el
        .properties
        .iter()
        .any(|p| matches!(p, Property::List { .. }))
    {
        return Err(schema("list properties are not supported on vertices"));
    }
    Ok(cols)
}

fn point_from_row(row: &[f64], cols: &[usize; 14], index: usize) -> Result<GaussianPoint> {
    let v = |k: usize| row[cols[k]];
    if let Some(k) = (0..14).find(|&k| !v(k).is_finite()) {
        return Err(Error::PlyElement {
            index,
            message: format!("non-finite '{}'", REQUIRED[k]),
        });
    }
    let mut point = GaussianPoint {
        position: Vector3::new(v(0), v(1), v(2)),
        log_scale: Vector3::new(v(3), v(4), v(5)),
        rotation: [v(6), v(7), v(8), v(9)],
        opacity_logit: v(10),
        color: Vector3::new(v(11), v(12), v(13)),
    };
    if point.rotation.iter().all(|&c| c == 0.0) {
        return Err(Error::PlyElement {
            index,
            message: "zero-length rotation quaternion".into(),
        });
    }
    point.normalize_rotation();
    Ok(point)
}

fn read_binary_row<R: Read>(
    reader: &mut R,
    el: &Element,
    row: &mut Vec<f64>,
    index: usize,
) -> Result<()> {
    let truncated = |e: std::io::Error| Error::PlyElement {
        index,
        message: format!("truncated body: {e}"),
    };
    row.clear();
    let mut buf = [0u8; 8];
    for prop in &el.properties {
        match *prop {
            Property::Scalar { ty, .. } => {
                reader
                    .read_exact(&mut buf[..ty.size()])
                    .map_err(truncated)?;
                row.push(ty.read_le(&buf));
            }
            Property::List { count, item } => {
                reader
                    .read_exact(&mut buf[..count.size()])
                    .map_err(truncated)?;
                let n = count.read_le(&buf) as usize;
                for _ in 0..n {
                    reader
                        .read_exact(&mut buf[..item.size()])
                        .map_err(truncated)?;
                }
                row.push(f64::NAN);
            }
        }
    }
    Ok(())
}

fn read_ascii_row<R: BufRead>(
    reader: &mut R,
    el: &Element,
    row: &mut Vec<f64>,
    index: usize,
) -> Result<()> {
    let mut line = String::new();
    let n = reader.read_line(&mut line).map_err(|e| Error::PlyElement {
        index,
        message: e.to_string(),
    })?;
    if n == 0 {
        return Err(Error::PlyElement {
            index,
            message: "unexpected end of file".into(),
        });
    }
    row.clear();
    let mut tokens = line.split_whitespace();
    let mut take = || -> Result<f64> {
        let tok = tokens.next().ok_or_else(|| Error::PlyElement {
            index,
            message: "too few values".into(),
        })?;
        // "nan"/"inf" parse fine and are rejected later with the element index
        tok.parse::<f64>().map_err(|_| Error::PlyElement {
            index,
            message: format!("cannot parse '{tok}'"),
        })
    };
    for prop in &el.properties {
        match prop {
            Property::Scalar { .. } => row.push(take()?),
            Property::List { .. } => {
                let n = take()? as usize;
                for _ in 0..n {
                    take()?;
                }
                row.push(f64::NAN);
            }
        }
    }
    Ok(())
}

pub fn read_scene<R: BufRead>(mut reader: R) -> Result<Scene> {
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| schema("no 'vertex' element"))?;
    let cols = vertex_columns(&header.elements[vertex_pos])?;

    let mut points = Vec::new();
    let mut row = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        for index in 0..el.count {
            match header.format {
                Format::Ascii => read_ascii_row(&mut reader, el, &mut row, index)?,
                Format::BinaryLe => read_binary_row(&mut reader, el, &mut row, index)?,
            }
            if ei == vertex_pos {
                points.push(point_from_row(&row, &cols, index)?);
            }
        }
    }

    let background = header.background.unwrap_or_else(Vector3::zeros);
    let mut scene = Scene::new(points, background);
    if let Some(extent) = header.extent {
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(schema(format!("extent comment {extent} must be positive")));
        }
        scene.extent = extent;
    }
    Ok(scene)
}

pub fn write_scene<W: Write>(
    scene: &Scene,
    encoding: PlyEncoding,
    mut w: W,
) -> std::io::Result<()> {
    let (format, ty) = match encoding {
        PlyEncoding::Ascii => ("ascii", "double"),
        PlyEncoding::BinaryF64 => ("binary_little_endian", "double"),
        PlyEncoding::BinaryF32 => ("binary_little_endian", "float"),
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    let bg = scene.background;
    // `{:?}` prints the shortest string that parses back to the same f64
    writeln!(w, "comment background {:?} {:?} {:?}", bg.x, bg.y, bg.z)?;
    writeln!(w, "comment extent {:?}", scene.extent)?;
    writeln!(w, "element vertex {}", scene.points.len())?;
    for name in REQUIRED {
        writeln!(w, "property {ty} {name}")?;
    }
    writeln!(w, "end_header")?;
    for p in &scene.points {
        let values = [
            p.position.x,
            p.position.y,
            p.position.z,
            p.log_scale.x,
            p.log_scale.y,
            p.log_scale.z,
            p.rotation[0],
            p.rotation[1],
            p.rotation[2],
            p.rotation[3],
            p.opacity_logit,
            p.color.x,
            p.color.y,
            p.color.z,
        ];
        match encoding {
            PlyEncoding::Ascii => {
                let strs: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", strs.join(" "))?;
            }
            PlyEncoding::BinaryF64 => {
                for v in values {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            PlyEncoding::BinaryF32 => {
                for v in values {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scene(BufReader::new(file))
}

/// Saves as binary little-endian doubles.
pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    save_scene_with(scene, path, PlyEncoding::BinaryF64)
}

pub fn save_scene_with(scene: &Scene, path: impl AsRef<Path>, encoding: PlyEncoding) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scene(scene, encoding, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
