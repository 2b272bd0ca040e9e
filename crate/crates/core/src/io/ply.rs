//! Minimal PLY and OBJ support: triangle meshes and labeled point clouds.
//!
//! Writers emit `double` coordinates with shortest round-trip formatting so
//! ASCII files reload bit-exactly. Readers accept ASCII and binary
//! little-endian PLY with float or double coordinates.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Contents of a PLY file relevant to this crate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Per-vertex `label` property, when present.
    pub labels: Option<Vec<u8>>,
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse { file: path.display().to_string(), reason: reason.into() }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|reason| parse_err(path, reason))
}

fn parse_ply(bytes: &[u8]) -> std::result::Result<PlyData, String> {
    let marker = b"end_header";
    let pos = bytes.windows(marker.len()).position(|w| w == marker).ok_or("missing end_header")?;
    let mut body_start = pos + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, _] => return Err(format!("unsupported format {other}")),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count {count}"))?,
                props: vec![],
            }),
            ["property", "list", c, i, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let c = Scalar::parse(c).ok_or(format!("bad type {c}"))?;
                let i = Scalar::parse(i).ok_or(format!("bad type {i}"))?;
                el.props.push(Property::List(name.to_string(), c, i));
            }
            ["property", t, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                el.props.push(Property::Scalar(name.to_string(), Scalar::parse(t).ok_or(format!("bad type {t}"))?));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(format!("unrecognized header line: {line}")),
        }
    }
    let encoding = encoding.ok_or("missing format line")?;
    let body = &bytes[body_start..];
    let mut reader: Box<dyn ValueReader> = match encoding {
        PlyEncoding::Ascii => Box::new(AsciiReader {
            tokens: std::str::from_utf8(body).map_err(|_| "body is not UTF-8")?.split_ascii_whitespace(),
        }),
        PlyEncoding::BinaryLittleEndian => Box::new(BinaryReader { data: body, at: 0 }),
    };

    let mut out = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            for axis in ["x", "y", "z"] {
                if !el.props.iter().any(|p| matches!(p, Property::Scalar(n, _) if n == axis)) {
                    return Err(format!("vertex element lacks property {axis}"));
                }
            }
        }
        let has_label = is_vertex && el.props.iter().any(|p| matches!(p, Property::Scalar(n, _) if n == "label"));
        let mut labels = Vec::new();
        for _ in 0..el.count {
            let mut v = Vector3::zeros();
            for p in &el.props {
                match p {
                    Property::Scalar(name, t) => {
                        let x = reader.next(*t)?;
                        if is_vertex {
                            match name.as_str() {
                                "x" => v.x = x,
                                "y" => v.y = x,
                                "z" => v.z = x,
                                "label" => labels.push(x as u8),
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = reader.next(*ct)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(reader.next(*it)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if idx.len() < 3 || idx.iter().any(|&i| i < 0.0) {
                                return Err("invalid face".into());
                            }
                            // Fan-triangulate polygons.
                            for k in 1..idx.len() - 1 {
                                out.faces.push([idx[0] as usize, idx[k] as usize, idx[k + 1] as usize]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                out.vertices.push(v);
            }
        }
        if has_label {
            out.labels = Some(labels);
        }
    }
    if out.faces.iter().flatten().any(|&i| i >= out.vertices.len()) {
        return Err("face index out of range".into());
    }
    Ok(out)
}

trait ValueReader {
    fn next(&mut self, t: Scalar) -> std::result::Result<f64, String>;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl ValueReader for AsciiReader<'_> {
    fn next(&mut self, _t: Scalar) -> std::result::Result<f64, String> {
        let tok = self.tokens.next().ok_or("unexpected end of data")?;
        tok.parse().map_err(|_| format!("bad number {tok}"))
    }
}

struct BinaryReader<'a> {
    data: &'a [u8],
    at: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn next(&mut self, t: Scalar) -> std::result::Result<f64, String> {
        let n = t.size();
        let chunk = self.data.get(self.at..self.at + n).ok_or("unexpected end of data")?;
        self.at += n;
        Ok(t.read_le(chunk))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serialize to PLY bytes. Faces are written when non-empty, labels when given.
pub fn encode_ply(data: &PlyData, encoding: PlyEncoding) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let labels = data.labels.as_ref().filter(|l| l.len() == data.vertices.len());
    writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", data.vertices.len()).unwrap();
    out.extend_from_slice(b"property double x\nproperty double y\nproperty double z\n");
    if labels.is_some() {
        out.extend_from_slice(b"property uchar label\n");
    }
    if !data.faces.is_empty() {
        writeln!(out, "element face {}\nproperty list uchar int vertex_indices", data.faces.len()).unwrap();
    }
    out.extend_from_slice(b"end_header\n");
    match encoding {
        PlyEncoding::Ascii => {
            for (i, v) in data.vertices.iter().enumerate() {
                write!(out, "{} {} {}", v.x, v.y, v.z).unwrap();
                if let Some(l) = labels {
                    write!(out, " {}", l[i]).unwrap();
                }
                out.push(b'\n');
            }
            for f in &data.faces {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (i, v) in data.vertices.iter().enumerate() {
                for c in v.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(l) = labels {
                    out.push(l[i]);
                }
            }
            for f in &data.faces {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_ply(path: &Path, data: &PlyData, encoding: PlyEncoding) -> Result<()> {
    write_file(path, &encode_ply(data, encoding))
}

pub fn write_obj(path: &Path, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Result<()> {
    let mut out = Vec::new();
    for v in vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    write_file(path, &out)
}

/// Read vertices and faces of an OBJ file; polygons are fan-triangulated
/// and texture/normal indices are ignored.
pub fn read_obj(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(path, format!("line {}: bad vertex", ln + 1)))?;
                if c.len() != 3 {
                    return Err(parse_err(path, format!("line {}: vertex needs 3 coordinates", ln + 1)));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in toks {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| parse_err(path, format!("line {}: bad face index", ln + 1)))?;
                    let i = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if i < 0 {
                        return Err(parse_err(path, format!("line {}: face index out of range", ln + 1)));
                    }
                    idx.push(i as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, format!("line {}: face needs 3 vertices", ln + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.iter().flatten().any(|&i| i >= vertices.len()) {
        return Err(parse_err(path, "face index out of range"));
    }
    Ok((vertices, faces))
}

/// Read a triangle mesh, choosing the format from the file extension.
pub fn read_mesh(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>)> {
    match extension(path).as_deref() {
        Some("obj") => read_obj(path),
        Some("ply") => read_ply(path).map(|d| (d.vertices, d.faces)),
        _ => Err(parse_err(path, "unknown mesh extension (expected .ply or .obj)")),
    }
}

pub fn write_mesh(path: &Path, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Result<()> {
    match extension(path).as_deref() {
        Some("obj") => write_obj(path, vertices, faces),
        Some("ply") => write_ply(
            path,
            &PlyData { vertices: vertices.to_vec(), faces: faces.to_vec(), labels: None },
            PlyEncoding::Ascii,
        ),
        _ => Err(parse_err(path, "unknown mesh extension (expected .ply or .obj)")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PlyData {
        PlyData {
            vertices: vec![
                Vector3::new(0.1, 0.2, 0.3),
                Vector3::new(1.0 / 3.0, -2.5e-7, 1e10),
                Vector3::new(-0.0, 7.0, std::f64::consts::PI),
            ],
            faces: vec![[0, 1, 2]],
            labels: None,
        }
    }

    #[test]
    fn ascii_round_trip_is_exact() {
        let d = sample();
        let back = parse_ply(&encode_ply(&d, PlyEncoding::Ascii)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn binary_round_trip_with_labels() {
        let mut d = sample();
        d.faces.clear();
        d.labels = Some(vec![0, 1, 0]);
        let back = parse_ply(&encode_ply(&d, PlyEncoding::BinaryLittleEndian)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn reads_float_quads() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
                    element face 1\nproperty list uchar uint vertex_index\nend_header\n\
                    0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let d = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(d.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn rejects_bad_index() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(parse_ply(text.as_bytes()).is_err());
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        let d = sample();
        write_obj(&p, &d.vertices, &d.faces).unwrap();
        let (v, f) = read_obj(&p).unwrap();
        assert_eq!(v, d.vertices);
        assert_eq!(f, d.faces);
    }
}
