//! PLY (ASCII and binary little-endian) and OBJ readers/writers for meshes
//! and point clouds.
//!
//! Written PLY files use `double` coordinates so that clouds round-trip
//! bit-exactly, an optional `uchar label` vertex property, and
//! `list uchar int vertex_indices` faces.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::mesh::TriMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(s: &str) -> Result<Scalar> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown PLY scalar type `{other}`"))),
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
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

/// Raw contents of a PLY file restricted to what this crate uses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Point3>,
    pub labels: Option<Vec<u8>>,
    pub faces: Vec<[u32; 3]>,
}

fn read_scalar_bin(r: &mut impl Read, ty: Scalar, enc: Encoding) -> Result<f64> {
    let mut buf = [0u8; 8];
    let n = ty.size();
    r.read_exact(&mut buf[..n])
        .map_err(|e| Error::Format(format!("truncated PLY body: {e}")))?;
    let b = &buf[..n];
    macro_rules! conv {
        ($t:ty) => {{
            let arr: [u8; std::mem::size_of::<$t>()] = b.try_into().unwrap();
            (if enc == Encoding::BinaryBe {
                <$t>::from_be_bytes(arr)
            } else {
                <$t>::from_le_bytes(arr)
            }) as f64
        }};
    }
    Ok(match ty {
        Scalar::I8 => conv!(i8),
        Scalar::U8 => conv!(u8),
        Scalar::I16 => conv!(i16),
        Scalar::U16 => conv!(u16),
        Scalar::I32 => conv!(i32),
        Scalar::U32 => conv!(u32),
        Scalar::F32 => conv!(f32),
        Scalar::F64 => conv!(f64),
    })
}

/// Parses PLY bytes.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let mut cursor = Cursor::new(bytes);
    let mut line = String::new();
    let next_line = |cursor: &mut Cursor<&[u8]>, line: &mut String| -> Result<()> {
        line.clear();
        let n = cursor
            .read_line(line)
            .map_err(|e| Error::Format(format!("unreadable PLY header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("PLY header ended before end_header".into()));
        }
        Ok(())
    };

    next_line(&mut cursor, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Format("missing `ply` magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut cursor, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => Encoding::BinaryBe,
                    other => return Err(Error::Format(format!("unknown PLY format `{other}`"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                });
            }
            ["end_header"] => break,
            _ => return Err(Error::Format(format!("unrecognised PLY header line `{}`", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::Format("PLY header lacks a format line".into()))?;

    let mut out = PlyData::default();
    let mut ascii_tokens: Option<std::vec::IntoIter<String>> = None;
    if encoding == Encoding::Ascii {
        let mut rest = String::new();
        cursor
            .read_to_string(&mut rest)
            .map_err(|e| Error::Format(format!("PLY body is not text: {e}")))?;
        ascii_tokens = Some(
            rest.split_whitespace()
                .map(str::to_owned)
                .collect::<Vec<_>>()
                .into_iter(),
        );
    }

    let mut read_value = |cursor: &mut Cursor<&[u8]>, ty: Scalar| -> Result<f64> {
        match ascii_tokens.as_mut() {
            Some(tokens) => {
                let tok = tokens
                    .next()
                    .ok_or_else(|| Error::Format("truncated ASCII PLY body".into()))?;
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad PLY number `{tok}`")))
            }
            None => read_scalar_bin(cursor, ty, encoding),
        }
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            let has = |n: &str| {
                el.props
                    .iter()
                    .any(|p| matches!(p, Property::Scalar { name, .. } if name == n))
            };
            if !(has("x") && has("y") && has("z")) {
                return Err(Error::Format("vertex element lacks x/y/z".into()));
            }
            if has("label") {
                out.labels = Some(Vec::with_capacity(el.count));
            }
            out.vertices.reserve(el.count);
        }
        for _ in 0..el.count {
            let mut xyz = [0.0f64; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = read_value(&mut cursor, *ty)?;
                        if is_vertex {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                "label" => {
                                    if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                                        return Err(Error::Format(format!("bad vertex label {v}")));
                                    }
                                    out.labels.as_mut().unwrap().push(v as u8);
                                }
                                _ => {}
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = read_value(&mut cursor, *count)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(Error::Format(format!("bad list length {n}")));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(read_value(&mut cursor, *item)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if items.len() < 3 {
                                return Err(Error::Format("face with fewer than 3 vertices".into()));
                            }
                            let idx: Vec<u32> = items
                                .iter()
                                .map(|&v| {
                                    if v < 0.0 || v.fract() != 0.0 {
                                        Err(Error::Format(format!("bad face index {v}")))
                                    } else {
                                        Ok(v as u32)
                                    }
                                })
                                .collect::<Result<_>>()?;
                            for k in 1..idx.len() - 1 {
                                out.faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                out.vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    let nv = out.vertices.len() as u32;
    if out.faces.iter().flatten().any(|&i| i >= nv) {
        return Err(Error::Format("face index out of range".into()));
    }
    Ok(out)
}

/// Serialises vertices (+ optional labels and faces) as PLY.
pub fn encode_ply(vertices: &[Point3], labels: Option<&[u8]>, faces: &[[u32; 3]], format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + vertices.len() * 25 + faces.len() * 13);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", vertices.len());
    let _ = writeln!(out, "property double x\nproperty double y\nproperty double z");
    if labels.is_some() {
        let _ = writeln!(out, "property uchar label");
    }
    if !faces.is_empty() {
        let _ = writeln!(
            out,
            "element face {}\nproperty list uchar int vertex_indices",
            faces.len()
        );
    }
    let _ = writeln!(out, "end_header");
    match format {
        PlyFormat::Ascii => {
            for (i, v) in vertices.iter().enumerate() {
                let _ = write!(out, "{:?} {:?} {:?}", v.x, v.y, v.z);
                if let Some(l) = labels {
                    let _ = write!(out, " {}", l[i]);
                }
                out.push(b'\n');
            }
            for f in faces {
                let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in vertices.iter().enumerate() {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(l) = labels {
                    out.push(l[i]);
                }
            }
            for f in faces {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes).map_err(|e| e.context(path.display().to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_mesh_ply(path: &Path, mesh: &TriMesh, format: PlyFormat) -> Result<()> {
    let bytes = encode_ply(&mesh.vertices, mesh.vertex_labels.as_deref(), &mesh.faces, format);
    write_bytes(path, &bytes)
}

pub fn read_mesh_ply(path: &Path) -> Result<TriMesh> {
    let d = read_ply(path)?;
    Ok(TriMesh {
        vertices: d.vertices,
        faces: d.faces,
        vertex_labels: d.labels,
    })
}

pub fn write_cloud_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let bytes = encode_ply(&cloud.points, cloud.labels.as_deref(), &[], format);
    write_bytes(path, &bytes)
}

pub fn read_cloud_ply(path: &Path) -> Result<PointCloud> {
    let d = read_ply(path)?;
    Ok(PointCloud {
        points: d.vertices,
        labels: d.labels,
    })
}

/// Writes positions and faces only.
pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut out = Vec::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    write_bytes(path, &out)
}

/// Reads `v` and `f` records; other records are ignored.
pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = TriMesh::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse().map_err(|_| Error::Format(format!("bad OBJ vertex `{line}`"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::Format(format!("bad OBJ vertex `{line}`")));
                }
                mesh.vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<u32>().ok())
                            .filter(|&i| i > 0)
                            .map(|i| i - 1)
                            .ok_or_else(|| Error::Format(format!("bad OBJ face `{line}`")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!("bad OBJ face `{line}`")));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Reads a mesh by extension (`.ply` or `.obj`).
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => read_obj(path),
        _ => read_mesh_ply(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Level;
    use crate::mesh::icosphere;
    use proptest::prelude::*;

    #[test]
    fn labeled_mesh_round_trip_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let m = icosphere(Point3::new(1.0, 2.0, 3.0), 4.5, 2).with_label(Level::new(4).unwrap());
        for (name, fmt) in [("a.ply", PlyFormat::Ascii), ("b.ply", PlyFormat::BinaryLittleEndian)] {
            let p = dir.path().join(name);
            write_mesh_ply(&p, &m, fmt).unwrap();
            assert_eq!(read_mesh_ply(&p).unwrap(), m);
        }
        let p = dir.path().join("c.obj");
        write_obj(&p, &m).unwrap();
        let back = read_obj(&p).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
    }

    #[test]
    fn reads_float_and_quad_ply() {
        let text = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let d = parse_ply(text).unwrap();
        assert_eq!(d.vertices.len(), 4);
        assert_eq!(d.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(d.labels.is_none());
    }

    #[test]
    fn malformed_ply_is_format_error() {
        assert!(matches!(parse_ply(b"plx\n"), Err(Error::Format(_))));
        let truncated = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n\0\0\0";
        assert!(matches!(parse_ply(truncated), Err(Error::Format(_))));
        let bad_index = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(matches!(parse_ply(bad_index), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn cloud_round_trip_is_bit_exact(
            pts in proptest::collection::vec(proptest::array::uniform3(-1e6f64..1e6), 0..50),
            ascii in any::<bool>(),
        ) {
            let cloud = PointCloud::new(pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect());
            let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let d = parse_ply(&encode_ply(&cloud.points, None, &[], fmt)).unwrap();
            prop_assert_eq!(d.vertices, cloud.points);
        }
    }
}
