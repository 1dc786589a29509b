//! Binary little-endian PLY for point clouds.
//!
//! Vertex properties written: `x y z` (float), then when present `nx ny nz`
//! (float), `red green blue` (uchar), `relevancy` (float) and `g0..g{d-1}`
//! (float) for grouping features.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::{Features, PointCloud, SceneError};

pub fn save_ply(pc: &PointCloud, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(pc, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, SceneError> {
    let file = File::open(path.as_ref()).map_err(|e| SceneError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_ply(BufReader::new(file))
}

pub fn write_ply(pc: &PointCloud, w: &mut impl Write) -> Result<(), SceneError> {
    pc.validate()?;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", pc.len()));
    for name in ["x", "y", "z"] {
        header.push_str(&format!("property float {name}\n"));
    }
    if pc.normals.is_some() {
        for name in ["nx", "ny", "nz"] {
            header.push_str(&format!("property float {name}\n"));
        }
    }
    if pc.colors.is_some() {
        for name in ["red", "green", "blue"] {
            header.push_str(&format!("property uchar {name}\n"));
        }
    }
    if pc.relevancy.is_some() {
        header.push_str("property float relevancy\n");
    }
    if let Some(f) = &pc.group_feats {
        for i in 0..f.dim {
            header.push_str(&format!("property float g{i}\n"));
        }
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut buf = Vec::new();
    for i in 0..pc.len() {
        buf.clear();
        let p = pc.points[i];
        for c in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(n) = &pc.normals {
            for c in n[i].iter() {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        if let Some(c) = &pc.colors {
            for v in c[i] {
                buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        if let Some(r) = &pc.relevancy {
            buf.extend_from_slice(&(r[i] as f32).to_le_bytes());
        }
        if let Some(f) = &pc.group_feats {
            for v in f.row(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn malformed(msg: impl Into<String>) -> SceneError {
    SceneError::MalformedFile(msg.into())
}

fn read_header(r: &mut impl BufRead) -> Result<Vec<Element>, SceneError> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<(), SceneError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(malformed("header ends before end_header"));
        }
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(malformed("missing ply magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    loop {
        next_line(&mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_seen = true,
            ["format", other, ..] => return Err(malformed(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| malformed(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", len_ty, item_ty, _name] => {
                let el = elements.last_mut().ok_or_else(|| malformed("property before element"))?;
                let len_ty = Scalar::parse(len_ty).ok_or_else(|| malformed(format!("bad type {len_ty}")))?;
                let item_ty = Scalar::parse(item_ty).ok_or_else(|| malformed(format!("bad type {item_ty}")))?;
                el.props.push(Property::List(len_ty, item_ty));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| malformed("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| malformed(format!("bad type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(malformed(format!("unrecognized header line {:?}", line.trim_end()))),
        }
    }
    if !format_seen {
        return Err(malformed("missing format line"));
    }
    Ok(elements)
}

/// Reads a binary little-endian PLY. Elements before `vertex` are skipped;
/// the vertex element must carry `x y z`.
pub fn read_ply(mut r: impl BufRead) -> Result<PointCloud, SceneError> {
    let elements = read_header(&mut r)?;
    let vertex_pos = elements.iter().position(|e| e.name == "vertex").ok_or_else(|| malformed("no vertex element"))?;
    let read_exact = |r: &mut dyn Read, buf: &mut [u8]| -> Result<(), SceneError> {
        r.read_exact(buf).map_err(|_| malformed("payload ends early"))
    };
    let mut buf = [0u8; 8];
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            for p in &el.props {
                match p {
                    Property::Scalar(_, ty) => read_exact(&mut r, &mut buf[..ty.size()])?,
                    Property::List(len_ty, item_ty) => {
                        read_exact(&mut r, &mut buf[..len_ty.size()])?;
                        let n = len_ty.decode(&buf) as usize;
                        let mut skip = vec![0u8; n * item_ty.size()];
                        read_exact(&mut r, &mut skip)?;
                    }
                }
            }
        }
    }

    let el = &elements[vertex_pos];
    let mut columns: Vec<(String, Scalar)> = Vec::new();
    for p in &el.props {
        match p {
            Property::Scalar(name, ty) => columns.push((name.clone(), *ty)),
            Property::List(..) => return Err(malformed("list properties on vertex are not supported")),
        }
    }
    let col = |name: &str| columns.iter().position(|(n, _)| n == name);
    let (Some(cx), Some(cy), Some(cz)) = (col("x"), col("y"), col("z")) else {
        return Err(malformed("vertex element lacks x/y/z"));
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let color_cols = match (col("red"), col("green"), col("blue")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let rel_col = col("relevancy");
    let mut feat_cols = Vec::new();
    while let Some(c) = col(&format!("g{}", feat_cols.len())) {
        feat_cols.push(c);
    }

    let offsets: Vec<usize> = columns
        .iter()
        .scan(0, |acc, (_, ty)| {
            let o = *acc;
            *acc += ty.size();
            Some(o)
        })
        .collect();
    let stride: usize = columns.iter().map(|(_, ty)| ty.size()).sum();
    let value = |row: &[u8], c: usize| columns[c].1.decode(&row[offsets[c]..]);

    let mut pc = PointCloud {
        points: Vec::with_capacity(el.count),
        normals: normal_cols.map(|_| Vec::with_capacity(el.count)),
        colors: color_cols.map(|_| Vec::with_capacity(el.count)),
        relevancy: rel_col.map(|_| Vec::with_capacity(el.count)),
        group_feats: (!feat_cols.is_empty()).then(|| Features::new(feat_cols.len())),
    };
    let mut row = vec![0u8; stride];
    let mut feat = vec![0f32; feat_cols.len()];
    for _ in 0..el.count {
        read_exact(&mut r, &mut row)?;
        pc.points.push(Point3::new(value(&row, cx), value(&row, cy), value(&row, cz)));
        if let (Some(n), Some([a, b, c])) = (pc.normals.as_mut(), normal_cols) {
            n.push(Vector3::new(value(&row, a), value(&row, b), value(&row, c)));
        }
        if let (Some(out), Some(cols)) = (pc.colors.as_mut(), color_cols) {
            let rgb = cols.map(|c| match columns[c].1 {
                Scalar::U8 => (value(&row, c) / 255.0) as f32,
                Scalar::U16 => (value(&row, c) / 65535.0) as f32,
                _ => value(&row, c) as f32,
            });
            out.push(rgb);
        }
        if let (Some(out), Some(c)) = (pc.relevancy.as_mut(), rel_col) {
            out.push(value(&row, c));
        }
        if let Some(f) = pc.group_feats.as_mut() {
            for (o, &c) in feat.iter_mut().zip(&feat_cols) {
                *o = value(&row, c) as f32;
            }
            f.push(&feat);
        }
    }
    pc.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(pc)
}
