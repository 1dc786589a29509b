//! LFLD binary format (little-endian).
//!
//! ```text
//! "LFLD" | version u32 = 1 | d_lang u32 | d_group u32 | S u32 | nx ny nz u32
//! | bounds 6 x f32 (min xyz, max xyz) | scales S x f32
//! | lang  S*nx*ny*nz*d_lang x f16   (scale slowest, then x, y, z fastest)
//! | group nx*ny*nz*d_group x f16
//! ```
//! Empty voxels are written as zero vectors in both payloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use half::f16;
use nalgebra::Point3;

use super::{check_unit, norm, FeatureField, FieldError, FieldLayout, EMPTY, OCCUPANCY_EPS};
use crate::geometry::Aabb;

pub const LFLD_MAGIC: &[u8; 4] = b"LFLD";
pub const LFLD_VERSION: u32 = 1;

fn header_len(scales: usize) -> u64 {
    4 + 4 * 7 + 4 * 6 + 4 * scales as u64
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FeatureField, FieldError> {
    let file = File::open(path.as_ref()).map_err(|e| FieldError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_field(BufReader::with_capacity(1 << 16, file))
}

pub fn save_field(field: &FeatureField, path: impl AsRef<Path>) -> Result<(), FieldError> {
    let mut w = BufWriter::with_capacity(1 << 16, File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, FieldError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| FieldError::MalformedHeader("header ends early".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32, FieldError> {
    Ok(f32::from_bits(read_u32(r)?))
}

fn read_header(r: &mut impl Read) -> Result<FieldLayout, FieldError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| FieldError::MalformedHeader("file shorter than magic".into()))?;
    if &magic != LFLD_MAGIC {
        return Err(FieldError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != LFLD_VERSION {
        return Err(FieldError::MalformedHeader(format!("unsupported version {version}")));
    }
    let d_lang = read_u32(r)? as usize;
    let d_group = read_u32(r)? as usize;
    let n_scales = read_u32(r)? as usize;
    let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
    let mut b = [0f64; 6];
    for v in b.iter_mut() {
        *v = read_f32(r)? as f64;
    }
    if n_scales == 0 || n_scales > 4096 {
        return Err(FieldError::MalformedHeader(format!("implausible scale count {n_scales}")));
    }
    let mut scales = Vec::with_capacity(n_scales);
    for _ in 0..n_scales {
        scales.push(read_f32(r)? as f64);
    }
    let layout = FieldLayout {
        bounds: Aabb { min: Point3::new(b[0], b[1], b[2]), max: Point3::new(b[3], b[4], b[5]) },
        dims,
        scales,
        d_lang,
        d_group,
    };
    layout.validate().map_err(|e| FieldError::MalformedHeader(e.to_string()))?;
    Ok(layout)
}

/// Reads and validates a field. Non-empty vectors must have a raw norm in
/// [0.9, 1.1]; they are renormalized after dequantization.
pub fn read_field<R: Read + Seek>(mut r: R) -> Result<FeatureField, FieldError> {
    let layout = read_header(&mut r)?;
    let n_vox = layout.voxel_count() as u64;
    let s = layout.scales.len();
    let lang_bytes = s as u64 * n_vox * layout.d_lang as u64 * 2;
    let group_bytes = n_vox * layout.d_group as u64 * 2;
    let start = header_len(s);
    let expected = start + lang_bytes + group_bytes;
    let found = r.seek(SeekFrom::End(0))?;
    if found < expected {
        return Err(FieldError::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(FieldError::MalformedHeader(format!("{} trailing bytes after payload", found - expected)));
    }

    let mut field = FeatureField::empty(layout)?;
    let (d_lang, d_group) = (field.layout.d_lang, field.layout.d_group);

    // Occupancy comes from the grouping payload.
    r.seek(SeekFrom::Start(start + lang_bytes))?;
    let mut buf = vec![0u8; d_group.max(d_lang) * 2];
    let mut v = vec![0f32; d_group.max(d_lang)];
    for voxel in 0..n_vox as usize {
        read_halfs(&mut r, &mut buf[..d_group * 2], &mut v[..d_group])?;
        let g = &v[..d_group];
        let n = norm(g);
        if n > OCCUPANCY_EPS {
            check_unit(voxel, "grouping", n)?;
            field.slots[voxel] = field.voxels.len() as u32;
            field.voxels.push(voxel as u32);
            field.group.extend(g.iter().map(|&x| (x as f64 / n) as f32));
        }
    }

    field.lang = vec![0f32; field.voxels.len() * s * d_lang];
    for k in 0..s {
        r.seek(SeekFrom::Start(start + k as u64 * n_vox * d_lang as u64 * 2))?;
        for voxel in 0..n_vox as usize {
            read_halfs(&mut r, &mut buf[..d_lang * 2], &mut v[..d_lang])?;
            let slot = field.slots[voxel];
            if slot == EMPTY {
                continue;
            }
            let l = &v[..d_lang];
            let n = norm(l);
            check_unit(voxel, "language", n)?;
            let base = (slot as usize * s + k) * d_lang;
            for (o, &x) in field.lang[base..base + d_lang].iter_mut().zip(l) {
                *o = (x as f64 / n) as f32;
            }
        }
    }
    Ok(field)
}

fn read_halfs(r: &mut impl Read, bytes: &mut [u8], out: &mut [f32]) -> Result<(), FieldError> {
    r.read_exact(bytes).map_err(|e| FieldError::Io(e.to_string()))?;
    for (o, c) in out.iter_mut().zip(bytes.chunks_exact(2)) {
        *o = f16::from_le_bytes([c[0], c[1]]).to_f32();
    }
    Ok(())
}

pub fn write_field(field: &FeatureField, w: &mut impl Write) -> Result<(), FieldError> {
    let l = &field.layout;
    w.write_all(LFLD_MAGIC)?;
    for v in [
        LFLD_VERSION,
        l.d_lang as u32,
        l.d_group as u32,
        l.scales.len() as u32,
        l.dims[0] as u32,
        l.dims[1] as u32,
        l.dims[2] as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for i in 0..3 {
        w.write_all(&(l.bounds.min[i] as f32).to_le_bytes())?;
    }
    for i in 0..3 {
        w.write_all(&(l.bounds.max[i] as f32).to_le_bytes())?;
    }
    for &s in &l.scales {
        w.write_all(&(s as f32).to_le_bytes())?;
    }
    let zeros_lang = vec![0u8; l.d_lang * 2];
    let mut buf = Vec::with_capacity(l.d_lang.max(l.d_group) * 2);
    for k in 0..l.scales.len() {
        for voxel in 0..field.voxel_count() {
            match field.lang_at(voxel, k) {
                Some(v) => {
                    encode(v, &mut buf);
                    w.write_all(&buf)?;
                }
                None => w.write_all(&zeros_lang)?,
            }
        }
    }
    let zeros_group = vec![0u8; l.d_group * 2];
    for voxel in 0..field.voxel_count() {
        match field.group_at(voxel) {
            Some(v) => {
                encode(v, &mut buf);
                w.write_all(&buf)?;
            }
            None => w.write_all(&zeros_group)?,
        }
    }
    Ok(())
}

fn encode(v: &[f32], buf: &mut Vec<u8>) {
    buf.clear();
    for &x in v {
        buf.extend_from_slice(&f16::from_f32(x).to_le_bytes());
    }
}
