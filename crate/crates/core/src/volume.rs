//! Dense voxel volumes and the `SNHQVOL1` file format.
//!
//! Layout: `magic[8] | u32 dx, dy, dz | f64 min.xyz, max.xyz | u32 channels |
//! f32 payload`, all little-endian. Samples sit on grid points spanning the box
//! corners inclusively; the payload is channel-fastest, then x, y, z.
//! A file may hold several records back to back (multi-level field dumps).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

pub const VOLUME_MAGIC: &[u8; 8] = b"SNHQVOL1";

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub bbox: Aabb,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], bbox: Aabb, channels: usize, data: Vec<f32>) -> Result<Self> {
        let expected = dims.iter().product::<usize>() * channels;
        if dims.contains(&0) || channels == 0 || data.len() != expected {
            return Err(Error::DimMismatch(format!(
                "volume {dims:?}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            bbox,
            channels,
            data,
        })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(dims: [usize; 3], bbox: Aabb, channels: usize, mut f: impl FnMut(Vec3, &mut [f32])) -> Self {
        let mut data = vec![0f32; dims.iter().product::<usize>() * channels];
        let mut idx = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = grid_point(&bbox, dims, [x, y, z]);
                    f(p, &mut data[idx..idx + channels]);
                    idx += channels;
                }
            }
        }
        Self {
            dims,
            bbox,
            channels,
            data,
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        ((z * self.dims[1] + y) * self.dims[0] + x) * self.channels
    }

    fn continuous_coords(&self, p: &Vec3) -> [f64; 3] {
        let ext = self.bbox.extent();
        std::array::from_fn(|i| {
            let span = (self.dims[i] - 1) as f64;
            ((p[i] - self.bbox.min[i]) / ext[i] * span).clamp(0.0, span)
        })
    }

    /// Trilinear interpolation, clamped to the box.
    pub fn trilinear(&self, p: &Vec3, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let u = self.continuous_coords(p);
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for i in 0..3 {
            let hi = self.dims[i].saturating_sub(2);
            base[i] = (u[i].floor() as usize).min(hi);
            frac[i] = if self.dims[i] > 1 { u[i] - base[i] as f64 } else { 0.0 };
        }
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut c = [0usize; 3];
            for i in 0..3 {
                w *= if off[i] == 1 { frac[i] } else { 1.0 - frac[i] };
                c[i] = (base[i] + off[i]).min(self.dims[i] - 1);
            }
            if w == 0.0 {
                continue;
            }
            let idx = self.index(c[0], c[1], c[2]);
            for (o, v) in out.iter_mut().zip(&self.data[idx..idx + self.channels]) {
                *o += w * *v as f64;
            }
        }
    }

    /// Value of the grid point nearest to `p`.
    pub fn nearest(&self, p: &Vec3) -> &[f32] {
        let u = self.continuous_coords(p);
        let c: [usize; 3] = std::array::from_fn(|i| (u[i].round() as usize).min(self.dims[i] - 1));
        let idx = self.index(c[0], c[1], c[2]);
        &self.data[idx..idx + self.channels]
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(VOLUME_MAGIC)?;
        for d in self.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in self.bbox.min.iter().chain(self.bbox.max.iter()) {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.write_u32::<LittleEndian>(self.channels as u32)?;
        for v in &self.data {
            w.write_f32::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    /// Reads one record; `Ok(None)` at a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut magic = [0u8; 8];
        match r.read_exact(&mut magic) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        if &magic != VOLUME_MAGIC {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(VOLUME_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let truncated = |e: std::io::Error| match e.kind() {
            ErrorKind::UnexpectedEof => Error::DimMismatch("truncated volume record".into()),
            _ => e.into(),
        };
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        }
        let mut corners = [0f64; 6];
        for c in &mut corners {
            *c = r.read_f64::<LittleEndian>().map_err(truncated)?;
        }
        let channels = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let bbox = Aabb::new(
            Vec3::new(corners[0], corners[1], corners[2]),
            Vec3::new(corners[3], corners[4], corners[5]),
        )?;
        let n = dims.iter().product::<usize>() * channels;
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
        Volume::new(dims, bbox, channels, data).map(Some)
    }
}

pub fn grid_point(bbox: &Aabb, dims: [usize; 3], idx: [usize; 3]) -> Vec3 {
    let ext = bbox.extent();
    Vec3::from_fn(|i, _| {
        if dims[i] > 1 {
            bbox.min[i] + ext[i] * idx[i] as f64 / (dims[i] - 1) as f64
        } else {
            bbox.min[i]
        }
    })
}

pub fn save_volumes(volumes: &[Volume], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in volumes {
        v.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_volumes(path: &Path) -> Result<Vec<Volume>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(v) = Volume::read_from(&mut r)? {
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::DimMismatch(format!("{} holds no volume records", path.display())));
    }
    Ok(out)
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    Ok(load_volumes(path)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Volume {
        Volume::from_fn([3, 4, 5], Aabb::cube(1.0), 2, |p, out| {
            out[0] = (p.x + 2.0 * p.y - p.z) as f32;
            out[1] = 1.0;
        })
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let v = ramp();
        let mut out = [0.0; 2];
        for p in [Vec3::new(0.3, -0.2, 0.7), Vec3::new(-1.0, 1.0, 1.0), Vec3::zeros()] {
            v.trilinear(&p, &mut out);
            assert!((out[0] - (p.x + 2.0 * p.y - p.z)).abs() < 1e-6);
            assert!((out[1] - 1.0).abs() < 1e-12);
        }
        // clamped outside the box
        v.trilinear(&Vec3::new(5.0, 0.0, 0.0), &mut out);
        assert!((out[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn multi_record_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol");
        let a = ramp();
        let b = Volume::from_fn([2, 2, 2], Aabb::cube(0.5), 1, |p, o| o[0] = p.norm() as f32);
        save_volumes(&[a.clone(), b.clone()], &path).unwrap();
        let back = load_volumes(&path).unwrap();
        assert_eq!(back, vec![a, b]);
        let bytes = std::fs::read(&path).unwrap();
        let mut again = Vec::new();
        for v in &back {
            v.write_to(&mut again).unwrap();
        }
        assert_eq!(bytes, again);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = Vec::new();
        ramp().write_to(&mut bytes).unwrap();
        let mut broken = bytes.clone();
        broken[0] = b'X';
        assert!(matches!(Volume::read_from(&mut broken.as_slice()), Err(Error::BadMagic { .. })));
        let short = &bytes[..bytes.len() - 4];
        assert!(matches!(Volume::read_from(&mut &short[..]), Err(Error::DimMismatch(_))));
    }
}
