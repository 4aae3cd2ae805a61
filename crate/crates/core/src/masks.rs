//! Per-view mask and feature frames: synthetic ground truth, corruption models
//! that imitate noisy 2D segmenters, and the on-disk frame cache.
//!
//! File layout: `magic[8] | u32 view_id, H, W, C | f32 payload` (little-endian,
//! row-major, channel-fastest). Mask files use `SNHQMSK1` and must be
//! normalized per pixel; feature files use `SNHQFTR1`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ray_for_pixel, Camera};
use crate::render::{argmax, march, RenderOptions};
use crate::rng::{keyed_rng, Stream};
use crate::scene::DensityColorScene;

pub const MASK_MAGIC: &[u8; 8] = b"SNHQMSK1";
pub const FEATURE_MAGIC: &[u8; 8] = b"SNHQFTR1";
pub const NORMALIZATION_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Mask,
    Feature,
}

impl FrameKind {
    fn magic(self) -> &'static [u8; 8] {
        match self {
            FrameKind::Mask => MASK_MAGIC,
            FrameKind::Feature => FEATURE_MAGIC,
        }
    }
}

/// An `H x W x C` image of per-pixel vectors tied to one view.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub view_id: u32,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub type MaskFrame = Frame;
pub type FeatureFrame = Frame;

impl Frame {
    pub fn zeros(view_id: u32, width: usize, height: usize, channels: usize) -> Self {
        Self {
            view_id,
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// All-background one-hot mask.
    pub fn background(view_id: u32, width: usize, height: usize, channels: usize) -> Self {
        let mut f = Self::zeros(view_id, width, height, channels);
        for px in f.data.chunks_mut(channels) {
            px[0] = 1.0;
        }
        f
    }

    pub fn from_labels(view_id: u32, width: usize, height: usize, channels: usize, labels: &[u32]) -> Self {
        let mut f = Self::zeros(view_id, width, height, channels);
        for (px, l) in f.data.chunks_mut(channels).zip(labels) {
            px[*l as usize] = 1.0;
        }
        f
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_f64(&self, x: usize, y: usize) -> Vec<f64> {
        self.pixel(x, y).iter().map(|v| *v as f64).collect()
    }

    /// Per-pixel argmax, ties to the lowest channel.
    pub fn labels(&self) -> Vec<u32> {
        self.data
            .chunks(self.channels)
            .map(|px| {
                let mut best = 0;
                for (i, v) in px.iter().enumerate() {
                    if *v > px[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect()
    }

    pub fn check_normalized(&self) -> Result<()> {
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            let sum: f64 = px.iter().map(|v| *v as f64).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL || px.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
                return Err(Error::NotNormalized {
                    x: i % self.width,
                    y: i / self.width,
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self, kind: FrameKind) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(kind.magic());
        for v in [self.view_id, self.height as u32, self.width as u32, self.channels as u32] {
            out.write_u32::<LittleEndian>(v).unwrap();
        }
        for v in &self.data {
            out.write_f32::<LittleEndian>(*v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], kind: FrameKind) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::DimMismatch("frame shorter than its header".into()))?;
        if &magic != kind.magic() {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(kind.magic()).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let mut header = [0u32; 4];
        for h in &mut header {
            *h = r
                .read_u32::<LittleEndian>()
                .map_err(|_| Error::DimMismatch("frame shorter than its header".into()))?;
        }
        let [view_id, height, width, channels] = header;
        let (height, width, channels) = (height as usize, width as usize, channels as usize);
        let n = height * width * channels;
        if channels == 0 || r.len() != n * 4 {
            return Err(Error::DimMismatch(format!(
                "header {height}x{width}x{channels} needs {} payload bytes, found {}",
                n * 4,
                r.len()
            )));
        }
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        let frame = Frame {
            view_id,
            width,
            height,
            channels,
            data,
        };
        if kind == FrameKind::Mask {
            frame.check_normalized()?;
        }
        Ok(frame)
    }
}

pub fn mask_file_name(view_id: u32) -> String {
    format!("mask_{view_id:05}.snhq")
}

pub fn feature_file_name(view_id: u32) -> String {
    format!("feature_{view_id:05}.snhq")
}

pub fn store_frame(frame: &Frame, kind: FrameKind, path: &Path) -> Result<()> {
    if kind == FrameKind::Mask {
        frame.check_normalized()?;
    }
    fs::write(path, frame.to_bytes(kind))?;
    Ok(())
}

pub fn load_frame(path: &Path, kind: FrameKind) -> Result<Frame> {
    Frame::from_bytes(&fs::read(path)?, kind)
}

/// Writes frames into `dir` under their canonical names.
pub fn store_frames(frames: &[Frame], kind: FrameKind, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    frames
        .iter()
        .map(|f| {
            let name = match kind {
                FrameKind::Mask => mask_file_name(f.view_id),
                FrameKind::Feature => feature_file_name(f.view_id),
            };
            let path = dir.join(name);
            store_frame(f, kind, &path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every frame of `kind` in `dir`, ordered by view id.
pub fn load_frames(dir: &Path, kind: FrameKind) -> Result<Vec<Frame>> {
    let prefix = match kind {
        FrameKind::Mask => "mask_",
        FrameKind::Feature => "feature_",
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".snhq"))
        })
        .collect();
    paths.sort();
    let mut frames = paths.iter().map(|p| load_frame(p, kind)).collect::<Result<Vec<_>>>()?;
    frames.sort_by_key(|f| f.view_id);
    Ok(frames)
}

/// One-hot ground-truth masks rendered from an analytic scene.
///
/// Each pixel's ray is composited with per-sample one-hot support labels; the
/// label with the largest accumulated weight wins. Rays that miss the box or
/// accumulate no opacity are background.
pub fn project_gt_masks(scene: &DensityColorScene, cameras: &[Camera], samples_per_ray: usize) -> Result<Vec<Frame>> {
    let opts = RenderOptions::midpoint(samples_per_ray);
    let l = scene.num_labels;
    cameras
        .iter()
        .map(|cam| {
            let (w, h) = (cam.width as usize, cam.height as usize);
            let labels = (0..w * h)
                .into_par_iter()
                .map(|i| {
                    let px = ((i % w) as f64, (i / w) as f64);
                    let Ok(ray) = ray_for_pixel(cam, px, &scene.bbox) else {
                        return Ok(0);
                    };
                    let m = march(scene, &ray, &opts);
                    let mut votes = vec![0.0; l];
                    for k in m.active() {
                        let id = scene.support_label(&m.points[k])? as usize;
                        votes[id.min(l - 1)] += m.weights[k];
                    }
                    if votes.iter().all(|v| *v == 0.0) {
                        return Ok(0);
                    }
                    Ok(argmax(&votes) as u32)
                })
                .collect::<Result<Vec<u32>>>()?;
            Ok(Frame::from_labels(cam.view_id, w, h, l, &labels))
        })
        .collect()
}

/// Noise model applied to clean one-hot masks.
///
/// Order: morphology, blobs, pixel flips (on the corrupted subset of views),
/// then view drops (over all views).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Fraction of views receiving morphology, blobs and flips.
    pub view_fraction: f64,
    pub boundary_dilate_px: u32,
    pub boundary_erode_px: u32,
    /// Probability that a pixel's label is replaced by a uniformly random one.
    pub flip_rate: f64,
    /// Fraction of views replaced by all-background frames.
    pub drop_view_rate: f64,
    /// Fraction of image area targeted by spurious discs.
    pub blob_rate: f64,
    pub blob_radius_px: u32,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            view_fraction: 1.0,
            boundary_dilate_px: 0,
            boundary_erode_px: 0,
            flip_rate: 0.0,
            drop_view_rate: 0.0,
            blob_rate: 0.0,
            blob_radius_px: 4,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("view_fraction", self.view_fraction),
            ("flip_rate", self.flip_rate),
            ("drop_view_rate", self.drop_view_rate),
            ("blob_rate", self.blob_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn disc_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Grows every object into neighbouring background pixels within `radius`.
/// A background pixel reached by several objects takes the lowest id.
pub fn dilate(labels: &[u32], width: usize, height: usize, radius: u32) -> Vec<u32> {
    let offsets = disc_offsets(radius);
    let mut out = labels.to_vec();
    for y in 0..height {
        for x in 0..width {
            if labels[y * width + x] != 0 {
                continue;
            }
            let mut best = 0u32;
            for (dx, dy) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                    continue;
                }
                let l = labels[ny as usize * width + nx as usize];
                if l != 0 && (best == 0 || l < best) {
                    best = l;
                }
            }
            out[y * width + x] = best;
        }
    }
    out
}

/// Turns object pixels into background when any in-image pixel within
/// `radius` carries a different label.
pub fn erode(labels: &[u32], width: usize, height: usize, radius: u32) -> Vec<u32> {
    let offsets = disc_offsets(radius);
    let mut out = labels.to_vec();
    for y in 0..height {
        for x in 0..width {
            let l = labels[y * width + x];
            if l == 0 {
                continue;
            }
            let boundary = offsets.iter().any(|(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                nx >= 0 && ny >= 0 && nx < width as i64 && ny < height as i64 && labels[ny as usize * width + nx as usize] != l
            });
            if boundary {
                out[y * width + x] = 0;
            }
        }
    }
    out
}

fn pick_views(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<bool> {
    let count = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut chosen = vec![false; n];
    for i in idx.into_iter().take(count) {
        chosen[i] = true;
    }
    chosen
}

/// Applies `spec` to one-hot frames. Deterministic under `spec.seed`.
pub fn corrupt_masks(frames: &[Frame], spec: &CorruptionSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    let mut selection_rng = keyed_rng(spec.seed, Stream::Corruption, u64::MAX, 0, 0);
    let corrupted = pick_views(frames.len(), spec.view_fraction, &mut selection_rng);
    let dropped = pick_views(frames.len(), spec.drop_view_rate, &mut selection_rng);
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let (w, h, l) = (f.width, f.height, f.channels);
            if dropped[i] {
                return Ok(Frame::background(f.view_id, w, h, l));
            }
            let mut labels = f.labels();
            if corrupted[i] {
                let mut rng = keyed_rng(spec.seed, Stream::Corruption, f.view_id as u64, 1, 0);
                if spec.boundary_dilate_px > 0 {
                    labels = dilate(&labels, w, h, spec.boundary_dilate_px);
                }
                if spec.boundary_erode_px > 0 {
                    labels = erode(&labels, w, h, spec.boundary_erode_px);
                }
                if spec.blob_rate > 0.0 && l > 1 {
                    let disc = disc_offsets(spec.blob_radius_px);
                    let count = (spec.blob_rate * (w * h) as f64 / disc.len() as f64).round() as usize;
                    for _ in 0..count {
                        let (cx, cy) = (rng.gen_range(0..w) as i64, rng.gen_range(0..h) as i64);
                        let id = rng.gen_range(1..l) as u32;
                        for (dx, dy) in &disc {
                            let (x, y) = (cx + dx, cy + dy);
                            if x >= 0 && y >= 0 && x < w as i64 && y < h as i64 {
                                labels[y as usize * w + x as usize] = id;
                            }
                        }
                    }
                }
                if spec.flip_rate > 0.0 {
                    for lab in labels.iter_mut() {
                        if rng.gen::<f64>() < spec.flip_rate {
                            *lab = rng.gen_range(0..l) as u32;
                        }
                    }
                }
            }
            Ok(Frame::from_labels(f.view_id, w, h, l, &labels))
        })
        .collect()
}
