//! Multiresolution dense trilinear grid of D-dimensional vectors.
//!
//! Backs both the object field (D = L identity logits) and the feature field.
//! A query sums the trilinear interpolants of every level. Gradients are
//! accumulated by [`TrainableGrid::scatter_grad`], the exact adjoint of
//! [`TrainableGrid::query`], and consumed by [`TrainableGrid::adam_step`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::volume::Volume;

pub const DEFAULT_RESOLUTIONS: [usize; 2] = [32, 128];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridLevel {
    pub resolution: usize,
    /// `(R+1)^3` corners, channel-fastest, then x, y, z.
    pub values: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl GridLevel {
    fn new(resolution: usize, channels: usize) -> Self {
        let n = (resolution + 1).pow(3) * channels;
        Self {
            resolution,
            values: vec![0.0; n],
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

/// The eight corners touched by a point on one level: value offsets and weights.
#[derive(Clone, Copy, Debug)]
pub struct CellWeights {
    pub offsets: [usize; 8],
    pub weights: [f64; 8],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainableGrid {
    pub channels: usize,
    pub bbox: Aabb,
    levels: Vec<GridLevel>,
    step: u64,
}

impl TrainableGrid {
    /// Zero-initialized grid.
    pub fn new(bbox: Aabb, resolutions: &[usize], channels: usize) -> Result<Self> {
        if resolutions.is_empty() || resolutions.contains(&0) || channels == 0 {
            return Err(Error::Validation(format!(
                "grid needs at least one positive resolution and channel, got {resolutions:?} x {channels}"
            )));
        }
        Ok(Self {
            channels,
            bbox,
            levels: resolutions.iter().map(|&r| GridLevel::new(r, channels)).collect(),
            step: 0,
        })
    }

    pub fn levels(&self) -> &[GridLevel] {
        &self.levels
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.resolution).collect()
    }

    /// Number of optimizer steps taken.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn cell_weights(&self, level: usize, p: &Vec3) -> CellWeights {
        let res = self.levels[level].resolution;
        let n = res + 1;
        let ext = self.bbox.extent();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for i in 0..3 {
            let u = ((p[i] - self.bbox.min[i]) / ext[i] * res as f64).clamp(0.0, res as f64);
            let b = (u.floor() as usize).min(res - 1);
            base[i] = b;
            frac[i] = u - b as f64;
        }
        let mut offsets = [0usize; 8];
        let mut weights = [0f64; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
            offsets[c] = (((base[2] + dz) * n + base[1] + dy) * n + base[0] + dx) * self.channels;
        }
        CellWeights { offsets, weights }
    }

    /// Writes the field value at `p` into `out` (length `channels`).
    pub fn query_into(&self, p: &Vec3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (li, level) in self.levels.iter().enumerate() {
            let cw = self.cell_weights(li, p);
            for c in 0..8 {
                let w = cw.weights[c];
                if w == 0.0 {
                    continue;
                }
                let vals = &level.values[cw.offsets[c]..cw.offsets[c] + self.channels];
                for (o, v) in out.iter_mut().zip(vals) {
                    *o += w * v;
                }
            }
        }
    }

    pub fn query(&self, p: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.query_into(p, &mut out);
        out
    }

    /// Accumulates `scale * upstream` into the corners of `p`, weighted as in [`Self::query`].
    pub fn scatter_grad(&mut self, p: &Vec3, scale: f64, upstream: &[f64]) {
        debug_assert_eq!(upstream.len(), self.channels);
        if scale == 0.0 || upstream.iter().all(|g| *g == 0.0) {
            return;
        }
        for li in 0..self.levels.len() {
            let cw = self.cell_weights(li, p);
            let level = &mut self.levels[li];
            for c in 0..8 {
                let w = cw.weights[c] * scale;
                if w == 0.0 {
                    continue;
                }
                let g = &mut level.grad[cw.offsets[c]..cw.offsets[c] + self.channels];
                for (gi, u) in g.iter_mut().zip(upstream) {
                    *gi += w * u;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.levels {
            l.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// One Adam step with bias correction over every parameter; clears the gradient.
    ///
    /// Entries whose gradient and both moments are exactly zero receive an
    /// update of exactly zero, so they are skipped.
    pub fn adam_step(&mut self, params: &AdamParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - params.beta1.powi(t);
        let bc2 = 1.0 - params.beta2.powi(t);
        let AdamParams { lr, beta1, beta2, eps } = *params;
        const CHUNK: usize = 1 << 14;
        for level in &mut self.levels {
            let GridLevel { values, grad, m, v, .. } = level;
            values
                .par_chunks_mut(CHUNK)
                .zip(grad.par_chunks_mut(CHUNK))
                .zip(m.par_chunks_mut(CHUNK))
                .zip(v.par_chunks_mut(CHUNK))
                .for_each(|(((th, g), m), v)| {
                    for i in 0..th.len() {
                        let gi = g[i];
                        if gi == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                            continue;
                        }
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        th[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                        g[i] = 0.0;
                    }
                });
        }
    }

    pub fn param_count(&self) -> usize {
        self.levels.iter().map(|l| l.values.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (li, l) in self.levels.iter().enumerate() {
            if i < l.values.len() {
                return (li, i);
            }
            i -= l.values.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, i: usize) -> f64 {
        let (l, j) = self.locate(i);
        self.levels[l].values[j]
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        let (l, j) = self.locate(i);
        self.levels[l].values[j] = value;
    }

    pub fn grad_at(&self, i: usize) -> f64 {
        let (l, j) = self.locate(i);
        self.levels[l].grad[j]
    }

    /// Fills every parameter from `f(flat_index)`.
    pub fn fill_with(&mut self, mut f: impl FnMut(usize) -> f64) {
        let mut k = 0;
        for l in &mut self.levels {
            for v in &mut l.values {
                *v = f(k);
                k += 1;
            }
        }
    }

    /// One volume record per level; adam state is not included.
    pub fn to_volumes(&self) -> Vec<Volume> {
        self.levels
            .iter()
            .map(|l| {
                let n = l.resolution + 1;
                Volume {
                    dims: [n, n, n],
                    bbox: self.bbox,
                    channels: self.channels,
                    data: l.values.iter().map(|v| *v as f32).collect(),
                }
            })
            .collect()
    }

    pub fn from_volumes(volumes: &[Volume]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::DimMismatch("field dump holds no levels".into()))?;
        let mut levels = Vec::with_capacity(volumes.len());
        for v in volumes {
            let n = v.dims[0];
            if v.dims != [n, n, n] || n < 2 || v.channels != first.channels || v.bbox != first.bbox {
                return Err(Error::DimMismatch(format!(
                    "field level {:?}x{} inconsistent with {:?}x{}",
                    v.dims, v.channels, first.dims, first.channels
                )));
            }
            let mut level = GridLevel::new(n - 1, v.channels);
            level.values = v.data.iter().map(|x| *x as f64).collect();
            levels.push(level);
        }
        Ok(Self {
            channels: first.channels,
            bbox: first.bbox,
            levels,
            step: 0,
        })
    }
}
