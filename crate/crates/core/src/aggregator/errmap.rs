use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::loss::mask_distance;

/// Downsampled error values for one training view.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub view_id: u32,
    /// Image size in pixels.
    pub width: usize,
    pub height: usize,
    /// Grid size in cells.
    pub cols: usize,
    pub rows: usize,
    pub values: Vec<f64>,
}

/// One error map per retained view, all with the same downsample factor.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMapSet {
    pub downsample: usize,
    pub maps: Vec<ErrorMap>,
}

/// Pixel coordinate standing in for cell `j` along an axis of `size` pixels.
pub fn cell_center(j: usize, downsample: usize, size: usize) -> usize {
    (j * downsample + downsample / 2).min(size - 1)
}

impl ErrorMapSet {
    /// Maps for views of the given sizes, every cell starting at 1.
    pub fn new(views: &[(u32, usize, usize)], downsample: usize) -> Self {
        let maps = views
            .iter()
            .map(|&(view_id, width, height)| {
                let cols = width.div_ceil(downsample);
                let rows = height.div_ceil(downsample);
                ErrorMap {
                    view_id,
                    width,
                    height,
                    cols,
                    rows,
                    values: vec![1.0; cols * rows],
                }
            })
            .collect();
        Self { downsample, maps }
    }

    pub fn cell_index(&self, view: usize, pixel: (usize, usize)) -> usize {
        let m = &self.maps[view];
        (pixel.1 / self.downsample) * m.cols + pixel.0 / self.downsample
    }

    pub fn value(&self, view: usize, pixel: (usize, usize)) -> f64 {
        self.maps[view].values[self.cell_index(view, pixel)]
    }

    /// Overwrites the cell holding `pixel` with `f(gt, pred)`.
    pub fn update(&mut self, view: usize, pixel: (usize, usize), gt: &[f64], pred: &[f64], w: f64, eps: f64) {
        let idx = self.cell_index(view, pixel);
        self.maps[view].values[idx] = mask_distance(gt, pred, w, eps);
    }

    /// Representative pixels of every cell, in storage order.
    pub fn cell_centers(&self) -> Vec<(usize, (usize, usize))> {
        let s = self.downsample;
        let mut out = Vec::new();
        for (v, m) in self.maps.iter().enumerate() {
            for r in 0..m.rows {
                for c in 0..m.cols {
                    out.push((v, (cell_center(c, s, m.width), cell_center(r, s, m.height))));
                }
            }
        }
        out
    }

    /// Replaces every cell with the supplied values, given in [`Self::cell_centers`] order.
    pub fn assign_all(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for m in &mut self.maps {
            for v in &mut m.values {
                *v = *it.next().expect("one value per cell");
            }
        }
    }

    /// Draws `count` pixels: a cell with probability proportional to its
    /// error, then a uniform pixel inside it. Returns `(view, pixel)` pairs.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<(usize, (usize, usize))> {
        let cells: Vec<(usize, usize)> = self
            .maps
            .iter()
            .enumerate()
            .flat_map(|(v, m)| (0..m.values.len()).map(move |i| (v, i)))
            .collect();
        let weights = self.maps.iter().flat_map(|m| m.values.iter().copied());
        let Ok(dist) = WeightedIndex::new(weights) else {
            return Vec::new();
        };
        let s = self.downsample;
        (0..count)
            .map(|_| {
                let (v, i) = cells[dist.sample(rng)];
                let m = &self.maps[v];
                let (c, r) = (i % m.cols, i / m.cols);
                let x0 = c * s;
                let y0 = r * s;
                let x = rng.gen_range(x0..(x0 + s).min(m.width));
                let y = rng.gen_range(y0..(y0 + s).min(m.height));
                (v, (x, y))
            })
            .collect()
    }
}
