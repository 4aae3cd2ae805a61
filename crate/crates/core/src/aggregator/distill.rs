use rand::Rng;
use rayon::prelude::*;

use super::config::DistillConfig;
use crate::error::{Error, Result};
use crate::geometry::{ray_for_pixel, Camera};
use crate::grid::TrainableGrid;
use crate::masks::FeatureFrame;
use crate::render::{composite_field, march, FieldRender, RenderOptions};
use crate::rng::{keyed_rng, Stream};
use crate::scene::DensityColorScene;

/// Squared error summed over channels, and its gradient in `pred`.
pub fn feature_sq_error(pred: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    let grad: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| 2.0 * (p - g)).collect();
    let loss = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    (loss, grad)
}

fn feature_at(scene: &DensityColorScene, grid: &TrainableGrid, cam: &Camera, pixel: (usize, usize), opts: &RenderOptions) -> FieldRender {
    match ray_for_pixel(cam, (pixel.0 as f64, pixel.1 as f64), &scene.bbox) {
        Ok(ray) => composite_field(grid, &march(scene, &ray, opts)),
        Err(_) => FieldRender::empty(grid.channels),
    }
}

/// Camera for each frame, rescaled when the frame resolution differs.
fn frame_cameras(frames: &[FeatureFrame], cameras: &[Camera]) -> Result<Vec<Camera>> {
    let channels = frames.first().ok_or(Error::NoViewsRetained)?.channels;
    frames
        .iter()
        .map(|f| {
            if f.channels != channels {
                return Err(Error::ChannelMismatch {
                    expected: channels,
                    found: f.channels,
                });
            }
            let cam = cameras
                .iter()
                .find(|c| c.view_id == f.view_id)
                .ok_or_else(|| Error::Validation(format!("feature frame for unknown view {}", f.view_id)))?;
            if cam.width as usize == f.width && cam.height as usize == f.height {
                Ok(cam.clone())
            } else {
                Ok(cam.scaled(f.width as u32, f.height as u32))
            }
        })
        .collect()
}

/// Fits a feature field to feature frames by minimizing the per-channel MSE
/// of composited features. Returns the grid and the per-iteration loss.
pub fn distill_feature_field(scene: &DensityColorScene, frames: &[FeatureFrame], cameras: &[Camera], cfg: &DistillConfig) -> Result<(TrainableGrid, Vec<f64>)> {
    cfg.validate()?;
    let cams = frame_cameras(frames, cameras)?;
    let channels = frames[0].channels;
    let mut grid = TrainableGrid::new(scene.bbox, &cfg.grid_resolutions, channels)?;
    let sizes: Vec<usize> = frames.iter().map(|f| f.width * f.height).collect();
    let total: usize = sizes.iter().sum();
    let adam = cfg.adam();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rng = keyed_rng(cfg.seed, Stream::Distill, it as u64, 0, 0);
        let batch: Vec<(usize, (usize, usize))> = (0..cfg.batch)
            .map(|_| {
                let mut i = rng.gen_range(0..total);
                let mut v = 0;
                while i >= sizes[v] {
                    i -= sizes[v];
                    v += 1;
                }
                (v, (i % frames[v].width, i / frames[v].width))
            })
            .collect();
        let opts = cfg.render(it);
        let renders: Vec<FieldRender> = batch.par_iter().map(|&(v, p)| feature_at(scene, &grid, &cams[v], p, &opts)).collect();
        let scale = 1.0 / (batch.len() * channels) as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(renders.len());
        for (&(v, p), r) in batch.iter().zip(&renders) {
            let (l, g) = feature_sq_error(&r.composited, &frames[v].pixel_f64(p.0, p.1));
            loss += l;
            grads.push(g);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NanLoss {
                iteration: it,
                ce: loss,
                rgb: 0.0,
            });
        }
        for (r, g) in renders.iter().zip(&grads) {
            r.backward(&mut grid, g, scale);
        }
        grid.adam_step(&adam);
        losses.push(loss);
    }
    Ok((grid, losses))
}

/// Per-channel MSE of rendered features against every pixel of the frames.
pub fn feature_mse(scene: &DensityColorScene, grid: &TrainableGrid, frames: &[FeatureFrame], cameras: &[Camera], opts: &RenderOptions) -> Result<f64> {
    let cams = frame_cameras(frames, cameras)?;
    if frames[0].channels != grid.channels {
        return Err(Error::ChannelMismatch {
            expected: grid.channels,
            found: frames[0].channels,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (f, cam) in frames.iter().zip(&cams) {
        let errs: Vec<f64> = (0..f.width * f.height)
            .into_par_iter()
            .map(|i| {
                let p = (i % f.width, i / f.width);
                feature_sq_error(&feature_at(scene, grid, cam, p, opts).composited, &f.pixel_f64(p.0, p.1)).0
            })
            .collect();
        sum += errs.iter().sum::<f64>();
        count += errs.len() * f.channels;
    }
    Ok(sum / count as f64)
}

/// Renders one feature frame per camera.
pub fn render_feature_frames(scene: &DensityColorScene, grid: &TrainableGrid, cameras: &[Camera], opts: &RenderOptions) -> Vec<FeatureFrame> {
    cameras
        .iter()
        .map(|cam| {
            let (w, h) = (cam.width as usize, cam.height as usize);
            let px: Vec<Vec<f64>> = (0..w * h).into_par_iter().map(|i| feature_at(scene, grid, cam, (i % w, i / w), opts).composited).collect();
            let mut frame = FeatureFrame::zeros(cam.view_id, w, h, grid.channels);
            for (dst, src) in frame.data.chunks_mut(grid.channels).zip(&px) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s as f32;
                }
            }
            frame
        })
        .collect()
}
