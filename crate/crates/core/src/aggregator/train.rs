use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::config::FusionConfig;
use super::errmap::ErrorMapSet;
use super::loss::{cross_entropy, cross_entropy_logits_grad, ray_pair_rgb_loss, select_references, RayPairParams};
use super::regions::{sample_error_regions, PixelRef};
use crate::error::{Error, Result};
use crate::geometry::{ray_for_pixel, Camera, Vec3};
use crate::grid::TrainableGrid;
use crate::masks::Frame;
use crate::render::{composite_field, march, rgb_from_march, FieldRender, MaskRender, RenderOptions};
use crate::rng::{keyed_rng, Stream};
use crate::scene::DensityColorScene;

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub l_o: f64,
    pub l_rgb: f64,
    pub total: f64,
}

pub const TRACE_HEADER: &str = "iteration,L_o,L_RGB,total";

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        // shortest round-trip formatting keeps the file bit-exact
        out.push_str(&format!("{},{:?},{:?},{:?}\n", r.iteration, r.l_o, r.l_rgb, r.total));
    }
    out
}

pub fn write_trace(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(trace_to_csv(trace).as_bytes())?;
    Ok(())
}

/// A training camera paired with its mask frame.
#[derive(Clone, Debug)]
pub struct TrainView<'a> {
    pub camera: &'a Camera,
    pub frame: &'a Frame,
}

/// Pairs frames with cameras by view id. Cameras without a frame are not
/// retained; frames without a camera are an error.
pub fn retained_views<'a>(frames: &'a [Frame], cameras: &'a [Camera], labels: usize) -> Result<Vec<TrainView<'a>>> {
    let mut views = Vec::new();
    for frame in frames {
        let camera = cameras
            .iter()
            .find(|c| c.view_id == frame.view_id)
            .ok_or_else(|| Error::Validation(format!("mask frame for unknown view {}", frame.view_id)))?;
        if frame.channels != labels {
            return Err(Error::ChannelMismatch {
                expected: labels,
                found: frame.channels,
            });
        }
        if frame.width != camera.width as usize || frame.height != camera.height as usize {
            return Err(Error::DimMismatch(format!(
                "view {}: frame {}x{} vs camera {}x{}",
                frame.view_id, frame.width, frame.height, camera.width, camera.height
            )));
        }
        views.push(TrainView { camera, frame });
    }
    views.sort_by_key(|v| v.camera.view_id);
    if views.is_empty() {
        return Err(Error::NoViewsRetained);
    }
    Ok(views)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub grid: TrainableGrid,
    pub trace: Vec<TraceRow>,
    pub errmaps: ErrorMapSet,
    pub view_ids: Vec<u32>,
}

fn mask_at(scene: &DensityColorScene, grid: &TrainableGrid, cam: &Camera, pixel: (usize, usize), opts: &RenderOptions) -> MaskRender {
    match ray_for_pixel(cam, (pixel.0 as f64, pixel.1 as f64), &scene.bbox) {
        Ok(ray) => MaskRender::from_field(composite_field(grid, &march(scene, &ray, opts))),
        Err(_) => MaskRender::from_field(FieldRender::empty(grid.channels)),
    }
}

fn rgb_and_mask(scene: &DensityColorScene, grid: &TrainableGrid, cam: &Camera, pixel: (usize, usize), opts: &RenderOptions) -> (Vec3, MaskRender) {
    match ray_for_pixel(cam, (pixel.0 as f64, pixel.1 as f64), &scene.bbox) {
        Ok(ray) => {
            let m = march(scene, &ray, opts);
            (rgb_from_march(scene, &ray, &m), MaskRender::from_field(composite_field(grid, &m)))
        }
        Err(_) => (scene.background(), MaskRender::from_field(FieldRender::empty(grid.channels))),
    }
}

/// Uniform pixel over all retained views.
fn global_batch(views: &[TrainView], count: usize, seed: u64, iteration: usize) -> Vec<PixelRef> {
    let sizes: Vec<usize> = views.iter().map(|v| v.frame.width * v.frame.height).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = keyed_rng(seed, Stream::GlobalBatch, iteration as u64, 0, 0);
    (0..count)
        .map(|_| {
            let mut i = rng.gen_range(0..total);
            let mut v = 0;
            while i >= sizes[v] {
                i -= sizes[v];
                v += 1;
            }
            let w = views[v].frame.width;
            (v, (i % w, i / w))
        })
        .collect()
}

/// Re-evaluates every error-map cell at its representative pixel.
pub fn refresh_error_maps(errmaps: &mut ErrorMapSet, views: &[TrainView], scene: &DensityColorScene, grid: &TrainableGrid, cfg: &FusionConfig) {
    let opts = cfg.eval_render();
    let values: Vec<f64> = errmaps
        .cell_centers()
        .par_iter()
        .map(|&(v, p)| {
            let pred = mask_at(scene, grid, views[v].camera, p, &opts);
            super::loss::mask_distance(&views[v].frame.pixel_f64(p.0, p.1), &pred.probs, cfg.w, cfg.eps)
        })
        .collect();
    errmaps.assign_all(&values);
}

/// Fits the object field to the mask frames. Cross-entropy on uniformly
/// sampled rays throughout; after warm-up, the ray-pair loss on rays around
/// error-weighted surface points is added.
pub fn train_object_field(scene: &DensityColorScene, frames: &[Frame], cameras: &[Camera], cfg: &FusionConfig) -> Result<TrainOutput> {
    train_with_observer(scene, frames, cameras, cfg, |_, _| {})
}

/// [`train_object_field`] with a callback after every optimizer step.
pub fn train_with_observer<F>(scene: &DensityColorScene, frames: &[Frame], cameras: &[Camera], cfg: &FusionConfig, mut observe: F) -> Result<TrainOutput>
where
    F: FnMut(&TraceRow, &TrainableGrid),
{
    cfg.validate()?;
    if scene.num_labels != cfg.labels {
        return Err(Error::ChannelMismatch {
            expected: cfg.labels,
            found: scene.num_labels,
        });
    }
    let views = retained_views(frames, cameras, cfg.labels)?;
    let view_cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let mut grid = TrainableGrid::new(scene.bbox, &cfg.grid_resolutions, cfg.labels)?;
    let sizes: Vec<(u32, usize, usize)> = views.iter().map(|v| (v.camera.view_id, v.frame.width, v.frame.height)).collect();
    let mut errmaps = ErrorMapSet::new(&sizes, cfg.errmap_downsample);
    let adam = cfg.adam();
    let pair = RayPairParams {
        tau: cfg.tau,
        w: cfg.w,
        eps: cfg.eps,
        similarity_geq: cfg.similarity_geq,
    };
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        if it % cfg.errmap_full_update_every == 0 {
            refresh_error_maps(&mut errmaps, &views, scene, &grid, cfg);
        }
        let opts = cfg.train_render(it);

        let batch = global_batch(&views, cfg.global_batch, cfg.seed, it);
        let renders: Vec<MaskRender> = batch.par_iter().map(|&(v, p)| mask_at(scene, &grid, views[v].camera, p, &opts)).collect();
        let mut l_o = 0.0;
        let mut ce_grads = Vec::with_capacity(batch.len());
        for (&(v, p), r) in batch.iter().zip(&renders) {
            let gt = views[v].frame.pixel_f64(p.0, p.1);
            l_o += cross_entropy(&gt, &r.probs);
            ce_grads.push(cross_entropy_logits_grad(&gt, &r.probs));
            errmaps.update(v, p, &gt, &r.probs, cfg.w, cfg.eps);
        }
        l_o /= batch.len() as f64;

        let mut l_rgb = 0.0;
        let mut region_grads: Vec<(Vec<MaskRender>, Vec<Vec<f64>>)> = Vec::new();
        if it >= cfg.warmup_iters {
            let regions = sample_error_regions(&errmaps, &view_cams, scene, cfg, it);
            for (t, region) in regions.iter().enumerate() {
                let rendered: Vec<(Vec3, MaskRender)> =
                    region.rays.par_iter().map(|&(v, p)| rgb_and_mask(scene, &grid, views[v].camera, p, &opts)).collect();
                let (colors, masks): (Vec<Vec3>, Vec<MaskRender>) = rendered.into_iter().unzip();
                let probs: Vec<Vec<f64>> = masks.iter().map(|m| m.probs.clone()).collect();
                let mut rrng = keyed_rng(cfg.seed, Stream::References, it as u64, t as u64, 0);
                let refs = select_references(colors.len(), cfg.rgb_refs, &mut rrng);
                let (loss, grads) = ray_pair_rgb_loss(&colors, &probs, &refs, &pair);
                l_rgb += loss;
                region_grads.push((masks, grads));
            }
            if !region_grads.is_empty() {
                l_rgb /= region_grads.len() as f64;
            }
        }

        let total = l_o + l_rgb;
        if !total.is_finite() {
            return Err(Error::NanLoss {
                iteration: it,
                ce: l_o,
                rgb: l_rgb,
            });
        }

        let ce_scale = 1.0 / batch.len() as f64;
        for (r, dz) in renders.iter().zip(&ce_grads) {
            r.field.backward(&mut grid, dz, ce_scale);
        }
        if !region_grads.is_empty() {
            let rgb_scale = 1.0 / region_grads.len() as f64;
            for (masks, grads) in &region_grads {
                for (m, g) in masks.iter().zip(grads) {
                    m.field.backward(&mut grid, &m.logits_grad(g), rgb_scale);
                }
            }
        }
        grid.adam_step(&adam);

        let row = TraceRow {
            iteration: it,
            l_o,
            l_rgb,
            total,
        };
        observe(&row, &grid);
        trace.push(row);
    }

    Ok(TrainOutput {
        grid,
        trace,
        errmaps,
        view_ids: views.iter().map(|v| v.camera.view_id).collect(),
    })
}
