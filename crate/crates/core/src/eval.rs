//! Segmentation metrics pooled over views, and cross-view label agreement.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_depth_consistent, ray_for_pixel, Camera, DEFAULT_VISIBILITY_EPS};
use crate::grid::TrainableGrid;
use crate::masks::Frame;
use crate::render::{argmax, march, render_mask_at, RenderOptions};
use crate::rng::{keyed_rng, Stream};
use crate::scene::DensityColorScene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object_id: u32,
    pub iou: f64,
    pub acc: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_object: Vec<ObjectScore>,
    pub miou: f64,
    pub mean_acc: f64,
    pub views_used: usize,
    /// Objects absent from the ground truth; IoU undefined.
    pub skipped: Vec<u32>,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("object_id,iou,acc,tp,fp,fn,tn\n");
        for o in &self.per_object {
            out.push_str(&format!("{},{},{},{},{},{},{}\n", o.object_id, o.iou, o.acc, o.tp, o.fp, o.fn_, o.tn));
        }
        out
    }
}

#[derive(Clone, Copy, Default)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

/// Scores argmax-binarized predictions against ground truth, pooling pixel
/// counts over all views before forming IoU and binary accuracy.
pub fn score(pred: &[Frame], gt: &[Frame], object_ids: &[u32]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    let mut counts = vec![Counts::default(); object_ids.len()];
    for (p, g) in pred.iter().zip(gt) {
        if p.width != g.width || p.height != g.height || p.view_id != g.view_id {
            return Err(Error::DimMismatch(format!(
                "view {} {}x{} vs view {} {}x{}",
                p.view_id, p.width, p.height, g.view_id, g.width, g.height
            )));
        }
        let (pl, gl) = (p.labels(), g.labels());
        for (c, &id) in counts.iter_mut().zip(object_ids) {
            for (a, b) in pl.iter().zip(&gl) {
                match (*a == id, *b == id) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
    }
    let mut per_object = Vec::new();
    let mut skipped = Vec::new();
    for (c, &id) in counts.iter().zip(object_ids) {
        if c.tp + c.fn_ == 0 {
            skipped.push(id);
            continue;
        }
        let total = (c.tp + c.fp + c.fn_ + c.tn) as f64;
        per_object.push(ObjectScore {
            object_id: id,
            iou: c.tp as f64 / (c.tp + c.fp + c.fn_) as f64,
            acc: (c.tp + c.tn) as f64 / total,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
        });
    }
    let n = per_object.len().max(1) as f64;
    Ok(EvalReport {
        miou: per_object.iter().map(|o| o.iou).sum::<f64>() / n,
        mean_acc: per_object.iter().map(|o| o.acc).sum::<f64>() / n,
        per_object,
        views_used: pred.len(),
        skipped,
    })
}

/// Mean over views and present objects of the per-view IoU.
pub fn mean_per_view_iou(pred: &[Frame], gt: &[Frame], object_ids: &[u32]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let r = score(std::slice::from_ref(p), std::slice::from_ref(g), object_ids)?;
        total += r.per_object.iter().map(|o| o.iou).sum::<f64>();
        n += r.per_object.len();
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Renders argmax-ready probability frames for every camera.
pub fn render_mask_frames(scene: &DensityColorScene, field: &TrainableGrid, cameras: &[Camera], opts: &RenderOptions) -> Vec<Frame> {
    cameras
        .iter()
        .map(|cam| {
            let (w, h) = (cam.width as usize, cam.height as usize);
            let pixels: Vec<Vec<f64>> = (0..w * h)
                .into_par_iter()
                .map(|i| render_mask_at(scene, field, cam, ((i % w) as f64, (i / w) as f64), opts).probs)
                .collect();
            let mut frame = Frame::zeros(cam.view_id, w, h, field.channels);
            for (dst, src) in frame.data.chunks_mut(field.channels).zip(&pixels) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s as f32;
                }
            }
            frame
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Fraction of mutually visible surface points whose labels agree.
    pub agreement: f64,
    pub compared: usize,
    pub attempted: usize,
}

/// Samples surface points in view A, reprojects them into view B, keeps the
/// ones visible from both, and compares argmax labels of the rendered masks.
pub fn cross_view_consistency(
    field: &TrainableGrid,
    scene: &DensityColorScene,
    pairs: &[(&Camera, &Camera)],
    samples_per_pair: usize,
    opts: &RenderOptions,
    seed: u64,
) -> ConsistencyReport {
    let results: Vec<(usize, usize)> = pairs
        .par_iter()
        .enumerate()
        .map(|(pi, (a, b))| {
            let mut rng = keyed_rng(seed, Stream::Consistency, pi as u64, a.view_id as u64, b.view_id as u64);
            let mut compared = 0;
            let mut agree = 0;
            for _ in 0..samples_per_pair {
                let px = (rng.gen_range(0..a.width) as f64, rng.gen_range(0..a.height) as f64);
                let Ok(ray) = ray_for_pixel(a, px, &scene.bbox) else { continue };
                let m = march(scene, &ray, opts);
                if m.opacity() <= 0.0 {
                    continue;
                }
                let z_a = a.ray_length_to_z(m.depth(), &ray.dir);
                let Ok(point) = a.unproject(px, z_a) else { continue };
                let Ok((px_b, z_b)) = b.project(&point) else { continue };
                if !b.in_bounds(px_b) {
                    continue;
                }
                let rendered_b = crate::render::z_depth_at(scene, b, px_b, opts);
                if !is_depth_consistent(rendered_b, z_b, DEFAULT_VISIBILITY_EPS) {
                    continue;
                }
                let la = argmax(&render_mask_at(scene, field, a, px, opts).probs);
                let lb = argmax(&render_mask_at(scene, field, b, px_b, opts).probs);
                compared += 1;
                agree += usize::from(la == lb);
            }
            (compared, agree)
        })
        .collect();
    let compared: usize = results.iter().map(|r| r.0).sum();
    let agree: usize = results.iter().map(|r| r.1).sum();
    ConsistencyReport {
        agreement: if compared == 0 { 0.0 } else { agree as f64 / compared as f64 },
        compared,
        attempted: pairs.len() * samples_per_pair,
    }
}
