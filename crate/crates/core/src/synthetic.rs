//! Deterministic fixtures: analytic scenes, orbit rigs and feature maps.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{ray_for_pixel, Aabb, Camera, Convention, Vec3};
use crate::masks::FeatureFrame;
use crate::render::{march, RenderOptions};
use crate::scene::{DensityColorScene, Primitive, Shape};

pub const TWO_SPHERE_BACKGROUND: [f64; 3] = [0.1, 0.15, 0.6];

/// A red and a green sphere (ids 1 and 2) over a blue background, L = 3.
pub fn two_sphere_scene() -> DensityColorScene {
    let bbox = Aabb::cube(1.0);
    let soft = DensityColorScene::default_softness(&bbox);
    DensityColorScene::analytic(
        bbox,
        vec![
            Primitive {
                shape: Shape::Sphere {
                    center: [-0.35, 0.0, 0.0],
                    radius: 0.3,
                },
                object_id: 1,
                albedo: [0.9, 0.15, 0.1],
                softness: soft,
            },
            Primitive {
                shape: Shape::Sphere {
                    center: [0.35, 0.05, 0.1],
                    radius: 0.25,
                },
                object_id: 2,
                albedo: [0.15, 0.85, 0.2],
                softness: soft,
            },
        ],
        TWO_SPHERE_BACKGROUND,
        3,
    )
    .expect("fixture is valid")
}

/// A single opaque box (id 1) centered in the unit cube, L = 2.
pub fn opaque_box_scene() -> DensityColorScene {
    let bbox = Aabb::cube(1.0);
    DensityColorScene::analytic(
        bbox,
        vec![Primitive {
            shape: Shape::Box {
                min: [-0.4, -0.3, -0.35],
                max: [0.4, 0.3, 0.35],
            },
            object_id: 1,
            albedo: [0.7, 0.6, 0.5],
            softness: DensityColorScene::default_softness(&bbox),
        }],
        [0.0, 0.0, 0.0],
        2,
    )
    .expect("fixture is valid")
}

/// Rig of `n` cameras looking at the origin from distance `radius`.
///
/// Azimuths follow the golden angle shifted by `phase`; elevations sweep
/// between -25 and 55 degrees, so any two rigs with different phases are
/// disjoint.
pub fn orbit_cameras(first_id: u32, n: usize, radius: f64, size: u32, focal: f64, phase: f64) -> Vec<Camera> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let elev = (-25.0 + 80.0 * s).to_radians();
            let azim = i as f64 * golden + phase;
            let eye = Vec3::new(elev.cos() * azim.cos(), elev.sin(), elev.cos() * azim.sin()) * radius;
            Camera::look_at(first_id + i as u32, size, size, focal, eye, Vec3::zeros(), Vec3::y(), Convention::OpenGlNegZ).expect("orbit camera is valid")
        })
        .collect()
}

/// Smooth `channels`-dimensional field used as a stand-in for image features.
pub fn analytic_feature(p: &Vec3, channels: usize) -> Vec<f64> {
    (0..channels)
        .map(|c| {
            let k = 1.0 + (c / 3) as f64 * 0.5;
            let phase = c as f64 * 0.7;
            match c % 3 {
                0 => 0.5 * (k * p.x + phase).sin() + 0.2 * p.y,
                1 => 0.5 * (k * p.y + phase).cos() - 0.1 * p.z,
                _ => 0.4 * (k * (p.z + p.x) + phase).sin(),
            }
        })
        .collect()
}

/// Feature frames produced by compositing [`analytic_feature`] through the scene density.
pub fn synthetic_feature_frames(scene: &DensityColorScene, cameras: &[Camera], channels: usize, opts: &RenderOptions) -> Result<Vec<FeatureFrame>> {
    composite_feature_frames(scene, cameras, channels, opts, |p| analytic_feature(p, channels))
}

/// Feature frames from compositing an arbitrary point feature `f` through the scene density.
pub fn composite_feature_frames<F>(scene: &DensityColorScene, cameras: &[Camera], channels: usize, opts: &RenderOptions, f: F) -> Result<Vec<FeatureFrame>>
where
    F: Fn(&Vec3) -> Vec<f64> + Sync,
{
    Ok(cameras
        .iter()
        .map(|cam| {
            let (w, h) = (cam.width as usize, cam.height as usize);
            let px: Vec<Vec<f64>> = (0..w * h)
                .into_par_iter()
                .map(|i| {
                    let mut out = vec![0.0; channels];
                    if let Ok(ray) = ray_for_pixel(cam, ((i % w) as f64, (i / w) as f64), &scene.bbox) {
                        let m = march(scene, &ray, opts);
                        for k in m.active() {
                            for (o, v) in out.iter_mut().zip(f(&m.points[k])) {
                                *o += m.weights[k] * v;
                            }
                        }
                    }
                    out
                })
                .collect();
            let mut frame = FeatureFrame::zeros(cam.view_id, w, h, channels);
            for (dst, src) in frame.data.chunks_mut(channels).zip(&px) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s as f32;
                }
            }
            frame
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::project_gt_masks;

    #[test]
    fn two_sphere_views_see_both_objects() {
        let scene = two_sphere_scene();
        let cams = orbit_cameras(0, 6, 3.0, 32, 32.0, 0.0);
        let frames = project_gt_masks(&scene, &cams, 64).unwrap();
        for f in &frames {
            let labels = f.labels();
            assert!(labels.contains(&0));
            assert!(labels.contains(&1) || labels.contains(&2));
            // nothing touches the border
            assert_eq!(labels[0], 0);
        }
    }

    #[test]
    fn rigs_with_different_phase_are_disjoint() {
        let a = orbit_cameras(0, 10, 3.0, 16, 16.0, 0.0);
        let b = orbit_cameras(10, 10, 3.0, 16, 16.0, 0.3);
        for ca in &a {
            for cb in &b {
                assert!((ca.position - cb.position).norm() > 1e-3);
            }
            assert!((ca.position.norm() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_frames_are_zero_off_the_box() {
        let scene = opaque_box_scene();
        let cams = orbit_cameras(0, 2, 3.0, 24, 24.0, 0.0);
        let frames = synthetic_feature_frames(&scene, &cams, 8, &RenderOptions::midpoint(64)).unwrap();
        assert_eq!(frames[0].channels, 8);
        assert!(frames[0].pixel(0, 0).iter().all(|v| *v == 0.0));
        assert!(frames[0].pixel(12, 12).iter().any(|v| *v != 0.0));
    }
}
