use rand::seq::index::sample;
use rayon::prelude::*;

use super::config::FusionConfig;
use super::errmap::ErrorMapSet;
use crate::geometry::{is_depth_consistent, Camera, Vec3, DEFAULT_VISIBILITY_EPS};
use crate::render::z_depth_at;
use crate::rng::{keyed_rng, Stream};
use crate::scene::DensityColorScene;

/// A training ray identified by view index and integer pixel.
pub type PixelRef = (usize, (usize, usize));

/// Rays gathered around the reprojections of one surface point.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub anchor: PixelRef,
    pub point: Vec3,
    /// Landed pixel in each view where the point is visible.
    pub centers: Vec<PixelRef>,
    pub rays: Vec<PixelRef>,
}

/// Pixels of the `n x n` window centered on `center`, clipped to the image, row-major.
pub fn patch_pixels(center: (usize, usize), n: usize, width: usize, height: usize) -> Vec<(usize, usize)> {
    let half = n / 2;
    let x0 = center.0.saturating_sub(half);
    let y0 = center.1.saturating_sub(half);
    let x1 = (center.0 + n - half).min(width);
    let y1 = (center.1 + n - half).min(height);
    (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).collect()
}

/// Draws error-weighted pixels, lifts each to 3D through rendered depth and
/// gathers patch rays around its reprojection in every view that sees it.
pub fn sample_error_regions(
    errmaps: &ErrorMapSet,
    cameras: &[Camera],
    scene: &DensityColorScene,
    cfg: &FusionConfig,
    iteration: usize,
) -> Vec<RegionSet> {
    let it = iteration as u64;
    let mut rng = keyed_rng(cfg.seed, Stream::ErrorRegions, it, 0, 0);
    let anchors = errmaps.sample(cfg.error_points, &mut rng);
    let opts = cfg.eval_render();
    let mut out = Vec::new();
    for (t, &(view, pixel)) in anchors.iter().enumerate() {
        let cam = &cameras[view];
        let px = (pixel.0 as f64, pixel.1 as f64);
        let Some(z) = z_depth_at(scene, cam, px, &opts) else { continue };
        if !(z > 0.0) {
            continue;
        }
        let Ok(point) = cam.unproject(px, z) else { continue };
        let landed: Vec<Option<(usize, usize)>> = cameras
            .par_iter()
            .map(|c| {
                let (p, depth) = c.project(&point).ok()?;
                if !c.in_bounds(p) || !is_depth_consistent(z_depth_at(scene, c, p, &opts), depth, DEFAULT_VISIBILITY_EPS) {
                    return None;
                }
                Some(((p.0 + 0.5).floor() as usize, (p.1 + 0.5).floor() as usize))
            })
            .collect();
        let mut centers = Vec::new();
        let mut rays = Vec::new();
        for (v, hit) in landed.into_iter().enumerate() {
            let Some(center) = hit else { continue };
            let c = &cameras[v];
            let window = patch_pixels(center, cfg.patch_size, c.width as usize, c.height as usize);
            let mut prng = keyed_rng(cfg.seed, Stream::Patch, it, t as u64, v as u64);
            let picks = sample(&mut prng, window.len(), cfg.rays_per_patch.min(window.len()));
            centers.push((v, center));
            rays.extend(picks.into_iter().map(|i| (v, window[i])));
        }
        if !rays.is_empty() {
            out.push(RegionSet {
                anchor: (view, pixel),
                point,
                centers,
                rays,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Convention};
    use crate::scene::{Primitive, Shape};

    #[test]
    fn patch_window_is_clipped() {
        let full = patch_pixels((10, 10), 8, 32, 32);
        assert_eq!(full.len(), 64);
        assert_eq!(full[0], (6, 6));
        assert_eq!(*full.last().unwrap(), (13, 13));
        let corner = patch_pixels((1, 0), 8, 32, 32);
        assert_eq!(corner.len(), 5 * 4);
        assert_eq!(patch_pixels((31, 31), 8, 32, 32).len(), 25);
    }

    fn scene() -> DensityColorScene {
        // a thick slab facing the z axis
        DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![Primitive {
                shape: Shape::Box {
                    min: [-0.6, -0.6, -0.2],
                    max: [0.6, 0.6, 0.2],
                },
                object_id: 1,
                albedo: [0.8, 0.2, 0.2],
                softness: 0.005,
            }],
            [0.0, 0.0, 0.0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn reprojection_respects_visibility_and_patch_bounds() {
        let up = Vec3::y();
        let look = |id, eye: Vec3| Camera::look_at(id, 32, 32, 40.0, eye, Vec3::zeros(), up, Convention::OpenGlNegZ).unwrap();
        // three cameras in front of the slab, two behind it
        let cameras = vec![
            look(0, Vec3::new(0.0, 0.0, 3.0)),
            look(1, Vec3::new(0.5, 0.2, 3.0)),
            look(2, Vec3::new(-0.4, -0.3, 3.0)),
            look(3, Vec3::new(0.0, 0.3, -3.0)),
            look(4, Vec3::new(0.3, 0.0, -3.0)),
        ];
        let mut errmaps = ErrorMapSet::new(&cameras.iter().map(|c| (c.view_id, 32, 32)).collect::<Vec<_>>(), 4);
        // only the central cell of view 0 carries error
        for m in &mut errmaps.maps {
            m.values.fill(0.0);
        }
        let idx = errmaps.cell_index(0, (16, 16));
        errmaps.maps[0].values[idx] = 1.0;
        let cfg = FusionConfig {
            transmittance_cutoff: 0.0,
            ..FusionConfig::default()
        };
        let regions = sample_error_regions(&errmaps, &cameras, &scene(), &cfg, 5);
        assert_eq!(regions.len(), cfg.error_points);
        for r in &regions {
            let views: Vec<usize> = r.centers.iter().map(|c| c.0).collect();
            assert_eq!(views, vec![0, 1, 2]);
            assert!(r.rays.len() <= 3 * cfg.rays_per_patch);
            assert_eq!(r.rays.len(), 96);
            // the anchor lands back on itself
            assert_eq!(r.centers[0].1, r.anchor.1);
            for (v, (x, y)) in &r.rays {
                let (_, (cx, cy)) = r.centers.iter().find(|c| c.0 == *v).unwrap();
                assert!(*x + 4 >= *cx && *x < cx + 4);
                assert!(*y + 4 >= *cy && *y < cy + 4);
            }
            let mut dedup = r.rays.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), r.rays.len());
        }
        // same iteration and seed reproduce the same sets
        assert_eq!(regions, sample_error_regions(&errmaps, &cameras, &scene(), &cfg, 5));
    }

    #[test]
    fn empty_background_drops_the_sample() {
        let cam = Camera::look_at(0, 16, 16, 20.0, Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 10.0), Vec3::y(), Convention::OpenGlNegZ).unwrap();
        let errmaps = ErrorMapSet::new(&[(0, 16, 16)], 4);
        let regions = sample_error_regions(&errmaps, &[cam], &scene(), &FusionConfig::default(), 0);
        assert!(regions.is_empty());
    }
}
