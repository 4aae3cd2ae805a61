//! Pinhole cameras, rays, 2D/3D projection and prompt propagation.
//!
//! Pixel coordinates are continuous with pixel `(i, j)` covering the square
//! `[i, i+1) x [j, j+1)` in image space; the ray for a pixel passes through its
//! center `(px + 0.5, py + 0.5)`. Depths handed to [`Camera::unproject`] and
//! returned by [`Camera::project`] are z-depths along the optical axis.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Smallest admissible ray parameter.
pub const T_NEAR_MIN: f64 = 1e-4;

/// Relative depth tolerance for the prompt visibility test.
pub const DEFAULT_VISIBILITY_EPS: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(max[i] > min[i])) {
            return Err(Error::Validation(format!(
                "degenerate bounding box {:?} .. {:?}",
                min.as_slice(),
                max.as_slice()
            )));
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Self {
            min: Vec3::repeat(-half),
            max: Vec3::repeat(half),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Longest side length.
    pub fn max_side(&self) -> f64 {
        self.extent().max()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test. Returns the entry and exit parameters of `o + t d`, if any.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t1 >= t0).then_some((t0, t1))
    }
}

/// Camera axis convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Convention {
    /// Looks down local -z, image y points down while camera y points up.
    #[default]
    #[serde(rename = "OPENGL_NEG_Z")]
    OpenGlNegZ,
    /// Looks down local +z, camera y points down.
    #[serde(rename = "OPENCV_POS_Z")]
    OpenCvPosZ,
}

impl Convention {
    fn forward_sign(self) -> f64 {
        match self {
            Convention::OpenGlNegZ => -1.0,
            Convention::OpenCvPosZ => 1.0,
        }
    }

    fn y_sign(self) -> f64 {
        match self {
            Convention::OpenGlNegZ => -1.0,
            Convention::OpenCvPosZ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation block of the camera-to-world transform.
    pub rotation: Matrix3<f64>,
    /// Camera center in world space.
    pub position: Vec3,
    pub convention: Convention,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        view_id: u32,
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        cam_to_world: Matrix4<f64>,
        convention: Convention,
    ) -> Result<Self> {
        let rotation: Matrix3<f64> = cam_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let position: Vec3 = cam_to_world.fixed_view::<3, 1>(0, 3).into_owned();
        let cam = Self {
            view_id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            position,
            convention,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!(
                "view {}: focal lengths must be positive",
                self.view_id
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::Validation(format!(
                "view {}: principal point ({}, {}) outside {}x{} image",
                self.view_id, self.cx, self.cy, self.width, self.height
            )));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Validation(format!(
                "view {}: rotation not orthonormal (error {err:.3e})",
                self.view_id
            )));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        view_id: u32,
        width: u32,
        height: u32,
        focal: f64,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        convention: Convention,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let true_up = right.cross(&forward);
        // Columns are the camera axes expressed in world coordinates.
        let rotation = match convention {
            Convention::OpenGlNegZ => Matrix3::from_columns(&[right, true_up, -forward]),
            Convention::OpenCvPosZ => Matrix3::from_columns(&[right, -true_up, forward]),
        };
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        Camera::new(
            view_id,
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            m,
            convention,
        )
    }

    pub fn cam_to_world(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Same pose, intrinsics rescaled to a `width x height` image.
    pub fn scaled(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            ..self.clone()
        }
    }

    /// World-space unit vector of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation * Vec3::new(0.0, 0.0, self.convention.forward_sign())
    }

    /// Camera-frame direction through image point `(u, v)` with unit forward component.
    fn camera_dir(&self, u: f64, v: f64) -> Vec3 {
        let x = (u - self.cx) / self.fx;
        let y = (v - self.cy) / self.fy;
        let c = self.convention;
        Vec3::new(x, c.y_sign() * y, c.forward_sign())
    }

    /// Pixel and z-depth of a world point.
    pub fn project(&self, point: &Vec3) -> Result<((f64, f64), f64)> {
        let pc = self.rotation.transpose() * (point - self.position);
        let c = self.convention;
        let depth = pc.z * c.forward_sign();
        if depth <= 0.0 {
            return Err(Error::BehindCamera(depth));
        }
        let u = self.fx * (pc.x / depth) + self.cx;
        let v = self.fy * (c.y_sign() * pc.y / depth) + self.cy;
        Ok(((u - 0.5, v - 0.5), depth))
    }

    /// World point at z-depth `depth` behind pixel `pixel`; inverse of [`Camera::project`].
    pub fn unproject(&self, pixel: (f64, f64), depth: f64) -> Result<Vec3> {
        self.unproject_image_point((pixel.0 + 0.5, pixel.1 + 0.5), depth)
    }

    /// Lifts a raw image-plane point `(w, h)` at z-depth `d`:
    /// `p = P^-1 K^-1 (w d, h d, d)^T`, with no pixel-center offset.
    pub fn unproject_image_point(&self, image_point: (f64, f64), depth: f64) -> Result<Vec3> {
        if depth <= 0.0 || !depth.is_finite() {
            return Err(Error::NonpositiveDepth(depth));
        }
        let pc = self.camera_dir(image_point.0, image_point.1) * depth;
        Ok(self.rotation * pc + self.position)
    }

    /// Whether continuous pixel coordinates fall inside the image.
    pub fn in_bounds(&self, pixel: (f64, f64)) -> bool {
        let (u, v) = (pixel.0 + 0.5, pixel.1 + 0.5);
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Converts a distance along a unit ray from this camera into z-depth.
    pub fn ray_length_to_z(&self, length: f64, dir: &Vec3) -> f64 {
        length * dir.dot(&self.forward())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub view_id: u32,
    pub pixel: (f64, f64),
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Ray through the center of `pixel`, clipped to `bbox`.
pub fn ray_for_pixel(camera: &Camera, pixel: (f64, f64), bbox: &Aabb) -> Result<Ray> {
    let dir = (camera.rotation * camera.camera_dir(pixel.0 + 0.5, pixel.1 + 0.5)).normalize();
    let origin = camera.position;
    let (t0, t1) = bbox.intersect(&origin, &dir).ok_or(Error::RayMissesBbox)?;
    let t_near = t0.max(T_NEAR_MIN);
    if t1 <= t_near {
        return Err(Error::RayMissesBbox);
    }
    Ok(Ray {
        origin,
        dir,
        view_id: camera.view_id,
        pixel,
        t_near,
        t_far: t1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prompt3D {
    pub position: Vec3,
    pub object_id: u32,
    pub polarity: Polarity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPrompt {
    /// `None` when the prompt is behind the camera.
    pub pixel: Option<(f64, f64)>,
    pub object_id: u32,
    pub polarity: Polarity,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrompts {
    pub view_id: u32,
    pub prompts: Vec<ProjectedPrompt>,
}

impl ViewPrompts {
    pub fn visible_count(&self) -> usize {
        self.prompts.iter().filter(|p| p.visible).count()
    }
}

/// Projects 3D prompts into every view and flags the ones hidden by geometry.
///
/// `depth_fn` returns the rendered z-depth at a pixel, or `None` for empty rays.
/// A prompt is visible iff it projects in bounds and the rendered depth is within
/// `eps_vis` (relative) of the prompt's own depth.
pub fn propagate_prompts<F>(prompts: &[Prompt3D], cameras: &[Camera], depth_fn: F, eps_vis: f64) -> Vec<ViewPrompts>
where
    F: Fn(&Camera, (f64, f64)) -> Option<f64>,
{
    cameras
        .iter()
        .map(|cam| {
            let prompts = prompts
                .iter()
                .map(|p| {
                    let (pixel, visible) = match cam.project(&p.position) {
                        Ok((px, depth)) => {
                            let visible = cam.in_bounds(px) && is_depth_consistent(depth_fn(cam, px), depth, eps_vis);
                            (Some(px), visible)
                        }
                        Err(_) => (None, false),
                    };
                    ProjectedPrompt {
                        pixel,
                        object_id: p.object_id,
                        polarity: p.polarity,
                        visible,
                    }
                })
                .collect();
            ViewPrompts {
                view_id: cam.view_id,
                prompts,
            }
        })
        .collect()
}

/// Relative depth agreement; empty rays (no or non-positive depth) never agree.
pub fn is_depth_consistent(rendered: Option<f64>, expected: f64, eps_vis: f64) -> bool {
    match rendered {
        Some(d) if d > 0.0 => (d - expected).abs() <= eps_vis * expected,
        _ => false,
    }
}

/// Views with at least `k_min` visible prompts.
pub fn filter_views(visibility: &[ViewPrompts], k_min: usize) -> Result<Vec<u32>> {
    if k_min == 0 {
        return Err(Error::Validation("k_min must be at least 1".into()));
    }
    let kept: Vec<u32> = visibility
        .iter()
        .filter(|v| v.visible_count() >= k_min)
        .map(|v| v.view_id)
        .collect();
    if kept.is_empty() {
        return Err(Error::NoViewsRetained);
    }
    Ok(kept)
}

// ---------------------------------------------------------------------------
// cameras.json / prompts.json

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    cam_to_world: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    convention: Convention,
    views: Vec<CameraRecord>,
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let file: CamerasFile = serde_json::from_str(text)?;
    file.views
        .into_iter()
        .map(|r| {
            if r.cam_to_world.len() != 16 {
                return Err(Error::Validation(format!(
                    "view {}: cam_to_world needs 16 numbers, got {}",
                    r.id,
                    r.cam_to_world.len()
                )));
            }
            let m = Matrix4::from_row_slice(&r.cam_to_world);
            Camera::new(r.id, r.width, r.height, r.fx, r.fy, r.cx, r.cy, m, file.convention)
        })
        .collect()
}

pub fn cameras_to_json(cameras: &[Camera]) -> Result<String> {
    let convention = cameras.first().map(|c| c.convention).unwrap_or_default();
    if cameras.iter().any(|c| c.convention != convention) {
        return Err(Error::Validation("mixed camera conventions in one file".into()));
    }
    let views = cameras
        .iter()
        .map(|c| {
            let m = c.cam_to_world();
            let mut row_major = Vec::with_capacity(16);
            for r in 0..4 {
                for col in 0..4 {
                    row_major.push(m[(r, col)]);
                }
            }
            CameraRecord {
                id: c.view_id,
                width: c.width,
                height: c.height,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                cam_to_world: row_major,
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&CamerasFile { convention, views })?)
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    cameras_from_json(&fs::read_to_string(path)?)
}

pub fn save_cameras(cameras: &[Camera], path: &Path) -> Result<()> {
    fs::write(path, cameras_to_json(cameras)?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PromptRecord {
    World {
        xyz: [f64; 3],
        object_id: u32,
        polarity: Polarity,
    },
    Pixel {
        view_id: u32,
        pixel: [f64; 2],
        object_id: u32,
        polarity: Polarity,
    },
}

#[derive(Serialize, Deserialize)]
struct PromptsFile {
    prompts: Vec<PromptRecord>,
}

/// Parses prompts.json. 2D entries are lifted to 3D through `depth_fn` (z-depth).
pub fn prompts_from_json<F>(text: &str, cameras: &[Camera], num_labels: usize, depth_fn: F) -> Result<Vec<Prompt3D>>
where
    F: Fn(&Camera, (f64, f64)) -> Option<f64>,
{
    let file: PromptsFile = serde_json::from_str(text)?;
    let check_id = |id: u32| {
        if id == 0 || id as usize >= num_labels {
            Err(Error::Validation(format!("prompt object_id {id} outside [1, {}]", num_labels - 1)))
        } else {
            Ok(())
        }
    };
    file.prompts
        .into_iter()
        .map(|rec| match rec {
            PromptRecord::World {
                xyz,
                object_id,
                polarity,
            } => {
                check_id(object_id)?;
                Ok(Prompt3D {
                    position: Vec3::from(xyz),
                    object_id,
                    polarity,
                })
            }
            PromptRecord::Pixel {
                view_id,
                pixel,
                object_id,
                polarity,
            } => {
                check_id(object_id)?;
                let cam = cameras
                    .iter()
                    .find(|c| c.view_id == view_id)
                    .ok_or_else(|| Error::Validation(format!("prompt refers to unknown view {view_id}")))?;
                let px = (pixel[0], pixel[1]);
                if !cam.in_bounds(px) {
                    return Err(Error::Validation(format!("prompt pixel {pixel:?} outside view {view_id}")));
                }
                let depth = depth_fn(cam, px).unwrap_or(0.0);
                Ok(Prompt3D {
                    position: cam.unproject(px, depth)?,
                    object_id,
                    polarity,
                })
            }
        })
        .collect()
}

pub fn prompts_to_json(prompts: &[Prompt3D]) -> Result<String> {
    let prompts = prompts
        .iter()
        .map(|p| PromptRecord::World {
            xyz: [p.position.x, p.position.y, p.position.z],
            object_id: p.object_id,
            polarity: p.polarity,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&PromptsFile { prompts })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn identity_camera(convention: Convention) -> Camera {
        Camera::new(0, 100, 100, 100.0, 100.0, 50.0, 50.0, Matrix4::identity(), convention).unwrap()
    }

    #[test]
    fn principal_axis_ray() {
        let cam = Camera::new(0, 4, 4, 1.0, 1.0, 0.0, 0.0, Matrix4::identity(), Convention::OpenGlNegZ).unwrap();
        let bbox = Aabb::new(Vec3::new(-1.0, -1.0, -3.0), Vec3::new(1.0, 1.0, -1.0)).unwrap();
        let ray = ray_for_pixel(&cam, (-0.5, -0.5), &bbox).unwrap();
        assert_abs_diff_eq!(ray.dir, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(ray.t_near, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ray.t_far, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_box_clip_from_outside() {
        let cam = Camera::look_at(
            0,
            64,
            64,
            60.0,
            Vec3::new(0.0, 0.0, 4.0),
            Vec3::zeros(),
            Vec3::y(),
            Convention::OpenGlNegZ,
        )
        .unwrap();
        let ray = ray_for_pixel(&cam, (31.5, 31.5), &Aabb::cube(1.0)).unwrap();
        assert_abs_diff_eq!(ray.t_near, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ray.t_far, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ray.dir.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_missing_box() {
        let cam = identity_camera(Convention::OpenGlNegZ);
        let bbox = Aabb::new(Vec3::new(10.0, 10.0, -3.0), Vec3::new(11.0, 11.0, -1.0)).unwrap();
        assert!(matches!(ray_for_pixel(&cam, (49.5, 49.5), &bbox), Err(Error::RayMissesBbox)));
        // box entirely behind
        let behind = Aabb::new(Vec3::new(-1.0, -1.0, 1.0), Vec3::new(1.0, 1.0, 2.0)).unwrap();
        assert!(matches!(ray_for_pixel(&cam, (49.5, 49.5), &behind), Err(Error::RayMissesBbox)));
    }

    #[test]
    fn camera_inside_box_clamps_t_near() {
        let cam = identity_camera(Convention::OpenCvPosZ);
        let ray = ray_for_pixel(&cam, (49.5, 49.5), &Aabb::cube(1.0)).unwrap();
        assert_eq!(ray.t_near, T_NEAR_MIN);
    }

    #[test]
    fn on_axis_projection() {
        let cam = identity_camera(Convention::OpenGlNegZ);
        let (px, depth) = cam.project(&Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_abs_diff_eq!(px.0, 49.5, epsilon = 1e-12);
        assert_abs_diff_eq!(px.1, 49.5, epsilon = 1e-12);
        assert_abs_diff_eq!(depth, 1.0, epsilon = 1e-12);
        assert!(matches!(cam.project(&Vec3::new(0.0, 0.0, 1.0)), Err(Error::BehindCamera(_))));
    }

    #[test]
    fn unproject_image_point_matches_hand_evaluation() {
        // (w, h) = (50, 50), d = 1 with fx = fy = 100, cx = cy = 50.
        let gl = identity_camera(Convention::OpenGlNegZ);
        assert_abs_diff_eq!(gl.unproject_image_point((50.0, 50.0), 1.0).unwrap(), Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        let cv = identity_camera(Convention::OpenCvPosZ);
        assert_abs_diff_eq!(cv.unproject_image_point((50.0, 50.0), 1.0).unwrap(), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        // off-axis: (w, h) = (150, 50), d = 2 -> x = (150-50)/100*2 = 2
        assert_abs_diff_eq!(cv.unproject_image_point((150.0, 50.0), 2.0).unwrap(), Vec3::new(2.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_on_axis_depth() {
        let cam = identity_camera(Convention::OpenGlNegZ);
        let p = cam.unproject((49.5, 49.5), 2.0).unwrap();
        assert_abs_diff_eq!(p, Vec3::new(0.0, 0.0, -2.0), epsilon = 1e-12);
        assert!(matches!(cam.unproject((1.0, 1.0), 0.0), Err(Error::NonpositiveDepth(_))));
        assert!(matches!(cam.unproject((1.0, 1.0), -1.0), Err(Error::NonpositiveDepth(_))));
    }

    #[test]
    fn rejects_invalid_cameras() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        assert!(Camera::new(0, 10, 10, 5.0, 5.0, 5.0, 5.0, m, Convention::OpenGlNegZ).is_err());
        assert!(Camera::new(0, 10, 10, 0.0, 5.0, 5.0, 5.0, Matrix4::identity(), Convention::OpenGlNegZ).is_err());
        assert!(Camera::new(0, 10, 10, 5.0, 5.0, 10.0, 5.0, Matrix4::identity(), Convention::OpenGlNegZ).is_err());
    }

    fn random_camera(seed: u64, convention: Convention) -> Camera {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let eye = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let eye = if eye.norm() < 1.0 { eye + Vec3::new(3.0, 0.0, 0.0) } else { eye };
        let target = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let w = rng.gen_range(16..200);
        let h = rng.gen_range(16..200);
        let mut cam = Camera::look_at(0, w, h, rng.gen_range(20.0..300.0), eye, target, Vec3::new(0.1, 1.0, 0.2), convention).unwrap();
        cam.fy = cam.fx * rng.gen_range(0.8..1.2);
        cam.cx = rng.gen_range(0.0..w as f64);
        cam.cy = rng.gen_range(0.0..h as f64);
        cam
    }

    #[test]
    fn round_trip_on_1000_seeded_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        for i in 0..1000u64 {
            let conv = if i % 2 == 0 { Convention::OpenGlNegZ } else { Convention::OpenCvPosZ };
            let cam = random_camera(i, conv);
            let p = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let Ok((px, depth)) = cam.project(&p) else { continue };
            let q = cam.unproject(px, depth).unwrap();
            assert!((q - p).norm() <= 1e-6 * p.norm().max(1.0), "{p:?} vs {q:?}");
            checked += 1;
        }
        assert!(checked > 400);
    }

    proptest! {
        #[test]
        fn ray_through_projected_pixel_hits_point(seed in 0u64..10_000, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let conv = if seed % 2 == 0 { Convention::OpenGlNegZ } else { Convention::OpenCvPosZ };
            let cam = random_camera(seed, conv);
            let p = Vec3::new(x, y, z);
            if let Ok((px, _)) = cam.project(&p) {
                let bbox = Aabb::cube(100.0);
                let ray = ray_for_pixel(&cam, px, &bbox).unwrap();
                let v = p - ray.origin;
                let closest = (v - ray.dir * v.dot(&ray.dir)).norm();
                prop_assert!(closest < 1e-6);
                prop_assert!((ray.dir.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn camera_file_round_trip_keeps_orthonormality() {
        let cams: Vec<Camera> = (0..5).map(|i| random_camera(i, Convention::OpenCvPosZ)).collect();
        let text = cameras_to_json(&cams).unwrap();
        let back = cameras_from_json(&text).unwrap();
        for (a, b) in cams.iter().zip(&back) {
            b.validate().unwrap();
            assert_abs_diff_eq!(a.rotation, b.rotation, epsilon = 1e-15);
            assert_abs_diff_eq!(a.position, b.position, epsilon = 1e-15);
        }
    }

    #[test]
    fn view_filtering_counts() {
        let mk = |id, n_visible: usize, n: usize| ViewPrompts {
            view_id: id,
            prompts: (0..n)
                .map(|i| ProjectedPrompt {
                    pixel: Some((0.0, 0.0)),
                    object_id: 1,
                    polarity: Polarity::Positive,
                    visible: i < n_visible,
                })
                .collect(),
        };
        let vis = vec![mk(0, 0, 5), mk(1, 2, 5), mk(2, 5, 5)];
        assert_eq!(filter_views(&vis, 2).unwrap(), vec![1, 2]);
        assert_eq!(filter_views(&vis, 1).unwrap(), vec![1, 2]);
        let all = vec![mk(0, 5, 5), mk(1, 5, 5)];
        assert_eq!(filter_views(&all, 1).unwrap(), vec![0, 1]);
        assert!(matches!(filter_views(&all, 6), Err(Error::NoViewsRetained)));
    }

    #[test]
    fn prompt_visibility_from_depth() {
        let cam = identity_camera(Convention::OpenGlNegZ);
        let ahead = Prompt3D {
            position: Vec3::new(0.0, 0.0, -2.0),
            object_id: 1,
            polarity: Polarity::Positive,
        };
        let behind = Prompt3D {
            position: Vec3::new(0.0, 0.0, 2.0),
            ..ahead
        };
        // a wall at z-depth 1 hides anything further away
        let wall = |_: &Camera, _: (f64, f64)| Some(1.0);
        let target = |_: &Camera, _: (f64, f64)| Some(2.0);
        let vis = propagate_prompts(&[ahead, behind], std::slice::from_ref(&cam), target, DEFAULT_VISIBILITY_EPS);
        assert!(vis[0].prompts[0].visible);
        assert!(!vis[0].prompts[1].visible);
        assert!(vis[0].prompts[1].pixel.is_none());
        let vis = propagate_prompts(&[ahead], std::slice::from_ref(&cam), wall, DEFAULT_VISIBILITY_EPS);
        assert!(!vis[0].prompts[0].visible);
        let vis = propagate_prompts(&[ahead], &[cam], |_: &Camera, _: (f64, f64)| None, DEFAULT_VISIBILITY_EPS);
        assert!(!vis[0].prompts[0].visible);
    }

    #[test]
    fn prompts_file_lifts_pixel_entries() {
        let cam = identity_camera(Convention::OpenGlNegZ);
        let text = r#"{"prompts": [
            {"xyz": [0.1, 0.2, -1.0], "object_id": 1, "polarity": "positive"},
            {"view_id": 0, "pixel": [49.5, 49.5], "object_id": 2, "polarity": "negative"}
        ]}"#;
        let prompts = prompts_from_json(text, &[cam], 3, |_: &Camera, _: (f64, f64)| Some(3.0)).unwrap();
        assert_eq!(prompts.len(), 2);
        assert_abs_diff_eq!(prompts[1].position, Vec3::new(0.0, 0.0, -3.0), epsilon = 1e-12);
        assert_eq!(prompts[1].polarity, Polarity::Negative);
        let bad = r#"{"prompts": [{"xyz": [0,0,0], "object_id": 3, "polarity": "positive"}]}"#;
        assert!(prompts_from_json(bad, &[], 3, |_: &Camera, _: (f64, f64)| None).is_err());
    }
}
