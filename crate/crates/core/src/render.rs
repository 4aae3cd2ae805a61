//! Discrete volume compositing along rays.
//!
//! `T_1 = 1`, `T_k = exp(-sum_{a<k} sigma_a delta_a)`, `w_k = T_k (1 - exp(-sigma_k delta_k))`,
//! and any per-sample payload (color, feature, identity logits) composites as
//! `sum_k w_k payload_k`. Densities come from the frozen scene, so only payloads
//! carry gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{ray_for_pixel, Camera, Ray, Vec3};
use crate::grid::TrainableGrid;
use crate::rng::{keyed_rng, Stream};
use crate::scene::DensityColorScene;

pub const DEFAULT_SAMPLES_PER_RAY: usize = 128;

/// Samples along a ray with a D-dimensional payload per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `K * dim` values, sample-major.
    pub payload: Vec<f64>,
    pub dim: usize,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.t.len();
        if self.delta.len() != k || self.sigma.len() != k || self.payload.len() != k * self.dim {
            return Err(Error::DimMismatch("ray sample arrays disagree in length".into()));
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("sample positions must strictly increase".into()));
        }
        if self.delta.iter().any(|d| !(*d > 0.0)) || self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Validation("need delta > 0 and sigma >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeResult {
    pub value: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub opacity: f64,
}

/// Compositing weights and transmittance for densities `sigma` and spacings `delta`.
pub fn compositing_weights(sigma: &[f64], delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut weights = Vec::with_capacity(sigma.len());
    let mut trans = Vec::with_capacity(sigma.len());
    let mut optical_depth = 0.0f64;
    for (s, d) in sigma.iter().zip(delta) {
        let t = (-optical_depth).exp();
        let tau = s * d;
        trans.push(t);
        weights.push(t * -(-tau).exp_m1());
        optical_depth += tau;
    }
    (weights, trans)
}

pub fn composite(samples: &RaySamples) -> CompositeResult {
    let (weights, transmittance) = compositing_weights(&samples.sigma, &samples.delta);
    let dim = samples.dim;
    let mut value = vec![0.0; dim];
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (v, p) in value.iter_mut().zip(&samples.payload[k * dim..(k + 1) * dim]) {
            *v += w * p;
        }
    }
    let opacity = weights.iter().sum();
    CompositeResult {
        value,
        weights,
        transmittance,
        opacity,
    }
}

/// Naive reference compositor kept independent of [`composite`] for testing.
pub mod oracle {
    use super::{CompositeResult, RaySamples};

    /// Running-product evaluation: keeps `T` as a product of per-sample
    /// survival factors and evaluates alpha directly as `1 - exp(-x)`.
    pub fn oracle_composite(samples: &RaySamples) -> CompositeResult {
        let k_count = samples.t.len();
        let mut transmittance = vec![0.0; k_count];
        let mut weights = vec![0.0; k_count];
        let mut survive = 1.0;
        for k in 0..k_count {
            transmittance[k] = survive;
            let alpha = 1.0 - (-(samples.sigma[k] * samples.delta[k])).exp();
            weights[k] = survive * alpha;
            survive *= 1.0 - alpha;
        }
        let mut value = vec![0.0; samples.dim];
        for (c, v) in value.iter_mut().enumerate() {
            for k in 0..k_count {
                *v += weights[k] * samples.payload[k * samples.dim + c];
            }
        }
        let mut opacity = 0.0;
        for w in &weights {
            opacity += w;
        }
        CompositeResult {
            value,
            weights,
            transmittance,
            opacity,
        }
    }
}

/// How sample positions are placed inside each of the K bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Bin midpoints; no randomness.
    Midpoint,
    /// Uniform jitter from the stream keyed by `(seed, view, pixel, iteration)`.
    Stratified { seed: u64, iteration: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples_per_ray: usize,
    pub sampling: Sampling,
    /// Marching stops once transmittance falls below this value. 0 disables it.
    pub transmittance_cutoff: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples_per_ray: DEFAULT_SAMPLES_PER_RAY,
            sampling: Sampling::Midpoint,
            transmittance_cutoff: 0.0,
        }
    }
}

impl RenderOptions {
    pub fn midpoint(samples_per_ray: usize) -> Self {
        Self {
            samples_per_ray,
            ..Self::default()
        }
    }
}

/// Densities and weights along one ray. Samples past the transmittance cutoff are dropped.
#[derive(Clone, Debug, Default)]
pub struct MarchedRay {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub points: Vec<Vec3>,
    /// Transmittance left after the last kept sample.
    pub residual: f64,
}

impl MarchedRay {
    pub fn opacity(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Indices of samples with non-zero weight.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(k, _)| k)
    }

    /// Expected ray length `sum_k w_k t_k`.
    pub fn depth(&self) -> f64 {
        self.t.iter().zip(&self.weights).map(|(t, w)| t * w).sum()
    }

    fn composite_result(&self, value: Vec<f64>) -> CompositeResult {
        CompositeResult {
            value,
            weights: self.weights.clone(),
            transmittance: self.transmittance.clone(),
            opacity: self.opacity(),
        }
    }
}

/// Stratified sample positions and spacings in `[t_near, t_far]`.
pub fn sample_positions(ray: &Ray, opts: &RenderOptions) -> (Vec<f64>, Vec<f64>) {
    let k = opts.samples_per_ray.max(1);
    let h = (ray.t_far - ray.t_near) / k as f64;
    let mut t = Vec::with_capacity(k);
    match opts.sampling {
        Sampling::Midpoint => {
            for i in 0..k {
                t.push(ray.t_near + (i as f64 + 0.5) * h);
            }
        }
        Sampling::Stratified { seed, iteration } => {
            let pixel_key = ((ray.pixel.1.floor() as i64 as u64) << 32) ^ (ray.pixel.0.floor() as i64 as u64 & 0xFFFF_FFFF);
            let mut rng = keyed_rng(seed, Stream::RayJitter, ray.view_id as u64, pixel_key, iteration);
            for i in 0..k {
                let u: f64 = rng.gen();
                t.push(ray.t_near + (i as f64 + u) * h);
            }
        }
    }
    let mut delta = Vec::with_capacity(k);
    for i in 0..k {
        let next = if i + 1 < k { t[i + 1] } else { ray.t_far };
        delta.push(next - t[i]);
    }
    (t, delta)
}

/// Evaluates density along the ray and the compositing weights.
pub fn march(scene: &DensityColorScene, ray: &Ray, opts: &RenderOptions) -> MarchedRay {
    let (t_all, delta_all) = sample_positions(ray, opts);
    let k = t_all.len();
    let mut out = MarchedRay {
        t: Vec::with_capacity(k),
        delta: Vec::with_capacity(k),
        sigma: Vec::with_capacity(k),
        weights: Vec::with_capacity(k),
        transmittance: Vec::with_capacity(k),
        points: Vec::with_capacity(k),
        residual: 1.0,
    };
    let mut optical_depth = 0.0f64;
    for (t, d) in t_all.into_iter().zip(delta_all) {
        let trans = (-optical_depth).exp();
        if opts.transmittance_cutoff > 0.0 && trans < opts.transmittance_cutoff {
            break;
        }
        let p = ray.at(t);
        let sigma = scene.sample_density(&p);
        let tau = sigma * d;
        out.t.push(t);
        out.delta.push(d);
        out.sigma.push(sigma);
        out.transmittance.push(trans);
        out.weights.push(trans * -(-tau).exp_m1());
        out.points.push(p);
        optical_depth += tau;
    }
    out.residual = (-optical_depth).exp();
    out
}

/// Composited RGB plus background times residual transmittance.
pub fn render_rgb(scene: &DensityColorScene, ray: &Ray, opts: &RenderOptions) -> (Vec3, CompositeResult) {
    let m = march(scene, ray, opts);
    let rgb = rgb_from_march(scene, ray, &m);
    let res = m.composite_result(rgb.iter().copied().collect());
    (rgb, res)
}

pub fn rgb_from_march(scene: &DensityColorScene, ray: &Ray, m: &MarchedRay) -> Vec3 {
    let mut rgb = Vec3::zeros();
    for k in m.active() {
        rgb += scene.sample_color(&m.points[k], &ray.dir) * m.weights[k];
    }
    rgb + scene.background() * m.residual
}

/// Expected ray length (not z-depth); 0 for empty rays.
pub fn render_depth(scene: &DensityColorScene, ray: &Ray, opts: &RenderOptions) -> f64 {
    march(scene, ray, opts).depth()
}

/// Rendered z-depth at a pixel, or `None` when the ray misses the box or sees nothing.
pub fn z_depth_at(scene: &DensityColorScene, camera: &Camera, pixel: (f64, f64), opts: &RenderOptions) -> Option<f64> {
    let ray = ray_for_pixel(camera, pixel, &scene.bbox).ok()?;
    let m = march(scene, &ray, opts);
    if m.opacity() <= 0.0 {
        return None;
    }
    Some(camera.ray_length_to_z(m.depth(), &ray.dir))
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// `J^T g` for the softmax Jacobian at probabilities `p`.
pub fn softmax_backward(p: &[f64], upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
    p.iter().zip(upstream).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Field payload composited along a marched ray, with what backward needs.
#[derive(Clone, Debug)]
pub struct FieldRender {
    /// `sum_k w_k f(x_k)` (pre-softmax for masks).
    pub composited: Vec<f64>,
    /// Sample points and weights that contributed.
    pub contributions: Vec<(Vec3, f64)>,
    pub opacity: f64,
}

impl FieldRender {
    /// Empty ray: composites to zero and contributes no gradient.
    pub fn empty(dim: usize) -> Self {
        Self {
            composited: vec![0.0; dim],
            contributions: Vec::new(),
            opacity: 0.0,
        }
    }

    /// Routes `dL/d(composited)` to the grid: each sample receives `w_k * upstream`.
    pub fn backward(&self, grid: &mut TrainableGrid, upstream: &[f64], scale: f64) {
        for (p, w) in &self.contributions {
            grid.scatter_grad(p, w * scale, upstream);
        }
    }
}

pub fn composite_field(grid: &TrainableGrid, m: &MarchedRay) -> FieldRender {
    let mut composited = vec![0.0; grid.channels];
    let mut buf = vec![0.0; grid.channels];
    let mut contributions = Vec::new();
    for k in m.active() {
        let w = m.weights[k];
        grid.query_into(&m.points[k], &mut buf);
        for (c, v) in composited.iter_mut().zip(&buf) {
            *c += w * v;
        }
        contributions.push((m.points[k], w));
    }
    FieldRender {
        composited,
        contributions,
        opacity: m.opacity(),
    }
}

/// Rendered mask: softmax of the composited identity logits.
#[derive(Clone, Debug)]
pub struct MaskRender {
    pub probs: Vec<f64>,
    pub field: FieldRender,
}

impl MaskRender {
    pub fn from_field(field: FieldRender) -> Self {
        Self {
            probs: softmax(&field.composited),
            field,
        }
    }

    /// `dL/d(pre-softmax)` from `dL/dM`.
    pub fn logits_grad(&self, upstream_probs: &[f64]) -> Vec<f64> {
        softmax_backward(&self.probs, upstream_probs)
    }

    /// Per-sample logit gradients `w_k * J^T upstream`, in sample order.
    pub fn sample_grads(&self, upstream_probs: &[f64]) -> Vec<(Vec3, Vec<f64>)> {
        let dz = self.logits_grad(upstream_probs);
        self.field
            .contributions
            .iter()
            .map(|(p, w)| (*p, dz.iter().map(|g| g * w).collect()))
            .collect()
    }
}

pub fn render_mask(scene: &DensityColorScene, field: &TrainableGrid, ray: &Ray, opts: &RenderOptions) -> MaskRender {
    let m = march(scene, ray, opts);
    MaskRender::from_field(composite_field(field, &m))
}

pub fn render_feature(scene: &DensityColorScene, field: &TrainableGrid, ray: &Ray, opts: &RenderOptions) -> FieldRender {
    composite_field(field, &march(scene, ray, opts))
}

/// Mask at a pixel; rays missing the box render as uniform.
pub fn render_mask_at(
    scene: &DensityColorScene,
    field: &TrainableGrid,
    camera: &Camera,
    pixel: (f64, f64),
    opts: &RenderOptions,
) -> MaskRender {
    match ray_for_pixel(camera, pixel, &scene.bbox) {
        Ok(ray) => render_mask(scene, field, &ray, opts),
        Err(_) => MaskRender::from_field(FieldRender::empty(field.channels)),
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::oracle::oracle_composite;
    use super::*;
    use crate::geometry::{Aabb, Convention};
    use crate::scene::{Primitive, Shape};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn samples(sigma_delta: &[f64], payload: Vec<f64>, dim: usize) -> RaySamples {
        let k = sigma_delta.len();
        RaySamples {
            t: (0..k).map(|i| i as f64 + 1.0).collect(),
            delta: vec![1.0; k],
            sigma: sigma_delta.to_vec(),
            payload,
            dim,
        }
    }

    #[test]
    fn composite_hand_cases() {
        let empty = samples(&[0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], 1);
        for r in [composite(&empty), oracle_composite(&empty)] {
            assert_eq!(r.weights, vec![0.0; 3]);
            assert_eq!(r.value, vec![0.0]);
            assert_eq!(r.transmittance, vec![1.0; 3]);
        }
        let opaque = samples(&[1e9], vec![0.3, 0.7], 2);
        for r in [composite(&opaque), oracle_composite(&opaque)] {
            assert_abs_diff_eq!(r.weights[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.value[0], 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(r.value[1], 0.7, epsilon = 1e-12);
        }
        let halves = samples(&[LN_2, LN_2], vec![1.0, 1.0], 1);
        for r in [composite(&halves), oracle_composite(&halves)] {
            assert_abs_diff_eq!(r.weights[0], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(r.weights[1], 0.25, epsilon = 1e-12);
            assert_abs_diff_eq!(r.transmittance[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.transmittance[1], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_depth() {
        // two alpha = 0.5 surfaces at t = 1 and t = 3
        let s = RaySamples {
            t: vec![1.0, 3.0],
            delta: vec![1.0, 1.0],
            sigma: vec![LN_2, LN_2],
            payload: vec![1.0, 3.0],
            dim: 1,
        };
        // 0.5 * 1 + 0.25 * 3
        assert_abs_diff_eq!(composite(&s).value[0], 1.25, epsilon = 1e-12);
    }

    #[test]
    fn softmax_of_composited_logits() {
        // w = (0.5, 0.25) over logits (4, 0) and (0, 4) -> softmax(2, 1)
        let s = RaySamples {
            t: vec![1.0, 2.0],
            delta: vec![1.0, 1.0],
            sigma: vec![LN_2, LN_2],
            payload: vec![4.0, 0.0, 0.0, 4.0],
            dim: 2,
        };
        let p = softmax(&composite(&s).value);
        assert_abs_diff_eq!(p[0], 0.7310585786, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.2689414214, epsilon = 1e-9);
        let opaque = samples(&[1e9], vec![10.0, 0.0], 2);
        let p = softmax(&composite(&opaque).value);
        assert_abs_diff_eq!(p[0], 0.9999546021, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 4.539786870e-5, epsilon = 1e-12);
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let big = softmax(&[1000.0, 0.0]);
        assert!(big[0].is_finite() && (big[0] - 1.0).abs() < 1e-15);
    }

    fn sphere_scene(albedo: [f64; 3]) -> DensityColorScene {
        let mut s = DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 0.5,
                },
                object_id: 1,
                albedo,
                softness: 0.01,
            }],
            [0.1, 0.2, 0.3],
            2,
        )
        .unwrap();
        s.sigma_max = 1e4;
        s
    }

    fn front_camera() -> Camera {
        Camera::look_at(0, 32, 32, 40.0, Vec3::new(0.0, 0.0, 4.0), Vec3::zeros(), Vec3::y(), Convention::OpenGlNegZ).unwrap()
    }

    #[test]
    fn empty_scene_renders_background_and_zero_depth() {
        let scene = DensityColorScene::analytic(Aabb::cube(1.0), vec![], [0.1, 0.2, 0.3], 2).unwrap();
        let ray = ray_for_pixel(&front_camera(), (15.5, 15.5), &scene.bbox).unwrap();
        let (rgb, res) = render_rgb(&scene, &ray, &RenderOptions::midpoint(64));
        assert_eq!(rgb, Vec3::new(0.1, 0.2, 0.3));
        assert_eq!(res.opacity, 0.0);
        assert_eq!(render_depth(&scene, &ray, &RenderOptions::midpoint(64)), 0.0);
        let field = TrainableGrid::new(scene.bbox, &[4], 3).unwrap();
        let m = render_mask(&scene, &field, &ray, &RenderOptions::midpoint(64));
        for p in m.probs {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn opaque_red_sphere() {
        let scene = sphere_scene([1.0, 0.0, 0.0]);
        let ray = ray_for_pixel(&front_camera(), (15.5, 15.5), &scene.bbox).unwrap();
        let (rgb, _) = render_rgb(&scene, &ray, &RenderOptions::midpoint(256));
        assert_abs_diff_eq!(rgb, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-3);
        // surface at t = 3.5, one bin is 2/256 long
        let depth = render_depth(&scene, &ray, &RenderOptions::midpoint(256));
        assert!((depth - 3.5).abs() < 2.0 / 256.0 + 0.01, "{depth}");
        let z = z_depth_at(&scene, &front_camera(), (15.5, 15.5), &RenderOptions::midpoint(256)).unwrap();
        assert_abs_diff_eq!(z, depth, epsilon = 1e-12);
    }

    #[test]
    fn opaque_slab_depth() {
        let mut scene = DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![Primitive {
                shape: Shape::Box {
                    min: [-1.0, -1.0, -1.0],
                    max: [1.0, 1.0, 0.0],
                },
                object_id: 1,
                albedo: [1.0; 3],
                softness: 0.005,
            }],
            [0.0; 3],
            2,
        )
        .unwrap();
        scene.sigma_max = 1e5;
        // camera at z = 2 facing -z: slab face at ray parameter 2
        let cam = Camera::look_at(0, 9, 9, 10.0, Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), Convention::OpenGlNegZ).unwrap();
        let ray = ray_for_pixel(&cam, (4.0, 4.0), &scene.bbox).unwrap();
        let opts = RenderOptions::midpoint(400);
        let bin = (ray.t_far - ray.t_near) / 400.0;
        let d = render_depth(&scene, &ray, &opts);
        assert!((d - 2.0).abs() <= bin + 0.005, "{d}");
    }

    #[test]
    fn rgb_matches_oracle_on_same_samples() {
        let scene = sphere_scene([0.2, 0.9, 0.4]);
        let cam = front_camera();
        for px in [(10.0, 12.0), (15.5, 15.5), (20.3, 9.1)] {
            let ray = ray_for_pixel(&cam, px, &scene.bbox).unwrap();
            let opts = RenderOptions {
                samples_per_ray: 96,
                sampling: Sampling::Stratified { seed: 4, iteration: 2 },
                transmittance_cutoff: 0.0,
            };
            let m = march(&scene, &ray, &opts);
            let payload: Vec<f64> = m.points.iter().flat_map(|p| scene.sample_color(p, &ray.dir).iter().copied().collect::<Vec<_>>()).collect();
            let rs = RaySamples {
                t: m.t.clone(),
                delta: m.delta.clone(),
                sigma: m.sigma.clone(),
                payload,
                dim: 3,
            };
            let o = oracle_composite(&rs);
            let (rgb, _) = render_rgb(&scene, &ray, &opts);
            let background = 1.0 - o.opacity;
            for c in 0..3 {
                let expected = o.value[c] + background * scene.background()[c];
                assert!((rgb[c] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stratified_samples_are_keyed_and_increasing() {
        let scene = sphere_scene([1.0; 3]);
        let ray = ray_for_pixel(&front_camera(), (3.0, 7.0), &scene.bbox).unwrap();
        let opts = |it| RenderOptions {
            samples_per_ray: 32,
            sampling: Sampling::Stratified { seed: 1, iteration: it },
            transmittance_cutoff: 0.0,
        };
        let (a, da) = sample_positions(&ray, &opts(0));
        let (b, _) = sample_positions(&ray, &opts(0));
        let (c, _) = sample_positions(&ray, &opts(1));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        assert!(da.iter().all(|d| *d > 0.0));
        assert!(a[0] >= ray.t_near && *a.last().unwrap() < ray.t_far);
    }

    #[test]
    fn midpoint_rgb_converges_with_k() {
        let scene = DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 0.6,
                },
                object_id: 1,
                albedo: [0.9, 0.5, 0.1],
                softness: 0.3,
            }],
            [0.0, 0.0, 1.0],
            2,
        )
        .unwrap();
        let ray = ray_for_pixel(&front_camera(), (13.0, 14.0), &scene.bbox).unwrap();
        let render = |k| render_rgb(&scene, &ray, &RenderOptions::midpoint(k)).0;
        let reference = render(8192);
        let e1 = (render(64) - reference).norm();
        let e2 = (render(128) - reference).norm();
        assert!(e2 <= e1 * 0.75 + 1e-9, "{e1} {e2}");
    }

    #[test]
    fn mask_backward_single_opaque_sample() {
        // one opaque sample with CE against a one-hot target: dL/di = softmax - onehot
        let scene = sphere_scene([1.0; 3]);
        let mut field = TrainableGrid::new(scene.bbox, &[2], 2).unwrap();
        field.fill_with(|i| if i % 2 == 0 { 1.0 } else { -0.5 });
        let ray = ray_for_pixel(&front_camera(), (15.5, 15.5), &scene.bbox).unwrap();
        let m = render_mask(&scene, &field, &ray, &RenderOptions::midpoint(256));
        let target = [0.0, 1.0];
        let upstream: Vec<f64> = m.probs.iter().zip(&target).map(|(p, t)| -t / p).collect();
        let dz = m.logits_grad(&upstream);
        for c in 0..2 {
            assert_abs_diff_eq!(dz[c], m.probs[c] - target[c], epsilon = 1e-12);
        }
        let total: f64 = m.sample_grads(&upstream).iter().map(|(_, g)| g[0]).sum();
        assert_abs_diff_eq!(total, dz[0] * m.field.opacity, epsilon = 1e-12);
        assert!(m.sample_grads(&[0.0, 0.0]).iter().all(|(_, g)| g.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.2, 0.2, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }
}
