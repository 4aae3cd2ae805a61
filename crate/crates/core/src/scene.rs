//! The frozen density/color scene that masks are fused over.
//!
//! Analytic scenes are unions of soft primitives whose density is
//! `sigma_max * smoothstep(-sdf / softness)`; loaded scenes interpolate voxel
//! volumes. Object id 0 is background; primitives carry ids in `[1, L-1]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::volume::{load_volume, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - Vec3::from(center)).norm() - radius,
            Shape::Box { min, max } => {
                let (min, max) = (Vec3::from(min), Vec3::from(max));
                let center = (min + max) * 0.5;
                let half = (max - min) * 0.5;
                let q = (p - center).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub object_id: u32,
    pub albedo: [f64; 3],
    /// Half-width of the density transition band, meters.
    pub softness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeScene {
    pub density: Volume,
    pub albedo: Volume,
    pub labels: Option<Volume>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SceneBacking {
    Analytic(Vec<Primitive>),
    Volumes(VolumeScene),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityColorScene {
    pub bbox: Aabb,
    pub sigma_max: f64,
    pub background_albedo: [f64; 3],
    /// Identity channel count L, background included.
    pub num_labels: usize,
    pub backing: SceneBacking,
}

/// Cubic smoothstep of `x` over `[-1, 1]`; 0.5 at the origin.
pub fn smoothstep(x: f64) -> f64 {
    let s = ((x + 1.0) * 0.5).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl DensityColorScene {
    pub fn default_softness(bbox: &Aabb) -> f64 {
        0.01 * bbox.max_side()
    }

    pub fn default_sigma_max(bbox: &Aabb) -> f64 {
        200.0 / bbox.max_side()
    }

    pub fn analytic(bbox: Aabb, primitives: Vec<Primitive>, background_albedo: [f64; 3], num_labels: usize) -> Result<Self> {
        let scene = Self {
            sigma_max: Self::default_sigma_max(&bbox),
            bbox,
            background_albedo,
            num_labels,
            backing: SceneBacking::Analytic(primitives),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::Validation("need at least two identity channels".into()));
        }
        if !(self.sigma_max >= 0.0) {
            return Err(Error::Validation("sigma_max must be non-negative".into()));
        }
        if let SceneBacking::Analytic(prims) = &self.backing {
            for p in prims {
                if p.object_id == 0 || p.object_id as usize >= self.num_labels {
                    return Err(Error::Validation(format!(
                        "primitive object_id {} outside [1, {}]",
                        p.object_id,
                        self.num_labels - 1
                    )));
                }
                if !(p.softness > 0.0) {
                    return Err(Error::Validation("primitive softness must be positive".into()));
                }
            }
        }
        if let SceneBacking::Volumes(v) = &self.backing {
            if v.density.channels != 1 || v.albedo.channels != 3 {
                return Err(Error::DimMismatch("density volume needs 1 channel, albedo 3".into()));
            }
            if v.labels.as_ref().is_some_and(|l| l.channels != 1) {
                return Err(Error::DimMismatch("label volume needs 1 channel".into()));
            }
        }
        Ok(())
    }

    pub fn primitives(&self) -> &[Primitive] {
        match &self.backing {
            SceneBacking::Analytic(p) => p,
            SceneBacking::Volumes(_) => &[],
        }
    }

    /// Primitive with the smallest signed distance; ties go to the lower object id.
    fn nearest<'a>(&self, prims: &'a [Primitive], p: &Vec3) -> Option<(f64, &'a Primitive)> {
        prims
            .iter()
            .map(|prim| (prim.shape.sdf(p), prim))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.object_id.cmp(&b.1.object_id)))
    }

    pub fn sample_density(&self, p: &Vec3) -> f64 {
        if !self.bbox.contains(p) {
            return 0.0;
        }
        match &self.backing {
            SceneBacking::Analytic(prims) => {
                let mut best = 0.0f64;
                for prim in prims {
                    let s = smoothstep(-prim.shape.sdf(p) / prim.softness);
                    best = best.max(s);
                }
                (self.sigma_max * best).clamp(0.0, self.sigma_max)
            }
            SceneBacking::Volumes(v) => {
                let mut out = [0.0];
                v.density.trilinear(p, &mut out);
                out[0].max(0.0)
            }
        }
    }

    /// Albedo at `p`. The view direction is accepted for interface symmetry but unused.
    pub fn sample_color(&self, p: &Vec3, _dir: &Vec3) -> Vec3 {
        match &self.backing {
            SceneBacking::Analytic(prims) => match self.nearest(prims, p) {
                Some((d, prim)) if d < prim.softness => Vec3::from(prim.albedo),
                _ => Vec3::from(self.background_albedo),
            },
            SceneBacking::Volumes(v) => {
                let mut out = [0.0; 3];
                v.albedo.trilinear(p, &mut out);
                Vec3::from(out).map(|c| c.clamp(0.0, 1.0))
            }
        }
    }

    /// Ground-truth object id: the lowest id among primitives containing `p`, else 0.
    pub fn gt_label(&self, p: &Vec3) -> Result<u32> {
        match &self.backing {
            SceneBacking::Analytic(prims) => Ok(prims
                .iter()
                .filter(|prim| prim.shape.sdf(p) < 0.0)
                .map(|prim| prim.object_id)
                .min()
                .unwrap_or(0)),
            SceneBacking::Volumes(v) => match &v.labels {
                Some(labels) => Ok(labels.nearest(p)[0].round().max(0.0) as u32),
                None => Err(Error::Unsupported("scene volume has no label channel".into())),
            },
        }
    }

    /// Object owning the density at `p`: the nearest primitive whose density
    /// band contains `p` (ties to the lower id), else 0.
    pub fn support_label(&self, p: &Vec3) -> Result<u32> {
        match &self.backing {
            SceneBacking::Analytic(prims) => Ok(match self.nearest(prims, p) {
                Some((d, prim)) if d < prim.softness => prim.object_id,
                _ => 0,
            }),
            SceneBacking::Volumes(_) => self.gt_label(p),
        }
    }

    pub fn background(&self) -> Vec3 {
        Vec3::from(self.background_albedo)
    }
}

// ---------------------------------------------------------------------------
// scene.json

#[derive(Serialize, Deserialize)]
struct BboxRecord {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct VolumePaths {
    density: PathBuf,
    albedo: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct PrimitiveRecord {
    shape: Shape,
    object_id: u32,
    albedo: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    softness: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    bbox: BboxRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_max: Option<f64>,
    #[serde(default)]
    background_albedo: [f64; 3],
    #[serde(default)]
    primitives: Vec<PrimitiveRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    volume: Option<VolumePaths>,
}

/// Parses scene.json; volume paths resolve relative to `base_dir`.
pub fn scene_from_json(text: &str, base_dir: &Path) -> Result<DensityColorScene> {
    let file: SceneFile = serde_json::from_str(text)?;
    let bbox = Aabb::new(Vec3::from(file.bbox.min), Vec3::from(file.bbox.max))?;
    let sigma_max = file.sigma_max.unwrap_or_else(|| DensityColorScene::default_sigma_max(&bbox));
    let softness = DensityColorScene::default_softness(&bbox);
    let (backing, max_id) = match file.volume {
        Some(paths) => {
            if !file.primitives.is_empty() {
                return Err(Error::Validation("scene has both primitives and a volume".into()));
            }
            let labels = paths.labels.map(|p| load_volume(&base_dir.join(p))).transpose()?;
            let max_id = labels
                .as_ref()
                .map(|l| l.data.iter().fold(0f32, |a, b| a.max(*b)).round() as u32)
                .unwrap_or(0);
            let vs = VolumeScene {
                density: load_volume(&base_dir.join(paths.density))?,
                albedo: load_volume(&base_dir.join(paths.albedo))?,
                labels,
            };
            (SceneBacking::Volumes(vs), max_id)
        }
        None => {
            let prims: Vec<Primitive> = file
                .primitives
                .into_iter()
                .map(|r| Primitive {
                    shape: r.shape,
                    object_id: r.object_id,
                    albedo: r.albedo,
                    softness: r.softness.unwrap_or(softness),
                })
                .collect();
            let max_id = prims.iter().map(|p| p.object_id).max().unwrap_or(0);
            (SceneBacking::Analytic(prims), max_id)
        }
    };
    let scene = DensityColorScene {
        bbox,
        sigma_max,
        background_albedo: file.background_albedo,
        num_labels: file.labels.unwrap_or((max_id as usize + 1).max(2)),
        backing,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<DensityColorScene> {
    let base = path.parent().unwrap_or(Path::new("."));
    scene_from_json(&fs::read_to_string(path)?, base)
}

/// Serializes an analytic scene to scene.json.
pub fn scene_to_json(scene: &DensityColorScene) -> Result<String> {
    let SceneBacking::Analytic(prims) = &scene.backing else {
        return Err(Error::Unsupported("only analytic scenes serialize to scene.json".into()));
    };
    let file = SceneFile {
        bbox: BboxRecord {
            min: scene.bbox.min.into(),
            max: scene.bbox.max.into(),
        },
        labels: Some(scene.num_labels),
        sigma_max: Some(scene.sigma_max),
        background_albedo: scene.background_albedo,
        primitives: prims
            .iter()
            .map(|p| PrimitiveRecord {
                shape: p.shape,
                object_id: p.object_id,
                albedo: p.albedo,
                softness: Some(p.softness),
            })
            .collect(),
        volume: None,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::save_volumes;

    fn sphere(center: [f64; 3], radius: f64, id: u32, albedo: [f64; 3], softness: f64) -> Primitive {
        Primitive {
            shape: Shape::Sphere { center, radius },
            object_id: id,
            albedo,
            softness,
        }
    }

    fn red_sphere_scene() -> DensityColorScene {
        DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![sphere([0.0; 3], 0.5, 1, [1.0, 0.0, 0.0], 0.01)],
            [0.2, 0.3, 0.4],
            2,
        )
        .unwrap()
    }

    #[test]
    fn density_values() {
        let scene = red_sphere_scene();
        assert_eq!(scene.sample_density(&Vec3::new(0.9, 0.9, 0.9)), 0.0);
        assert_eq!(scene.sample_density(&Vec3::new(3.0, 0.0, 0.0)), 0.0);
        assert_eq!(scene.sample_density(&Vec3::zeros()), scene.sigma_max);
        let surf = scene.sample_density(&Vec3::new(0.5, 0.0, 0.0));
        assert!((surf - scene.sigma_max / 2.0).abs() < 1e-9);
    }

    #[test]
    fn density_is_bounded_and_continuous() {
        let scene = red_sphere_scene();
        let h = 1e-4;
        let mut max_jump = 0.0f64;
        let mut prev = scene.sample_density(&Vec3::new(0.45, 0.0, 0.0));
        let mut x = 0.45;
        while x < 0.55 {
            x += h;
            let d = scene.sample_density(&Vec3::new(x, 0.0, 0.0));
            assert!((0.0..=scene.sigma_max).contains(&d));
            max_jump = max_jump.max((d - prev).abs());
            prev = d;
        }
        // smoothstep slope is at most 1.5 / (2 softness) per meter of sdf
        let bound = scene.sigma_max * 1.5 / (2.0 * 0.01) * h * 1.01;
        assert!(max_jump <= bound, "{max_jump} > {bound}");
    }

    #[test]
    fn color_lookup() {
        let scene = red_sphere_scene();
        assert_eq!(scene.sample_color(&Vec3::zeros(), &Vec3::x()), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(scene.sample_color(&Vec3::new(0.9, 0.0, 0.0), &Vec3::x()), Vec3::new(0.2, 0.3, 0.4));
    }

    #[test]
    fn ties_go_to_lower_object_id() {
        // two spheres 0.1 apart, softness 0.1: the midpoint lies in both density bands
        let scene = DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![
                sphere([0.5, 0.0, 0.0], 0.45, 2, [0.0, 1.0, 0.0], 0.1),
                sphere([-0.5, 0.0, 0.0], 0.45, 1, [1.0, 0.0, 0.0], 0.1),
            ],
            [0.0; 3],
            3,
        )
        .unwrap();
        assert_eq!(scene.sample_color(&Vec3::zeros(), &Vec3::x()), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(scene.support_label(&Vec3::zeros()).unwrap(), 1);
        assert_eq!(scene.gt_label(&Vec3::zeros()).unwrap(), 0);
        assert_eq!(scene.gt_label(&Vec3::new(0.5, 0.0, 0.0)).unwrap(), 2);

        let overlap = DensityColorScene::analytic(
            Aabb::cube(1.0),
            vec![
                sphere([0.1, 0.0, 0.0], 0.5, 2, [0.0, 1.0, 0.0], 0.01),
                sphere([-0.1, 0.0, 0.0], 0.5, 1, [1.0, 0.0, 0.0], 0.01),
            ],
            [0.0; 3],
            3,
        )
        .unwrap();
        assert_eq!(overlap.gt_label(&Vec3::new(0.3, 0.0, 0.0)).unwrap(), 1);
    }

    #[test]
    fn box_sdf() {
        let b = Shape::Box {
            min: [-1.0, -1.0, -1.0],
            max: [1.0, 1.0, 1.0],
        };
        assert!((b.sdf(&Vec3::zeros()) + 1.0).abs() < 1e-12);
        assert!((b.sdf(&Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((b.sdf(&Vec3::new(2.0, 2.0, 1.0)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_reserved_and_out_of_range_ids() {
        let bad = DensityColorScene::analytic(Aabb::cube(1.0), vec![sphere([0.0; 3], 0.5, 0, [1.0; 3], 0.01)], [0.0; 3], 2);
        assert!(bad.is_err());
        let bad = DensityColorScene::analytic(Aabb::cube(1.0), vec![sphere([0.0; 3], 0.5, 2, [1.0; 3], 0.01)], [0.0; 3], 2);
        assert!(bad.is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        let scene = red_sphere_scene();
        let text = scene_to_json(&scene).unwrap();
        let back = scene_from_json(&text, Path::new(".")).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn volume_backed_scene() {
        let dir = tempfile::tempdir().unwrap();
        let bbox = Aabb::cube(1.0);
        let analytic = red_sphere_scene();
        let density = Volume::from_fn([9, 9, 9], bbox, 1, |p, o| o[0] = analytic.sample_density(&p) as f32);
        let albedo = Volume::from_fn([9, 9, 9], bbox, 3, |p, o| {
            let c = analytic.sample_color(&p, &Vec3::x());
            o.iter_mut().zip(c.iter()).for_each(|(o, c)| *o = *c as f32);
        });
        save_volumes(&[density], &dir.path().join("d.vol")).unwrap();
        save_volumes(&[albedo], &dir.path().join("a.vol")).unwrap();
        let text = r#"{"bbox": {"min": [-1,-1,-1], "max": [1,1,1]}, "labels": 2,
            "volume": {"density": "d.vol", "albedo": "a.vol"}}"#;
        let scene = scene_from_json(text, dir.path()).unwrap();
        assert!((scene.sample_density(&Vec3::zeros()) - analytic.sigma_max).abs() < 1e-3);
        assert!(matches!(scene.gt_label(&Vec3::zeros()), Err(Error::Unsupported(_))));
    }
}
