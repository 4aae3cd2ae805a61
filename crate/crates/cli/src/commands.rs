use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use snhq_core::aggregator::{distill_feature_field, render_feature_frames, train_object_field, write_trace};
use snhq_core::eval::{cross_view_consistency, render_mask_frames, score};
use snhq_core::geometry::{load_cameras, ray_for_pixel, save_cameras};
use snhq_core::gradcheck::run_gradcheck;
use snhq_core::image_out::{write_channel_pgms, write_label_overlay, write_rgb};
use snhq_core::masks::{corrupt_masks, load_frames, mask_file_name, project_gt_masks, store_frames, FeatureFrame, FrameKind};
use snhq_core::render::{march, rgb_from_march, RenderOptions};
use snhq_core::rng::{keyed_rng, Stream};
use snhq_core::scene::{load_scene, scene_to_json, SceneBacking};
use snhq_core::synthetic::{opaque_box_scene, orbit_cameras, synthetic_feature_frames, two_sphere_scene};
use snhq_core::volume::{save_volumes, Volume};
use snhq_core::{Camera, CorruptionSpec, DensityColorScene, DistillConfig, FusionConfig, TrainableGrid, Vec3};

use crate::manifest::{manifest_path, ManifestBuilder};
use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::SceneGen(a) => scene_gen(cli, a),
        Command::Corrupt(a) => corrupt(cli, a),
        Command::Fuse(a) => fuse(cli, a),
        Command::Render(a) => render(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Consistency(a) => consistency(cli, a),
        Command::Distill(a) => distill(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
    }
}

fn scene_files(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("scene.json"), dir.join("cameras.json"))
}

fn load_scene_dir(dir: &Path) -> Result<(DensityColorScene, Vec<Camera>)> {
    let (s, c) = scene_files(dir);
    let scene = load_scene(&s).with_context(|| format!("loading {}", s.display()))?;
    let cams = load_cameras(&c).with_context(|| format!("loading {}", c.display()))?;
    Ok((scene, cams))
}

fn load_field(path: &Path) -> Result<TrainableGrid> {
    let vols = snhq_core::volume::load_volumes(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(TrainableGrid::from_volumes(&vols)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Samples the scene's density, albedo and ground-truth labels onto grids.
fn scene_volumes(scene: &DensityColorScene, res: usize) -> Result<Vec<Volume>> {
    let dims = [res; 3];
    let density = Volume::from_fn(dims, scene.bbox, 1, |p, out| out[0] = scene.sample_density(&p) as f32);
    let albedo = Volume::from_fn(dims, scene.bbox, 3, |p, out| {
        let c = scene.sample_color(&p, &Vec3::z());
        out.copy_from_slice(&[c.x as f32, c.y as f32, c.z as f32]);
    });
    let mut vols = vec![density, albedo];
    if matches!(scene.backing, SceneBacking::Analytic(_)) {
        vols.push(Volume::from_fn(dims, scene.bbox, 1, |p, out| out[0] = scene.gt_label(&p).unwrap_or(0) as f32));
    }
    Ok(vols)
}

/// Volume-backed scene.json with its volume paths made absolute, so the copy
/// still resolves from the output directory.
fn absolute_volume_paths(scene_file: &Path) -> Result<serde_json::Value> {
    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(scene_file)?).map_err(snhq_core::Error::from)?;
    let base = fs::canonicalize(scene_file)?.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(vol) = value.get_mut("volume").and_then(|v| v.as_object_mut()) {
        for (_, p) in vol.iter_mut() {
            if let Some(rel) = p.as_str() {
                *p = serde_json::json!(base.join(rel));
            }
        }
    }
    Ok(value)
}

fn scene_gen(cli: &Cli, a: &crate::SceneGenArgs) -> Result<u8> {
    let mut mb = ManifestBuilder::new("scene-gen", cli.seed.unwrap_or(0));
    let (scene, cams) = match a.fixture.as_deref() {
        Some(name) => {
            let scene = match name {
                "two-spheres" => two_sphere_scene(),
                "opaque-box" => opaque_box_scene(),
                other => bail!(snhq_core::Error::Validation(format!("unknown fixture '{other}'"))),
            };
            let focal = a.focal.unwrap_or(1.4 * a.size as f64);
            (scene, orbit_cameras(a.first_id, a.views, a.radius, a.size, focal, a.phase))
        }
        None => {
            let (s, c) = (a.scene_file.as_ref().unwrap(), a.cameras_file.as_ref().unwrap());
            mb.input(s);
            mb.input(c);
            (load_scene(s)?, load_cameras(c)?)
        }
    };
    mb.config(&serde_json::json!({
        "fixture": a.fixture, "views": a.views, "size": a.size, "focal": a.focal, "radius": a.radius,
        "phase": a.phase, "first_id": a.first_id, "features": a.features, "samples": a.samples, "volume_res": a.volume_res,
    }))?;
    for sub in ["rgb", "depth", "masks", "volumes"] {
        fs::create_dir_all(a.out.join(sub))?;
    }
    let (scene_path, cams_path) = scene_files(&a.out);
    match scene_to_json(&scene) {
        Ok(text) => fs::write(&scene_path, text)?,
        Err(_) => write_json(&scene_path, &absolute_volume_paths(a.scene_file.as_ref().unwrap())?)?,
    }
    save_cameras(&cams, &cams_path)?;
    mb.output(&scene_path);
    mb.output(&cams_path);

    let opts = RenderOptions::midpoint(a.samples);
    for cam in &cams {
        let (w, h) = (cam.width as usize, cam.height as usize);
        let px: Vec<(Vec3, f32)> = (0..w * h)
            .into_par_iter()
            .map(|i| match ray_for_pixel(cam, ((i % w) as f64, (i / w) as f64), &scene.bbox) {
                Ok(ray) => {
                    let m = march(&scene, &ray, &opts);
                    let z = if m.opacity() > 0.0 { cam.ray_length_to_z(m.depth(), &ray.dir) } else { 0.0 };
                    (rgb_from_march(&scene, &ray, &m), z as f32)
                }
                Err(_) => (scene.background(), 0.0),
            })
            .collect();
        let rgb_path = a.out.join("rgb").join(format!("rgb_{:05}.ppm", cam.view_id));
        write_rgb(&rgb_path, w, h, &px.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let mut depth = FeatureFrame::zeros(cam.view_id, w, h, 1);
        depth.data = px.iter().map(|p| p.1).collect();
        let depth_path = a.out.join("depth").join(format!("depth_{:05}.snhq", cam.view_id));
        snhq_core::masks::store_frame(&depth, FrameKind::Feature, &depth_path)?;
        mb.output(&rgb_path);
        mb.output(&depth_path);
    }
    let masks = project_gt_masks(&scene, &cams, a.samples)?;
    mb.outputs(store_frames(&masks, FrameKind::Mask, &a.out.join("masks"))?);
    let vol_path = a.out.join("volumes").join("scene.vol");
    save_volumes(&scene_volumes(&scene, a.volume_res)?, &vol_path)?;
    mb.output(&vol_path);
    if let Some(c) = a.features {
        fs::create_dir_all(a.out.join("features"))?;
        let feats = synthetic_feature_frames(&scene, &cams, c, &opts)?;
        mb.outputs(store_frames(&feats, FrameKind::Feature, &a.out.join("features"))?);
    }
    mb.finish(&manifest_path(&a.out, true))?;
    println!("wrote {} views to {}", cams.len(), a.out.display());
    Ok(0)
}

fn corrupt(cli: &Cli, a: &crate::CorruptArgs) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(snhq_core::Error::from)?,
        None => CorruptionSpec::default(),
    };
    macro_rules! set {
        ($field:ident, $flag:expr) => {
            if let Some(v) = $flag {
                spec.$field = v;
            }
        };
    }
    set!(view_fraction, a.view_fraction);
    set!(boundary_dilate_px, a.dilate);
    set!(boundary_erode_px, a.erode);
    set!(flip_rate, a.flip_rate);
    set!(drop_view_rate, a.drop_view_rate);
    set!(blob_rate, a.blob_rate);
    set!(blob_radius_px, a.blob_radius);
    set!(seed, cli.seed);
    spec.validate()?;
    let mut mb = ManifestBuilder::new("corrupt", spec.seed);
    mb.config(&spec)?;
    mb.input(&a.masks);
    let frames = load_frames(&a.masks, FrameKind::Mask)?;
    let out = corrupt_masks(&frames, &spec)?;
    fs::create_dir_all(&a.out)?;
    mb.outputs(store_frames(&out, FrameKind::Mask, &a.out)?);
    mb.finish(&manifest_path(&a.out, true))?;
    println!("corrupted {} frames, {} kept", frames.len(), out.len());
    Ok(0)
}

/// Config file fields, then flags. `L` falls back to the scene's label count.
fn resolve_fusion_config(cli: &Cli, a: &crate::FuseArgs, scene: &DensityColorScene) -> Result<FusionConfig> {
    let mut value = match &a.config {
        Some(p) => serde_json::from_str::<serde_json::Value>(&fs::read_to_string(p)?).map_err(snhq_core::Error::from)?,
        None => serde_json::json!({}),
    };
    let obj = value.as_object_mut().ok_or_else(|| snhq_core::Error::Validation("fusion config must be a JSON object".into()))?;
    obj.entry("L").or_insert(serde_json::json!(scene.num_labels));
    let mut cfg: FusionConfig = serde_json::from_value(value).map_err(snhq_core::Error::from)?;
    if let Some(v) = a.iterations {
        cfg.iterations = v;
        cfg.warmup_iters = cfg.warmup_iters.min(v);
    }
    if let Some(v) = a.warmup_iters {
        cfg.warmup_iters = v;
    }
    if let Some(v) = a.global_batch {
        cfg.global_batch = v;
    }
    if let Some(v) = a.samples_per_ray {
        cfg.samples_per_ray = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if a.no_rgb_loss {
        cfg.warmup_iters = cfg.iterations;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fuse(cli: &Cli, a: &crate::FuseArgs) -> Result<u8> {
    let (scene, cams) = load_scene_dir(&a.scene)?;
    let cfg = resolve_fusion_config(cli, a, &scene)?;
    let mut mb = ManifestBuilder::new("fuse", cfg.seed);
    mb.config(&cfg)?;
    mb.input(&a.scene);
    mb.input(&a.masks);
    let frames = load_frames(&a.masks, FrameKind::Mask)?;
    let out = train_object_field(&scene, &frames, &cams, &cfg)?;
    save_volumes(&out.grid.to_volumes(), &a.out)?;
    let trace = a.trace.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    write_trace(&out.trace, &trace)?;
    mb.output(&a.out);
    mb.output(&trace);
    mb.finish(&manifest_path(&a.out, false))?;
    if let Some(last) = out.trace.last() {
        println!("iteration {}: L_o {:.6} L_RGB {:.6}", last.iteration, last.l_o, last.l_rgb);
    }
    println!("trained on {} views; field written to {}", out.view_ids.len(), a.out.display());
    Ok(0)
}

fn render(cli: &Cli, a: &crate::RenderArgs) -> Result<u8> {
    let (scene, scene_cams) = load_scene_dir(&a.scene)?;
    let cams = match &a.cameras {
        Some(p) => load_cameras(p)?,
        None => scene_cams,
    };
    let field = load_field(&a.field)?;
    let mut mb = ManifestBuilder::new("render", cli.seed.unwrap_or(0));
    mb.config(&serde_json::json!({"feature": a.feature, "samples": a.samples}))?;
    mb.input(&a.scene);
    mb.input(&a.field);
    let opts = RenderOptions::midpoint(a.samples);
    fs::create_dir_all(&a.out)?;
    if a.feature {
        let frames = render_feature_frames(&scene, &field, &cams, &opts);
        mb.outputs(store_frames(&frames, FrameKind::Feature, &a.out)?);
    } else {
        if field.channels != scene.num_labels {
            return Err(snhq_core::Error::ChannelMismatch {
                expected: scene.num_labels,
                found: field.channels,
            }
            .into());
        }
        let frames = render_mask_frames(&scene, &field, &cams, &opts);
        mb.outputs(store_frames(&frames, FrameKind::Mask, &a.out)?);
        if a.images {
            for f in &frames {
                let stem = mask_file_name(f.view_id).trim_end_matches(".snhq").to_string();
                write_label_overlay(&a.out.join(format!("{stem}.ppm")), f)?;
                write_channel_pgms(&a.out, &stem, f)?;
            }
        }
    }
    mb.finish(&manifest_path(&a.out, true))?;
    println!("rendered {} views to {}", cams.len(), a.out.display());
    Ok(0)
}

fn eval(cli: &Cli, a: &crate::EvalArgs) -> Result<u8> {
    let mut mb = ManifestBuilder::new("eval", cli.seed.unwrap_or(0));
    mb.input(&a.pred);
    mb.input(&a.gt);
    let pred = load_frames(&a.pred, FrameKind::Mask)?;
    let gt = load_frames(&a.gt, FrameKind::Mask)?;
    // score the views present in both sets
    let gt: Vec<_> = gt.into_iter().filter(|g| pred.iter().any(|p| p.view_id == g.view_id)).collect();
    let pred: Vec<_> = pred.into_iter().filter(|p| gt.iter().any(|g| g.view_id == p.view_id)).collect();
    let channels = gt.first().ok_or(snhq_core::Error::NoViewsRetained)?.channels;
    let objects: Vec<u32> = (1..channels as u32).collect();
    let report = score(&pred, &gt, &objects)?;
    report.save_json(&a.out)?;
    mb.output(&a.out);
    if let Some(csv) = &a.csv {
        fs::write(csv, report.to_csv())?;
        mb.output(csv);
    }
    mb.config(&serde_json::json!({"objects": objects}))?;
    mb.finish(&manifest_path(&a.out, false))?;
    println!("mIoU {:.4}  Acc {:.4}  over {} views", report.miou, report.mean_acc, report.views_used);
    Ok(0)
}

fn consistency(cli: &Cli, a: &crate::ConsistencyArgs) -> Result<u8> {
    use rand::Rng;
    let (scene, scene_cams) = load_scene_dir(&a.scene)?;
    let cams = match &a.cameras {
        Some(p) => load_cameras(p)?,
        None => scene_cams,
    };
    if cams.len() < 2 {
        bail!(snhq_core::Error::Validation("consistency needs at least two cameras".into()));
    }
    let field = load_field(&a.field)?;
    let seed = cli.seed.unwrap_or(0);
    let mut rng = keyed_rng(seed, Stream::Consistency, u64::MAX, 0, 0);
    let pairs: Vec<(&Camera, &Camera)> = (0..a.pairs)
        .map(|_| {
            let i = rng.gen_range(0..cams.len());
            let j = (i + rng.gen_range(1..cams.len())) % cams.len();
            (&cams[i], &cams[j])
        })
        .collect();
    let report = cross_view_consistency(&field, &scene, &pairs, a.samples_per_pair, &RenderOptions::midpoint(a.samples), seed);
    write_json(&a.out, &report)?;
    let mut mb = ManifestBuilder::new("consistency", seed);
    mb.config(&serde_json::json!({"pairs": a.pairs, "samples_per_pair": a.samples_per_pair, "samples": a.samples}))?;
    mb.input(&a.scene);
    mb.input(&a.field);
    mb.output(&a.out);
    mb.finish(&manifest_path(&a.out, false))?;
    println!("agreement {:.4} over {} points", report.agreement, report.compared);
    Ok(0)
}

fn distill(cli: &Cli, a: &crate::DistillArgs) -> Result<u8> {
    let (scene, cams) = load_scene_dir(&a.scene)?;
    let mut cfg: DistillConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(snhq_core::Error::from)?,
        None => DistillConfig::default(),
    };
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    let mut mb = ManifestBuilder::new("distill", cfg.seed);
    mb.config(&cfg)?;
    mb.input(&a.scene);
    mb.input(&a.features);
    let frames = load_frames(&a.features, FrameKind::Feature)?;
    let (grid, losses) = distill_feature_field(&scene, &frames, &cams, &cfg)?;
    save_volumes(&grid.to_volumes(), &a.out)?;
    mb.output(&a.out);
    mb.finish(&manifest_path(&a.out, false))?;
    if let Some(l) = losses.last() {
        println!("final feature loss {l:.3e}");
    }
    println!("feature field from {} frames written to {}", frames.len(), a.out.display());
    Ok(0)
}

fn gradcheck(cli: &Cli, a: &crate::GradcheckArgs) -> Result<u8> {
    let seed = cli.seed.unwrap_or(0);
    let report = run_gradcheck(seed, a.configs);
    for o in &report.objectives {
        println!("{:?}: {} entries, max relative error {:.3e}", o.objective, o.entries_checked, o.max_rel_err);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        let mut mb = ManifestBuilder::new("gradcheck", seed);
        mb.config(&serde_json::json!({"configs": a.configs}))?;
        mb.output(out);
        mb.finish(&manifest_path(out, false))?;
    }
    if report.passed {
        println!("gradcheck PASS over {} configurations", report.configs);
        Ok(0)
    } else {
        println!("gradcheck FAIL: max relative error {:.3e}", report.max_rel_err);
        Ok(3)
    }
}
