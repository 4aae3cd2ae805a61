//! Finite-difference checks of the analytic field gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregator::distill::feature_sq_error;
use crate::aggregator::loss::{cross_entropy, cross_entropy_logits_grad, ray_pair_rgb_loss_split, select_references, similar_set, RayPairParams};
use crate::geometry::{Aabb, Ray, Vec3, T_NEAR_MIN};
use crate::grid::TrainableGrid;
use crate::render::{march, render_feature, render_mask, RenderOptions};
use crate::rng::{keyed_rng, Stream};
use crate::scene::{DensityColorScene, Primitive, Shape};

/// Relative error below which a gradient entry passes.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Central-difference step on grid values.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-6;
/// Minimum gap between `|M_s|^2` and `|M_k|^2` so that finite differences
/// never straddle the kink of the max in the mask distance.
const KINK_GAP: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Objective {
    CrossEntropy,
    RayPair,
    FeatureMse,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::CrossEntropy, Objective::RayPair, Objective::FeatureMse];
}

#[derive(Clone, Debug, Serialize)]
pub struct ObjectiveReport {
    pub objective: Objective,
    pub entries_checked: usize,
    pub max_rel_err: f64,
    pub worst_config: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub configs: usize,
    /// Draws rejected for sitting near the max() kink.
    pub redraws: usize,
    pub objectives: Vec<ObjectiveReport>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// A random small problem: soft spheres, a coarse grid, a handful of rays.
pub struct Problem {
    pub scene: DensityColorScene,
    pub grid: TrainableGrid,
    pub rays: Vec<Ray>,
    pub targets: Vec<Vec<f64>>,
    pub colors: Vec<Vec3>,
    pub refs: Vec<usize>,
    pub pair: RayPairParams,
    pub opts: RenderOptions,
}

fn prob_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

impl Problem {
    pub fn random(rng: &mut ChaCha8Rng) -> Problem {
        let labels = rng.gen_range(2..=4usize);
        let samples = rng.gen_range(4..=16usize);
        let bbox = Aabb::cube(1.0);
        let nprim = rng.gen_range(1..=3);
        let prims: Vec<Primitive> = (0..nprim)
            .map(|i| Primitive {
                shape: Shape::Sphere {
                    center: [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)],
                    radius: rng.gen_range(0.2..0.5),
                },
                object_id: (i % (labels - 1) + 1) as u32,
                albedo: [rng.gen(), rng.gen(), rng.gen()],
                softness: rng.gen_range(0.1..0.4),
            })
            .collect();
        let mut scene = DensityColorScene::analytic(bbox, prims, [0.0; 3], labels).expect("random scene is valid");
        scene.sigma_max = rng.gen_range(1.0..8.0);
        let nlev = rng.gen_range(1..=2usize);
        let res: Vec<usize> = (0..nlev).map(|_| rng.gen_range(2..=5usize)).collect();
        let mut grid = TrainableGrid::new(bbox, &res, labels).expect("random grid is valid");
        grid.fill_with(|_| rng.gen_range(-2.0..2.0));
        let nrays = rng.gen_range(3..=6usize);
        let rays: Vec<Ray> = (0..nrays)
            .map(|_| loop {
                let dir_out = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if dir_out.norm() < 0.1 {
                    continue;
                }
                let origin = dir_out.normalize() * 3.0;
                let target = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                let dir = (target - origin).normalize();
                if let Some((t0, t1)) = bbox.intersect(&origin, &dir) {
                    break Ray {
                        origin,
                        dir,
                        view_id: 0,
                        pixel: (0.0, 0.0),
                        t_near: t0.max(T_NEAR_MIN),
                        t_far: t1,
                    };
                }
            })
            .collect();
        let targets = (0..nrays).map(|_| prob_vector(rng, labels)).collect();
        // colors in a narrow range so most similar sets are non-empty
        let colors = (0..nrays).map(|_| Vec3::new(rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6))).collect();
        let refs = select_references(nrays, rng.gen_range(1..=nrays), rng);
        let pair = RayPairParams {
            tau: rng.gen_range(0.1..0.3),
            w: rng.gen_range(0.5..6.0),
            eps: rng.gen_range(0.0..0.5),
            similarity_geq: false,
        };
        Problem {
            scene,
            grid,
            rays,
            targets,
            colors,
            refs,
            pair,
            opts: RenderOptions::midpoint(samples),
        }
    }

    fn probs(&self, grid: &TrainableGrid) -> Vec<Vec<f64>> {
        self.rays.iter().map(|r| render_mask(&self.scene, grid, r, &self.opts).probs).collect()
    }

    /// True when some reference/member pair sits near the kink of the max.
    pub fn near_kink(&self) -> bool {
        let probs = self.probs(&self.grid);
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        self.refs
            .iter()
            .any(|&k| similar_set(&self.colors, k, &self.pair).any(|s| (sq(&probs[s]) - sq(&probs[k])).abs() < KINK_GAP))
    }

    /// True when every ray deposits some weight, so each objective depends on the grid.
    pub fn all_rays_hit(&self) -> bool {
        self.rays.iter().all(|r| march(&self.scene, r, &self.opts).opacity() > 1e-3)
    }

    /// Objective value with reference masks frozen at `ref_probs`.
    pub fn loss(&self, objective: Objective, grid: &TrainableGrid, ref_probs: &[Vec<f64>]) -> f64 {
        let n = self.rays.len() as f64;
        match objective {
            Objective::CrossEntropy => self.probs(grid).iter().zip(&self.targets).map(|(p, m)| cross_entropy(m, p)).sum::<f64>() / n,
            Objective::RayPair => ray_pair_rgb_loss_split(&self.colors, ref_probs, &self.probs(grid), &self.refs, &self.pair).0,
            Objective::FeatureMse => {
                self.rays
                    .iter()
                    .zip(&self.targets)
                    .map(|(r, t)| feature_sq_error(&render_feature(&self.scene, grid, r, &self.opts).composited, t).0)
                    .sum::<f64>()
                    / n
            }
        }
    }

    /// Analytic gradient over every grid parameter, via the training backward path.
    pub fn analytic(&self, objective: Objective) -> Vec<f64> {
        let mut grid = self.grid.clone();
        grid.zero_grad();
        let scale = 1.0 / self.rays.len() as f64;
        match objective {
            Objective::CrossEntropy => {
                for (r, m) in self.rays.iter().zip(&self.targets) {
                    let mr = render_mask(&self.scene, &self.grid, r, &self.opts);
                    mr.field.backward(&mut grid, &cross_entropy_logits_grad(m, &mr.probs), scale);
                }
            }
            Objective::RayPair => {
                let renders: Vec<_> = self.rays.iter().map(|r| render_mask(&self.scene, &self.grid, r, &self.opts)).collect();
                let probs: Vec<Vec<f64>> = renders.iter().map(|m| m.probs.clone()).collect();
                let (_, grads) = ray_pair_rgb_loss_split(&self.colors, &probs, &probs, &self.refs, &self.pair);
                for (m, g) in renders.iter().zip(&grads) {
                    m.field.backward(&mut grid, &m.logits_grad(g), 1.0);
                }
            }
            Objective::FeatureMse => {
                for (r, t) in self.rays.iter().zip(&self.targets) {
                    let f = render_feature(&self.scene, &self.grid, r, &self.opts);
                    f.backward(&mut grid, &feature_sq_error(&f.composited, t).1, scale);
                }
            }
        }
        (0..grid.param_count()).map(|i| grid.grad_at(i)).collect()
    }

    /// Central differences over every grid parameter.
    pub fn numeric(&self, objective: Objective) -> Vec<f64> {
        let base = self.probs(&self.grid);
        let mut grid = self.grid.clone();
        (0..grid.param_count())
            .map(|i| {
                let v = grid.param(i);
                grid.set_param(i, v + FD_STEP);
                let up = self.loss(objective, &grid, &base);
                grid.set_param(i, v - FD_STEP);
                let down = self.loss(objective, &grid, &base);
                grid.set_param(i, v);
                (up - down) / (2.0 * FD_STEP)
            })
            .collect()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Draws the problem for `index`, redrawing while it sits near a kink or
/// has rays that miss all density. Returns the problem and the redraw count.
pub fn draw_problem(seed: u64, index: u64) -> (Problem, usize) {
    let mut attempt = 0;
    loop {
        let mut rng = keyed_rng(seed, Stream::GradCheck, index, attempt, 0);
        let p = Problem::random(&mut rng);
        if p.all_rays_hit() && !p.near_kink() {
            return (p, attempt as usize);
        }
        attempt += 1;
    }
}

/// Checks all objectives on `configs` random problems.
pub fn run_gradcheck(seed: u64, configs: usize) -> GradCheckReport {
    let mut reports: Vec<ObjectiveReport> = Objective::ALL
        .iter()
        .map(|&objective| ObjectiveReport {
            objective,
            entries_checked: 0,
            max_rel_err: 0.0,
            worst_config: 0,
        })
        .collect();
    let mut redraws = 0;
    for index in 0..configs as u64 {
        let (problem, r) = draw_problem(seed, index);
        redraws += r;
        for rep in &mut reports {
            let a = problem.analytic(rep.objective);
            let n = problem.numeric(rep.objective);
            for (x, y) in a.iter().zip(&n) {
                let e = relative_error(*x, *y);
                if e > rep.max_rel_err {
                    rep.max_rel_err = e;
                    rep.worst_config = index;
                }
            }
            rep.entries_checked += a.len();
        }
    }
    let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    GradCheckReport {
        configs,
        redraws,
        objectives: reports,
        max_rel_err,
        passed: max_rel_err < GRADCHECK_TOL,
    }
}
