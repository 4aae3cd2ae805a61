use rand::seq::index::sample;
use rand::Rng;

use crate::geometry::Vec3;

/// Floor applied to predicted probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-ray cross-entropy `-(1/L) sum_l m_l ln p_l`.
pub fn cross_entropy(gt: &[f64], pred: &[f64]) -> f64 {
    let l = gt.len() as f64;
    -gt.iter().zip(pred).map(|(m, p)| m * p.max(PROB_FLOOR).ln()).sum::<f64>() / l
}

/// Gradient of [`cross_entropy`] with respect to the pre-softmax logits.
pub fn cross_entropy_logits_grad(gt: &[f64], probs: &[f64]) -> Vec<f64> {
    let l = gt.len() as f64;
    let mass: f64 = gt.iter().sum();
    probs.iter().zip(gt).map(|(p, m)| (p * mass - m) / l).collect()
}

/// Euclidean RGB distance.
pub fn rgb_similarity(c0: &Vec3, c1: &Vec3) -> f64 {
    (c0 - c1).norm()
}

fn overlap_ratio(m0: &[f64], m1: &[f64]) -> (f64, f64, f64, f64) {
    let dot: f64 = m0.iter().zip(m1).map(|(a, b)| a * b).sum();
    let n0: f64 = m0.iter().map(|a| a * a).sum();
    let n1: f64 = m1.iter().map(|a| a * a).sum();
    let den = n0.max(n1);
    let ratio = if den > 0.0 { dot / den } else { 0.0 };
    (ratio, dot, n0, n1)
}

/// `exp(-w (M0 . M1) / max(|M0|^2, |M1|^2) - eps)`, small when masks agree.
pub fn mask_distance(m0: &[f64], m1: &[f64], w: f64, eps: f64) -> f64 {
    (-w * overlap_ratio(m0, m1).0 - eps).exp()
}

/// [`mask_distance`] and its gradient in `m1`, treating `m0` as a constant.
/// On the kink `|M1| = |M0|` the `|M1|` branch is taken.
pub fn mask_distance_grad(m0: &[f64], m1: &[f64], w: f64, eps: f64) -> (f64, Vec<f64>) {
    let (ratio, dot, n0, n1) = overlap_ratio(m0, m1);
    let f = (-w * ratio - eps).exp();
    let grad = if n0.max(n1) == 0.0 {
        vec![0.0; m1.len()]
    } else if n1 >= n0 {
        m0.iter().zip(m1).map(|(a, b)| -w * f * (a / n1 - 2.0 * dot * b / (n1 * n1))).collect()
    } else {
        m0.iter().map(|a| -w * f * a / n0).collect()
    };
    (f, grad)
}

/// Hyperparameters of the ray-pair loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayPairParams {
    pub tau: f64,
    pub w: f64,
    pub eps: f64,
    pub similarity_geq: bool,
}

impl RayPairParams {
    fn similar(&self, g: f64) -> bool {
        if self.similarity_geq {
            g >= self.tau
        } else {
            g <= self.tau
        }
    }
}

/// Reference indices drawn without replacement from `n` rays.
pub fn select_references<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    sample(rng, n, count.min(n)).into_vec()
}

/// Ray-pair loss over one ray set plus `dL/dM` for every ray.
///
/// For each reference `k` the set `S_k` holds the other rays whose color
/// passes the similarity test; the loss averages `f(M_k, M_s)` over `S_k`
/// and then over references with non-empty `S_k`. References are constants,
/// so gradient reaches a ray only through its membership in some `S_k`.
pub fn ray_pair_rgb_loss(colors: &[Vec3], masks: &[Vec<f64>], refs: &[usize], params: &RayPairParams) -> (f64, Vec<Vec<f64>>) {
    ray_pair_rgb_loss_split(colors, masks, masks, refs, params)
}

/// [`ray_pair_rgb_loss`] with reference masks read from `ref_masks` and
/// member masks from `masks`.
pub fn ray_pair_rgb_loss_split(
    colors: &[Vec3],
    ref_masks: &[Vec<f64>],
    masks: &[Vec<f64>],
    refs: &[usize],
    params: &RayPairParams,
) -> (f64, Vec<Vec<f64>>) {
    let dim = masks.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; dim]; masks.len()];
    let mut total = 0.0;
    let mut used = 0usize;
    let mut members = Vec::new();
    for &k in refs {
        members.clear();
        members.extend(similar_set(colors, k, params));
        if members.is_empty() {
            continue;
        }
        used += 1;
        let inv = 1.0 / members.len() as f64;
        let mut sum = 0.0;
        for &s in &members {
            let (f, g) = mask_distance_grad(&ref_masks[k], &masks[s], params.w, params.eps);
            sum += f;
            for (acc, gi) in grads[s].iter_mut().zip(g) {
                *acc += gi * inv;
            }
        }
        total += sum * inv;
    }
    if used == 0 {
        return (0.0, grads);
    }
    let scale = 1.0 / used as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    (total * scale, grads)
}

/// Members of `S_k`: rays other than `k` passing the color test against it.
pub fn similar_set<'a>(colors: &'a [Vec3], k: usize, params: &'a RayPairParams) -> impl Iterator<Item = usize> + 'a {
    (0..colors.len()).filter(move |&s| s != k && params.similar(rgb_similarity(&colors[k], &colors[s])))
}
