use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AdamParams, DEFAULT_RESOLUTIONS};
use crate::render::{RenderOptions, Sampling, DEFAULT_SAMPLES_PER_RAY};

/// Hyperparameters of object-field training. JSON keys match the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Identity channels, background included.
    #[serde(rename = "L")]
    pub labels: usize,
    pub iterations: usize,
    pub warmup_iters: usize,
    pub global_batch: usize,
    pub rgb_refs: usize,
    pub patch_size: usize,
    pub rays_per_patch: usize,
    pub error_points: usize,
    pub tau: f64,
    pub w: f64,
    pub eps: f64,
    pub errmap_downsample: usize,
    pub errmap_full_update_every: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub samples_per_ray: usize,
    pub seed: u64,
    pub grid_resolutions: Vec<usize>,
    /// Marching stops below this transmittance; 0 marches every sample.
    pub transmittance_cutoff: f64,
    /// Selects `g >= tau` instead of `g <= tau` for the color-similar set.
    pub similarity_geq: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            labels: 2,
            iterations: 600,
            warmup_iters: 300,
            global_batch: 4096,
            rgb_refs: 20,
            patch_size: 8,
            rays_per_patch: 32,
            error_points: 8,
            tau: 0.05,
            w: 4.0,
            eps: 0.0,
            errmap_downsample: 4,
            errmap_full_update_every: 200,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            samples_per_ray: DEFAULT_SAMPLES_PER_RAY,
            seed: 0,
            grid_resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            transmittance_cutoff: 1e-5,
            similarity_geq: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Validation(format!("fusion config: {msg}")));
        if self.labels < 2 {
            return bad("L must be at least 2");
        }
        if self.warmup_iters > self.iterations {
            return bad("warmup_iters exceeds iterations");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be non-negative");
        }
        if !(self.w > 0.0) || !self.eps.is_finite() {
            return bad("w must be positive and eps finite");
        }
        let counts = [
            ("global_batch", self.global_batch),
            ("rgb_refs", self.rgb_refs),
            ("patch_size", self.patch_size),
            ("rays_per_patch", self.rays_per_patch),
            ("error_points", self.error_points),
            ("errmap_downsample", self.errmap_downsample),
            ("errmap_full_update_every", self.errmap_full_update_every),
            ("samples_per_ray", self.samples_per_ray),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(&format!("{name} must be at least 1"));
        }
        if self.grid_resolutions.is_empty() || self.grid_resolutions.iter().any(|r| *r < 2) {
            return bad("grid_resolutions need at least one level of resolution >= 2");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return bad("invalid Adam parameters");
        }
        if !(0.0..1.0).contains(&self.transmittance_cutoff) {
            return bad("transmittance_cutoff must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    /// Jittered sampling for training rays at `iteration`.
    pub fn train_render(&self, iteration: usize) -> RenderOptions {
        RenderOptions {
            samples_per_ray: self.samples_per_ray,
            sampling: Sampling::Stratified {
                seed: self.seed,
                iteration: iteration as u64,
            },
            transmittance_cutoff: self.transmittance_cutoff,
        }
    }

    /// Deterministic midpoint sampling for depth and error-map refreshes.
    pub fn eval_render(&self) -> RenderOptions {
        RenderOptions {
            samples_per_ray: self.samples_per_ray,
            sampling: Sampling::Midpoint,
            transmittance_cutoff: self.transmittance_cutoff,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Settings for fitting a feature field to feature frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub samples_per_ray: usize,
    pub seed: u64,
    pub grid_resolutions: Vec<usize>,
    pub transmittance_cutoff: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            iterations: 600,
            batch: 4096,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            samples_per_ray: DEFAULT_SAMPLES_PER_RAY,
            seed: 0,
            grid_resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            transmittance_cutoff: 1e-5,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.samples_per_ray == 0 {
            return Err(Error::Validation("distill config: batch and samples_per_ray must be at least 1".into()));
        }
        if self.grid_resolutions.is_empty() || self.grid_resolutions.iter().any(|r| *r < 2) {
            return Err(Error::Validation("distill config: bad grid_resolutions".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.transmittance_cutoff) {
            return Err(Error::Validation("distill config: bad lr or transmittance_cutoff".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    pub fn render(&self, iteration: usize) -> RenderOptions {
        RenderOptions {
            samples_per_ray: self.samples_per_ray,
            sampling: Sampling::Stratified {
                seed: self.seed,
                iteration: iteration as u64,
            },
            transmittance_cutoff: self.transmittance_cutoff,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = FusionConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_json().unwrap();
        assert!(text.contains("\"L\": 2"));
        assert!(text.contains("\"warmup_iters\": 300"));
        assert_eq!(FusionConfig::from_json(&text).unwrap(), cfg);
        DistillConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = FusionConfig::from_json(r#"{"L": 3, "iterations": 10, "warmup_iters": 5}"#).unwrap();
        assert_eq!(cfg.labels, 3);
        assert_eq!(cfg.global_batch, 4096);
        assert_eq!(cfg.rgb_refs, 20);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            r#"{"iterations": 10, "warmup_iters": 20}"#,
            r#"{"tau": -0.1}"#,
            r#"{"w": 0.0}"#,
            r#"{"global_batch": 0}"#,
            r#"{"patch_size": 0}"#,
            r#"{"L": 1}"#,
            r#"{"unknown": 1}"#,
        ];
        for text in bad {
            assert!(FusionConfig::from_json(text).is_err(), "{text}");
        }
    }
}
