//! Seeded synthetic study of the grounding benefit: scenes with known true
//! depths are pushed through the pipeline twice -- once with knowledge-graph
//! matching enabled and once on the model's (noisy) provisional heights --
//! and the average-variant errors are compared.
//!
//! The noise model operationalizes quantitative hallucination: heights get
//! multiplicative lognormal noise, submergence ratios additive Gaussian
//! noise clamped to [0,1], and labels fail to match with a fixed
//! probability.
//!
//! Randomness is ChaCha8, seeded per scene by mixing the scene index into
//! the study seed, so a parallel runner would reproduce the sequential
//! results exactly. Replays are exact for a fixed crate version.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{aggregate, filter_outliers, ground_objects, ground_provisional, FilterPolicy};
use crate::gateway::{serialize_observation, ObjectObservation, SceneObservation};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::TOOL_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub depth_range_cm: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { seed: 42, n_scenes: 1000, depth_range_cm: (5.0, 80.0) }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_scenes < 1 {
            return Err(SimError::BadConfig(format!(
                "n_scenes must be >= 1, got {}",
                self.n_scenes
            )));
        }
        let (lo, hi) = self.depth_range_cm;
        if lo <= 0.0 || hi < lo || !lo.is_finite() || !hi.is_finite() {
            return Err(SimError::BadConfig(format!(
                "depth_range_cm must be positive and ordered, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Sigma of the multiplicative lognormal height noise.
    pub sigma_h: f64,
    /// Sigma of the additive Gaussian ratio noise (clamped to [0,1]).
    pub sigma_r: f64,
    /// Probability that an emitted label fails knowledge-graph matching.
    pub mislabel_prob: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_h: 0.3, sigma_r: 0.05, mislabel_prob: 0.1 }
    }
}

impl NoiseModel {
    pub const ZERO: NoiseModel = NoiseModel { sigma_h: 0.0, sigma_r: 0.0, mislabel_prob: 0.0 };

    pub fn validate(&self) -> Result<(), SimError> {
        if self.sigma_h < 0.0
            || self.sigma_r < 0.0
            || !self.sigma_h.is_finite()
            || !self.sigma_r.is_finite()
        {
            return Err(SimError::BadConfig(format!(
                "noise sigmas must be >= 0, got sigma_h={} sigma_r={}",
                self.sigma_h, self.sigma_r
            )));
        }
        if !(0.0..=1.0).contains(&self.mislabel_prob) {
            return Err(SimError::BadConfig(format!(
                "mislabel_prob must be in [0,1], got {}",
                self.mislabel_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObject {
    pub entity: EntityId,
    /// Instance height drawn from Normal(height_mean, height_std), > 0.
    pub true_height_cm: f64,
    /// min(true_depth / true_height, 1).
    pub true_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub true_depth_cm: f64,
    pub objects: Vec<SyntheticObject>,
}

/// Study output with the configuration echoed for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub tool_version: String,
    pub seed: u64,
    pub n_scenes: usize,
    pub depth_range_cm: (f64, f64),
    pub noise: NoiseModel,
    pub mae_grounded_cm: f64,
    pub mae_baseline_cm: f64,
    /// 100 * (mae_baseline - mae_grounded) / mae_baseline.
    pub reduction_pct: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("knowledge graph has {0} canonical entities; the study needs at least 3")]
    InsufficientKg(usize),
}

/// splitmix64 finalizer: decorrelates per-scene seeds.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-scene random stream. Stream 0 drives scene generation, stream 1 the
/// observation noise, so noise settings never perturb the generated world.
fn scene_rng(seed: u64, scene_index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, scene_index as u64));
    rng.set_stream(stream);
    rng
}

fn sample_height(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    // mean > 0 is a graph invariant, so acceptance probability is > 1/2.
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let h = mean + std * z;
        if h > 0.0 {
            return h;
        }
    }
}

/// Draws `n_scenes` synthetic scenes: depth uniform over the range, 2-3
/// reference objects sampled uniformly from canonical entities, instance
/// heights from each entity's Normal(mean, std). Deterministic per seed.
pub fn generate_scenes(
    kg: &KnowledgeGraph,
    config: &SimConfig,
) -> Result<Vec<SyntheticScene>, SimError> {
    config.validate()?;
    let canonical = kg.canonical_ids();
    if canonical.len() < 3 {
        return Err(SimError::InsufficientKg(canonical.len()));
    }
    let (lo, hi) = config.depth_range_cm;
    let mut scenes = Vec::with_capacity(config.n_scenes);
    for i in 0..config.n_scenes {
        let mut rng = scene_rng(config.seed, i, 0);
        let true_depth_cm = lo + rng.gen::<f64>() * (hi - lo);
        let n_objects = 2 + rng.gen_range(0..2usize);
        let mut objects = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let entity = canonical[rng.gen_range(0..canonical.len())].clone();
            let (mean, std) = kg.lookup_height(&entity).expect("canonical id");
            let true_height_cm = sample_height(&mut rng, mean, std);
            let true_ratio = (true_depth_cm / true_height_cm).min(1.0);
            objects.push(SyntheticObject { entity, true_height_cm, true_ratio });
        }
        scenes.push(SyntheticScene { true_depth_cm, objects });
    }
    Ok(scenes)
}

/// Stands in for the vision-language model: emits each object's label (or
/// an unmatchable token with probability `mislabel_prob`), a lognormal-
/// noised height, and a clamped Gaussian-noised ratio.
///
/// Always consumes the same number of random draws per object regardless
/// of the noise settings, so runs across a noise grid stay comparable at a
/// fixed seed.
pub fn simulate_vlm(
    scene: &SyntheticScene,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> SceneObservation {
    let mut objects = Vec::with_capacity(scene.objects.len());
    for (i, o) in scene.objects.iter().enumerate() {
        let z_h: f64 = rng.sample(StandardNormal);
        let z_r: f64 = rng.sample(StandardNormal);
        let u_label: f64 = rng.gen();
        let provisional_height_cm = o.true_height_cm * (noise.sigma_h * z_h).exp();
        let submerged_ratio = (o.true_ratio + noise.sigma_r * z_r).clamp(0.0, 1.0);
        let raw_label = if u_label < noise.mislabel_prob {
            format!("zzqx{i}")
        } else {
            o.entity.as_spaced()
        };
        objects.push(ObjectObservation {
            raw_label,
            provisional_height_cm,
            submerged_ratio,
            rationale: "synthetic".to_string(),
        });
    }
    let raw_response = serialize_observation(&objects);
    SceneObservation { objects, model_id: "sim".to_string(), raw_response, warnings: vec![] }
}

/// Runs the full study: every scene scored on the average variant against
/// its true depth, grounded (matching enabled) versus baseline (provisional
/// heights only).
pub fn run_study(
    kg: &KnowledgeGraph,
    config: &SimConfig,
    noise: &NoiseModel,
) -> Result<StudyReport, SimError> {
    noise.validate()?;
    let scenes = generate_scenes(kg, config)?;
    let policy = FilterPolicy::default();

    let mut err_grounded = 0.0;
    let mut err_baseline = 0.0;
    for (i, scene) in scenes.iter().enumerate() {
        let mut rng = scene_rng(config.seed, i, 1);
        let obs = simulate_vlm(scene, noise, &mut rng);

        let (grounded, _pending) = ground_objects(kg, &obs);
        let (retained, excluded) = filter_outliers(&grounded, &policy).expect("scene has objects");
        let grounded_avg = aggregate(retained, excluded).expect("pass guards keep >= 1").depth_avg_cm;

        let baseline = ground_provisional(&obs);
        let (retained, excluded) = filter_outliers(&baseline, &policy).expect("scene has objects");
        let baseline_avg = aggregate(retained, excluded).expect("pass guards keep >= 1").depth_avg_cm;

        err_grounded += (grounded_avg - scene.true_depth_cm).abs();
        err_baseline += (baseline_avg - scene.true_depth_cm).abs();
    }
    let n = scenes.len() as f64;
    let mae_grounded_cm = err_grounded / n;
    let mae_baseline_cm = err_baseline / n;
    let reduction_pct = if mae_baseline_cm > 0.0 {
        100.0 * (mae_baseline_cm - mae_grounded_cm) / mae_baseline_cm
    } else {
        0.0
    };
    Ok(StudyReport {
        tool_version: TOOL_VERSION.to_string(),
        seed: config.seed,
        n_scenes: config.n_scenes,
        depth_range_cm: config.depth_range_cm,
        noise: *noise,
        mae_grounded_cm,
        mae_baseline_cm,
        reduction_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_kg;

    /// Tall entities with zero std: sampled instance heights equal the
    /// canonical means exactly and no depth in [5, 80] saturates a ratio.
    fn exact_kg() -> KnowledgeGraph {
        load_kg(
            br#"{"version": "1", "entities": [
                {"id": "bus", "label": "bus", "aliases": [], "height_mean_cm": 320.0,
                 "height_std_cm": 0.0, "source": "t", "status": "canonical"},
                {"id": "stop_sign", "label": "stop sign", "aliases": [], "height_mean_cm": 210.0,
                 "height_std_cm": 0.0, "source": "t", "status": "canonical"},
                {"id": "adult_male", "label": "adult male", "aliases": [], "height_mean_cm": 175.0,
                 "height_std_cm": 0.0, "source": "t", "status": "canonical"},
                {"id": "suv", "label": "SUV", "aliases": [], "height_mean_cm": 170.0,
                 "height_std_cm": 0.0, "source": "t", "status": "canonical"}
              ], "relations": []}"#,
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let kg = exact_kg();
        let config = SimConfig { seed: 7, n_scenes: 50, ..SimConfig::default() };
        let a = generate_scenes(&kg, &config).unwrap();
        let b = generate_scenes(&kg, &config).unwrap();
        assert_eq!(a, b);
        let c = generate_scenes(&kg, &SimConfig { seed: 8, ..config }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_shape_invariants() {
        let kg = exact_kg();
        let config = SimConfig { seed: 3, n_scenes: 200, ..SimConfig::default() };
        for scene in generate_scenes(&kg, &config).unwrap() {
            assert!((5.0..=80.0).contains(&scene.true_depth_cm));
            assert!((2..=3).contains(&scene.objects.len()));
            for o in &scene.objects {
                assert!(o.true_height_cm > 0.0);
                assert!(o.true_ratio > 0.0 && o.true_ratio <= 1.0);
            }
        }
    }

    #[test]
    fn zero_scenes_is_config_error() {
        let kg = exact_kg();
        let config = SimConfig { n_scenes: 0, ..SimConfig::default() };
        assert!(matches!(generate_scenes(&kg, &config), Err(SimError::BadConfig(_))));
    }

    #[test]
    fn small_kg_is_rejected() {
        let kg = load_kg(
            br#"{"version": "1", "entities": [
                {"id": "bus", "label": "bus", "aliases": [], "height_mean_cm": 320.0,
                 "height_std_cm": 0.0, "source": "t", "status": "canonical"}
              ], "relations": []}"#,
        )
        .unwrap();
        assert!(matches!(
            generate_scenes(&kg, &SimConfig::default()),
            Err(SimError::InsufficientKg(1))
        ));
    }

    #[test]
    fn zero_noise_reproduces_truth_exactly() {
        let kg = exact_kg();
        let config = SimConfig { seed: 11, n_scenes: 20, ..SimConfig::default() };
        let scenes = generate_scenes(&kg, &config).unwrap();
        for (i, scene) in scenes.iter().enumerate() {
            let mut rng = scene_rng(config.seed, i, 1);
            let obs = simulate_vlm(scene, &NoiseModel::ZERO, &mut rng);
            for (o, s) in obs.objects.iter().zip(&scene.objects) {
                assert_eq!(o.provisional_height_cm, s.true_height_cm);
                assert_eq!(o.submerged_ratio, s.true_ratio);
                assert_eq!(o.raw_label, s.entity.as_spaced());
            }
        }
    }

    #[test]
    fn simulated_heights_stay_positive_under_noise() {
        let kg = exact_kg();
        let config = SimConfig { seed: 5, n_scenes: 100, ..SimConfig::default() };
        let noise = NoiseModel { sigma_h: 0.3, sigma_r: 0.05, mislabel_prob: 0.1 };
        for (i, scene) in generate_scenes(&kg, &config).unwrap().iter().enumerate() {
            let mut rng = scene_rng(config.seed, i, 1);
            let obs = simulate_vlm(scene, &noise, &mut rng);
            for o in &obs.objects {
                assert!(o.provisional_height_cm > 0.0);
                assert!((0.0..=1.0).contains(&o.submerged_ratio));
            }
        }
    }

    #[test]
    fn full_mislabel_never_matches() {
        let kg = exact_kg();
        let config = SimConfig { seed: 13, n_scenes: 30, ..SimConfig::default() };
        let noise = NoiseModel { mislabel_prob: 1.0, ..NoiseModel::ZERO };
        for (i, scene) in generate_scenes(&kg, &config).unwrap().iter().enumerate() {
            let mut rng = scene_rng(config.seed, i, 1);
            let obs = simulate_vlm(scene, &noise, &mut rng);
            for o in &obs.objects {
                assert!(kg.match_entity(&o.raw_label).is_none(), "label {:?} matched", o.raw_label);
            }
        }
    }

    #[test]
    fn study_is_deterministic() {
        let kg = exact_kg();
        let config = SimConfig { seed: 42, n_scenes: 100, ..SimConfig::default() };
        let noise = NoiseModel::default();
        let a = run_study(&kg, &config, &noise).unwrap();
        let b = run_study(&kg, &config, &noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_study_has_zero_error_on_exact_kg() {
        let kg = exact_kg();
        let config = SimConfig { seed: 42, n_scenes: 200, ..SimConfig::default() };
        let report = run_study(&kg, &config, &NoiseModel::ZERO).unwrap();
        assert!(report.mae_grounded_cm < 0.5, "grounded mae {}", report.mae_grounded_cm);
        assert!(report.mae_baseline_cm < 0.5, "baseline mae {}", report.mae_baseline_cm);
        assert!(report.reduction_pct.abs() < 1e-9);
    }

    #[test]
    fn height_noise_only_hurts_baseline() {
        let kg = exact_kg();
        let config = SimConfig { seed: 42, n_scenes: 500, ..SimConfig::default() };
        let noise = NoiseModel { sigma_h: 0.3, sigma_r: 0.0, mislabel_prob: 0.0 };
        let report = run_study(&kg, &config, &noise).unwrap();
        assert!(report.mae_grounded_cm < 1e-9, "grounding should recover exact heights");
        assert!(report.mae_baseline_cm > 1.0, "hallucinated heights should hurt the baseline");
    }

    #[test]
    fn ratio_noise_alone_gives_no_grounding_benefit() {
        // With sigma_h = 0 the provisional heights are exact, so grounded
        // and baseline arms are object-for-object identical on a zero-std
        // graph.
        let kg = exact_kg();
        let config = SimConfig { seed: 42, n_scenes: 300, ..SimConfig::default() };
        let noise = NoiseModel { sigma_h: 0.0, sigma_r: 0.05, mislabel_prob: 0.0 };
        let report = run_study(&kg, &config, &noise).unwrap();
        assert!(report.mae_baseline_cm > 0.1, "ratio noise must produce error");
        assert!(
            (report.mae_grounded_cm - report.mae_baseline_cm).abs() < 1e-12,
            "grounding cannot fix ratio noise: {} vs {}",
            report.mae_grounded_cm,
            report.mae_baseline_cm
        );
        assert!(report.reduction_pct.abs() < 1e-9);
    }

    #[test]
    fn default_noise_study_shows_grounding_benefit() {
        let kg = exact_kg();
        let config = SimConfig { seed: 42, n_scenes: 300, ..SimConfig::default() };
        let report = run_study(&kg, &config, &NoiseModel::default()).unwrap();
        assert!(
            report.mae_grounded_cm < report.mae_baseline_cm,
            "grounded {} should beat baseline {}",
            report.mae_grounded_cm,
            report.mae_baseline_cm
        );
        assert!(report.reduction_pct > 0.0);
    }

    #[test]
    fn study_report_serializes_round_trip() {
        let kg = exact_kg();
        let config = SimConfig { seed: 1, n_scenes: 10, ..SimConfig::default() };
        let report = run_study(&kg, &config, &NoiseModel::default()).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let parsed: StudyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
    }
}
