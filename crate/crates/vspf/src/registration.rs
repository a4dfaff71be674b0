//! Multi-scale registration driver: pyramids, per-scale sampling-field
//! construction, per-scale optimization, and parameter/covariance hand-off
//! between scales.
//!
//! Each scale builds its sampling field once (never per iteration). For the
//! uncertainty-driven fields, R_theta_theta comes from the inverse
//! Gauss-Newton Hessian: a pilot uniform selection at the coarsest scale,
//! the previous scale's final Hessian afterwards.

use std::time::Instant;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{optimize_scale, OptimizerConfig, ScaleResult};
use crate::rng;
use crate::sampling::{
    self, compute_utilities_fixed_frame, fixed_frame_hessian, gms_field, heuristic_ph,
    mix_fields, sample_selection, solve_vspf, topk_field, urs_field, SamplingField,
};
use crate::similarity::HistogramSpec;
use crate::transform::{propagate_to_finer, RigidMap, RigidParams};
use crate::volume::{
    build_pyramid, gaussian_smooth_anisotropic, spatial_gradient, VectorField, Volume,
};

/// Voxel-selection strategy of a registration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// VSPF with the heuristic P_h schedule.
    VspfHeuristic,
    /// VSPF with learned per-level P_h values.
    VspfLearned,
    /// Deterministic top-utility selection, fixed per scale.
    VspfThresholded,
    /// Uniform random sampling, redrawn per iteration.
    Urs,
    /// Uniform random sampling, drawn once per scale.
    Furs,
    /// Gradient-magnitude-proportional sampling, redrawn per iteration.
    Gms,
    /// Convex combination of GMS and URS fields.
    GmsUrs,
    /// Deterministic top-gradient-magnitude selection, fixed per scale.
    Gm,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vspf_heuristic" => SamplerKind::VspfHeuristic,
            "vspf_learned" => SamplerKind::VspfLearned,
            "vspf_thresholded" => SamplerKind::VspfThresholded,
            "urs" => SamplerKind::Urs,
            "furs" => SamplerKind::Furs,
            "gms" => SamplerKind::Gms,
            "gms_urs" => SamplerKind::GmsUrs,
            "gm" => SamplerKind::Gm,
            other => return Err(Error::Config(format!("unknown sampler kind {other:?}"))),
        })
    }
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::VspfHeuristic => "vspf_heuristic",
            SamplerKind::VspfLearned => "vspf_learned",
            SamplerKind::VspfThresholded => "vspf_thresholded",
            SamplerKind::Urs => "urs",
            SamplerKind::Furs => "furs",
            SamplerKind::Gms => "gms",
            SamplerKind::GmsUrs => "gms_urs",
            SamplerKind::Gm => "gm",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    /// Pyramid depth K; level K is coarsest.
    pub levels: usize,
    pub sampler_kind: SamplerKind,
    /// Target average selection size as a fraction of the finest-level voxel
    /// count; the same count is used at every level (capped at the level
    /// size).
    pub sampling_rate: f64,
    /// Per-level P_h overrides, index level-1; required for vspf_learned.
    pub p_high_per_level: Option<Vec<f64>>,
    /// Per-level GMS+URS mixing weights, index level-1; 0.5 when absent.
    pub beta_per_level: Option<Vec<f64>>,
    /// Per-level optimizer settings, index level-1; defaults when empty
    /// (20 iterations at the finest level, 50 elsewhere).
    pub optimizer_per_level: Vec<OptimizerConfig>,
    pub bins: usize,
    pub seed: u64,
    /// Gaussian smoothing (in voxels) applied to each moving level before
    /// gradient estimation.
    pub grad_smooth_sigma_voxels: f64,
    pub sigma_xi2: f64,
    /// Keep the per-level sampling fields in the result.
    pub record_vspf: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            levels: 2,
            sampler_kind: SamplerKind::VspfHeuristic,
            sampling_rate: 0.01,
            p_high_per_level: None,
            beta_per_level: None,
            optimizer_per_level: Vec::new(),
            bins: 32,
            seed: 0,
            grad_smooth_sigma_voxels: 0.5,
            sigma_xi2: 1.0,
            record_vspf: false,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sampling_rate {} outside (0, 1]",
                self.sampling_rate
            )));
        }
        if self.bins < 8 {
            return Err(Error::Config(format!("bins {} < 8", self.bins)));
        }
        if !(self.sigma_xi2 > 0.0) {
            return Err(Error::Config("sigma_xi2 must be positive".into()));
        }
        if let Some(v) = &self.p_high_per_level {
            if v.len() != self.levels {
                return Err(Error::Config(format!(
                    "p_high_per_level has {} entries for {} levels",
                    v.len(),
                    self.levels
                )));
            }
            if v.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                return Err(Error::Config("p_high values must lie in (0, 1]".into()));
            }
        }
        if let Some(v) = &self.beta_per_level {
            if v.len() != self.levels {
                return Err(Error::Config(format!(
                    "beta_per_level has {} entries for {} levels",
                    v.len(),
                    self.levels
                )));
            }
            if v.iter().any(|b| !(0.0..=1.0).contains(b)) {
                return Err(Error::Config("beta values must lie in [0, 1]".into()));
            }
        }
        if !self.optimizer_per_level.is_empty() && self.optimizer_per_level.len() != self.levels {
            return Err(Error::Config(format!(
                "optimizer_per_level has {} entries for {} levels",
                self.optimizer_per_level.len(),
                self.levels
            )));
        }
        for oc in &self.optimizer_per_level {
            oc.validate()?;
        }
        Ok(())
    }

    fn optimizer_for_level(&self, level: usize) -> OptimizerConfig {
        if !self.optimizer_per_level.is_empty() {
            return self.optimizer_per_level[level - 1].clone();
        }
        OptimizerConfig {
            max_iters: if level == 1 { 20 } else { 50 },
            ..OptimizerConfig::default()
        }
    }
}

/// Full multi-scale outcome. `per_scale` is in execution order, coarsest
/// scale first.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub theta: RigidParams,
    pub per_scale: Vec<ScaleResult>,
    /// (level, field) pairs in execution order when recording is enabled.
    pub vspf_snapshots: Vec<(usize, SamplingField)>,
    pub wall_time: f64,
}

/// Compact JSON-facing view of a registration result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// [tx, ty, tz, rx, ry, rz] in mm and radians.
    pub theta: [f64; 6],
    pub levels: Vec<LevelReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub iterations: usize,
    pub final_nmi: Option<f64>,
}

impl RegistrationResult {
    pub fn report(&self, cfg: &RegistrationConfig, zero_time: bool) -> RegistrationReport {
        let k = cfg.levels;
        RegistrationReport {
            theta: self.theta.to_vec6(),
            levels: self
                .per_scale
                .iter()
                .enumerate()
                .map(|(i, s)| LevelReport {
                    level: k - i,
                    iterations: s.iterations_run,
                    final_nmi: s.nmi_trace.last().copied(),
                })
                .collect(),
            wall_time_s: if zero_time { 0.0 } else { self.wall_time },
        }
    }
}

const PILOT_TAG: u64 = 0x7069_6c6f; // "pilo"
const FIXED_TAG: u64 = 0x6669_7865; // "fixe"
const OPT_TAG: u64 = 0x6f70_7469; // "opti"


/// Moving-image gradient magnitude pulled back onto the reference grid
/// through the entry transform; zero where the mapped point leaves the
/// moving volume.
fn pullback_magnitudes(grad: &VectorField, map: &RigidMap, coords: &[[f64; 3]]) -> Vec<f64> {
    coords
        .iter()
        .map(|&x| match grad.sample_trilinear(map.map_point(x)) {
            Some(g) => (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt(),
            None => 0.0,
        })
        .collect()
}

fn level_voxel_centers(vol: &Volume) -> Vec<[f64; 3]> {
    let mut coords = Vec::with_capacity(vol.len());
    for z in 0..vol.dims[2] {
        for y in 0..vol.dims[1] {
            for x in 0..vol.dims[0] {
                coords.push(vol.voxel_center(x, y, z));
            }
        }
    }
    coords
}

struct LevelContext<'a> {
    level: usize,
    reference: &'a Volume,
    /// Smoothed moving-image gradient, on the moving grid.
    gradient: &'a VectorField,
    /// Smoothed reference-image gradient, on this level's reference grid.
    ref_gradient: &'a VectorField,
    m_level: f64,
    level_seed: u64,
}

fn build_field(
    cfg: &RegistrationConfig,
    ctx: &LevelContext,
    map_entry: &RigidMap,
    r_theta: &Matrix6<f64>,
) -> Result<SamplingField> {
    let n_level = ctx.reference.len();
    let m = ctx.m_level;
    let m_int = (m.round() as usize).clamp(1, n_level);
    match cfg.sampler_kind {
        SamplerKind::Urs => urs_field(n_level, m),
        SamplerKind::Furs => {
            let base = urs_field(n_level, m)?;
            let sel = sample_selection(&base, rng::mix(ctx.level_seed, FIXED_TAG));
            Ok(SamplingField::indicator(&sel, n_level))
        }
        SamplerKind::Gms => {
            let scores = pullback_magnitudes(ctx.gradient, map_entry, &level_voxel_centers(ctx.reference));
            gms_field(&scores, m)
        }
        SamplerKind::Gm => {
            let scores = pullback_magnitudes(ctx.gradient, map_entry, &level_voxel_centers(ctx.reference));
            topk_field(&scores, m_int)
        }
        SamplerKind::GmsUrs => {
            let scores = pullback_magnitudes(ctx.gradient, map_entry, &level_voxel_centers(ctx.reference));
            let gms = gms_field(&scores, m)?;
            let urs = urs_field(n_level, m)?;
            let beta = cfg
                .beta_per_level
                .as_ref()
                .map(|v| v[ctx.level - 1])
                .unwrap_or(0.5);
            mix_fields(&gms, &urs, beta)
        }
        SamplerKind::VspfHeuristic | SamplerKind::VspfLearned | SamplerKind::VspfThresholded => {
            let utilities =
                compute_utilities_fixed_frame(ctx.ref_gradient, map_entry, r_theta, cfg.sigma_xi2)?;
            match cfg.sampler_kind {
                SamplerKind::VspfThresholded => topk_field(&utilities.u, m_int),
                _ => {
                    let p_high = match cfg.sampler_kind {
                        SamplerKind::VspfLearned => cfg
                            .p_high_per_level
                            .as_ref()
                            .ok_or_else(|| {
                                Error::Config("vspf_learned requires p_high_per_level".into())
                            })?[ctx.level - 1],
                        _ => heuristic_ph(ctx.level, m, n_level)?,
                    };
                    solve_vspf(&utilities, 1.0, m, p_high)
                }
            }
        }
    }
}

/// Registers `moving` onto `reference` across all pyramid levels.
pub fn register(reference: &Volume, moving: &Volume, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    register_to_level(reference, moving, cfg, 1)
}

/// Runs the multi-scale loop from the coarsest level down to `stop_level`
/// (1 = full registration). Hyperparameter learning evaluates candidates at
/// intermediate levels through this entry point.
pub fn register_to_level(
    reference: &Volume,
    moving: &Volume,
    cfg: &RegistrationConfig,
    stop_level: usize,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if stop_level == 0 || stop_level > cfg.levels {
        return Err(Error::Config(format!(
            "stop_level {} outside 1..={}",
            stop_level, cfg.levels
        )));
    }
    let started = Instant::now();
    let ref_pyr = build_pyramid(reference, cfg.levels)?;
    let mov_pyr = build_pyramid(moving, cfg.levels)?;
    // Jittered sample positions break the grid-phase coincidence between
    // the two pyramids that would otherwise freeze the zero initialization
    // on a partial-volume interpolation artifact.
    let hist_spec = HistogramSpec::from_volumes(reference, moving, cfg.bins)?.with_jitter();
    let center = reference.physical_center();
    let m_target = cfg.sampling_rate * reference.len() as f64;

    let mut theta = RigidParams::default();
    let mut prev_hessian: Option<Matrix6<f64>> = None;
    let mut per_scale = Vec::new();
    let mut vspf_snapshots = Vec::new();

    for level in (stop_level..=cfg.levels).rev() {
        let ref_l = ref_pyr.level(level);
        let mov_l = mov_pyr.level(level);
        let sigma = [
            cfg.grad_smooth_sigma_voxels * mov_l.spacing[0],
            cfg.grad_smooth_sigma_voxels * mov_l.spacing[1],
            cfg.grad_smooth_sigma_voxels * mov_l.spacing[2],
        ];
        let smoothed = gaussian_smooth_anisotropic(mov_l, sigma);
        let gradient = spatial_gradient(&smoothed)?;
        let ref_sigma = [
            cfg.grad_smooth_sigma_voxels * ref_l.spacing[0],
            cfg.grad_smooth_sigma_voxels * ref_l.spacing[1],
            cfg.grad_smooth_sigma_voxels * ref_l.spacing[2],
        ];
        let ref_gradient = spatial_gradient(&gaussian_smooth_anisotropic(ref_l, ref_sigma))?;
        let level_seed = rng::mix(cfg.seed, level as u64);
        let m_level = m_target.min(ref_l.len() as f64).max(1.0);
        let map_entry = RigidMap::new(theta, center);

        // R_theta_theta for the utility computation: a pilot fixed-frame
        // curvature estimate at every level. The final Hessian of the
        // previous scale is blended in when available, but a low sampling
        // rate leaves it estimated from only M voxels, too noisy to shape
        // the utilities on its own.
        let r_theta = if needs_utilities(cfg.sampler_kind) {
            let pilot_m = (10.0 * m_level).max(2000.0).min(ref_l.len() as f64);
            let pilot_field = urs_field(ref_l.len(), pilot_m)?;
            let pilot_sel = sample_selection(&pilot_field, rng::mix(level_seed, PILOT_TAG));
            if pilot_sel.indices.is_empty() {
                return Err(Error::Optimization("empty pilot selection".into()));
            }
            let mut h = fixed_frame_hessian(&ref_gradient, &map_entry, &pilot_sel, cfg.sigma_xi2)?;
            if let Some(prev) = &prev_hessian {
                // Average curvature information carried over from the
                // previous scale with the pilot estimate.
                h = (h + prev) * 0.5;
            }
            sampling::inv_spd_floored(&h, 1e-10)
        } else {
            Matrix6::identity()
        };

        let ctx = LevelContext {
            level,
            reference: ref_l,
            gradient: &gradient,
            ref_gradient: &ref_gradient,
            m_level,
            level_seed,
        };
        let field = build_field(cfg, &ctx, &map_entry, &r_theta)?;
        debug_assert!(field.len() == ref_l.len());
        if cfg.record_vspf {
            vspf_snapshots.push((level, field.clone()));
        }

        let opt_cfg = cfg.optimizer_for_level(level);
        let scale_result = optimize_scale(
            ref_l,
            mov_l,
            &gradient,
            &field,
            &map_entry,
            &hist_spec,
            &opt_cfg,
            cfg.sigma_xi2,
            rng::mix(level_seed, OPT_TAG),
        )?;
        theta = propagate_to_finer(&scale_result.theta);
        prev_hessian = Some(scale_result.final_hessian);
        per_scale.push(scale_result);
    }

    Ok(RegistrationResult {
        theta,
        per_scale,
        vspf_snapshots,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn needs_utilities(kind: SamplerKind) -> bool {
    matches!(
        kind,
        SamplerKind::VspfHeuristic | SamplerKind::VspfLearned | SamplerKind::VspfThresholded
    )
}

/// Exports a sampling field as a volume on its level's grid, for
/// visualization.
pub fn field_as_volume(field: &SamplingField, level_volume: &Volume) -> Result<Volume> {
    Volume::new(
        level_volume.dims,
        level_volume.spacing,
        level_volume.origin,
        field.p.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_phantom_pair_with_gold, tre, PhantomSpec};
    use crate::sampling::sample_selection;

    fn quick_cfg(kind: SamplerKind, rate: f64, seed: u64) -> RegistrationConfig {
        RegistrationConfig {
            sampler_kind: kind,
            sampling_rate: rate,
            seed,
            ..RegistrationConfig::default()
        }
    }

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            size: 32,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn self_registration_stays_near_identity() {
        // Full-size phantom: the sample-jitter realization bias of the
        // deterministic dense objective shrinks as N^(-1/2), and the example
        // bound needs the full voxel count.
        let pair =
            make_phantom_pair_with_gold(&PhantomSpec::default(), 5, RigidParams::default()).unwrap();
        let mut cfg = quick_cfg(SamplerKind::VspfHeuristic, 1.0, 3);
        cfg.optimizer_per_level = vec![
            OptimizerConfig {
                max_iters: 40,
                convergence_tol: 1e-4,
                ..OptimizerConfig::default()
            };
            2
        ];
        let result = register(&pair.reference, &pair.reference, &cfg).unwrap();
        let rho = pair.reference.bounding_radius();
        let v = result.theta.to_vec6();
        let scaled: f64 = (0..6)
            .map(|i| (v[i] * if i < 3 { 1.0 } else { rho }).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(scaled <= 1e-2, "self-registration drifted: {v:?}");
    }

    #[test]
    fn recovers_phantom_gold_transform() {
        let gold = RigidParams::new([4.0, -3.0, 2.0], [0.05, -0.03, 0.02]);
        let spec = PhantomSpec::default(); // 64^3
        let pair = make_phantom_pair_with_gold(&spec, 11, gold).unwrap();
        let cfg = quick_cfg(SamplerKind::VspfHeuristic, 0.01, 21);
        let result = register(&pair.reference, &pair.moving, &cfg).unwrap();
        let tres = tre(&pair.gold, &result.theta, &pair.voi_points);
        let max = tres.iter().cloned().fold(0.0f64, f64::max);
        assert!(max < 1.0, "max VOI TRE {max} mm, theta {:?}", result.theta);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let gold = RigidParams::new([2.0, 1.0, -1.5], [0.02, 0.03, -0.01]);
        let pair = make_phantom_pair_with_gold(&small_spec(), 7, gold).unwrap();
        let cfg = quick_cfg(SamplerKind::VspfHeuristic, 0.03, 99);
        let a = register(&pair.reference, &pair.moving, &cfg).unwrap();
        let b = register(&pair.reference, &pair.moving, &cfg).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.per_scale.len(), b.per_scale.len());
        for (x, y) in a.per_scale.iter().zip(&b.per_scale) {
            assert_eq!(x.theta, y.theta);
            assert_eq!(x.nmi_trace, y.nmi_trace);
            assert_eq!(x.final_hessian, y.final_hessian);
        }
    }

    #[test]
    fn vspf_built_once_per_scale_with_constraint() {
        let gold = RigidParams::new([1.0, 0.5, -0.5], [0.01, -0.02, 0.02]);
        let pair = make_phantom_pair_with_gold(&small_spec(), 13, gold).unwrap();
        let mut cfg = quick_cfg(SamplerKind::VspfHeuristic, 0.01, 5);
        cfg.record_vspf = true;
        let result = register(&pair.reference, &pair.moving, &cfg).unwrap();
        assert_eq!(result.vspf_snapshots.len(), cfg.levels);
        let n1 = pair.reference.len() as f64;
        for (level, field) in &result.vspf_snapshots {
            field.check_invariants().unwrap();
            let m = (cfg.sampling_rate * n1).min(field.len() as f64);
            assert!(
                (field.c_ave - m).abs() <= 1e-6 * m,
                "level {level}: c_ave {} vs target {m}",
                field.c_ave
            );
        }
    }

    #[test]
    fn realized_selection_size_tracks_target() {
        let gold = RigidParams::new([1.0, -1.0, 0.5], [0.02, 0.01, -0.03]);
        let pair = make_phantom_pair_with_gold(&small_spec(), 17, gold).unwrap();
        for kind in [SamplerKind::VspfHeuristic, SamplerKind::Urs, SamplerKind::Gms] {
            let mut cfg = quick_cfg(kind, 0.03, 31);
            cfg.record_vspf = true;
            let result = register(&pair.reference, &pair.moving, &cfg).unwrap();
            for (level, field) in &result.vspf_snapshots {
                let m = field.c_ave;
                let mut total = 0usize;
                let draws = 100u64;
                for d in 0..draws {
                    total += sample_selection(field, rng::mix(1234, d)).indices.len();
                }
                let mean = total as f64 / draws as f64;
                assert!(
                    (mean - m).abs() <= 0.05 * m,
                    "{} level {level}: mean {mean} vs target {m}",
                    kind.as_str()
                );
            }
        }
    }

    #[test]
    fn all_sampler_kinds_run() {
        let gold = RigidParams::new([1.5, -1.0, 1.0], [0.02, -0.02, 0.01]);
        let pair = make_phantom_pair_with_gold(&small_spec(), 23, gold).unwrap();
        for kind in [
            SamplerKind::VspfHeuristic,
            SamplerKind::VspfThresholded,
            SamplerKind::Urs,
            SamplerKind::Furs,
            SamplerKind::Gms,
            SamplerKind::GmsUrs,
            SamplerKind::Gm,
        ] {
            let cfg = quick_cfg(kind, 0.05, 41);
            let result = register(&pair.reference, &pair.moving, &cfg);
            assert!(result.is_ok(), "{} failed: {:?}", kind.as_str(), result.err());
            let tres = tre(&pair.gold, &result.unwrap().theta, &pair.voi_points);
            let max = tres.iter().cloned().fold(0.0f64, f64::max);
            assert!(max < 5.0, "{}: max TRE {max}", kind.as_str());
        }
    }

    #[test]
    fn learned_kind_requires_schedule() {
        let pair = make_phantom_pair_with_gold(&small_spec(), 29, RigidParams::default()).unwrap();
        let cfg = quick_cfg(SamplerKind::VspfLearned, 0.03, 1);
        let err = register(&pair.reference, &pair.moving, &cfg).unwrap_err();
        assert!(err.to_string().contains("p_high_per_level"), "{err}");
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let mut cfg = RegistrationConfig::default();
        cfg.sampling_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RegistrationConfig::default();
        cfg.levels = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RegistrationConfig::default();
        cfg.p_high_per_level = Some(vec![0.5]);
        assert!(cfg.validate().is_err(), "length mismatch with levels=2");
    }
}
