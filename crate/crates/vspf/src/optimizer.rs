//! Trust-region Gauss-Newton maximization of NMI over the rigid parameters
//! at a single pyramid scale, drawing a fresh voxel selection from the
//! sampling field at every iteration.
//!
//! Steps are computed in scaled parameters (rotations multiplied by the
//! volume's bounding-sphere radius so one unit is roughly one millimetre of
//! boundary motion). A step is accepted only if NMI improves on the step's
//! own selection; cross-selection NMI values are noisy by design and never
//! compared.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::{sample_selection, SamplingField};
use crate::similarity::{evaluate, nmi_value, HistogramSpec};
use crate::transform::{RigidMap, RigidParams};
use crate::volume::{VectorField, Volume};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Initial trust-region radius in scaled-parameter units (about mm).
    pub initial_radius: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Model-agreement ratio below which the radius shrinks.
    pub shrink_threshold: f64,
    /// Ratio above which a boundary step grows the radius.
    pub grow_threshold: f64,
    /// Override for the six parameter scales; None derives them from the
    /// reference volume (translations 1, rotations bounding-sphere radius).
    pub parameter_scales: Option<[f64; 6]>,
    /// Scaled step norm below which steps count toward convergence.
    pub convergence_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 20,
            initial_radius: 2.0,
            radius_min: 1e-4,
            radius_max: 10.0,
            shrink_threshold: 0.25,
            grow_threshold: 0.75,
            parameter_scales: None,
            convergence_tol: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink_threshold > 0.0 && self.shrink_threshold < self.grow_threshold && self.grow_threshold < 1.0) {
            return Err(Error::Config(format!(
                "acceptance ratio thresholds must satisfy 0 < shrink < grow < 1, got {} / {}",
                self.shrink_threshold, self.grow_threshold
            )));
        }
        if !(self.radius_min > 0.0 && self.radius_min < self.radius_max) {
            return Err(Error::Config("radius bounds must be positive and ordered".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one scale's optimization.
#[derive(Debug, Clone)]
pub struct ScaleResult {
    pub theta: RigidParams,
    /// Gauss-Newton curvature at the final parameters; feeds R_theta_theta
    /// for the next scale.
    pub final_hessian: Matrix6<f64>,
    pub iterations_run: usize,
    /// NMI of the retained parameters on each iteration's selection.
    pub nmi_trace: Vec<f64>,
    /// Per-iteration selection seeds.
    pub selections_used: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
#[cfg_attr(not(test), allow(dead_code))]
struct IterationTrace {
    accepted: bool,
    nmi_before: f64,
    nmi_after: f64,
    radius: f64,
    step_norm: f64,
}

/// Solution of the trust-region subproblem
/// max g^T d - 0.5 d^T H d, ||d|| <= radius for PSD H: the damped-Newton
/// point (H + mu I) d = g when it fits, otherwise mu bisected so the step
/// lands on the boundary. Returns the step and whether it hit the boundary.
fn trust_region_step(h: &Matrix6<f64>, g: &Vector6<f64>, radius: f64) -> (Vector6<f64>, bool) {
    if g.norm() == 0.0 {
        return (Vector6::zeros(), false);
    }
    let ridge = 1e-10 * (1.0 + h.trace().abs());
    let solve = |mu: f64| -> Option<Vector6<f64>> {
        (h + Matrix6::identity() * mu)
            .cholesky()
            .map(|c| c.solve(g))
    };
    if let Some(newton) = solve(ridge) {
        if newton.norm() <= radius {
            return (newton, false);
        }
        // Bisect mu so the step lands on the boundary.
        let mut lo = ridge;
        let mut hi = (g.norm() / radius).max(ridge * 2.0);
        while solve(hi).map(|d| d.norm() > radius).unwrap_or(true) {
            hi *= 2.0;
            if hi > 1e18 {
                break;
            }
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            match solve(mid) {
                Some(d) => {
                    let n = d.norm();
                    if (n - radius).abs() <= 1e-6 * radius {
                        return (d, true);
                    }
                    if n > radius {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                None => lo = mid,
            }
        }
        if let Some(d) = solve(hi) {
            return (d, true);
        }
    }
    // Singular curvature: fall back to the gradient direction.
    (g * (radius / g.norm()), true)
}

fn default_scales(reference: &Volume) -> [f64; 6] {
    let rho = reference.bounding_radius().max(1.0);
    [1.0, 1.0, 1.0, rho, rho, rho]
}

/// Optimizes the rigid parameters at one scale. Iteration n draws a
/// selection with seed mix(seed, n), evaluates NMI, its gradient and the
/// Gauss-Newton curvature on it, and takes a trust-region step that is kept
/// only if NMI improves on that same selection. Stops early after three
/// consecutive sub-tolerance proposals (the collapsed-radius state).
#[allow(clippy::too_many_arguments)]
pub fn optimize_scale(
    reference: &Volume,
    moving: &Volume,
    moving_gradient: &VectorField,
    field: &SamplingField,
    map0: &RigidMap,
    spec: &HistogramSpec,
    cfg: &OptimizerConfig,
    sigma_xi2: f64,
    seed: u64,
) -> Result<ScaleResult> {
    let (result, _) = optimize_scale_traced(
        reference,
        moving,
        moving_gradient,
        field,
        map0,
        spec,
        cfg,
        sigma_xi2,
        seed,
    )?;
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn optimize_scale_traced(
    reference: &Volume,
    moving: &Volume,
    moving_gradient: &VectorField,
    field: &SamplingField,
    map0: &RigidMap,
    spec: &HistogramSpec,
    cfg: &OptimizerConfig,
    sigma_xi2: f64,
    seed: u64,
) -> Result<(ScaleResult, Vec<IterationTrace>)> {
    cfg.validate()?;
    if field.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "field length {} does not match reference voxel count {}",
            field.len(),
            reference.len()
        )));
    }
    let scales = cfg.parameter_scales.unwrap_or_else(|| default_scales(reference));
    let mut radius = cfg.initial_radius.clamp(cfg.radius_min, cfg.radius_max);
    let mut theta = map0.params;
    let mut final_hessian: Option<Matrix6<f64>> = None;
    let mut nmi_trace = Vec::new();
    let mut selections_used = Vec::new();
    let mut traces = Vec::new();
    let mut consecutive_small = 0usize;
    let mut consecutive_empty = 0usize;
    let mut iterations_run = 0usize;
    // The Gauss-Newton matrix carries intensity^2 units while the gradient
    // is in NMI units, so the matrix fixes the step's shape but not its
    // scale. `curv_scale` maps the unit-mean-eigenvalue matrix onto the
    // observed NMI curvature; it is measured from every step's
    // (linear prediction - actual gain) / quadratic term, a ratio that stays
    // well conditioned even for tiny steps.
    let mut curv_scale: Option<f64> = None;

    for n in 1..=cfg.max_iters {
        iterations_run = n;
        let sel_seed = rng::mix(seed, n as u64);
        selections_used.push(sel_seed);
        let sel = sample_selection(field, sel_seed);
        if sel.indices.is_empty() {
            consecutive_empty += 1;
            if consecutive_empty >= 5 {
                return Err(Error::Optimization(
                    "five consecutive empty selections".into(),
                ));
            }
            continue;
        }
        consecutive_empty = 0;

        let map = map0.with_params(theta);
        let eval = evaluate(reference, moving, moving_gradient, &map, &sel, spec, sigma_xi2)?;
        final_hessian = Some(eval.hessian);
        let nmi0 = eval.value.nmi;

        // Scaled-space gradient and curvature, normalized to unit mean
        // eigenvalue before applying the calibrated curvature scale.
        let mut g_s = Vector6::zeros();
        for i in 0..6 {
            g_s[i] = eval.gradient[i] / scales[i];
        }
        let mut h_raw = Matrix6::zeros();
        for r in 0..6 {
            for c in 0..6 {
                h_raw[(r, c)] = eval.hessian[(r, c)] / (scales[r] * scales[c]);
            }
        }
        let tau = h_raw.trace() / 6.0;
        if tau > 0.0 {
            h_raw /= tau;
        }
        let gamma = curv_scale.unwrap_or(1.0);
        let h_model = h_raw * gamma;

        let (step_s, on_boundary) = trust_region_step(&h_model, &g_s, radius);
        let step_norm = step_s.norm();
        let linear = g_s.dot(&step_s);
        let predicted = linear - 0.5 * step_s.dot(&(h_model * step_s));

        let mut candidate = theta.to_vec6();
        for i in 0..6 {
            candidate[i] += step_s[i] / scales[i];
        }
        let candidate = RigidParams::from_vec6(&candidate);

        // Re-evaluate on the SAME selection; a step outside the overlap is a
        // rejected step, not a failure.
        let nmi1 = nmi_value(reference, moving, &map0.with_params(candidate), &sel, spec)
            .map(|v| v.nmi)
            .unwrap_or(f64::NEG_INFINITY);

        let improvement = nmi1 - nmi0;
        let accepted = improvement > 0.0 || (step_norm < cfg.convergence_tol && improvement >= 0.0);
        let ratio = if predicted > 0.0 {
            improvement / predicted
        } else if improvement > 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };

        // Curvature calibration from the observed quadratic shortfall.
        let quad_raw = 0.5 * step_s.dot(&(h_raw * step_s));
        if quad_raw > 1e-14 && improvement.is_finite() {
            let measured = (linear - improvement) / quad_raw;
            let next = if measured > 0.0 {
                match curv_scale {
                    None => measured,
                    Some(g) => (g * measured).sqrt(),
                }
            } else {
                // The objective outran its linear model; flatten the
                // curvature to allow longer steps.
                curv_scale.unwrap_or(1.0) * 0.25
            };
            curv_scale = Some(next.clamp(1e-9, 1e12));
        }

        traces.push(IterationTrace {
            accepted,
            nmi_before: nmi0,
            nmi_after: nmi1,
            radius,
            step_norm,
        });

        if accepted {
            theta = candidate;
            nmi_trace.push(nmi1);
        } else {
            nmi_trace.push(nmi0);
        }
        // Convergence counter: sub-tolerance proposals only count once the
        // curvature scale has been measured (an uncalibrated first step
        // cannot fake convergence) or when the gradient vanished outright.
        if step_norm < cfg.convergence_tol && (curv_scale.is_some() || g_s.norm() <= 1e-12) {
            consecutive_small += 1;
        } else {
            consecutive_small = 0;
        }

        if ratio < cfg.shrink_threshold {
            radius = (radius * 0.25).max(cfg.radius_min);
        } else if ratio > cfg.grow_threshold && on_boundary {
            radius = (radius * 2.0).min(cfg.radius_max);
        }

        if consecutive_small >= 3 {
            break;
        }
    }

    let final_hessian = final_hessian.ok_or_else(|| {
        Error::Optimization("no selection was ever evaluated at this scale".into())
    })?;
    Ok((
        ScaleResult {
            theta,
            final_hessian,
            iterations_run,
            nmi_trace,
            selections_used,
        },
        traces,
    ))
}
