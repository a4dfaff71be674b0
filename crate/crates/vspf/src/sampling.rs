//! Voxel-selection strategies: the optimized voxel sampling probability
//! field (VSPF) and the baseline samplers (uniform, gradient-magnitude,
//! mixtures, deterministic top-k).
//!
//! The VSPF assigns each voxel the probability
//! `p_i = clamp(A (U_i + lambda C), 0, P_h)`, where `U_i` is the voxel's
//! utility (its predicted contribution to shrinking the transform-parameter
//! error covariance), `lambda` is the Lagrange multiplier enforcing the
//! average-cost constraint `sum_i p_i C = C_ave`, and `A` is kept as small
//! as the constraint allows so selections stay diverse.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::rng;
use crate::similarity::voxel_g;
use crate::transform::RigidMap;
use crate::volume::VectorField;

/// Relative tolerance on the average-cost constraint of a solved field.
pub const CONSTRAINT_REL_TOL: f64 = 1e-6;

/// Bisection target: residual below this fraction of c_ave stops early.
const BISECTION_REL_TOL: f64 = 1e-9;
const BISECTION_MAX_ITERS: usize = 200;
const MAX_A_DOUBLINGS: usize = 60;

/// Per-voxel utilities with the covariance context they were computed from.
#[derive(Debug, Clone)]
pub struct UtilityVector {
    pub u: Vec<f64>,
    /// R_theta_theta used to form the utilities.
    pub r_theta: Matrix6<f64>,
    pub sigma_xi2: f64,
}

/// Strategy that generated a sampling field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Clamped-affine VSPF solution with finite A.
    Vspf,
    /// A -> infinity limit: thresholded VSPF with one fractional voxel.
    VspfThreshold,
    /// Uniform random sampling.
    Uniform,
    /// Probability proportional to gradient magnitude, clamped at 1.
    GradientMagnitude,
    /// Convex combination of two fields.
    Mixed,
    /// Deterministic top-k indicator.
    TopK,
    /// Indicator of a fixed, pre-drawn selection.
    Indicator,
}

/// Per-voxel selection probabilities plus generating metadata.
#[derive(Debug, Clone)]
pub struct SamplingField {
    pub p: Vec<f64>,
    /// Target average cost sum_i p_i * C.
    pub c_ave: f64,
    pub voxel_cost: f64,
    pub p_high: f64,
    pub lambda_star: Option<f64>,
    pub a_value: Option<f64>,
    pub kind: FieldKind,
}

impl SamplingField {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Expected number of selected voxels.
    pub fn expected_count(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Checks the box and average-cost invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, &p) in self.p.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("p[{i}] = {p} outside [0,1]")));
            }
            if p > self.p_high + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "p[{i}] = {p} exceeds p_high {}",
                    self.p_high
                )));
            }
        }
        let cost = self.expected_count() * self.voxel_cost;
        if (cost - self.c_ave).abs() > CONSTRAINT_REL_TOL * self.c_ave.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument(format!(
                "cost {cost} misses c_ave {} beyond tolerance",
                self.c_ave
            )));
        }
        Ok(())
    }

    /// Indicator field of a fixed selection: sampling it reproduces the
    /// selection exactly, which is how once-per-scale samplers are driven
    /// through the per-iteration optimizer loop.
    pub fn indicator(selection: &Selection, n: usize) -> Self {
        let mut p = vec![0.0; n];
        for &i in &selection.indices {
            p[i as usize] = 1.0;
        }
        SamplingField {
            c_ave: selection.indices.len() as f64,
            voxel_cost: 1.0,
            p_high: 1.0,
            lambda_star: None,
            a_value: None,
            kind: FieldKind::Indicator,
            p,
        }
    }
}

/// One realized voxel subset drawn from a field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Strictly increasing linear voxel indices with d_i = 1.
    pub indices: Vec<u64>,
    pub draw_seed: u64,
}

// ---------------------------------------------------------------------------
// Utilities.
// ---------------------------------------------------------------------------

/// U = ||R g||^2 / (g^T R g + sigma^2); zero when g = 0.
pub fn utility_from_g(r: &Matrix6<f64>, g: &Vector6<f64>, sigma_xi2: f64) -> f64 {
    let rg = r * g;
    let denom = g.dot(&rg) + sigma_xi2;
    rg.norm_squared() / denom
}

/// Symmetrizes and floors the eigenvalues of a covariance matrix at
/// `floor` (absolute), reconstructing only when needed.
pub fn symmetrize_floor(m: &Matrix6<f64>, floor: f64) -> Matrix6<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&e| e >= floor) {
        return sym;
    }
    let vals = eig.eigenvalues.map(|e| e.max(floor));
    let mut out = Matrix6::zeros();
    for k in 0..6 {
        let v = eig.eigenvectors.column(k);
        out += vals[k] * v * v.transpose();
    }
    out
}

/// Inverse of a symmetric PSD matrix with eigenvalues floored at
/// `rel_floor * max_eigenvalue` before inversion.
pub fn inv_spd_floored(m: &Matrix6<f64>, rel_floor: f64) -> Matrix6<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = (rel_floor * max_eig).max(f64::MIN_POSITIVE);
    let mut out = Matrix6::zeros();
    for k in 0..6 {
        let v = eig.eigenvectors.column(k);
        out += (1.0 / eig.eigenvalues[k].max(floor)) * v * v.transpose();
    }
    out
}

/// Voxel utilities from the fixed-image gradients: g_i = grad I(x_i) *
/// dT/dtheta with the gradient read directly off the reference grid. The
/// registration driver uses this form because it stays meaningful under the
/// large initial misalignments of the coarsest scale, where pulling moving
/// gradients back through the entry transform samples the wrong anatomy.
pub fn compute_utilities_fixed_frame(
    reference_gradient: &VectorField,
    map: &RigidMap,
    r_theta: &Matrix6<f64>,
    sigma_xi2: f64,
) -> Result<UtilityVector> {
    if !(sigma_xi2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_xi2 must be positive, got {sigma_xi2}")));
    }
    let r = symmetrize_floor(r_theta, 1e-12);
    let dims = reference_gradient.dims;
    let n = dims[0] * dims[1] * dims[2];
    let mut u = Vec::with_capacity(n);
    let mut idx = 0usize;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let gv = reference_gradient.vector_at(idx);
                idx += 1;
                if gv == [0.0; 3] {
                    u.push(0.0);
                    continue;
                }
                let point = [
                    reference_gradient.origin[0] + x as f64 * reference_gradient.spacing[0],
                    reference_gradient.origin[1] + y as f64 * reference_gradient.spacing[1],
                    reference_gradient.origin[2] + z as f64 * reference_gradient.spacing[2],
                ];
                let jac = map.jacobian(point);
                let mut g = Vector6::zeros();
                for c in 0..6 {
                    g[c] = gv[0] * jac[(0, c)] + gv[1] * jac[(1, c)] + gv[2] * jac[(2, c)];
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite gradient entry".into()));
                }
                u.push(utility_from_g(&r, &g, sigma_xi2));
            }
        }
    }
    Ok(UtilityVector {
        u,
        r_theta: r,
        sigma_xi2,
    })
}

/// Curvature of the fixed-frame design matrix over a selection:
/// sum of w g_i g_i^T with g_i as in `compute_utilities_fixed_frame`.
/// Seeds R_theta_theta at the coarsest scale.
pub fn fixed_frame_hessian(
    reference_gradient: &VectorField,
    map: &RigidMap,
    sel: &Selection,
    sigma_xi2: f64,
) -> Result<Matrix6<f64>> {
    if sel.indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    let dims = reference_gradient.dims;
    let w = 1.0 / sigma_xi2;
    let mut h = Matrix6::zeros();
    for &idx in &sel.indices {
        let idx = idx as usize;
        let gv = reference_gradient.vector_at(idx);
        if gv == [0.0; 3] {
            continue;
        }
        let x = idx % dims[0];
        let rest = idx / dims[0];
        let (y, z) = (rest % dims[1], rest / dims[1]);
        let point = [
            reference_gradient.origin[0] + x as f64 * reference_gradient.spacing[0],
            reference_gradient.origin[1] + y as f64 * reference_gradient.spacing[1],
            reference_gradient.origin[2] + z as f64 * reference_gradient.spacing[2],
        ];
        let jac = map.jacobian(point);
        let mut g = Vector6::zeros();
        for c in 0..6 {
            g[c] = gv[0] * jac[(0, c)] + gv[1] * jac[(1, c)] + gv[2] * jac[(2, c)];
        }
        h.ger(w, &g, &g, 1.0);
    }
    Ok(h)
}

/// Voxel utilities over the given reference-frame voxel centers with the
/// derivative chain taken from the moving image.
///
/// For each point g_i = grad V(T(x_i)) * dT/dtheta is formed from the
/// moving-image gradient field and the transform Jacobian at the
/// linearization parameters; points mapping outside the gradient field
/// carry zero utility.
pub fn compute_utilities(
    moving_gradient: &VectorField,
    map: &RigidMap,
    r_theta: &Matrix6<f64>,
    sigma_xi2: f64,
    voxel_coords: &[[f64; 3]],
) -> Result<UtilityVector> {
    if !(sigma_xi2 > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_xi2 must be positive, got {sigma_xi2}")));
    }
    let r = symmetrize_floor(r_theta, 1e-12);
    let mut u = Vec::with_capacity(voxel_coords.len());
    for &x in voxel_coords {
        let ui = match voxel_g(moving_gradient, map, x) {
            Some(g) => {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite gradient entry".into()));
                }
                utility_from_g(&r, &g, sigma_xi2)
            }
            None => 0.0,
        };
        u.push(ui);
    }
    Ok(UtilityVector {
        u,
        r_theta: r,
        sigma_xi2,
    })
}

// ---------------------------------------------------------------------------
// VSPF solution.
// ---------------------------------------------------------------------------

/// Constraint left-hand side: sum_i clamp(A (U_i + lambda C), 0, P_h) * C.
/// Monotonically non-decreasing in lambda.
pub fn phi(lambda: f64, a_value: f64, u: &UtilityVector, voxel_cost: f64, p_high: f64) -> f64 {
    let mut acc = 0.0;
    for &ui in &u.u {
        acc += (a_value * (ui + lambda * voxel_cost)).clamp(0.0, p_high);
    }
    acc * voxel_cost
}

/// Lagrange cost J(P) = -sum_i p_i U_i of a solved field.
pub fn cost_j(field: &SamplingField, u: &UtilityVector) -> f64 {
    debug_assert_eq!(field.p.len(), u.u.len());
    -field.p.iter().zip(&u.u).map(|(&p, &ui)| p * ui).sum::<f64>()
}

fn clamp_p(a: f64, ui: f64, lambda: f64, c: f64, p_high: f64) -> f64 {
    (a * (ui + lambda * c)).clamp(0.0, p_high)
}

/// Bisection for lambda so that phi(lambda) = c_ave, followed by one exact
/// solve on the final linear segment. Returns (lambda, residual).
fn solve_lambda(u: &UtilityVector, a: f64, c: f64, c_ave: f64, p_high: f64) -> (f64, f64) {
    let umax = u.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let umin = u.u.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut lo = -umax / c;
    let mut hi = (p_high / a - umin) / c;
    let tol = BISECTION_REL_TOL * c_ave;
    let mut best = (lo, (phi(lo, a, u, c, p_high) - c_ave).abs());
    let hi_res = (phi(hi, a, u, c, p_high) - c_ave).abs();
    if hi_res < best.1 {
        best = (hi, hi_res);
    }
    for _ in 0..BISECTION_MAX_ITERS {
        if best.1 <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let val = phi(mid, a, u, c, p_high);
        let res = (val - c_ave).abs();
        if res < best.1 {
            best = (mid, res);
        }
        if val < c_ave {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Exact solve on the segment identified by the bisection point: with the
    // free/saturated split fixed, phi is affine in lambda.
    let lambda = best.0;
    let mut saturated = 0usize;
    let mut free = 0usize;
    let mut free_u_sum = 0.0;
    for &ui in &u.u {
        let raw = a * (ui + lambda * c);
        if raw >= p_high {
            saturated += 1;
        } else if raw > 0.0 {
            free += 1;
            free_u_sum += ui;
        }
    }
    if free > 0 {
        let remaining = c_ave - saturated as f64 * p_high * c;
        let lambda_exact = (remaining / (a * c) - free_u_sum) / (c * free as f64);
        let res = (phi(lambda_exact, a, u, c, p_high) - c_ave).abs();
        if res < best.1 {
            best = (lambda_exact, res);
        }
    }
    best
}

fn uniform_field(n: usize, c: f64, c_ave: f64, p_high: f64) -> Result<SamplingField> {
    let p = c_ave / (n as f64 * c);
    if p > p_high * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "uniform fallback probability {p} exceeds p_high {p_high}"
        )));
    }
    Ok(SamplingField {
        p: vec![p.min(p_high); n],
        c_ave,
        voxel_cost: c,
        p_high,
        lambda_star: None,
        a_value: None,
        kind: FieldKind::Vspf,
    })
}

/// Solves the VSPF for a forced value of the auxiliary scale A.
pub fn solve_vspf_at(
    a_value: f64,
    u: &UtilityVector,
    voxel_cost: f64,
    c_ave: f64,
    p_high: f64,
) -> Result<SamplingField> {
    validate_vspf_inputs(u, voxel_cost, c_ave, p_high)?;
    let (lambda, residual) = solve_lambda(u, a_value, voxel_cost, c_ave, p_high);
    if residual > CONSTRAINT_REL_TOL * c_ave {
        return Err(Error::Infeasible(format!(
            "constraint residual {residual} at A = {a_value}"
        )));
    }
    let p = u
        .u
        .iter()
        .map(|&ui| clamp_p(a_value, ui, lambda, voxel_cost, p_high))
        .collect();
    Ok(SamplingField {
        p,
        c_ave,
        voxel_cost,
        p_high,
        lambda_star: Some(lambda),
        a_value: Some(a_value),
        kind: FieldKind::Vspf,
    })
}

fn validate_vspf_inputs(u: &UtilityVector, voxel_cost: f64, c_ave: f64, p_high: f64) -> Result<()> {
    let n = u.u.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty utility vector".into()));
    }
    if !(voxel_cost > 0.0) || !(c_ave > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "voxel_cost {voxel_cost} and c_ave {c_ave} must be positive"
        )));
    }
    if !(p_high > 0.0 && p_high <= 1.0) {
        return Err(Error::InvalidArgument(format!("p_high {p_high} outside (0,1]")));
    }
    if c_ave > n as f64 * p_high * voxel_cost * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "c_ave {c_ave} exceeds N * p_high * C = {}",
            n as f64 * p_high * voxel_cost
        )));
    }
    Ok(())
}

/// Solves the VSPF with the minimal-A rule: A starts at
/// p_high / (max U + eps), so the most useful voxel just reaches P_h at
/// lambda = 0, and doubles only if the constraint cannot be met.
pub fn solve_vspf(
    u: &UtilityVector,
    voxel_cost: f64,
    c_ave: f64,
    p_high: f64,
) -> Result<SamplingField> {
    validate_vspf_inputs(u, voxel_cost, c_ave, p_high)?;
    let umax = u.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let umin = u.u.iter().cloned().fold(f64::INFINITY, f64::min);
    if umax == umin {
        // Equal utilities (including all-zero): every voxel gets the same
        // probability c_ave / (N C), exactly.
        return uniform_field(u.u.len(), voxel_cost, c_ave, p_high);
    }
    let mut a = p_high / (umax + 1e-12);
    for _ in 0..=MAX_A_DOUBLINGS {
        match solve_vspf_at(a, u, voxel_cost, c_ave, p_high) {
            Ok(field) => return Ok(field),
            Err(_) => a *= 2.0,
        }
    }
    Err(Error::Infeasible(format!(
        "no A satisfied the average-cost constraint after {MAX_A_DOUBLINGS} doublings"
    )))
}

/// The A -> infinity limit of the VSPF: P_h to every voxel above the utility
/// threshold, plus at most one fractional voxel to meet the constraint
/// exactly. Ties break toward the lower index.
pub fn solve_vspf_threshold(
    u: &UtilityVector,
    voxel_cost: f64,
    c_ave: f64,
    p_high: f64,
) -> Result<SamplingField> {
    validate_vspf_inputs(u, voxel_cost, c_ave, p_high)?;
    let n = u.u.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        u.u[j]
            .partial_cmp(&u.u[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut p = vec![0.0; n];
    let mut budget = c_ave / voxel_cost;
    for &i in &order {
        if budget <= 0.0 {
            break;
        }
        let take = budget.min(p_high);
        p[i] = take;
        budget -= take;
    }
    Ok(SamplingField {
        p,
        c_ave,
        voxel_cost,
        p_high,
        lambda_star: None,
        a_value: None,
        kind: FieldKind::VspfThreshold,
    })
}

// ---------------------------------------------------------------------------
// Selection draw.
// ---------------------------------------------------------------------------

/// Independent Bernoulli(p_i) draws from a counter-based generator keyed by
/// (seed, voxel index). The same (field, seed) always yields the same
/// selection; an empty draw is returned as-is.
pub fn sample_selection(field: &SamplingField, seed: u64) -> Selection {
    let mut indices = Vec::new();
    for (i, &p) in field.p.iter().enumerate() {
        let selected = if p >= 1.0 {
            true
        } else if p <= 0.0 {
            false
        } else {
            rng::unit_f64(seed, i as u64) < p
        };
        if selected {
            indices.push(i as u64);
        }
    }
    Selection {
        indices,
        draw_seed: seed,
    }
}

// ---------------------------------------------------------------------------
// Baseline fields.
// ---------------------------------------------------------------------------

/// Uniform random sampling: p_i = min(1, M/N).
pub fn urs_field(n: usize, m: f64) -> Result<SamplingField> {
    if n == 0 || !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("urs needs n > 0 and M > 0, got n={n}, M={m}")));
    }
    let p = (m / n as f64).min(1.0);
    Ok(SamplingField {
        p: vec![p; n],
        c_ave: m.min(n as f64),
        voxel_cost: 1.0,
        p_high: 1.0,
        lambda_star: None,
        a_value: None,
        kind: FieldKind::Uniform,
    })
}

/// Gradient-magnitude sampling: p_i = min(1, kappa * |grad|_i) with kappa
/// solved by bisection (water-filling) so the expected count is M.
pub fn gms_field(grad_mag: &[f64], m: f64) -> Result<SamplingField> {
    let n = grad_mag.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty magnitude vector".into()));
    }
    if !(m > 0.0) || m > n as f64 {
        return Err(Error::InvalidArgument(format!("M = {m} outside (0, N]")));
    }
    let total: f64 = grad_mag.iter().sum();
    let positive = grad_mag.iter().filter(|&&g| g > 0.0).count();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all gradient magnitudes are zero".into()));
    }
    if (positive as f64) < m {
        return Err(Error::Infeasible(format!(
            "only {positive} voxels have positive magnitude; cannot average {m} selections"
        )));
    }
    let count = |kappa: f64| -> f64 { grad_mag.iter().map(|&g| (kappa * g).min(1.0)).sum() };
    let mut lo = 0.0;
    let mut hi = m / total;
    let mut guard = 0;
    while count(hi) < m {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Infeasible("water-filling failed to bracket".into()));
        }
    }
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count(mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Exact solve on the final segment: clamped voxels contribute 1 each.
    let mut kappa = hi;
    let clamped: f64 = grad_mag.iter().filter(|&&g| kappa * g >= 1.0).count() as f64;
    let free_sum: f64 = grad_mag
        .iter()
        .filter(|&&g| g > 0.0 && kappa * g < 1.0)
        .sum();
    if free_sum > 0.0 {
        let exact = (m - clamped) / free_sum;
        if (count(exact) - m).abs() <= (count(kappa) - m).abs() {
            kappa = exact;
        }
    }
    let residual = (count(kappa) - m).abs();
    if residual > CONSTRAINT_REL_TOL * m {
        return Err(Error::Infeasible(format!("gms residual {residual}")));
    }
    Ok(SamplingField {
        p: grad_mag.iter().map(|&g| (kappa * g).min(1.0)).collect(),
        c_ave: m,
        voxel_cost: 1.0,
        p_high: 1.0,
        lambda_star: None,
        a_value: None,
        kind: FieldKind::GradientMagnitude,
    })
}

/// Convex combination p = beta * a + (1 - beta) * b.
pub fn mix_fields(a: &SamplingField, b: &SamplingField, beta: f64) -> Result<SamplingField> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "field length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0,1]")));
    }
    let p: Vec<f64> = a
        .p
        .iter()
        .zip(&b.p)
        .map(|(&pa, &pb)| beta * pa + (1.0 - beta) * pb)
        .collect();
    Ok(SamplingField {
        c_ave: beta * a.c_ave + (1.0 - beta) * b.c_ave,
        voxel_cost: a.voxel_cost,
        p_high: a.p_high.max(b.p_high),
        lambda_star: None,
        a_value: None,
        kind: FieldKind::Mixed,
        p,
    })
}

/// Deterministic selection of the M highest scores; ties break toward the
/// lower index.
pub fn topk_field(scores: &[f64], m: usize) -> Result<SamplingField> {
    let n = scores.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("M = {m} outside [1, {n}]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut p = vec![0.0; n];
    for &i in &order[..m] {
        p[i] = 1.0;
    }
    Ok(SamplingField {
        p,
        c_ave: m as f64,
        voxel_cost: 1.0,
        p_high: 1.0,
        lambda_star: None,
        a_value: None,
        kind: FieldKind::TopK,
    })
}

/// Per-level cap on voxel probabilities: min(1, 10 M / N) at the finest
/// level, min(1, 3 M / N) at every coarser level.
pub fn heuristic_ph(level: usize, m: f64, n_level: usize) -> Result<f64> {
    if level == 0 {
        return Err(Error::InvalidArgument("levels are 1-based".into()));
    }
    if !(m > 0.0) || n_level == 0 {
        return Err(Error::InvalidArgument(format!(
            "need positive M and N, got M={m}, N={n_level}"
        )));
    }
    let factor = if level == 1 { 10.0 } else { 3.0 };
    Ok((factor * m / n_level as f64).min(1.0))
}
