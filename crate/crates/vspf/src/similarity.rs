//! Normalized mutual information on a sampled voxel subset, computed from a
//! partial-volume joint histogram, plus its analytic gradient and a
//! Gauss-Newton curvature surrogate with respect to the transform
//! parameters.
//!
//! Each selected reference voxel maps through the rigid transform into the
//! moving grid, where its unit mass is spread over the 4x4x4 neighbours with
//! a separable Hanning-windowed sinc kernel (radius 2). Negative kernel
//! lobes are flattened to zero through a narrow C1 blend, keeping bin mass
//! nonnegative without introducing derivative kinks, and each axis is
//! renormalized so the distributed mass of a fully in-bounds sample is
//! exactly one; taps falling outside the moving grid are dropped, reducing
//! the histogram's total weight. Because bin assignments of grid voxels are
//! fixed, the histogram is differentiable in the transform through the
//! kernel weights alone.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::sampling::Selection;
use crate::transform::RigidMap;
use crate::volume::{VectorField, Volume};

/// Intensity windows and bin count; computed once from the full-resolution
/// volumes and reused at every pyramid level.
#[derive(Debug, Clone, Copy)]
pub struct HistogramSpec {
    pub bins: usize,
    /// (min, max) intensity window of the reference image.
    pub ref_window: (f64, f64),
    /// (min, max) intensity window of the moving image.
    pub mov_window: (f64, f64),
    /// Evaluate each selected voxel at a fixed pseudo-random sub-voxel
    /// offset (with the reference intensity interpolated there) instead of
    /// its exact center.
    ///
    /// When both volumes share a voxel size, center sampling lets rigid
    /// transforms place every sample exactly on moving grid points, where
    /// partial-volume histograms become artificially crisp; NMI then has
    /// spurious grid-aligned extrema with vanishing gradients, one of them
    /// pinning the zero initialization. Jittered positions are keyed by the
    /// voxel index alone, so evaluations stay deterministic.
    pub sample_jitter: bool,
}

impl HistogramSpec {
    pub fn new(bins: usize, ref_window: (f64, f64), mov_window: (f64, f64)) -> Result<Self> {
        if bins < 8 {
            return Err(Error::InvalidArgument(format!("need at least 8 bins, got {bins}")));
        }
        Ok(HistogramSpec {
            bins,
            ref_window,
            mov_window,
            sample_jitter: false,
        })
    }

    /// Windows from the global min/max of each volume.
    pub fn from_volumes(reference: &Volume, moving: &Volume, bins: usize) -> Result<Self> {
        Self::new(bins, reference.min_max(), moving.min_max())
    }

    pub fn with_jitter(mut self) -> Self {
        self.sample_jitter = true;
        self
    }
}

const JITTER_SALT: u64 = 0x6a69_7474_6572;

/// Jitter half-width in voxels. A quarter-voxel spread is enough to
/// decorrelate sample phases (no transform can make the histogram
/// grid-crisp) while keeping the jittered objective's realization bias well
/// below the registration accuracy targets.
const JITTER_HALF_WIDTH: f64 = 0.25;

/// Sample position and reference intensity for one selected voxel: the
/// voxel center (with its stored intensity), or the jittered position with
/// the reference interpolated there.
///
/// Offsets are antithetic (x-adjacent voxel pairs take opposite offsets) so
/// the jitter field's net first moment vanishes and it exerts no
/// systematic pull on the transform. Boundary voxels keep their exact
/// centers; truncating their offsets instead would bias every boundary
/// sample inward.
#[inline]
fn sample_point(reference: &Volume, idx: usize, jitter: bool) -> ([f64; 3], f64) {
    let coords = reference.coords_of(idx);
    let p = reference.voxel_center(coords[0], coords[1], coords[2]);
    if !jitter || coords.iter().zip(&reference.dims).any(|(&c, &n)| c == 0 || c + 1 >= n) {
        return (p, reference.data[idx]);
    }
    let sign = if idx % 2 == 0 { 1.0 } else { -1.0 };
    let pair = (idx / 2) as u64;
    let mut q = p;
    for (a, v) in q.iter_mut().enumerate() {
        *v += sign
            * (2.0 * crate::rng::unit_f64(JITTER_SALT, 3 * pair + a as u64) - 1.0)
            * JITTER_HALF_WIDTH
            * reference.spacing[a];
    }
    let value = reference.sample_cubic(q).unwrap_or(reference.data[idx]);
    (q, value)
}

/// B x B partial-volume co-occurrence table. Row index = reference bin,
/// column index = moving bin.
#[derive(Debug, Clone)]
pub struct JointHistogram {
    pub bins: usize,
    /// Row-major B*B table of nonnegative weights.
    pub table: Vec<f64>,
    pub ref_marginal: Vec<f64>,
    pub mov_marginal: Vec<f64>,
    pub total_weight: f64,
    pub ref_window: (f64, f64),
    pub mov_window: (f64, f64),
}

impl JointHistogram {
    /// Builds a histogram from a raw table, recomputing marginals and total.
    pub fn from_table(table: Vec<f64>, bins: usize, ref_window: (f64, f64), mov_window: (f64, f64)) -> Result<Self> {
        if table.len() != bins * bins {
            return Err(Error::InvalidArgument(format!(
                "table length {} != bins^2 {}",
                table.len(),
                bins * bins
            )));
        }
        let mut ref_marginal = vec![0.0; bins];
        let mut mov_marginal = vec![0.0; bins];
        let mut total = 0.0;
        for a in 0..bins {
            for b in 0..bins {
                let w = table[a * bins + b];
                ref_marginal[a] += w;
                mov_marginal[b] += w;
                total += w;
            }
        }
        Ok(JointHistogram {
            bins,
            table,
            ref_marginal,
            mov_marginal,
            total_weight: total,
            ref_window,
            mov_window,
        })
    }

    /// Diagnostic CSV dump: B rows of B comma-separated weights.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in 0..self.bins {
            for b in 0..self.bins {
                if b > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}", self.table[a * self.bins + b]));
            }
            out.push('\n');
        }
        out
    }
}

/// NMI and the entropies (nats) it is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityValue {
    pub nmi: f64,
    pub entropy_ref: f64,
    pub entropy_mov: f64,
    pub entropy_joint: f64,
}

/// Value, gradient and Gauss-Newton curvature from one fused pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: SimilarityValue,
    pub gradient: Vector6<f64>,
    pub hessian: Matrix6<f64>,
    pub histogram: JointHistogram,
}

// ---------------------------------------------------------------------------
// Hanning-windowed sinc kernel, radius 2.
// ---------------------------------------------------------------------------

const KERNEL_RADIUS: i64 = 2;

/// Width of the quadratic blend that flattens negative kernel lobes.
/// Raw values below zero map to zero, values above the band pass through
/// (shifted by band/2), and the quadratic bridge keeps the composite C1 so
/// finite differences of the histogram agree with the analytic derivative.
const SOFT_CLAMP_BAND: f64 = 0.01;

#[inline]
fn soft_clamp(w: f64) -> (f64, f64) {
    if w <= 0.0 {
        (0.0, 0.0)
    } else if w < SOFT_CLAMP_BAND {
        (w * w / (2.0 * SOFT_CLAMP_BAND), w / SOFT_CLAMP_BAND)
    } else {
        (w - 0.5 * SOFT_CLAMP_BAND, 1.0)
    }
}

/// The four per-axis taps around a continuous moving-grid coordinate:
/// grid indices base-1 .. base+2, nonnegative weights renormalized to sum
/// one, with weight derivatives w.r.t. the continuous coordinate.
#[derive(Debug, Clone, Copy)]
struct AxisTaps {
    base: i64,
    w: [f64; 4],
    dw: [f64; 4],
}

fn axis_taps(u: f64) -> AxisTaps {
    let b = u.floor();
    let f = u - b;
    // The windowed sinc is non-positive on [1, 2], so the two outer taps of
    // the radius-2 window always flatten to zero weight and only the inner
    // pair (distances f and 1-f) carries mass. Both inner values come from
    // a single sin_cos through angle identities.
    let half_pi = std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    let (s_half, c_half) = (half_pi * f).sin_cos(); // sin, cos of pi f / 2
    let sin_pf = 2.0 * s_half * c_half;
    let cos_pf = 1.0 - 2.0 * s_half * s_half;

    // Inner tap at distance d = f (derivative w.r.t. f has sign +1).
    let (sinc1, dsinc1) = if f < 1e-5 {
        let pf = pi * f;
        (1.0 - pf * pf / 6.0, -pi * pi * f / 3.0)
    } else {
        let s = sin_pf / (pi * f);
        (s, (cos_pf - s) / f)
    };
    let hann1 = 0.5 * (1.0 + c_half);
    let dhann1 = -0.25 * pi * s_half;
    let (c1, dc1) = soft_clamp(sinc1 * hann1);
    let w1 = c1;
    let dw1 = dc1 * (dsinc1 * hann1 + sinc1 * dhann1);

    // Inner tap at distance d = 1 - f (derivative w.r.t. f has sign -1);
    // sin(pi (1-f)) = sin(pi f), cos(pi (1-f)) = -cos(pi f),
    // cos(pi (1-f) / 2) = sin(pi f / 2).
    let g = 1.0 - f;
    let (sinc2, dsinc2) = if g < 1e-5 {
        let pg = pi * g;
        (1.0 - pg * pg / 6.0, -pi * pi * g / 3.0)
    } else {
        let s = sin_pf / (pi * g);
        (s, (-cos_pf - s) / g)
    };
    let hann2 = 0.5 * (1.0 + s_half);
    let dhann2 = -0.25 * pi * c_half;
    let (c2, dc2) = soft_clamp(sinc2 * hann2);
    let w2 = c2;
    let dw2 = -dc2 * (dsinc2 * hann2 + sinc2 * dhann2);

    let s_sum = w1 + w2;
    let ds_sum = dw1 + dw2;
    debug_assert!(s_sum > 0.5, "kernel sum {s_sum} at f={f}");
    let inv = 1.0 / s_sum;
    AxisTaps {
        base: b as i64,
        w: [0.0, w1 * inv, w2 * inv, 0.0],
        dw: [
            0.0,
            (dw1 * s_sum - w1 * ds_sum) * inv * inv,
            (dw2 * s_sum - w2 * ds_sum) * inv * inv,
            0.0,
        ],
    }
}

// ---------------------------------------------------------------------------
// Intensity binning.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct BinScale {
    lo: f64,
    scale: f64,
    top: f64,
}

impl BinScale {
    fn new(window: (f64, f64), bins: usize) -> Self {
        let span = window.1 - window.0;
        let scale = if span > 0.0 {
            (bins - 1) as f64 / span
        } else {
            0.0
        };
        BinScale {
            lo: window.0,
            scale,
            top: (bins - 1) as f64,
        }
    }

    /// Continuous bin coordinate in [0, bins-1].
    #[inline]
    fn coord(&self, v: f64) -> f64 {
        ((v - self.lo) * self.scale).clamp(0.0, self.top)
    }

    /// Nearest-bin index for a moving-grid sample.
    #[inline]
    fn nearest(&self, v: f64) -> usize {
        (self.coord(v) + 0.5).floor().min(self.top) as usize
    }

    /// Linear spread over the two adjacent bins for a reference sample.
    #[inline]
    fn linear(&self, v: f64, bins: usize) -> (usize, f64, f64) {
        let z = self.coord(v);
        let a0 = (z.floor() as usize).min(bins - 2);
        let fa = z - a0 as f64;
        (a0, 1.0 - fa, fa)
    }
}

// ---------------------------------------------------------------------------
// Histogram accumulation.
// ---------------------------------------------------------------------------

struct SampleTaps {
    taps: [AxisTaps; 3],
    lo: [usize; 3],
    hi: [usize; 3],
}

/// Taps for one mapped sample, or None when every tap is out of bounds.
fn sample_taps(mov: &Volume, mapped: [f64; 3]) -> Option<SampleTaps> {
    let mut taps = [axis_taps(0.0); 3];
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let u = (mapped[a] - mov.origin[a]) / mov.spacing[a];
        if !u.is_finite() {
            return None;
        }
        let t = axis_taps(u);
        // Only slots 1 and 2 (grid indices base and base + 1) carry weight.
        let n = mov.dims[a] as i64;
        if t.base + 1 < 0 || t.base > n - 1 {
            return None;
        }
        lo[a] = if t.base < 0 { 2 } else { 1 };
        hi[a] = if t.base + 1 > n - 1 { 1 } else { 2 };
        taps[a] = t;
    }
    Some(SampleTaps { taps, lo, hi })
}

/// Builds the partial-volume joint histogram for the selected reference
/// voxels mapped through `map` into the moving volume.
pub fn joint_histogram(
    reference: &Volume,
    moving: &Volume,
    map: &RigidMap,
    sel: &Selection,
    spec: &HistogramSpec,
) -> Result<JointHistogram> {
    if sel.indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    let bins = spec.bins;
    let ref_scale = BinScale::new(spec.ref_window, bins);
    let mov_scale = BinScale::new(spec.mov_window, bins);
    let mut table = vec![0.0f64; bins * bins];
    let mut total = 0.0f64;
    let stride_y = moving.dims[0];
    let stride_z = moving.dims[0] * moving.dims[1];

    for &idx in &sel.indices {
        let (point, ref_value) = sample_point(reference, idx as usize, spec.sample_jitter);
        let mapped = map.map_point(point);
        let Some(st) = sample_taps(moving, mapped) else {
            continue;
        };
        let (a0, wa0, wa1) = ref_scale.linear(ref_value, bins);
        let row0 = a0 * bins;
        let row1 = row0 + bins;
        for kz in st.lo[2]..=st.hi[2] {
            let wz = st.taps[2].w[kz];
            if wz == 0.0 {
                continue;
            }
            let gz = (st.taps[2].base - KERNEL_RADIUS + 1 + kz as i64) as usize;
            for ky in st.lo[1]..=st.hi[1] {
                let wyz = st.taps[1].w[ky] * wz;
                if wyz == 0.0 {
                    continue;
                }
                let gy = (st.taps[1].base - KERNEL_RADIUS + 1 + ky as i64) as usize;
                let row_base = gy * stride_y + gz * stride_z;
                for kx in st.lo[0]..=st.hi[0] {
                    let wk = st.taps[0].w[kx] * wyz;
                    if wk == 0.0 {
                        continue;
                    }
                    let gx = (st.taps[0].base - KERNEL_RADIUS + 1 + kx as i64) as usize;
                    let m = moving.data[gx + row_base];
                    let b = mov_scale.nearest(m);
                    table[row0 + b] += wa0 * wk;
                    table[row1 + b] += wa1 * wk;
                    total += wk;
                }
            }
        }
    }

    if !(total > 0.0) {
        return Err(Error::ZeroInBoundsMass);
    }
    JointHistogram::from_table(table, bins, spec.ref_window, spec.mov_window)
}

/// Entropies in nats with the 0 log 0 = 0 convention; nmi = (Hr + Hm) / Hj.
/// A degenerate single-cell histogram (joint entropy 0) is defined as the
/// perfectly dependent limit nmi = 2.
pub fn nmi(hist: &JointHistogram) -> Result<SimilarityValue> {
    if !(hist.total_weight > 0.0) {
        return Err(Error::InvalidArgument("histogram has no mass".into()));
    }
    let inv = 1.0 / hist.total_weight;
    let h = |w: f64| -> f64 {
        let p = w * inv;
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    let entropy_ref: f64 = hist.ref_marginal.iter().map(|&w| h(w)).sum();
    let entropy_mov: f64 = hist.mov_marginal.iter().map(|&w| h(w)).sum();
    let entropy_joint: f64 = hist.table.iter().map(|&w| h(w)).sum();
    let nmi = if entropy_joint > 0.0 {
        (entropy_ref + entropy_mov) / entropy_joint
    } else {
        2.0
    };
    Ok(SimilarityValue {
        nmi,
        entropy_ref,
        entropy_mov,
        entropy_joint,
    })
}

/// Convenience: histogram + NMI in one call.
pub fn nmi_value(
    reference: &Volume,
    moving: &Volume,
    map: &RigidMap,
    sel: &Selection,
    spec: &HistogramSpec,
) -> Result<SimilarityValue> {
    nmi(&joint_histogram(reference, moving, map, sel, spec)?)
}

/// Fused evaluation: NMI value, analytic gradient through the kernel
/// weights, and the Gauss-Newton curvature surrogate
/// H = sum_i w g_i g_i^T with g_i = grad V(T(x_i)) * dT/dtheta and
/// w = 1 / sigma_xi^2.
pub fn evaluate(
    reference: &Volume,
    moving: &Volume,
    moving_gradient: &VectorField,
    map: &RigidMap,
    sel: &Selection,
    spec: &HistogramSpec,
    sigma_xi2: f64,
) -> Result<Evaluation> {
    let hist = joint_histogram(reference, moving, map, sel, spec)?;
    let value = nmi(&hist)?;
    let bins = spec.bins;

    // dNMI/dW_ab = (S_ab - sum_cd S_cd P_cd) / W_tot with
    // S_ab = (-(1 + ln Pr_a) - (1 + ln Pm_b) + nmi (1 + ln P_ab)) / Hj.
    let mut weight_grad = vec![0.0f64; bins * bins];
    if value.entropy_joint > 0.0 {
        let inv_total = 1.0 / hist.total_weight;
        let inv_hj = 1.0 / value.entropy_joint;
        let ln_floor = 1e-300f64;
        let ref_term: Vec<f64> = hist
            .ref_marginal
            .iter()
            .map(|&w| 1.0 + (w * inv_total).max(ln_floor).ln())
            .collect();
        let mov_term: Vec<f64> = hist
            .mov_marginal
            .iter()
            .map(|&w| 1.0 + (w * inv_total).max(ln_floor).ln())
            .collect();
        let mut s_mean = 0.0;
        for a in 0..bins {
            for b in 0..bins {
                let p = hist.table[a * bins + b] * inv_total;
                let s = (-ref_term[a] - mov_term[b] + value.nmi * (1.0 + p.max(ln_floor).ln())) * inv_hj;
                weight_grad[a * bins + b] = s;
                s_mean += s * p;
            }
        }
        for g in &mut weight_grad {
            *g = (*g - s_mean) * inv_total;
        }
    }

    let ref_scale = BinScale::new(spec.ref_window, bins);
    let mov_scale = BinScale::new(spec.mov_window, bins);
    let hess_w = 1.0 / sigma_xi2;
    let stride_y = moving.dims[0];
    let stride_z = moving.dims[0] * moving.dims[1];

    let mut gradient = Vector6::zeros();
    let mut hessian = Matrix6::zeros();

    for &idx in &sel.indices {
        let (point, ref_value) = sample_point(reference, idx as usize, spec.sample_jitter);
        let mapped = map.map_point(point);

        // Gauss-Newton term.
        if let Some(gv) = moving_gradient.sample_trilinear(mapped) {
            let jac = map.jacobian(point);
            let mut g = Vector6::zeros();
            for c in 0..6 {
                g[c] = gv[0] * jac[(0, c)] + gv[1] * jac[(1, c)] + gv[2] * jac[(2, c)];
            }
            hessian.ger(hess_w, &g, &g, 1.0);
        }

        // Kernel-weight chain for the NMI gradient.
        if value.entropy_joint <= 0.0 {
            continue;
        }
        let Some(st) = sample_taps(moving, mapped) else {
            continue;
        };
        let (a0, wa0, wa1) = ref_scale.linear(ref_value, bins);
        let row0 = a0 * bins;
        let row1 = row0 + bins;
        // Accumulate d NMI / d u (continuous moving-grid coordinate).
        let mut du = [0.0f64; 3];
        for kz in st.lo[2]..=st.hi[2] {
            let wz = st.taps[2].w[kz];
            let dz = st.taps[2].dw[kz];
            let gz = (st.taps[2].base - KERNEL_RADIUS + 1 + kz as i64) as usize;
            for ky in st.lo[1]..=st.hi[1] {
                let wy = st.taps[1].w[ky];
                let dy = st.taps[1].dw[ky];
                let gy = (st.taps[1].base - KERNEL_RADIUS + 1 + ky as i64) as usize;
                let row_base = gy * stride_y + gz * stride_z;
                for kx in st.lo[0]..=st.hi[0] {
                    let wx = st.taps[0].w[kx];
                    let dx = st.taps[0].dw[kx];
                    if wx == 0.0 && dx == 0.0 {
                        continue;
                    }
                    let gx = (st.taps[0].base - KERNEL_RADIUS + 1 + kx as i64) as usize;
                    let m = moving.data[gx + row_base];
                    let b = mov_scale.nearest(m);
                    let coef = wa0 * weight_grad[row0 + b] + wa1 * weight_grad[row1 + b];
                    if coef == 0.0 {
                        continue;
                    }
                    du[0] += coef * dx * wy * wz;
                    du[1] += coef * wx * dy * wz;
                    du[2] += coef * wx * wy * dz;
                }
            }
        }
        if du == [0.0; 3] {
            continue;
        }
        let jac = map.jacobian(point);
        for c in 0..6 {
            let mut acc = 0.0;
            for (a, &d) in du.iter().enumerate() {
                acc += d / moving.spacing[a] * jac[(a, c)];
            }
            gradient[c] += acc;
        }
    }

    Ok(Evaluation {
        value,
        gradient,
        hessian,
        histogram: hist,
    })
}

/// Analytic d NMI / d theta for a fixed selection.
pub fn nmi_gradient(
    reference: &Volume,
    moving: &Volume,
    moving_gradient: &VectorField,
    map: &RigidMap,
    sel: &Selection,
    spec: &HistogramSpec,
) -> Result<Vector6<f64>> {
    Ok(evaluate(reference, moving, moving_gradient, map, sel, spec, 1.0)?.gradient)
}

/// Gauss-Newton curvature surrogate: symmetric PSD sum of weighted outer
/// products of the per-voxel intensity-derivative chain.
pub fn gn_hessian(
    reference: &Volume,
    moving_gradient: &VectorField,
    map: &RigidMap,
    sel: &Selection,
    sigma_xi2: f64,
) -> Result<Matrix6<f64>> {
    if sel.indices.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut hessian = Matrix6::zeros();
    let w = 1.0 / sigma_xi2;
    for &idx in &sel.indices {
        let [x, y, z] = reference.coords_of(idx as usize);
        let point = reference.voxel_center(x, y, z);
        let mapped = map.map_point(point);
        let Some(gv) = moving_gradient.sample_trilinear(mapped) else {
            continue;
        };
        let jac = map.jacobian(point);
        let mut g = Vector6::zeros();
        for c in 0..6 {
            g[c] = gv[0] * jac[(0, c)] + gv[1] * jac[(1, c)] + gv[2] * jac[(2, c)];
        }
        hessian.ger(w, &g, &g, 1.0);
    }
    Ok(hessian)
}

/// The per-voxel derivative chain g_i = grad V(T(x_i)) * dT/dtheta, shared by
/// the Gauss-Newton Hessian and voxel-utility computation. None when the
/// mapped point leaves the gradient field.
pub fn voxel_g(
    moving_gradient: &VectorField,
    map: &RigidMap,
    point: [f64; 3],
) -> Option<Vector6<f64>> {
    let mapped = map.map_point(point);
    let gv = moving_gradient.sample_trilinear(mapped)?;
    let jac = map.jacobian(point);
    let mut g = Vector6::zeros();
    for c in 0..6 {
        g[c] = gv[0] * jac[(0, c)] + gv[1] * jac[(1, c)] + gv[2] * jac[(2, c)];
    }
    Some(g)
}
