//! Linear-Gaussian estimation model behind the voxel utilities: predicted
//! error covariance of the Bayes estimator under a selection distribution,
//! and a Monte-Carlo simulation oracle validating the prediction.

use nalgebra::{Matrix6, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::utility_from_g;

/// Prior over the transform parameters plus the per-voxel linearization:
/// observing voxel i yields  v_i = vbar_i + g_i^T (theta - mu) + xi_i.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    pub mu_theta: Vector6<f64>,
    pub r_theta: Matrix6<f64>,
    pub g_list: Vec<Vector6<f64>>,
    pub sigma_xi2: f64,
}

impl LinearGaussianModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_xi2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_xi2 must be positive, got {}",
                self.sigma_xi2
            )));
        }
        let eig = ((self.r_theta + self.r_theta.transpose()) * 0.5).symmetric_eigenvalues();
        if eig.iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidArgument("prior covariance is not positive definite".into()));
        }
        Ok(())
    }
}

/// Predicted error covariance of the selection-conditioned Bayes estimator:
/// R - sum_i p_i (R g_i)(R g_i)^T / (g_i^T R g_i + sigma^2).
pub fn predicted_error_covariance(model: &LinearGaussianModel, p: &[f64]) -> Result<Matrix6<f64>> {
    if p.len() != model.g_list.len() {
        return Err(Error::InvalidArgument(format!(
            "probability vector length {} != model size {}",
            p.len(),
            model.g_list.len()
        )));
    }
    let mut cov = model.r_theta;
    for (&pi, g) in p.iter().zip(&model.g_list) {
        if pi == 0.0 {
            continue;
        }
        let rg = model.r_theta * g;
        let denom = g.dot(&rg) + model.sigma_xi2;
        cov.ger(-pi / denom, &rg, &rg, 1.0);
    }
    Ok(cov)
}

/// Sum over voxels of p_i * U_i; together with `predicted_error_covariance`
/// this realizes the identity tr(prediction) = tr(R) - sum p_i U_i.
pub fn expected_utility_reduction(model: &LinearGaussianModel, p: &[f64]) -> f64 {
    p.iter()
        .zip(&model.g_list)
        .map(|(&pi, g)| pi * utility_from_g(&model.r_theta, g, model.sigma_xi2))
        .sum()
}

/// Which conditional estimator the simulation applies to the selected voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorForm {
    /// Diagonal approximation of R_VV: the modeled assumption that voxel
    /// cross-covariances are negligible.
    Diagonal,
    /// Full covariance R_VV = G R G^T + sigma^2 I, inverted per draw.
    Full,
}

/// Monte-Carlo estimate of tr(var(theta - theta_hat)) under the model.
///
/// Per draw: theta ~ N(mu, R), xi ~ N(0, sigma^2 I), d_i ~ Bernoulli(p_i);
/// the conditional Bayes estimate is computed from the selected voxels only
/// and the squared estimation error accumulated. Draw streams are keyed by
/// (seed, draw index), so the result does not depend on scheduling.
pub fn simulate_estimation_error(
    model: &LinearGaussianModel,
    p: &[f64],
    draws: usize,
    seed: u64,
    form: EstimatorForm,
) -> Result<f64> {
    model.validate()?;
    if p.len() != model.g_list.len() {
        return Err(Error::InvalidArgument("probability vector length mismatch".into()));
    }
    if draws < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1e4 draws for a stable estimate, got {draws}"
        )));
    }
    let n = model.g_list.len();
    let chol = model
        .r_theta
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("prior covariance has no Cholesky factor".into()))?;
    let l = chol.l();
    let sigma = model.sigma_xi2.sqrt();

    // Precomputed per-voxel quantities for the diagonal estimator.
    let rg: Vec<Vector6<f64>> = model.g_list.iter().map(|g| model.r_theta * g).collect();
    let denom: Vec<f64> = model
        .g_list
        .iter()
        .zip(&rg)
        .map(|(g, rgi)| g.dot(rgi) + model.sigma_xi2)
        .collect();

    let mut total_sq = 0.0;
    for draw in 0..draws {
        let mut stream = ChaCha8Rng::seed_from_u64(rng::mix(seed, draw as u64));
        let z = Vector6::from_fn(|_, _| StandardNormal.sample(&mut stream));
        let delta = l * z; // theta - mu
        let mut selected: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            let xi: f64 = StandardNormal.sample(&mut stream);
            let d: f64 = rand::Rng::gen::<f64>(&mut stream);
            if d < p[i] {
                // Observed deviation from its mean: g^T (theta - mu) + xi.
                selected.push((i, model.g_list[i].dot(&delta) + sigma * xi));
            }
        }
        let estimate_delta = match form {
            EstimatorForm::Diagonal => {
                let mut est = Vector6::zeros();
                for &(i, v) in &selected {
                    est += rg[i] * (v / denom[i]);
                }
                est
            }
            EstimatorForm::Full => full_covariance_estimate(model, &selected),
        };
        total_sq += (delta - estimate_delta).norm_squared();
    }
    Ok(total_sq / draws as f64)
}

fn full_covariance_estimate(model: &LinearGaussianModel, selected: &[(usize, f64)]) -> Vector6<f64> {
    let m = selected.len();
    if m == 0 {
        return Vector6::zeros();
    }
    // R_VV = G R G^T + sigma^2 I over the selected rows.
    let mut rvv = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (a, &(i, _)) in selected.iter().enumerate() {
        let rgi = model.r_theta * model.g_list[i];
        for (b, &(j, _)) in selected.iter().enumerate() {
            let mut v = model.g_list[j].dot(&rgi);
            if a == b {
                v += model.sigma_xi2;
            }
            rvv[(a, b)] = v;
        }
    }
    let obs = nalgebra::DVector::<f64>::from_iterator(m, selected.iter().map(|&(_, v)| v));
    let Some(sol) = rvv.cholesky().map(|c| c.solve(&obs)) else {
        return Vector6::zeros();
    };
    let mut est = Vector6::zeros();
    for (a, &(i, _)) in selected.iter().enumerate() {
        est += (model.r_theta * model.g_list[i]) * sol[a];
    }
    est
}
