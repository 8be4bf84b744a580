//! Empirical checks on the distillation-regularised gradient: variance and
//! covariance traces, the alignment condition between the reward gradient
//! and the KL gradient, Chebyshev sample counts, and smoothness probes.
//!
//! Vector variances are reported as traces of the sample covariance
//! (unbiased, `n - 1` denominator). The KL gradient is a deterministic
//! function of the parameters, so its sample variance and its covariance
//! with the reward gradient are zero by construction; the second-moment
//! columns (`E||g||^2` and `E||g - d||^2`) carry the alignment effect.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{EnvSpec, PublicStateSet};
use crate::error::{config, Result};
use crate::nn::ParamVector;
use crate::policy::{Action, ActionDist, DistributionBatch, Policy};
use crate::reinforce::{collect_trajectories, policy_gradient};

/// Centered second-order statistics of paired gradient samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub var_j: f64,
    pub var_kl: f64,
    pub cov: f64,
    /// Trace variance of `g - k`, computed from the differences directly.
    pub var_prime_direct: f64,
    /// `var_j + var_kl - 2 cov`.
    pub var_prime_reconstructed: f64,
}

impl Decomposition {
    /// `|direct - reconstructed| / max(|direct|, |reconstructed|)`, 0 when both vanish.
    pub fn identity_residual(&self) -> f64 {
        let scale = self.var_prime_direct.abs().max(self.var_prime_reconstructed.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.var_prime_direct - self.var_prime_reconstructed).abs() / scale
        }
    }
}

fn mean_vector(samples: &[ParamVector]) -> ParamVector {
    // Running update: exact when all samples are equal.
    let mut m = samples[0].clone();
    for (i, s) in samples.iter().enumerate().skip(1) {
        let delta = s.sub(&m);
        m.axpy(1.0 / (i + 1) as f64, &delta);
    }
    m
}

/// Sample variance/covariance traces for paired reward-gradient samples
/// `g_i` and KL-gradient samples `k_i`.
pub fn decompose(g: &[ParamVector], k: &[ParamVector]) -> Result<Decomposition> {
    if g.len() < 2 || g.len() != k.len() {
        return config("decomposition needs at least two paired samples");
    }
    let dim = g[0].len();
    if g.iter().chain(k).any(|v| v.len() != dim) {
        return config("gradient samples differ in length");
    }
    let n = g.len() as f64;
    let gm = mean_vector(g);
    let km = mean_vector(k);
    let diffs: Vec<ParamVector> = g.iter().zip(k).map(|(a, b)| a.sub(b)).collect();
    let dm = mean_vector(&diffs);
    let (mut var_j, mut var_kl, mut cov, mut var_prime) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..g.len() {
        for c in 0..dim {
            let a = g[i].0[c] - gm.0[c];
            let b = k[i].0[c] - km.0[c];
            let d = diffs[i].0[c] - dm.0[c];
            var_j += a * a;
            var_kl += b * b;
            cov += a * b;
            var_prime += d * d;
        }
    }
    let denom = n - 1.0;
    let (var_j, var_kl, cov) = (var_j / denom, var_kl / denom, cov / denom);
    Ok(Decomposition {
        var_j,
        var_kl,
        cov,
        var_prime_direct: var_prime / denom,
        var_prime_reconstructed: var_j + var_kl - 2.0 * cov,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub round: usize,
    pub n_samples: usize,
    pub param_count: usize,
    /// Trace of the sample covariance of single-trajectory reward gradients.
    pub var_j: f64,
    /// `var_j / param_count`.
    pub var_j_per_coord: f64,
    pub var_kl: f64,
    pub cov: f64,
    pub var_prime_direct: f64,
    pub var_prime_reconstructed: f64,
    pub identity_residual: f64,
    /// `E||g||^2` and `E||g - d||^2` over the same samples.
    pub second_moment_j: f64,
    pub second_moment_prime: f64,
    pub mean_grad_j_norm: f64,
    pub kl_grad_norm: f64,
    pub kl_loss: f64,
    /// Cosine between the mean reward gradient and the KL gradient (0 if either vanishes).
    pub cos_angle: f64,
    /// `||grad KL|| / ||mean grad J||` (infinite when the reward gradient vanishes).
    pub norm_ratio: f64,
    /// `cos > ratio / 2`.
    pub condition_holds: bool,
    /// Set when the mean reward gradient is zero and the angle is undefined.
    pub condition_vacuous: bool,
}

/// The alignment condition `cos(angle) > ||d|| / (2 ||g||)` between a
/// mean reward gradient `g` and the KL gradient `d`.
/// Returns `(cos, ratio, holds, vacuous)`.
pub fn angle_condition(g: &ParamVector, d: &ParamVector) -> (f64, f64, bool, bool) {
    let gn = g.norm();
    let dn = d.norm();
    if gn == 0.0 {
        return (0.0, f64::INFINITY, false, true);
    }
    let cos = if dn == 0.0 { 0.0 } else { (g.dot(d) / (gn * dn)).clamp(-1.0, 1.0) };
    let ratio = dn / gn;
    (cos, ratio, cos > 0.5 * ratio, false)
}

/// Draws `n_samples` single-trajectory reward-gradient estimates at the
/// current parameters and compares them against the KL gradient toward
/// `consensus`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_variance<R: Rng + ?Sized>(
    policy: &Policy,
    env: &EnvSpec,
    public: &PublicStateSet,
    consensus: &DistributionBatch,
    gamma: f64,
    n_samples: usize,
    round: usize,
    rng: &mut R,
) -> Result<VarianceReport> {
    if n_samples < 2 {
        return config("gradient variance needs at least two samples");
    }
    let (kl_loss, kl_grad) = policy.kl_batch_loss(public, consensus)?;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let traj = collect_trajectories(policy, env, 1, rng)?;
        samples.push(policy_gradient(policy, &traj, gamma, false)?);
    }
    report_from_samples(&samples, &kl_grad, kl_loss, round)
}

/// Builds a [`VarianceReport`] from reward-gradient samples and a fixed KL gradient.
pub fn report_from_samples(
    samples: &[ParamVector],
    kl_grad: &ParamVector,
    kl_loss: f64,
    round: usize,
) -> Result<VarianceReport> {
    let kl_samples = vec![kl_grad.clone(); samples.len()];
    let dec = decompose(samples, &kl_samples)?;
    let mean_g = mean_vector(samples);
    let n = samples.len() as f64;
    let second_moment_j = samples.iter().map(|s| s.dot(s)).sum::<f64>() / n;
    let second_moment_prime = samples
        .iter()
        .map(|s| {
            let d = s.sub(kl_grad);
            d.dot(&d)
        })
        .sum::<f64>()
        / n;
    let (cos_angle, norm_ratio, condition_holds, condition_vacuous) = angle_condition(&mean_g, kl_grad);
    let param_count = kl_grad.len();
    Ok(VarianceReport {
        round,
        n_samples: samples.len(),
        param_count,
        var_j: dec.var_j,
        var_j_per_coord: dec.var_j / param_count as f64,
        var_kl: dec.var_kl,
        cov: dec.cov,
        var_prime_direct: dec.var_prime_direct,
        var_prime_reconstructed: dec.var_prime_reconstructed,
        identity_residual: dec.identity_residual(),
        second_moment_j,
        second_moment_prime,
        mean_grad_j_norm: mean_g.norm(),
        kl_grad_norm: kl_grad.norm(),
        kl_loss,
        cos_angle,
        norm_ratio,
        condition_holds,
        condition_vacuous,
    })
}

/// Samples needed so that `P(|g_hat - E g| >= eps) <= delta` by Chebyshev:
/// `ceil(variance / (delta * eps^2))`.
pub fn chebyshev_samples(variance: f64, eps: f64, delta: f64) -> Result<u64> {
    if !(eps > 0.0) || !(delta > 0.0) {
        return config("epsilon and delta must be positive");
    }
    if !(variance >= 0.0) || !variance.is_finite() {
        return config("variance must be finite and non-negative");
    }
    Ok((variance / (delta * eps * eps)).ceil() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessProbe {
    pub n_pairs: usize,
    pub radius: f64,
    /// Largest observed `||grad KL(theta') - grad KL(theta)|| / ||theta' - theta||`.
    pub lipschitz_estimate: f64,
    pub lipschitz_mean: f64,
    /// Largest observed `||grad log pi(a|s)||`.
    pub g_estimate: f64,
    /// Largest observed finite-difference Hessian-vector norm of `log pi`.
    pub m_estimate: f64,
    /// `G (2 + ln |A|)` using the empirical `G`.
    pub kl_bound: f64,
    /// `R_max / (1 - gamma)^2 (G^2 + M)` using the empirical `G`, `M`.
    pub j_bound: f64,
    /// Ratio of every pair, in sampling order.
    pub ratios: Vec<f64>,
}

impl SmoothnessProbe {
    pub fn within_kl_bound(&self) -> bool {
        self.lipschitz_estimate <= self.kl_bound
    }
}

pub struct ProbeSettings {
    pub n_pairs: usize,
    pub radius: f64,
    pub gamma: f64,
    pub r_max: f64,
    /// Step for finite-difference Hessian-vector products.
    pub hvp_step: f64,
    /// Public states used for the (costlier) Hessian estimate.
    pub hvp_states: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { n_pairs: 200, radius: 1e-2, gamma: 0.99, r_max: 1.0, hvp_step: 1e-4, hvp_states: 16 }
    }
}

fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ParamVector {
    let mut v = ParamVector((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let norm = v.norm();
    v.scale(1.0 / norm);
    v
}

/// Actions at which score norms are evaluated: every action for categorical
/// heads, `mu` and `mu +/- sigma` for Gaussian heads.
fn probe_actions(policy: &Policy, state: &[f64]) -> Result<Vec<Action>> {
    Ok(match policy.action_distribution(state)? {
        ActionDist::Categorical(p) => (0..p.len()).map(Action::Discrete).collect(),
        ActionDist::Gaussian { mean, var } => {
            let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            vec![
                Action::Continuous(mean.clone()),
                Action::Continuous(mean.iter().zip(&sd).map(|(m, s)| m + s).collect()),
                Action::Continuous(mean.iter().zip(&sd).map(|(m, s)| m - s).collect()),
            ]
        }
    })
}

fn max_score_norm(policy: &Policy, public: &PublicStateSet) -> Result<f64> {
    let mut g = 0.0f64;
    for s in public.rows() {
        for a in probe_actions(policy, s)? {
            g = g.max(policy.log_prob_grad(s, &a)?.norm());
        }
    }
    Ok(g)
}

/// Probes the smoothness of the KL gradient around policies produced by `factory`.
pub fn lipschitz_probe<R, F>(
    mut factory: F,
    public: &PublicStateSet,
    consensus: &DistributionBatch,
    settings: &ProbeSettings,
    rng: &mut R,
) -> Result<SmoothnessProbe>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<Policy>,
{
    if settings.n_pairs == 0 {
        return config("lipschitz probe needs at least one pair");
    }
    if !(settings.radius > 0.0) || !settings.radius.is_finite() {
        return config("probe radius must be positive");
    }
    if !(settings.hvp_step > 0.0) {
        return config("hessian step must be positive");
    }
    let mut ratios = Vec::with_capacity(settings.n_pairs);
    let mut g_est = 0.0f64;
    let mut m_est = 0.0f64;
    let mut action_count = 2usize;
    for _ in 0..settings.n_pairs {
        let base = factory(rng)?;
        action_count = base.action_dim();
        let theta = base.params();
        let u = random_unit(theta.len(), rng);
        let mut moved = base.clone();
        let mut theta2 = theta.clone();
        theta2.axpy(settings.radius, &u);
        moved.set_params(theta2)?;
        let step = moved.params().sub(&theta).norm();
        if step == 0.0 {
            return config("probe pair collapsed to a single point");
        }
        let (_, g1) = base.kl_batch_loss(public, consensus)?;
        let (_, g2) = moved.kl_batch_loss(public, consensus)?;
        ratios.push(g2.sub(&g1).norm() / step);

        g_est = g_est.max(max_score_norm(&base, public)?).max(max_score_norm(&moved, public)?);

        let mut nudged = base.clone();
        let mut theta_h = theta.clone();
        theta_h.axpy(settings.hvp_step, &u);
        nudged.set_params(theta_h)?;
        let h = nudged.params().sub(&theta).norm();
        if h > 0.0 {
            for s in public.rows().take(settings.hvp_states) {
                for a in probe_actions(&base, s)? {
                    let d = nudged.log_prob_grad(s, &a)?.sub(&base.log_prob_grad(s, &a)?);
                    m_est = m_est.max(d.norm() / h);
                }
            }
        }
    }
    let lipschitz_estimate = ratios.iter().cloned().fold(0.0, f64::max);
    let lipschitz_mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let kl_bound = g_est * (2.0 + (action_count as f64).ln());
    let j_bound = settings.r_max / (1.0 - settings.gamma).powi(2) * (g_est * g_est + m_est);
    Ok(SmoothnessProbe {
        n_pairs: settings.n_pairs,
        radius: settings.radius,
        lipschitz_estimate,
        lipschitz_mean,
        g_estimate: g_est,
        m_estimate: m_est,
        kl_bound,
        j_bound,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector(v.to_vec())
    }

    #[test]
    fn chebyshev_cases() {
        assert_eq!(chebyshev_samples(0.0, 0.1, 0.1).unwrap(), 0);
        assert_eq!(chebyshev_samples(1.0, 0.1, 0.1).unwrap(), 1000);
        assert_eq!(chebyshev_samples(2.0, 0.5, 0.2).unwrap(), 2 * chebyshev_samples(1.0, 0.5, 0.2).unwrap());
        assert!(chebyshev_samples(1.0, 0.0, 0.1).is_err());
        assert!(chebyshev_samples(1.0, 0.1, -1.0).is_err());
    }

    #[test]
    fn decomposition_identity_on_small_sample() {
        let g = vec![pv(&[1.0, 2.0]), pv(&[3.0, -1.0]), pv(&[0.5, 0.5])];
        let k = vec![pv(&[0.2, 0.1]), pv(&[0.4, -0.3]), pv(&[0.0, 0.3])];
        let d = decompose(&g, &k).unwrap();
        assert!(d.identity_residual() < 1e-12);
        assert!(d.var_j >= 0.0 && d.var_kl >= 0.0);
        assert!(d.cov.abs() <= (d.var_j * d.var_kl).sqrt() + 1e-12);
    }

    #[test]
    fn constant_kl_gradient_has_zero_variance_and_covariance() {
        let g = vec![pv(&[1.0, 2.0]), pv(&[3.0, -1.0]), pv(&[0.5, 0.5])];
        let k = vec![pv(&[0.2, 0.1]); 3];
        let d = decompose(&g, &k).unwrap();
        assert_eq!(d.var_kl, 0.0);
        assert_eq!(d.cov, 0.0);
    }

    #[test]
    fn angle_condition_cases() {
        let (cos, ratio, holds, vacuous) = angle_condition(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.0]));
        assert_eq!((cos, ratio, holds, vacuous), (1.0, 0.5, true, false));
        let (_, _, holds, _) = angle_condition(&pv(&[1.0, 0.0]), &pv(&[3.0, 0.0]));
        assert!(!holds);
        let (_, _, holds, vacuous) = angle_condition(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0]));
        assert!(!holds && vacuous);
        let (cos, _, holds, _) = angle_condition(&pv(&[1.0, 1.0]), &pv(&[0.0, 0.0]));
        assert!(cos == 0.0 && !holds);
    }

    #[test]
    fn decompose_rejects_bad_input() {
        assert!(decompose(&[pv(&[1.0])], &[pv(&[1.0])]).is_err());
        assert!(decompose(&[pv(&[1.0]), pv(&[2.0])], &[pv(&[1.0])]).is_err());
    }
}
