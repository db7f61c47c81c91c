//! Diagonal-Gaussian policy head and affine value head over the shared
//! latent feature. Standard deviations are state-independent and clamped to
//! [1e-3, 2] after exponentiation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::Affine;

pub const STD_MIN: f64 = 1e-3;
pub const STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite input")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
}

/// Affine mean head plus per-dimension log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub mean: Affine,
    pub log_std: Vec<f64>,
}

impl PolicyParams {
    pub fn init<R: Rng>(feature_dim: usize, action_dim: usize, init_std: f64, rng: &mut R) -> Self {
        PolicyParams {
            mean: Affine::init_uniform(action_dim, feature_dim, 1.0, rng),
            log_std: vec![init_std.ln(); action_dim],
        }
    }

    pub fn zeros(feature_dim: usize, action_dim: usize) -> Self {
        PolicyParams {
            mean: Affine::zeros(action_dim, feature_dim),
            log_std: vec![0.0; action_dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.mean.out_dim()
    }

    /// Clamped standard deviations.
    pub fn stds(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp().clamp(STD_MIN, STD_MAX)).collect()
    }

    /// True where the clamp is inactive, i.e. the std still responds to its
    /// log-std parameter.
    pub fn std_active(&self) -> Vec<bool> {
        self.log_std
            .iter()
            .map(|l| {
                let s = l.exp();
                s > STD_MIN && s < STD_MAX
            })
            .collect()
    }
}

/// Affine value head: feature -> scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub head: Affine,
}

impl ValueParams {
    pub fn init<R: Rng>(feature_dim: usize, rng: &mut R) -> Self {
        ValueParams {
            head: Affine::init_uniform(1, feature_dim, 1.0, rng),
        }
    }

    pub fn zeros(feature_dim: usize) -> Self {
        ValueParams {
            head: Affine::zeros(1, feature_dim),
        }
    }
}

/// One sampled action with the log-probability it was drawn at.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

fn check_finite(xs: &[f64]) -> Result<(), PolicyError> {
    if xs.iter().any(|v| !v.is_finite()) {
        Err(PolicyError::NonFinite)
    } else {
        Ok(())
    }
}

pub fn mean_action(feature: &[f64], params: &PolicyParams) -> Result<Vec<f64>, PolicyError> {
    check_finite(feature)?;
    if feature.len() != params.mean.in_dim() {
        return Err(PolicyError::DimMismatch {
            expected: params.mean.in_dim(),
            got: feature.len(),
        });
    }
    let mut mu = vec![0.0; params.action_dim()];
    params.mean.forward(feature, &mut mu);
    Ok(mu)
}

/// Samples from the diagonal Gaussian; `deterministic` returns the mean
/// (evaluation mode) with its own log-density.
pub fn act(
    feature: &[f64],
    params: &PolicyParams,
    rng: &mut ChaCha8Rng,
    deterministic: bool,
) -> Result<ActionSample, PolicyError> {
    let mu = mean_action(feature, params)?;
    let stds = params.stds();
    let action: Vec<f64> = if deterministic {
        mu.clone()
    } else {
        mu.iter()
            .zip(&stds)
            .map(|(m, s)| {
                // Box-Muller on two uniform draws
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                m + s * z
            })
            .collect()
    };
    let log_prob = log_prob_given_mean(&action, &mu, &stds);
    Ok(ActionSample { action, log_prob })
}

fn log_prob_given_mean(action: &[f64], mu: &[f64], stds: &[f64]) -> f64 {
    action
        .iter()
        .zip(mu)
        .zip(stds)
        .map(|((a, m), s)| {
            let z = (a - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * LN_2PI
        })
        .sum()
}

/// Exact diagonal-Gaussian log-density of `action` under the policy.
pub fn log_prob_of(action: &[f64], feature: &[f64], params: &PolicyParams) -> Result<f64, PolicyError> {
    check_finite(action)?;
    if action.len() != params.action_dim() {
        return Err(PolicyError::DimMismatch {
            expected: params.action_dim(),
            got: action.len(),
        });
    }
    let mu = mean_action(feature, params)?;
    Ok(log_prob_given_mean(action, &mu, &params.stds()))
}

/// Differential entropy of the diagonal Gaussian:
/// sum_i (0.5 ln(2 pi e) + ln sigma_i).
pub fn entropy(params: &PolicyParams) -> f64 {
    params
        .stds()
        .iter()
        .map(|s| 0.5 * (LN_2PI + 1.0) + s.ln())
        .sum()
}

/// Affine value prediction.
pub fn value_of(feature: &[f64], params: &ValueParams) -> Result<f64, PolicyError> {
    check_finite(feature)?;
    if feature.len() != params.head.in_dim() {
        return Err(PolicyError::DimMismatch {
            expected: params.head.in_dim(),
            got: feature.len(),
        });
    }
    let mut v = [0.0];
    params.head.forward(feature, &mut v);
    Ok(v[0])
}

/// Gradient bundle for one log-probability evaluation.
pub struct LogProbGrads {
    /// d logp / d mu_i
    pub dmu: Vec<f64>,
    /// d logp / d log_std_i (zero where the std clamp is active)
    pub dlog_std: Vec<f64>,
}

/// Analytic gradients of `log_prob_of` with respect to the mean output and
/// the log-std parameters.
pub fn log_prob_grads(action: &[f64], mu: &[f64], params: &PolicyParams) -> LogProbGrads {
    let stds = params.stds();
    let active = params.std_active();
    let mut dmu = vec![0.0; mu.len()];
    let mut dlog_std = vec![0.0; mu.len()];
    for i in 0..mu.len() {
        let s = stds[i];
        let z = (action[i] - mu[i]) / s;
        dmu[i] = z / s;
        dlog_std[i] = if active[i] { z * z - 1.0 } else { 0.0 };
    }
    LogProbGrads { dmu, dlog_std }
}

/// d entropy / d log_std_i (1 where the clamp is inactive, else 0).
pub fn entropy_grads(params: &PolicyParams) -> Vec<f64> {
    params
        .std_active()
        .iter()
        .map(|a| if *a { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_params(feature_dim: usize, action_dim: usize) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        PolicyParams::init(feature_dim, action_dim, 0.3, &mut rng)
    }

    #[test]
    fn deterministic_mode_returns_mean() {
        let params = test_params(4, 3);
        let feature = [0.3, -0.2, 0.5, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = act(&feature, &params, &mut rng, true).unwrap();
        let mu = mean_action(&feature, &params).unwrap();
        assert_eq!(sample.action, mu);
    }

    #[test]
    fn sampling_reproducible_under_seed() {
        let params = test_params(4, 3);
        let feature = [0.3, -0.2, 0.5, 1.0];
        let a = act(&feature, &params, &mut ChaCha8Rng::seed_from_u64(9), false).unwrap();
        let b = act(&feature, &params, &mut ChaCha8Rng::seed_from_u64(9), false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn near_zero_variance_concentrates_on_mean() {
        let mut params = test_params(4, 3);
        for l in params.log_std.iter_mut() {
            *l = -20.0; // clamped to STD_MIN
        }
        let feature = [0.3, -0.2, 0.5, 1.0];
        let mu = mean_action(&feature, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = act(&feature, &params, &mut rng, false).unwrap();
        for (a, m) in s.action.iter().zip(&mu) {
            assert!((a - m).abs() < 0.01);
        }
    }

    #[test]
    fn empirical_mean_matches_head_mean() {
        let params = test_params(4, 3);
        let feature = [0.3, -0.2, 0.5, 1.0];
        let mu = mean_action(&feature, &params).unwrap();
        let stds = params.stds();
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sums = vec![0.0; 3];
        for _ in 0..n {
            let s = act(&feature, &params, &mut rng, false).unwrap();
            for (acc, a) in sums.iter_mut().zip(&s.action) {
                *acc += a;
            }
        }
        for i in 0..3 {
            let emp = sums[i] / n as f64;
            let bound = 3.0 * stds[i] / (n as f64).sqrt();
            assert!((emp - mu[i]).abs() < bound, "dim {i}: {} vs {}", emp, mu[i]);
        }
    }

    #[test]
    fn log_prob_at_mean_unit_std() {
        let mut params = PolicyParams::zeros(2, 12);
        for l in params.log_std.iter_mut() {
            *l = 0.0;
        }
        let feature = [0.0, 0.0];
        let mu = mean_action(&feature, &params).unwrap();
        let lp = log_prob_of(&mu, &feature, &params).unwrap();
        assert!((lp - (-(12.0 / 2.0) * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn one_sigma_offset_costs_half() {
        let mut params = PolicyParams::zeros(2, 12);
        for l in params.log_std.iter_mut() {
            *l = 0.0;
        }
        let feature = [0.0, 0.0];
        let mut action = mean_action(&feature, &params).unwrap();
        let base = log_prob_of(&action, &feature, &params).unwrap();
        action[3] += 1.0;
        let shifted = log_prob_of(&action, &feature, &params).unwrap();
        assert!((base - shifted - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_per_dimension_oracle() {
        let params = test_params(4, 3);
        let feature = [0.3, -0.2, 0.5, 1.0];
        let action = [0.1, -0.4, 0.9];
        let lp = log_prob_of(&action, &feature, &params).unwrap();
        let mu = mean_action(&feature, &params).unwrap();
        let stds = params.stds();
        let mut oracle = 0.0;
        for i in 0..3 {
            let var = stds[i] * stds[i];
            let diff = action[i] - mu[i];
            oracle += -(diff * diff) / (2.0 * var)
                - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        }
        assert!((lp - oracle).abs() < 1e-12);
    }

    #[test]
    fn sample_log_prob_consistent_with_recompute() {
        let params = test_params(4, 3);
        let feature = [0.3, -0.2, 0.5, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = act(&feature, &params, &mut rng, false).unwrap();
            let lp = log_prob_of(&s.action, &feature, &params).unwrap();
            assert!((s.log_prob - lp).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_entropy_closed_form() {
        let mut params = PolicyParams::zeros(2, 12);
        for l in params.log_std.iter_mut() {
            *l = 0.0;
        }
        let expect = 12.0 * 0.5 * (LN_2PI + 1.0);
        assert!((entropy(&params) - expect).abs() < 1e-12);
    }

    #[test]
    fn doubling_std_adds_log_two_per_dim() {
        let mut params = PolicyParams::zeros(2, 12);
        for l in params.log_std.iter_mut() {
            *l = (0.5f64).ln();
        }
        let before = entropy(&params);
        for l in params.log_std.iter_mut() {
            *l += (2.0f64).ln();
        }
        let after = entropy(&params);
        assert!((after - before - 12.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_finite_at_clamp_floor() {
        let mut params = PolicyParams::zeros(2, 12);
        for l in params.log_std.iter_mut() {
            *l = -1e9;
        }
        assert!(entropy(&params).is_finite());
    }

    #[test]
    fn entropy_monotone_per_dimension() {
        let mut params = PolicyParams::zeros(2, 3);
        for l in params.log_std.iter_mut() {
            *l = -1.0;
        }
        let base = entropy(&params);
        for i in 0..3 {
            let mut p = params.clone();
            p.log_std[i] += 0.1;
            assert!(entropy(&p) > base);
        }
    }

    #[test]
    fn value_head_oracle() {
        let mut params = ValueParams::zeros(3);
        assert_eq!(value_of(&[0.0; 3], &params).unwrap(), 0.0);
        // identity-slice weights select one feature entry
        *params.head.w.at_mut(0, 1) = 1.0;
        assert_eq!(value_of(&[5.0, 7.0, 9.0], &params).unwrap(), 7.0);
        // dense oracle
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ValueParams::init(3, &mut rng);
        let feature = [0.2, -1.0, 0.7];
        let v = value_of(&feature, &params).unwrap();
        let mut oracle = params.head.b[0];
        for (i, f) in feature.iter().enumerate() {
            oracle += params.head.w.at(0, i) * f;
        }
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one_monte_carlo() {
        // 2-dim reduction, importance estimate with uniform proposal over
        // +-6 sigma box
        let mut params = PolicyParams::zeros(1, 2);
        params.log_std = vec![(0.5f64).ln(), (1.5f64).ln()];
        let feature = [0.0];
        let half = [6.0 * 0.5, 6.0 * 1.5];
        let volume = 4.0 * half[0] * half[1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let a = [rng.gen_range(-half[0]..half[0]), rng.gen_range(-half[1]..half[1])];
            acc += log_prob_of(&a, &feature, &params).unwrap().exp();
        }
        let integral = acc / n as f64 * volume;
        assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
    }

    #[test]
    fn rejects_non_finite_feature() {
        let params = test_params(2, 2);
        assert!(matches!(
            act(&[f64::NAN, 0.0], &params, &mut ChaCha8Rng::seed_from_u64(0), false),
            Err(PolicyError::NonFinite)
        ));
    }
}
