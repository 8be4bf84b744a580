//! Central finite-difference checks for the analytic policy gradients.

use fedhpd_core::env::PublicStateSet;
use fedhpd_core::nn::{mlp_layers, Activation, ParamVector};
use fedhpd_core::policy::{softmax, Action, HeadKind, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random_policy(rng: &mut ChaCha8Rng, head: HeadKind) -> Policy {
    let acts = [Activation::Tanh, Activation::Relu];
    let depth = rng.random_range(1..=3);
    let hidden: Vec<(usize, Activation)> =
        (0..depth).map(|_| (rng.random_range(2..=8), acts[rng.random_range(0..2)])).collect();
    let out = match head {
        HeadKind::Categorical => rng.random_range(2..=4),
        HeadKind::Gaussian => rng.random_range(1..=2),
    };
    let mut p = Policy::new(head, mlp_layers(4, &hidden, out), rng).unwrap();
    let mut params = p.params();
    for v in params.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    if head == HeadKind::Gaussian {
        let n = params.len();
        for v in &mut params.as_mut_slice()[n - out..] {
            *v = rng.random_range(-1.0..0.5);
        }
    }
    p.set_params(params).unwrap();
    p
}

fn random_state(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn fd_grad(policy: &Policy, f: impl Fn(&Policy) -> f64) -> ParamVector {
    let theta = policy.params();
    let mut g = ParamVector::zeros(theta.len());
    for i in 0..theta.len() {
        let mut plus = policy.clone();
        let mut tp = theta.clone();
        tp.0[i] += H;
        plus.set_params(tp).unwrap();
        let mut minus = policy.clone();
        let mut tm = theta.clone();
        tm.0[i] -= H;
        minus.set_params(tm).unwrap();
        g.0[i] = (f(&plus) - f(&minus)) / (2.0 * H);
    }
    g
}

/// Largest coordinate error relative to the gradient's scale.
fn max_rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
    let scale = a.norm().max(b.norm()).max(1e-8);
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

#[test]
fn log_prob_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for head in [HeadKind::Categorical, HeadKind::Gaussian] {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let p = random_policy(&mut rng, head);
            let s = random_state(&mut rng);
            let a = match head {
                HeadKind::Categorical => Action::Discrete(rng.random_range(0..p.action_dim())),
                HeadKind::Gaussian => Action::Continuous((0..p.action_dim()).map(|_| rng.random_range(-2.0..2.0)).collect()),
            };
            let analytic = p.log_prob_grad(&s, &a).unwrap();
            let numeric = fd_grad(&p, |q| q.log_prob(&s, &a).unwrap());
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
        assert!(worst < 1e-4, "{head:?}: max relative error {worst}");
    }
}

#[test]
fn kl_batch_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for head in [HeadKind::Categorical, HeadKind::Gaussian] {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let p = random_policy(&mut rng, head);
            let mut other = p.clone();
            let mut theta = other.params();
            for v in theta.as_mut_slice() {
                *v += rng.random_range(-0.5..0.5);
            }
            other.set_params(theta).unwrap();
            let n = rng.random_range(1..=6);
            let states = PublicStateSet::from_rows((0..n).map(|_| random_state(&mut rng)).collect()).unwrap();
            let consensus = other.extract_batch(&states).unwrap();
            let (loss, analytic) = p.kl_batch_loss(&states, &consensus).unwrap();
            assert!(loss >= 0.0);
            let numeric = fd_grad(&p, |q| q.kl_batch_loss(&states, &consensus).unwrap().0);
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
        assert!(worst < 1e-4, "{head:?}: max relative error {worst}");
    }
}

#[test]
fn softmax_jacobian_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = softmax(&z);
        for j in 0..k {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let (pp, pm) = (softmax(&zp), softmax(&zm));
            for i in 0..k {
                let numeric = (pp[i] - pm[i]) / (2.0 * h);
                let delta = if i == j { 1.0 } else { 0.0 };
                assert!((numeric - p[i] * (delta - p[j])).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn gaussian_score_components_match_finite_differences() {
    // d log N(a; mu, exp(2 ls)) / d mu and / d ls, checked on the scalar density.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logp = |a: f64, mu: f64, ls: f64| {
        let var = (2.0 * ls).exp();
        -0.5 * (2.0 * std::f64::consts::PI).ln() - ls - (a - mu) * (a - mu) / (2.0 * var)
    };
    for _ in 0..100 {
        let (a, mu, ls) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..0.5));
        let (dmu, dls) = fedhpd_core::policy::gaussian_score_seed(&[mu], &[ls], &[a]);
        let fd_mu = (logp(a, mu + H, ls) - logp(a, mu - H, ls)) / (2.0 * H);
        let fd_ls = (logp(a, mu, ls + H) - logp(a, mu, ls - H)) / (2.0 * H);
        assert!((dmu[0] - fd_mu).abs() < 1e-6);
        assert!((dls[0] - fd_ls).abs() < 1e-6);
    }
}
