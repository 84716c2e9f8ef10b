use wfdiff::blocks::{Adam, Ctx};
use wfdiff::diffusion::*;
use wfdiff::losses::NoiseNorm;
use wfdiff::tensor::gradcheck::grad_check_inputs;
use wfdiff::wavelet::{dwt2, idwt2};
use wfdiff::{Rng, Tensor};

fn desk(steps: usize) -> DiffusionSchedule {
    match steps {
        1000 => make_schedule(1000, 1e-4, 0.02).unwrap(),
        50 => ScheduleConfig::default().build().unwrap(),
        _ => make_schedule(steps, 1e-3, 0.2).unwrap(),
    }
}

#[test]
fn schedule_invariants() {
    for steps in [10, 50, 1000] {
        let s = desk(steps);
        assert_eq!(s.alpha_bar[0], 1.0);
        assert_eq!(s.sigma2[1], 0.0);
        for t in 1..=steps {
            assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0);
            if t > 1 {
                assert!(s.beta[t] > s.beta[t - 1]);
                assert!(s.sigma2[t] > 0.0 && s.sigma2[t] < 1.0);
            }
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1] && s.alpha_bar[t] > 0.0);
            assert!((s.alpha[t] + s.beta[t] - 1.0).abs() < 1e-15);
        }
    }
}

#[test]
fn alpha_bar_matches_direct_product() {
    let s = desk(10);
    let mut prod = 1.0;
    for t in 1..=10 {
        let beta = 1e-3 + (0.2 - 1e-3) * (t - 1) as f64 / 9.0;
        prod *= 1.0 - beta;
    }
    assert!((s.alpha_bar[10] - prod).abs() / prod < 1e-7);
}

#[test]
fn q_sample_limits() {
    let s = desk(1000);
    let mut rng = Rng::new(1);
    let x0 = Tensor::randn(&[3, 4, 4], &mut rng);
    let eps = Tensor::randn(&[3, 4, 4], &mut rng);
    let t = 10;
    let xt = q_sample(&x0, t, &Tensor::zeros(&[3, 4, 4]), &s).unwrap();
    assert!(xt.max_abs_diff(&x0.scale(s.alpha_bar[t].sqrt())).unwrap() < 1e-12);
    assert!(s.alpha_bar[1000] < 1e-4);
    let xt = q_sample(&x0, 1000, &eps, &s).unwrap();
    assert!(xt.max_abs_diff(&eps).unwrap() < 0.05);
}

/// Per-element moments over `n` draws of a sampler producing `[d]` vectors.
fn moments(n: usize, d: usize, mut draw: impl FnMut() -> Tensor) -> (Vec<f64>, Vec<f64>) {
    let (mut s1, mut s2) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let x = draw();
        for (i, v) in x.data().iter().enumerate() {
            s1[i] += v;
            s2[i] += v * v;
        }
    }
    let mean: Vec<f64> = s1.iter().map(|s| s / n as f64).collect();
    let var = s2.iter().zip(&mean).map(|(s, m)| s / n as f64 - m * m).collect();
    (mean, var)
}

#[test]
fn q_sample_monte_carlo_matches_marginal_and_iterated_chain() {
    let s = desk(50);
    let n = 10_000;
    let x0 = Tensor::new(&[4], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
    for t in [1, 10, 50] {
        let ab = s.alpha_bar[t];
        let mut rng = Rng::new(t as u64);
        let (mean, var) = moments(n, 4, || {
            let eps = Tensor::randn(&[4], &mut rng);
            q_sample(&x0, t, &eps, &s).unwrap()
        });
        let sd = (1.0 - ab).sqrt();
        for i in 0..4 {
            let target = ab.sqrt() * x0.data()[i];
            assert!((mean[i] - target).abs() < 4.0 * sd / (n as f64).sqrt(), "t={t} mean");
            assert!((var[i] - (1.0 - ab)).abs() / (1.0 - ab) < 0.05, "t={t} var");
        }
        // Same marginal by iterating x_k = √α_k x_{k−1} + √β_k ε_k.
        let mut rng = Rng::new(100 + t as u64);
        let (mean2, var2) = moments(n, 4, || {
            let mut x = x0.clone();
            for k in 1..=t {
                let e = Tensor::randn(&[4], &mut rng);
                x = x.zip_map(&e, "step", |x, e| s.alpha[k].sqrt() * x + s.beta[k].sqrt() * e).unwrap();
            }
            x
        });
        for i in 0..4 {
            assert!((mean2[i] - ab.sqrt() * x0.data()[i]).abs() < 4.0 * sd / (n as f64).sqrt());
            assert!((var2[i] - (1.0 - ab)).abs() / (1.0 - ab) < 0.05);
        }
    }
}

#[test]
fn exact_noise_inverts_at_every_step() {
    for steps in [10, 50, 1000] {
        let s = desk(steps);
        let mut rng = Rng::new(3);
        let x0 = Tensor::randn(&[2, 4, 4], &mut rng);
        for t in 1..=steps {
            let eps = Tensor::randn(&[2, 4, 4], &mut rng);
            let xt = q_sample(&x0, t, &eps, &s).unwrap();
            let den = StoredNoise(eps);
            let pred = den.predict_noise(&xt, &xt, t, &s).unwrap();
            let x0_hat = predict_x0(&xt, &pred, t, &s).unwrap();
            assert!(x0_hat.max_abs_diff(&x0).unwrap() < 1e-5, "T={steps} t={t}");
        }
    }
}

#[test]
fn oracle_reverse_chain_recovers_x0() {
    let s = desk(10);
    let mut rng = Rng::new(4);
    let x0 = Tensor::randn(&[3, 6, 6], &mut rng);
    let oracle = ResidualOracle { x0: x0.clone() };
    let out = sample(&x0, &oracle, &s, &mut Rng::new(5)).unwrap();
    assert!(out.max_abs_diff(&x0).unwrap() < 1e-3);
}

#[test]
fn sampling_is_bitwise_deterministic() {
    let s = desk(10);
    let mut rng = Rng::new(6);
    let net = UNetDenoiser::new(&DenoiserConfig::default(), 3, &mut rng).unwrap();
    let cond = Tensor::randn(&[3, 8, 6], &mut rng);
    let a = sample(&cond, &net, &s, &mut Rng::new(9)).unwrap();
    let b = sample(&cond, &net, &s, &mut Rng::new(9)).unwrap();
    let c = sample(&cond, &net, &s, &mut Rng::new(10)).unwrap();
    assert_eq!(a.shape(), cond.shape());
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

#[test]
fn frdam_with_zero_residuals_is_plain_idwt() {
    let s = desk(10);
    let mut rng = Rng::new(7);
    let img = Tensor::rand_uniform(&[3, 8, 12], 0.0, 1.0, &mut rng);
    let bands = dwt2(&img).unwrap();
    let out = frdam_adjust(&bands, &ZeroResidual, &ZeroResidual, &s, &Rng::new(8)).unwrap();
    assert_eq!(out.shape(), &[3, 8, 12]);
    assert!(out.max_abs_diff(&idwt2(&bands).unwrap()).unwrap() < 1e-3);

    let net = UNetDenoiser::new(&DenoiserConfig::default(), 3, &mut rng).unwrap();
    let hnet = UNetDenoiser::new(&DenoiserConfig::default(), 9, &mut rng).unwrap();
    let a = frdam_adjust(&bands, &net, &hnet, &s, &Rng::new(8)).unwrap();
    let b = frdam_adjust(&bands, &net, &hnet, &s, &Rng::new(8)).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn training_losses() {
    let s = desk(10);
    let mut rng = Rng::new(11);
    let est = Tensor::randn(&[3, 4, 4], &mut rng);
    let truth = Tensor::randn(&[3, 4, 4], &mut rng);
    let pair = BandPair::new(est, truth).unwrap();
    let oracle = ResidualOracle { x0: pair.residual() };
    let l = diffusion_loss(&pair, &oracle, &s, &mut Rng::new(1), NoiseNorm::L1).unwrap();
    assert!(l < 1e-9);

    let mut net = UNetDenoiser::new(&DenoiserConfig::default(), 3, &mut rng).unwrap();
    let before = net.params.clone();
    let mut opt = Adam::new(1e-3);
    let l = train_step(&pair, &mut net, &mut opt, &s, &mut Rng::new(2), NoiseNorm::L1).unwrap();
    assert!(l.is_finite() && l > 0.0);
    assert_ne!(before, net.params);
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    let s = desk(10);
    let mut rng = Rng::new(12);
    let cfg = DenoiserConfig {
        base_channels: 4,
        levels: 2,
        time_dim: 4,
    };
    let net = UNetDenoiser::new(&cfg, 1, &mut rng).unwrap();
    let x = Tensor::randn(&[1, 4, 4], &mut rng);
    let cond = Tensor::randn(&[1, 4, 4], &mut rng);
    let mut inputs = vec![x];
    inputs.extend(net.params.iter().map(|(_, t)| t.clone()));
    let report = grad_check_inputs(
        |v| {
            let ctx = Ctx::from_vars(v[0].tape(), v[1..].to_vec());
            let out = net.forward(&ctx, v[0], ctx.input(cond.clone()), 3, &s)?;
            Ok(out.square().sum())
        },
        &inputs,
        1e-3,
        1e-3,
    )
    .unwrap();
    assert!(report.passed, "max rel err {}", report.max_rel_error);
}
