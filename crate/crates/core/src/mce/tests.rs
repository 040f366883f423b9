use super::*;
use crate::lqg::{riccati_backward, rollout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn double_integrator(step: f64, horizon: usize, noise: f64) -> DiscreteLinearModel<f64> {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, step, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.5 * step * step, step]);
    DiscreteLinearModel::time_invariant(a, b, DMatrix::identity(2, 2) * noise, step, horizon)
        .unwrap()
}

fn identity_cost(n: usize, m: usize) -> QuadraticCost<f64> {
    QuadraticCost::diagonal(DMatrix::identity(n, n), DMatrix::identity(m, m))
}

fn random_model(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    horizon: usize,
) -> DiscreteLinearModel<f64> {
    let mut mat = |r, c, s: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s));
    let a: Vec<_> = (0..horizon)
        .map(|_| DMatrix::identity(n, n) + mat(n, n, 0.3))
        .collect();
    let b: Vec<_> = (0..horizon).map(|_| mat(n, m, 1.0)).collect();
    let g: Vec<_> = (0..horizon)
        .map(|_| mat(n, 1, 0.2).column(0).into_owned())
        .collect();
    let f = mat(n, n, 0.3);
    DiscreteLinearModel::new(a, b, g, &f * f.transpose(), 1.0).unwrap()
}

fn sample_group(
    model: &DiscreteLinearModel<f64>,
    cost: &QuadraticCost<f64>,
    count: usize,
    x0_spread: f64,
    seed: u64,
) -> DemoGroup<f64> {
    let (_, policy) = gibbs_policy_lqr(model, cost).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.state_dim();
    let trajectories = (0..count)
        .map(|i| {
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-x0_spread..x0_spread));
            rollout(
                model,
                &policy,
                &x0,
                seed.wrapping_mul(1000).wrapping_add(i as u64),
                true,
            )
            .unwrap()
        })
        .collect();
    DemoGroup {
        model: model.clone(),
        trajectories,
    }
}

#[test]
fn scalar_policy_covariance() {
    let one = DMatrix::from_element(1, 1, 1.0_f64);
    let model =
        DiscreteLinearModel::time_invariant(one.clone(), one.clone(), DMatrix::zeros(1, 1), 1.0, 1)
            .unwrap();
    let (_, policy) = gibbs_policy_lqr(&model, &QuadraticCost::diagonal(one.clone(), one)).unwrap();
    assert!((policy.covariances[0][(0, 0)] - 0.5).abs() < 1e-15);
    assert!((policy.gains[0][(0, 0)] + 0.5).abs() < 1e-15);
}

#[test]
fn scaling_cost_shrinks_covariance_only() {
    let model = double_integrator(1.0, 8, 0.0);
    let cost = identity_cost(2, 1);
    let (_, base) = gibbs_policy_lqr(&model, &cost).unwrap();
    let (_, hot) = gibbs_policy_lqr(&model, &cost.scaled(7.0)).unwrap();
    for k in 0..8 {
        assert!((&base.gains[k] - &hot.gains[k]).amax() < 1e-12);
        assert!((&base.covariances[k] / 7.0 - &hot.covariances[k]).amax() < 1e-14);
    }
}

#[test]
fn gibbs_mean_matches_lqr_and_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = random_model(&mut rng, 3, 2, 4);
    let cost = identity_cost(3, 2);
    let (_, gibbs) = gibbs_policy_lqr(&model, &cost).unwrap();
    let (_, lqr) = riccati_backward(&model, &cost).unwrap();
    for k in 0..4 {
        assert!((&gibbs.gains[k] - &lqr.gains[k]).amax() < 1e-12);
        assert!((&gibbs.offsets[k] - &lqr.offsets[k]).amax() < 1e-12);
    }
    let x = DVector::from_vec(vec![0.4, -1.0, 2.0]);
    let mean = gibbs.mean(0, &x);
    let factor = crate::lqg::covariance_factor(&gibbs.covariances[0]);
    let n = 10_000;
    let mut total = DVector::zeros(2);
    for _ in 0..n {
        total += &mean + &factor * crate::lqg::standard_normal::<f64, _>(&mut rng, 2);
    }
    let sample_mean = total / n as f64;
    for i in 0..2 {
        let sigma = gibbs.covariances[0][(i, i)].sqrt();
        assert!((sample_mean[i] - mean[i]).abs() < 3.0 * sigma / (n as f64).sqrt());
    }
}

#[test]
fn constant_shift_leaves_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = random_model(&mut rng, 3, 1, 5);
    let cost = identity_cost(3, 1);
    let mut block = cost.block_matrix();
    let (_, base) =
        gibbs_policy_lqr(&model, &QuadraticCost::from_block(&block, 3).unwrap()).unwrap();
    block[(0, 0)] += 12.5;
    let (_, shifted) =
        gibbs_policy_lqr(&model, &QuadraticCost::from_block(&block, 3).unwrap()).unwrap();
    assert_eq!(base, shifted);
}

#[test]
fn causal_entropy_matches_dual_identity() {
    // Without process noise, E[Σ -log π] = E[J] - V_0(x_0).
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = random_model(&mut rng, 3, 2, 6);
    model.process_noise = DMatrix::zeros(3, 3);
    let cost = QuadraticCost::from_block(&identity_cost(3, 2).block_matrix(), 3).unwrap();
    let (value, policy) = gibbs_policy_lqr(&model, &cost).unwrap();
    let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let moments = model_moments(&model, &policy, &x0, &DMatrix::zeros(3, 3)).unwrap();
    let expected_cost = 0.5 * cost.block_matrix().component_mul(&moments.tied()).sum();
    let entropy = causal_entropy(&policy).unwrap();
    let from_dual = expected_cost - value.evaluate(0, &x0);
    assert!(
        (entropy - from_dual).abs() < 1e-8 * entropy.abs().max(1.0),
        "{entropy} vs {from_dual}"
    );
}

#[test]
fn causal_entropy_matches_sampled_log_density() {
    let model = double_integrator(1.0, 5, 0.0);
    let cost = identity_cost(2, 1);
    let group = sample_group(&model, &cost, 4000, 2.0, 6);
    let entropy = causal_entropy(&gibbs_policy_lqr(&model, &cost).unwrap().1).unwrap();
    let sampled = -causal_log_likelihood(&[group], &cost).unwrap();
    // Per-step log-density has variance 1/2; five steps over 4000 draws.
    assert!((entropy - sampled).abs() < 4.0 * (2.5_f64 / 4000.0).sqrt());
}

#[test]
fn empirical_moment_examples() {
    let zero = Trajectory::new(
        vec![0.0, 1.0, 2.0],
        vec![DVector::zeros(2); 3],
        vec![DVector::zeros(1); 2],
    )
    .unwrap();
    let m = empirical_moments(&[zero.clone()]).unwrap();
    assert_eq!(m.running[(0, 0)], 2.0);
    assert_eq!(m.running.iter().filter(|&&v| v != 0.0).count(), 1);

    let single = Trajectory::new(
        vec![0.0, 1.0],
        vec![DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2)],
        vec![DVector::zeros(1)],
    )
    .unwrap();
    let m = empirical_moments(&[single.clone()]).unwrap();
    let z = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
    assert_eq!(m.running, &z * z.transpose());

    let twice = empirical_moments(&[single.clone(), single.clone()]).unwrap();
    assert_eq!(twice.running, m.running);
    assert_eq!(twice.trajectory_count, 2);
    assert!(empirical_moments::<f64>(&[]).is_err());
    assert!(empirical_moments(&[single, zero]).is_err());
}

#[test]
fn deterministic_model_moments_equal_rollout() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = random_model(&mut rng, 3, 2, 5);
    model.process_noise = DMatrix::zeros(3, 3);
    let (_, policy) = riccati_backward(&model, &identity_cost(3, 2)).unwrap();
    let x0 = DVector::from_vec(vec![0.3, 1.0, -0.7]);
    let traj = rollout(&model, &policy, &x0, 0, false).unwrap();
    let emp = empirical_moments(&[traj]).unwrap();
    let mm = model_moments(&model, &policy, &x0, &DMatrix::zeros(3, 3)).unwrap();
    assert!((&emp.running - &mm.running).amax() < 1e-12);
    assert!((&emp.terminal - &mm.terminal).amax() < 1e-12);
}

#[test]
fn model_moments_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = random_model(&mut rng, 2, 1, 3);
    let cost = identity_cost(2, 1);
    let (_, policy) = gibbs_policy_lqr(&model, &cost).unwrap();
    let x0 = DVector::from_vec(vec![1.5, -0.5]);
    let mm = model_moments(&model, &policy, &x0, &DMatrix::zeros(2, 2)).unwrap();
    let runs: Vec<_> = (0..100_000)
        .map(|seed| rollout(&model, &policy, &x0, seed, true).unwrap())
        .collect();
    let emp = empirical_moments(&runs).unwrap();
    // 1% of the largest moment; per-entry relative error is sampling-limited
    // for entries near zero.
    let scale = mm.running.amax();
    for (a, b) in emp.running.iter().zip(mm.running.iter()) {
        assert!((a - b).abs() <= 0.01 * scale, "{a} vs {b}");
    }
}

#[test]
fn gradient_arithmetic() {
    let two = FeatureMoments {
        running: DMatrix::<f64>::identity(4, 4) * 2.0,
        terminal: DMatrix::zeros(3, 3),
        trajectory_count: 1,
    };
    let one = FeatureMoments {
        running: DMatrix::identity(4, 4),
        ..two.clone()
    };
    assert_eq!(mce_gradient(&two, &one).unwrap(), DMatrix::identity(4, 4));
    assert_eq!(mce_gradient(&two, &two).unwrap(), DMatrix::zeros(4, 4));
}

#[test]
fn dual_equals_log_likelihood_without_process_noise() {
    let model = double_integrator(1.0, 6, 0.0);
    let cost = QuadraticCost::from_block(&identity_cost(2, 1).block_matrix(), 2).unwrap();
    let group = sample_group(&model, &cost, 20, 3.0, 9);
    let a = causal_log_likelihood(std::slice::from_ref(&group), &cost).unwrap();
    let b = dual_objective(&[group], &cost).unwrap();
    assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn gradient_matches_finite_differences() {
    let model = double_integrator(1.0, 10, 0.0);
    let truth = QuadraticCost::from_block(&identity_cost(2, 1).block_matrix(), 2).unwrap();
    let groups = vec![sample_group(&model, &truth, 50, 3.0, 10)];
    let mut block = truth.block_matrix();
    block[(1, 2)] = 0.2;
    block[(2, 1)] = 0.2;
    block[(3, 3)] = 1.7;
    block[(0, 3)] = 0.1;
    block[(3, 0)] = 0.1;
    let cost = QuadraticCost::from_block(&block, 2).unwrap();
    let (_, policy) = gibbs_policy_lqr(&model, &cost).unwrap();
    let (mean, cov) = groups[0].initial_state_stats();
    let emp = empirical_moments(&groups[0].trajectories).unwrap();
    let grad = mce_gradient(&emp, &model_moments(&model, &policy, &mean, &cov).unwrap()).unwrap();
    let likelihood = |b: &DMatrix<f64>| {
        causal_log_likelihood(&groups, &QuadraticCost::from_block(b, 2).unwrap()).unwrap()
    };
    let norm = grad.norm();
    for i in 0..4 {
        for j in i..4 {
            let h = 1e-5;
            let mut up = block.clone();
            let mut down = block.clone();
            up[(i, j)] += h;
            up[(j, i)] = up[(i, j)];
            down[(i, j)] -= h;
            down[(j, i)] = down[(i, j)];
            let fd = (likelihood(&up) - likelihood(&down)) / (2.0 * h);
            let analytic = if i == j {
                -0.5 * grad[(i, j)]
            } else {
                -grad[(i, j)]
            };
            let err = (fd - analytic).abs();
            assert!(
                err <= 1e-4 * analytic.abs().max(1e-4 * norm),
                "({i},{j}): {fd} vs {analytic}"
            );
        }
    }
}

#[test]
fn truth_is_nearly_stationary() {
    let model = double_integrator(1.0, 10, 1e-4);
    let truth = QuadraticCost::from_block(&identity_cost(2, 1).block_matrix(), 2).unwrap();
    let groups = vec![sample_group(&model, &truth, 400, 3.0, 11)];
    let config = IrlConfig {
        tolerance: 1.0,
        ..IrlConfig::default()
    };
    let result = learn_cost(&groups, &config, &truth).unwrap();
    assert!(result.converged);
    assert_eq!(result.trace.len(), 1);
    assert!(result.trace[0].gradient_norm < 1.0);
}

#[test]
fn plant_and_recover_double_integrator() {
    // Slow sampling keeps the state excited to the end of the horizon, so every
    // stage gain is identifiable from 100 rollouts.
    let model = double_integrator(0.1, 10, 1e-6);
    let truth = QuadraticCost::from_block(&identity_cost(2, 1).block_matrix(), 2).unwrap();
    let groups = vec![sample_group(&model, &truth, 100, 100.0, 12)];
    let mut initial = identity_cost(2, 1);
    initial.state_weight[(0, 0)] = 0.2;
    initial.state_weight[(1, 1)] = 3.0;
    initial.control_weight[(0, 0)] = 0.5;
    let config = IrlConfig {
        tolerance: 1e-7,
        max_iterations: 20_000,
        method: GradientMethod::Lbfgs,
        ..IrlConfig::default()
    };
    let result = learn_cost(&groups, &config, &initial).unwrap();
    let (_, learned) = gibbs_policy_lqr(&model, &result.cost).unwrap();
    let (_, expert) = gibbs_policy_lqr(&model, &truth).unwrap();
    let worst = (0..10)
        .map(|k| (&learned.gains[k] - &expert.gains[k]).norm() / expert.gains[k].norm())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn frozen_features_keep_initial_weights() {
    let model = double_integrator(1.0, 6, 1e-4);
    let truth = identity_cost(2, 1);
    let groups = vec![sample_group(&model, &truth, 30, 3.0, 13)];
    let mut initial = truth.clone();
    initial.state_weight[(1, 1)] = 2.0;
    let config = IrlConfig {
        frozen: vec![2],
        max_iterations: 50,
        ..IrlConfig::default()
    };
    let result = learn_cost(&groups, &config, &initial).unwrap();
    assert!((result.cost.state_weight[(1, 1)] - 2.0).abs() < 1e-9);
    assert!(result.cost.state_weight[(0, 1)].abs() < 1e-9);
}

#[test]
fn noiseless_demonstrations_run_away() {
    // Actions that follow the mean policy exactly are explained ever better
    // as the temperature drops, so no finite M maximizes the likelihood.
    let model = double_integrator(0.1, 10, 0.0);
    let truth = identity_cost(2, 1);
    let (_, policy) = gibbs_policy_lqr(&model, &truth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let trajectories = (0..20)
        .map(|i| {
            let x0 = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            rollout(&model, &policy, &x0, i, false).unwrap()
        })
        .collect();
    let groups = vec![DemoGroup {
        model,
        trajectories,
    }];
    let config = IrlConfig {
        max_iterations: 5000,
        method: GradientMethod::Lbfgs,
        ..IrlConfig::default()
    };
    match learn_cost(&groups, &config, &truth) {
        Err(Error::Divergence { .. }) => {}
        other => panic!("expected runaway, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let bad = IrlConfig {
        learning_rate: 0.0,
        ..IrlConfig::<f64>::default()
    };
    assert!(bad.validate().is_err());
    let model = double_integrator(1.0, 3, 0.0);
    let groups = vec![sample_group(&model, &identity_cost(2, 1), 2, 1.0, 14)];
    let frozen = IrlConfig {
        frozen: vec![9],
        ..IrlConfig::default()
    };
    assert!(learn_cost(&groups, &frozen, &identity_cost(2, 1)).is_err());
    assert!(learn_cost(&[], &IrlConfig::default(), &identity_cost(2, 1)).is_err());
}
