//! Acceptance suite: one test per criterion, each printing a
//! `CRITERION <n> PASS` line on success. The heavy criteria share trained
//! world-model fixtures through a process-wide cache.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use dwmlab::agents::{
    train_offline_agent, AgentConfig, AlgoKind, EvalContext, WmSource, WorldModel,
};
use dwmlab::dataset::{compute_rtg, generate_dataset, BuildOptions, OfflineDataset};
use dwmlab::dwm::{
    cosine_schedule, forward_noise, guided_epsilon, posterior_step, stride_steps, train_dwm,
    DiffusionWorldModel, DwmConfig,
};
use dwmlab::envsim::{EnvSpec, Tier};
use dwmlab::evalharness::{
    compute_anchors, median, wm_per_step_state_errors, wm_prediction_error, Anchors,
};
use dwmlab::onestep::{train_onestep, OneStepConfig, OneStepModel};
use dwmlab::rngutil::{rng_from, standard_normal_vec};
use dwmlab::substrate::{check_gradient, ema_update, EmaTracker};
use dwmlab::value_target::{
    diff_mve_target, lambda_return_target, pql_rewards, rtg_relabel, ImaginedSeq, ModelSource,
};
use rand::Rng;
use std::sync::OnceLock;

const ORACLE_TOL: f64 = 1e-10;

fn random_seq<R: Rng>(rng: &mut R, n: usize, d: usize) -> ImaginedSeq {
    ImaginedSeq {
        rewards: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        states: (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        source: ModelSource::Dwm,
        g_eval: 0.8,
    }
}

// ---------------------------------------------------------------- fixtures

struct MediumFixture {
    dataset: OfflineDataset,
    dwm: DiffusionWorldModel,
    onestep: OneStepModel,
    anchors: Anchors,
    env: EnvSpec,
}

fn dwm_train_config() -> DwmConfig {
    DwmConfig {
        hidden: vec![128, 128],
        lr: 3e-4,
        batch_size: 64,
        x0_clip: 4.0,
        ..DwmConfig::default()
    }
}

static MEDIUM: OnceLock<MediumFixture> = OnceLock::new();

fn medium_fixture() -> &'static MediumFixture {
    MEDIUM.get_or_init(|| {
        let env = EnvSpec::point_mass();
        let dataset =
            generate_dataset(&env, Tier::Medium, 150, 4242, &BuildOptions::default()).unwrap();
        let dwm = train_dwm(&dataset, &dwm_train_config(), 7, 30_000, 1_000_000, |_| {}).unwrap();
        let onestep = train_onestep(
            &dataset,
            &OneStepConfig {
                hidden: vec![128, 128],
                lr: 1e-3,
                batch_size: 128,
            },
            7,
            3_000,
            1_000_000,
            |_| {},
        )
        .unwrap();
        let anchors = compute_anchors(&env, 200, dwmlab::cli::ANCHOR_SEED).unwrap();
        MediumFixture {
            dataset,
            dwm,
            onestep,
            anchors,
            env,
        }
    })
}

struct ReplayFixture {
    dataset: OfflineDataset,
    dwm: DiffusionWorldModel,
}

static REPLAY: OnceLock<ReplayFixture> = OnceLock::new();

/// The inference-ratio study runs on the noisier medium-replay tier, where
/// prediction error is dominated by shared model/data stochasticity rather
/// than by the per-path sampling noise, matching the regime of the original
/// inference-ratio observation.
fn replay_fixture() -> &'static ReplayFixture {
    REPLAY.get_or_init(|| {
        let env = EnvSpec::point_mass();
        let dataset = generate_dataset(&env, Tier::MediumReplay, 300, 4243, &BuildOptions::default())
            .unwrap();
        let dwm = train_dwm(&dataset, &dwm_train_config(), 9, 30_000, 1_000_000, |_| {}).unwrap();
        ReplayFixture { dataset, dwm }
    })
}

// ------------------------------------------------- criterion 1: oracles

#[test]
fn criterion_1_equation_oracles() {
    let mut rng = rng_from(0xC1, 0);

    // compute_rtg vs direct power-sum
    for _ in 0..20 {
        let rewards: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = rng.gen_range(0..12);
        let (gamma, scale): (f64, f64) = (0.99, 2.5);
        let direct: f64 = rewards[t..]
            .iter()
            .enumerate()
            .map(|(h, r)| gamma.powi(h as i32) * r)
            .sum::<f64>()
            / scale;
        assert!((compute_rtg(&rewards, t, gamma, scale) - direct).abs() < ORACLE_TOL);
    }

    // expectile loss vs branch oracle
    for _ in 0..20 {
        let u: f64 = rng.gen_range(-2.0..2.0);
        let tau: f64 = rng.gen_range(0.5..1.0);
        let oracle = if u < 0.0 {
            (1.0 - tau) * u * u
        } else {
            tau * u * u
        };
        assert!((dwmlab::agents::expectile_loss(u, tau) - oracle).abs() < ORACLE_TOL);
    }

    // H-step expansion vs loop oracle
    for _ in 0..20 {
        let seq = random_seq(&mut rng, 6, 3);
        let h = rng.gen_range(1..=6);
        let gamma: f64 = 0.97;
        let boot = |s: &[f64]| s.iter().sum::<f64>() + 0.5;
        let mut oracle = 0.0;
        for j in 0..h {
            oracle += gamma.powi(j as i32) * seq.rewards[j];
        }
        oracle += gamma.powi(h as i32) * boot(&seq.states[h - 1]);
        let got = diff_mve_target(&seq, h, gamma, boot).unwrap();
        assert!((got - oracle).abs() < ORACLE_TOL);
    }

    // lambda return vs forward n-step mixture oracle
    for _ in 0..20 {
        let seq = random_seq(&mut rng, 6, 2);
        let h = rng.gen_range(1..=6);
        let (gamma, lambda): (f64, f64) = (0.99, rng.gen_range(0.0..1.0));
        let boot = |s: &[f64]| s[0] * 0.7 - s[1];
        let g_n = |n: usize| -> f64 {
            let mut acc = 0.0;
            for j in 0..n {
                acc += gamma.powi(j as i32) * seq.rewards[j];
            }
            acc + gamma.powi(n as i32) * boot(&seq.states[n - 1])
        };
        let mut oracle = 0.0;
        for n in 1..h {
            oracle += (1.0 - lambda) * lambda.powi(n as i32 - 1) * g_n(n);
        }
        oracle += lambda.powi(h as i32 - 1) * g_n(h);
        let got = lambda_return_target(&seq, h, gamma, lambda, boot).unwrap();
        assert!((got - oracle).abs() < ORACLE_TOL, "{got} vs {oracle}");
    }

    // penalized rewards vs O(m^2) scan oracle
    for _ in 0..20 {
        let seqs: Vec<ImaginedSeq> = (0..4).map(|_| random_seq(&mut rng, 5, 3)).collect();
        let kappa = rng.gen_range(0.0..1.0);
        let got = pql_rewards(&seqs, kappa).unwrap();
        for j in 0..5 {
            let mean = seqs.iter().map(|s| s.rewards[j]).sum::<f64>() / 4.0;
            let mut worst = 0.0f64;
            for a in 0..4 {
                for b in 0..4 {
                    let dr = seqs[a].rewards[j] - seqs[b].rewards[j];
                    let ds: f64 = seqs[a].states[j]
                        .iter()
                        .zip(seqs[b].states[j].iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    worst = worst.max(dr * dr + ds);
                }
            }
            assert!((got[j] - (mean - kappa * worst)).abs() < ORACLE_TOL);
        }
    }

    // RTG relabel vs direct formula, plus the lift property
    for _ in 0..20 {
        let r = rng.gen_range(0.0..1.0);
        let g_next = rng.gen_range(0.0..2.0);
        let v = rng.gen_range(-1.0..3.0);
        let gamma: f64 = 0.99;
        let oracle = r + gamma * if v > g_next { v } else { g_next };
        let got = rtg_relabel(r, g_next, v, gamma);
        assert!((got - oracle).abs() < ORACLE_TOL);
        assert!(got >= r + gamma * g_next - ORACLE_TOL);
    }

    // posterior x0 inversion: exact eps recovers x0 through the final step
    let schedule = cosine_schedule(5);
    for _ in 0..20 {
        let x0: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let k = rng.gen_range(1..=5);
        let eps = standard_normal_vec(&mut rng, 10);
        let xk = forward_noise(&x0, k, &eps, &schedule).unwrap();
        let out = posterior_step(&xk, &eps, 0, k, &schedule, 0.0, 0.0, &mut rng);
        for (o, x) in out.iter().zip(x0.iter()) {
            assert!((o - x).abs() < ORACLE_TOL, "k={k}");
        }
    }

    // EMA vs hand recursion
    for _ in 0..20 {
        let w = rng.gen_range(0.0..1.0);
        let mut tracker = EmaTracker::new(vec![rng.gen_range(-1.0..1.0); 3], w).unwrap();
        let mut oracle = tracker.shadow.clone();
        for _ in 0..5 {
            let live: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ema_update(&mut tracker, &live).unwrap();
            for (o, l) in oracle.iter_mut().zip(live.iter()) {
                *o = *o + w * (l - *o);
            }
        }
        for (a, b) in tracker.shadow.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < ORACLE_TOL);
        }
    }
    // two-step hand value
    let mut t = EmaTracker::new(vec![0.0], 0.005).unwrap();
    ema_update(&mut t, &[1.0]).unwrap();
    ema_update(&mut t, &[1.0]).unwrap();
    assert!((t.shadow[0] - 0.009975).abs() < ORACLE_TOL);

    println!("CRITERION 1 PASS - equation oracles match to 1e-10 on 20+ instances each");
}

// ---------------------------------------------- criterion 2: reductions

#[test]
fn criterion_2_reductions() {
    let mut rng = rng_from(0xC2, 0);

    // lambda = 1 target identical to the plain expansion
    for _ in 0..20 {
        let seq = random_seq(&mut rng, 7, 3);
        let h = rng.gen_range(1..=7);
        let boot = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
        let a = lambda_return_target(&seq, h, 0.99, 1.0, boot).unwrap();
        let b = diff_mve_target(&seq, h, 0.99, boot).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    // kappa = 0 penalized rewards identical to the mean
    for _ in 0..20 {
        let seqs: Vec<ImaginedSeq> = (0..3).map(|_| random_seq(&mut rng, 5, 2)).collect();
        let got = pql_rewards(&seqs, 0.0).unwrap();
        for j in 0..5 {
            let mean = seqs.iter().map(|s| s.rewards[j]).sum::<f64>() / 3.0;
            assert!((got[j] - mean).abs() < 1e-12);
        }
    }

    // guidance branches at omega 0 and 1
    let ds = generate_dataset(
        &EnvSpec::point_mass(),
        Tier::Medium,
        4,
        0xC2,
        &BuildOptions::default(),
    )
    .unwrap();
    let mut init = rng_from(0xC2, 1);
    let model = DiffusionWorldModel::new(
        ds.layout(8),
        DwmConfig {
            hidden: vec![16],
            ..DwmConfig::default()
        },
        ds.normalizer.clone(),
        &mut init,
    )
    .unwrap();
    let x = standard_normal_vec(&mut rng, model.layout.dim());
    let params = model.sampling_params();
    let cond = model.net.forward(params, &x, 3, 0.7, 0.0);
    let uncond = model.net.forward(params, &x, 3, 0.0, 1.0);
    assert_eq!(guided_epsilon(&model.net, params, &x, 3, 0.7, 1.0), cond);
    assert_eq!(guided_epsilon(&model.net, params, &x, 3, 0.7, 0.0), uncond);

    // full-ratio stride sampler equals the explicit full reverse process
    // bit-exactly under a shared rng stream
    let mut full_model = model.clone();
    full_model.config.infer_ratio = 1.0;
    let traj = &ds.trajectories[0];
    let (s, a) = (&traj.states[3], &traj.actions[3]);
    assert_eq!(stride_steps(5, 1.0), vec![1, 2, 3, 4, 5]);
    let via_ratio = full_model
        .sample_window(s, a, 0.8, &mut rng_from(0xC2, 9))
        .unwrap();
    let explicit: Vec<usize> = (1..=5).collect();
    let via_explicit = full_model
        .sample_window_with_steps(&explicit, s, a, 0.8, &mut rng_from(0xC2, 9), None)
        .unwrap();
    assert_eq!(via_ratio, via_explicit);

    println!("CRITERION 2 PASS - lambda/kappa/guidance/stride reductions hold");
}

// ------------------------------------- criterion 3: inpainting fixedness

#[test]
fn criterion_3_inpainting_fixedness() {
    let ds = generate_dataset(
        &EnvSpec::point_mass(),
        Tier::Medium,
        6,
        0xC3,
        &BuildOptions::default(),
    )
    .unwrap();
    let mut init = rng_from(0xC3, 1);
    let model = DiffusionWorldModel::new(
        ds.layout(8),
        DwmConfig {
            hidden: vec![24],
            ..DwmConfig::default()
        },
        ds.normalizer.clone(),
        &mut init,
    )
    .unwrap();
    let steps = stride_steps(model.config.k_steps, model.config.infer_ratio);
    let mut rng = rng_from(0xC3, 2);
    for i in 0..1000 {
        let ti = (i * 7) % ds.trajectories.len();
        let t = (i * 13) % (ds.counts.episode_len - 8);
        let traj = &ds.trajectories[ti];
        let (s, a) = (&traj.states[t], &traj.actions[t]);
        let mut expected = model.normalizer.apply_obs(s);
        expected.extend_from_slice(a);
        let mut trace = Vec::new();
        model
            .sample_window_with_steps(&steps, s, a, 0.8, &mut rng, Some(&mut trace))
            .unwrap();
        assert_eq!(trace.len(), steps.len() + 1);
        for x in &trace {
            assert_eq!(&x[..expected.len()], expected.as_slice(), "sample {i}");
        }
    }
    println!("CRITERION 3 PASS - conditioned coordinates bit-exact in 1000 samples at every step");
}

// --------------------------------------- criterion 4: gradient checks

#[test]
fn criterion_4_gradient_checks() {
    let rel_tol = 1e-4;
    let ds = generate_dataset(
        &EnvSpec::point_mass(),
        Tier::Medium,
        6,
        0xC4,
        &BuildOptions::default(),
    )
    .unwrap();

    // diffusion noise-prediction loss
    {
        let mut init = rng_from(0xC4, 1);
        let model = DiffusionWorldModel::new(
            ds.layout(8),
            DwmConfig {
                hidden: vec![10],
                ..DwmConfig::default()
            },
            ds.normalizer.clone(),
            &mut init,
        )
        .unwrap();
        let mut rng = rng_from(0xC4, 2);
        for point in 0..10 {
            let windows = ds.sample_windows(8, 2, &mut rng).unwrap();
            let batch = model.prepare_batch(&windows, &mut rng);
            let mut grad = vec![0.0; model.params.len()];
            model.loss_and_grad(&model.params, &batch, &mut grad);
            let worst = check_gradient(
                |p| {
                    let mut scratch = vec![0.0; p.len()];
                    model.loss_and_grad(p, &batch, &mut scratch)
                },
                &model.params,
                &grad,
                1e-5,
                1e-3,
            );
            assert!(worst < rel_tol, "diffusion loss point {point}: {worst}");
        }
    }

    // gaussian NLL (both nets)
    {
        let mut init = rng_from(0xC4, 3);
        let model = OneStepModel::new(
            4,
            2,
            &OneStepConfig {
                hidden: vec![10],
                ..OneStepConfig::default()
            },
            ds.normalizer.clone(),
            &mut init,
        );
        let mut rng = rng_from(0xC4, 4);
        for point in 0..10 {
            let idx = ds.sample_transitions(3, &mut rng);
            let batch = model.batch_from(&ds, &idx);
            let mut gm = vec![0.0; model.mean.params.len()];
            let mut gv = vec![0.0; model.variance.params.len()];
            model.nll_loss_and_grad(&model.mean.params, &model.variance.params, &batch, &mut gm, &mut gv);
            let w1 = check_gradient(
                |p| {
                    let mut a = vec![0.0; p.len()];
                    let mut b = vec![0.0; model.variance.params.len()];
                    model.nll_loss_and_grad(p, &model.variance.params, &batch, &mut a, &mut b)
                },
                &model.mean.params,
                &gm,
                1e-6,
                1e-6,
            );
            let w2 = check_gradient(
                |p| {
                    let mut a = vec![0.0; model.mean.params.len()];
                    let mut b = vec![0.0; p.len()];
                    model.nll_loss_and_grad(&model.mean.params, p, &batch, &mut a, &mut b)
                },
                &model.variance.params,
                &gv,
                1e-6,
                1e-6,
            );
            assert!(w1 < rel_tol && w2 < rel_tol, "nll point {point}: {w1} {w2}");
        }
    }

    // critic MSE, expectile value loss, AWR, TD3+BC actor: these gradients
    // are exercised against finite differences inside the agents module's
    // unit tests with the same tolerances; re-run compact instances here.
    {
        use dwmlab::substrate::{Activation, Approximator, MlpArch, OutputActivation};
        let mut rng = rng_from(0xC4, 5);
        let q = Approximator::init(
            MlpArch::new(vec![6, 10, 1], Activation::Relu, OutputActivation::Linear),
            &mut rng,
        );
        let v = Approximator::init(
            MlpArch::new(vec![4, 10, 1], Activation::Relu, OutputActivation::Linear),
            &mut rng,
        );
        let policy = Approximator::init(
            MlpArch::new(vec![4, 10, 2], Activation::Relu, OutputActivation::Tanh),
            &mut rng,
        );
        let log_std: Vec<f64> = vec![-0.5, -0.8];
        for point in 0..10 {
            // critic MSE
            let batch: Vec<(Vec<f64>, f64)> = (0..3)
                .map(|_| {
                    (
                        (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let mut grad = vec![0.0; q.params.len()];
            for (input, y) in &batch {
                let (out, cache) = q.arch.forward_cached(&q.params, input);
                q.arch.backward(
                    &q.params,
                    &cache,
                    &[2.0 * (out[0] - y) / batch.len() as f64],
                    &mut grad,
                );
            }
            let worst = check_gradient(
                |p| {
                    batch
                        .iter()
                        .map(|(input, y)| {
                            let d = q.arch.forward(p, input)[0] - y;
                            d * d
                        })
                        .sum::<f64>()
                        / batch.len() as f64
                },
                &q.params,
                &grad,
                1e-6,
                1e-6,
            );
            assert!(worst < rel_tol, "critic point {point}: {worst}");

            // expectile value loss
            let tau = 0.7;
            let vb: Vec<(Vec<f64>, f64)> = (0..3)
                .map(|_| {
                    (
                        (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let mut grad = vec![0.0; v.params.len()];
            for (s, minq) in &vb {
                let (out, cache) = v.arch.forward_cached(&v.params, s);
                let u = minq - out[0];
                let w = if u < 0.0 { tau - 1.0f64 } else { tau }.abs();
                v.arch
                    .backward(&v.params, &cache, &[-2.0 * w * u / 3.0], &mut grad);
            }
            let worst = check_gradient(
                |p| {
                    vb.iter()
                        .map(|(s, minq)| {
                            dwmlab::agents::expectile_loss(minq - v.arch.forward(p, s)[0], tau)
                        })
                        .sum::<f64>()
                        / 3.0
                },
                &v.params,
                &grad,
                1e-6,
                1e-6,
            );
            assert!(worst < rel_tol, "expectile point {point}: {worst}");

            // AWR over [policy | log_std]
            let ab: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..3)
                .map(|_| {
                    (
                        (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect(),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect();
            let ln_tau = (2.0 * std::f64::consts::PI).ln();
            let beta = 3.0;
            let mut grad = vec![0.0; policy.params.len() + 2];
            {
                let (gm, gs) = grad.split_at_mut(policy.params.len());
                for (s, a, adv) in &ab {
                    let w = (beta * adv).exp().min(100.0);
                    let (mu, cache) = policy.arch.forward_cached(&policy.params, s);
                    let mut dmu = Vec::new();
                    for d in 0..2 {
                        let sd = log_std[d].exp();
                        let z = (a[d] - mu[d]) / sd;
                        dmu.push(-w * z / sd / 3.0);
                        gs[d] += -w * (z * z - 1.0) / 3.0;
                    }
                    policy.arch.backward(&policy.params, &cache, &dmu, gm);
                }
            }
            let mut joint = policy.params.clone();
            joint.extend_from_slice(&log_std);
            let worst = check_gradient(
                |p| {
                    let (pm, ps) = p.split_at(policy.params.len());
                    ab.iter()
                        .map(|(s, a, adv)| {
                            let w = (beta * adv).exp().min(100.0);
                            let mu = policy.arch.forward(pm, s);
                            let mut logp = 0.0;
                            for d in 0..2 {
                                let sd = ps[d].exp();
                                let z = (a[d] - mu[d]) / sd;
                                logp += -0.5 * ln_tau - ps[d] - 0.5 * z * z;
                            }
                            -w * logp
                        })
                        .sum::<f64>()
                        / 3.0
                },
                &joint,
                &grad,
                1e-6,
                1e-6,
            );
            assert!(worst < rel_tol, "awr point {point}: {worst}");

            // TD3+BC actor objective with lambda held at its base value
            let tb: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
                .map(|_| {
                    (
                        (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect(),
                    )
                })
                .collect();
            let mean_abs_q: f64 = tb
                .iter()
                .map(|(s, _)| {
                    let pi = policy.forward(s);
                    let mut qin = s.clone();
                    qin.extend(pi);
                    q.forward(&qin)[0].abs()
                })
                .sum::<f64>()
                / 3.0;
            let lambda = 2.5 / mean_abs_q;
            let mut grad = vec![0.0; policy.params.len()];
            let mut q_scratch = vec![0.0; q.params.len()];
            for (s, a) in &tb {
                let (pi, pc) = policy.arch.forward_cached(&policy.params, s);
                let mut qin = s.clone();
                qin.extend_from_slice(&pi);
                let (_, qc) = q.arch.forward_cached(&q.params, &qin);
                let gin = q
                    .arch
                    .backward(&q.params, &qc, &[-lambda / 3.0], &mut q_scratch);
                let mut dpi: Vec<f64> = gin[4..].to_vec();
                for (g, (p, a)) in dpi.iter_mut().zip(pi.iter().zip(a.iter())) {
                    *g += 2.0 * (p - a) / 3.0;
                }
                policy.arch.backward(&policy.params, &pc, &dpi, &mut grad);
            }
            let worst = check_gradient(
                |p| {
                    tb.iter()
                        .map(|(s, a)| {
                            let pi = policy.arch.forward(p, s);
                            let mut qin = s.clone();
                            qin.extend_from_slice(&pi);
                            let qv = q.forward(&qin)[0];
                            let bc: f64 = pi
                                .iter()
                                .zip(a.iter())
                                .map(|(x, y)| (x - y) * (x - y))
                                .sum();
                            -lambda * qv + bc
                        })
                        .sum::<f64>()
                        / 3.0
                },
                &policy.params,
                &grad,
                1e-6,
                1e-6,
            );
            assert!(worst < rel_tol, "td3bc actor point {point}: {worst}");
        }
    }

    println!("CRITERION 4 PASS - all training losses match finite differences at rel 1e-4");
}

// ------------------------------- criterion 5: compounding-error analog

#[test]
fn criterion_5_compounding_error() {
    let fx = medium_fixture();
    let mut onestep_ratios = Vec::new();
    let mut dwm_ratios = Vec::new();
    for seed in [1u64, 2, 3] {
        let rows = wm_per_step_state_errors(
            &WorldModel::OneStep(&fx.onestep),
            &fx.dataset,
            0.8,
            8,
            200,
            seed,
        )
        .unwrap();
        let mut s1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let mut s7: Vec<f64> = rows.iter().map(|r| r[7]).collect();
        onestep_ratios.push(median(&mut s7) / median(&mut s1));

        let rows = wm_per_step_state_errors(
            &WorldModel::Dwm(&fx.dwm),
            &fx.dataset,
            0.8,
            8,
            200,
            seed,
        )
        .unwrap();
        let mut s1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let mut s7: Vec<f64> = rows.iter().map(|r| r[7]).collect();
        dwm_ratios.push(median(&mut s7) / median(&mut s1));
    }
    let onestep_ratio = median(&mut onestep_ratios);
    let dwm_ratio = median(&mut dwm_ratios);
    assert!(
        onestep_ratio >= 3.0,
        "recursive one-step step7/step1 = {onestep_ratio:.2}, need >= 3"
    );
    assert!(
        dwm_ratio <= 1.5,
        "sequence-model step7/step1 = {dwm_ratio:.2}, need <= 1.5"
    );
    println!(
        "CRITERION 5 PASS - one-step error grows {onestep_ratio:.1}x by step 7, sequence model {dwm_ratio:.2}x"
    );
}

// --------------------------- criterion 6: horizon-robustness analog

fn agent_run_config(algo: AlgoKind, wm: WmSource, horizon: usize) -> AgentConfig {
    AgentConfig {
        horizon,
        g_eval: vec![0.8],
        batch_size: 32,
        iterations: 2500,
        eval_every: 2500,
        eval_episodes: 10,
        ..AgentConfig::for_algo(algo, wm)
    }
}

fn run_norm_return(
    fx: &MediumFixture,
    wm: WorldModel,
    algo: AlgoKind,
    source: WmSource,
    horizon: usize,
    seed: u64,
) -> f64 {
    let cfg = agent_run_config(algo, source, horizon);
    let ctx = EvalContext {
        env: fx.env.clone(),
        anchors: fx.anchors,
    };
    let out = train_offline_agent(&fx.dataset, wm, &cfg, seed, Some(&ctx)).unwrap();
    out.final_norm_return.unwrap()
}

#[test]
fn criterion_6_horizon_robustness() {
    let fx = medium_fixture();
    let seeds = [0u64, 1, 2];
    let mut o_h1 = Vec::new();
    let mut o_h7 = Vec::new();
    let mut d_h1 = Vec::new();
    let mut d_h7 = Vec::new();
    for &seed in &seeds {
        o_h1.push(run_norm_return(
            fx,
            WorldModel::OneStep(&fx.onestep),
            AlgoKind::Td3Bc,
            WmSource::OneStep,
            1,
            seed,
        ));
        o_h7.push(run_norm_return(
            fx,
            WorldModel::OneStep(&fx.onestep),
            AlgoKind::Td3Bc,
            WmSource::OneStep,
            7,
            seed,
        ));
        d_h1.push(run_norm_return(
            fx,
            WorldModel::Dwm(&fx.dwm),
            AlgoKind::Td3Bc,
            WmSource::Dwm,
            1,
            seed,
        ));
        d_h7.push(run_norm_return(
            fx,
            WorldModel::Dwm(&fx.dwm),
            AlgoKind::Td3Bc,
            WmSource::Dwm,
            7,
            seed,
        ));
    }
    let (o1, o7) = (median(&mut o_h1), median(&mut o_h7));
    let (d1, d7) = (median(&mut d_h1), median(&mut d_h7));
    println!("one-step targets: H=1 {o1:.3}, H=7 {o7:.3}; sequence targets: H=1 {d1:.3}, H=7 {d7:.3}");
    assert!(o7 < o1, "one-step H=7 ({o7:.3}) must underperform H=1 ({o1:.3})");
    assert!(
        d7 >= 0.8 * d1,
        "sequence-model H=7 ({d7:.3}) must hold >= 0.8x of H=1 ({d1:.3})"
    );
    println!("CRITERION 6 PASS - horizon 7 degrades the one-step agent but not the sequence-model agent");
}

// ----------------------------- criterion 7: inference-ratio analog

#[test]
fn criterion_7_inference_ratio() {
    let fx = replay_fixture();
    let mut errs = Vec::new();
    for r in [0.2, 0.5, 1.0] {
        let mut model = fx.dwm.clone();
        model.config.infer_ratio = r;
        let rep = wm_prediction_error(
            &WorldModel::Dwm(&model),
            &fx.dataset,
            0.8,
            8,
            200,
            0xC7,
        )
        .unwrap();
        errs.push(rep.avg_state_mse);
    }
    let (e02, e05, e10) = (errs[0], errs[1], errs[2]);
    println!("state mse: r=0.2 {e02:.5}, r=0.5 {e05:.5}, r=1.0 {e10:.5}");
    assert!(
        e02 >= 2.0 * e05,
        "single-step error {e02:.5} must be >= 2x the three-step error {e05:.5}"
    );
    assert!(
        e05 <= 1.2 * e10,
        "three-step error {e05:.5} must be within 20% of the full schedule {e10:.5}"
    );
    println!("CRITERION 7 PASS - inference ratio 0.5 is the critical ridge");
}

// --------------------------------- criterion 8: policy quality floor

#[test]
fn criterion_8_policy_floor() {
    let fx = medium_fixture();
    let span = fx.anchors.r_expert - fx.anchors.r_random;
    let behavior = (fx.dataset.mean_episode_return() - fx.anchors.r_random) / span;
    let seeds = [0u64, 1, 2];
    let mut td3bc = Vec::new();
    let mut iql = Vec::new();
    for &seed in &seeds {
        td3bc.push(run_norm_return(
            fx,
            WorldModel::Dwm(&fx.dwm),
            AlgoKind::Td3Bc,
            WmSource::Dwm,
            3,
            seed,
        ));
        iql.push(run_norm_return(
            fx,
            WorldModel::Dwm(&fx.dwm),
            AlgoKind::Iql,
            WmSource::Dwm,
            3,
            seed,
        ));
    }
    let td3bc_mean = td3bc.iter().sum::<f64>() / 3.0;
    let iql_mean = iql.iter().sum::<f64>() / 3.0;
    println!("behavior {behavior:.3}, sequence-model agents: td3bc {td3bc_mean:.3}, iql {iql_mean:.3}");
    assert!(
        td3bc_mean >= behavior,
        "td3bc mean {td3bc_mean:.3} must reach the behavior level {behavior:.3}"
    );
    assert!(
        iql_mean >= behavior,
        "iql mean {iql_mean:.3} must reach the behavior level {behavior:.3}"
    );
    println!("CRITERION 8 PASS - offline agents clear the behavior-policy floor");
}

// -------------------------------------- criterion 9: determinism

#[test]
fn criterion_9_determinism() {
    use std::fs;
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_dwmlab");
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let gen_cfg = root.join("gen.json");
    fs::write(
        &gen_cfg,
        serde_json::to_string(&serde_json::json!({
            "env": "pointmass", "tier": "medium", "episodes": 12, "seed": 9
        }))
        .unwrap(),
    )
    .unwrap();
    for name in ["a", "b"] {
        assert!(Command::new(bin)
            .args(["gen-data", "--config"])
            .arg(&gen_cfg)
            .arg("--out-dir")
            .arg(root.join(name))
            .status()
            .unwrap()
            .success());
    }
    let da = fs::read(root.join("a/pointmass-medium.dwmt1")).unwrap();
    let db = fs::read(root.join("b/pointmass-medium.dwmt1")).unwrap();
    assert_eq!(da, db, "dataset replay must be byte-identical");

    let wm_cfg = root.join("wm.json");
    fs::write(
        &wm_cfg,
        serde_json::to_string(&serde_json::json!({
            "model": "dwm",
            "dataset": root.join("a/pointmass-medium.dwmt1"),
            "iterations": 150,
            "seed": 3,
            "dwm": {"hidden": [24], "batch_size": 8}
        }))
        .unwrap(),
    )
    .unwrap();
    for name in ["wa", "wb"] {
        assert!(Command::new(bin)
            .args(["train-wm", "--config"])
            .arg(&wm_cfg)
            .arg("--out-dir")
            .arg(root.join(name))
            .status()
            .unwrap()
            .success());
    }
    let wa = fs::read(root.join("wa/wm_dwm.ckpt")).unwrap();
    let wb = fs::read(root.join("wb/wm_dwm.ckpt")).unwrap();
    assert_eq!(wa, wb, "world-model checkpoint replay must be byte-identical");

    let agent_cfg = root.join("agent.json");
    fs::write(
        &agent_cfg,
        serde_json::to_string(&serde_json::json!({
            "dataset": root.join("a/pointmass-medium.dwmt1"),
            "wm_path": root.join("wa/wm_dwm.ckpt"),
            "seed": 4,
            "anchor_episodes": 10,
            "agent": {
                "algo": "td3bc", "wm_source": "dwm", "hidden": [16],
                "batch_size": 8, "iterations": 60, "eval_every": 60,
                "eval_episodes": 2, "horizon": 3
            }
        }))
        .unwrap(),
    )
    .unwrap();
    for name in ["pa", "pb"] {
        assert!(Command::new(bin)
            .args(["train-agent", "--config"])
            .arg(&agent_cfg)
            .arg("--out-dir")
            .arg(root.join(name))
            .status()
            .unwrap()
            .success());
    }
    let pa = fs::read(root.join("pa/policy.ckpt")).unwrap();
    let pb = fs::read(root.join("pb/policy.ckpt")).unwrap();
    assert_eq!(pa, pb, "policy checkpoint replay must be byte-identical");
    let ea = fs::read(root.join("pa/final_eval.json")).unwrap();
    let eb = fs::read(root.join("pb/final_eval.json")).unwrap();
    assert_eq!(ea, eb, "evaluation report replay must be byte-identical");

    // training logs match apart from the wall-clock column
    let strip = |path: &std::path::Path| -> Vec<String> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols.pop();
                cols.join(",")
            })
            .collect()
    };
    assert_eq!(
        strip(&root.join("pa/train_log.csv")),
        strip(&root.join("pb/train_log.csv")),
        "training logs must match modulo wall clock"
    );

    println!("CRITERION 9 PASS - identical config + seed reproduces artifacts byte-identically");
}
