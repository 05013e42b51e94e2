use mupscale_core::linalg::Mat;
use mupscale_core::microtrain::{
    attention_logit_ratio, init_network, lr_schedule, mse, param_count, train, train_from, AttnProbe, NetworkConfig,
    NetworkState, Nonlinearity, Optimizer, Params, SwitchEvent, Task, TaskKind, TaskSpec, TrainConfig, Wsd,
};
use mupscale_core::param::{base_spec, gauge_transform, int, rat, AblationFlags, BaseKind, LayerRole, OptimizerKind, ParamSpec};
use mupscale_core::{ablate, weight_tied_spec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use LayerRole::*;
use OptimizerKind::*;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| {
            // Box-Muller
            let u1: f64 = r.random::<f64>().max(1e-300);
            let u2: f64 = r.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn geo_mean(v: &[f64]) -> f64 {
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

fn small_task(d_in: usize, d_out: usize, seed: u64) -> Task {
    let mut ts = TaskSpec::teacher_student(d_in, d_out, 256, 32);
    ts.seed = seed;
    ts.eval_size = 64;
    Task::build(&ts).unwrap()
}

#[test]
fn output_init_std_matches_inverse_width() {
    let spec = base_spec(BaseKind::MuP, Adam);
    let net = init_network(&spec, &NetworkConfig::new(256, 16, 64)).unwrap();
    assert!(net.params.v.data.len() >= 10_000);
    let std = rms(&net.params.v.data);
    assert!((std * 256.0 - 1.0).abs() < 0.05, "std {std}");
    // input and hidden follow n^0 and n^-1/2
    assert!((rms(&net.params.u.data) - 1.0).abs() < 0.05);
    assert!((rms(&net.params.w.data) * 16.0 - 1.0).abs() < 0.05);
}

#[test]
fn width_one_has_unit_scales() {
    for spec in [base_spec(BaseKind::SP, Adam), base_spec(BaseKind::MuP, Sgd)] {
        let a = init_network(&spec, &NetworkConfig::new(1, 3, 2)).unwrap();
        assert_eq!(a.mult, [1.0, 1.0, 1.0]);
        let other = gauge_transform(&spec, Hidden, rat(3, 2)).unwrap();
        let b = init_network(&other, &NetworkConfig::new(1, 3, 2)).unwrap();
        assert_eq!(a.params, b.params);
    }
}

fn canonical_adam() -> ParamSpec {
    let mup = base_spec(BaseKind::MuP, Adam);
    let s = gauge_transform(&mup, Input, rat(-1, 2)).unwrap();
    gauge_transform(&s, Output, rat(1, 2)).unwrap()
}

#[test]
fn coupled_seeding_makes_gauge_pairs_share_outputs() {
    let mup = base_spec(BaseKind::MuP, Adam);
    let canon = canonical_adam();
    for n in [8, 64, 300] {
        let mut cfg = NetworkConfig::new(n, 12, 5);
        cfg.seed = 42;
        let a = init_network(&mup, &cfg).unwrap();
        let b = init_network(&canon, &cfg).unwrap();
        let x = gaussian(100, 12, 9);
        let fa = a.forward(&x).unwrap().f;
        let fb = b.forward(&x).unwrap().f;
        let scale = rms(&fa.data);
        for (p, q) in fa.data.iter().zip(&fb.data) {
            assert!((p - q).abs() <= 1e-12 * scale.max(p.abs()), "n={n}: {p} vs {q}");
        }
    }
}

#[test]
fn different_widths_do_not_share_prefixes_of_a_layer() {
    let spec = base_spec(BaseKind::MuP, Adam);
    let a = init_network(&spec, &NetworkConfig::new(16, 4, 4)).unwrap();
    let mut cfg = NetworkConfig::new(16, 4, 4);
    cfg.seed = 1;
    let b = init_network(&spec, &cfg).unwrap();
    assert_ne!(a.params.u, b.params.u);
    // layers use distinct streams
    assert_ne!(a.params.u.data[..16], a.params.w.data[..16]);
}

#[test]
fn scalar_chain() {
    let spec = base_spec(BaseKind::SP, Adam);
    let mut s = init_network(&spec, &NetworkConfig::new(1, 1, 1)).unwrap();
    s.params.u.data = vec![1.0];
    s.params.w.data = vec![1.0];
    s.params.v.data = vec![1.0];
    let f = s.forward(&Mat::from_vec(1, 1, vec![1.0])).unwrap().f;
    assert_eq!(f.data, vec![1.0]);
}

#[test]
fn forward_rejects_wrong_dimension() {
    let s = init_network(&base_spec(BaseKind::SP, Adam), &NetworkConfig::new(4, 3, 2)).unwrap();
    assert!(s.forward(&Mat::zeros(2, 4)).is_err());
    let fwd = s.forward(&Mat::zeros(2, 3)).unwrap();
    assert!(s.backward(&fwd, &Mat::zeros(3, 2)).is_err());
}

#[test]
fn config_consistency_errors() {
    let mut cfg = NetworkConfig::new(8, 4, 3);
    cfg.weight_tied = true;
    assert!(init_network(&weight_tied_spec(Adam), &cfg).is_err());
    let cfg = NetworkConfig::new(8, 4, 4);
    assert!(init_network(&weight_tied_spec(Adam), &cfg).is_err());
    let mut cfg = NetworkConfig::new(8, 4, 4);
    cfg.attention_probe = true;
    let mut spec = base_spec(BaseKind::MuP, Adam);
    spec.attn_exponent = None;
    assert!(init_network(&spec, &cfg).is_err());
}

/// Init-time RMS of h, z, f averaged over seeds, for one width.
fn init_norms(spec: &ParamSpec, n: usize, seeds: u64) -> [f64; 3] {
    let x = gaussian(32, 16, 3);
    let mut acc = [Vec::new(), Vec::new(), Vec::new()];
    for s in 0..seeds {
        let mut cfg = NetworkConfig::new(n, 16, 4);
        cfg.seed = s;
        let net = init_network(spec, &cfg).unwrap();
        let fwd = net.forward(&x).unwrap();
        acc[0].push(fwd.h.rms());
        acc[1].push(fwd.z.rms());
        acc[2].push(fwd.f.rms());
    }
    [geo_mean(&acc[0]), geo_mean(&acc[1]), geo_mean(&acc[2])]
}

#[test]
fn mup_init_activation_slopes() {
    let spec = base_spec(BaseKind::MuP, Adam);
    let widths = [64.0, 128.0, 256.0, 512.0, 1024.0];
    let norms: Vec<[f64; 3]> = widths.iter().map(|&n| init_norms(&spec, n as usize, 8)).collect();
    let col = |k: usize| norms.iter().map(|v| v[k]).collect::<Vec<f64>>();
    let (sh, sz, sf) = (loglog_slope(&widths, &col(0)), loglog_slope(&widths, &col(1)), loglog_slope(&widths, &col(2)));
    assert!(sh.abs() < 0.05, "h slope {sh}");
    assert!(sz.abs() < 0.05, "z slope {sz}");
    assert!((sf + 0.5).abs() < 0.1, "f slope {sf}");
}

#[test]
fn sp_output_gradient_is_width_independent() {
    let spec = base_spec(BaseKind::SP, Adam);
    let widths = [64.0, 128.0, 256.0, 512.0, 1024.0];
    let x = gaussian(32, 16, 5);
    let y = gaussian(32, 4, 6);
    let g: Vec<f64> = widths
        .iter()
        .map(|&n| {
            let v: Vec<f64> = (0..8)
                .map(|s| {
                    let mut cfg = NetworkConfig::new(n as usize, 16, 4);
                    cfg.seed = s;
                    let net = init_network(&spec, &cfg).unwrap();
                    let fwd = net.forward(&x).unwrap();
                    let (_, df) = mse(&fwd.f, &y);
                    net.backward(&fwd, &df).unwrap().v.rms()
                })
                .collect();
            geo_mean(&v)
        })
        .collect();
    let s = loglog_slope(&widths, &g);
    assert!(s.abs() < 0.1, "g_v slope {s}");
}

fn loss_of(s: &NetworkState, x: &Mat, y: &Mat) -> f64 {
    mse(&s.forward(x).unwrap().f, y).0
}

fn tensor_mut(p: &mut Params, k: usize) -> &mut Vec<f64> {
    match k {
        0 => &mut p.u.data,
        1 => &mut p.w.data,
        2 => &mut p.v.data,
        _ => &mut p.ln,
    }
}

fn tensor(p: &Params, k: usize) -> &[f64] {
    match k {
        0 => &p.u.data,
        1 => &p.w.data,
        2 => &p.v.data,
        _ => &p.ln,
    }
}

/// Largest relative deviation of the analytic gradient from central
/// differences with step 1e-5.
fn gradient_error(spec: &ParamSpec, cfg: &NetworkConfig) -> f64 {
    let mut s = init_network(spec, cfg).unwrap();
    // move LayerNorm off its identity init so its gradients are generic
    for (i, g) in s.params.ln.iter_mut().enumerate() {
        *g += 0.1 * ((i * 7 % 5) as f64 - 2.0);
    }
    let x = gaussian(6, cfg.d_in, 11);
    let y = gaussian(6, cfg.d_out, 12);
    let fwd = s.forward(&x).unwrap();
    let (_, df) = mse(&fwd.f, &y);
    let g = s.backward(&fwd, &df).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..4 {
        for i in 0..tensor(&s.params, k).len() {
            let orig = tensor(&s.params, k)[i];
            tensor_mut(&mut s.params, k)[i] = orig + h;
            let lp = loss_of(&s, &x, &y);
            tensor_mut(&mut s.params, k)[i] = orig - h;
            let lm = loss_of(&s, &x, &y);
            tensor_mut(&mut s.params, k)[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = tensor(&g, k)[i];
            let denom = ana.abs().max(num.abs()).max(1e-4);
            worst = worst.max((ana - num).abs() / denom);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let canon = canonical_adam();
    for nl in [Nonlinearity::Identity, Nonlinearity::Tanh] {
        for ln in [false, true] {
            for spec in [base_spec(BaseKind::SP, Adam), canon.clone()] {
                let mut cfg = NetworkConfig::new(8, 5, 3);
                cfg.nonlinearity = nl;
                cfg.layernorm = ln;
                cfg.seed = 3;
                let e = gradient_error(&spec, &cfg);
                assert!(e <= 1e-6, "{} {nl:?} ln={ln}: {e}", spec.name);
            }
        }
    }
    let mut cfg = NetworkConfig::new(8, 4, 4);
    cfg.weight_tied = true;
    cfg.nonlinearity = Nonlinearity::Tanh;
    cfg.layernorm = true;
    let e = gradient_error(&weight_tied_spec(Adam), &cfg);
    assert!(e <= 1e-6, "tied: {e}");
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    let mut cfg = NetworkConfig::new(8, 5, 3);
    cfg.layernorm = true;
    cfg.nonlinearity = Nonlinearity::Tanh;
    let s = init_network(&base_spec(BaseKind::MuP, Adam), &cfg).unwrap();
    let fwd = s.forward(&gaussian(4, 5, 1)).unwrap();
    let g = s.backward(&fwd, &Mat::zeros(4, 3)).unwrap();
    assert_eq!(g.sq_norm(), 0.0);
}

#[test]
fn zero_gradient_step_leaves_state_unchanged() {
    for opt in [Sgd, Adam] {
        let mut cfg = NetworkConfig::new(8, 5, 3);
        cfg.layernorm = true;
        let s0 = init_network(&base_spec(BaseKind::MuP, opt), &cfg).unwrap();
        let mut s = s0.clone();
        let mut tc = TrainConfig::new(opt, 10, 4, 0.5);
        tc.schedule = Wsd::constant();
        let mut o = Optimizer::new(tc);
        let zero = Params::zeros_like(&s.params);
        for t in 0..3 {
            o.step(&mut s, &zero, t);
        }
        assert_eq!(s, s0, "{opt}");
    }
}

#[test]
fn adam_first_update_has_rms_of_layer_lr() {
    let spec = base_spec(BaseKind::MuP, Adam);
    let task = small_task(8, 4, 0);
    for n in [32usize, 128] {
        let s0 = init_network(&spec, &NetworkConfig::new(n, 8, 4)).unwrap();
        let (bx, by) = task.batch(0, 0, 16);
        let fwd = s0.forward(&bx).unwrap();
        let (_, df) = mse(&fwd.f, &by);
        let g = s0.backward(&fwd, &df).unwrap();
        let mut tc = TrainConfig::new(Adam, 10, 16, 0.01);
        tc.schedule = Wsd::constant();
        tc.adam_eps = 1e-16;
        let mut o = Optimizer::new(tc);
        let mut s = s0.clone();
        o.step(&mut s, &g, 0);
        let dw = s.params.w.sub(&s0.params.w).rms();
        let expect = 0.01 / n as f64;
        assert!((dw / expect - 1.0).abs() < 1e-6, "n={n}: {dw} vs {expect}");
        let du = s.params.u.sub(&s0.params.u).rms();
        assert!((du / 0.01 - 1.0).abs() < 1e-6);
    }
}

#[test]
fn switch_changes_input_lr_by_exactly_n() {
    let spec = base_spec(BaseKind::MuP, Adam);
    for n in [16usize, 256] {
        let s = init_network(&spec, &NetworkConfig::new(n, 4, 4)).unwrap();
        let mut tc = TrainConfig::new(Sgd, 100, 4, 0.1);
        tc.schedule = Wsd::constant();
        tc.switch_events = vec![SwitchEvent { step: 40, role: Input, c: int(1) }];
        let o = Optimizer::new(tc.clone());
        let before = o.layer_lr(&s, Input, 39);
        let after = o.layer_lr(&s, Input, 40);
        assert_eq!(before / after, n as f64);
        assert_eq!(o.layer_lr(&s, Hidden, 39), o.layer_lr(&s, Hidden, 40));
        assert_eq!(o.lr_exponent(&s, Input, 99), Some(int(1)));

        // the applied update shrinks by the same factor
        let mut g = Params::zeros_like(&s.params);
        g.u.data.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + i as f64);
        let mut o = Optimizer::new(tc);
        let mut a = s.clone();
        o.step(&mut a, &g, 39);
        let d1 = a.params.u.sub(&s.params.u).rms();
        let mut b = s.clone();
        o.step(&mut b, &g, 40);
        let d2 = b.params.u.sub(&s.params.u).rms();
        assert!((d1 / d2 / n as f64 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn schedule_examples() {
    let w = Wsd::default();
    assert_eq!(lr_schedule(0, 100, &w), 0.0);
    assert_eq!(lr_schedule(10, 100, &w), 0.5);
    assert_eq!(lr_schedule(20, 100, &w), 1.0);
    assert_eq!(lr_schedule(79, 100, &w), 1.0);
    assert!((lr_schedule(90, 100, &w) - 0.5).abs() < 1e-12);
    assert!((lr_schedule(99, 100, &w) - 0.05).abs() < 1e-12);
    let short = Wsd { warmup_frac: 0.01, stable_frac: 0.79, decay_frac: 0.2 };
    assert_eq!(lr_schedule(1, 100, &short), 1.0);
    assert_eq!(lr_schedule(0, 100, &short), 0.0);
    assert_eq!(lr_schedule(0, 100, &Wsd::constant()), 1.0);
    for t in 0..100 {
        let v = lr_schedule(t, 100, &w);
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn schedule_fractions_must_sum_to_one() {
    let spec = base_spec(BaseKind::MuP, Adam);
    let task = small_task(4, 2, 0);
    let mut tc = TrainConfig::new(Adam, 5, 4, 0.01);
    tc.schedule = Wsd { warmup_frac: 0.2, stable_frac: 0.6, decay_frac: 0.3 };
    assert!(train(&spec, &NetworkConfig::new(8, 4, 2), &task, &tc).is_err());
    let mut tc = TrainConfig::new(Adam, 5, 4, 0.01);
    tc.switch_events = vec![SwitchEvent { step: 5, role: Input, c: int(1) }];
    assert!(train(&spec, &NetworkConfig::new(8, 4, 2), &task, &tc).is_err());
}

#[test]
fn zero_steps_keep_initial_loss() {
    let task = small_task(6, 3, 2);
    let tc = TrainConfig::new(Adam, 0, 8, 0.01);
    let r = train(&base_spec(BaseKind::MuP, Adam), &NetworkConfig::new(16, 6, 3), &task, &tc).unwrap();
    assert_eq!(r.final_loss, r.initial_loss);
    assert_eq!(r.steps_run, 0);
    assert!(r.losses.is_empty());
}

#[test]
fn runs_are_bit_identical() {
    let task = small_task(6, 3, 2);
    let mut cfg = NetworkConfig::new(32, 6, 3);
    cfg.nonlinearity = Nonlinearity::Relu;
    cfg.layernorm = true;
    cfg.seed = 5;
    let mut tc = TrainConfig::new(Adam, 30, 8, 0.01);
    tc.lambda = 0.1;
    tc.trace_stride = 10;
    let spec = base_spec(BaseKind::MuP, Adam);
    let a = train(&spec, &cfg, &task, &tc).unwrap();
    let b = train(&spec, &cfg, &task, &tc).unwrap();
    assert_eq!(a, b);
    assert!(a.final_loss < a.initial_loss);
    cfg.seed = 6;
    assert_ne!(train(&spec, &cfg, &task, &tc).unwrap().losses, a.losses);
}

#[test]
fn frozen_roles_are_untouched() {
    let task = small_task(6, 3, 2);
    let cfg = NetworkConfig::new(16, 6, 3);
    for opt in [Sgd, Adam] {
        let spec = base_spec(BaseKind::MuP, opt);
        let s0 = init_network(&spec, &cfg).unwrap();
        let mut tc = TrainConfig::new(opt, 20, 8, 0.01);
        tc.lambda = 0.5;
        tc.frozen_roles.insert(Input);
        let (r, s1) = train_from(s0.clone(), &task, &tc).unwrap();
        assert_eq!(r.steps_run, 20);
        assert_eq!(s1.params.u, s0.params.u);
        assert_ne!(s1.params.w, s0.params.w);
        assert_ne!(s1.params.v, s0.params.v);
    }
}

#[test]
fn divergence_is_recorded_as_infinity() {
    let task = small_task(6, 3, 2);
    let mut tc = TrainConfig::new(Sgd, 50, 8, 2f64.powi(12));
    tc.schedule = Wsd::constant();
    let r = train(&base_spec(BaseKind::SP, Sgd), &NetworkConfig::new(64, 6, 3), &task, &tc).unwrap();
    assert!(r.diverged);
    assert_eq!(r.final_loss, f64::INFINITY);
    assert!(r.steps_run < 50);
}

#[test]
fn layernorm_parameters_are_not_decayed() {
    let mut cfg = NetworkConfig::new(8, 4, 2);
    cfg.layernorm = true;
    let s0 = init_network(&base_spec(BaseKind::MuP, Sgd), &cfg).unwrap();
    let mut tc = TrainConfig::new(Sgd, 10, 4, 0.1);
    tc.lambda = 1.0;
    tc.schedule = Wsd::constant();
    let mut o = Optimizer::new(tc);
    assert_eq!(o.layer_wd(&s0, LayerNorm), 0.0);
    let mut s = s0.clone();
    o.step(&mut s, &Params::zeros_like(&s0.params), 0);
    assert_eq!(s.params.ln, s0.params.ln);
    assert_ne!(s.params.w, s0.params.w);
}

#[test]
fn trace_records_exact_rms() {
    let task = small_task(6, 3, 2);
    let spec = base_spec(BaseKind::MuP, Adam);
    let mut tc = TrainConfig::new(Adam, 10, 8, 0.01);
    tc.schedule = Wsd::constant();
    tc.trace_stride = 5;
    let s0 = init_network(&spec, &NetworkConfig::new(16, 6, 3)).unwrap();
    let (r, s1) = train_from(s0.clone(), &task, &tc).unwrap();
    assert_eq!(r.trace.steps(), vec![0, 1, 5, 10]);
    assert_eq!(r.trace.get(0, "weight_rms", "Hidden"), Some(rms(&s0.params.w.data)));
    assert_eq!(r.trace.get(10, "weight_rms", "Input"), Some(rms(&s1.params.u.data)));
    assert!(r.trace.get(0, "dweight_rms", "Hidden").is_none());
    assert!(r.trace.get(1, "dweight_rms", "Hidden").unwrap() > 0.0);
    for q in ["term_wu", "term_au", "term_so"] {
        assert!(r.trace.get(1, q, "f").unwrap() >= 0.0);
    }
    assert!(r.trace.rows.iter().all(|row| row.value >= 0.0 || !row.quantity.contains("rms")));
    let csv = r.trace.to_csv();
    assert!(csv.starts_with("step,quantity,role,value\n"), "{csv}");
    assert_eq!(csv.lines().count(), r.trace.rows.len() + 1);
}

#[test]
fn param_count_formula() {
    assert_eq!(param_count(64, 16, 4, false, false), 16 * 64 + 64 * 64 + 64 * 4);
    assert_eq!(param_count(64, 16, 16, true, true), 16 * 64 + 64 * 64 + 4 * 64);
}

#[test]
fn attention_ratio_examples() {
    for p in [AttnProbe::Independent, AttnProbe::Aligned] {
        assert_eq!(attention_logit_ratio(1, 0, p), 1.0);
        assert_eq!(attention_logit_ratio(64, 3, p), attention_logit_ratio(64, 3, p));
    }
    let ds = [64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0];
    let avg = |d: f64, p| geo_mean(&(0..8).map(|s| attention_logit_ratio(d as usize, s, p)).collect::<Vec<_>>());
    let aligned: Vec<f64> = ds.iter().map(|&d| avg(d, AttnProbe::Aligned)).collect();
    let indep: Vec<f64> = ds.iter().map(|&d| avg(d, AttnProbe::Independent)).collect();
    let sa = loglog_slope(&ds, &aligned);
    let si = loglog_slope(&ds, &indep);
    assert!((sa - 1.0).abs() < 0.1, "aligned slope {sa}");
    assert!((si - 0.5).abs() < 0.05, "independent slope {si}");
}

fn trajectories_match(a: &ParamSpec, b: &ParamSpec, opt: OptimizerKind, eta: f64) -> f64 {
    let task = small_task(8, 4, 1);
    let mut cfg = NetworkConfig::new(64, 8, 4);
    cfg.nonlinearity = Nonlinearity::Tanh;
    cfg.seed = 2;
    let mut tc = TrainConfig::new(opt, 120, 16, eta);
    tc.adam_eps = 1e-12;
    let ra = train(a, &cfg, &task, &tc).unwrap();
    let rb = train(b, &cfg, &task, &tc).unwrap();
    assert_eq!(ra.losses.len(), 120);
    ra.losses.iter().zip(&rb.losses).map(|(x, y)| (x - y).abs() / x.abs()).fold(0.0, f64::max)
}

#[test]
fn gauge_pairs_train_identically() {
    for (opt, eta) in [(Sgd, 0.05), (Adam, 2f64.powi(-6))] {
        let base = base_spec(BaseKind::MuP, opt);
        let mut other = base.clone();
        for (r, d) in [(Input, rat(-1, 2)), (Hidden, rat(1, 3)), (Output, int(1))] {
            other = gauge_transform(&other, r, d).unwrap();
        }
        let dev = trajectories_match(&base, &other, opt, eta);
        assert!(dev <= 1e-5, "{opt}: {dev}");
    }
    // SP under the SP ablation lattice is gauge-equivalent to itself shifted
    let sp = ablate(AblationFlags::SP, Adam);
    let shifted = gauge_transform(&sp, Hidden, rat(-1, 2)).unwrap();
    assert!(trajectories_match(&sp, &shifted, Adam, 2f64.powi(-8)) <= 1e-5);
}

#[test]
fn task_inputs_have_unit_rms() {
    for kind in [TaskKind::TeacherStudentRegression, TaskKind::SyntheticClassification, TaskKind::GaussianTargets] {
        let mut ts = TaskSpec::teacher_student(32, 4, 512, 64);
        ts.kind = kind;
        let t = Task::build(&ts).unwrap();
        assert!((t.x.rms() - 1.0).abs() < 0.05);
        if kind == TaskKind::SyntheticClassification {
            for r in 0..t.y.rows {
                assert_eq!(t.y.row(r).iter().sum::<f64>(), 1.0);
            }
        }
    }
}

/// Vertex of a least-squares parabola through ln(loss) over the five grid
/// points around the argmin.
fn vertex(grid: &[f64], loss: &[f64]) -> f64 {
    let k = (0..loss.len()).min_by(|&a, &b| loss[a].total_cmp(&loss[b])).unwrap();
    let lo = k.saturating_sub(2);
    let hi = (k + 3).min(loss.len());
    // normal equations for y = c0 + c1 x + c2 x^2, centered on grid[k]
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for i in lo..hi {
        let x = grid[i] - grid[k];
        let p = [1.0, x, x * x];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] += p[a] * p[b];
            }
            r[a] += p[a] * loss[i].ln();
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let col = |j: usize| {
        let mut mm = m;
        for a in 0..3 {
            mm[a][j] = r[a];
        }
        det(&mm) / d
    };
    let (c1, c2) = (col(1), col(2));
    if c2 > 0.0 {
        grid[k] + (-c1 / (2.0 * c2)).clamp(-1.0, 1.0)
    } else {
        grid[k]
    }
}

fn nu_star(spec: &ParamSpec, widths: &[usize], grid: &[f64]) -> Vec<f64> {
    let mut ts = TaskSpec::teacher_student(16, 4, 512, 64);
    ts.eval_size = 256;
    let task = Task::build(&ts).unwrap();
    widths
        .iter()
        .map(|&n| {
            let mut cfg = NetworkConfig::new(n, 16, 4);
            cfg.nonlinearity = Nonlinearity::Tanh;
            let loss: Vec<f64> = grid
                .iter()
                .map(|&nu| {
                    let tc = TrainConfig::new(Adam, 120, 32, 2f64.powf(nu));
                    train(spec, &cfg, &task, &tc).unwrap().final_loss
                })
                .collect();
            vertex(grid, &loss)
        })
        .collect()
}

#[test]
fn mup_optimum_drifts_less_than_sp() {
    let grid: Vec<f64> = (0..=16).map(|i| -7.5 + 0.75 * i as f64).collect();
    let widths = [32, 512];
    let sp = nu_star(&base_spec(BaseKind::SP, Adam), &widths, &grid);
    let mup = nu_star(&base_spec(BaseKind::MuP, Adam), &widths, &grid);
    let drift = |v: &[f64]| (v[1] - v[0]).abs();
    eprintln!("nu* SP {sp:?}, muP {mup:?}");
    assert!(drift(&mup) < drift(&sp), "SP {sp:?}, muP {mup:?}");
}
