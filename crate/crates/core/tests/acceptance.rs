//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails. Criteria 10 and 11 need the ETTh1 CSV; point
//! `CMAMBA_ETTH1` at it to run them, otherwise they are reported as NOT RUN.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use cmamba_core::augment::{channel_mixup, MixupConfig, MixupDraw, MixupMode, Phase};
use cmamba_core::config::ExperimentConfig;
use cmamba_core::experiment::{self, run_train};
use cmamba_core::mixer::GddMlp;
use cmamba_core::model::{num_patches, patching, CMambaModel, ModelConfig};
use cmamba_core::ssm::{
    discretize, lti_convolution_reference, selective_scan_kernel, selective_scan_values, AMode, AblationCase, DMode,
    MambaBlock, MambaBlockConfig, SsmParams,
};
use cmamba_core::tensor::{grad_check, GradCheckOptions, ReduceOp};
use cmamba_core::train::{loss, Adam, LossKind};
use cmamba_core::{ParamStore, Rng, Tape, Tensor, Var};

use common::*;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = fn() -> Outcome;

fn pass_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------- 1

fn probe_loss(tape: &mut Tape, y: Var, probe: &Tensor) -> cmamba_core::Result<Var> {
    let p = tape.constant(probe.clone());
    let yp = tape.mul(y, p)?;
    Ok(tape.sum_all(yp))
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(lo, hi))
}

fn criterion_1_gradients() -> Outcome {
    let started = Instant::now();
    let opts = GradCheckOptions::default();
    let mut rng = Rng::new(101);
    let mut results: Vec<(&str, bool, f64)> = Vec::new();
    let mut record = |name, report: cmamba_core::tensor::GradCheckReport| {
        let worst = report.worst().map(|w| w.max_rel_error).unwrap_or(0.0);
        results.push((name, report.passed(), worst));
    };

    // elementwise unary and binary ops with broadcasting
    {
        let mut store = ParamStore::new();
        let a = store.add("a", random(&[3, 4], -2.0, 2.0, &mut rng));
        let b = store.add("b", random(&[4], -2.0, 2.0, &mut rng));
        let probe = random(&[3, 4], -1.0, 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |tape, st| {
                let (a, b) = (tape.param(st, a), tape.param(st, b));
                let s = tape.add(a, b)?;
                let m = tape.mul(s, b)?;
                let d = tape.sub(m, a)?;
                let u1 = tape.silu(d);
                let u2 = tape.sigmoid(a);
                let u3 = tape.softplus(b);
                let u4 = tape.exp(u2);
                let u5 = tape.square(u1);
                let u6 = tape.abs(d);
                let u7 = tape.relu(d);
                let u8 = tape.neg(u4);
                let u9 = tape.scale(u5, 0.3);
                let mut acc = tape.add(u9, u8)?;
                for v in [u3, u6, u7] {
                    acc = tape.add(acc, v)?;
                }
                probe_loss(tape, acc, &probe)
            },
            &opts,
        )
        .expect("elementwise grad check");
        record("elementwise", r);
    }
    // matmul (batched), reductions, reshape and permute
    {
        let mut store = ParamStore::new();
        let a = store.add("a", random(&[2, 3, 4], -1.0, 1.0, &mut rng));
        let w = store.add("w", random(&[4, 5], -1.0, 1.0, &mut rng));
        let probe = random(&[5, 2], -1.0, 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |tape, st| {
                let (a, w) = (tape.param(st, a), tape.param(st, w));
                let y = tape.matmul(a, w)?;
                let mean = tape.reduce(ReduceOp::Mean, y, 1)?;
                let max = tape.reduce(ReduceOp::Max, y, 1)?;
                let s = tape.add(mean, max)?;
                let s = tape.permute(s, &[1, 0])?;
                let s = tape.reshape(s, [5, 2])?;
                probe_loss(tape, s, &probe)
            },
            &opts,
        )
        .expect("matmul grad check");
        record("matmul+reduce", r);
    }
    // the fused scan kernel, feature-specific and shared A
    for (name, a_shape) in [("scan (A: E×S)", vec![3, 4]), ("scan (A: S)", vec![4])] {
        let mut store = ParamStore::new();
        let u = store.add("u", random(&[2, 5, 3], -1.0, 1.0, &mut rng));
        let dt = store.add("dt_raw", random(&[2, 5, 3], -2.0, 0.5, &mut rng));
        let a_log = store.add("a_log", random(&a_shape, -0.5, 1.0, &mut rng));
        let b = store.add("b", random(&[2, 5, 4], -1.0, 1.0, &mut rng));
        let c = store.add("c", random(&[2, 5, 4], -1.0, 1.0, &mut rng));
        let probe = random(&[2, 5, 3], -1.0, 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |tape, st| {
                let u = tape.param(st, u);
                let dt = tape.param(st, dt);
                let delta = tape.softplus(dt);
                let al = tape.param(st, a_log);
                let ea = tape.exp(al);
                let a = tape.neg(ea);
                let (b, c) = (tape.param(st, b), tape.param(st, c));
                let y = selective_scan_kernel(tape, u, delta, a, b, c)?;
                probe_loss(tape, y, &probe)
            },
            &opts,
        )
        .expect("scan grad check");
        record(name, r);
    }
    // GDD-MLP with its zero-initialized output layers moved off zero
    {
        let mut store = ParamStore::new();
        let gdd = GddMlp::new(&mut store, "gdd", 3, 1.0, &mut rng).unwrap();
        perturb(&mut store, 0.5, &mut rng);
        let h = random(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
        let probe = random(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |tape, st| {
                let h = tape.constant(h.clone());
                let y = gdd.forward(tape, st, h)?;
                probe_loss(tape, y, &probe)
            },
            &opts,
        )
        .expect("gdd grad check");
        record("gdd-mlp", r);
    }
    // every block variant
    for case in AblationCase::ALL {
        let mut store = ParamStore::new();
        let cfg = MambaBlockConfig {
            d_model: 8,
            d_state: 4,
            ..MambaBlockConfig::default()
        }
        .with_case(case);
        let block = MambaBlock::new(&mut store, "blk", &cfg, &mut rng).unwrap();
        perturb(&mut store, 0.3, &mut rng);
        // Initial steps of 1e-3..1e-1 leave ∂/∂a_log near 1e-7, below what
        // central differences resolve in f64; check at Δ of order one.
        let dt_bias = block.ssm.dt_up.bias.expect("dt bias");
        *store.value_mut(dt_bias) = random(&[8], -1.0, 1.0, &mut rng);
        let x = random(&[1, 2, 4, 8], -2.0, 2.0, &mut rng);
        let probe = random(&[1, 2, 4, 8], -1.0, 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |tape, st| {
                let x = tape.constant(x.clone());
                let y = block.forward(tape, st, x)?;
                probe_loss(tape, y, &probe)
            },
            &opts,
        )
        .expect("block grad check");
        record(case.label(), r);
    }
    // full model, tiny configuration, both GDD settings
    for use_gdd in [true, false] {
        let cfg = ModelConfig {
            look_back: 12,
            horizon: 3,
            channels: 2,
            patch_len: 4,
            stride: 4,
            num_blocks: 2,
            dropout: 0.0,
            gdd_expansion: 1.0,
            use_gdd,
            block: MambaBlockConfig {
                d_model: 6,
                d_state: 3,
                ..MambaBlockConfig::default()
            },
        };
        let mut store = ParamStore::new();
        let model = CMambaModel::new(&mut store, &cfg, &mut rng).unwrap();
        perturb(&mut store, 0.2, &mut rng);
        let (x, _) = two_sinusoid_batch(2, 12, 3, 2, &mut rng);
        let probe = random(&[2, 3, 2], -1.0, 1.0, &mut rng);
        let r = grad_check(
            &mut store,
            |tape, st| {
                let y = model.forward(tape, st, &x, None)?;
                probe_loss(tape, y, &probe)
            },
            &opts,
        )
        .expect("model grad check");
        record(if use_gdd { "model (gdd on)" } else { "model (gdd off)" }, r);
    }

    let elapsed = started.elapsed();
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let worst = results.iter().map(|r| r.2).fold(0.0, f64::max);
    pass_if(
        failed.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} checks, worst rel err {worst:.2e} (tol 1e-4), failed {failed:?}, {:.1}s (limit 60s)",
            results.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2_scan_oracle() -> Outcome {
    // hand-unrolled case: Ā = 0.5, B̄ = 0.5, C = 1, x = [1, 1]
    let ln2 = std::f64::consts::LN_2;
    let hand = selective_scan_values(
        &Tensor::new([2, 1], vec![1.0, 1.0]).unwrap(),
        &Tensor::new([2, 1], vec![ln2, ln2]).unwrap(),
        &Tensor::new([1], vec![-1.0]).unwrap(),
        &Tensor::new([2, 1], vec![1.0, 1.0]).unwrap(),
        &Tensor::new([2, 1], vec![1.0, 1.0]).unwrap(),
    )
    .unwrap();
    let hand_err = max_abs_diff(hand.data(), &[0.5, 0.75]);

    let mut rng = Rng::new(202);
    let mut worst: f64 = 0.0;
    let instances = 120;
    for _ in 0..instances {
        let b = 1 + rng.index(2);
        let v = 1 + rng.index(3);
        let n = 1 + rng.index(8);
        let e = 1 + rng.index(4);
        let a_mode = if rng.bernoulli(0.5) { AMode::FeatureSpecific } else { AMode::FeatureIndependent };
        let d_mode = if rng.bernoulli(0.5) { DMode::Free } else { DMode::DataDependent };
        let mut store = ParamStore::new();
        let ssm = SsmParams::new(&mut store, "ssm", e, 16, 1, a_mode, d_mode, &mut rng);
        perturb(&mut store, 0.3, &mut rng);
        let u = random(&[b, v, n, e], -2.0, 2.0, &mut rng);
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let y = ssm.forward(&mut tape, &store, uv).unwrap();
        let want = naive_ssm(&store, &ssm, &u);
        worst = worst.max(max_abs_diff(tape.value(y).data(), &want));
    }
    pass_if(
        worst < 1e-10 && hand_err < 1e-12,
        format!("{instances} random instances, max abs diff {worst:.2e} (tol 1e-10); hand case y=[0.5, 0.75] err {hand_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3_lti() -> Outcome {
    let mut rng = Rng::new(303);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in [1usize, 2, 5, 8, 16, 24, 32] {
        for shared_a in [true, false] {
            let (e, s) = (3, 16);
            let a = if shared_a {
                random(&[s], -3.0, -0.05, &mut rng)
            } else {
                random(&[e, s], -3.0, -0.05, &mut rng)
            };
            let bvec = random(&[s], -1.0, 1.0, &mut rng);
            let cvec = random(&[s], -1.0, 1.0, &mut rng);
            let dt = random(&[e], 0.01, 0.5, &mut rng);
            let dvec = random(&[e], -1.0, 1.0, &mut rng);
            let x = random(&[n, e], -2.0, 2.0, &mut rng);
            let tile = |row: &Tensor, len: usize| {
                Tensor::new([n, len], row.data().iter().copied().cycle().take(n * len).collect()).unwrap()
            };
            let y = selective_scan_values(&x, &tile(&dt, e), &a, &tile(&bvec, s), &tile(&cvec, s)).unwrap();
            let y: Vec<f64> = y
                .data()
                .iter()
                .enumerate()
                .map(|(i, yi)| yi + dvec.data()[i % e] * x.data()[i])
                .collect();
            let (abar, bbar) = discretize(&a, &bvec, &dt).unwrap();
            let reference = lti_convolution_reference(&x, &abar, &bbar, &cvec, &dvec).unwrap();
            worst = worst.max(max_abs_diff(&y, reference.data()));
            cases += 1;
        }
    }
    pass_if(worst < 1e-8, format!("{cases} instances, N up to 32, max abs diff {worst:.2e} (tol 1e-8)"))
}

// ---------------------------------------------------------------- 4

fn criterion_4_mixup() -> Outcome {
    let mut rng = Rng::new(404);
    let x = random(&[12, 5], -3.0, 3.0, &mut rng);
    let y = random(&[4, 5], -3.0, 3.0, &mut rng);

    let zero = MixupConfig {
        mode: MixupMode::Channel,
        sigma: 0.0,
    };
    let (xz, yz) = channel_mixup(&x, &y, &zero, Phase::Train, &mut rng).unwrap();
    let identity = xz == x && yz == y;

    // perturbation of one fixed element over many draws
    let draws = 10_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let d = MixupDraw::sample(5, 1.0, &mut rng);
        let p = d.apply_rows(x.data())[7] - x.data()[7];
        sum += p;
        sq += p * p;
    }
    let mean = sum / draws as f64;
    let se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    let unbiased = mean.abs() <= 3.0 * se;

    // targets continue the inputs; the mixed targets must continue the mixed inputs
    let full = random(&[10, 4], -1.0, 1.0, &mut rng);
    let xi = Tensor::new([6, 4], full.data()[..24].to_vec()).unwrap();
    let yi = Tensor::new([4, 4], full.data()[24..].to_vec()).unwrap();
    let cfg = MixupConfig {
        mode: MixupMode::Channel,
        sigma: 1.0,
    };
    let mut same_draw = true;
    for seed in 0..50 {
        let mut r1 = Rng::new(seed);
        let (xm, ym) = channel_mixup(&xi, &yi, &cfg, Phase::Train, &mut r1).unwrap();
        let d = MixupDraw::sample(4, 1.0, &mut Rng::new(seed));
        let whole = d.apply_rows(full.data());
        same_draw &= xm.data() == &whole[..24] && ym.data() == &whole[24..];
    }
    pass_if(
        identity && unbiased && same_draw,
        format!(
            "σ=0 identity {identity}; mean perturbation {mean:.4} vs 3·SE {:.4} over {draws} draws; shared (perm, λ) {same_draw}",
            3.0 * se
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5_patching() -> Outcome {
    let n96 = num_patches(96, 16, 8);
    let mut cases = 0;
    let mut mismatches = 0;
    for l in 1..=12 {
        for p in 1..=l {
            for s in 1..=l {
                let x = Tensor::from_fn([1, l, 2], |i| (i as f64) * 1.5 - 3.0);
                let got = patching(&x, p, s).unwrap();
                // pad each series with `s` copies of its last value
                for c in 0..2 {
                    let mut padded: Vec<f64> = (0..l).map(|t| x.data()[t * 2 + c]).collect();
                    let last = *padded.last().unwrap();
                    padded.extend(std::iter::repeat_n(last, s));
                    let n = (padded.len() - p) / s + 1;
                    if got.shape() != [1, 2, n, p] {
                        mismatches += 1;
                        continue;
                    }
                    for ni in 0..n {
                        for pi in 0..p {
                            if got.get(&[0, c, ni, pi]) != padded[ni * s + pi] {
                                mismatches += 1;
                            }
                        }
                    }
                }
                cases += 1;
            }
        }
    }
    pass_if(
        n96 == 12 && mismatches == 0,
        format!("N(96,16,8) = {n96}; {cases} enumerated (L,P,S) cases, {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6_ablation_wiring() -> Outcome {
    use AMode::{FeatureIndependent as FI, FeatureSpecific as FS};
    use DMode::{DataDependent as DD, Free as F};
    let table: [(AblationCase, bool, bool, AMode, DMode); 7] = [
        (AblationCase::Vanilla, true, true, FS, F),
        (AblationCase::Case1, false, true, FS, F),
        (AblationCase::Case2, true, false, FS, F),
        (AblationCase::Case3, false, false, FS, F),
        (AblationCase::Case4, true, true, FI, F),
        (AblationCase::Case5, true, true, FI, DD),
        (AblationCase::CMamba, false, true, FI, DD),
    ];
    let mut problems = Vec::new();
    let mut rng = Rng::new(606);
    for (case, conv, z, a, d) in table {
        let cfg = MambaBlockConfig::default().with_case(case);
        if (cfg.use_conv, cfg.use_z_branch, cfg.a_mode, cfg.d_mode) != (conv, z, a, d) {
            problems.push(format!("{} flags", case.label()));
        }
        let mut store = ParamStore::new();
        match MambaBlock::new(&mut store, "b", &cfg, &mut rng) {
            Ok(block) => {
                let trace = block.trace();
                if trace.contains(&"causal_conv") != conv || trace.contains(&"silu_gate") != z {
                    problems.push(format!("{} trace {trace:?}", case.label()));
                }
                if block.num_params(&store) != store.num_scalars() {
                    problems.push(format!("{} parameter count", case.label()));
                }
            }
            Err(e) => problems.push(format!("{}: {e}", case.label())),
        }
    }

    let count = |a_mode| {
        let mut store = ParamStore::new();
        let cfg = MambaBlockConfig {
            a_mode,
            ..MambaBlockConfig::default()
        };
        let block = MambaBlock::new(&mut store, "b", &cfg, &mut Rng::new(1)).unwrap();
        (block.ssm.a_param_count(&store), store.num_scalars())
    };
    let (fs, fs_total) = count(FS);
    let (fi, fi_total) = count(FI);
    let (e, s) = (128, 16);
    if fs - fi != (e - 1) * s || fs_total - fi_total != (e - 1) * s {
        problems.push(format!("A counts {fs} vs {fi}"));
    }

    let mut store = ParamStore::new();
    let vanilla = MambaBlock::new(&mut store, "v", &MambaBlockConfig::default().with_case(AblationCase::Vanilla), &mut rng).unwrap();
    let trace = vanilla.trace();
    if !(trace.contains(&"causal_conv") && trace.contains(&"skip_free_d")) {
        problems.push(format!("vanilla trace {trace:?}"));
    }
    pass_if(
        problems.is_empty(),
        format!("7 cases built; A params FS={fs} FI={fi}, difference {} = (E−1)·S; problems {problems:?}", fs - fi),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7_flops() -> Outcome {
    let ratio = |v: usize, gdd: bool| {
        let cfg = ExperimentConfig {
            channels: Some(v),
            d_model: 128,
            num_blocks: 3,
            look_back: 96,
            horizon: 96,
            use_gdd: gdd,
            ..ExperimentConfig::default()
        };
        experiment::run_flops(&cfg, 64).unwrap().increment_ratio()
    };
    let r: Vec<f64> = [7, 21, 321].iter().map(|&v| ratio(v, true)).collect();
    let off = ratio(7, false);
    let in_range = (0.001..=0.02).contains(&r[0]);
    let monotone = r[0] < r[1] && r[1] < r[2];
    pass_if(
        in_range && monotone && off == 0.0,
        format!(
            "increment V=7 {:.3}% (allowed 0.1%..2%), V=21 {:.3}%, V=321 {:.3}%; disabled {:.1}%",
            100.0 * r[0],
            100.0 * r[1],
            100.0 * r[2],
            100.0 * off
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8_overfit() -> Outcome {
    let started = Instant::now();
    let cfg = ModelConfig {
        look_back: 64,
        horizon: 16,
        channels: 4,
        patch_len: 16,
        stride: 8,
        num_blocks: 2,
        dropout: 0.0,
        gdd_expansion: 1.0,
        use_gdd: true,
        block: MambaBlockConfig {
            d_model: 32,
            ..MambaBlockConfig::default()
        },
    };
    let mut rng = Rng::new(808);
    let mut store = ParamStore::new();
    let model = CMambaModel::new(&mut store, &cfg, &mut rng).unwrap();
    let (x, y) = two_sinusoid_batch(8, 64, 16, 4, &mut rng);
    let mut adam = Adam::new(&store, 3e-3);
    let mut last = f64::NAN;
    for _ in 0..200 {
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &store, &x, None).unwrap();
        let l = loss(&mut tape, LossKind::L1, pred, &y).unwrap();
        last = tape.value(l).item();
        tape.backward_into(l, &mut store).unwrap();
        cmamba_core::train::clip_grad_norm(&mut store, 5.0);
        adam.step(&mut store).unwrap();
    }
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, &store, &x, None).unwrap();
    let l = loss(&mut tape, LossKind::L1, pred, &y).unwrap();
    let final_loss = tape.value(l).item();
    let elapsed = started.elapsed();
    pass_if(
        final_loss < 0.05 && elapsed < Duration::from_secs(120),
        format!(
            "train L1 after 200 steps {final_loss:.4} (last step {last:.4}, target < 0.05), {:.1}s (limit 120s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("synthetic.csv");
    std::fs::write(&csv, synthetic_csv(220, 3)).unwrap();
    let cfg = ExperimentConfig {
        dataset_path: Some(csv),
        look_back: 24,
        horizon: 8,
        patch_len: 8,
        stride: 4,
        d_model: 16,
        num_blocks: 2,
        dropout: 0.1,
        epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        seed: 99,
        ..ExperimentConfig::default()
    };
    let files = [
        experiment::REPORT_FILE,
        experiment::CHECKPOINT_FILE,
        experiment::PREDICTIONS_FILE,
        experiment::CONFIG_FILE,
    ];
    let read = |sub: &str| -> Vec<Vec<u8>> {
        run_train(&cfg, &dir.path().join(sub)).unwrap();
        files.iter().map(|f| std::fs::read(dir.path().join(sub).join(f)).unwrap()).collect()
    };
    let (a, b) = (read("a"), read("b"));
    let identical: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x == y).collect();
    pass_if(
        identical.iter().all(|&i| i),
        format!("byte-identical report/checkpoint/predictions/config: {identical:?}"),
    )
}

// ---------------------------------------------------------------- 10, 11

fn etth1_path() -> Option<PathBuf> {
    std::env::var_os("CMAMBA_ETTH1").map(PathBuf::from).filter(|p| p.exists())
}

/// Reduced desk-scale configuration for ETTh1, 96 → 96.
pub fn etth1_config(path: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        dataset_path: Some(path),
        dataset_name: Some("ETTh1".into()),
        look_back: 96,
        horizon: 96,
        d_model: 64,
        num_blocks: 2,
        d_state: 16,
        lr: 1e-3,
        sigma: 1.0,
        epochs: 10,
        patience: 3,
        ..ExperimentConfig::default()
    }
}

fn criterion_10_etth1() -> Outcome {
    let Some(path) = etth1_path() else {
        return Outcome::NotRun("ETTh1 CSV absent; set CMAMBA_ETTH1 to its path".into());
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_train(&etth1_config(path), dir.path()).unwrap().report;
    let (mse, mae) = report.test.expect("test split");
    pass_if(mse <= 0.45, format!("test MSE {mse:.4} (target ≤ 0.45), MAE {mae:.4}"))
}

fn criterion_11_mixup_direction() -> Outcome {
    let Some(path) = etth1_path() else {
        return Outcome::NotRun("ETTh1 CSV absent; set CMAMBA_ETTH1 to its path".into());
    };
    let dir = tempfile::tempdir().unwrap();
    let mut on = etth1_config(path);
    on.mixup = MixupMode::Channel;
    let mut off = on.clone();
    off.mixup = MixupMode::Off;
    let mse_on = run_train(&on, &dir.path().join("on")).unwrap().report.test.unwrap().0;
    let mse_off = run_train(&off, &dir.path().join("off")).unwrap().report.test.unwrap().0;
    pass_if(
        mse_on <= 1.05 * mse_off,
        format!("test MSE mixup on {mse_on:.4}, off {mse_off:.4} (allowed ≤ +5%)"),
    )
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(u32, &str, Check); 11] = [
        (1, "gradient correctness", criterion_1_gradients),
        (2, "scan oracle equivalence", criterion_2_scan_oracle),
        (3, "LTI convolution equivalence", criterion_3_lti),
        (4, "channel mixup properties", criterion_4_mixup),
        (5, "patching", criterion_5_patching),
        (6, "ablation wiring", criterion_6_ablation_wiring),
        (7, "FLOP accounting", criterion_7_flops),
        (8, "overfit sanity", criterion_8_overfit),
        (9, "determinism", criterion_9_determinism),
        (10, "desk-scale ETTh1", criterion_10_etth1),
        (11, "mixup ablation direction", criterion_11_mixup_direction),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Outcome::Pass(d) => println!("criterion {id:>2} PASS  {name}: {d}"),
            Outcome::Fail(d) => {
                println!("criterion {id:>2} FAIL  {name}: {d}");
                failed.push(id);
            }
            Outcome::NotRun(d) => println!("criterion {id:>2} NOT RUN  {name}: {d}"),
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Criterion 10 on its own; fails when the dataset is missing.
#[test]
#[ignore = "needs the ETTh1 CSV via CMAMBA_ETTH1 and about an hour of CPU"]
fn etth1_desk_scale() {
    assert!(etth1_path().is_some(), "CMAMBA_ETTH1 must point at ETTh1.csv");
    match criterion_10_etth1() {
        Outcome::Pass(d) => println!("{d}"),
        Outcome::Fail(d) | Outcome::NotRun(d) => panic!("{d}"),
    }
}

/// Criterion 11 on its own; fails when the dataset is missing.
#[test]
#[ignore = "needs the ETTh1 CSV via CMAMBA_ETTH1 and about two hours of CPU"]
fn etth1_mixup_direction() {
    assert!(etth1_path().is_some(), "CMAMBA_ETTH1 must point at ETTh1.csv");
    match criterion_11_mixup_direction() {
        Outcome::Pass(d) => println!("{d}"),
        Outcome::Fail(d) | Outcome::NotRun(d) => panic!("{d}"),
    }
}
