//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use fsvae::cli::{cmd_train, loss_bench, RunConfig};
use fsvae::crossvae::{objective, StepNoise, TrainBatch, VaeConfig, VaeParams};
use fsvae::frequency::{
    dct_forward, enhance_sequence, idct, redistributed_energy, signal_energy, EnhancementConfig, EnhancementMode,
    MotionSequence,
};
use fsvae::losses::{
    calibrated_pair, elbo, kl_diag_gaussian, sample_negatives, AlignmentBatch, AlignmentLoss, LossConfig,
};
use fsvae::numkit::{grad_check, standard_normal, DenseMatrix, RngSeed, DEFAULT_FD_STEP};
use fsvae::pipeline::{harmonic_mean, run_pipeline};
use fsvae::synthbench::{bench_pipeline_config, generate, oracle_nearest_prototype, SynthConfig};
use fsvae::ClassId;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_sequence(rng: &mut impl Rng, j: usize, c: usize, f: usize) -> MotionSequence {
    MotionSequence::new(j, c, f, (0..j * c * f).map(|_| standard_normal(rng)).collect()).unwrap()
}

fn dct_inputs() -> Vec<MotionSequence> {
    let mut rng = RngSeed::new(2024, 0).rng();
    (0..100).map(|_| random_sequence(&mut rng, 25, 3, 64)).collect()
}

fn c01_round_trip() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for x in dct_inputs() {
        let back = idct(&dct_forward(&x).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(x.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-9 && secs < 5.0, format!("max abs error {worst:.2e}, {secs:.3} s"))
}

fn c02_parseval() -> Outcome {
    let mut worst = 0.0f64;
    for x in dct_inputs() {
        let e = signal_energy(&x);
        worst = worst.max((signal_energy(&dct_forward(&x).unwrap()) - e).abs() / e);
    }
    ensure(worst < 1e-12, format!("max relative error {worst:.2e}"))
}

fn random_config(rng: &mut impl Rng, frames: usize) -> EnhancementConfig {
    let mode = if rng.random_bool(0.5) {
        EnhancementMode::Piecewise
    } else {
        EnhancementMode::LearnableOnly
    };
    let phi = rng.random_range(0..frames);
    let b = rng.random_range(0.5..frames as f64);
    let mut cfg = if rng.random_bool(0.5) {
        EnhancementConfig::per_coefficient(frames, mode, phi, b, 0.0)
    } else {
        EnhancementConfig::uniform_bands(frames, rng.random_range(1..=frames), mode, phi, b, 0.0).unwrap()
    };
    for w in &mut cfg.weights {
        *w = rng.random();
    }
    cfg
}

fn c03_redistribution() -> Outcome {
    let mut rng = RngSeed::new(7, 0).rng();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = rng.random_range(2..80);
        let x = random_sequence(&mut rng, 4, 3, f);
        let cfg = random_config(&mut rng, f);
        let expected = redistributed_energy(&dct_forward(&x).unwrap(), &cfg).unwrap();
        let got = signal_energy(&enhance_sequence(&x, &cfg).unwrap());
        worst = worst.max((got - expected).abs() / expected);
    }
    ensure(worst < 1e-9, format!("50 configs, max relative error {worst:.2e}"))
}

fn c04_identity() -> Outcome {
    let mut rng = RngSeed::new(8, 0).rng();
    let mut worst = 0.0f64;
    for x in dct_inputs().iter().take(20) {
        let per = EnhancementConfig::per_coefficient(64, EnhancementMode::Piecewise, 35, 30.0, 0.0);
        let bands =
            EnhancementConfig::uniform_bands(64, rng.random_range(1..=64), EnhancementMode::Piecewise, 20, 8.0, 0.0)
                .unwrap();
        for cfg in [per, bands] {
            let y = enhance_sequence(x, &cfg).unwrap();
            for (a, b) in y.values().iter().zip(x.values()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst < 1e-12, format!("max abs error {worst:.2e}"))
}

fn c05_symmetry() -> Outcome {
    let mut rng = RngSeed::new(5, 0).rng();
    let mut worst = 0.0f64;
    for lambda in [1.0, 10.0, 100.0] {
        for _ in 0..10_000 {
            let a = 400.0 * (rng.random::<f64>() - 0.5);
            worst = worst.max((calibrated_pair(a, lambda) + calibrated_pair(-a, lambda) - 1.0).abs());
        }
    }
    let cfg = LossConfig::default();
    let points = [(0.5, 1.0), (1.0, 1.0), (0.0, 5.0), (2.0, 0.3), (10.0, 0.0)];
    let mut witnesses = Vec::new();
    for loss in AlignmentLoss::ALL.into_iter().filter(|l| *l != AlignmentLoss::Calibrated) {
        let sums: Vec<f64> = points.iter().map(|&(p, n)| loss.exchange_sum(p, n, &cfg).unwrap()).collect();
        let (lo, hi) = sums
            .iter()
            .enumerate()
            .fold((0, 0), |(lo, hi), (i, s)| (if *s < sums[lo] { i } else { lo }, if *s > sums[hi] { i } else { hi }));
        if sums[hi] - sums[lo] <= 1e-9 {
            return Err(format!("{loss}: no witness found"));
        }
        witnesses.push(format!(
            "{loss} {:?}->{:.4} vs {:?}->{:.4}",
            points[lo], sums[lo], points[hi], sums[hi]
        ));
    }
    ensure(worst < 1e-12, format!("max |l(a)+l(-a)-1| {worst:.2e}; {}", witnesses.join("; ")))
}

fn c06_exchangeability() -> Outcome {
    let cfg = LossConfig::default();
    let loss = AlignmentLoss::Calibrated;
    let mut rng = RngSeed::new(6, 0).rng();
    let mut pointwise = 0.0f64;
    let n = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        // squared distances of 8-dim standard normal differences
        let mut draw = || (0..8).map(|_| standard_normal(&mut rng).powi(2)).sum::<f64>() * 2.0;
        let (dp, dn) = (draw(), draw());
        pointwise = pointwise.max((loss.exchange_sum(dp, dn, &cfg).unwrap() - 1.0).abs());
        let v = loss.pair_term(dp, dn, &cfg).unwrap();
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    ensure(
        pointwise < 1e-12 && (mean - 0.5).abs() < 3.0 * se,
        format!("pair-sum error {pointwise:.2e}; mean {mean:.6} (0.5 +/- {:.2e})", 3.0 * se),
    )
}

fn alignment_batch(seed: u64) -> AlignmentBatch {
    let mut rng = RngSeed::new(seed, 0).rng();
    let mut m = |r, c| DenseMatrix::from_fn(r, c, |_, _| standard_normal(&mut rng));
    let (text, skeleton, skel_to_text, text_to_skel) = (m(6, 4), m(6, 3), m(6, 4), m(6, 3));
    let labels: Vec<ClassId> = (0..6).map(|i| (i % 3) as ClassId).collect();
    let negatives = sample_negatives(&labels, &mut RngSeed::new(seed, 1).rng()).unwrap();
    AlignmentBatch {
        text,
        skeleton,
        skel_to_text,
        text_to_skel,
        labels,
        negatives,
    }
}

fn c07_gradients() -> Outcome {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let batch = alignment_batch(70);
    let parts = |b: &AlignmentBatch| -> Vec<f64> {
        [&b.text, &b.skeleton, &b.skel_to_text, &b.text_to_skel]
            .iter()
            .flat_map(|m| m.data().to_vec())
            .collect()
    };
    let rebuild = |flat: &[f64]| -> AlignmentBatch {
        let mut b = batch.clone();
        let mut off = 0;
        for m in [&mut b.text, &mut b.skeleton, &mut b.skel_to_text, &mut b.text_to_skel] {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        b
    };
    for lambda in [1.5, 100.0] {
        let cfg = LossConfig {
            lambda,
            margin: 0.5,
            ..LossConfig::default()
        };
        for loss in AlignmentLoss::ALL {
            let lv = loss.evaluate(&batch, &cfg).map_err(|e| e.to_string())?;
            let g = &lv.grads;
            let analytic: Vec<f64> = [&g.text, &g.skeleton, &g.skel_to_text, &g.text_to_skel]
                .iter()
                .flat_map(|m| m.data().to_vec())
                .collect();
            let r = grad_check(
                |p| loss.evaluate(&rebuild(p), &cfg).unwrap().value,
                &parts(&batch),
                &analytic,
                DEFAULT_FD_STEP,
            )
            .map_err(|e| e.to_string())?;
            worst.push((format!("{loss}/lambda={lambda}"), r.max_rel_error));
        }
    }

    let mut rng = RngSeed::new(71, 0).rng();
    let mut take = |r, c| DenseMatrix::from_fn(r, c, |_, _| standard_normal(&mut rng));
    let (x, xh, mu, lv) = (take(4, 5), take(4, 5), take(4, 3), take(4, 3));
    let (ev, _) = elbo(&x, &xh, &mu, &lv, 0.7).map_err(|e| e.to_string())?;
    let flat: Vec<f64> = [&x, &xh, &mu, &lv].iter().flat_map(|m| m.data().to_vec()).collect();
    let analytic: Vec<f64> = [&ev.grads.features, &ev.grads.recon, &ev.grads.mu, &ev.grads.logvar]
        .iter()
        .flat_map(|m| m.data().to_vec())
        .collect();
    let r = grad_check(
        |p| {
            let m = |off: usize, r: usize, c: usize| DenseMatrix::from_vec(r, c, p[off..off + r * c].to_vec()).unwrap();
            elbo(&m(0, 4, 5), &m(20, 4, 5), &m(40, 4, 3), &m(52, 4, 3), 0.7).unwrap().0.value
        },
        &flat,
        &analytic,
        DEFAULT_FD_STEP,
    )
    .map_err(|e| e.to_string())?;
    worst.push(("elbo".into(), r.max_rel_error));

    let net = VaeConfig {
        skeleton_dim: 5,
        text_dim: 4,
        latent_dim: 3,
        hidden: vec![6],
    };
    let params = VaeParams::seeded(&net, &mut RngSeed::new(72, 0).rng()).map_err(|e| e.to_string())?;
    let mut rng = RngSeed::new(73, 0).rng();
    let batch = TrainBatch {
        skeleton: DenseMatrix::from_fn(6, 5, |_, _| standard_normal(&mut rng)),
        text: DenseMatrix::from_fn(6, 4, |_, _| standard_normal(&mut rng)),
        labels: (0..6).map(|i| (i % 3) as ClassId).collect(),
    };
    let noise = StepNoise::sample(&batch.labels, 3, &mut rng).map_err(|e| e.to_string())?;
    let cfg = LossConfig {
        lambda: 2.0,
        alpha: 0.5,
        beta: 0.8,
        margin: 0.5,
    };
    for loss in AlignmentLoss::ALL {
        let eval = objective(&params, &batch, &noise, loss, &cfg).map_err(|e| e.to_string())?;
        let r = grad_check(
            |flat| {
                let mut p = params.clone();
                p.set_flat(flat).unwrap();
                objective(&p, &batch, &noise, loss, &cfg).unwrap().breakdown.total
            },
            &params.to_flat(),
            &eval.param_grads,
            DEFAULT_FD_STEP,
        )
        .map_err(|e| e.to_string())?;
        worst.push((format!("stage2/{loss}"), r.max_rel_error));
    }

    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, e)| *e >= 1e-4)
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    ensure(
        bad.is_empty(),
        format!("{} checks, max relative error {max:.2e} {}", worst.len(), bad.join(" ")),
    )
}

fn c08_kl() -> Outcome {
    let mut rng = RngSeed::new(8, 1).rng();
    for _ in 0..10_000 {
        let mu: Vec<f64> = (0..4).map(|_| 3.0 * standard_normal(&mut rng)).collect();
        let lv: Vec<f64> = (0..4).map(|_| 4.0 * standard_normal(&mut rng)).collect();
        let kl = kl_diag_gaussian(&mu, &lv);
        if kl.is_nan() || kl < 0.0 {
            return Err(format!("negative KL {kl} at {mu:?} {lv:?}"));
        }
    }
    let n = 1_000_000;
    let mut worst_z = 0.0f64;
    for _ in 0..20 {
        let mu = standard_normal(&mut rng);
        let lv = rng.random_range(-1.5..1.0);
        let sd = (0.5 * lv as f64).exp();
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let eps = standard_normal(&mut rng);
            let z = mu + sd * eps;
            // log q(z) - log p(z)
            let v = -0.5 * lv - 0.5 * eps * eps + 0.5 * z * z;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        worst_z = worst_z.max((mean - kl_diag_gaussian(&[mu], &[lv])).abs() / se);
    }
    ensure(worst_z < 3.0, format!("KL >= 0 on 10^4 draws; worst Monte Carlo deviation {worst_z:.2} SE"))
}

fn c09_harmonic_mean() -> Outcome {
    let h = harmonic_mean(77.0, 74.5);
    let ok = (h - 75.7).abs() < 0.05
        && [0.0, 0.3, 0.77, 1.0, 55.5].iter().all(|&x| harmonic_mean(x, x) == x && harmonic_mean(x, 0.0) == 0.0);
    ensure(ok, format!("H(77.0, 74.5) = {h:.4}"))
}

fn c10_clean_zsl() -> Outcome {
    let start = Instant::now();
    let generated = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let (model, _) =
        run_pipeline(&generated.dataset, &generated.split, &generated.table, &bench_pipeline_config())
            .map_err(|e| e.to_string())?;
    let acc = model.evaluate_zsl(&generated.dataset).map_err(|e| e.to_string())?.accuracy;
    let oracle = oracle_nearest_prototype(&generated).map_err(|e| e.to_string())?.zsl_accuracy;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        acc >= 0.9 && secs < 180.0 && oracle >= acc,
        format!("unseen accuracy {acc:.4} (oracle {oracle:.4}), {secs:.1} s"),
    )
}

fn c11_loss_robustness() -> Outcome {
    let cfg = RunConfig {
        pipeline: bench_pipeline_config(),
        ..RunConfig::default()
    };
    let losses = [AlignmentLoss::Calibrated, AlignmentLoss::TripletLogSigmoid];
    let table = loss_bench(&cfg, &[0.2], &[0, 1, 2, 3, 4], &losses).map_err(|e| e.to_string())?;
    let (cal, t2) = (&table.accuracy[0][0], &table.accuracy[0][1]);
    let wins = cal.iter().zip(t2).filter(|(c, t)| c >= t).count();
    ensure(wins >= 4, format!("calibrated >= t2 in {wins}/5 seeds; calibrated {cal:?} t2 {t2:?}"))
}

fn c12_enhancement_ablation() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let generated = generate(&SynthConfig {
            jitter: 0.5,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let oracle = oracle_nearest_prototype(&generated).map_err(|e| e.to_string())?.zsl_accuracy;
        let mut acc = [0.0; 2];
        for (k, mode) in [EnhancementMode::Piecewise, EnhancementMode::LearnableOnly].into_iter().enumerate() {
            let cfg = fsvae::pipeline::PipelineConfig {
                seed,
                enhancement_mode: mode,
                ..bench_pipeline_config()
            };
            let (model, _) =
                run_pipeline(&generated.dataset, &generated.split, &generated.table, &cfg).map_err(|e| e.to_string())?;
            acc[k] = model.evaluate_zsl(&generated.dataset).map_err(|e| e.to_string())?.accuracy;
        }
        wins += usize::from(acc[0] >= acc[1]);
        rows.push(format!("{:.3}/{:.3} (oracle {oracle:.3})", acc[0], acc[1]));
    }
    ensure(wins >= 4, format!("piecewise >= learnable-only in {wins}/5 seeds: {}", rows.join(", ")))
}

fn c13_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    generate(&SynthConfig::default())
        .and_then(|g| g.write_files(&data))
        .map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let cfg = RunConfig {
            pipeline: fsvae::pipeline::PipelineConfig {
                epochs: 30,
                seed: 11,
                ..bench_pipeline_config()
            },
            data_dir: Some(data.clone()),
            out_dir: Some(dir.path().join(run)),
            ..RunConfig::default()
        };
        let out = cmd_train(&cfg).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(&out.checkpoint).map_err(|e| e.to_string())?;
        let log = std::fs::read(&out.loss_log).map_err(|e| e.to_string())?;
        bytes.push((ckpt, log));
    }
    ensure(
        bytes[0] == bytes[1],
        format!("checkpoints of {} bytes, identical: {}", bytes[0].0.len(), bytes[0] == bytes[1]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("DCT round trip", c01_round_trip),
        ("energy preservation", c02_parseval),
        ("energy redistribution", c03_redistribution),
        ("identity enhancement", c04_identity),
        ("calibrated symmetry", c05_symmetry),
        ("exchangeability balance", c06_exchangeability),
        ("gradient checks", c07_gradients),
        ("KL divergence", c08_kl),
        ("harmonic mean", c09_harmonic_mean),
        ("end-to-end clean ZSL", c10_clean_zsl),
        ("loss robustness direction", c11_loss_robustness),
        ("enhancement ablation direction", c12_enhancement_ablation),
        ("training determinism", c13_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
