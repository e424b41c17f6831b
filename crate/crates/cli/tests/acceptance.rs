//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::fs;
use std::time::{Duration, Instant};

use btw::distkl::{gaussian_kl, kl_quadrature_oracle, GaussianParams};
use btw::metrics::{acc_k, f1_scores, mae, pearson, AccK, ClassificationEval, F1Scores, RegressionEval};
use btw::miest::{discrete_mi, gaussian_mi_analytic, ksg_mi, LabelSeries, ScoreSeries};
use btw::seed;
use btw::synthdata::SplitTag;
use btw::tinymoe::{grad_check, LossTargets, ModelParams, Task};
use btw::trainloop::{
    model_config, prepare_data, run_experiment, DataSource, ExperimentConfig, ExperimentOutput, SplitData, Variant,
};
use btw::weights::ROW_SUM_TOLERANCE;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn run(cfg: &ExperimentConfig) -> ExperimentOutput {
    run_experiment(cfg).unwrap_or_else(|e| panic!("{} seed {}: {e}", cfg.variant, cfg.seed))
}

fn config(seed: u64, variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::noise_default(seed);
    cfg.variant = variant;
    cfg
}

fn kl_correctness() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seed::rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = GaussianParams::new(rng.random_range(-10.0..=10.0), rng.random_range(0.01..=100.0)).unwrap();
        let q = GaussianParams::new(rng.random_range(-10.0..=10.0), rng.random_range(0.01..=100.0)).unwrap();
        let oracle = kl_quadrature_oracle(&p, &q, 100_000).unwrap();
        worst = worst.max((gaussian_kl(&p, &q) - oracle).abs());
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(5),
        format!(
            "max |closed form - quadrature| = {worst:.2e} over 100 pairs, {:.2} s",
            secs(elapsed)
        ),
    )
}

fn bivariate(n: usize, rho: f64, s: u64) -> (ScoreSeries, ScoreSeries) {
    let mut rng = seed::rng(s);
    let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (ScoreSeries::new(x).unwrap(), ScoreSeries::new(y).unwrap())
}

fn mi_accuracy() -> Outcome {
    let t0 = Instant::now();
    let analytic = gaussian_mi_analytic(0.9).unwrap();
    let mut correlated = Vec::new();
    let mut independent = Vec::new();
    for s in 0..5 {
        let (x, y) = bivariate(10_000, 0.9, 100 + s);
        correlated.push(ksg_mi(&x, &y, 3, s).unwrap());
        let (x, y) = bivariate(10_000, 0.0, 200 + s);
        independent.push(ksg_mi(&x, &y, 3, s).unwrap());
    }
    let mean = correlated.iter().sum::<f64>() / 5.0;
    let worst_indep = independent.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let elapsed = t0.elapsed();
    outcome(
        (mean - analytic).abs() <= 0.05 && worst_indep <= 0.02 && elapsed < Duration::from_secs(30),
        format!(
            "mean KSG {mean:.5} vs analytic {analytic:.5}; max |MI| independent {worst_indep:.4}; {:.2} s",
            secs(elapsed)
        ),
    )
}

fn empirical_entropy(labels: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

fn discrete_mi_identities() -> Outcome {
    let mut rng = seed::rng(33);
    let mut worst: f64 = 0.0;
    let mut asymmetric = 0;
    for _ in 0..50 {
        let n = rng.random_range(5..400);
        let ka = rng.random_range(1..8);
        let kb = rng.random_range(1..8);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        let la = LabelSeries::new(a.clone(), ka).unwrap();
        let lb = LabelSeries::new(b, kb).unwrap();
        worst = worst.max((discrete_mi(&la, &la).unwrap() - empirical_entropy(&a)).abs());
        if discrete_mi(&la, &lb).unwrap().to_bits() != discrete_mi(&lb, &la).unwrap().to_bits() {
            asymmetric += 1;
        }
    }
    outcome(
        worst <= 1e-12 && asymmetric == 0,
        format!("max |I(a;a) - H(a)| = {worst:.2e} over 50 series; {asymmetric} asymmetric pairs"),
    )
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for task in [Task::Regression, Task::Classification { n_classes: 4 }] {
        let mut cfg = ExperimentConfig::noise_default(0);
        if let DataSource::Synthetic(spec) = &mut cfg.data {
            spec.task = task;
        }
        let data = prepare_data(&cfg).unwrap();
        let train = SplitData::from_dataset(&data.dataset, SplitTag::Train).unwrap();
        let idx: Vec<usize> = (0..cfg.batch_size).collect();
        let batch = train.batch.gather(&idx);
        let model = ModelParams::init(model_config(&cfg, &data.dataset).unwrap(), 0).unwrap();
        let err = match &train.targets {
            btw::predictions::Targets::Regression(y) => {
                grad_check(&model, &batch, LossTargets::Regression(&y[..idx.len()]), 50, 1e-5, 0)
            }
            btw::predictions::Targets::Classification { labels, .. } => grad_check(
                &model,
                &batch,
                LossTargets::Classification(&labels[..idx.len()]),
                50,
                1e-5,
                0,
            ),
        }
        .unwrap();
        pass &= err < 1e-4;
        parts.push(format!("{task:?} {err:.2e}"));
    }
    let elapsed = t0.elapsed();
    outcome(
        pass && elapsed < Duration::from_secs(10),
        format!("max relative error: {}; {:.2} s", parts.join(", "), secs(elapsed)),
    )
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn reduction_identities() -> Outcome {
    let mut uniform = config(0, Variant::Btw);
    uniform.hooks.force_uniform_mi = true;
    let bilevel = run(&uniform);
    let local = run(&config(0, Variant::BtwLocal));
    let weights_match = bilevel.trajectory.weights.len() == local.trajectory.weights.len()
        && bilevel
            .trajectory
            .weights
            .iter()
            .zip(&local.trajectory.weights)
            .all(|((ea, a), (eb, b))| ea == eb && a.rows().zip(b.rows()).all(|(ra, rb)| bits_equal(ra, rb)));

    let mut ones = config(0, Variant::BtwLocal);
    ones.hooks.force_unit_weights = true;
    let hooked = run(&ones);
    let plain = run(&config(0, Variant::Unweighted));
    let losses =
        |o: &ExperimentOutput| -> Vec<f64> { o.records.iter().flat_map(|r| [r.train_loss, r.val_loss]).collect() };
    let losses_match = bits_equal(&losses(&hooked), &losses(&plain));
    outcome(
        weights_match && losses_match,
        format!(
            "uniform-MI btw weights == btw_local: {weights_match} ({} epochs); unit-weight btw_local losses == unweighted: {losses_match} ({} epochs)",
            local.trajectory.weights.len(),
            plain.records.len()
        ),
    )
}

fn noise_demotion() -> Outcome {
    let t0 = Instant::now();
    let mut hits = 0;
    let mut noise_weights = Vec::new();
    for s in 0..10 {
        let out = run(&config(s, Variant::Btw));
        let w = out.final_mi_weights().expect("btw records MI");
        let noise = w[2];
        if w[..2].iter().all(|&v| noise < v) {
            hits += 1;
        }
        noise_weights.push(format!("{noise:.3}"));
    }
    let elapsed = t0.elapsed();
    outcome(
        hits >= 9 && elapsed < Duration::from_secs(300),
        format!(
            "noise modality has the smallest MI weight in {hits}/10 seeds (weights {}); {:.1} s",
            noise_weights.join(" "),
            secs(elapsed)
        ),
    )
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let mean_metric = |variant: Variant, metric: &str| -> f64 {
        (0..5)
            .map(|s| run(&config(s, variant)).test_metrics.get(metric).unwrap())
            .sum::<f64>()
            / 5.0
    };
    let base_mae = mean_metric(Variant::Unweighted, "mae");
    let base_acc5 = mean_metric(Variant::Unweighted, "acc5");
    let local_mae = mean_metric(Variant::BtwLocal, "mae");
    let btw_acc5 = mean_metric(Variant::Btw, "acc5");
    let elapsed = t0.elapsed();
    outcome(
        local_mae <= base_mae && btw_acc5 >= base_acc5 && elapsed < Duration::from_secs(600),
        format!(
            "mean test MAE btw_local {local_mae:.4} vs unweighted {base_mae:.4}; mean Acc-5 btw {btw_acc5:.4} vs unweighted {base_acc5:.4}; {:.1} s",
            secs(elapsed)
        ),
    )
}

fn smoothing_contract() -> Outcome {
    let mut configs: Vec<ExperimentConfig> = [
        Variant::Btw,
        Variant::BtwLocal,
        Variant::BtwGlobalKl,
        Variant::BtwGlobalMi,
    ]
    .into_iter()
    .map(|v| config(3, v))
    .collect();
    let mut cls = config(3, Variant::Btw);
    if let DataSource::Synthetic(spec) = &mut cls.data {
        spec.task = Task::Classification { n_classes: 4 };
    }
    configs.push(cls);

    let mut problems = Vec::new();
    let mut alphas_seen = 0;
    let mut rows_seen = 0;
    for cfg in &configs {
        let out = run(cfg);
        let mut prev = cfg.smoothing.initial;
        for &(epoch, a) in &out.trajectory.alphas {
            alphas_seen += 1;
            if !(0.1 - 1e-12..=0.9 + 1e-12).contains(&a) {
                problems.push(format!("{} epoch {epoch}: alpha {a}", cfg.variant));
            }
            let step = (a - prev).abs();
            if step > 1e-12 && (step - 0.1).abs() > 1e-12 {
                problems.push(format!("{} epoch {epoch}: alpha step {step}", cfg.variant));
            }
            prev = a;
        }
        for (epoch, w) in &out.trajectory.weights {
            for row in w.rows() {
                rows_seen += 1;
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|v| *v < 0.0) {
                    problems.push(format!("{} epoch {epoch}: row sums to {sum}", cfg.variant));
                    break;
                }
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "{alphas_seen} alpha values and {rows_seen} weight rows over {} runs{}",
            configs.len(),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; violations: {}", problems.join("; "))
            }
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, btw_cli::DEFAULT_CONFIG).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    btw_cli::cmd_train(&cfg_path, &a, false).unwrap();
    btw_cli::cmd_train(&cfg_path, &b, false).unwrap();
    let same = |name: &str| fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap();
    let records = same("records.csv");
    let weights = same("weights_trajectory.csv");
    outcome(
        records && weights,
        format!("records.csv identical: {records}; weights_trajectory.csv identical: {weights}"),
    )
}

fn reg(p: &[f64], t: &[f64]) -> RegressionEval {
    RegressionEval::new(p.to_vec(), t.to_vec()).unwrap()
}

fn metric_protocol() -> Outcome {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let s = [-3.0, -1.0, 0.0, 2.0, 3.0];
    check("acc7 identity", acc_k(&reg(&s, &s), AccK::Seven) == 1.0);
    check(
        "acc7 round 2.6 -> 3",
        acc_k(&reg(&[2.6, 0.0], &[3.0, 0.0]), AccK::Seven) == 1.0,
    );
    check(
        "acc7 clamp",
        acc_k(&reg(&[5.0, -4.0], &[2.0, -2.0]), AccK::Seven) == 0.0,
    );
    check("acc5 clamp", acc_k(&reg(&[5.0, -4.0], &[2.0, -2.0]), AccK::Five) == 1.0);
    check(
        "acc2 non-zero",
        acc_k(&reg(&[0.1, -0.1], &[0.0, -2.0]), AccK::TwoNonZero) == 1.0,
    );
    check(
        "acc2 include-zero",
        acc_k(&reg(&[0.1, -0.1], &[0.0, -2.0]), AccK::TwoIncludeZero) == 0.5,
    );
    check(
        "acc2 non-zero empty",
        acc_k(&reg(&[1.0, 1.0], &[0.0, 0.0]), AccK::TwoNonZero) == 0.0,
    );
    check("mae", mae(&reg(&[0.0, 0.0], &[1.0, -1.0])) == 1.0);
    let t = [0.5, -1.0, 2.0, 0.0];
    let affine: Vec<f64> = t.iter().map(|v| 2.0 * v + 1.0).collect();
    check("pearson affine", (pearson(&reg(&affine, &t)).value - 1.0).abs() < 1e-12);
    check("pearson constant", pearson(&reg(&[0.3; 4], &t)).degenerate);

    let perfect = ClassificationEval::new(vec![0, 1, 2, 3], vec![0, 1, 2, 3]).unwrap();
    check(
        "f1 perfect",
        f1_scores(&perfect)
            == F1Scores {
                macro_f1: 1.0,
                weighted_f1: 1.0,
                accuracy: 1.0,
            },
    );
    let all_zero = f1_scores(&ClassificationEval::new(vec![0, 0, 0, 0], vec![0, 0, 1, 1]).unwrap());
    check(
        "f1 constant predictor",
        all_zero.accuracy == 0.5 && (all_zero.macro_f1 - 1.0 / 3.0).abs() < 1e-15,
    );
    let unequal = f1_scores(&ClassificationEval::new(vec![0, 0, 0], vec![0, 0, 1]).unwrap());
    check(
        "f1 unequal support",
        (unequal.macro_f1 - 0.4).abs() < 1e-15 && (unequal.weighted_f1 - 0.8 * 2.0 / 3.0).abs() < 1e-15,
    );
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            "13 examples".to_string()
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("KL correctness", kl_correctness),
        ("MI estimator accuracy", mi_accuracy),
        ("discrete MI identities", discrete_mi_identities),
        ("gradient fidelity", gradient_fidelity),
        ("reduction identities", reduction_identities),
        ("noise-modality demotion", noise_demotion),
        ("end-to-end improvement", end_to_end),
        ("smoothing contract", smoothing_contract),
        ("determinism", determinism),
        ("metric protocol", metric_protocol),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        let o = f();
        println!(
            "criterion {n} {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(n.to_string());
        }
    }
    println!("acceptance: {}/10 passed", 10 - failed.len());
    if !failed.is_empty() {
        println!("failing criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
