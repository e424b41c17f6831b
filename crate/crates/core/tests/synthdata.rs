use btw::predictions::Targets;
use btw::synthdata::{generate, Nonlinearity, SyntheticSpec};
use btw::tinymoe::Task;
use btw::trainloop::{prepare_data, run_experiment, train_unimodal_all, DataSource, ExperimentConfig};
use nalgebra::{DMatrix, DVector};

fn regression_targets(t: &Targets) -> &[f64] {
    match t {
        Targets::Regression(y) => y,
        Targets::Classification { .. } => panic!("expected regression targets"),
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn informative_modality_is_linearly_decodable() {
    let mut spec = SyntheticSpec::desk_scale(vec![1.0, 0.0], Task::Regression, 5);
    spec.noise_sigma = 0.0;
    spec.nonlinearity = Nonlinearity::Linear;
    let ds = generate(&spec).unwrap();
    let y = regression_targets(ds.targets());

    // least squares with an intercept column
    let x0 = &ds.features()[0];
    let d = x0.cols();
    let design = DMatrix::from_fn(ds.n_instances(), d + 1, |i, j| if j == d { 1.0 } else { x0.row(i)[j] });
    let target = DVector::from_column_slice(y);
    let coef = design.clone().svd(true, true).solve(&target, 1e-12).unwrap();
    let mse = (&design * coef - &target).norm_squared() / ds.n_instances() as f64;
    assert!(mse < 1e-10, "probe mse {mse}");

    let x1 = &ds.features()[1];
    for j in 0..x1.cols() {
        let col: Vec<f64> = x1.iter_rows().map(|r| r[j]).collect();
        let c = correlation(&col, y);
        assert!(c.abs() < 0.1, "noise dim {j} correlates {c}");
    }
}

fn moments(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let mut out = means.clone();
    for (a, ca) in cols.iter().enumerate() {
        for (b, cb) in cols.iter().enumerate().skip(a) {
            out.push(
                ca.iter()
                    .zip(cb)
                    .map(|(u, v)| (u - means[a]) * (v - means[b]))
                    .sum::<f64>()
                    / n,
            );
        }
        out.push(ca.iter().zip(y).map(|(u, t)| (u - means[a]) * t).sum::<f64>() / n);
    }
    out
}

#[test]
fn shared_stream_modalities_are_exchangeable() {
    let mut spec = SyntheticSpec::desk_scale(vec![0.5, 0.5], Task::Regression, 9);
    spec.n_instances = 10_000;
    spec.stream_seeds = Some(vec![77, 77]);
    let ds = generate(&spec).unwrap();
    let mut swapped = ds.clone();
    swapped.swap_modalities(0, 1);
    let y = regression_targets(ds.targets());
    let cols = |m: &btw::tensor::Matrix| -> Vec<Vec<f64>> {
        (0..m.cols()).map(|j| m.iter_rows().map(|r| r[j]).collect()).collect()
    };
    let before = moments(&cols(&ds.features()[0]), y);
    let after = moments(&cols(&swapped.features()[0]), y);
    let worst = before
        .iter()
        .zip(&after)
        .fold(0.0_f64, |w, (a, b)| w.max((a - b).abs()));
    assert!(worst < 0.05, "largest moment gap {worst}");
}

#[test]
fn classification_counts_are_balanced() {
    let mut spec = SyntheticSpec::desk_scale(vec![0.8], Task::Classification { n_classes: 4 }, 1);
    spec.n_instances = 4000;
    let ds = generate(&spec).unwrap();
    let Targets::Classification { labels, .. } = ds.targets() else {
        panic!()
    };
    for c in 0..4 {
        let count = labels.iter().filter(|&&l| l == c).count();
        assert!(count.abs_diff(1000) <= 1, "class {c}: {count}");
    }
}

fn two_modality_config(seed: u64, informativeness: Vec<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::noise_default(seed);
    if let DataSource::Synthetic(spec) = &mut cfg.data {
        spec.modality_dims = vec![16; informativeness.len()];
        spec.informativeness = informativeness;
    }
    cfg
}

#[test]
fn more_informative_modality_predicts_better() {
    for s in 0..5 {
        let cfg = two_modality_config(s, vec![0.9, 0.1]);
        let data = prepare_data(&cfg).unwrap();
        let uni = train_unimodal_all(&cfg, &data).unwrap();
        let (good, bad) = (
            uni.val_metrics[0].get("mae").unwrap(),
            uni.val_metrics[1].get("mae").unwrap(),
        );
        assert!(good < bad, "seed {s}: val MAE {good} vs {bad}");
    }
}

#[test]
fn noise_modality_carries_less_information() {
    let mut hits = 0;
    for s in 0..10 {
        let out = run_experiment(&two_modality_config(s, vec![0.9, 0.0])).unwrap();
        let mi = out.trajectory.mi.last().unwrap();
        if mi[1] < mi[0] {
            hits += 1;
        }
    }
    assert!(hits >= 9, "noise modality had the smaller MI in {hits}/10 seeds");
}
