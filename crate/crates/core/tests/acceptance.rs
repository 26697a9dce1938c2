//! End-to-end acceptance run. Prints one line per criterion and exits non-zero
//! if any criterion fails or overruns its time budget.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gp_sgd::cli::studies::{surrogate_curve, Protocol};
use gp_sgd::data::{draw_inputs, normalize, simulate_function, simulate_gp, train_test_split, InputDistribution, TestFunction};
use gp_sgd::diagnostics::{
    conditional_expected_gradient, curvature, curvature_experiment, eigendecay_fit, gaussian_beta,
    monte_carlo_gradient, CurvatureStudy, DecayFamily,
};
use gp_sgd::kernels::{kernel_matrix, HyperParams, KernelSpec, MultiKernel};
use gp_sgd::linalg::sym_eigenvalues;
use gp_sgd::prediction::{predict, predict_nn, rmse, CgSettings, Strategy};
use gp_sgd::sampling::{BatchSampler, Minibatch, SamplingScheme, SpatialIndex};
use gp_sgd::training::{adam_fit, full_gradient, stochastic_gradient, AdamSettings, ScalingPolicy, SgdConfig};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

fn rbf(l: f64) -> MultiKernel {
    MultiKernel::single(KernelSpec::rbf(vec![l]).unwrap())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac1() -> Outcome {
    let worst = (0..20).map(|s| common::gradient_fd_error(&common::fixture(1000 + s))).fold(0.0, f64::max);
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 20 fixtures (< 1e-5)"))
}

fn ac2() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..10 {
        let f = common::fixture(2000 + s);
        let n = f.y.len();
        let a = full_gradient(&f.theta, &f.kernels, &f.x, &f.y).unwrap();
        let b = stochastic_gradient(&f.theta, &f.kernels, &Minibatch::full(n), &f.x, &f.y, &ScalingPolicy::linear()).unwrap();
        worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
    }
    let data = simulate_gp(&rbf(0.5), &HyperParams::pair(4.0, 1.0).unwrap(), 200, InputDistribution::Gaussian { sd: 5.0 }, 1, 2).unwrap();
    for theta in [HyperParams::pair(4.0, 1.0).unwrap(), HyperParams::pair(0.3, 2.5).unwrap()] {
        let a = full_gradient(&theta, &rbf(0.5), data.x(), data.y()).unwrap();
        let b = stochastic_gradient(&theta, &rbf(0.5), &Minibatch::full(200), data.x(), data.y(), &ScalingPolicy::linear()).unwrap();
        worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
    }
    check(worst <= 1e-12, format!("max |full - stochastic| {worst:.1e} (<= 1e-12)"))
}

fn ac3() -> Outcome {
    let p = Protocol::default();
    let traces = p.run(&HyperParams::pair(5.0, 5.0).unwrap(), 9.0, None).unwrap();
    let k = p.iterations();
    let reps = traces.len() as f64;
    let mse = |i: usize| traces.iter().map(|t| (t.records[i].theta[1] - 1.0).powi(2)).sum::<f64>() / reps;
    let mae = traces.iter().map(|t| (t.records[k].theta[1] - 1.0).abs()).sum::<f64>() / reps;
    let (late, early) = (mse(k), mse(k / 4));
    check(
        mae < 0.3 && late < 0.5 * early,
        format!("K={k}, mean |θ₂-1| = {mae:.4} (< 0.3), MSE(K) = {late:.4e} vs MSE(K/4) = {early:.4e} (ratio {:.3} < 0.5)", late / early),
    )
}

fn ac4() -> Outcome {
    let mut finals = Vec::new();
    for m in [32, 128, 512] {
        let p = Protocol { batch_size: m, ..Protocol::default() };
        let k = p.iterations();
        let traces = p.run(&HyperParams::pair(5.0, 3.0).unwrap(), 9.0, Some(k)).unwrap();
        let mean = traces.iter().map(|t| t.records[k].grad_norm_sq.unwrap()).sum::<f64>() / traces.len() as f64;
        finals.push(mean);
    }
    check(
        finals[0] > finals[1] && finals[1] > finals[2],
        format!("mean final ‖∇ℓ‖² for m = 32, 128, 512: {:.3e}, {:.3e}, {:.3e}", finals[0], finals[1], finals[2]),
    )
}

fn ac5() -> Outcome {
    let study = CurvatureStudy {
        pool_size: 2048,
        batch_sizes: vec![16, 32, 64, 128],
        replicates: 50,
        theta: [4.0, 1.0],
        kernel: rbf(0.5),
        inputs: InputDistribution::Gaussian { sd: 10.0 },
        dim: 1,
        seed: 0,
        keep_eigenvalues: false,
    };
    let reports = curvature_experiment(&study).unwrap();
    let mut ok = true;
    let mut cells = Vec::new();
    for pair in reports.chunks(2) {
        let (u, n) = if pair[0].scheme == SamplingScheme::Uniform { (&pair[0], &pair[1]) } else { (&pair[1], &pair[0]) };
        ok &= n.mean > u.mean;
        cells.push(format!("m={}: {:.4} > {:.4}", u.batch_size, n.mean, u.mean));
    }
    check(ok, format!("mean γ nearby vs uniform: {}", cells.join(", ")))
}

fn ac6() -> Outcome {
    let curve = surrogate_curve(10.0, &[0.5, 0.75, 1.0, 1.5, 2.0], 2048, [4.0, 1.0]);
    let ok = curve.windows(2).all(|w| w[1].1 >= w[0].1);
    let vals: Vec<String> = curve.iter().map(|(_, g)| format!("{g:.5}")).collect();
    check(ok, format!("γ̃ over l = 0.5..2: {}", vals.join(", ")))
}

fn ac7() -> Outcome {
    let x = draw_inputs(InputDistribution::Gaussian { sd: 5.0 }, 32, 1, 7).unwrap();
    let truth = HyperParams::pair(4.0, 1.0).unwrap();
    let scaling = ScalingPolicy::log_signal(3.0);
    let mut worst: f64 = 0.0;
    let mut at_truth: f64 = 0.0;
    for (i, theta) in [HyperParams::pair(2.0, 1.8).unwrap(), truth.clone()].iter().enumerate() {
        let exact = conditional_expected_gradient(theta, &truth, &rbf(0.5), &x, &scaling).unwrap();
        let mc = monte_carlo_gradient(theta, &truth, &rbf(0.5), &x, &scaling, 20_000, 70 + i as u64).unwrap();
        for l in 0..exact.len() {
            worst = worst.max((mc.mean[l] - exact[l]).abs() / mc.std_error[l]);
        }
        if i == 1 {
            at_truth = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
        }
    }
    check(worst < 4.0 && at_truth == 0.0, format!("max |MC - g*| = {worst:.2} standard errors (< 4); |g*(θ*)| = {at_truth:e}"))
}

fn ac8() -> Outcome {
    let pool = draw_inputs(InputDistribution::Gaussian { sd: 10.0 }, 2048, 1, 8).unwrap();
    let sampler = BatchSampler::new(&pool, 64, SamplingScheme::Uniform, 8).unwrap();
    let spec = KernelSpec::rbf(vec![0.5]).unwrap();
    let truth = HyperParams::pair(4.0, 1.0).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let x = pool.select_rows(&sampler.draw(k).sorted_indices());
        let eigs = sym_eigenvalues(&kernel_matrix(&spec, &x).unwrap()).unwrap();
        let g2 = |t2: f64| {
            conditional_expected_gradient(&HyperParams::pair(4.0, t2).unwrap(), &truth, &rbf(0.5), &x, &ScalingPolicy::linear()).unwrap()[1]
        };
        let fd = (g2(1.0 + h) - g2(1.0 - h)) / (2.0 * h);
        let gamma = curvature(4.0, 1.0, eigs.values());
        worst = worst.max((fd - gamma).abs() / gamma);
    }
    check(worst < 1e-4, format!("max relative gap {worst:.2e} over 10 minibatches (< 1e-4)"))
}

fn ac9() -> Outcome {
    let n = 2048;
    let x = draw_inputs(InputDistribution::Gaussian { sd: 10.0 }, n, 1, 9).unwrap();
    let spectrum = sym_eigenvalues(&kernel_matrix(&KernelSpec::rbf(vec![0.5]).unwrap(), &x).unwrap()).unwrap();
    let beta = gaussian_beta(10.0, 0.5);
    let worst = (0..10)
        .map(|j| {
            let analytic = (1.0 - beta) * beta.powi(j as i32);
            (spectrum.values()[j] / n as f64 - analytic).abs() / analytic
        })
        .fold(0.0, f64::max);
    let fit = eigendecay_fit(&spectrum, n, DecayFamily::Exponential, Some(10)).unwrap();
    let b = -beta.ln();
    let rate_err = (fit.rate - b).abs() / b;
    check(
        worst < 0.15 && rate_err < 0.15,
        format!("max relative gap λ_j/n vs (1-β)β^(j-1), j ≤ 10: {worst:.3}; fitted rate {:.4} vs {b:.4} ({rate_err:.3})", fit.rate),
    )
}

fn ac10() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let x = DMatrix::from_fn(60, 1, |i, _| i as f64 * 0.37 - 11.0);
    let y = x.column(0).map(|v| v.sin() * 2.0);
    let tiny = HyperParams::pair(1.0, 1e-10).unwrap();
    let interp = predict(&tiny, &rbf(1.0), &x, &y, &x, Strategy::Exact).unwrap();
    let err = (&interp.mean - &y).amax();
    ok &= err < 1e-4;
    notes.push(format!("interpolation {err:.1e}"));

    let theta = HyperParams::pair(4.0, 1.0).unwrap();
    let data = simulate_gp(&rbf(0.5), &theta, 2200, InputDistribution::Gaussian { sd: 5.0 }, 1, 10).unwrap();
    let (train, test) = (data.select(&(0..2000).collect::<Vec<_>>()), data.select(&(2000..2200).collect::<Vec<_>>()));
    let settings = CgSettings::default();
    let exact = predict(&theta, &rbf(0.5), train.x(), train.y(), test.x(), Strategy::Exact).unwrap();
    let cg = predict(&theta, &rbf(0.5), train.x(), train.y(), test.x(), Strategy::Cg(settings)).unwrap();
    let gap = (&exact.mean - &cg.mean).amax().max((&exact.variance - &cg.variance).amax());
    ok &= gap <= 10.0 * settings.tol;
    notes.push(format!("CG vs exact at n=2000 {gap:.1e}"));

    let index = SpatialIndex::build(train.x()).unwrap();
    let nn = predict_nn(&theta, &rbf(0.5), train.x(), train.y(), test.x(), 2000, &index).unwrap();
    let nn_gap = (&nn.mean - &exact.mean).amax().max((&nn.variance - &exact.variance).amax());
    ok &= nn_gap <= 1e-10;
    notes.push(format!("nn(n) vs exact {nn_gap:.1e}"));

    let levy = simulate_function(TestFunction::Levy, 10_000, 2, 1.0, 11).unwrap();
    let (train, test) = train_test_split(&levy, 0.6, 11).unwrap();
    let (tn, sn, norm) = normalize(&train, &test).unwrap();
    let kernel = MultiKernel::single(KernelSpec::rbf(vec![1.0, 1.0]).unwrap());
    let mut cfg = SgdConfig::new(256, 500, 0.05);
    cfg.seed = 11;
    let trace = adam_fit(&tn, &kernel, &cfg, &AdamSettings::default(), &HyperParams::pair(1.0, 0.5).unwrap(), true).unwrap();
    let fitted = trace.final_params();
    let mut pred = predict(&fitted, &kernel.resolve(&fitted).unwrap(), tn.x(), tn.y(), sn.x(), Strategy::Auto).unwrap();
    pred.rescale(norm.y_mean, norm.y_sd);
    let gp = rmse(&pred.mean, test.y()).unwrap();
    let baseline = rmse(&DVector::from_element(test.len(), train.y().mean()), test.y()).unwrap();
    ok &= baseline >= 2.0 * gp;
    notes.push(format!("Levy rmse {gp:.3} vs baseline {baseline:.3} (x{:.1})", baseline / gp));

    check(ok, notes.join("; "))
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn ac11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 8] = [
        &["simulate", "--set", "n=300"],
        &["fit", "--set", "n=300", "--set", "epochs=5", "--set", "batch_size=32"],
        &["predict", "--set", "n=300", "--set", "epochs=5", "--set", "batch_size=32"],
        &["predict", "--set", "n=300", "--set", "epochs=5", "--set", "batch_size=32", "--set", "optimizer=\"adam\"", "--set", "neighbours=20"],
        &["diagnose", "--set", "n=512", "--set", "replicates=5"],
        &["experiment", "param-convergence", "--set", "n=256", "--set", "epochs=3", "--set", "repetitions=3", "--set", "batch_size=32"],
        &["experiment", "grad-convergence", "--set", "n=256", "--set", "epochs=3", "--set", "repetitions=3", "--set", "batch_sizes=[16,64]"],
        &["experiment", "curvature", "--set", "n=512", "--set", "replicates=5"],
    ];
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for r in 0..2 {
            let dir = tmp.path().join(format!("{i}-{r}"));
            let status = Command::new(env!("CARGO_BIN_EXE_gp-sgd"))
                .args(*args)
                .args(["--seed", "11", "--out", dir.to_str().unwrap()])
                .output()
                .unwrap();
            if !status.status.success() {
                return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            outputs.push(csv_bytes(&dir));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return Err(format!("{args:?}: reruns differ"));
        }
        files += outputs[0].len();
    }
    Ok(format!("{} runs, {files} CSV files byte-identical on rerun", runs.len()))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome, u64); 11] = [
        ("AC1", "gradient vs finite differences", ac1, 10),
        ("AC2", "full-index minibatch gradient", ac2, 5),
        ("AC3", "noise-variance convergence", ac3, 30 * 60),
        ("AC4", "gradient norm vs batch size", ac4, 90 * 60),
        ("AC5", "curvature ordering", ac5, 10 * 60),
        ("AC6", "surrogate curvature monotone in l", ac6, 1),
        ("AC7", "g* vs Monte Carlo", ac7, 120),
        ("AC8", "curvature = ∂g*₂/∂θ₂", ac8, 30),
        ("AC9", "eigendecay law", ac9, 120),
        ("AC10", "prediction sanity", ac10, 20 * 60),
        ("AC11", "determinism", ac11, 10 * 60),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let over = took > Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok(d) => (!over, d),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{id:<5} {} {name}: {detail} [{:.1}s of {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
