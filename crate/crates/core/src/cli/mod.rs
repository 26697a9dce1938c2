//! The `gp-sgd` command line: configuration, subcommands and output files.

pub mod studies;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv, normalize, save_csv, simulate_function, simulate_gp, train_test_split, Dataset,
    InputDistribution, TestFunction,
};
use crate::diagnostics::{
    curvature_experiment, eigendecay_fit, write_curvature_csv, write_eigendecay_csv,
    CurvatureStudy, DecayFamily,
};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, HyperParams, KernelSpec, MultiKernel};
use crate::linalg::sym_eigenvalues;
use crate::prediction::{predict, predict_nn, rmse, CgSettings, Strategy};
use crate::sampling::{SamplingScheme, SpatialIndex};
use crate::seed::derive_seed;
use crate::training::{
    adam_fit, iterations_for_epochs, sgd_fit, AdamSettings, Bounds, FitTrace, ScalingPolicy,
    SgdConfig, SlotScaling,
};
use studies::{aggregate, default_initializations, surrogate_curve, vary_batch_size, Protocol};

#[derive(Debug, Parser)]
#[command(name = "gp-sgd", version, about = "Minibatch SGD for Gaussian-process hyperparameters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for repetitions and large matrix builds.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override one config key, e.g. `--set batch_size=32`. Values are parsed as JSON when possible.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset and write dataset.csv plus provenance.json.
    Simulate,
    /// Fit hyperparameters; writes trace.csv and params.json.
    Fit,
    /// Predict on a test set; writes predictions.csv and prints `rmse=`.
    Predict,
    /// Curvature across batch sizes and schemes, plus an eigendecay fit.
    Diagnose,
    /// Run a multi-repetition study.
    Experiment {
        #[arg(value_enum)]
        study: Study,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Study {
    ParamConvergence,
    GradConvergence,
    VaryM,
    Curvature,
    Lemma1Monotone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Exact,
    Cg,
    Auto,
}

/// Every setting of a run. Unknown keys are rejected; missing keys take the
/// defaults below. Keys documented as optional fall back to per-command presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub jobs: Option<usize>,

    /// Dataset CSV; when absent the data are simulated.
    pub data: Option<PathBuf>,
    /// Test CSV for `predict`; when absent `data` is split.
    pub test_data: Option<PathBuf>,
    /// params.json from `fit`; when absent `predict` fits first.
    pub params: Option<PathBuf>,

    /// Simulated size. Default 1024, or 2048 for curvature runs.
    pub n: Option<usize>,
    pub dim: usize,
    /// Input law. Default N(0, 5²), or N(0, 10²) for curvature runs.
    pub inputs: Option<InputDistribution>,
    /// Simulate `f(x) + noise` instead of a GP draw.
    pub function: Option<TestFunction>,
    pub noise_sd: f64,
    pub kernel: MultiKernel,
    /// Signal variances then noise variance.
    pub theta_true: Vec<f64>,

    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub iterations: Option<usize>,
    /// `α₁` for SGD, the learning rate for Adam.
    pub step_size: f64,
    /// `τ` in `s₁(m) = τ log m`; `null` means linear scaling for signal variances.
    pub tau: Option<f64>,
    pub scheme: SamplingScheme,
    pub clamp: bool,
    pub theta_min: f64,
    pub theta_max: f64,
    pub clip: Option<f64>,
    pub theta0: Vec<f64>,
    pub learn_lengthscales: bool,
    pub grad_norm_every: Option<usize>,
    pub record_time: bool,

    pub strategy: StrategyName,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub cg_jacobi: bool,
    /// Predict from this many nearest training points.
    pub neighbours: Option<usize>,
    pub train_fraction: f64,
    /// Standardize with training statistics before fitting and predicting.
    pub normalize: bool,

    /// Default [16, 32, 64, 128], or [32, 128, 512] for the batch-size studies.
    pub batch_sizes: Option<Vec<usize>>,
    pub replicates: usize,
    pub decay_family: DecayFamily,
    pub decay_count: Option<usize>,

    pub repetitions: usize,
    pub lengthscale_grid: Vec<f64>,
    pub surrogate_m: usize,
    pub surrogate_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            jobs: None,
            data: None,
            test_data: None,
            params: None,
            n: None,
            dim: 1,
            inputs: None,
            function: None,
            noise_sd: 0.1,
            kernel: MultiKernel::single(KernelSpec::rbf(vec![0.5]).expect("valid lengthscale")),
            theta_true: vec![4.0, 1.0],
            optimizer: Optimizer::Sgd,
            batch_size: 128,
            epochs: 25,
            iterations: None,
            step_size: 9.0,
            tau: Some(3.0),
            scheme: SamplingScheme::Uniform,
            clamp: true,
            theta_min: 1e-4,
            theta_max: 1e4,
            clip: None,
            theta0: vec![5.0, 3.0],
            learn_lengthscales: false,
            grad_norm_every: None,
            record_time: false,
            strategy: StrategyName::Auto,
            cg_tol: 1e-6,
            cg_max_iter: 1000,
            cg_jacobi: false,
            neighbours: None,
            train_fraction: 0.6,
            normalize: false,
            batch_sizes: None,
            replicates: 50,
            decay_family: DecayFamily::Exponential,
            decay_count: Some(10),
            repetitions: 10,
            lengthscale_grid: vec![0.5, 0.75, 1.0, 1.5, 2.0],
            surrogate_m: 2048,
            surrogate_sigma: 10.0,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn split_theta(values: &[f64], what: &str) -> Result<HyperParams> {
    match values.split_last() {
        Some((&noise, signals)) if !signals.is_empty() => {
            HyperParams::new(signals.to_vec(), noise).map_err(|e| config_err(format!("{what}: {e}")))
        }
        _ => Err(config_err(format!("{what} needs at least a signal and a noise variance"))),
    }
}

impl RunConfig {
    /// Config file (if any), then `--set` overrides, then the dedicated flags.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut doc = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        let map = doc
            .as_object_mut()
            .ok_or_else(|| config_err("config must be a JSON object"))?;
        for item in &cli.overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got `{item}`")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            map.insert(key.trim().to_string(), value);
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| config_err(e.to_string()))?;
        if cli.seed.is_some() {
            cfg.seed = cli.seed;
        }
        if let Some(out) = &cli.out {
            cfg.out = out.clone();
        }
        if cli.jobs.is_some() {
            cfg.jobs = cli.jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == Some(0) {
            return Err(config_err("jobs must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(config_err(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.clamp && !(self.theta_min > 0.0 && self.theta_min < self.theta_max) {
            return Err(config_err("clamp bounds need 0 < theta_min < theta_max"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config_err("train_fraction must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.dim == 0 || self.n == Some(0) {
            return Err(config_err("batch_size, n and dim must be positive"));
        }
        split_theta(&self.theta_true, "theta_true")?;
        split_theta(&self.theta0, "theta0")?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn n_or(&self, preset: usize) -> usize {
        self.n.unwrap_or(preset)
    }

    fn inputs_or(&self, sd: f64) -> InputDistribution {
        self.inputs.unwrap_or(InputDistribution::Gaussian { sd })
    }

    pub fn theta_true(&self) -> Result<HyperParams> {
        split_theta(&self.theta_true, "theta_true")
    }

    pub fn theta0(&self) -> Result<HyperParams> {
        split_theta(&self.theta0, "theta0")
    }

    pub fn scaling(&self) -> ScalingPolicy {
        match self.tau {
            Some(tau) => ScalingPolicy::log_signal(tau),
            None => ScalingPolicy {
                signal: SlotScaling::Linear,
                lengthscale: SlotScaling::Linear,
            },
        }
    }

    pub fn bounds(&self) -> Option<Bounds> {
        self.clamp.then_some(Bounds {
            min: self.theta_min,
            max: self.theta_max,
        })
    }

    pub fn sgd_config(&self, n: usize) -> SgdConfig {
        SgdConfig {
            batch_size: self.batch_size,
            iterations: self
                .iterations
                .unwrap_or_else(|| iterations_for_epochs(n, self.batch_size, self.epochs)),
            step_size: self.step_size,
            scheme: self.scheme,
            scaling: self.scaling(),
            clamp: self.bounds(),
            clip: self.clip,
            seed: derive_seed(self.seed(), "batches", 0),
            grad_norm_every: self.grad_norm_every,
            record_time: self.record_time,
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyName::Exact => Strategy::Exact,
            StrategyName::Auto => Strategy::Auto,
            StrategyName::Cg => Strategy::Cg(CgSettings {
                tol: self.cg_tol,
                max_iter: self.cg_max_iter,
                jacobi: self.cg_jacobi,
            }),
        }
    }

    /// SHA-256 of the resolved configuration as canonical JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The configured dataset: loaded from `data`, or simulated.
    pub fn dataset(&self) -> Result<Dataset> {
        if let Some(path) = &self.data {
            return load_csv(path);
        }
        let seed = derive_seed(self.seed(), "data", 0);
        let n = self.n_or(1024);
        match self.function {
            Some(f) => simulate_function(f, n, self.dim, self.noise_sd, seed),
            None => simulate_gp(&self.kernel, &self.theta_true()?, n, self.inputs_or(5.0), self.dim, seed),
        }
    }
}

/// Writes through a temporary sibling and a rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

/// Fitted kernel and hyperparameters as stored in params.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedModel {
    pub kernel: MultiKernel,
    pub theta: HyperParams,
}

impl FittedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            lines: vec![
                ("command".into(), command.into()),
                ("config_hash".into(), cfg.hash()),
                ("seed".into(), cfg.seed().to_string()),
            ],
        }
    }

    fn add(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    fn trace(&mut self, trace: &FitTrace) {
        self.add("iterations", trace.iterations());
        self.add("clamp_events", trace.clamp_events);
        self.add("clip_events", trace.clip_events);
    }

    fn write(mut self, dir: &Path, start: Instant) -> Result<()> {
        self.add("elapsed_ms", start.elapsed().as_millis());
        let text: String = self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        write_atomic(&dir.join("summary.txt"), text.as_bytes())
    }
}

/// Parses arguments and runs the chosen subcommand inside a pool of `--jobs` threads.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| execute(&cli.command, &cfg))
}

pub fn execute(command: &Command, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    match command {
        Command::Simulate => cmd_simulate(cfg),
        Command::Fit => cmd_fit(cfg),
        Command::Predict => cmd_predict(cfg),
        Command::Diagnose => cmd_diagnose(cfg),
        Command::Experiment { study } => cmd_experiment(*study, cfg),
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let data = cfg.dataset()?;
    let path = cfg.out.join("dataset.csv");
    save_csv(&data, &path)?;
    if let Some(p) = &data.provenance {
        write_atomic(&cfg.out.join("provenance.json"), serde_json::to_string_pretty(p)?.as_bytes())?;
    }
    let mut s = Summary::new("simulate", cfg);
    s.add("rows", data.len());
    s.add("dim", data.dim());
    s.write(&cfg.out, start)
}

/// Runs the configured optimizer on `data` from `theta0`.
pub fn fit_dataset(cfg: &RunConfig, data: &Dataset) -> Result<(FitTrace, FittedModel)> {
    let sgd = cfg.sgd_config(data.len());
    let theta0 = cfg.theta0()?;
    let trace = match cfg.optimizer {
        Optimizer::Sgd => sgd_fit(data, &cfg.kernel, &sgd, &theta0)?,
        Optimizer::Adam => adam_fit(
            data,
            &cfg.kernel,
            &sgd,
            &AdamSettings::default(),
            &theta0,
            cfg.learn_lengthscales,
        )?,
    };
    let theta = trace.final_params();
    let kernel = cfg.kernel.resolve(&theta)?;
    Ok((trace, FittedModel { kernel, theta }))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let data = cfg.dataset()?;
    let (trace, model) = fit_dataset(cfg, &data)?;
    write_with(&cfg.out.join("trace.csv"), |w| trace.write_csv(w))?;
    write_atomic(&cfg.out.join("params.json"), serde_json::to_string_pretty(&model)?.as_bytes())?;
    let mut s = Summary::new("fit", cfg);
    s.trace(&trace);
    s.write(&cfg.out, start)
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let data = cfg.dataset()?;
    let (train_raw, test_raw) = match &cfg.test_data {
        Some(path) => (data, load_csv(path)?),
        None => train_test_split(&data, cfg.train_fraction, derive_seed(cfg.seed(), "split", 0))?,
    };
    let (train, test, norm) = if cfg.normalize {
        let (a, b, m) = normalize(&train_raw, &test_raw)?;
        (a, b, Some(m))
    } else {
        (train_raw, test_raw.clone(), None)
    };
    let mut s = Summary::new("predict", cfg);
    let model = match &cfg.params {
        Some(path) => FittedModel::load(path)?,
        None => {
            let (trace, model) = fit_dataset(cfg, &train)?;
            s.trace(&trace);
            model
        }
    };
    let mut result = match cfg.neighbours {
        Some(count) => {
            let index = SpatialIndex::build(train.x())?;
            predict_nn(&model.theta, &model.kernel, train.x(), train.y(), test.x(), count, &index)?
        }
        None => predict(&model.theta, &model.kernel, train.x(), train.y(), test.x(), cfg.strategy())?,
    };
    if let Some(m) = &norm {
        result.rescale(m.y_mean, m.y_sd);
    }
    let truth = test_raw.y();
    let err = rmse(&result.mean, truth)?;
    write_with(&cfg.out.join("predictions.csv"), |w| result.write_csv(Some(truth), w))?;
    s.add("test_points", truth.len());
    s.add("rmse", crate::data::format_float(err));
    s.write(&cfg.out, start)?;
    println!("rmse={}", crate::data::format_float(err));
    Ok(())
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let theta = cfg.theta_true()?;
    if theta.num_signals() != 1 {
        return Err(config_err("diagnose needs a single kernel and theta_true = [signal, noise]"));
    }
    let study = CurvatureStudy {
        pool_size: cfg.n_or(2048),
        batch_sizes: cfg.batch_sizes.clone().unwrap_or_else(|| vec![16, 32, 64, 128]),
        replicates: cfg.replicates,
        theta: [theta.signal_variances()[0], theta.noise_variance()],
        kernel: cfg.kernel.clone(),
        inputs: cfg.inputs_or(10.0),
        dim: cfg.dim,
        seed: cfg.seed(),
        keep_eigenvalues: false,
    };
    let reports = curvature_experiment(&study)?;
    write_with(&cfg.out.join("curvature.csv"), |w| write_curvature_csv(&reports, w))?;

    let pool = crate::data::draw_inputs(study.inputs, study.pool_size, study.dim, derive_seed(cfg.seed(), "pool", 0))?;
    let spectrum = sym_eigenvalues(&kernel_matrix(&cfg.kernel.components()[0], &pool)?)?;
    let fit = eigendecay_fit(&spectrum, study.pool_size, cfg.decay_family, cfg.decay_count)?;
    write_with(&cfg.out.join("eigendecay.csv"), |w| write_eigendecay_csv(&[fit], w))?;
    let mut s = Summary::new("diagnose", cfg);
    s.add("cells", reports.len());
    s.write(&cfg.out, start)
}

fn protocol(cfg: &RunConfig) -> Result<Protocol> {
    Ok(Protocol {
        n: cfg.n_or(1024),
        dim: cfg.dim,
        inputs: cfg.inputs_or(5.0),
        kernel: cfg.kernel.clone(),
        theta_true: cfg.theta_true()?,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        scaling: cfg.scaling(),
        scheme: cfg.scheme,
        clamp: cfg.bounds(),
        clip: cfg.clip,
        repetitions: cfg.repetitions,
        seed: cfg.seed(),
    })
}

fn write_reps(dir: &Path, prefix: &str, traces: &[FitTrace]) -> Result<()> {
    for (r, t) in traces.iter().enumerate() {
        write_with(&dir.join(format!("{prefix}_rep{}.csv", r + 1)), |w| t.write_csv(w))?;
    }
    Ok(())
}

pub fn cmd_experiment(study: Study, cfg: &RunConfig) -> Result<()> {
    if cfg.seed.is_none() {
        return Err(config_err("experiment runs need an explicit seed (--seed or \"seed\")"));
    }
    let start = Instant::now();
    let out = &cfg.out;
    let reps = out.join("reps");
    let mut s = Summary::new("experiment", cfg);
    match study {
        Study::ParamConvergence => {
            fs::create_dir_all(&reps)?;
            let p = protocol(cfg)?;
            let mut groups = Vec::new();
            let mut labels = Vec::new();
            let (mut clamps, mut clips) = (0, 0);
            for (i, (theta0, step)) in default_initializations().iter().enumerate() {
                let traces = p.run(theta0, *step, None)?;
                let name = format!("init{}", i + 1);
                write_reps(&reps, &name, &traces)?;
                labels = traces[0].labels.clone();
                clamps += traces.iter().map(|t| t.clamp_events).sum::<usize>();
                clips += traces.iter().map(|t| t.clip_events).sum::<usize>();
                groups.push((name, aggregate(&traces)?));
            }
            write_with(&out.join("aggregate.csv"), |w| studies::write_aggregate_csv(&groups, &labels, false, w))?;
            s.add("clamp_events", clamps);
            s.add("clip_events", clips);
        }
        Study::GradConvergence | Study::VaryM => {
            fs::create_dir_all(&reps)?;
            let p = protocol(cfg)?;
            let ms = cfg.batch_sizes.clone().unwrap_or_else(|| vec![32, 128, 512]);
            let norms = study == Study::GradConvergence;
            let runs = vary_batch_size(&p, &ms, &cfg.theta0()?, cfg.step_size, norms)?;
            let mut groups = Vec::new();
            let mut labels = Vec::new();
            for (m, traces) in &runs {
                let name = format!("m{m}");
                write_reps(&reps, &name, traces)?;
                labels = traces[0].labels.clone();
                groups.push((name, aggregate(traces)?));
            }
            write_with(&out.join("aggregate.csv"), |w| studies::write_aggregate_csv(&groups, &labels, norms, w))?;
        }
        Study::Curvature => {
            let theta = cfg.theta_true()?;
            if theta.num_signals() != 1 {
                return Err(config_err("the curvature study needs theta_true = [signal, noise]"));
            }
            let study = CurvatureStudy {
                pool_size: cfg.n_or(2048),
                batch_sizes: cfg.batch_sizes.clone().unwrap_or_else(|| vec![16, 32, 64, 128]),
                replicates: cfg.replicates,
                theta: [theta.signal_variances()[0], theta.noise_variance()],
                kernel: cfg.kernel.clone(),
                inputs: cfg.inputs_or(10.0),
                dim: cfg.dim,
                seed: cfg.seed(),
                keep_eigenvalues: false,
            };
            let reports = curvature_experiment(&study)?;
            write_with(&out.join("curvature.csv"), |w| write_curvature_csv(&reports, w))?;
            write_with(&out.join("curvature_replicates.csv"), |w| {
                writeln!(w, "m,scheme,replicate,gamma")?;
                for r in &reports {
                    for (i, g) in r.values.iter().enumerate() {
                        writeln!(w, "{},{},{},{}", r.batch_size, r.scheme, i + 1, crate::data::format_float(*g))?;
                    }
                }
                Ok(())
            })?;
        }
        Study::Lemma1Monotone => {
            let theta = cfg.theta_true()?;
            let curve = surrogate_curve(
                cfg.surrogate_sigma,
                &cfg.lengthscale_grid,
                cfg.surrogate_m,
                [theta.signal_variances()[0], theta.noise_variance()],
            );
            write_with(&out.join("surrogate.csv"), |w| {
                writeln!(w, "lengthscale,gamma_tilde")?;
                for (l, g) in &curve {
                    writeln!(w, "{},{}", crate::data::format_float(*l), crate::data::format_float(*g))?;
                }
                Ok(())
            })?;
            let mut sorted = curve.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let monotone = sorted.windows(2).all(|w| w[1].1 >= w[0].1);
            s.add("monotone", monotone);
            if !monotone {
                s.write(out, start)?;
                return Err(Error::InvalidArgument(
                    "surrogate curvature is not nondecreasing over the lengthscale grid".into(),
                ));
            }
        }
    }
    s.write(out, start)
}
