//! Driving the command-line pipeline from code: simulate, fit, then predict
//! with the saved parameters.

use gp_sgd::cli::{execute, Command, RunConfig};

fn main() -> gp_sgd::Result<()> {
    let dir = tempfile::tempdir()?;
    let base = RunConfig {
        seed: Some(4),
        n: Some(600),
        epochs: 10,
        ..RunConfig::default()
    };

    let sim = RunConfig { out: dir.path().join("sim"), ..base.clone() };
    execute(&Command::Simulate, &sim)?;

    let fit = RunConfig {
        out: dir.path().join("fit"),
        data: Some(sim.out.join("dataset.csv")),
        ..base.clone()
    };
    execute(&Command::Fit, &fit)?;
    println!("{}", std::fs::read_to_string(fit.out.join("params.json"))?);

    let pred = RunConfig {
        out: dir.path().join("pred"),
        params: Some(fit.out.join("params.json")),
        ..fit.clone()
    };
    execute(&Command::Predict, &pred)?;
    print!("{}", std::fs::read_to_string(pred.out.join("summary.txt"))?);
    Ok(())
}
