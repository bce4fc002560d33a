//! `mate train-toy` and `mate sample`.

use mate_core::mate::{euler_sample, mean_energy, train_toy as train, MovingSquares};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::files::{read_checkpoint, write_checkpoint, write_tensor};
use crate::output::emit;
use crate::{SampleArgs, TrainArgs};

pub fn train_toy(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if args.log.is_some() {
        cfg.run.log = args.log.clone();
    }
    if args.checkpoint.is_some() {
        cfg.run.checkpoint = args.checkpoint.clone();
    }
    let tc = cfg.train_config()?;
    let mut source = MovingSquares::new(tc.shape, tc.model.d, tc.square_side)?;
    let outcome = train(&mut source, &tc, cfg.train.steps, cfg.run.seed)?;

    emit(cfg.run.log.as_deref(), &outcome.log.to_csv())?;
    if let Some(path) = &cfg.run.checkpoint {
        write_checkpoint(path, &cfg, &outcome.weights)?;
    }
    let (first, last) = (outcome.log.initial_smoothed(), outcome.log.final_smoothed());
    eprintln!(
        "train-toy: {} steps, smoothed loss {first:.4} -> {last:.4} ({:.1}% of initial)",
        cfg.train.steps,
        100.0 * last / first
    );
    Ok(())
}

pub fn sample(args: &SampleArgs) -> Result<(), CliError> {
    let (cfg, weights) = read_checkpoint(&args.checkpoint)?;
    let steps = args.steps.unwrap_or(cfg.sample.steps);
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let shape = args.shape.map_or(cfg.train.shape.0, |s| s.0);
    let x = euler_sample(&weights, steps, shape, seed)?;
    write_tensor(&args.out, &x)?;
    eprintln!("sample: {shape} x {} in {steps} steps, mean energy {:.4}", x.dim(), mean_energy(&x));
    Ok(())
}
