//! Parameter sweeps: one full pipeline run per value, shared seed.

use std::str::FromStr;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{run, IterationMetrics};
use crate::synthgen::generate_dataset;

/// Parameters the sweep command can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    K,
    LambdaC,
    LambdaP,
    Parts,
    Iterations,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "k" => Ok(SweepParam::K),
            "lambda_c" => Ok(SweepParam::LambdaC),
            "lambda_p" => Ok(SweepParam::LambdaP),
            "p" => Ok(SweepParam::Parts),
            "iterations" => Ok(SweepParam::Iterations),
            other => Err(Error::InvalidConfig(format!(
                "sweep parameter '{}' not one of lambda | k | lambda_c | lambda_p | p | iterations",
                other
            ))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepParam::Lambda => "lambda",
            SweepParam::K => "k",
            SweepParam::LambdaC => "lambda_c",
            SweepParam::LambdaP => "lambda_p",
            SweepParam::Parts => "p",
            SweepParam::Iterations => "iterations",
        };
        f.write_str(s)
    }
}

fn as_count(param: SweepParam, value: f64) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 || value > usize::MAX as f64 {
        return Err(Error::InvalidConfig(format!(
            "sweep value {} for '{}' must be a non-negative integer",
            value, param
        )));
    }
    Ok(value as usize)
}

/// Final metrics of the run at one swept value.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: IterationMetrics,
}

/// Runs the full pipeline once per value. The dataset is generated once from
/// the shared generation config; only the swept hyperparameter changes.
pub fn sweep(param: SweepParam, values: &[f64], base: &RunConfig) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let dataset = generate_dataset(&base.generation)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut hp = base.hyper.clone();
        match param {
            SweepParam::Lambda => hp.lambda = value,
            SweepParam::K => hp.k = as_count(param, value)?,
            SweepParam::LambdaC => hp.lambda_c = value,
            SweepParam::LambdaP => hp.lambda_p = value,
            SweepParam::Parts => {
                hp.parts = as_count(param, value)?;
                if hp.parts == 0 || base.generation.height % hp.parts != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "sweep value {}: p must divide the grid height {}",
                        value, base.generation.height
                    )));
                }
            }
            SweepParam::Iterations => hp.iterations = as_count(param, value)?,
        }
        hp.validate().map_err(|e| {
            Error::InvalidConfig(format!("sweep {}={}: {}", param, value, e))
        })?;
        let state = run(&dataset, &hp).map_err(|e| {
            Error::InvalidConfig(format!("sweep {}={} failed: {}", param, value, e))
        })?;
        let metrics = *state
            .history
            .last()
            .expect("run always records baseline metrics");
        rows.push(SweepRow { value, metrics });
    }
    Ok(rows)
}
