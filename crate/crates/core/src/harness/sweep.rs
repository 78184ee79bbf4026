//! Parameter sweeps; each point is an independent run with its own state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::{run_scenario, HarnessError};
use crate::plant::FailureFlags;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub success: bool,
    pub failure: Option<String>,
    pub flags: FailureFlags,
    pub max_final_error: f64,
    pub iterations: usize,
}

/// Parses `a:b:n` into `n` evenly spaced values from `a` to `b` inclusive.
pub fn parse_range(s: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::Config(format!("range {s:?} is not of the form a:b:n"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

pub fn run_sweep(sc: &ScenarioConfig, param: &str, values: &[f64]) -> Result<Vec<SweepPoint>, HarnessError> {
    // Fail fast on an unknown parameter before spawning runs.
    sc.clone().set_param(param, values.first().copied().unwrap_or(0.0))?;
    values
        .par_iter()
        .map(|&v| {
            let mut run = sc.clone();
            run.set_param(param, v)?;
            let point = match run_scenario(&run) {
                Ok(log) => SweepPoint {
                    value: v,
                    success: log.succeeded(),
                    failure: log.failure_reason().map(str::to_string),
                    flags: log.any_flags(),
                    max_final_error: log.waypoints.iter().map(|w| w.final_error).fold(0.0, f64::max),
                    iterations: log.records.len(),
                },
                Err(e) => SweepPoint {
                    value: v,
                    success: false,
                    failure: Some(e.to_string()),
                    flags: FailureFlags::default(),
                    max_final_error: f64::NAN,
                    iterations: 0,
                },
            };
            Ok(point)
        })
        .collect()
}

/// Endpoints of the longest contiguous run of successes, in sweep order.
pub fn success_band(points: &[SweepPoint]) -> Option<(f64, f64)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, p) in points.iter().enumerate() {
        match (p.success, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.map_or(true, |(a, b)| i - s > b - a + 1) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        let e = points.len() - 1;
        if best.map_or(true, |(a, b)| e - s > b - a) {
            best = Some((s, e));
        }
    }
    best.map(|(a, b)| (points[a].value, points[b].value))
}
