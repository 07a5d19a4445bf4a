//! Frame error: how well an engine predicts each frame of a reference
//! demonstration from the frame before it, next to the do-nothing baseline.

use serde::{Deserialize, Serialize};

use crate::engine::{frame_distance, transition_distance, Dynamics, Engine};
use crate::error::{Error, Result};
use crate::fact::{Demonstration, Frame};
use crate::learner::LearnerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub per_transition_error: Vec<f64>,
    pub mean_error: f64,
    pub baseline_mean_error: f64,
    pub beat_baseline: bool,
}

fn prepare(frames: &[Frame], config: &LearnerConfig) -> Result<Demonstration> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: frames.len(),
        });
    }
    Demonstration::prepare(frames, config.vmax)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Normalized prediction error of `engine` on every transition of
/// `reference`. Button state is taken from the reference, never predicted.
pub fn frame_error(
    engine: &Engine,
    reference: &[Frame],
    config: &LearnerConfig,
) -> Result<EvalReport> {
    let demo = prepare(reference, config)?;
    let trace = demo.fact_trace();
    let dynamics = Dynamics::new(config.kinematics, trace.grid);
    let per_transition_error: Vec<f64> = trace
        .frames
        .windows(2)
        .map(|w| transition_distance(engine, &w[0], &w[1], &dynamics).normalized)
        .collect();
    let mean_error = mean(&per_transition_error);
    let baseline_mean_error = baseline_error(reference, config)?;
    Ok(EvalReport {
        per_transition_error,
        mean_error,
        baseline_mean_error,
        beat_baseline: mean_error < baseline_mean_error,
    })
}

/// Mean error of predicting every frame as an unchanged copy of the one
/// before it.
pub fn baseline_error(reference: &[Frame], config: &LearnerConfig) -> Result<f64> {
    let trace = prepare(reference, config)?.fact_trace();
    let errors: Vec<f64> = trace
        .frames
        .windows(2)
        .map(|w| {
            let copied = crate::engine::with_inputs_of(&w[0], &w[1]);
            frame_distance(&copied, &w[1]).normalized
        })
        .collect();
    Ok(mean(&errors))
}
