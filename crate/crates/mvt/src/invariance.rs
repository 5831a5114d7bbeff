//! Score deviation under whole-scene rotations by multiples of the view step.

use std::f64::consts::{FRAC_PI_3, TAU};

use mvt_core::model::MvtModel;
use mvt_core::synth::{rotate_scene, Sample, Scene};
use serde::Serialize;

use crate::error::Result;
use crate::eval::scores;

pub const INVARIANCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub angle: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub views: usize,
    pub samples: usize,
    /// One entry per `k` in `1..views`, rotating by `2πk / views`.
    pub rotations: Vec<Deviation>,
    pub max: f64,
    pub mean: f64,
    /// Rotation outside the view grid; informational only.
    pub off_grid: Deviation,
    /// `None` when the model has a single view and the check is skipped.
    pub pass: Option<bool>,
}

impl InvarianceReport {
    pub fn summary(&self) -> String {
        let off = format!(
            "off-grid rotation {:.4} rad: max {:.3e}, mean {:.3e} (not required)",
            self.off_grid.angle, self.off_grid.max, self.off_grid.mean
        );
        match self.pass {
            None => format!("invariance check skipped: model uses a single view\n{off}"),
            Some(pass) => {
                let mut lines: Vec<String> = self
                    .rotations
                    .iter()
                    .enumerate()
                    .map(|(i, d)| format!("k={} ({:.4} rad): max {:.3e}, mean {:.3e}", i + 1, d.angle, d.max, d.mean))
                    .collect();
                lines.push(format!(
                    "{} over {} samples, N={}: max {:.3e}, mean {:.3e} (tolerance {:.0e})",
                    if pass { "PASS" } else { "FAIL" },
                    self.samples,
                    self.views,
                    self.max,
                    self.mean,
                    INVARIANCE_TOLERANCE
                ));
                lines.push(off);
                lines.join("\n")
            }
        }
    }
}

fn deviation(model: &MvtModel, samples: &[Sample], base: &[Vec<f64>], angle: f64) -> Result<Deviation> {
    let rotated: Vec<Scene> = samples.iter().map(|s| rotate_scene(&s.scene, angle)).collect();
    let inputs: Vec<_> = rotated.iter().zip(samples).collect();
    let after = scores(model, &inputs, &model.config.view_set()?)?;
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for (a, b) in base.iter().zip(&after) {
        for (x, y) in a.iter().zip(b) {
            let d = (x - y).abs();
            max = if d.is_nan() { f64::INFINITY } else { max.max(d) };
            sum += d;
            n += 1;
        }
    }
    Ok(Deviation {
        angle,
        max,
        mean: sum / n.max(1) as f64,
    })
}

pub fn invariance_check(model: &MvtModel, samples: &[Sample]) -> Result<InvarianceReport> {
    let views = model.config.views;
    let inputs: Vec<_> = samples.iter().map(|s| (&s.scene, s)).collect();
    let base = scores(model, &inputs, &model.config.view_set()?)?;
    let rotations = (1..views)
        .map(|k| deviation(model, samples, &base, TAU * k as f64 / views as f64))
        .collect::<Result<Vec<_>>>()?;
    let off_grid = deviation(model, samples, &base, FRAC_PI_3)?;
    let max = rotations.iter().map(|d| d.max).fold(0.0, f64::max);
    let mean = if rotations.is_empty() {
        0.0
    } else {
        rotations.iter().map(|d| d.mean).sum::<f64>() / rotations.len() as f64
    };
    Ok(InvarianceReport {
        views,
        samples: samples.len(),
        rotations,
        max,
        mean,
        off_grid,
        pass: (views > 1).then_some(max < INVARIANCE_TOLERANCE),
    })
}
