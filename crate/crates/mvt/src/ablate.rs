//! Grid of training runs sharing one seed and one dataset.

use std::path::Path;

use mvt_core::geometry::ViewSet;
use mvt_core::model::{AggregationFn, AggregationStage};
use mvt_core::synth::Sample;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::eval::evaluate;
use crate::train::train;

/// Settings that vary across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub views: usize,
    pub aggregation: AggregationFn,
    pub stage: AggregationStage,
    pub rotation_augmentation: bool,
    pub alpha: f64,
    /// Views at test time; defaults to `views`.
    pub eval_views: Option<usize>,
}

impl Cell {
    pub fn of(config: &TrainConfig) -> Self {
        Self {
            views: config.model.views,
            aggregation: config.model.aggregation,
            stage: config.model.stage,
            rotation_augmentation: config.model.rotation_augmentation,
            alpha: config.model.alpha,
            eval_views: config.eval_views,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.model.views = self.views;
        c.model.aggregation = self.aggregation;
        c.model.stage = self.stage;
        c.model.rotation_augmentation = self.rotation_augmentation;
        c.model.alpha = self.alpha;
        c.eval_views = self.eval_views;
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub views: Vec<usize>,
    pub aggregation: Vec<AggregationFn>,
    pub stage: Vec<AggregationStage>,
    pub rotation_augmentation: Vec<bool>,
    pub alpha: Vec<f64>,
}

impl Grid {
    /// Cartesian product; an empty axis falls back to the base config value.
    pub fn cells(&self, base: &TrainConfig) -> Vec<Cell> {
        fn or<T: Copy>(axis: &[T], default: T) -> Vec<T> {
            if axis.is_empty() {
                vec![default]
            } else {
                axis.to_vec()
            }
        }
        let b = Cell::of(base);
        let mut out = Vec::new();
        for &views in &or(&self.views, b.views) {
            for &aggregation in &or(&self.aggregation, b.aggregation) {
                for &stage in &or(&self.stage, b.stage) {
                    for &rotation_augmentation in &or(&self.rotation_augmentation, b.rotation_augmentation) {
                        for &alpha in &or(&self.alpha, b.alpha) {
                            out.push(Cell {
                                views,
                                aggregation,
                                stage,
                                rotation_augmentation,
                                alpha,
                                eval_views: b.eval_views,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One CSV row. Accuracies are fractions; with repeats they are means and
/// the `_std` columns hold the sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub views: usize,
    pub eval_views: usize,
    pub aggregation: String,
    pub stage: String,
    pub rotation_augmentation: bool,
    pub alpha: f64,
    pub repeats: usize,
    pub overall: f64,
    pub overall_std: f64,
    pub easy: f64,
    pub hard: f64,
    pub view_dep: f64,
    pub view_dep_std: f64,
    pub view_indep: f64,
    pub best_epoch: usize,
}

impl Row {
    pub fn cell(&self) -> Result<Cell> {
        let parse_err = |what: &str, v: &str| HarnessError::Config(format!("unknown {what} {v:?} in ablation row"));
        Ok(Cell {
            views: self.views,
            aggregation: AggregationFn::parse(&self.aggregation).ok_or_else(|| parse_err("aggregation", &self.aggregation))?,
            stage: AggregationStage::parse(&self.stage).ok_or_else(|| parse_err("stage", &self.stage))?,
            rotation_augmentation: self.rotation_augmentation,
            alpha: self.alpha,
            eval_views: (self.eval_views != self.views).then_some(self.eval_views),
        })
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains the cell `repeats` times with seeds `seed, seed + 1, ...` and
/// evaluates the best checkpoint of each run.
pub fn run_cell(base: &TrainConfig, cell: &Cell, train_set: &[Sample], eval_set: &[Sample]) -> Result<Row> {
    let config = cell.apply(base);
    let eval_views = ViewSet::equal_angle(config.eval_view_count())?;
    let mut runs = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let mut c = config.clone();
        c.seed = config.seed + r as u64;
        let outcome = train(&c, train_set, eval_set, |_| {})?;
        let metrics = evaluate(&outcome.best.model, eval_set, &eval_views)?;
        runs.push((metrics, outcome.best.epoch));
    }
    let col = |f: fn(&crate::Metrics) -> f64| runs.iter().map(|(m, _)| f(m)).collect::<Vec<_>>();
    let (overall, overall_std) = mean_std(&col(|m| m.overall));
    let (view_dep, view_dep_std) = mean_std(&col(|m| m.view_dep));
    Ok(Row {
        views: cell.views,
        eval_views: config.eval_view_count(),
        aggregation: cell.aggregation.as_str().into(),
        stage: cell.stage.as_str().into(),
        rotation_augmentation: cell.rotation_augmentation,
        alpha: cell.alpha,
        repeats: config.repeats,
        overall,
        overall_std,
        easy: mean_std(&col(|m| m.easy)).0,
        hard: mean_std(&col(|m| m.hard)).0,
        view_dep,
        view_dep_std,
        view_indep: mean_std(&col(|m| m.view_indep)).0,
        best_epoch: runs.last().map_or(0, |r| r.1),
    })
}

pub fn ablate(
    base: &TrainConfig,
    cells: &[Cell],
    train_set: &[Sample],
    eval_set: &[Sample],
    mut on_row: impl FnMut(&Row),
) -> Result<Vec<Row>> {
    cells
        .iter()
        .map(|cell| {
            let row = run_cell(base, cell, train_set, eval_set)?;
            on_row(&row);
            Ok(row)
        })
        .collect()
}

pub fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(crate::error::io_err(path))
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_a_cartesian_product() {
        let grid = Grid {
            views: vec![1, 2, 4, 8],
            aggregation: vec![AggregationFn::Avg, AggregationFn::Max],
            alpha: vec![0.0, 0.5],
            ..Grid::default()
        };
        let cells = grid.cells(&TrainConfig::default());
        assert_eq!(cells.len(), 16);
        assert!(cells.iter().all(|c| c.stage == AggregationStage::AfterFusion));
    }

    #[test]
    fn mean_std_of_constant_is_zero() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
