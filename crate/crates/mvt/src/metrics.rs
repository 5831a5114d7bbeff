//! Accuracy and loss bookkeeping per split.

use mvt_core::synth::SplitTags;
use serde::{Deserialize, Serialize};

/// Accuracies are fractions in `[0, 1]`; a split with no samples reports 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: f64,
    pub easy: f64,
    pub hard: f64,
    pub view_dep: f64,
    pub view_indep: f64,
    pub loss_total: f64,
    pub loss_ref: f64,
    pub loss_text: f64,
    pub loss_obj: f64,
    pub count: usize,
    pub easy_count: usize,
    pub hard_count: usize,
    pub view_dep_count: usize,
    pub view_indep_count: usize,
    pub mean_objects: f64,
}

/// Per-sample evaluation result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub tags: SplitTags,
    pub correct: bool,
    pub objects: usize,
    pub losses: LossValues,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub reference: f64,
    pub text: f64,
    pub object: f64,
}

#[derive(Default)]
struct Tally {
    correct: usize,
    count: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.count += 1;
        self.correct += usize::from(correct);
    }

    fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

impl Metrics {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let (mut all, mut easy, mut hard, mut dep, mut indep) =
            (Tally::default(), Tally::default(), Tally::default(), Tally::default(), Tally::default());
        let mut sums = LossValues::default();
        let mut objects = 0usize;
        for o in outcomes {
            all.add(o.correct);
            if o.tags.hard { &mut hard } else { &mut easy }.add(o.correct);
            if o.tags.view_dependent { &mut dep } else { &mut indep }.add(o.correct);
            sums.total += o.losses.total;
            sums.reference += o.losses.reference;
            sums.text += o.losses.text;
            sums.object += o.losses.object;
            objects += o.objects;
        }
        let n = all.count.max(1) as f64;
        Self {
            overall: all.accuracy(),
            easy: easy.accuracy(),
            hard: hard.accuracy(),
            view_dep: dep.accuracy(),
            view_indep: indep.accuracy(),
            loss_total: sums.total / n,
            loss_ref: sums.reference / n,
            loss_text: sums.text / n,
            loss_obj: sums.object / n,
            count: all.count,
            easy_count: easy.count,
            hard_count: hard.count,
            view_dep_count: dep.count,
            view_indep_count: indep.count,
            mean_objects: objects as f64 / n,
        }
    }

    /// Largest violation of "overall is the count-weighted mean of
    /// easy/hard and of view-dep/view-indep".
    pub fn accounting_error(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let a = (self.easy * self.easy_count as f64 + self.hard * self.hard_count as f64) / n;
        let b = (self.view_dep * self.view_dep_count as f64 + self.view_indep * self.view_indep_count as f64) / n;
        (a - self.overall).abs().max((b - self.overall).abs())
    }

    /// Plain-text table with accuracies in percent.
    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>9} {:>10} {:>8}\n{:>8.2} {:>8.2} {:>8.2} {:>9.2} {:>10.2} {:>8}",
            "overall",
            "easy",
            "hard",
            "view-dep",
            "view-indep",
            "samples",
            100.0 * self.overall,
            100.0 * self.easy,
            100.0 * self.hard,
            100.0 * self.view_dep,
            100.0 * self.view_indep,
            self.count
        )
    }
}
