//! Held-out evaluation. Scenes run in parallel; the reduction is sequential in
//! scene order so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use waydcm_core::GoalDistribution;
use waydcm_nn::{MixtureTrajectory, Model, SceneInput, Tape};

use crate::metrics::min_ade_fde;

/// Mode budgets reported by [`evaluate`].
pub const EVAL_KS: [usize; 2] = [1, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub scenes: usize,
    pub min_ade_1: f64,
    pub min_fde_1: f64,
    pub min_ade_6: f64,
    pub min_fde_6: f64,
    /// Share of scenes whose most probable goal is the labeled one.
    pub goal_accuracy: Option<f64>,
    /// Mean `−log p(label)` of the goal distribution.
    pub goal_nll: Option<f64>,
}

/// Prediction for one scene, in the target frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mixture: MixtureTrajectory,
    pub goals: Option<GoalDistribution>,
}

pub fn predict(model: &Model, input: &SceneInput) -> Prediction {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, input, None);
    Prediction {
        mixture: model.mixture(&tape, &fwd),
        goals: model.goal_distribution(&fwd),
    }
}

struct SceneScore {
    ade_fde: [(f64, f64); 2],
    goal: Option<(bool, f64)>,
}

fn score(model: &Model, input: &SceneInput) -> SceneScore {
    let pred = predict(model, input);
    let truth = input.future.as_ref().expect("evaluation needs the future trajectory");
    let means: Vec<_> = (0..pred.mixture.num_modes()).map(|m| pred.mixture.means(m)).collect();
    let ade_fde = EVAL_KS.map(|k| min_ade_fde(&means, &pred.mixture.probs, truth, k));
    let goal = match (&pred.goals, input.label) {
        (Some(g), Some(label)) => Some((g.top(1)[0] == label, -g.probs[label].ln())),
        _ => None,
    };
    SceneScore { ade_fde, goal }
}

pub fn evaluate(model: &Model, inputs: &[SceneInput]) -> EvalMetrics {
    let scores: Vec<SceneScore> = inputs.par_iter().map(|x| score(model, x)).collect();
    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&SceneScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let has_goals = !scores.is_empty() && scores.iter().all(|s| s.goal.is_some());
    EvalMetrics {
        scenes: scores.len(),
        min_ade_1: mean(&|s| s.ade_fde[0].0),
        min_fde_1: mean(&|s| s.ade_fde[0].1),
        min_ade_6: mean(&|s| s.ade_fde[1].0),
        min_fde_6: mean(&|s| s.ade_fde[1].1),
        goal_accuracy: has_goals.then(|| mean(&|s| f64::from(u8::from(s.goal.expect("checked").0)))),
        goal_nll: has_goals.then(|| mean(&|s| s.goal.expect("checked").1)),
    }
}
