//! Central finite-difference check of the tape gradients, per parameter group.

use crate::model::{param_group, LossWeights, Model, SceneInput};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    pub scalars: usize,
    /// `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖, floor)` over the group.
    pub relative_error: f64,
    pub grad_norm: f64,
}

/// Summed total loss over `inputs` with goals forced to their labels.
pub fn total_loss(model: &Model, inputs: &[SceneInput], weights: &LossWeights) -> f64 {
    let mut tape = Tape::new();
    inputs
        .iter()
        .map(|input| {
            tape.clear();
            let fwd = model.forward(&mut tape, input, input.label);
            let loss = model.losses(&mut tape, &fwd, input, weights);
            tape.value(loss.total).item()
        })
        .sum()
}

/// Analytic gradient of [`total_loss`].
pub fn total_gradient(model: &Model, inputs: &[SceneInput], weights: &LossWeights) -> Vec<Tensor> {
    let mut grads = model.params.zeros_like();
    let mut tape = Tape::new();
    for input in inputs {
        tape.clear();
        let fwd = model.forward(&mut tape, input, input.label);
        let loss = model.losses(&mut tape, &fwd, input, weights);
        tape.backward(loss.total, 1.0, &mut grads);
    }
    grads
}

/// Compares the analytic gradient with central differences of step `h` on
/// every scalar parameter and reports one line per group, in first-seen order.
pub fn gradient_check(model: &Model, inputs: &[SceneInput], weights: &LossWeights, h: f64) -> Vec<GroupCheck> {
    let analytic = total_gradient(model, inputs, weights);
    let mut probe = model.clone();
    let mut groups: Vec<(String, usize, f64, f64, f64)> = Vec::new();
    for (i, name) in model.params.names.iter().enumerate() {
        let group = param_group(name);
        let pos = match groups.iter().position(|g| g.0 == group) {
            Some(p) => p,
            None => {
                groups.push((group.to_string(), 0, 0.0, 0.0, 0.0));
                groups.len() - 1
            }
        };
        for j in 0..model.params.values[i].len() {
            let orig = probe.params.values[i].data[j];
            probe.params.values[i].data[j] = orig + h;
            let up = total_loss(&probe, inputs, weights);
            probe.params.values[i].data[j] = orig - h;
            let down = total_loss(&probe, inputs, weights);
            probe.params.values[i].data[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = analytic[i].data[j];
            let e = &mut groups[pos];
            e.1 += 1;
            e.2 += (g - fd) * (g - fd);
            e.3 += g * g;
            e.4 += fd * fd;
        }
    }
    groups
        .into_iter()
        .map(|(group, scalars, diff, g2, fd2)| {
            let scale = g2.sqrt().max(fd2.sqrt()).max(1e-12);
            GroupCheck {
                group,
                scalars,
                relative_error: diff.sqrt() / scale,
                grad_norm: g2.sqrt(),
            }
        })
        .collect()
}
