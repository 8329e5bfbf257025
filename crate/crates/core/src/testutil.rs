//! Finite-difference oracle shared by unit tests.

use crate::tensor::{Graph, Real, Tensor, Var};
use crate::Result;

pub(crate) const FD_STEP: Real = 1e-5;

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub(crate) fn rel_err(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Builds `f` on fresh inputs and compares every input gradient against
/// central differences of the forward value. Returns the worst relative error.
pub(crate) fn check_gradients(
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Real {
    let eval = |ins: &[Tensor]| -> Real {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    g.backward(out).unwrap();

    let mut worst: Real = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}
