//! Finite-difference checks over named parameter sets.

use s4m_autodiff::{numeric_gradient, relative_error, Binding, Params, Tape, Var};

use crate::error::Result;

/// For every parameter accepted by `select`, the max relative error between
/// the analytic gradient of `loss` and its central difference with `step`.
/// `loss` must build the same deterministic graph on every call.
pub fn check_params(
    params: &Params,
    select: impl Fn(&str) -> bool,
    loss: impl Fn(&mut Tape, &Binding) -> Result<Var>,
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape, &select);
    let l = loss(&mut tape, &bind)?;
    let grads = tape.backward(l)?;
    let analytic = bind.gradients(&tape, &grads);

    let eval = |p: &Params| -> Result<f64> {
        let mut tape = Tape::new();
        let bind = p.bind(&mut tape, |_| false);
        let l = loss(&mut tape, &bind)?;
        Ok(tape.value(l).item())
    };
    let mut out = Vec::new();
    for (name, theta) in params.iter() {
        if !select(name) {
            continue;
        }
        let numeric = numeric_gradient(
            |t| {
                let mut probe = params.clone();
                probe.insert(name, t.clone());
                Ok(eval(&probe).unwrap_or(f64::NAN))
            },
            theta,
            step,
        )?;
        let a = analytic.get(name).expect("selected parameter is bound with grad");
        out.push((name.to_string(), relative_error(a, &numeric)));
    }
    Ok(out)
}
