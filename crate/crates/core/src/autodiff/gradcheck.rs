//! Central finite-difference gradient checking.

use super::{Mode, ParamStore, Tape, Var};
use crate::error::Result;
use crate::linalg::Matrix;

/// Outcome of [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Compares the tape's gradients of `f` with respect to `inputs` against
/// central differences with step `h`.
///
/// `f` builds a scalar on a fresh tape from leaf variables holding the
/// inputs; it is re-run on a new tape with the same `mode` for every
/// perturbation, so dropout masks repeat exactly.
pub fn check_gradients<F>(inputs: &[Matrix], h: f64, mode: Mode, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new(mode);
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).get(0, 0))
    };

    let mut tape = Tape::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
    };
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let (r, c) = inputs[k].shape();
        let analytic = tape.grad(*var).cloned().unwrap_or_else(|| Matrix::zeros(r, c));
        for idx in 0..r * c {
            let orig = inputs[k].as_slice()[idx];
            work[k].as_mut_slice()[idx] = orig + h;
            let plus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig - h;
            let minus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_slice()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, idx);
            }
        }
    }
    Ok(report)
}

/// Like [`check_gradients`], but differentiates with respect to every
/// tensor in a parameter store that `f` registers on the tape.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    h: f64,
    mode: Mode,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(mode);
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).get(0, 0))
    };

    let mut tape = Tape::new(mode);
    let out = f(&mut tape, store)?;
    tape.backward(out)?;
    let grads = tape.param_grads(store);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
    };
    let mut work = store.clone();
    for id in store.ids() {
        let (r, c) = store.get(id).shape();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Matrix::zeros(r, c));
        for idx in 0..r * c {
            let orig = store.get(id).as_slice()[idx];
            work.get_mut(id).as_mut_slice()[idx] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).as_mut_slice()[idx] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_slice()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (id.0, idx);
            }
        }
    }
    Ok(report)
}
