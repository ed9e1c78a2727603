//! Central finite-difference oracle for tape gradients.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MIN_STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`; must lie in `[1e-7, 1e-3]`.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is
    /// `|tape - numeric| / max(|tape|, |numeric|, floor)`, which keeps
    /// vanishing gradients from turning rounding noise into failures.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Default::default()
        }
    }
}

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub input: usize,
    pub coordinate: usize,
    pub tape: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Discrepancy>,
    pub coordinates: usize,
    /// Coordinates that only passed after shrinking the step.
    pub refined: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the tape gradient of a scalar function of `inputs` against
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of every input.
/// A failing coordinate is retried with `h` divided by 10 down to `1e-7`.
///
/// `f` receives a fresh tape and one leaf per input, and must return a
/// scalar. It is called `1 + 2 * coordinates` times, so it must be a pure
/// function of its inputs.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(MIN_STEP..=1e-3).contains(&opts.step) {
        return Err(Error::contract(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            opts.step
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let mut eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out).item()?;
        if !value.is_finite() {
            return Err(Error::numeric("grad_check objective"));
        }
        Ok(value)
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_error = 0.0_f64;
    let mut worst = None;
    let mut coordinates = 0;
    let mut refined = 0;
    for input in 0..inputs.len() {
        for coordinate in 0..inputs[input].len() {
            let original = inputs[input].data()[coordinate];
            let tape_grad = analytic[input].data()[coordinate];
            let mut step = opts.step;
            let (mut rel, mut numeric);
            loop {
                work[input].data_mut()[coordinate] = original + step;
                let plus = eval(&work)?;
                work[input].data_mut()[coordinate] = original - step;
                let minus = eval(&work)?;
                work[input].data_mut()[coordinate] = original;
                numeric = (plus - minus) / (2.0 * step);
                let denom = tape_grad.abs().max(numeric.abs()).max(opts.floor);
                rel = (tape_grad - numeric).abs() / denom;
                // A kink of a piecewise-linear op inside [x - h, x + h]
                // spoils the difference; it leaves the interval as h shrinks.
                if rel < opts.tolerance || step / 10.0 < MIN_STEP * 0.999 {
                    break;
                }
                step /= 10.0;
            }
            if step < opts.step {
                refined += 1;
            }
            coordinates += 1;
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(rel);
                worst = Some(Discrepancy {
                    input,
                    coordinate,
                    tape: tape_grad,
                    numeric,
                });
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst,
        coordinates,
        refined,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
    })
}
