//! Central finite-difference check of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst coordinate found by [`grad_check_many`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences `(f(x+h) - f(x-h)) / 2h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}

/// Multi-input variant of [`grad_check`]: every element of every input is
/// probed. Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Numerical(format!(
            "finite-difference step {h:e} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |xs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let base = tape.value(out);
    if base.len() != 1 {
        return Err(Error::shape("grad_check", &[1], base.shape()));
    }
    if !base.data()[0].is_finite() {
        return Err(Error::ProbeFailure {
            coordinate: 0,
            direction: '0',
        });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(tape);

    let mut probe = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut flat = 0;
    for t in 0..inputs.len() {
        for e in 0..inputs[t].len() {
            let orig = inputs[t].data()[e];
            probe[t].data_mut()[e] = orig + h;
            let plus = scalar_at(&eval, &probe, flat, '+')?;
            probe[t].data_mut()[e] = orig - h;
            let minus = scalar_at(&eval, &probe, flat, '-')?;
            probe[t].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t].data()[e];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error || flat == 0 {
                report.max_rel_error = rel;
                report.worst = (t, e);
                report.analytic = a;
                report.numeric = numeric;
            }
            flat += 1;
        }
    }
    report.coordinates = flat;
    Ok(report)
}

fn scalar_at<E>(eval: &E, xs: &[Tensor], coordinate: usize, direction: char) -> Result<f64>
where
    E: Fn(&[Tensor]) -> Result<(Tape, Vec<Var>, Var)>,
{
    let (tape, _, out) = eval(xs)?;
    let v = tape.value(out).data()[0];
    if !v.is_finite() {
        return Err(Error::ProbeFailure { coordinate, direction });
    }
    Ok(v)
}
