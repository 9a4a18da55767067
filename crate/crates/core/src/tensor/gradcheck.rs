use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the backward-pass gradient of `f` at `x` with central finite
/// differences and returns the largest entry-wise relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
///
/// `f` must build a scalar on the tape it is given.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let loss = f(&mut tape, xv)?;
        check_finite(tape.value(loss), "loss")?;
        tape.backward(loss)?.get(xv)
    };

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(point, false);
        let loss = f(&mut tape, xv)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value} during finite differences")));
        }
        Ok(value)
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient at {i}")));
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
