//! Central-difference validation of analytic gradients.

use super::params::{ParameterSet, TapeParams};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compare the analytic gradient of a scalar function against central
/// differences and return the worst relative error
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over all
/// parameter entries.
///
/// `f` must build the scalar from the parameters registered on the tape it
/// is given. `epsilon` must lie in `[1e-7, 1e-3]`.
pub fn grad_check<F>(f: &F, params: &ParameterSet, epsilon: f64) -> Result<f64>
where
    F: Fn(&Tape, &TapeParams) -> Var,
{
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside [1e-7, 1e-3]"
    );
    let tape = Tape::new();
    let attached = params.attach(&tape);
    let root = f(&tape, &attached);
    let analytic = tape.backward(&root, params)?;

    let eval = |p: &ParameterSet| -> Result<f64> {
        let tape = Tape::new();
        let attached = p.attach(&tape);
        f(&tape, &attached).scalar_value()
    };

    let mut worst = 0.0f64;
    for (name, value) in params.iter() {
        let analytic_grad = analytic.get(name).expect("analytic grad present");
        for idx in 0..value.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[idx] += epsilon;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[idx] -= epsilon;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * epsilon);
            let a = analytic_grad.data()[idx];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check of {name}[{idx}]"
                )));
            }
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
