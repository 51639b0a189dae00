//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Comparison for one input tensor.
#[derive(Clone, Debug)]
pub struct InputCheck {
    pub input: usize,
    /// Largest `|analytic - numeric|` over the tensor's elements.
    pub max_abs_error: f64,
    /// `max_abs_error` divided by the largest gradient magnitude seen
    /// (analytic or numeric) in the same tensor.
    pub max_rel_error: f64,
    pub worst_element: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub tolerance: f64,
    /// Set when the function produced a non-finite value at some probe.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.inputs.iter().all(|c| c.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares the tape gradient of scalar `f` at `inputs` with central
/// differences of step `eps`.
///
/// `f` receives a fresh tape and one parameter handle per input and must
/// return a scalar. Every input is treated as trainable.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new().with_finite_check(false);
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item()?, analytic(&tape, out, &vars)?))
    };
    let value_at = |values: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new().with_finite_check(false);
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let (base, grads) = eval(inputs)?;
    let mut report = GradCheckReport {
        inputs: Vec::new(),
        tolerance,
        failure: None,
    };
    if !base.is_finite() {
        report.failure = Some(format!("function value {base} at the base point is not finite"));
        return Ok(report);
    }

    let step = T::from_f64_lossy(eps);
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (which, grad) in grads.iter().enumerate() {
        let mut numeric = vec![0.0f64; grad.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe[which].data()[j];
            probe[which].data_mut()[j] = orig + step;
            let plus = value_at(&probe)?;
            probe[which].data_mut()[j] = orig - step;
            let minus = value_at(&probe)?;
            probe[which].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                report.failure = Some(format!("non-finite value probing input {which} element {j}"));
                return Ok(report);
            }
            // Divide by the realized step so rounding of orig +/- step cancels.
            let realized = (orig + step).as_f64() - (orig - step).as_f64();
            *slot = (plus.as_f64() - minus.as_f64()) / realized;
        }
        let mut worst = (0.0f64, 0usize);
        let mut scale = 0.0f64;
        for (j, (&a, &n)) in grad.data().iter().zip(&numeric).enumerate() {
            let a = a.as_f64();
            scale = scale.max(a.abs()).max(n.abs());
            let e = (a - n).abs();
            if e > worst.0 {
                worst = (e, j);
            }
        }
        report.inputs.push(InputCheck {
            input: which,
            max_abs_error: worst.0,
            max_rel_error: if scale > 0.0 { worst.0 / scale } else { worst.0 },
            worst_element: worst.1,
        });
    }
    Ok(report)
}

fn analytic<T: Real>(tape: &Tape<T>, out: Var, vars: &[Var]) -> Result<Vec<Tensor<T>>> {
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvSpec;

    #[test]
    fn linear_map_is_exact() {
        // f(x) = sum(A x) realized as a 1x1 convolution over channels
        let a = Tensor::<f64>::from_fn([3, 4, 1, 1], |i| (i as f64 * 0.37).cos());
        let x = Tensor::<f64>::from_fn([1, 4, 1, 1], |i| i as f64 - 1.5);
        let report = grad_check(
            |tape, v| {
                let y = tape.conv2d(v[1], v[0], None, ConvSpec::valid(1))?;
                tape.sum(y)
            },
            &[a, x],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn non_finite_is_reported_not_panicked() {
        let x = Tensor::<f64>::full([1], f64::MAX);
        let report = grad_check(
            |tape, v| {
                let y = tape.mul(v[0], v[0])?;
                tape.sum(y)
            },
            &[x],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.failure.is_some());
    }
}
