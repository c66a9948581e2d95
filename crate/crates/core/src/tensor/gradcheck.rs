use super::{Graph, Tensor, Var};
use crate::error::{arg_err, Result};

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)` over all
    /// input coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences with step `eps` (64-bit only).
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), grads)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(arg_err!("gradcheck: function must return a scalar"));
        }
        let value = g.value(out).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        g.backward(out)?;
        Ok((value, vars.iter().map(|&v| g.grad(v).expect("leaf grad")).collect()))
    };
    let analytic = eval(inputs, true)?.1;
    compare(&analytic, |xs| eval(xs, false).map(|r| r.0), inputs, eps)
}

/// Compares given analytic gradients against central differences of
/// `value`. Also lets a checker be validated against deliberately wrong
/// gradients.
pub fn compare(
    analytic: &[Tensor<f64>],
    value: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheck> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(arg_err!("gradcheck: eps {eps} outside [1e-7, 1e-3]"));
    }
    let mut probe = inputs.to_vec();
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            probe[ti].data_mut()[j] = orig + eps;
            let up = value(&probe)?;
            probe[ti].data_mut()[j] = orig - eps;
            let down = value(&probe)?;
            probe[ti].data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti].data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (ti, j);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
