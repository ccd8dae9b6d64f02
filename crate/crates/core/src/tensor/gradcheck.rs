use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, element index) of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the tape gradient of a scalar-valued closure with central
/// differences of step `eps`, over every element of every input.
///
/// Relative error is measured against `max(|analytic|, |numeric|, floor)`
/// where `floor` scales with the closure value to absorb rounding noise.
///
/// The numeric side only ever runs forward passes on inference graphs.
pub fn grad_check<Op>(op: Op, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    Op: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = op(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = op(&mut g, &vars)?;
    let f0 = scalar_of(&g, out)?;
    // Central differences carry roughly eps_mach * |f| / eps of rounding
    // noise. Gradients below this floor are compared in absolute terms with
    // 1e-4 of the floor as slack, about ten times that noise.
    let floor = (1e5 * f64::EPSILON * f0.abs() / eps).max(1e-8);
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        if !analytic.all_finite() {
            return Err(Error::OracleFailure(format!(
                "non-finite analytic gradient for input {i}"
            )));
        }
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;

            let central = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(floor);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::invalid(format!(
            "grad_check: closure must return a scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}
