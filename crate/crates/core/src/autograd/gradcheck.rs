//! Central finite-difference verification of analytic gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compare analytic gradients of the scalar `f` against central differences.
///
/// `f` receives a fresh tape and one leaf per entry of `params`, and returns the
/// loss variable. The result is the maximum over parameter tensors of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`, with `|·|` the
/// Euclidean norm of that tensor's gradient.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>], requires_grad: bool| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone(), requires_grad)).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss);
        if value.len() != 1 || !value.data()[0].is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grad_check needs a finite scalar loss, got {:?}",
                value.data()
            )));
        }
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(params, true)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; params[pi].len()]);
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params[pi].data()[i];
            probe[pi].data_mut()[i] = orig + eps;
            let (t, _, l) = eval(&probe, false)?;
            let plus = t.value(l).data()[0];
            probe[pi].data_mut()[i] = orig - eps;
            let (t, _, l) = eval(&probe, false)?;
            let minus = t.value(l).data()[0];
            probe[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
