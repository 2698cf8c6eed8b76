use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

fn eval_scalar<F>(f: &F, xs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
    let out = f(&mut g, &vars).map_err(|e| Error::Evaluation(e.to_string()))?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Evaluation("function value is not finite".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `f` with central differences at `xs`.
///
/// Returns the max over every coordinate of every input of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check_all<F>(f: F, xs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be > 0, got {step}")));
    }
    eval_scalar(&f, xs)?;

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = xs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v);
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let plus = eval_scalar(&f, &probe)?;
            probe[k].data_mut()[i] = orig - step;
            let minus = eval_scalar(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_all`].
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_all(|g, vs| f(g, vs[0]), std::slice::from_ref(x), step)
}
