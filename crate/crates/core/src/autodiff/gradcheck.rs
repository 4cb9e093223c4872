use ndarray::Array2;

use super::{Tape, TensorError, Var};

/// Step for central differences.
const STEP: f64 = 1e-6;

/// Denominator floor of [`relative_error`]. Central differences carry about
/// `1e-10` of round-off, so gradients that are truly zero (a parameter that
/// cancels inside a softmax, say) are compared absolutely below this norm.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.mapv(|v| v * v).sum().sqrt();
    let diff = norm(&(analytic - numeric));
    diff / norm(analytic).max(norm(numeric)).max(GRADIENT_FLOOR)
}

/// Central-difference gradient of the scalar produced by `f` with respect to
/// `inputs[which]`.
pub fn finite_difference<F>(inputs: &[Array2<f64>], which: usize, f: &F) -> Result<Array2<f64>, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Array2<f64>]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vars = xs.iter().map(|x| t.constant(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut t, &vars)?;
        Ok(t.scalar(out))
    };
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    let mut grad = Array2::zeros(inputs[which].dim());
    for idx in 0..grad.len() {
        let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
        let orig = work[which][[r, c]];
        work[which][[r, c]] = orig + STEP;
        let plus = eval(&work)?;
        work[which][[r, c]] = orig - STEP;
        let minus = eval(&work)?;
        work[which][[r, c]] = orig;
        grad[[r, c]] = (plus - minus) / (2.0 * STEP);
    }
    Ok(grad)
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every input and returns the largest relative error.
pub fn check_gradients<F>(inputs: &[Array2<f64>], f: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut t = Tape::new();
    let vars = inputs.iter().map(|x| t.variable(x.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut t, &vars)?;
    let grads = t.backward(out)?;
    let mut worst: f64 = 0.0;
    for (i, (&v, x)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get_or_zero(v, x.dim());
        let numeric = finite_difference(inputs, i, &f)?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
