//! Central finite-difference gradient checks.

use super::{Result, Tensor};

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h` for every coordinate of `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the backward pass of scalar-valued `f` against central differences
/// in every element of every input, returning the worst relative error over inputs.
pub fn check_fn(f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], h: f64) -> Result<f64> {
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach_param).collect();
    f(&leaves)?.backward()?;
    let mut worst = 0.0f64;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let numeric = numeric_gradient(
            |x| {
                let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
                probe[i] = Tensor::new(leaf.shape(), x.to_vec())?;
                Ok(super::no_grad(|| f(&probe))?.item())
            },
            leaf.data(),
            h,
        )?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}
