use super::{AutodiffError, Tape, Tensor, Var};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compares tape gradients of a scalar function against central finite
/// differences and returns the largest relative error
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)` over every input element.
///
/// `f` is re-run on a fresh tape for every perturbation, so it must be a pure
/// function of its inputs (fixed dropout seeds are fine).
pub fn grad_check<F, E>(f: F, inputs: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out);
        value
            .item()
            .ok_or_else(|| AutodiffError::NotScalar(value.shape().to_vec()).into())
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for (idx, &ad) in analytic[k].iter().enumerate().take(input.numel()) {
            let original = input.data()[idx];
            work[k].data_mut()[idx] = original + FD_STEP;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = original - FD_STEP;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = (ad - numeric).abs() / 1f64.max(ad.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
