use super::{ParamSet, Tape, Tensor, TensorError};

/// Central-difference gradient of a scalar function at `point`.
pub fn central_difference<F>(f: &F, point: &Tensor, step: f64) -> Result<Vec<f64>, TensorError>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError>,
{
    let mut probe = point.detach();
    let mut out = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let x0 = probe.values()[i];
        probe.values_mut()[i] = x0 + step;
        let up = f(&mut Tape::inactive(), &probe)?.item()?;
        probe.values_mut()[i] = x0 - step;
        let down = f(&mut Tape::inactive(), &probe)?.item()?;
        probe.values_mut()[i] = x0;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest relative disagreement between the tape gradient of `f` at
/// `point` and central differences with the given step.
///
/// The per-coordinate error is `|analytic - numeric| / (|analytic| + 1e-6)`;
/// the floor keeps rounding noise on near-zero coordinates from dominating.
pub fn finite_diff_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError>,
{
    check_step(step)?;
    let mut tape = Tape::new();
    let x = tape.leaf(point);
    let y = f(&mut tape, &x)?;
    let analytic = tape.grads_for(&y, &[&x])?.remove(0);
    let numeric = central_difference(&f, point, step)?;
    Ok(max_relative_error(analytic.values(), &numeric))
}

/// [`finite_diff_check`] over every value of a parameter set at once.
pub fn param_grad_check<P, F>(params: &P, f: F, step: f64) -> Result<f64, TensorError>
where
    P: ParamSet,
    F: Fn(&mut Tape, &P) -> Result<Tensor, TensorError>,
{
    check_step(step)?;
    let point = Tensor::row(params.flat_values())?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let analytic: Vec<f64> = tape
        .grads_for(&loss, &bound.tensors())?
        .iter()
        .flat_map(|g| g.values().to_vec())
        .collect();
    let eval = |_: &mut Tape, x: &Tensor| {
        let mut p = params.clone();
        p.set_flat_values(x.values())?;
        f(&mut Tape::inactive(), &p)
    };
    let numeric = central_difference(&eval, &point, step)?;
    Ok(max_relative_error(&analytic, &numeric))
}

fn check_step(step: f64) -> Result<(), TensorError> {
    if step > 0.0 && step <= 1e-2 {
        Ok(())
    } else {
        Err(TensorError::InvalidArgument(format!(
            "finite-difference step must lie in (0, 1e-2], got {step}"
        )))
    }
}

pub(crate) fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-6))
        .fold(0.0, f64::max)
}
