use super::Tensor;
use crate::error::{contract, Error, Result};

/// Central-difference gradient of a scalar function of several tensors.
///
/// Each scalar entry is perturbed by `±step` in turn, all others held fixed.
pub fn finite_difference_gradient<F>(mut f: F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(contract(format!("finite-difference step must be positive, got {step}")));
    }
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { op: "finite_difference" });
            }
            g.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, falling back to the absolute difference when
/// both gradients are essentially zero.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact_up_to_rounding() {
        let g = finite_difference_gradient(
            |p| Ok(p[0].item() * p[0].item()),
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!((g[0].item() - 6.0).abs() / 6.0 < 1e-6);
    }

    #[test]
    fn exp_matches_closed_form() {
        let g = finite_difference_gradient(|p| Ok(p[0].item().exp()), &[Tensor::scalar(1.0)], 1e-5)
            .unwrap();
        let e = std::f64::consts::E;
        assert!((g[0].item() - e).abs() / e < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let params = [Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap(), Tensor::scalar(4.0)];
        let g = finite_difference_gradient(|_| Ok(7.0), &params, 1e-5).unwrap();
        assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_step_and_non_finite_values() {
        let p = [Tensor::scalar(0.0)];
        assert!(finite_difference_gradient(|_| Ok(0.0), &p, 0.0).is_err());
        assert!(matches!(
            finite_difference_gradient(|_| Ok(f64::NAN), &p, 1e-5),
            Err(Error::NonFinite { .. })
        ));
    }
}
