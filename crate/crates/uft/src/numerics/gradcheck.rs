//! Finite-difference gradient verification.
//!
//! The independent oracle for every analytic gradient in this crate: central
//! differences in float64 compared coordinate-by-coordinate against the
//! recorded-tape gradient.

use crate::error::{Error, Result};
use crate::numerics::tape;
use crate::numerics::tensor::{Buffer, DType, Tensor};

/// Max over coordinates of |analytic − numeric| / max(1, |analytic|, |numeric|),
/// with numeric = (f(x + eps·eᵢ) − f(x − eps·eᵢ)) / (2·eps).
///
/// `point` must be float64; `f` must be deterministic. Non-finite function
/// values abort with the offending coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if point.dtype() != DType::F64 {
        return Err(Error::invalid(
            "grad_check",
            "point must be float64 (finite differences are unusable in float32)",
        ));
    }

    // Analytic gradient via one recorded forward/backward.
    let leaf = point.to_param();
    tape::start_recording()?;
    let y = match f(&leaf) {
        Ok(y) => y,
        Err(e) => {
            tape::abort_recording();
            return Err(e);
        }
    };
    let y0 = y.item()?;
    if !y0.is_finite() {
        tape::abort_recording();
        return Err(Error::Numeric(format!(
            "grad_check: non-finite function value {} at the base point",
            y0
        )));
    }
    tape::backward(&y)?;
    let analytic = leaf
        .grad()
        .map(|g| g.to_f64_vec())
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let base = point.to_f64_vec();
    let shape = point.shape().to_vec();
    let mut max_rel = 0.0f64;

    let eval = |data: Vec<f64>| -> Result<f64> {
        let x = Tensor::from_buffer(&shape, Buffer::F64(data))?;
        f(&x)?.item()
    };

    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fp = eval(plus)?;
        let fm = eval(minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "grad_check: non-finite function value at coordinate {}",
                i
            )));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops;

    #[test]
    fn polynomial_is_exact_to_machine_precision() {
        // f = sum(x^2) at x = [1, 2]
        let p = Tensor::from_f64(&[2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(|x| ops::sum_all(&ops::square(x)?), &p, 1e-4).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn rejects_f32_points() {
        let p = Tensor::from_f32(&[2], vec![1.0, 2.0]).unwrap();
        assert!(grad_check(|x| ops::sum_all(x), &p, 1e-4).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // loss = sum(A·B) for 2x2 A, B; differentiate w.r.t. A with B fixed.
        let b = Tensor::from_f64(&[2, 2], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let p = Tensor::from_f64(&[2, 2], vec![1.0, 2.0, -0.5, 0.25]).unwrap();
        let err = grad_check(|a| ops::sum_all(&ops::matmul(a, &b)?), &p, 1e-4).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn softmax_attention_probe() {
        // Scalar probe through softmax: f = sum(softmax(x) ⊙ w).
        let w = Tensor::from_f64(&[4], vec![0.9, -0.3, 0.1, 1.7]).unwrap();
        let p = Tensor::from_f64(&[4], vec![0.2, -0.8, 1.1, 0.4]).unwrap();
        let err = grad_check(
            |x| ops::sum_all(&ops::mul(&ops::softmax(x)?, &w)?),
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }
}
