//! Central finite differences for checking analytic gradients.

use crate::tape::Mat;

/// Numerical gradient of `f` at `x`, one coordinate at a time.
pub fn central_difference<F>(x: &Mat, eps: f64, mut f: F) -> Mat
where
    F: FnMut(&Mat) -> f64,
{
    let mut grad = Mat::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + eps;
        let up = f(&probe);
        probe[[r, c]] = orig - eps;
        let down = f(&probe);
        probe[[r, c]] = orig;
        grad[[r, c]] = (up - down) / (2.0 * eps);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a floor of 1e-8 on the denominator so two
/// vanishing gradients compare as equal.
pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.raw_dim(), b.raw_dim(), "gradient shapes differ");
    let norm = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&(a - b));
    diff / norm(a).max(norm(b)).max(1e-8)
}
