//! Central finite-difference gradient oracle.

use super::Tensor;

/// Central-difference estimate of d f / d x, one element at a time:
/// (f(x + h·e_i) − f(x − h·e_i)) / (2h).
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    let mut grad = Tensor::zeros(x.shape);
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = f(&probe);
        probe.data[i] = orig - h;
        let fm = f(&probe);
        probe.data[i] = orig;
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Max mixed relative error between an analytic gradient and the
/// finite-difference estimate: |a−fd| / max(1, |a|, |fd|).
pub fn max_rel_error(analytic: &Tensor, fd: &Tensor) -> f64 {
    analytic
        .data
        .iter()
        .zip(&fd.data)
        .map(|(a, b)| (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs()))
        .fold(0.0, f64::max)
}
