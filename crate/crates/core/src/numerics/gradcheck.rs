//! Central-difference gradient verification.

use super::params::{Grads, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Invalid(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

/// Compares the analytic gradient reported by `f` at `x` against central
/// differences and returns the worst `|analytic − numeric| / max(1, |analytic|)`.
///
/// `f` returns the scalar value and its gradient with the shape of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    check_eps(eps)?;
    let (_, analytic) = f(x)?;
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (fp - fm) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Same check over every trainable parameter of a store.
///
/// `stride` > 1 probes only every `stride`-th coordinate of each parameter,
/// which keeps checks on whole models affordable.
pub fn grad_check_params<F>(params: &ParamStore, f: F, eps: f64, stride: usize) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    check_eps(eps)?;
    let (_, grads) = f(params)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids().filter(|&id| params.is_trainable(id)) {
        let n = params.get(id).len();
        let analytic = grads.get(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for i in (0..n).step_by(stride.max(1)) {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let (fp, _) = f(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let (fm, _) = f(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    #[test]
    fn square_is_exact() {
        let err = grad_check(
            |x| {
                let v = x.data()[0];
                Ok((v * v, Tensor::scalar(2.0 * v)))
            },
            &Tensor::scalar(3.0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![4.0, 4.5, -0.1]]);
        let err = grad_check(
            |x| {
                let mut g = Graph::new();
                let v = g.input(x.clone())?;
                let s = g.softmax_rows(v, None)?;
                let l = g.sum_all(s)?;
                let grads = g.backward(l)?;
                let dx = grads.wrt(&g, v).unwrap();
                assert!(dx.data().iter().all(|d| d.abs() < 1e-12));
                Ok((g.value(l).data()[0], dx))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn eps_out_of_range_rejected() {
        assert!(grad_check(|x| Ok((0.0, x.clone())), &Tensor::scalar(1.0), 1e-1).is_err());
    }
}
