use super::{no_grad, Tensor};

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Central difference of `f` with respect to one entry of `param`.
pub fn finite_difference(f: &dyn Fn() -> Tensor, param: &Tensor, index: usize) -> f64 {
    let original = param.data()[index];
    param.data_mut()[index] = original + GRAD_CHECK_STEP;
    let plus = no_grad(|| f().item());
    param.data_mut()[index] = original - GRAD_CHECK_STEP;
    let minus = no_grad(|| f().item());
    param.data_mut()[index] = original;
    (plus - minus) / (2.0 * GRAD_CHECK_STEP)
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-8)` between the
/// backward-pass gradient and central differences, over every entry of
/// every parameter.
pub fn grad_check(f: &dyn Fn() -> Tensor, params: &[Tensor]) -> f64 {
    params.iter().for_each(Tensor::zero_grad);
    f().backward().expect("grad_check needs a scalar function");
    let mut worst = 0.0f64;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let n = finite_difference(f, p, i);
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    params.iter().for_each(Tensor::zero_grad);
    worst
}
