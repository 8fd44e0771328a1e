//! Central finite-difference verification of tape gradients.

use crate::error::{invalid, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Max relative error between the tape gradient of `f` at `x` and a
/// central finite-difference estimate with the given step.
///
/// `f` must produce a scalar. The error for coordinate `i` is
/// `|g_ad[i] - g_fd[i]| / max(1, |g_fd[i]|)`; the maximum over all
/// coordinates is returned.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f32) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(invalid("finite_diff_check", "step must be positive"));
    }
    // Autodiff gradient.
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    if tape.value(y).numel() != 1 {
        return Err(invalid(
            "finite_diff_check",
            alloc::format!("f must be scalar-valued, got shape {:?}", tape.shape(y)),
        ));
    }
    let mut grads = tape.backward(y)?;
    let g_ad = grads.take(xv).expect("input requires grad");

    // Value-only evaluation helper.
    let eval = |xs: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(xs.clone(), false);
        let out = f(&mut t, v)?;
        Ok(t.value(out).data()[0] as f64)
    };

    let mut max_rel = 0.0f32;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let g_fd = ((plus - minus) / (2.0 * step as f64)) as f32;
        let rel = (g_ad.data()[i] - g_fd).abs() / f32::max(1.0, g_fd.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_exact() {
        let x = crate::rng::SeedRng::new(1).normal_tensor(&[5]);
        let err = finite_diff_check(|t, v| t.sum_all(v), &x, 1e-3).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn rejects_non_scalar_outputs() {
        let x = Tensor::zeros(vec![3]);
        assert!(finite_diff_check(|_, v| Ok(v), &x, 1e-3).is_err());
    }

    #[test]
    fn rectangular_matmul_gradients_match_fd_in_both_arguments() {
        let mut rng = crate::rng::SeedRng::new(23);
        let x = rng.normal_tensor(&[3, 5]);
        let w = rng.normal_tensor(&[5, 2]);
        // d/dx of sum(x @ w)
        let err_x = finite_diff_check(
            |t, v| {
                let wv = t.leaf(w.clone(), false);
                let y = t.matmul(v, wv)?;
                t.sum_all(y)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err_x < 1e-3, "err_x = {err_x}");
        // d/dw of sum(x @ w)
        let err_w = finite_diff_check(
            |t, v| {
                let xv = t.leaf(x.clone(), false);
                let y = t.matmul(xv, v)?;
                t.sum_all(y)
            },
            &w,
            1e-3,
        )
        .unwrap();
        assert!(err_w < 1e-3, "err_w = {err_w}");
    }

    #[test]
    fn composite_matmul_softmax_norm_matches_fd() {
        let mut rng = crate::rng::SeedRng::new(5);
        let w = rng.normal_tensor(&[4, 4]);
        let x = rng.normal_tensor(&[3, 4]);
        let err = finite_diff_check(
            |t, v| {
                let wv = t.leaf(w.clone(), false);
                let h = t.matmul(v, wv)?;
                let s = t.softmax_lastdim(h, None)?;
                let n = t.layer_norm_lastdim(s, 1e-5)?;
                let sq = t.mul(n, n)?;
                t.sum_all(sq)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "err = {err}");
    }
}
