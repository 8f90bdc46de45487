use super::Scalar;

/// Central-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Finite-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
}

impl GradCheck {
    /// `h = 1e-5`, tolerance `1e-6`.
    pub const F64: GradCheck = GradCheck {
        step: 1e-5,
        tolerance: 1e-6,
    };
    /// `h = 1e-2`, tolerance `1e-3`. Larger steps keep the 32-bit rounding
    /// error of the difference quotient below the tolerance.
    pub const F32: GradCheck = GradCheck {
        step: 1e-2,
        tolerance: 1e-3,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// The relative error per coordinate is `|a - n| / max(|a|, |n|, 1)`, which
/// degrades to an absolute error for gradients smaller than one.
pub fn grad_check<T, F>(mut f: F, point: &[T], analytic: &[T], cfg: GradCheck) -> GradCheckReport
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let mut x = point.to_vec();
    let h = T::from_f64(cfg.step);
    let mut worst = (0.0f64, 0usize);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        // divide by the step actually taken after rounding
        let taken = (orig + h).to_f64() - (orig - h).to_f64();
        let numeric = (up.to_f64() - down.to_f64()) / taken;
        let a = analytic[i].to_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if err > worst.0 || !err.is_finite() {
            worst = (if err.is_finite() { err } else { f64::INFINITY }, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: x.len(),
        passed: worst.0 < cfg.tolerance,
    }
}
