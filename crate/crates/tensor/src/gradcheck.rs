use crate::error::Result;
use crate::tensor::Tensor;
use crate::Float;

#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Entries whose relative error reached the tolerance.
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares tape gradients of `loss()` with central differences
/// `(f(x+h) - f(x-h)) / 2h` for every entry of every tensor in `params`.
///
/// The relative error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn check_gradients<F: Float>(
    params: &[Tensor<F>],
    loss: impl Fn() -> Result<Tensor<F>>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<F>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]))
        .collect();

    let h = F::of(step);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + h;
            let plus = crate::no_grad(&loss)?.item()?;
            p.data_mut()[i] = orig - h;
            let minus = crate::no_grad(&loss)?.item()?;
            p.data_mut()[i] = orig;

            let numeric = (plus - minus).to_f64_lossy() / (2.0 * step);
            let a = analytic[pi][i].to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel_err = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel_err.is_nan() || rel_err > report.max_rel_err {
                report.max_rel_err = if rel_err.is_nan() { f64::INFINITY } else { rel_err };
            }
            if !(rel_err < tol) {
                report.failures.push(GradMismatch {
                    param: pi,
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(report)
}
