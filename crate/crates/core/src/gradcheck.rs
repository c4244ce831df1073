//! Central finite-difference checks of graph gradients.

use alloc::string::String;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{Bound, ParamStore};

/// Differences smaller than this are treated as agreement regardless of
/// their relative size.
pub const ABS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar parameters compared.
    pub checked: usize,
    /// Largest `|a − n| / max(|a|, |n|)` over entries that exceed the
    /// absolute floor.
    pub max_rel_err: f64,
    /// Largest `|a − n|` over all entries.
    pub max_abs_err: f64,
    /// Largest `|a|`, to judge the absolute error against.
    pub max_abs_grad: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Relative error used by every gradient check, zero below [`ABS_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Compares the reverse-mode gradient of the scalar produced by `loss`
/// with central differences of step `h` for every parameter in `store`.
pub fn check_params<F>(store: &ParamStore, h: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let root = loss(&mut g, &bound)?;
    g.backward(root)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let bound = s.bind(&mut g);
        let root = loss(&mut g, &bound)?;
        Ok(g.value(root).item())
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        max_abs_grad: 0.0,
        worst: None,
    };
    let mut probe = store.clone();
    for id in store.ids() {
        // Parameters the loss never reaches have zero gradient.
        let analytic = g
            .grad(bound.var(id))
            .unwrap_or_else(|| crate::tensor::Tensor::zeros(store.get(id).shape()));
        for j in 0..store.get(id).numel() {
            let original = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = original + h;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = original - h;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            let err = relative_error(a, numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((String::from(store.name(id)), j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
