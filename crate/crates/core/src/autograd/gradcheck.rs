use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked entries.
    pub max_rel_error: f64,
    /// Largest relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub checked: usize,
    /// Entries whose central difference crossed a ReLU kink and were skipped.
    pub kink_skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of a scalar closure against central differences
/// with the given step, entry by entry over every parameter in `store`.
pub fn grad_check<F>(store: &mut ParamStore, step: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::with_relu_tracking();
    let root = loss_fn(&mut tape, store)?;
    let base_signs = tape.relu_signs().unwrap_or_default().to_vec();
    tape.backward(root, store)?;
    let analytic: Vec<_> = store.iter().map(|p| p.grad.clone()).collect();

    let mut eval = |store: &ParamStore| -> Result<(f64, bool)> {
        let mut t = Tape::with_relu_tracking();
        let r = loss_fn(&mut t, store)?;
        let same = t.relu_signs().unwrap_or_default() == base_signs.as_slice();
        Ok((t.scalar(r), same))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        checked: 0,
        kink_skipped: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let mut worst = 0.0f64;
        let len = store.value(id).len();
        for e in 0..len {
            let orig = store.value(id).as_slice().expect("standard layout")[e];
            store.get_mut(id).value.as_slice_mut().unwrap()[e] = orig + step;
            let (plus, same_plus) = eval(store)?;
            store.get_mut(id).value.as_slice_mut().unwrap()[e] = orig - step;
            let (minus, same_minus) = eval(store)?;
            store.get_mut(id).value.as_slice_mut().unwrap()[e] = orig;
            if !(same_plus && same_minus) {
                report.kink_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[k].as_slice().unwrap()[e];
            worst = worst.max(relative_error(a, numeric));
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((store.get(id).name.clone(), worst));
    }
    store.zero_grad();
    Ok(report)
}
