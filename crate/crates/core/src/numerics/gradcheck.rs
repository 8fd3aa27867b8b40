//! Central finite-difference checks of analytic gradients.

use super::{Gradients, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` seen.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the analytic gradient returned by `eval` against central
/// differences with step `h`, on every entry of every trainable parameter.
///
/// `eval` returns the scalar loss and its gradients for the given parameter
/// values. It is called twice per checked entry.
pub fn check_gradients<F>(params: &ParamStore<f64>, h: f64, mut eval: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<(f64, Gradients<f64>)>,
{
    let (_, analytic) = eval(params)?;
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = params.get(id).tensor.len();
        for i in 0..n {
            let orig = params.get(id).tensor.data()[i];
            work.get_mut(id).tensor.data_mut()[i] = orig + h;
            let (plus, _) = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[i] = orig - h;
            let (minus, _) = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = (exact - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_param = params.get(id).name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
