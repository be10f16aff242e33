//! Central finite-difference verification of tape gradients.

use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Step used by the acceptance checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms. Central
/// differences at `DEFAULT_EPS` carry about 1e-10 of rounding and truncation
/// error, which is what an exactly-zero gradient (such as an attention key
/// bias, which only shifts whole softmax rows) shows up as.
const MAGNITUDE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in name order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, err) in &self.per_param {
            writeln!(f, "  {name:<40} {err:.3e}")?;
        }
        write!(
            f,
            "max relative error {:.3e} (tolerance {:.1e}): {}",
            self.max_rel_error,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

fn evaluate<F>(store: &ParamStore<f64>, loss: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = loss(&mut g)?;
    let v = g.value(out)[[0, 0]];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of `loss` against central differences for
/// every scalar of every parameter in `store`.
///
/// `loss` must build a `1 × 1` output deterministically from the graph's
/// parameters. Inputs that should also be checked can simply be stored as
/// parameters.
pub fn grad_check<F>(store: &ParamStore<f64>, loss: F, eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut analytic = HashMap::new();
    {
        let mut g = Graph::new(store);
        let out = loss(&mut g)?;
        let v = g.value(out)[[0, 0]];
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {v}")));
        }
        g.backward(out)?;
        g.accumulate_param_grads(&mut analytic);
    }

    let mut work = store.clone();
    let mut per_param = Vec::new();
    for (name, value) in store.iter() {
        let (rows, cols) = value.dim();
        let mut worst: f64 = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let original = value[[r, c]];
                work.get_mut(name).unwrap()[[r, c]] = original + eps;
                let plus = evaluate(&work, &loss)?;
                work.get_mut(name).unwrap()[[r, c]] = original - eps;
                let minus = evaluate(&work, &loss)?;
                work.get_mut(name).unwrap()[[r, c]] = original;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic.get(name).map_or(0.0, |g| g[[r, c]]);
                worst = worst.max(relative_error(a, numeric));
            }
        }
        per_param.push((name.to_string(), worst));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < tolerance,
        per_param,
        max_rel_error,
        tolerance,
    })
}
