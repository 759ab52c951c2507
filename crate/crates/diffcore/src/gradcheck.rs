//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParameterSet;

/// Outcome of a gradient check: the worst relative error and where it was.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares the tape gradient of a scalar loss with `(L(p+δ) − L(p−δ)) / 2δ`
/// for every entry of every parameter. Relative error uses the denominator
/// `|analytic| + |numeric| + 1e-12`.
pub fn grad_check<F>(loss_builder: F, params: &ParameterSet, delta: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var>,
{
    assert!(delta > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    let root = loss_builder(&mut g, params)?;
    let analytic = g.backward(root, params)?;

    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut g = Graph::new();
        let r = loss_builder(&mut g, p)?;
        Ok(g.scalar(r))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut probe = params.clone();
    for (pi, (name, value)) in params.iter().enumerate() {
        for j in 0..value.len() {
            let orig = value.data()[j];
            probe.by_index_mut(pi).data_mut()[j] = orig + delta;
            let up = eval(&probe)?;
            probe.by_index_mut(pi).data_mut()[j] = orig - delta;
            let down = eval(&probe)?;
            probe.by_index_mut(pi).data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * delta);
            let a = analytic.get(pi).data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.entries_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = name.to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
