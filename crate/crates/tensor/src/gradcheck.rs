use crate::{Graph, Result, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Gradients smaller than this are
/// compared in absolute terms scaled by `1/FLOOR`, which keeps round-off in
/// the central difference from dominating near-zero entries.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences over every element of every parameter.
///
/// `f` must be deterministic: it receives a fresh graph and the parameter
/// leaves (in the order of `params`) and returns a one-element node.
pub fn grad_check<F>(params: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for p in 0..work.len() {
        for e in 0..work[p].len() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[p].data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((p, e));
            }
        }
    }
    Ok(report)
}
