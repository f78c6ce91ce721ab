use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference gradient check settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding do not blow the ratio up.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tol: 1e-6,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// False when two evaluations at the same point disagreed; the check is
    /// then meaningless and `passed` is false.
    pub deterministic: bool,
    pub passed: bool,
}

/// Compares backprop gradients of a scalar function against central finite
/// differences, element by element.
///
/// `f` receives a fresh graph plus one leaf per parameter (in the order of
/// `params`) and returns the scalar loss.
pub fn grad_check<'w, F>(f: F, params: &[Tensor], opts: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'w>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let base = g.value(loss).item();
    if !base.is_finite() {
        return Err(Error::Numeric(format!("grad_check: loss is {base}")));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let deterministic = eval(params)?.to_bits() == base.to_bits();

    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (ei, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + opts.step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - opts.step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: deterministic && max_rel_error <= opts.tol,
        per_param,
        max_rel_error,
        deterministic,
    })
}
