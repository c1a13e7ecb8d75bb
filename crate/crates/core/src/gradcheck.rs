//! Finite-difference verification of reverse-mode gradients.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{bind, collect_grads, Bound, ParamStore};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter.
    pub per_param: BTreeMap<String, f64>,
    /// Largest relative error across all checked parameters.
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Holds exactly when `max_rel_error <= tolerance`.
    pub pass: bool,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-8)
}

fn eval_loss<F>(store: &ParamStore<f64>, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let loss = build(&mut graph, &bound)?;
    let value = graph.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(value)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences, elementwise over every non-frozen parameter.
///
/// `build` must be a deterministic function of the bound parameters; it is
/// re-evaluated at `±eps` perturbations of each parameter element. Relative
/// errors use the denominator `max(|a|, |b|, 1e-8)`. Double precision is
/// assumed; single-precision finite differences are unreliable.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    eps: f64,
    tolerance: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var> + Sync,
{
    // analytic gradients
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, true);
    let loss = build(&mut graph, &bound)?;
    if !graph.value(loss).item().is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    graph.backward(loss)?;
    let analytic = collect_grads(&graph, &bound, store)?;

    // finite differences, parallel over parameter elements
    let jobs: Vec<(String, usize)> = analytic
        .iter()
        .flat_map(|(name, g)| (0..g.len()).map(move |i| (name.clone(), i)))
        .collect();
    let fd: Vec<((String, usize), f64)> = jobs
        .par_iter()
        .map(|(name, i)| {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().tensor.data_mut()[*i] += eps;
            let fp = eval_loss(&plus, &build)?;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().tensor.data_mut()[*i] -= eps;
            let fm = eval_loss(&minus, &build)?;
            Ok(((name.clone(), *i), (fp - fm) / (2.0 * eps)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_param: BTreeMap<String, f64> = analytic.keys().map(|k| (k.clone(), 0.0)).collect();
    for ((name, i), numeric) in fd {
        let err = rel_error(analytic[&name][i], numeric);
        let slot = per_param.get_mut(&name).unwrap();
        if err > *slot {
            *slot = err;
        }
    }
    let max_rel_error = per_param.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tolerance,
        pass: max_rel_error <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sum_of_squares_matches_closed_form() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(vec![1.0, 2.0]), false, true);
        let report = grad_check(&store, 1e-5, 1e-6, |g, b| {
            let x = b.var("x");
            let sq = g.mul(x, x)?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_error);

        // analytic gradient is [2, 4]; re-derive it directly
        let mut graph = Graph::new();
        let bound = bind(&mut graph, &store, true);
        let x = bound.var("x");
        let sq = graph.mul(x, x).unwrap();
        let loss = graph.sum_all(sq);
        graph.backward(loss).unwrap();
        let g = graph.grad(x).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((g[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(vec![0.3, -0.7, 1.1]), false, true);
        let report = grad_check(&store, 1e-5, 1e-8, |g, b| {
            let x = b.var("x");
            let zero = g.scale(x, 0.0);
            Ok(g.sum_all(zero))
        })
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn report_pass_iff_within_tolerance() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(vec![0.5]), false, true);
        // sigmoid has a well-conditioned gradient; crank tolerance to zero
        // to force a fail verdict on the same numbers
        let build = |g: &mut Graph<f64>, b: &Bound| {
            let x = b.var("x");
            let s = g.sigmoid(x);
            Ok(g.sum_all(s))
        };
        let ok = grad_check(&store, 1e-6, 1e-6, build).unwrap();
        assert!(ok.pass);
        let strict = grad_check(&store, 1e-6, 0.0, build).unwrap();
        assert_eq!(strict.pass, strict.max_rel_error <= 0.0);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_vec(vec![-1.0]), false, true);
        let err = grad_check(&store, 1e-5, 1e-6, |g, b| {
            let x = b.var("x");
            let s = g.sqrt(x); // sqrt of a negative: NaN
            Ok(g.sum_all(s))
        });
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
