//! Finite-difference verification of backward passes.

use rand::seq::index::sample;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::sensor::Seed;

/// A scalar function of a parameter store, evaluable at any precision.
///
/// Implementors keep their inputs in `f64` and cast them when building the
/// graph, so finite differences can always run in double precision.
pub trait Objective {
    fn loss<S: Scalar>(&self, g: &mut Graph<'_, S>) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Elements checked per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub max_per_tensor: usize,
    /// Relative errors are taken against `max(|a|, |n|, floor * g_max)`,
    /// where `g_max` is the largest analytic gradient magnitude checked.
    pub floor: f64,
    pub seed: Seed,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-6,
            max_per_tensor: 16,
            floor: 1e-3,
            seed: Seed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failures: Vec<GradFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Backward-pass gradients at precision `T`.
pub fn analytic_gradients<T: Scalar, O: Objective>(params: &ParamStore<T>, obj: &O) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::new(params);
    let loss = obj.loss(&mut g)?;
    Ok(g.backward(loss)?.into_params())
}

fn eval<O: Objective>(params: &ParamStore<f64>, obj: &O) -> Result<f64> {
    let mut g = Graph::new(params);
    let loss = obj.loss(&mut g)?;
    g.value(loss).item()
}

/// Deterministic `(tensor, element)` picks, at most
/// [`GradcheckConfig::max_per_tensor`] per tensor.
pub fn sample_picks<T: Scalar>(params: &ParamStore<T>, cfg: &GradcheckConfig) -> Vec<(usize, usize)> {
    let mut rng = cfg.seed.rng();
    let mut out = Vec::new();
    for (p, t) in params.values().iter().enumerate() {
        if t.len() <= cfg.max_per_tensor {
            out.extend((0..t.len()).map(|i| (p, i)));
        } else {
            let mut idx = sample(&mut rng, t.len(), cfg.max_per_tensor).into_vec();
            idx.sort_unstable();
            out.extend(idx.into_iter().map(|i| (p, i)));
        }
    }
    out
}

/// Central differences in `f64` at the given `(tensor, element)` picks.
pub fn numeric_gradients<T: Scalar, O: Objective>(
    params: &ParamStore<T>,
    obj: &O,
    picks: &[(usize, usize)],
    step: f64,
) -> Result<Vec<f64>> {
    let mut work = params.cast::<f64>();
    let mut out = Vec::with_capacity(picks.len());
    for &(p, i) in picks {
        let orig = work.values()[p].data()[i];
        work.values_mut()[p].data_mut()[i] = orig + step;
        let up = eval(&work, obj)?;
        work.values_mut()[p].data_mut()[i] = orig - step;
        let down = eval(&work, obj)?;
        work.values_mut()[p].data_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares analytic gradients against numeric ones at the given picks.
pub fn compare_gradients<T: Scalar>(
    params: &ParamStore<T>,
    analytic: &[Tensor<T>],
    picks: &[(usize, usize)],
    numeric: &[f64],
    cfg: &GradcheckConfig,
) -> GradcheckReport {
    let values: Vec<f64> = picks.iter().map(|&(p, i)| analytic[p].data()[i].as_f64()).collect();
    let g_max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = cfg.floor * g_max;
    let mut max_rel_error = 0.0f64;
    let mut failures = Vec::new();
    for ((&(p, i), &a), &n) in picks.iter().zip(&values).zip(numeric) {
        let denom = a.abs().max(n.abs()).max(floor).max(f64::MIN_POSITIVE);
        let rel = (a - n).abs() / denom;
        max_rel_error = max_rel_error.max(rel);
        if !(rel < cfg.tolerance) {
            failures.push(GradFailure {
                param: params.names()[p].clone(),
                index: i,
                analytic: a,
                numeric: n,
                rel_error: rel,
            });
        }
    }
    GradcheckReport {
        checked: picks.len(),
        max_rel_error,
        tolerance: cfg.tolerance,
        failures,
    }
}

/// Checks the backward pass of `obj` at precision `T` against `f64`
/// central differences.
pub fn gradcheck<T: Scalar, O: Objective>(
    params: &ParamStore<T>,
    obj: &O,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let analytic = analytic_gradients(params, obj)?;
    let picks = sample_picks(params, cfg);
    let numeric = numeric_gradients(params, obj, &picks, cfg.step)?;
    Ok(compare_gradients(params, &analytic, &picks, &numeric, cfg))
}
