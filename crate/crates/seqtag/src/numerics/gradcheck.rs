//! Gradient verification against central finite differences.
//!
//! The relative error for an analytic gradient `a` and a numeric estimate
//! `n` is |a - n| / max(|a|, |n|, 1e-8); the maximum over all parameter
//! elements is reported.

use crate::error::Result;
use crate::numerics::graph::{Graph, Node};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Check the gradient of a scalar function of explicit tensors. `f` receives
/// a fresh graph and one bound node per tensor and must return the loss.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Node]) -> Result<Node>,
{
    assert!(eps > 0.0);
    let mut g = Graph::new();
    let nodes: Vec<Node> = params.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &nodes)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&n| g.grad(n).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(n).len()]))
        .collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let nodes: Vec<Node> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &nodes)?;
        Ok(g.scalar_value(loss))
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for ei in 0..grads.len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(grads[ei], numeric));
        }
    }
    Ok(worst)
}

/// Check gradients through the real model path: `f` binds parameters from
/// the store itself. Only the listed parameters are perturbed and compared.
pub fn grad_check_store<F>(store: &mut ParamStore, ids: &[ParamId], f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Node>,
{
    assert!(eps > 0.0);
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    g.flush_param_grads(store);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).to_vec()).collect();
    drop(g);

    let mut worst = 0.0f64;
    for (pi, &id) in ids.iter().enumerate() {
        for ei in 0..analytic[pi].len() {
            let orig = store.value(id)[ei];
            store.value_mut(id)[ei] = orig + eps;
            let plus = {
                let mut g = Graph::new();
                let loss = f(&mut g, store)?;
                g.scalar_value(loss)
            };
            store.value_mut(id)[ei] = orig - eps;
            let minus = {
                let mut g = Graph::new();
                let loss = f(&mut g, store)?;
                g.scalar_value(loss)
            };
            store.value_mut(id)[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[pi][ei], numeric));
        }
    }
    Ok(worst)
}
