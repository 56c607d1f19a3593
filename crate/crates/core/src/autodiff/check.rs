//! Central finite-difference checks of reverse-mode gradients.

use super::{Graph, ParamId, ParamStore, Tensor};
use crate::error::Result;

/// One probed parameter entry.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub param: ParamId,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares the tape gradient of `loss` against central differences at the
/// listed entries.
pub fn probe_gradients<F>(
    store: &mut ParamStore,
    entries: &[(ParamId, usize, usize)],
    eps: f64,
    loss: F,
) -> Result<Vec<Probe>>
where
    F: for<'g> Fn(&'g Graph, &super::BoundParams<'g>) -> Result<Tensor<'g>>,
{
    let analytic = {
        let graph = Graph::new();
        let bound = store.bind(&graph);
        let root = loss(&graph, &bound)?;
        let grads = graph.backward(root)?;
        bound.grads(&grads)
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let graph = Graph::new();
        let bound = store.bind_frozen(&graph);
        Ok(loss(&graph, &bound)?.item())
    };
    let mut out = Vec::with_capacity(entries.len());
    for &(param, row, col) in entries {
        let orig = store.get(param)[[row, col]];
        store.get_mut(param)[[row, col]] = orig + eps;
        let up = eval(store)?;
        store.get_mut(param)[[row, col]] = orig - eps;
        let down = eval(store)?;
        store.get_mut(param)[[row, col]] = orig;
        out.push(Probe {
            param,
            row,
            col,
            analytic: analytic[param.0][[row, col]],
            numeric: (up - down) / (2.0 * eps),
        });
    }
    Ok(out)
}
