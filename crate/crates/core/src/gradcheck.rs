//! Finite-difference verification of analytic gradients.
//!
//! Every differentiable path in the toolkit is checked against central
//! differences; these helpers centralize the perturbation and the relative
//! error convention (`|a − b| / max(|a|, |b|, 1e-4)`).

use crate::graph::{GradBuffer, Graph, ParamId, ParamStore, Var};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely against finite-difference noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Central difference of a scalar-valued graph builder w.r.t. one parameter
/// coordinate. The builder must be a pure function of the store.
pub fn central_difference(
    store: &mut ParamStore,
    build: &mut dyn FnMut(&mut Graph, &ParamStore) -> Var,
    id: ParamId,
    coord: usize,
    step: f64,
) -> f64 {
    let orig = store.tensor(id).data()[coord];
    let eval = |store: &mut ParamStore, build: &mut dyn FnMut(&mut Graph, &ParamStore) -> Var| {
        let mut g = Graph::new();
        let v = build(&mut g, store);
        g.value(v).item()
    };
    store.tensor_mut(id).data_mut()[coord] = orig + step;
    let plus = eval(store, build);
    store.tensor_mut(id).data_mut()[coord] = orig - step;
    let minus = eval(store, build);
    store.tensor_mut(id).data_mut()[coord] = orig;
    (plus - minus) / (2.0 * step)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(param name, coordinate, analytic, numeric)` of the worst mismatch.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare analytic gradients of `build` against central differences on the
/// given parameter coordinates.
pub fn check_gradients(
    store: &mut ParamStore,
    build: &mut dyn FnMut(&mut Graph, &ParamStore) -> Var,
    coords: &[(ParamId, usize)],
) -> GradCheckReport {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let mut buf = GradBuffer::new(store);
    g.accumulate_param_grads(&grads, &mut buf);

    let mut report = GradCheckReport::default();
    for &(id, coord) in coords {
        let analytic = buf.get(id).map_or(0.0, |t| t.data()[coord]);
        let base = store.tensor(id).data()[coord];
        let step = 1e-5 * base.abs().max(1.0);
        let numeric = central_difference(store, build, id, coord, step);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((store.name(id).to_string(), coord, analytic, numeric));
        }
    }
    report
}

/// A scalar objective owning its parameters; lets the checker perturb
/// coordinates and re-evaluate without threading closures through borrows.
pub trait Objective {
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Forward value at the current parameters.
    fn eval(&mut self) -> f64;
    /// Parameter gradients from one reverse pass at the current parameters.
    fn analytic_gradients(&mut self) -> GradBuffer;
}

/// Check an [`Objective`]'s analytic gradients on the given coordinates.
pub fn check_objective(obj: &mut dyn Objective, coords: &[(ParamId, usize)]) -> GradCheckReport {
    let buf = obj.analytic_gradients();
    let mut report = GradCheckReport::default();
    for &(id, coord) in coords {
        let analytic = buf.get(id).map_or(0.0, |t| t.data()[coord]);
        let base = obj.store_mut().tensor(id).data()[coord];
        let step = 1e-5 * base.abs().max(1.0);
        obj.store_mut().tensor_mut(id).data_mut()[coord] = base + step;
        let plus = obj.eval();
        obj.store_mut().tensor_mut(id).data_mut()[coord] = base - step;
        let minus = obj.eval();
        obj.store_mut().tensor_mut(id).data_mut()[coord] = base;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            let name = obj.store_mut().name(id).to_string();
            report.worst = Some((name, coord, analytic, numeric));
        }
    }
    report
}

/// Sample random `(parameter, coordinate)` slots, spread over all parameters.
pub fn sample_coords(store: &ParamStore, count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    (0..count)
        .map(|_| {
            let id = ids[rng.gen_range(0..ids.len())];
            let coord = rng.gen_range(0..store.tensor(id).len());
            (id, coord)
        })
        .collect()
}
