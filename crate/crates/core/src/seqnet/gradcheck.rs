//! Central finite-difference tooling for verifying analytic gradients.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};

/// Denominator floor of [`relative_error`]. Central differences with
/// `ε = 1e-5` resolve gradients only to about `1e-11`, so entries far below
/// this floor are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(θ + ε e_k) − f(θ − ε e_k)) / 2ε` for one scalar of one tensor.
/// The store is restored before returning.
pub fn central_difference(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    eps: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.get(id).data()[index];
    store.get_mut(id).data_mut()[index] = orig + eps;
    let plus = f(store);
    store.get_mut(id).data_mut()[index] = orig - eps;
    let minus = f(store);
    store.get_mut(id).data_mut()[index] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Five-point stencil `(8(f₁ − f₋₁) − (f₂ − f₋₂)) / 12ε`, where `fₖ = f(θ + kε e_k)`.
/// Truncation error is `O(ε⁴)`, so a larger `ε` keeps roundoff down.
pub fn five_point_difference(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    eps: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.get(id).data()[index];
    let mut at = |k: f64| {
        store.get_mut(id).data_mut()[index] = orig + k * eps;
        f(store)
    };
    let (p1, m1, p2, m2) = (at(1.0), at(-1.0), at(2.0), at(-2.0));
    store.get_mut(id).data_mut()[index] = orig;
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps)
}

#[derive(Clone, Debug)]
pub struct CheckedEntry {
    pub param: ParamId,
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CheckedEntry {
    pub fn rel_err(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// Picks `count` scalar coordinates among the trainable tensors, covering
/// every tensor at least once before sampling the rest uniformly.
pub fn sample_coordinates(
    store: &ParamStore,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    let mut out: Vec<(ParamId, usize)> = ids
        .iter()
        .map(|&id| (id, rng.random_range(0..store.get(id).len())))
        .collect();
    while out.len() < count {
        let &id = ids.choose(rng).expect("no trainable tensors");
        out.push((id, rng.random_range(0..store.get(id).len())));
    }
    out
}

/// Compares `analytic` against central differences of `f` at the given coordinates.
pub fn check_coordinates(
    store: &mut ParamStore,
    analytic: &Gradients,
    coords: &[(ParamId, usize)],
    eps: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Vec<CheckedEntry> {
    coords
        .iter()
        .map(|&(id, index)| {
            let a = analytic.get(id).map_or(0.0, |g| g.data()[index]);
            let n = central_difference(store, id, index, eps, &mut f);
            CheckedEntry {
                param: id,
                name: store.name(id).to_string(),
                index,
                analytic: a,
                numeric: n,
            }
        })
        .collect()
}

pub fn max_rel_err(entries: &[CheckedEntry]) -> f64 {
    entries.iter().map(CheckedEntry::rel_err).fold(0.0, f64::max)
}
