//! Central finite differences, the independent oracle the gradient tests
//! compare reverse-mode results against.

use crate::error::Result;
use crate::optim::{ParamId, ParamStore};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` w.r.t. a flat input vector.
pub fn fd_grad_vec(x: &[f64], mut f: impl FnMut(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference gradient of a loss over selected store parameters.
pub fn fd_grad_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
    h: f64,
) -> Result<Vec<(ParamId, Vec<f64>)>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let n = store.value(id).len();
        let mut g = vec![0.0; n];
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + h;
            let fp = f(store)?;
            store.value_mut(id).data_mut()[j] = orig - h;
            let fm = f(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            g[j] = (fp - fm) / (2.0 * h);
        }
        out.push((id, g));
    }
    Ok(out)
}

/// Symmetric relative error with a small floor so near-zero pairs are
/// compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}
