use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dialogue::AspectId;
use crate::error::{Error, Result};

/// Per-aspect trainable attention matrix W (n_d × n_d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w: Array2<f64>,
}

impl AttentionParams {
    pub fn identity(n_d: usize) -> Self {
        Self {
            w: Array2::eye(n_d),
        }
    }

    pub fn n_d(&self) -> usize {
        self.w.nrows()
    }
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    /// W s.
    pub u: Array1<f64>,
    /// Rows are W e_j.
    pub q: Array2<f64>,
    pub logits: Array1<f64>,
    pub alpha: Array1<f64>,
    /// Σ α_j e_j before the ReLU.
    pub z: Array1<f64>,
    pub v: Array1<f64>,
}

/// Numerically stable softmax; fails on non-finite input.
pub fn softmax(h: ArrayView1<f64>) -> Result<Array1<f64>> {
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericOverflow("attention logits"));
    }
    let max = h.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = h.mapv(|x| (x - max).exp());
    let sum = e.sum();
    Ok(e / sum)
}

/// Estimated target state v = ReLU(Σ_j softmax((W s)·(W e_j)) e_j).
pub fn estimate_target(
    s: ArrayView1<f64>,
    centroids: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<AttentionCache> {
    let n_d = params.n_d();
    if s.len() != n_d {
        return Err(Error::DimensionMismatch {
            expected: n_d,
            got: s.len(),
        });
    }
    if centroids.ncols() != n_d {
        return Err(Error::DimensionMismatch {
            expected: n_d,
            got: centroids.ncols(),
        });
    }
    if centroids.nrows() == 0 {
        return Err(Error::invalid("no centroids"));
    }
    let u = params.w.dot(&s);
    let q = centroids.dot(&params.w.t());
    let logits = q.dot(&u);
    let alpha = softmax(logits.view())?;
    let z = centroids.t().dot(&alpha);
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericOverflow("estimated target"));
    }
    let v = z.mapv(|x| x.max(0.0));
    Ok(AttentionCache {
        u,
        q,
        logits,
        alpha,
        z,
        v,
    })
}

/// Gradient of a scalar loss with respect to W, given dL/dv.
pub fn estimate_target_backward(
    cache: &AttentionCache,
    g_v: ArrayView1<f64>,
    s: ArrayView1<f64>,
    centroids: ArrayView2<f64>,
) -> Array2<f64> {
    let g_z = &g_v * &cache.z.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
    let g_alpha = centroids.dot(&g_z);
    let mean = cache.alpha.dot(&g_alpha);
    let g_h = &cache.alpha * &(g_alpha - mean);
    let qs = cache.q.t().dot(&g_h);
    let es = centroids.t().dot(&g_h);
    outer(qs.view(), s) + outer(cache.u.view(), es.view())
}

pub(crate) fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// p = [v; s] for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionSignal {
    pub aspect_id: AspectId,
    pub v: Vec<f64>,
    pub s: Vec<f64>,
}

impl ProgressionSignal {
    pub fn new(aspect_id: AspectId, v: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if v.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                got: s.len(),
            });
        }
        Ok(Self { aspect_id, v, s })
    }

    pub fn zeros(aspect_id: AspectId, n_d: usize) -> Self {
        Self {
            aspect_id,
            v: vec![0.0; n_d],
            s: vec![0.0; n_d],
        }
    }

    pub fn p(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.v.len() * 2);
        p.extend_from_slice(&self.v);
        p.extend_from_slice(&self.s);
        p
    }
}
