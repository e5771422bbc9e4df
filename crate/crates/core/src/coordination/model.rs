use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::progression::{
    estimate_target, estimate_target_backward, outer, AttentionCache, AttentionParams,
    ProgressionSignal,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub n_t: usize,
    pub n_d: usize,
    /// Candidate projection width.
    pub d_b: usize,
    /// Scorer hidden width.
    pub d_h: usize,
    pub seed: u64,
}

impl RankerConfig {
    pub fn new(n_t: usize, n_d: usize) -> Self {
        Self {
            n_t,
            n_d,
            d_b: 256,
            d_h: 128,
            seed: 0,
        }
    }

    pub fn with_widths(mut self, d_b: usize, d_h: usize) -> Self {
        self.d_b = d_b;
        self.d_h = d_h;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// All trainable tensors. Gradients use the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// One W_i (n_d × n_d) per aspect.
    pub attention: Vec<Array2<f64>>,
    /// d_b × n_d.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// n_d × (n_T · 2 · n_d).
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    /// n_d × n_d.
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
    /// d_h × (n_d + d_b).
    pub scorer_w: Array2<f64>,
    pub scorer_b: Array1<f64>,
    pub scorer_out: Array1<f64>,
    /// Length-1 output bias.
    pub scorer_bias: Array1<f64>,
}

impl Params {
    pub fn zeros(cfg: &RankerConfig) -> Self {
        let RankerConfig {
            n_t, n_d, d_b, d_h, ..
        } = *cfg;
        Self {
            attention: vec![Array2::zeros((n_d, n_d)); n_t],
            proj_w: Array2::zeros((d_b, n_d)),
            proj_b: Array1::zeros(d_b),
            mlp_w1: Array2::zeros((n_d, n_t * 2 * n_d)),
            mlp_b1: Array1::zeros(n_d),
            mlp_w2: Array2::zeros((n_d, n_d)),
            mlp_b2: Array1::zeros(n_d),
            scorer_w: Array2::zeros((d_h, n_d + d_b)),
            scorer_b: Array1::zeros(d_h),
            scorer_out: Array1::zeros(d_h),
            scorer_bias: Array1::zeros(1),
        }
    }

    /// (name, shape) for every tensor, in a fixed order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.named().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// (name, shape, data) for every tensor, in a fixed order.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = self
            .attention
            .iter()
            .enumerate()
            .map(|(i, w)| {
                (
                    format!("attention.{}.w", i + 1),
                    w.shape().to_vec(),
                    w.as_slice().expect("standard layout"),
                )
            })
            .collect();
        macro_rules! push {
            ($name:literal, $t:expr) => {
                out.push((
                    $name.to_string(),
                    $t.shape().to_vec(),
                    $t.as_slice().expect("standard layout"),
                ))
            };
        }
        push!("projection.w", self.proj_w);
        push!("projection.b", self.proj_b);
        push!("mlp.w1", self.mlp_w1);
        push!("mlp.b1", self.mlp_b1);
        push!("mlp.w2", self.mlp_w2);
        push!("mlp.b2", self.mlp_b2);
        push!("scorer.w", self.scorer_w);
        push!("scorer.b", self.scorer_b);
        push!("scorer.out", self.scorer_out);
        push!("scorer.bias", self.scorer_bias);
        out
    }

    /// Mutable views over every tensor in [`Params::named`] order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .attention
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect();
        for t in [
            self.proj_w.as_slice_mut(),
            self.proj_b.as_slice_mut(),
            self.mlp_w1.as_slice_mut(),
            self.mlp_b1.as_slice_mut(),
            self.mlp_w2.as_slice_mut(),
            self.mlp_b2.as_slice_mut(),
            self.scorer_w.as_slice_mut(),
            self.scorer_b.as_slice_mut(),
            self.scorer_out.as_slice_mut(),
            self.scorer_bias.as_slice_mut(),
        ] {
            out.push(t.expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, _, d)| d.iter().all(|x| x.is_finite()))
    }

    /// Adds `scale · other` in place.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let theirs: Vec<Vec<f64>> = other
            .named()
            .into_iter()
            .map(|(_, _, d)| d.to_vec())
            .collect();
        for (mine, theirs) in self.slices_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += scale * b;
            }
        }
    }
}

/// The trainable ranker: per-aspect attention, progression MLP, candidate
/// projection and a feedforward scorer. Lower scores rank higher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub config: RankerConfig,
    pub params: Params,
}

/// Per-candidate forward intermediates.
#[derive(Debug, Clone)]
pub struct CandidateCache {
    pub proj_pre: Array1<f64>,
    pub b_tilde: Array1<f64>,
    pub scorer_in: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub attention: Vec<Option<AttentionCache>>,
    pub signals: Vec<ProgressionSignal>,
    pub mlp_in: Array1<f64>,
    pub mlp_pre: Array1<f64>,
    pub mlp_hidden: Array1<f64>,
    pub p_tilde: Array1<f64>,
    pub candidates: Vec<CandidateCache>,
    pub scores: Vec<f64>,
}

fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_mask(pre: &Array1<f64>, g: &Array1<f64>) -> Array1<f64> {
    g * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

impl RankerModel {
    /// W_i start at identity; every other weight is uniform in
    /// ±1/√fan_in; biases start at zero.
    pub fn new(config: RankerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = Params::zeros(&config);
        for w in &mut p.attention {
            *w = Array2::eye(config.n_d);
        }
        let mut fill = |a: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in a {
                *x = rng.random_range(-bound..bound);
            }
        };
        let n_d = config.n_d;
        fill(p.proj_w.as_slice_mut().unwrap(), n_d);
        fill(p.mlp_w1.as_slice_mut().unwrap(), config.n_t * 2 * n_d);
        fill(p.mlp_w2.as_slice_mut().unwrap(), n_d);
        fill(p.scorer_w.as_slice_mut().unwrap(), n_d + config.d_b);
        fill(p.scorer_out.as_slice_mut().unwrap(), config.d_h);
        Self { config, params: p }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Params::zeros(&self.config).layout();
        if self.params.layout() != expected {
            return Err(Error::VersionMismatch(
                "parameter shapes do not match the model config".into(),
            ));
        }
        if !self.params.is_finite() {
            return Err(Error::NumericOverflow("model parameters"));
        }
        Ok(())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.config.n_d {
            return Err(Error::DimensionMismatch {
                expected: self.config.n_d,
                got,
            });
        }
        Ok(())
    }

    /// Signals p_i = [v_i; s_i] for every aspect, ordered by aspect id.
    pub fn progression_signals(
        &self,
        centroids: &[ArrayView2<f64>],
        states: ArrayView2<f64>,
    ) -> Result<(Vec<ProgressionSignal>, Vec<AttentionCache>)> {
        let n_t = self.config.n_t;
        if centroids.len() != n_t || states.nrows() != n_t {
            return Err(Error::SignalCountMismatch {
                expected: n_t,
                got: centroids.len().min(states.nrows()),
            });
        }
        self.check_len(states.ncols())?;
        let mut signals = Vec::with_capacity(n_t);
        let mut caches = Vec::with_capacity(n_t);
        for i in 0..n_t {
            let params = AttentionParams {
                w: self.params.attention[i].clone(),
            };
            let cache = estimate_target(states.row(i), centroids[i], &params)?;
            signals.push(ProgressionSignal::new(
                i + 1,
                cache.v.to_vec(),
                states.row(i).to_vec(),
            )?);
            caches.push(cache);
        }
        Ok((signals, caches))
    }

    /// p̃ = MLP([p_1; …; p_nT]).
    pub fn fuse_progression(&self, signals: &[ProgressionSignal]) -> Result<Array1<f64>> {
        Ok(self.fuse_inner(signals)?.3)
    }

    fn fuse_inner(
        &self,
        signals: &[ProgressionSignal],
    ) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>)> {
        if signals.len() != self.config.n_t {
            return Err(Error::SignalCountMismatch {
                expected: self.config.n_t,
                got: signals.len(),
            });
        }
        let mut x = Vec::with_capacity(self.config.n_t * 2 * self.config.n_d);
        for sig in signals {
            self.check_len(sig.v.len())?;
            self.check_len(sig.s.len())?;
            x.extend(sig.p());
        }
        let x = Array1::from(x);
        let pre = self.params.mlp_w1.dot(&x) + &self.params.mlp_b1;
        let hidden = relu(&pre);
        let out = self.params.mlp_w2.dot(&hidden) + &self.params.mlp_b2;
        Ok((x, pre, hidden, out))
    }

    /// b̃ = ReLU(P e + b) for a candidate-context embedding.
    pub fn project_candidate(&self, embedding: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_len(embedding.len())?;
        Ok(relu(
            &(self.params.proj_w.dot(&embedding) + &self.params.proj_b),
        ))
    }

    /// f = FF([p̃ | b̃]).
    pub fn score(&self, p_tilde: ArrayView1<f64>, b_tilde: ArrayView1<f64>) -> Result<f64> {
        Ok(self.score_inner(p_tilde, b_tilde)?.0)
    }

    fn score_inner(
        &self,
        p_tilde: ArrayView1<f64>,
        b_tilde: ArrayView1<f64>,
    ) -> Result<(f64, Array1<f64>, Array1<f64>, Array1<f64>)> {
        let width = self.params.scorer_w.ncols();
        if p_tilde.len() + b_tilde.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: p_tilde.len() + b_tilde.len(),
            });
        }
        let mut y = Array1::zeros(width);
        y.slice_mut(s![..p_tilde.len()]).assign(&p_tilde);
        y.slice_mut(s![p_tilde.len()..]).assign(&b_tilde);
        let pre = self.params.scorer_w.dot(&y) + &self.params.scorer_b;
        let hidden = relu(&pre);
        let f = self.params.scorer_out.dot(&hidden) + self.params.scorer_bias[0];
        Ok((f, y, pre, hidden))
    }

    /// Scores every candidate of one turn. With `zero_progression` the
    /// progression signals are replaced by zeros (ablation).
    pub fn forward(
        &self,
        centroids: &[ArrayView2<f64>],
        states: ArrayView2<f64>,
        candidates: ArrayView2<f64>,
        zero_progression: bool,
    ) -> Result<ForwardCache> {
        let (signals, attention) = if zero_progression {
            let n = self.config.n_t;
            (
                (1..=n)
                    .map(|i| ProgressionSignal::zeros(i, self.config.n_d))
                    .collect(),
                vec![None; n],
            )
        } else {
            let (sig, caches) = self.progression_signals(centroids, states)?;
            (sig, caches.into_iter().map(Some).collect())
        };
        let (mlp_in, mlp_pre, mlp_hidden, p_tilde) = self.fuse_inner(&signals)?;
        let mut cands = Vec::with_capacity(candidates.nrows());
        let mut scores = Vec::with_capacity(candidates.nrows());
        for e in candidates.rows() {
            self.check_len(e.len())?;
            let proj_pre = self.params.proj_w.dot(&e) + &self.params.proj_b;
            let b_tilde = relu(&proj_pre);
            let (f, scorer_in, hidden_pre, hidden) =
                self.score_inner(p_tilde.view(), b_tilde.view())?;
            if !f.is_finite() {
                return Err(Error::NumericOverflow("candidate score"));
            }
            scores.push(f);
            cands.push(CandidateCache {
                proj_pre,
                b_tilde,
                scorer_in,
                hidden_pre,
                hidden,
            });
        }
        Ok(ForwardCache {
            attention,
            signals,
            mlp_in,
            mlp_pre,
            mlp_hidden,
            p_tilde,
            candidates: cands,
            scores,
        })
    }

    /// Accumulates dL/dθ into `grads` given dL/df for each candidate.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        g_scores: &[f64],
        centroids: &[ArrayView2<f64>],
        states: ArrayView2<f64>,
        candidates: ArrayView2<f64>,
        grads: &mut Params,
    ) {
        let p = &self.params;
        let n_d = self.config.n_d;
        let mut g_p_tilde = Array1::<f64>::zeros(n_d);
        for (c, (cc, &g)) in cache.candidates.iter().zip(g_scores).enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.scorer_bias[0] += g;
            grads.scorer_out.scaled_add(g, &cc.hidden);
            let g_hidden = &p.scorer_out * g;
            let g_pre = relu_mask(&cc.hidden_pre, &g_hidden);
            grads.scorer_w += &outer(g_pre.view(), cc.scorer_in.view());
            grads.scorer_b += &g_pre;
            let g_y = p.scorer_w.t().dot(&g_pre);
            g_p_tilde += &g_y.slice(s![..n_d]);
            let g_b = g_y.slice(s![n_d..]).to_owned();
            let g_proj = relu_mask(&cc.proj_pre, &g_b);
            grads.proj_w += &outer(g_proj.view(), candidates.row(c));
            grads.proj_b += &g_proj;
        }
        grads.mlp_w2 += &outer(g_p_tilde.view(), cache.mlp_hidden.view());
        grads.mlp_b2 += &g_p_tilde;
        let g_hidden = p.mlp_w2.t().dot(&g_p_tilde);
        let g_pre = relu_mask(&cache.mlp_pre, &g_hidden);
        grads.mlp_w1 += &outer(g_pre.view(), cache.mlp_in.view());
        grads.mlp_b1 += &g_pre;
        let g_x = p.mlp_w1.t().dot(&g_pre);
        for (i, att) in cache.attention.iter().enumerate() {
            if let Some(att) = att {
                let g_v = g_x.slice(s![i * 2 * n_d..i * 2 * n_d + n_d]);
                grads.attention[i] +=
                    &estimate_target_backward(att, g_v, states.row(i), centroids[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn tiny() -> RankerModel {
        RankerModel::new(RankerConfig::new(2, 2).with_widths(2, 4).with_seed(3))
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut m = tiny();
        m.params = Params::zeros(&m.config);
        m.params.scorer_bias[0] = 0.7;
        for b in [array![1.0, 2.0], array![-3.0, 0.5]] {
            assert_eq!(m.score(array![0.3, 0.1].view(), b.view()).unwrap(), 0.7);
        }
    }

    #[test]
    fn hand_set_scorer() {
        let mut m = tiny();
        m.params = Params::zeros(&m.config);
        m.params.scorer_w = Array2::eye(4);
        m.params.scorer_out = array![1.0, 0.0, 0.0, 1.0];
        let f = m
            .score(array![0.5, 0.0].view(), array![0.0, 0.25].view())
            .unwrap();
        assert_eq!(f, 0.75);
    }

    #[test]
    fn zero_projection_gives_zero_context() {
        let mut m = tiny();
        m.params.proj_w.fill(0.0);
        m.params.proj_b.fill(0.0);
        assert_eq!(
            m.project_candidate(array![0.4, -0.9].view()).unwrap(),
            array![0.0, 0.0]
        );
    }

    #[test]
    fn hand_projection() {
        let mut m = RankerModel::new(RankerConfig::new(1, 4).with_widths(4, 2));
        m.params.proj_w = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 2.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 1.0],
            [0.0, 0.0, 0.0, -1.0]
        ];
        m.params.proj_b = array![0.0, 0.1, 0.0, 0.0];
        let e = array![0.5, 0.5, 0.5, 0.5];
        assert_eq!(
            m.project_candidate(e.view()).unwrap(),
            array![0.5, 1.1, 2.0, 0.0]
        );
    }

    #[test]
    fn fuse_shapes_and_zero_propagation() {
        let m = RankerModel::new(RankerConfig::new(3, 768).with_widths(4, 4));
        assert_eq!(m.params.mlp_w1.ncols(), 4608);
        let sigs: Vec<_> = (1..=3).map(|i| ProgressionSignal::zeros(i, 768)).collect();
        let mut zeroed = m.clone();
        zeroed.params.mlp_b1.fill(0.0);
        zeroed.params.mlp_b2.fill(0.0);
        let out = zeroed.fuse_progression(&sigs).unwrap();
        assert_eq!(out.len(), 768);
        assert!(out.iter().all(|&x| x == 0.0));
        let err = m.fuse_progression(&sigs[..2]).unwrap_err();
        assert_eq!(err.code(), "signal_count_mismatch");
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(), tiny());
        let other = RankerModel::new(RankerConfig::new(2, 2).with_widths(2, 4).with_seed(4));
        assert_ne!(tiny(), other);
        assert_eq!(tiny().params.attention[0], Array2::<f64>::eye(2));
        tiny().validate().unwrap();
    }

    #[test]
    fn candidates_differing_in_context_only() {
        let m = tiny();
        let p = array![0.2, 0.4];
        let a = m.score(p.view(), array![1.0, 0.0].view()).unwrap();
        let b = m.score(p.view(), array![0.0, 1.0].view()).unwrap();
        assert_ne!(a, b);
        let mut blind = m.clone();
        blind.params.scorer_w.slice_mut(s![.., 2..]).fill(0.0);
        let a = blind.score(p.view(), array![1.0, 0.0].view()).unwrap();
        let b = blind.score(p.view(), array![0.0, 1.0].view()).unwrap();
        assert_eq!(a, b);
    }
}
