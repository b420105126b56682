//! Forward/backward kernels over packed token matrices.
//!
//! Sequences are stored back to back as rows of one `[tokens, d]` matrix and
//! described by `(start, len)` spans, so position-wise layers run as single
//! large matrix products and only attention iterates over sequences.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub type Span = (usize, usize);

pub fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn linear_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    gw: &mut Array2<f64>,
    gb: &mut Array2<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, gw);
    *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

const LN_EPS: f64 = 1e-6;

pub fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *istd = 1.0 / (var + LN_EPS).sqrt();
        row *= *istd;
    }
    let mut y = &xhat * g;
    y += b;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    g: &Array2<f64>,
    gg: &mut Array2<f64>,
    gb: &mut Array2<f64>,
) -> Array2<f64> {
    *gg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    Zip::from(dx.rows_mut())
        .and(dxhat.rows())
        .and(cache.xhat.rows())
        .and(&cache.inv_std)
        .for_each(|mut out, dxh, xh, &istd| {
            let mean_d = dxh.sum() / d;
            let mean_dx = dxh.dot(&xh) / d;
            Zip::from(&mut out).and(&dxh).and(&xh).for_each(|o, &a, &h| {
                *o = istd * (a - mean_d - h * mean_dx);
            });
        });
    dx
}

/// Parameters of one multi-head attention block, borrowed from the model.
pub struct AttnParams<'a> {
    pub wq: &'a Array2<f64>,
    pub bq: &'a Array2<f64>,
    pub wk: &'a Array2<f64>,
    pub bk: &'a Array2<f64>,
    pub wv: &'a Array2<f64>,
    pub bv: &'a Array2<f64>,
    pub wo: &'a Array2<f64>,
    pub bo: &'a Array2<f64>,
}

pub struct AttnGrads<'a> {
    pub wq: &'a mut Array2<f64>,
    pub bq: &'a mut Array2<f64>,
    pub wk: &'a mut Array2<f64>,
    pub bk: &'a mut Array2<f64>,
    pub wv: &'a mut Array2<f64>,
    pub bv: &'a mut Array2<f64>,
    pub wo: &'a mut Array2<f64>,
    pub bo: &'a mut Array2<f64>,
}

pub struct AttnCache {
    q_in: Array2<f64>,
    /// `None` for self-attention, where keys and values come from `q_in`.
    kv_in: Option<Array2<f64>>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    o: Array2<f64>,
    /// Attention weights per (sequence, head), sequence-major.
    probs: Vec<Array2<f64>>,
}

fn softmax_rows_in_place(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head attention of `q_in` rows over `kv_in` rows (or over `q_in`
/// itself when `kv_in` is `None`), sequence by sequence.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    p: &AttnParams<'_>,
    q_in: &Array2<f64>,
    kv_in: Option<&Array2<f64>>,
    q_spans: &[Span],
    k_spans: &[Span],
    n_heads: usize,
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let kv_src = kv_in.unwrap_or(q_in);
    let q = linear(q_in, p.wq, p.bq);
    let k = linear(kv_src, p.wk, p.bk);
    let v = linear(kv_src, p.wv, p.bv);
    let d = q.ncols();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut o = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(q_spans.len() * n_heads);

    for (&(qs, ql), &(ks, kl)) in q_spans.iter().zip(k_spans) {
        for h in 0..n_heads {
            let cols = h * dk..(h + 1) * dk;
            let qh = q.slice(s![qs..qs + ql, cols.clone()]);
            let kh = k.slice(s![ks..ks + kl, cols.clone()]);
            let vh = v.slice(s![ks..ks + kl, cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            if causal {
                for i in 0..ql {
                    for j in (i + 1)..kl {
                        scores[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows_in_place(&mut scores);
            let out = scores.dot(&vh);
            o.slice_mut(s![qs..qs + ql, cols]).assign(&out);
            probs.push(scores);
        }
    }

    let y = linear(&o, p.wo, p.bo);
    let cache = AttnCache {
        q_in: q_in.clone(),
        kv_in: kv_in.cloned(),
        q,
        k,
        v,
        o,
        probs,
    };
    (y, cache)
}

/// Returns `(d q_in, d kv_in)`; for self-attention the second is `None` and
/// its contribution is already folded into the first.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dy: &Array2<f64>,
    cache: &AttnCache,
    p: &AttnParams<'_>,
    g: AttnGrads<'_>,
    q_spans: &[Span],
    k_spans: &[Span],
    n_heads: usize,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let d_o = linear_backward(&cache.o, p.wo, dy, g.wo, g.bo);
    let d = cache.q.ncols();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dkm = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());

    let mut idx = 0;
    for (&(qs, ql), &(ks, kl)) in q_spans.iter().zip(k_spans) {
        for h in 0..n_heads {
            let cols = h * dk..(h + 1) * dk;
            let prob = &cache.probs[idx];
            idx += 1;
            let d_oh = d_o.slice(s![qs..qs + ql, cols.clone()]);
            let qh = cache.q.slice(s![qs..qs + ql, cols.clone()]);
            let kh = cache.k.slice(s![ks..ks + kl, cols.clone()]);
            let vh = cache.v.slice(s![ks..ks + kl, cols.clone()]);

            let d_prob = d_oh.dot(&vh.t());
            let mut dvh = dv.slice_mut(s![ks..ks + kl, cols.clone()]);
            general_mat_mul(1.0, &prob.t(), &d_oh, 1.0, &mut dvh);

            let mut d_scores = Array2::zeros(prob.raw_dim());
            Zip::from(d_scores.rows_mut())
                .and(prob.rows())
                .and(d_prob.rows())
                .for_each(|mut ds, pr, dp| {
                    let inner = pr.dot(&dp);
                    Zip::from(&mut ds).and(&pr).and(&dp).for_each(|o, &pv, &dpv| {
                        *o = pv * (dpv - inner) * scale;
                    });
                });
            let mut dqh = dq.slice_mut(s![qs..qs + ql, cols.clone()]);
            general_mat_mul(1.0, &d_scores, &kh, 1.0, &mut dqh);
            let mut dkh = dkm.slice_mut(s![ks..ks + kl, cols]);
            general_mat_mul(1.0, &d_scores.t(), &qh, 1.0, &mut dkh);
        }
    }

    let kv_src = cache.kv_in.as_ref().unwrap_or(&cache.q_in);
    let mut d_q_in = linear_backward(&cache.q_in, p.wq, &dq, g.wq, g.bq);
    let mut d_kv = linear_backward(kv_src, p.wk, &dkm, g.wk, g.bk);
    d_kv += &linear_backward(kv_src, p.wv, &dv, g.wv, g.bv);
    if cache.kv_in.is_some() {
        (d_q_in, Some(d_kv))
    } else {
        d_q_in += &d_kv;
        (d_q_in, None)
    }
}

pub struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

pub fn feed_forward(
    x: &Array2<f64>,
    w1: &Array2<f64>,
    b1: &Array2<f64>,
    w2: &Array2<f64>,
    b2: &Array2<f64>,
) -> (Array2<f64>, FfnCache) {
    let pre = linear(x, w1, b1);
    let act = pre.mapv(|v| v.max(0.0));
    let y = linear(&act, w2, b2);
    (
        y,
        FfnCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub fn feed_forward_backward(
    dy: &Array2<f64>,
    cache: &FfnCache,
    w1: &Array2<f64>,
    w2: &Array2<f64>,
    gw1: &mut Array2<f64>,
    gb1: &mut Array2<f64>,
    gw2: &mut Array2<f64>,
    gb2: &mut Array2<f64>,
) -> Array2<f64> {
    let mut d_act = linear_backward(&cache.act, w2, dy, gw2, gb2);
    Zip::from(&mut d_act).and(&cache.pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    linear_backward(&cache.x, w1, &d_act, gw1, gb1)
}

/// Inverted dropout mask; `None` when dropout is off.
pub struct Dropout(Option<Array2<f64>>);

impl Dropout {
    pub fn sample<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: Option<&mut R>) -> Self {
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_simple_fn(shape, || {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                Dropout(Some(mask))
            }
            _ => Dropout(None),
        }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        if let Some(m) = &self.0 {
            *x *= m;
        }
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        match &self.0 {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

/// Label-smoothed cross-entropy over rows of `logits`, gold in `gold`.
/// Returns `(summed loss, correct argmax count, d loss_sum / d logits)`.
pub fn smoothed_cross_entropy(
    logits: ArrayView2<'_, f64>,
    gold: &[u32],
    smoothing: f64,
    want_grad: bool,
) -> (f64, usize, Option<Array2<f64>>) {
    let v = logits.ncols();
    let off = if v > 1 { smoothing / (v - 1) as f64 } else { 0.0 };
    let on = 1.0 - smoothing;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = want_grad.then(|| Array2::zeros(logits.raw_dim()));
    for (r, row) in logits.rows().into_iter().enumerate() {
        let g = gold[r] as usize;
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (j, &x) in row.iter().enumerate() {
            if x > best_v {
                best_v = x;
                best = j;
            }
        }
        if best == g {
            correct += 1;
        }
        let lse = best_v + row.iter().map(|&x| (x - best_v).exp()).sum::<f64>().ln();
        let mut row_loss = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let q = if j == g { on } else { off };
            if q > 0.0 {
                row_loss -= q * (x - lse);
            }
        }
        loss += row_loss;
        if let Some(grad) = grad.as_mut() {
            for (j, &x) in row.iter().enumerate() {
                let q = if j == g { on } else { off };
                grad[[r, j]] = (x - lse).exp() - q;
            }
        }
    }
    (loss, correct, grad)
}
