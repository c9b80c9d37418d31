//! Layer primitives with explicit forward caches and backward passes.
//!
//! Activations are packed row-wise: every sequence of a batch occupies a
//! contiguous block of rows, described by [`Segments`]. Row-wise layers
//! (linear, layer norm, feed-forward) run over the whole packed matrix;
//! attention runs per segment.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const LN_EPS: f64 = 1e-5;

/// Row ranges of the sequences packed into one activation matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub starts: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Segments {
    pub fn from_lens(lens: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = lens.into_iter().collect();
        let mut starts = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            starts.push(acc);
            acc += l;
        }
        Self { starts, lens }
    }

    pub fn total(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.starts[i]..self.starts[i] + self.lens[i]
    }
}

pub(crate) fn normal_matrix(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Weights ~ N(0, 1/fan_in), zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: normal_matrix(fan_in, fan_out, (fan_in as f64).sqrt().recip(), rng),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `grad`, returns d/dx.
    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *inv = (var + LN_EPS).sqrt().recip();
            row *= *inv;
        }
        let mut y = &xhat * &self.gain;
        y += &self.bias;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        dy: &ArrayView2<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        let d = dy.ncols() as f64;
        grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let mut dx = dy * &self.gain;
        for ((mut row, xhat), inv) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_d = row.sum() / d;
            let mean_dx = row.dot(&xhat) / d;
            Zip::from(&mut row)
                .and(&xhat)
                .for_each(|g, &xh| *g = inv * (*g - mean_d - xh * mean_dx));
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    /// `out_scale` multiplies the initial weights of the down projection.
    pub fn init(dim: usize, hidden: usize, out_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let up = Linear::init(dim, hidden, rng);
        let mut down = Linear::init(hidden, dim, rng);
        down.w *= out_scale;
        Self { up, down }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            up: Linear::zeros(dim, hidden),
            down: Linear::zeros(hidden, dim),
        }
    }

    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.up.forward(&x.view());
        let act = pre.mapv(gelu);
        let y = self.down.forward(&act.view());
        (y, FeedForwardCache { x, pre, act })
    }

    pub fn backward(
        &self,
        cache: &FeedForwardCache,
        dy: &ArrayView2<f64>,
        grad: &mut FeedForward,
    ) -> Array2<f64> {
        let mut dact = self.down.backward(&cache.act.view(), dy, &mut grad.down);
        Zip::from(&mut dact)
            .and(&cache.pre)
            .for_each(|d, &p| *d *= gelu_grad(p));
        self.up
            .backward(&cache.x.view(), &dact.view(), &mut grad.up)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per (segment, head).
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl Attention {
    /// `out_scale` multiplies the initial weights of the output projection.
    pub fn init(dim: usize, heads: usize, out_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let query = Linear::init(dim, dim, rng);
        let key = Linear::init(dim, dim, rng);
        let value = Linear::init(dim, dim, rng);
        let mut out = Linear::init(dim, dim, rng);
        out.w *= out_scale;
        Self {
            query,
            key,
            value,
            out,
            heads,
        }
    }

    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::zeros(dim, dim),
            key: Linear::zeros(dim, dim),
            value: Linear::zeros(dim, dim),
            out: Linear::zeros(dim, dim),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.w.ncols() / self.heads
    }

    /// Multi-head attention of query rows over key/value rows. Segment `i`
    /// of `q_segs` attends only to segment `i` of `kv_segs`; with `causal`,
    /// row `t` of a segment sees key rows `0..=t` of the same segment.
    pub fn forward(
        &self,
        xq: Array2<f64>,
        xkv: Array2<f64>,
        q_segs: &Segments,
        kv_segs: &Segments,
        causal: bool,
    ) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(&xq.view());
        let k = self.key.forward(&xkv.view());
        let v = self.value.forward(&xkv.view());
        let dh = self.head_dim();
        let scale = (dh as f64).sqrt().recip();
        let mut ctx = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(q_segs.len() * self.heads);
        for seg in 0..q_segs.len() {
            let qr = q_segs.range(seg);
            let kr = kv_segs.range(seg);
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![qr.clone(), cols.clone()]);
                let kh = k.slice(s![kr.clone(), cols.clone()]);
                let vh = v.slice(s![kr.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                for (t, mut row) in scores.rows_mut().into_iter().enumerate() {
                    let visible = if causal { t + 1 } else { row.len() };
                    let max = row
                        .iter()
                        .take(visible)
                        .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    let mut sum = 0.0;
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if j < visible { (*x - max).exp() } else { 0.0 };
                        sum += *x;
                    }
                    row /= sum;
                }
                ctx.slice_mut(s![qr.clone(), cols]).assign(&scores.dot(&vh));
                probs.push(scores);
            }
        }
        let y = self.out.forward(&ctx.view());
        (
            y,
            AttentionCache {
                xq,
                xkv,
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    /// Returns (d/dxq, d/dxkv).
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &ArrayView2<f64>,
        q_segs: &Segments,
        kv_segs: &Segments,
        grad: &mut Attention,
    ) -> (Array2<f64>, Array2<f64>) {
        let dctx = self.out.backward(&cache.ctx.view(), dy, &mut grad.out);
        let dh = self.head_dim();
        let scale = (dh as f64).sqrt().recip();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for seg in 0..q_segs.len() {
            let qr = q_segs.range(seg);
            let kr = kv_segs.range(seg);
            for h in 0..self.heads {
                let p = &cache.probs[seg * self.heads + h];
                let cols = h * dh..(h + 1) * dh;
                let qh = cache.q.slice(s![qr.clone(), cols.clone()]);
                let kh = cache.k.slice(s![kr.clone(), cols.clone()]);
                let vh = cache.v.slice(s![kr.clone(), cols.clone()]);
                let dctx_h = dctx.slice(s![qr.clone(), cols.clone()]);
                let dp = dctx_h.dot(&vh.t());
                dv.slice_mut(s![kr.clone(), cols.clone()])
                    .scaled_add(1.0, &p.t().dot(&dctx_h));
                let mut ds = &dp * p;
                for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = row.sum();
                    Zip::from(&mut row)
                        .and(&prow)
                        .for_each(|d, &pv| *d -= pv * dot);
                }
                // row now holds p * (dp - <dp, p>)
                ds *= scale;
                dq.slice_mut(s![qr.clone(), cols.clone()])
                    .scaled_add(1.0, &ds.dot(&kh));
                dk.slice_mut(s![kr.clone(), cols])
                    .scaled_add(1.0, &ds.t().dot(&qh));
            }
        }
        let dxq = self
            .query
            .backward(&cache.xq.view(), &dq.view(), &mut grad.query);
        let mut dxkv = self
            .key
            .backward(&cache.xkv.view(), &dk.view(), &mut grad.key);
        dxkv += &self
            .value
            .backward(&cache.xkv.view(), &dv.view(), &mut grad.value);
        (dxq, dxkv)
    }
}

/// Inverted dropout mask (entries 0 or 1/(1-rate)), or `None` when
/// inactive.
pub fn dropout_mask(
    shape: (usize, usize),
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

pub fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Row-wise softmax, numerically stable.
pub fn softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}
