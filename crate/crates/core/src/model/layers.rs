//! Building blocks with explicit forward and backward passes. Every
//! `backward` accumulates parameter gradients into a structure of the same
//! shape as the layer and returns the gradient with respect to its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub type Mat = Array2<f64>;
pub type Row = Array1<f64>;

/// Visits parameter tensors in a fixed order with dotted names.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_mat<'a>(m: &'a Mat, name: String, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
    f(name, m.as_slice().expect("standard layout"), m.shape().to_vec());
}

pub(crate) fn visit_mat_mut<'a>(
    m: &'a mut Mat,
    name: String,
    f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>),
) {
    let shape = m.shape().to_vec();
    f(name, m.as_slice_mut().expect("standard layout"), shape);
}

fn visit_row<'a>(r: &'a Row, name: String, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
    f(name, r.as_slice().expect("standard layout"), vec![r.len()]);
}

fn visit_row_mut<'a>(r: &'a mut Row, name: String, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
    let len = r.len();
    f(name, r.as_slice_mut().expect("standard layout"), vec![len]);
}

pub fn uniform_mat(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `(in, out)`
    pub weight: Mat,
    pub bias: Row,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Mat::zeros((input, output)),
            bias: Row::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: uniform_mat(input, output, bound, rng),
            bias: Row::zeros(output),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Mat {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    pub fn backward(&self, x: &ArrayView2<f64>, dy: &Mat, grad: &mut Linear) -> Mat {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        visit_mat(&self.weight, join(prefix, "weight"), f);
        visit_row(&self.bias, join(prefix, "bias"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        visit_mat_mut(&mut self.weight, join(prefix, "weight"), f);
        visit_row_mut(&mut self.bias, join(prefix, "bias"), f);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Row,
    pub shift: Row,
}

pub struct LayerNormCache {
    normalized: Mat,
    inv_std: Row,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Row::ones(dim),
            shift: Row::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Row::zeros(dim),
            shift: Row::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut normalized = x.clone();
        let mut inv_std = Row::zeros(x.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *s;
        }
        let mut y = &normalized * &self.gain;
        y += &self.shift;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Mat, grad: &mut LayerNorm) -> Mat {
        grad.gain += &(dy * &cache.normalized).sum_axis(Axis(0));
        grad.shift += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let mut dx = dy * &self.gain;
        for ((mut row, xhat), s) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.normalized.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_d = row.sum() / d;
            let mean_dx = row.dot(&xhat) / d;
            Zip::from(&mut row).and(&xhat).for_each(|g, &xh| {
                *g = s * (*g - mean_d - xh * mean_dx);
            });
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        visit_row(&self.gain, join(prefix, "gain"), f);
        visit_row(&self.shift, join(prefix, "shift"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        visit_row_mut(&mut self.gain, join(prefix, "gain"), f);
        visit_row_mut(&mut self.shift, join(prefix, "shift"), f);
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Numerically stable `log softmax` of one logit row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

pub struct AttentionCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    context: Mat,
}

impl Attention {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        Self {
            query: Linear::init(d, d, rng),
            key: Linear::init(d, d, rng),
            value: Linear::init(d, d, rng),
            output: Linear::init(d, d, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
        }
    }

    /// Scaled dot-product attention of `xq` over `xkv`. With `causal`, query
    /// row `i` only sees key rows `0..=i`.
    pub fn forward(&self, xq: &Mat, xkv: &Mat, heads: usize, causal: bool) -> (Mat, AttentionCache) {
        let q = self.query.forward(&xq.view());
        let k = self.key.forward(&xkv.view());
        let v = self.value.forward(&xkv.view());
        let (probs, context) = attend(q.view(), k.view(), v.view(), heads, causal);
        let out = self.output.forward(&context.view());
        (
            out,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    /// Returns `(d xq, d xkv)`.
    pub fn backward(&self, cache: &AttentionCache, dout: &Mat, heads: usize, grad: &mut Attention) -> (Mat, Mat) {
        let dcontext = self.output.backward(&cache.context.view(), dout, &mut grad.output);
        let d = cache.q.ncols();
        let dk_head = d / heads;
        let scale = 1.0 / (dk_head as f64).sqrt();
        let mut dq = Mat::zeros(cache.q.raw_dim());
        let mut dk = Mat::zeros(cache.k.raw_dim());
        let mut dv = Mat::zeros(cache.v.raw_dim());
        for (h, probs) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dk_head..(h + 1) * dk_head];
            let dctx = dcontext.slice(cols);
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let dprobs = dctx.dot(&vh.t());
            dv.slice_mut(cols).assign(&probs.t().dot(&dctx));
            let mut dscores = dprobs;
            for (mut drow, prow) in dscores.rows_mut().into_iter().zip(probs.rows()) {
                let dot = drow.dot(&prow);
                Zip::from(&mut drow).and(&prow).for_each(|g, &p| *g = p * (*g - dot) * scale);
            }
            dq.slice_mut(cols).assign(&dscores.dot(&kh));
            dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
        }
        let dxq = self.query.backward(&cache.xq.view(), &dq, &mut grad.query);
        let mut dxkv = self.key.backward(&cache.xkv.view(), &dk, &mut grad.key);
        dxkv += &self.value.backward(&cache.xkv.view(), &dv, &mut grad.value);
        (dxq, dxkv)
    }
}

/// Multi-head attention core on already projected `q`, `k`, `v`.
/// Returns per-head probabilities and the concatenated context.
pub fn attend(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    causal: bool,
) -> (Vec<Mat>, Mat) {
    let d = q.ncols();
    let dk_head = d / heads;
    let scale = 1.0 / (dk_head as f64).sqrt();
    let mut context = Mat::zeros((q.nrows(), d));
    let mut all_probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dk_head..(h + 1) * dk_head];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        if causal {
            for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                row.slice_mut(s![i + 1..]).fill(f64::NEG_INFINITY);
            }
        }
        softmax_rows(&mut scores);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        all_probs.push(scores);
    }
    (all_probs, context)
}

impl Parameters for Attention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

pub struct FeedForwardCache {
    x: Mat,
    hidden: Mat,
}

impl FeedForward {
    pub fn init(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            expand: Linear::init(d, hidden, rng),
            contract: Linear::init(hidden, d, rng),
        }
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            expand: Linear::zeros(d, hidden),
            contract: Linear::zeros(hidden, d),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, FeedForwardCache) {
        let mut hidden = self.expand.forward(&x.view());
        hidden.mapv_inplace(|v| v.max(0.0));
        let out = self.contract.forward(&hidden.view());
        (out, FeedForwardCache { x: x.clone(), hidden })
    }

    pub fn backward(&self, cache: &FeedForwardCache, dout: &Mat, grad: &mut FeedForward) -> Mat {
        let mut dhidden = self.contract.backward(&cache.hidden.view(), dout, &mut grad.contract);
        Zip::from(&mut dhidden)
            .and(&cache.hidden)
            .for_each(|g, &h| {
                if h <= 0.0 {
                    *g = 0.0;
                }
            });
        self.expand.backward(&cache.x.view(), &dhidden, &mut grad.expand)
    }
}

impl Parameters for FeedForward {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.expand.visit(&join(prefix, "expand"), f);
        self.contract.visit(&join(prefix, "contract"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.contract.visit_mut(&join(prefix, "contract"), f);
    }
}

/// Inverted dropout mask: entries are `0` or `1 / keep`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Mat {
    let keep = 1.0 - rate;
    Mat::from_shape_fn(shape, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = uniform_mat(6, 16, 3.0, &mut rng) + 7.0;
        let (y, _) = LayerNorm::new(16).forward(&x);
        for row in y.rows() {
            let mean = row.sum() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn causal_attention_ignores_future_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let attn = Attention::init(8, &mut rng);
        let x = uniform_mat(5, 8, 1.0, &mut rng);
        let (full, _) = attn.forward(&x, &x, 2, true);
        let head = x.slice(s![..3, ..]).to_owned();
        let (part, _) = attn.forward(&head, &head, 2, true);
        for (a, b) in full.slice(s![..3, ..]).iter().zip(part.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0, 2.0, 1000.0]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
