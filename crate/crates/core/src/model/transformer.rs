//! Forward and backward passes of the full encoder-decoder, plus an
//! incremental decoder that caches self-attention keys and values.

use ndarray::{s, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    attend, dropout_mask, log_softmax, AttentionCache, FeedForwardCache, LayerNormCache, Mat,
};
use super::{DecoderLayer, EncoderLayer, ModelError, ModelParams, BOS_ID, EOS_ID};

/// One training pair in vocabulary ids. The source should already end with
/// EOS; the target is wrapped as `BOS target` → `target EOS`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Encoder output `H`, one row per source position.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub h: Mat,
}

pub(crate) struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    fn apply(&mut self, x: &mut Mat) -> Option<Mat> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => {
                let mask = dropout_mask(x.dim(), self.rate, rng);
                *x *= &mask;
                Some(mask)
            }
            _ => None,
        }
    }
}

fn undrop(d: &Mat, mask: &Option<Mat>) -> Mat {
    match mask {
        Some(m) => d * m,
        None => d.clone(),
    }
}

/// Sinusoidal position signal for row `pos`.
pub fn positional_row(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let angle = pos as f64 / 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl ModelParams {
    fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        let vocab_size = self.config.vocab_size;
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(ModelError::Vocab { id, vocab_size });
        }
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::Length {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if ids.is_empty() {
            return Err(ModelError::Length { len: 0, max: self.config.max_seq_len });
        }
        Ok(())
    }

    fn embed_at(&self, ids: &[usize], start: usize) -> Mat {
        let d = self.config.d_model;
        let scale = (d as f64).sqrt();
        let mut x = Mat::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&self.embedding.row(id));
            row *= scale;
            if self.config.positional_encoding {
                for (v, p) in row.iter_mut().zip(positional_row(start + i, d)) {
                    *v += p;
                }
            }
        }
        x
    }

    fn embed_backward(&self, ids: &[usize], dx: &Mat, grad: &mut ModelParams) {
        let scale = (self.config.d_model as f64).sqrt();
        for (i, &id) in ids.iter().enumerate() {
            let mut g = grad.embedding.row_mut(id);
            g.scaled_add(scale, &dx.row(i));
        }
    }
}

struct EncoderCache {
    norm1: LayerNormCache,
    attn: AttentionCache,
    mask1: Option<Mat>,
    norm2: LayerNormCache,
    ffn: FeedForwardCache,
    mask2: Option<Mat>,
}

impl EncoderLayer {
    fn forward(&self, x: Mat, heads: usize, drop: &mut Dropout) -> (Mat, EncoderCache) {
        let (a, norm1) = self.norm1.forward(&x);
        let (mut sa, attn) = self.self_attn.forward(&a, &a, heads, false);
        let mask1 = drop.apply(&mut sa);
        let x = x + &sa;
        let (b, norm2) = self.norm2.forward(&x);
        let (mut f, ffn) = self.ffn.forward(&b);
        let mask2 = drop.apply(&mut f);
        let cache = EncoderCache {
            norm1,
            attn,
            mask1,
            norm2,
            ffn,
            mask2,
        };
        (x + &f, cache)
    }

    fn backward(&self, c: &EncoderCache, dy: Mat, heads: usize, g: &mut EncoderLayer) -> Mat {
        let df = undrop(&dy, &c.mask2);
        let db = self.ffn.backward(&c.ffn, &df, &mut g.ffn);
        let dx = dy + &self.norm2.backward(&c.norm2, &db, &mut g.norm2);
        let dsa = undrop(&dx, &c.mask1);
        let (dq, dkv) = self.self_attn.backward(&c.attn, &dsa, heads, &mut g.self_attn);
        dx + &self.norm1.backward(&c.norm1, &(dq + &dkv), &mut g.norm1)
    }
}

struct DecoderCache {
    norm1: LayerNormCache,
    self_attn: AttentionCache,
    mask1: Option<Mat>,
    norm2: LayerNormCache,
    cross_attn: AttentionCache,
    mask2: Option<Mat>,
    norm3: LayerNormCache,
    ffn: FeedForwardCache,
    mask3: Option<Mat>,
}

impl DecoderLayer {
    fn forward(&self, y: Mat, memory: &Mat, heads: usize, drop: &mut Dropout) -> (Mat, DecoderCache) {
        let (a, norm1) = self.norm1.forward(&y);
        let (mut sa, self_attn) = self.self_attn.forward(&a, &a, heads, true);
        let mask1 = drop.apply(&mut sa);
        let y = y + &sa;
        let (b, norm2) = self.norm2.forward(&y);
        let (mut ca, cross_attn) = self.cross_attn.forward(&b, memory, heads, false);
        let mask2 = drop.apply(&mut ca);
        let y = y + &ca;
        let (c, norm3) = self.norm3.forward(&y);
        let (mut f, ffn) = self.ffn.forward(&c);
        let mask3 = drop.apply(&mut f);
        let cache = DecoderCache {
            norm1,
            self_attn,
            mask1,
            norm2,
            cross_attn,
            mask2,
            norm3,
            ffn,
            mask3,
        };
        (y + &f, cache)
    }

    /// Returns `(d y, d memory)`.
    fn backward(&self, c: &DecoderCache, dy: Mat, heads: usize, g: &mut DecoderLayer) -> (Mat, Mat) {
        let df = undrop(&dy, &c.mask3);
        let dc = self.ffn.backward(&c.ffn, &df, &mut g.ffn);
        let dy = dy + &self.norm3.backward(&c.norm3, &dc, &mut g.norm3);
        let dca = undrop(&dy, &c.mask2);
        let (db, dmemory) = self.cross_attn.backward(&c.cross_attn, &dca, heads, &mut g.cross_attn);
        let dy = dy + &self.norm2.backward(&c.norm2, &db, &mut g.norm2);
        let dsa = undrop(&dy, &c.mask1);
        let (dq, dkv) = self.self_attn.backward(&c.self_attn, &dsa, heads, &mut g.self_attn);
        let dy = dy + &self.norm1.backward(&c.norm1, &(dq + &dkv), &mut g.norm1);
        (dy, dmemory)
    }
}

pub(crate) struct ForwardCache {
    source: Vec<usize>,
    target_in: Vec<usize>,
    source_mask: Option<Mat>,
    encoder: Vec<EncoderCache>,
    encoder_norm: LayerNormCache,
    target_mask: Option<Mat>,
    decoder: Vec<DecoderCache>,
    decoder_norm: LayerNormCache,
    z: Mat,
}

impl ModelParams {
    fn run_encoder(&self, source: &[usize], drop: &mut Dropout) -> (Mat, Option<Mat>, Vec<EncoderCache>, LayerNormCache) {
        let heads = self.config.num_heads;
        let mut x = self.embed_at(source, 0);
        let source_mask = drop.apply(&mut x);
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (nx, c) = layer.forward(x, heads, drop);
            x = nx;
            caches.push(c);
        }
        let (h, norm) = self.encoder_norm.forward(&x);
        (h, source_mask, caches, norm)
    }

    /// Teacher-forced forward pass; returns logits `(target_in.len(), vocab)`.
    pub(crate) fn forward(&self, source: &[usize], target_in: &[usize], drop: &mut Dropout) -> (Mat, ForwardCache) {
        let heads = self.config.num_heads;
        let (memory, source_mask, encoder, encoder_norm) = self.run_encoder(source, drop);
        let mut y = self.embed_at(target_in, 0);
        let target_mask = drop.apply(&mut y);
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (ny, c) = layer.forward(y, &memory, heads, drop);
            y = ny;
            decoder.push(c);
        }
        let (z, decoder_norm) = self.decoder_norm.forward(&y);
        let logits = self.output.forward(&z.view());
        let cache = ForwardCache {
            source: source.to_vec(),
            target_in: target_in.to_vec(),
            source_mask,
            encoder,
            encoder_norm,
            target_mask,
            decoder,
            decoder_norm,
            z,
        };
        (logits, cache)
    }

    pub(crate) fn backward(&self, c: &ForwardCache, dlogits: &Mat, grad: &mut ModelParams) {
        let heads = self.config.num_heads;
        let dz = self.output.backward(&c.z.view(), dlogits, &mut grad.output);
        let mut dy = self.decoder_norm.backward(&c.decoder_norm, &dz, &mut grad.decoder_norm);
        let mut dmemory = Mat::zeros((c.source.len(), self.config.d_model));
        for ((layer, cache), g) in self
            .decoder
            .iter()
            .zip(&c.decoder)
            .zip(grad.decoder.iter_mut())
            .rev()
        {
            let (ndy, dm) = layer.backward(cache, dy, heads, g);
            dy = ndy;
            dmemory += &dm;
        }
        let dy = undrop(&dy, &c.target_mask);
        self.embed_backward(&c.target_in, &dy, grad);

        let mut dx = self.encoder_norm.backward(&c.encoder_norm, &dmemory, &mut grad.encoder_norm);
        for ((layer, cache), g) in self
            .encoder
            .iter()
            .zip(&c.encoder)
            .zip(grad.encoder.iter_mut())
            .rev()
        {
            dx = layer.backward(cache, dx, heads, g);
        }
        let dx = undrop(&dx, &c.source_mask);
        self.embed_backward(&c.source, &dx, grad);
    }

    pub(crate) fn check_example(&self, ex: &Example) -> Result<(), ModelError> {
        self.check_ids(&ex.source)?;
        let mut wrapped = ex.target.clone();
        wrapped.push(EOS_ID);
        self.check_ids(&wrapped)
    }

    /// Summed token cross-entropy of one example and the number of predicted
    /// tokens. With `grad`, the gradient of `scale * loss` is accumulated.
    pub(crate) fn example_loss(
        &self,
        ex: &Example,
        grad: Option<&mut ModelParams>,
        scale: f64,
        drop: &mut Dropout,
    ) -> (f64, usize) {
        let mut target_in = Vec::with_capacity(ex.target.len() + 1);
        target_in.push(BOS_ID);
        target_in.extend_from_slice(&ex.target);
        let target_out: Vec<usize> = ex.target.iter().copied().chain([EOS_ID]).collect();
        let (logits, cache) = self.forward(&ex.source, &target_in, drop);
        let mut loss = 0.0;
        let mut dlogits = Mat::zeros(logits.raw_dim());
        for (i, &gold) in target_out.iter().enumerate() {
            let lp = log_softmax(logits.row(i).as_slice().expect("standard layout"));
            loss -= lp[gold];
            let mut drow = dlogits.row_mut(i);
            for (g, l) in drow.iter_mut().zip(&lp) {
                *g = l.exp() * scale;
            }
            drow[gold] -= scale;
        }
        if let Some(grad) = grad {
            self.backward(&cache, &dlogits, grad);
        }
        (loss, target_out.len())
    }

    /// Summed token cross-entropy of one example without dropout, and its
    /// gradient.
    pub fn loss_and_gradient(&self, ex: &Example) -> Result<(f64, ModelParams), ModelError> {
        self.check_example(ex)?;
        let mut grad = ModelParams::zeros(&self.config);
        let (loss, _) = self.example_loss(ex, Some(&mut grad), 1.0, &mut Dropout::off());
        Ok((loss, grad))
    }

    /// Summed token cross-entropy of one example without dropout.
    pub fn loss(&self, ex: &Example) -> Result<f64, ModelError> {
        self.check_example(ex)?;
        Ok(self.example_loss(ex, None, 0.0, &mut Dropout::off()).0)
    }

    /// Mean token cross-entropy over `examples` without dropout.
    pub fn mean_loss(&self, examples: &[Example]) -> f64 {
        let mut total = 0.0;
        let mut count = 0;
        for ex in examples {
            let (l, n) = self.example_loss(ex, None, 0.0, &mut Dropout::off());
            total += l;
            count += n;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// Runs the encoder over `source`.
pub fn encode(params: &ModelParams, source: &[usize]) -> Result<EncoderState, ModelError> {
    params.check_ids(source)?;
    let (h, ..) = params.run_encoder(source, &mut Dropout::off());
    Ok(EncoderState { h })
}

/// Next-token distribution after `prefix`, recomputing the whole decoder.
pub fn decode_step(params: &ModelParams, state: &EncoderState, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
    params.check_ids(prefix)?;
    if prefix[0] != BOS_ID {
        return Err(ModelError::MissingBos);
    }
    let heads = params.config.num_heads;
    let mut drop = Dropout::off();
    let mut y = params.embed_at(prefix, 0);
    for layer in &params.decoder {
        y = layer.forward(y, &state.h, heads, &mut drop).0;
    }
    let last = y.slice(s![y.nrows() - 1.., ..]).to_owned();
    let (z, _) = params.decoder_norm.forward(&last);
    let logits = params.output.forward(&z.view());
    Ok(log_softmax(logits.row(0).as_slice().expect("standard layout"))
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Decoder that consumes one token at a time, reusing cached keys and values.
pub struct IncrementalDecoder<'a> {
    params: &'a ModelParams,
    cross: Vec<(Mat, Mat)>,
}

/// Per-hypothesis decoder state.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub(crate) tokens: Vec<usize>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pub(crate) log_probs: Vec<f64>,
}

impl<'a> IncrementalDecoder<'a> {
    pub fn new(params: &'a ModelParams, state: &EncoderState) -> Self {
        let cross = params
            .decoder
            .iter()
            .map(|l| {
                (
                    l.cross_attn.key.forward(&state.h.view()),
                    l.cross_attn.value.forward(&state.h.view()),
                )
            })
            .collect();
        Self { params, cross }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// State after consuming BOS.
    pub fn start(&self) -> DecoderState {
        let layers = self.params.decoder.len();
        let mut st = DecoderState {
            tokens: Vec::new(),
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            log_probs: Vec::new(),
        };
        self.feed(&mut st, BOS_ID);
        st
    }

    /// Consumes `token`, updating the cached log-probabilities. The caller
    /// keeps positions below `max_seq_len` and ids inside the vocabulary.
    pub fn feed(&self, st: &mut DecoderState, token: usize) {
        let p = self.params;
        let d = p.config.d_model;
        let heads = p.config.num_heads;
        let pos = st.tokens.len();
        st.tokens.push(token);
        let mut x = p.embed_at(&[token], pos);
        for (l, layer) in p.decoder.iter().enumerate() {
            let (a, _) = layer.norm1.forward(&x);
            let q = layer.self_attn.query.forward(&a.view());
            st.keys[l].extend(layer.self_attn.key.forward(&a.view()).iter());
            st.values[l].extend(layer.self_attn.value.forward(&a.view()).iter());
            let k = ArrayView2::from_shape((pos + 1, d), &st.keys[l]).expect("cache shape");
            let v = ArrayView2::from_shape((pos + 1, d), &st.values[l]).expect("cache shape");
            let (_, ctx) = attend(q.view(), k, v, heads, false);
            x += &layer.self_attn.output.forward(&ctx.view());

            let (b, _) = layer.norm2.forward(&x);
            let q = layer.cross_attn.query.forward(&b.view());
            let (ck, cv) = &self.cross[l];
            let (_, ctx) = attend(q.view(), ck.view(), cv.view(), heads, false);
            x += &layer.cross_attn.output.forward(&ctx.view());

            let (c, _) = layer.norm3.forward(&x);
            x += &layer.ffn.forward(&c).0;
        }
        let (z, _) = p.decoder_norm.forward(&x);
        let logits = p.output.forward(&z.view());
        st.log_probs = log_softmax(logits.index_axis(Axis(0), 0).as_slice().expect("standard layout"));
    }
}
