//! Pre-norm encoder-decoder transformer with explicit backward pass.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    attention, attention_backward, feed_forward, feed_forward_backward, layer_norm,
    layer_norm_backward, linear, linear_backward, smoothed_cross_entropy, AttnCache, AttnGrads,
    AttnParams, Dropout, FfnCache, LayerNormCache, Span,
};
use super::params::{Grads, Init, ParamSet};
use crate::competence::TaskId;
use crate::error::{Error, Result};
use crate::tasks::{Batch, ExamplePair, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    /// Layers in each of the encoder and decoder.
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.vocab_size < 2 {
            return Err(Error::config("n_layers, ffn_dim must be >= 1 and vocab >= 2"));
        }
        Ok(())
    }
}

const MAX_POSITIONS: usize = 256;

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: NormIdx,
    attn: AttnIdx,
    ln2: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln1: NormIdx,
    self_attn: AttnIdx,
    ln2: NormIdx,
    cross: AttnIdx,
    ln3: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
pub struct Model {
    dims: ModelDims,
    pub params: ParamSet,
    src_embed: usize,
    tgt_embed: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: NormIdx,
    decoder: Vec<DecoderLayer>,
    dec_norm: NormIdx,
    out_b: usize,
    out_w: usize,
    positions: Array2<f64>,
}

/// A batch laid out for the model: sequences concatenated row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    pub src: Vec<u32>,
    pub src_spans: Vec<Span>,
    pub tgt_in: Vec<u32>,
    pub tgt_out: Vec<u32>,
    pub tgt_spans: Vec<Span>,
    pub tasks: Vec<TaskId>,
}

impl PackedBatch {
    pub fn from_pairs(pairs: &[ExamplePair], tasks: &[TaskId], vocab_size: usize) -> Result<Self> {
        let mut pb = PackedBatch {
            src: Vec::new(),
            src_spans: Vec::with_capacity(pairs.len()),
            tgt_in: Vec::new(),
            tgt_out: Vec::new(),
            tgt_spans: Vec::with_capacity(pairs.len()),
            tasks: tasks.to_vec(),
        };
        if pairs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for p in pairs {
            if p.source.is_empty() || p.target.is_empty() {
                return Err(Error::invalid("source and target sequences must be non-empty"));
            }
            if p.source.len() > MAX_POSITIONS || p.target.len() + 1 > MAX_POSITIONS {
                return Err(Error::invalid(format!(
                    "sequence longer than {MAX_POSITIONS} positions"
                )));
            }
            if let Some(bad) = p.source.iter().chain(&p.target).find(|&&t| t as usize >= vocab_size) {
                return Err(Error::invalid(format!(
                    "token id {bad} outside vocabulary of {vocab_size}"
                )));
            }
            pb.src_spans.push((pb.src.len(), p.source.len()));
            pb.src.extend_from_slice(&p.source);
            pb.tgt_spans.push((pb.tgt_in.len(), p.target.len() + 1));
            pb.tgt_in.push(Vocab::BOS);
            pb.tgt_in.extend_from_slice(&p.target);
            pb.tgt_out.extend_from_slice(&p.target);
            pb.tgt_out.push(Vocab::EOS);
        }
        Ok(pb)
    }

    pub fn from_batch(batch: &Batch, vocab_size: usize) -> Result<Self> {
        Self::from_pairs(&batch.pairs, &batch.tasks, vocab_size)
    }

    pub fn target_tokens(&self) -> usize {
        self.tgt_out.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub dropout: f64,
    pub label_smoothing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardStats {
    /// Mean loss per target token.
    pub loss: f64,
    pub tokens: usize,
    pub correct: usize,
}

impl ForwardStats {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.tokens as f64
    }
}

struct EncoderCache {
    ln1: LayerNormCache,
    attn: AttnCache,
    drop1: Dropout,
    ln2: LayerNormCache,
    ffn: FfnCache,
    drop2: Dropout,
}

struct DecoderCache {
    ln1: LayerNormCache,
    self_attn: AttnCache,
    drop1: Dropout,
    ln2: LayerNormCache,
    cross: AttnCache,
    drop2: Dropout,
    ln3: LayerNormCache,
    ffn: FfnCache,
    drop3: Dropout,
}

/// Activations retained by `forward_loss` for `backward`.
pub struct ForwardCache {
    batch: PackedBatch,
    src_drop: Dropout,
    encoder: Vec<EncoderCache>,
    enc_norm: LayerNormCache,
    tgt_drop: Dropout,
    decoder: Vec<DecoderCache>,
    dec_norm: LayerNormCache,
    dec_out: Array2<f64>,
    d_logits: Array2<f64>,
}

fn sinusoid_table(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn add_norm<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> NormIdx {
    NormIdx {
        g: p.add(format!("{name}.gain"), 1, d, Init::Ones, rng),
        b: p.add(format!("{name}.bias"), 1, d, Init::Zeros, rng),
    }
}

fn add_attn<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> AttnIdx {
    AttnIdx {
        wq: p.add(format!("{name}.q.weight"), d, d, Init::Xavier, rng),
        bq: p.add(format!("{name}.q.bias"), 1, d, Init::Zeros, rng),
        wk: p.add(format!("{name}.k.weight"), d, d, Init::Xavier, rng),
        bk: p.add(format!("{name}.k.bias"), 1, d, Init::Zeros, rng),
        wv: p.add(format!("{name}.v.weight"), d, d, Init::Xavier, rng),
        bv: p.add(format!("{name}.v.bias"), 1, d, Init::Zeros, rng),
        wo: p.add(format!("{name}.out.weight"), d, d, Init::Xavier, rng),
        bo: p.add(format!("{name}.out.bias"), 1, d, Init::Zeros, rng),
    }
}

fn add_ffn<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, d: usize, f: usize, rng: &mut R) -> FfnIdx {
    FfnIdx {
        w1: p.add(format!("{name}.w1"), d, f, Init::Xavier, rng),
        b1: p.add(format!("{name}.b1"), 1, f, Init::Zeros, rng),
        w2: p.add(format!("{name}.w2"), f, d, Init::Xavier, rng),
        b2: p.add(format!("{name}.b2"), 1, d, Init::Zeros, rng),
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let d = dims.d_model;
        let mut p = ParamSet::default();
        let src_embed = p.add("encoder.embed", dims.vocab_size, d, Init::Xavier, rng);
        let tgt_embed = p.add("decoder.embed", dims.vocab_size, d, Init::Xavier, rng);
        let encoder = (0..dims.n_layers)
            .map(|l| EncoderLayer {
                ln1: add_norm(&mut p, &format!("encoder.{l}.norm1"), d, rng),
                attn: add_attn(&mut p, &format!("encoder.{l}.self_attn"), d, rng),
                ln2: add_norm(&mut p, &format!("encoder.{l}.norm2"), d, rng),
                ffn: add_ffn(&mut p, &format!("encoder.{l}.ffn"), d, dims.ffn_dim, rng),
            })
            .collect();
        let enc_norm = add_norm(&mut p, "encoder.norm", d, rng);
        let decoder = (0..dims.n_layers)
            .map(|l| DecoderLayer {
                ln1: add_norm(&mut p, &format!("decoder.{l}.norm1"), d, rng),
                self_attn: add_attn(&mut p, &format!("decoder.{l}.self_attn"), d, rng),
                ln2: add_norm(&mut p, &format!("decoder.{l}.norm2"), d, rng),
                cross: add_attn(&mut p, &format!("decoder.{l}.cross_attn"), d, rng),
                ln3: add_norm(&mut p, &format!("decoder.{l}.norm3"), d, rng),
                ffn: add_ffn(&mut p, &format!("decoder.{l}.ffn"), d, dims.ffn_dim, rng),
            })
            .collect();
        let dec_norm = add_norm(&mut p, "decoder.norm", d, rng);
        // Output weight last, so "last layer" scope sees the projection matrix.
        let out_b = p.add("generator.bias", 1, dims.vocab_size, Init::Zeros, rng);
        let out_w = p.add("generator.weight", d, dims.vocab_size, Init::Xavier, rng);
        Ok(Model {
            dims,
            params: p,
            src_embed,
            tgt_embed,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out_b,
            out_w,
            positions: sinusoid_table(MAX_POSITIONS, d),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    fn w(&self, i: usize) -> &Array2<f64> {
        &self.params.params[i].value
    }

    fn attn_params(&self, a: AttnIdx) -> AttnParams<'_> {
        AttnParams {
            wq: self.w(a.wq),
            bq: self.w(a.bq),
            wk: self.w(a.wk),
            bk: self.w(a.bk),
            wv: self.w(a.wv),
            bv: self.w(a.bv),
            wo: self.w(a.wo),
            bo: self.w(a.bo),
        }
    }

    fn embed(&self, table: usize, tokens: &[u32], spans: &[Span]) -> Array2<f64> {
        let d = self.dims.d_model;
        let scale = (d as f64).sqrt();
        let emb = self.w(table);
        let mut x = Array2::zeros((tokens.len(), d));
        for &(start, len) in spans {
            for pos in 0..len {
                let row = start + pos;
                let mut out = x.row_mut(row);
                out.assign(&emb.row(tokens[row] as usize));
                out *= scale;
                out += &self.positions.row(pos);
            }
        }
        x
    }

    /// Runs the network and the label-smoothed loss. Dropout masks are drawn
    /// from `rng` when one is given and `opts.dropout > 0`.
    pub fn forward_loss<R: Rng + ?Sized>(
        &self,
        batch: &PackedBatch,
        opts: ForwardOptions,
        mut rng: Option<&mut R>,
    ) -> Result<(ForwardStats, ForwardCache)> {
        let v = self.dims.vocab_size;
        if let Some(bad) = batch.src.iter().chain(&batch.tgt_in).find(|&&t| t as usize >= v) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {v}")));
        }
        let heads = self.dims.n_heads;
        let p = opts.dropout;

        let mut x = self.embed(self.src_embed, &batch.src, &batch.src_spans);
        let src_drop = Dropout::sample(x.dim(), p, rng.as_deref_mut());
        src_drop.apply(&mut x);
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (h, ln1) = layer_norm(&x, self.w(layer.ln1.g), self.w(layer.ln1.b));
            let (mut a, attn) = attention(
                &self.attn_params(layer.attn),
                &h,
                None,
                &batch.src_spans,
                &batch.src_spans,
                heads,
                false,
            );
            let drop1 = Dropout::sample(a.dim(), p, rng.as_deref_mut());
            drop1.apply(&mut a);
            x += &a;
            let (h, ln2) = layer_norm(&x, self.w(layer.ln2.g), self.w(layer.ln2.b));
            let f = layer.ffn;
            let (mut o, ffn) = feed_forward(&h, self.w(f.w1), self.w(f.b1), self.w(f.w2), self.w(f.b2));
            let drop2 = Dropout::sample(o.dim(), p, rng.as_deref_mut());
            drop2.apply(&mut o);
            x += &o;
            encoder.push(EncoderCache {
                ln1,
                attn,
                drop1,
                ln2,
                ffn,
                drop2,
            });
        }
        let (memory, enc_norm) = layer_norm(&x, self.w(self.enc_norm.g), self.w(self.enc_norm.b));

        let mut y = self.embed(self.tgt_embed, &batch.tgt_in, &batch.tgt_spans);
        let tgt_drop = Dropout::sample(y.dim(), p, rng.as_deref_mut());
        tgt_drop.apply(&mut y);
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (h, ln1) = layer_norm(&y, self.w(layer.ln1.g), self.w(layer.ln1.b));
            let (mut a, self_attn) = attention(
                &self.attn_params(layer.self_attn),
                &h,
                None,
                &batch.tgt_spans,
                &batch.tgt_spans,
                heads,
                true,
            );
            let drop1 = Dropout::sample(a.dim(), p, rng.as_deref_mut());
            drop1.apply(&mut a);
            y += &a;
            let (h, ln2) = layer_norm(&y, self.w(layer.ln2.g), self.w(layer.ln2.b));
            let (mut c, cross) = attention(
                &self.attn_params(layer.cross),
                &h,
                Some(&memory),
                &batch.tgt_spans,
                &batch.src_spans,
                heads,
                false,
            );
            let drop2 = Dropout::sample(c.dim(), p, rng.as_deref_mut());
            drop2.apply(&mut c);
            y += &c;
            let (h, ln3) = layer_norm(&y, self.w(layer.ln3.g), self.w(layer.ln3.b));
            let f = layer.ffn;
            let (mut o, ffn) = feed_forward(&h, self.w(f.w1), self.w(f.b1), self.w(f.w2), self.w(f.b2));
            let drop3 = Dropout::sample(o.dim(), p, rng.as_deref_mut());
            drop3.apply(&mut o);
            y += &o;
            decoder.push(DecoderCache {
                ln1,
                self_attn,
                drop1,
                ln2,
                cross,
                drop2,
                ln3,
                ffn,
                drop3,
            });
        }
        let (dec_out, dec_norm) = layer_norm(&y, self.w(self.dec_norm.g), self.w(self.dec_norm.b));
        let logits = linear(&dec_out, self.w(self.out_w), self.w(self.out_b));

        let (loss_sum, correct, d_logits) =
            smoothed_cross_entropy(logits.view(), &batch.tgt_out, opts.label_smoothing, true);
        let tokens = batch.tgt_out.len();
        let mut d_logits = d_logits.expect("gradient requested");
        d_logits /= tokens as f64;
        let stats = ForwardStats {
            loss: loss_sum / tokens as f64,
            tokens,
            correct,
        };
        let cache = ForwardCache {
            batch: batch.clone(),
            src_drop,
            encoder,
            enc_norm,
            tgt_drop,
            decoder,
            dec_norm,
            dec_out,
            d_logits,
        };
        Ok((stats, cache))
    }

    /// Gradients of the mean loss with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache) -> Grads {
        let mut g = self.params.zeros_like();
        let heads = self.dims.n_heads;
        let batch = &cache.batch;

        let [gw, gb] = g.get_disjoint_mut([self.out_w, self.out_b]).expect("distinct");
        let d_dec_out = linear_backward(&cache.dec_out, self.w(self.out_w), &cache.d_logits, gw, gb);
        let [gg, gb] = g.get_disjoint_mut([self.dec_norm.g, self.dec_norm.b]).expect("distinct");
        let mut dy = layer_norm_backward(&d_dec_out, &cache.dec_norm, self.w(self.dec_norm.g), gg, gb);

        let mut d_memory = Array2::<f64>::zeros((batch.src.len(), self.dims.d_model));
        for (layer, lc) in self.decoder.iter().zip(&cache.decoder).rev() {
            let d_ffn = lc.drop3.backward(&dy);
            let dh = self.ffn_backward(&mut g, layer.ffn, &lc.ffn, &d_ffn);
            dy += &self.norm_backward(&mut g, layer.ln3, &lc.ln3, &dh);

            let d_cross = lc.drop2.backward(&dy);
            let (dq, dkv) = self.attn_backward(
                &mut g,
                layer.cross,
                &lc.cross,
                &d_cross,
                &batch.tgt_spans,
                &batch.src_spans,
                heads,
            );
            d_memory += &dkv.expect("cross-attention has separate keys");
            dy += &self.norm_backward(&mut g, layer.ln2, &lc.ln2, &dq);

            let d_self = lc.drop1.backward(&dy);
            let (dq, _) = self.attn_backward(
                &mut g,
                layer.self_attn,
                &lc.self_attn,
                &d_self,
                &batch.tgt_spans,
                &batch.tgt_spans,
                heads,
            );
            dy += &self.norm_backward(&mut g, layer.ln1, &lc.ln1, &dq);
        }
        let dy = cache.tgt_drop.backward(&dy);
        self.embed_backward(&mut g[self.tgt_embed], &batch.tgt_in, &dy);

        let mut dx = self.norm_backward(&mut g, self.enc_norm, &cache.enc_norm, &d_memory);
        for (layer, lc) in self.encoder.iter().zip(&cache.encoder).rev() {
            let d_ffn = lc.drop2.backward(&dx);
            let dh = self.ffn_backward(&mut g, layer.ffn, &lc.ffn, &d_ffn);
            dx += &self.norm_backward(&mut g, layer.ln2, &lc.ln2, &dh);

            let d_attn = lc.drop1.backward(&dx);
            let (dq, _) = self.attn_backward(
                &mut g,
                layer.attn,
                &lc.attn,
                &d_attn,
                &batch.src_spans,
                &batch.src_spans,
                heads,
            );
            dx += &self.norm_backward(&mut g, layer.ln1, &lc.ln1, &dq);
        }
        let dx = cache.src_drop.backward(&dx);
        self.embed_backward(&mut g[self.src_embed], &batch.src, &dx);
        g
    }

    fn embed_backward(&self, g: &mut Array2<f64>, tokens: &[u32], dx: &Array2<f64>) {
        let scale = (self.dims.d_model as f64).sqrt();
        for (row, &tok) in dx.axis_iter(Axis(0)).zip(tokens) {
            let mut target = g.row_mut(tok as usize);
            target.scaled_add(scale, &row);
        }
    }

    fn norm_backward(
        &self,
        g: &mut Grads,
        idx: NormIdx,
        cache: &LayerNormCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let [gg, gb] = g.get_disjoint_mut([idx.g, idx.b]).expect("distinct");
        layer_norm_backward(dy, cache, self.w(idx.g), gg, gb)
    }

    fn ffn_backward(&self, g: &mut Grads, idx: FfnIdx, cache: &FfnCache, dy: &Array2<f64>) -> Array2<f64> {
        let [gw1, gb1, gw2, gb2] = g
            .get_disjoint_mut([idx.w1, idx.b1, idx.w2, idx.b2])
            .expect("distinct");
        feed_forward_backward(dy, cache, self.w(idx.w1), self.w(idx.w2), gw1, gb1, gw2, gb2)
    }

    #[allow(clippy::too_many_arguments)]
    fn attn_backward(
        &self,
        g: &mut Grads,
        idx: AttnIdx,
        cache: &AttnCache,
        dy: &Array2<f64>,
        q_spans: &[Span],
        k_spans: &[Span],
        heads: usize,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        let [wq, bq, wk, bk, wv, bv, wo, bo] = g
            .get_disjoint_mut([idx.wq, idx.bq, idx.wk, idx.bk, idx.wv, idx.bv, idx.wo, idx.bo])
            .expect("distinct");
        let grads = AttnGrads {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        };
        attention_backward(dy, cache, &self.attn_params(idx), grads, q_spans, k_spans, heads)
    }

    /// Teacher-forced loss and token accuracy without dropout or smoothing.
    pub fn evaluate(&self, pairs: &[ExamplePair]) -> Result<ForwardStats> {
        let mut loss_sum = 0.0;
        let mut tokens = 0;
        let mut correct = 0;
        for chunk in pairs.chunks(256) {
            let tasks = vec![TaskId(0); chunk.len()];
            let batch = PackedBatch::from_pairs(chunk, &tasks, self.dims.vocab_size)?;
            let stats = self.eval_batch(&batch)?;
            loss_sum += stats.loss * stats.tokens as f64;
            tokens += stats.tokens;
            correct += stats.correct;
        }
        Ok(ForwardStats {
            loss: loss_sum / tokens.max(1) as f64,
            tokens,
            correct,
        })
    }

    fn eval_batch(&self, batch: &PackedBatch) -> Result<ForwardStats> {
        let opts = ForwardOptions {
            dropout: 0.0,
            label_smoothing: 0.0,
        };
        let (stats, _) = self.forward_loss::<rand_chacha::ChaCha8Rng>(batch, opts, None)?;
        Ok(stats)
    }

    /// Output logits for a packed batch, dropout off.
    pub fn logits(&self, batch: &PackedBatch) -> Result<Array2<f64>> {
        let opts = ForwardOptions {
            dropout: 0.0,
            label_smoothing: 0.0,
        };
        let (_, cache) = self.forward_loss::<rand_chacha::ChaCha8Rng>(batch, opts, None)?;
        Ok(linear(&cache.dec_out, self.w(self.out_w), self.w(self.out_b)))
    }

    pub fn output_weight_index(&self) -> usize {
        self.out_w
    }

    pub fn embedding_indices(&self) -> (usize, usize) {
        (self.src_embed, self.tgt_embed)
    }
}
