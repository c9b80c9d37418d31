//! Forward and backward passes of the shared encoder, the generative
//! decoder, and the frame-classifier head.

use ndarray::{s, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    apply_mask, dropout_mask, softmax_rows, AttentionCache, FeedForwardCache, LayerNormCache,
    Segments,
};
use super::params::{DecoderLayer, EncoderLayer, ModelParams, Pooling};
use super::ModelError;
use crate::codec::{BOS, EOS};

/// One generative training item: encoder input and decoder target (without
/// BOS/EOS).
#[derive(Debug, Clone, Copy)]
pub struct SeqItem<'a> {
    pub input: &'a [u32],
    pub target: &'a [u32],
}

/// One classification training item.
#[derive(Debug, Clone, Copy)]
pub struct ClassItem<'a> {
    pub input: &'a [u32],
    pub trigger_positions: &'a [usize],
    pub gold: usize,
}

struct EncoderLayerCache {
    attn_norm: LayerNormCache,
    attn: AttentionCache,
    attn_drop: Option<Array2<f64>>,
    ffn_norm: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_drop: Option<Array2<f64>>,
}

struct DecoderLayerCache {
    self_norm: LayerNormCache,
    self_attn: AttentionCache,
    self_drop: Option<Array2<f64>>,
    cross_norm: LayerNormCache,
    cross_attn: AttentionCache,
    cross_drop: Option<Array2<f64>>,
    ffn_norm: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_drop: Option<Array2<f64>>,
}

struct StackPass<C> {
    pub out: Array2<f64>,
    pub segs: Segments,
    ids: Vec<u32>,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<C>,
    norm: LayerNormCache,
}

fn check_input(p: &ModelParams, ids: &[u32]) -> Result<(), ModelError> {
    let max = p.config.max_input_len;
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if ids.len() > max {
        return Err(ModelError::InputTooLong {
            len: ids.len(),
            max,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= p.config.vocab_size) {
        return Err(ModelError::UnknownId(id));
    }
    Ok(())
}

fn embed(
    p: &ModelParams,
    seqs: &[&[u32]],
    positions: &Array2<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, Segments, Vec<u32>, Option<Array2<f64>>) {
    let segs = Segments::from_lens(seqs.iter().map(|s| s.len()));
    let d = p.config.embed_dim;
    let mut x = Array2::zeros((segs.total(), d));
    let mut ids = Vec::with_capacity(segs.total());
    let mut row = 0;
    for seq in seqs {
        for (t, &id) in seq.iter().enumerate() {
            let mut r = x.row_mut(row);
            r.assign(&p.token_embedding.row(id as usize));
            r += &positions.row(t);
            ids.push(id);
            row += 1;
        }
    }
    let mask = dropout_mask(x.dim(), p.config.dropout_rate, rng);
    apply_mask(&mut x, &mask);
    (x, segs, ids, mask)
}

fn embed_backward(
    grads: &mut ModelParams,
    segs: &Segments,
    ids: &[u32],
    mask: &Option<Array2<f64>>,
    mut dx: Array2<f64>,
    decoder: bool,
) {
    apply_mask(&mut dx, mask);
    for seg in 0..segs.len() {
        for (t, row) in segs.range(seg).enumerate() {
            let d = dx.row(row);
            let mut e = grads.token_embedding.row_mut(ids[row] as usize);
            e += &d;
            let mut pos = if decoder {
                grads.decoder_positions.row_mut(t)
            } else {
                grads.encoder_positions.row_mut(t)
            };
            pos += &d;
        }
    }
}

fn encoder_forward(
    p: &ModelParams,
    inputs: &[&[u32]],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<StackPass<EncoderLayerCache>, ModelError> {
    for ids in inputs {
        check_input(p, ids)?;
    }
    let rate = p.config.dropout_rate;
    let (mut x, segs, ids, emb_drop) = embed(p, inputs, &p.encoder_positions, rng.as_deref_mut());
    let mut layers = Vec::with_capacity(p.encoder.len());
    for layer in &p.encoder {
        let EncoderLayer {
            attn_norm,
            self_attn,
            ffn_norm,
            ffn,
        } = layer;
        let (h, attn_norm_c) = attn_norm.forward(&x.view());
        let (mut a, attn_c) = self_attn.forward(h.clone(), h, &segs, &segs, false);
        let attn_drop = dropout_mask(a.dim(), rate, rng.as_deref_mut());
        apply_mask(&mut a, &attn_drop);
        x += &a;
        let (h, ffn_norm_c) = ffn_norm.forward(&x.view());
        let (mut f, ffn_c) = ffn.forward(h);
        let ffn_drop = dropout_mask(f.dim(), rate, rng.as_deref_mut());
        apply_mask(&mut f, &ffn_drop);
        x += &f;
        layers.push(EncoderLayerCache {
            attn_norm: attn_norm_c,
            attn: attn_c,
            attn_drop,
            ffn_norm: ffn_norm_c,
            ffn: ffn_c,
            ffn_drop,
        });
    }
    let (out, norm) = p.encoder_norm.forward(&x.view());
    Ok(StackPass {
        out,
        segs,
        ids,
        emb_drop,
        layers,
        norm,
    })
}

fn encoder_backward(
    p: &ModelParams,
    pass: &StackPass<EncoderLayerCache>,
    d_out: &ArrayView2<f64>,
    grads: &mut ModelParams,
) {
    let segs = &pass.segs;
    let mut dx = p
        .encoder_norm
        .backward(&pass.norm, d_out, &mut grads.encoder_norm);
    for (i, (layer, cache)) in p.encoder.iter().zip(&pass.layers).enumerate().rev() {
        let g = &mut grads.encoder[i];
        let mut df = dx.clone();
        apply_mask(&mut df, &cache.ffn_drop);
        let dh = layer.ffn.backward(&cache.ffn, &df.view(), &mut g.ffn);
        dx += &layer
            .ffn_norm
            .backward(&cache.ffn_norm, &dh.view(), &mut g.ffn_norm);

        let mut da = dx.clone();
        apply_mask(&mut da, &cache.attn_drop);
        let (dq, dkv) =
            layer
                .self_attn
                .backward(&cache.attn, &da.view(), segs, segs, &mut g.self_attn);
        let dh = dq + dkv;
        dx += &layer
            .attn_norm
            .backward(&cache.attn_norm, &dh.view(), &mut g.attn_norm);
    }
    embed_backward(grads, segs, &pass.ids, &pass.emb_drop, dx, false);
}

/// Decoder over `dec_inputs` (each starting with BOS), attending to the
/// matching segment of `enc_out`.
fn decoder_forward(
    p: &ModelParams,
    enc_out: &Array2<f64>,
    enc_segs: &Segments,
    dec_inputs: &[&[u32]],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<StackPass<DecoderLayerCache>, ModelError> {
    let max = p.config.max_output_len + 1;
    if let Some(seq) = dec_inputs.iter().find(|s| s.len() > max) {
        return Err(ModelError::TargetTooLong {
            len: seq.len() - 1,
            max: max - 1,
        });
    }
    let rate = p.config.dropout_rate;
    let (mut x, segs, ids, emb_drop) =
        embed(p, dec_inputs, &p.decoder_positions, rng.as_deref_mut());
    let mut layers = Vec::with_capacity(p.decoder.len());
    for layer in &p.decoder {
        let DecoderLayer {
            self_norm,
            self_attn,
            cross_norm,
            cross_attn,
            ffn_norm,
            ffn,
        } = layer;
        let (h, self_norm_c) = self_norm.forward(&x.view());
        let (mut a, self_c) = self_attn.forward(h.clone(), h, &segs, &segs, true);
        let self_drop = dropout_mask(a.dim(), rate, rng.as_deref_mut());
        apply_mask(&mut a, &self_drop);
        x += &a;

        let (h, cross_norm_c) = cross_norm.forward(&x.view());
        let (mut c, cross_c) = cross_attn.forward(h, enc_out.clone(), &segs, enc_segs, false);
        let cross_drop = dropout_mask(c.dim(), rate, rng.as_deref_mut());
        apply_mask(&mut c, &cross_drop);
        x += &c;

        let (h, ffn_norm_c) = ffn_norm.forward(&x.view());
        let (mut f, ffn_c) = ffn.forward(h);
        let ffn_drop = dropout_mask(f.dim(), rate, rng.as_deref_mut());
        apply_mask(&mut f, &ffn_drop);
        x += &f;
        layers.push(DecoderLayerCache {
            self_norm: self_norm_c,
            self_attn: self_c,
            self_drop,
            cross_norm: cross_norm_c,
            cross_attn: cross_c,
            cross_drop,
            ffn_norm: ffn_norm_c,
            ffn: ffn_c,
            ffn_drop,
        });
    }
    let (out, norm) = p.decoder_norm.forward(&x.view());
    Ok(StackPass {
        out,
        segs,
        ids,
        emb_drop,
        layers,
        norm,
    })
}

/// Returns d/d(encoder output).
fn decoder_backward(
    p: &ModelParams,
    pass: &StackPass<DecoderLayerCache>,
    enc_segs: &Segments,
    enc_rows: usize,
    d_out: &ArrayView2<f64>,
    grads: &mut ModelParams,
) -> Array2<f64> {
    let segs = &pass.segs;
    let mut d_enc = Array2::zeros((enc_rows, p.config.embed_dim));
    let mut dx = p
        .decoder_norm
        .backward(&pass.norm, d_out, &mut grads.decoder_norm);
    for (i, (layer, cache)) in p.decoder.iter().zip(&pass.layers).enumerate().rev() {
        let g = &mut grads.decoder[i];
        let mut df = dx.clone();
        apply_mask(&mut df, &cache.ffn_drop);
        let dh = layer.ffn.backward(&cache.ffn, &df.view(), &mut g.ffn);
        dx += &layer
            .ffn_norm
            .backward(&cache.ffn_norm, &dh.view(), &mut g.ffn_norm);

        let mut dc = dx.clone();
        apply_mask(&mut dc, &cache.cross_drop);
        let (dq, dkv) = layer.cross_attn.backward(
            &cache.cross_attn,
            &dc.view(),
            segs,
            enc_segs,
            &mut g.cross_attn,
        );
        d_enc += &dkv;
        dx += &layer
            .cross_norm
            .backward(&cache.cross_norm, &dq.view(), &mut g.cross_norm);

        let mut da = dx.clone();
        apply_mask(&mut da, &cache.self_drop);
        let (dq, dkv) =
            layer
                .self_attn
                .backward(&cache.self_attn, &da.view(), segs, segs, &mut g.self_attn);
        let dh = dq + dkv;
        dx += &layer
            .self_norm
            .backward(&cache.self_norm, &dh.view(), &mut g.self_norm);
    }
    embed_backward(grads, segs, &pass.ids, &pass.emb_drop, dx, true);
    d_enc
}

/// Teacher-forced cross-entropy, averaged over every target token of the
/// batch (EOS included). Returns the loss and its gradient.
pub fn seq_loss_batch(
    p: &ModelParams,
    items: &[SeqItem<'_>],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ModelParams), ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if items.iter().any(|it| it.target.is_empty()) {
        return Err(ModelError::EmptyTarget);
    }
    let inputs: Vec<&[u32]> = items.iter().map(|it| it.input).collect();
    let enc = encoder_forward(p, &inputs, rng.as_deref_mut())?;
    let dec_inputs: Vec<Vec<u32>> = items
        .iter()
        .map(|it| {
            std::iter::once(BOS)
                .chain(it.target.iter().copied())
                .collect()
        })
        .collect();
    let dec_refs: Vec<&[u32]> = dec_inputs.iter().map(Vec::as_slice).collect();
    let dec = decoder_forward(p, &enc.out, &enc.segs, &dec_refs, rng)?;
    let gold: Vec<u32> = items
        .iter()
        .flat_map(|it| it.target.iter().copied().chain(std::iter::once(EOS)))
        .collect();

    let logits = p.output.forward(&dec.out.view());
    let mut probs = softmax_rows(&logits.view());
    let n = gold.len() as f64;
    let mut loss = 0.0;
    for (mut row, &g) in probs.rows_mut().into_iter().zip(&gold) {
        loss -= row[g as usize].ln();
        row[g as usize] -= 1.0;
    }
    loss /= n;
    probs /= n;

    let mut grads = p.zeros_like();
    let d_dec = p
        .output
        .backward(&dec.out.view(), &probs.view(), &mut grads.output);
    let d_enc = decoder_backward(
        p,
        &dec,
        &enc.segs,
        enc.out.nrows(),
        &d_dec.view(),
        &mut grads,
    );
    encoder_backward(p, &enc, &d_enc.view(), &mut grads);
    Ok((loss, grads))
}

fn check_positions(p: &ModelParams, len: usize, positions: &[usize]) -> Result<(), ModelError> {
    if p.config.pooling == Pooling::TriggerMean && positions.is_empty() {
        return Err(ModelError::EmptyTrigger);
    }
    if let Some(&pos) = positions.iter().find(|&&i| i >= len) {
        return Err(ModelError::TriggerOutOfRange { position: pos, len });
    }
    Ok(())
}

/// Rows of the segment that feed the classifier.
fn pooled_rows(p: &ModelParams, seg: std::ops::Range<usize>, positions: &[usize]) -> Vec<usize> {
    match p.config.pooling {
        Pooling::TriggerMean => positions.iter().map(|&i| seg.start + i).collect(),
        Pooling::SequenceMean => seg.collect(),
    }
}

fn pool(
    p: &ModelParams,
    enc_out: &Array2<f64>,
    segs: &Segments,
    positions: &[&[usize]],
) -> Array2<f64> {
    let mut pooled = Array2::zeros((segs.len(), p.config.embed_dim));
    for (i, pos) in positions.iter().enumerate() {
        let rows = pooled_rows(p, segs.range(i), pos);
        let mut out = pooled.row_mut(i);
        for &r in &rows {
            out += &enc_out.row(r);
        }
        out /= rows.len() as f64;
    }
    pooled
}

/// Mean categorical cross-entropy of the frame classifier over the batch.
pub fn class_loss_batch(
    p: &ModelParams,
    items: &[ClassItem<'_>],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ModelParams), ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let classes = p.config.num_frame_classes;
    for it in items {
        if it.gold >= classes {
            return Err(ModelError::ClassOutOfRange {
                class: it.gold,
                classes,
            });
        }
        check_positions(p, it.input.len(), it.trigger_positions)?;
    }
    let inputs: Vec<&[u32]> = items.iter().map(|it| it.input).collect();
    let positions: Vec<&[usize]> = items.iter().map(|it| it.trigger_positions).collect();
    let enc = encoder_forward(p, &inputs, rng)?;
    let pooled = pool(p, &enc.out, &enc.segs, &positions);
    let logits = p.classifier.forward(&pooled.view());
    let mut probs = softmax_rows(&logits.view());
    let n = items.len() as f64;
    let mut loss = 0.0;
    for (mut row, it) in probs.rows_mut().into_iter().zip(items) {
        loss -= row[it.gold].ln();
        row[it.gold] -= 1.0;
    }
    loss /= n;
    probs /= n;

    let mut grads = p.zeros_like();
    let d_pooled = p
        .classifier
        .backward(&pooled.view(), &probs.view(), &mut grads.classifier);
    let mut d_enc = Array2::zeros(enc.out.raw_dim());
    for (i, pos) in positions.iter().enumerate() {
        let rows = pooled_rows(p, enc.segs.range(i), pos);
        let share = &d_pooled.row(i) / rows.len() as f64;
        for &r in &rows {
            let mut d = d_enc.row_mut(r);
            d += &share;
        }
    }
    encoder_backward(p, &enc, &d_enc.view(), &mut grads);
    Ok((loss, grads))
}

/// Contextual vectors for one input (rows = input positions).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub states: Array2<f64>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// Evaluation-mode encoder pass.
pub fn encode(p: &ModelParams, ids: &[u32]) -> Result<EncoderOutput, ModelError> {
    let pass = encoder_forward(p, &[ids], None)?;
    Ok(EncoderOutput { states: pass.out })
}

/// Frame-class probabilities from a pooled encoder output.
pub fn classify_frame(
    p: &ModelParams,
    enc: &EncoderOutput,
    trigger_positions: &[usize],
) -> Result<Vec<f64>, ModelError> {
    check_positions(p, enc.len(), trigger_positions)?;
    let segs = Segments::from_lens([enc.len()]);
    let pooled = pool(p, &enc.states, &segs, &[trigger_positions]);
    let logits = p.classifier.forward(&pooled.view());
    Ok(softmax_rows(&logits.view()).row(0).to_vec())
}

/// Output-vocabulary logits for every position of `dec_input` (which must
/// start with BOS).
pub fn decoder_logits(
    p: &ModelParams,
    enc: &EncoderOutput,
    dec_input: &[u32],
) -> Result<Array2<f64>, ModelError> {
    let segs = Segments::from_lens([enc.len()]);
    let pass = decoder_forward(p, &enc.states, &segs, &[dec_input], None)?;
    Ok(p.output.forward(&pass.out.view()))
}

fn argmax(row: ArrayView2<f64>) -> u32 {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best as u32
}

/// Greedy decoding continuing after `prefix`. The returned sequence
/// includes the prefix and excludes BOS/EOS; its length never exceeds
/// `max_len` (capped at the configured maximum output length).
pub fn decode_greedy_with_prefix(
    p: &ModelParams,
    enc: &EncoderOutput,
    prefix: &[u32],
    max_len: usize,
) -> Result<Vec<u32>, ModelError> {
    let max_len = max_len.min(p.config.max_output_len);
    let mut out: Vec<u32> = prefix.iter().copied().take(max_len).collect();
    let mut dec_input = Vec::with_capacity(max_len + 1);
    dec_input.push(BOS);
    dec_input.extend_from_slice(&out);
    while out.len() < max_len {
        let logits = decoder_logits(p, enc, &dec_input)?;
        let last = logits.nrows() - 1;
        let next = argmax(logits.slice(s![last..last + 1, ..]));
        if next == EOS {
            break;
        }
        out.push(next);
        dec_input.push(next);
    }
    Ok(out)
}

pub fn decode_greedy(
    p: &ModelParams,
    enc: &EncoderOutput,
    max_len: usize,
) -> Result<Vec<u32>, ModelError> {
    decode_greedy_with_prefix(p, enc, &[], max_len)
}

/// Output distribution at every decoder position (rows sum to one).
pub fn decoder_probabilities(
    p: &ModelParams,
    enc: &EncoderOutput,
    dec_input: &[u32],
) -> Result<Array2<f64>, ModelError> {
    Ok(softmax_rows(&decoder_logits(p, enc, dec_input)?.view()))
}
