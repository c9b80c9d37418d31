use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{normal_matrix, Attention, FeedForward, LayerNorm, Linear};
use super::ModelError;

/// Which encoder positions feed the frame classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over the trigger-token positions (markers excluded).
    #[default]
    TriggerMean,
    /// Mean over every input position.
    SequenceMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Layers in the encoder and, separately, in the decoder.
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    pub num_frame_classes: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub pooling: Pooling,
}

impl ModelConfig {
    /// Desk-scale default: 64-dim, 2+2 layers, 4 heads.
    pub fn toy(vocab_size: usize, num_frame_classes: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_input_len: 96,
            max_output_len: 48,
            num_frame_classes,
            dropout_rate: 0.1,
            seed: 0,
            pooling: Pooling::TriggerMean,
        }
    }

    /// Gradient-check size: 16-dim, 1+1 layer, 2 heads, no dropout.
    pub fn tiny(vocab_size: usize, num_frame_classes: usize) -> Self {
        Self {
            embed_dim: 16,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 32,
            max_input_len: 96,
            max_output_len: 48,
            dropout_rate: 0.0,
            ..Self::toy(vocab_size, num_frame_classes)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
            ("num_frame_classes", self.num_frame_classes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!(
                "{name} must be at least 1"
            )));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub self_attn: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: Attention,
    pub cross_norm: LayerNorm,
    pub cross_attn: Attention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

/// All trainable tensors. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub encoder_positions: Array2<f64>,
    pub decoder_positions: Array2<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
    pub output: Linear,
    pub classifier: Linear,
}

macro_rules! visit_linear {
    ($out:expr, $prefix:expr, $lin:expr, $as:ident) => {{
        $out.push((
            format!("{}.w", $prefix),
            $lin.w.$as().expect("standard layout"),
        ));
        $out.push((
            format!("{}.b", $prefix),
            $lin.b.$as().expect("standard layout"),
        ));
    }};
}

macro_rules! visit_norm {
    ($out:expr, $prefix:expr, $ln:expr, $as:ident) => {{
        $out.push((
            format!("{}.gain", $prefix),
            $ln.gain.$as().expect("standard layout"),
        ));
        $out.push((
            format!("{}.bias", $prefix),
            $ln.bias.$as().expect("standard layout"),
        ));
    }};
}

macro_rules! visit_attention {
    ($out:expr, $prefix:expr, $a:expr, $as:ident) => {{
        visit_linear!($out, format!("{}.query", $prefix), $a.query, $as);
        visit_linear!($out, format!("{}.key", $prefix), $a.key, $as);
        visit_linear!($out, format!("{}.value", $prefix), $a.value, $as);
        visit_linear!($out, format!("{}.out", $prefix), $a.out, $as);
    }};
}

macro_rules! visit_all {
    ($self:expr, $out:expr, $as:ident, $iter:ident) => {{
        $out.push((
            "token_embedding".to_owned(),
            $self.token_embedding.$as().expect("standard layout"),
        ));
        $out.push((
            "encoder_positions".to_owned(),
            $self.encoder_positions.$as().expect("standard layout"),
        ));
        $out.push((
            "decoder_positions".to_owned(),
            $self.decoder_positions.$as().expect("standard layout"),
        ));
        for (i, l) in $self.encoder.$iter().enumerate() {
            let p = format!("encoder.{i}");
            visit_norm!($out, format!("{p}.attn_norm"), l.attn_norm, $as);
            visit_attention!($out, format!("{p}.self_attn"), l.self_attn, $as);
            visit_norm!($out, format!("{p}.ffn_norm"), l.ffn_norm, $as);
            visit_linear!($out, format!("{p}.ffn.up"), l.ffn.up, $as);
            visit_linear!($out, format!("{p}.ffn.down"), l.ffn.down, $as);
        }
        visit_norm!($out, "encoder_norm", $self.encoder_norm, $as);
        for (i, l) in $self.decoder.$iter().enumerate() {
            let p = format!("decoder.{i}");
            visit_norm!($out, format!("{p}.self_norm"), l.self_norm, $as);
            visit_attention!($out, format!("{p}.self_attn"), l.self_attn, $as);
            visit_norm!($out, format!("{p}.cross_norm"), l.cross_norm, $as);
            visit_attention!($out, format!("{p}.cross_attn"), l.cross_attn, $as);
            visit_norm!($out, format!("{p}.ffn_norm"), l.ffn_norm, $as);
            visit_linear!($out, format!("{p}.ffn.up"), l.ffn.up, $as);
            visit_linear!($out, format!("{p}.ffn.down"), l.ffn.down, $as);
        }
        visit_norm!($out, "decoder_norm", $self.decoder_norm, $as);
        visit_linear!($out, "output", $self.output, $as);
        visit_linear!($out, "classifier", $self.classifier, $as);
    }};
}

impl ModelParams {
    /// Seeded initialization: linear weights ~ N(0, 1/fan_in) with the
    /// residual output projections further scaled by 1/sqrt(2 * num_layers),
    /// embeddings ~ N(0, 1), norm gains 1, biases 0.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let emb_std = 1.0;
        let res = (2.0 * config.num_layers as f64).sqrt().recip();
        let token_embedding = normal_matrix(config.vocab_size, d, emb_std, &mut rng);
        let encoder_positions = normal_matrix(config.max_input_len, d, emb_std, &mut rng);
        let decoder_positions = normal_matrix(config.max_output_len + 1, d, emb_std, &mut rng);
        let encoder = (0..config.num_layers)
            .map(|_| EncoderLayer {
                attn_norm: LayerNorm::new(d),
                self_attn: Attention::init(d, config.num_heads, res, &mut rng),
                ffn_norm: LayerNorm::new(d),
                ffn: FeedForward::init(d, config.ffn_dim, res, &mut rng),
            })
            .collect();
        let decoder = (0..config.num_layers)
            .map(|_| DecoderLayer {
                self_norm: LayerNorm::new(d),
                self_attn: Attention::init(d, config.num_heads, res, &mut rng),
                cross_norm: LayerNorm::new(d),
                cross_attn: Attention::init(d, config.num_heads, res, &mut rng),
                ffn_norm: LayerNorm::new(d),
                ffn: FeedForward::init(d, config.ffn_dim, res, &mut rng),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            token_embedding,
            encoder_positions,
            decoder_positions,
            encoder,
            encoder_norm: LayerNorm::new(d),
            decoder,
            decoder_norm: LayerNorm::new(d),
            output: Linear::init(d, config.vocab_size, &mut rng),
            classifier: Linear::init(d, config.num_frame_classes, &mut rng),
        })
    }

    /// Same shapes, every value zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Every tensor zero, shaped by `c` (which is not validated).
    pub fn zeros(c: &ModelConfig) -> Self {
        let d = c.embed_dim;
        Self {
            config: c.clone(),
            token_embedding: Array2::zeros((c.vocab_size, d)),
            encoder_positions: Array2::zeros((c.max_input_len, d)),
            decoder_positions: Array2::zeros((c.max_output_len + 1, d)),
            encoder: (0..c.num_layers)
                .map(|_| EncoderLayer {
                    attn_norm: LayerNorm::zeros(d),
                    self_attn: Attention::zeros(d, c.num_heads),
                    ffn_norm: LayerNorm::zeros(d),
                    ffn: FeedForward::zeros(d, c.ffn_dim),
                })
                .collect(),
            encoder_norm: LayerNorm::zeros(d),
            decoder: (0..c.num_layers)
                .map(|_| DecoderLayer {
                    self_norm: LayerNorm::zeros(d),
                    self_attn: Attention::zeros(d, c.num_heads),
                    cross_norm: LayerNorm::zeros(d),
                    cross_attn: Attention::zeros(d, c.num_heads),
                    ffn_norm: LayerNorm::zeros(d),
                    ffn: FeedForward::zeros(d, c.ffn_dim),
                })
                .collect(),
            decoder_norm: LayerNorm::zeros(d),
            output: Linear::zeros(d, c.vocab_size),
            classifier: Linear::zeros(d, c.num_frame_classes),
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        visit_all!(self, out, as_slice, iter);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        visit_all!(self, out, as_slice_mut, iter_mut);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
