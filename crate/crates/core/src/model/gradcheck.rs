//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{class_loss, seq_loss, ModelConfig, ModelError, ModelParams};

/// One input with both a generative target and a frame label, so that a
/// single check covers the decoder and the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckExample {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    pub trigger_positions: Vec<usize>,
    pub gold: usize,
}

impl GradCheckExample {
    /// Random ids above the reserved range, seeded.
    pub fn random(config: &ModelConfig, input_len: usize, target_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = 4.min(config.vocab_size as u32 - 1);
        let hi = config.vocab_size as u32;
        let input_len = input_len.clamp(1, config.max_input_len);
        let target_len = target_len.clamp(1, config.max_output_len);
        let input = (0..input_len).map(|_| rng.random_range(lo..hi)).collect();
        let target = (0..target_len).map(|_| rng.random_range(lo..hi)).collect();
        let trigger = rng.random_range(0..input_len);
        let mut trigger_positions = vec![trigger];
        if trigger + 1 < input_len {
            trigger_positions.push(trigger + 1);
        }
        Self {
            input,
            target,
            trigger_positions,
            gold: rng.random_range(0..config.num_frame_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per tensor; tensors smaller than this are
    /// checked in full.
    pub samples_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Only tensors whose name starts with this prefix.
    pub tensor_prefix: Option<String>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            samples_per_tensor: 8,
            floor: 1e-6,
            tensor_prefix: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathReport {
    pub path: String,
    pub loss: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub tensors: Vec<TensorError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seq: PathReport,
    pub class: PathReport,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.seq.max_rel_error.max(self.class.max_rel_error)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn check_path<F>(
    name: &str,
    params: &ModelParams,
    opts: &GradCheckOptions,
    loss_fn: F,
) -> Result<PathReport, ModelError>
where
    F: Fn(&ModelParams) -> Result<(f64, ModelParams), ModelError>,
{
    let (loss, grads) = loss_fn(params)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_vec()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    for (ti, (tname, grad)) in analytic.iter().enumerate() {
        if let Some(prefix) = &opts.tensor_prefix {
            if !tname.starts_with(prefix.as_str()) {
                continue;
            }
        }
        let n = grad.len();
        let idx: Vec<usize> = if n <= opts.samples_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.samples_per_tensor).into_vec()
        };
        let mut worst = 0.0f64;
        for &i in &idx {
            let original = probe.tensors()[ti].1[i];
            probe.tensors_mut()[ti].1[i] = original + opts.epsilon;
            let (plus, _) = loss_fn(&probe)?;
            probe.tensors_mut()[ti].1[i] = original - opts.epsilon;
            let (minus, _) = loss_fn(&probe)?;
            probe.tensors_mut()[ti].1[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            worst = worst.max(relative_error(grad[i], numeric, opts.floor));
        }
        tensors.push(TensorError {
            name: tname.clone(),
            checked: idx.len(),
            max_rel_error: worst,
        });
    }
    let worst = tensors
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    Ok(PathReport {
        path: name.to_owned(),
        loss,
        checked: tensors.iter().map(|t| t.checked).sum(),
        max_rel_error: worst.map_or(0.0, |t| t.max_rel_error),
        worst_tensor: worst.map_or_else(String::new, |t| t.name.clone()),
        tensors,
    })
}

/// Compares analytic and numeric gradients of both losses on one example,
/// with dropout disabled.
pub fn grad_check(
    config: &ModelConfig,
    example: &GradCheckExample,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    let config = ModelConfig {
        dropout_rate: 0.0,
        ..config.clone()
    };
    let params = ModelParams::init(&config)?;
    let seq = check_path("seq2seq", &params, opts, |p| {
        seq_loss(p, &example.input, &example.target)
    })?;
    let class = check_path("classifier", &params, opts, |p| {
        class_loss(p, &example.input, &example.trigger_positions, example.gold)
    })?;
    Ok(GradCheckReport { seq, class })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            max_input_len: 10,
            max_output_len: 6,
            ..ModelConfig::tiny(24, 4)
        }
    }

    #[test]
    fn full_model_gradients_match() {
        let cfg = config();
        let ex = GradCheckExample::random(&cfg, 7, 5, 3);
        let report = grad_check(&cfg, &ex, &GradCheckOptions::default()).unwrap();
        assert!(report.seq.checked > 100);
        assert!(
            report.max_rel_error() < 1e-4,
            "seq {} ({}), class {} ({})",
            report.seq.max_rel_error,
            report.seq.worst_tensor,
            report.class.max_rel_error,
            report.class.worst_tensor
        );
    }

    #[test]
    fn classifier_head_is_exact() {
        let cfg = config();
        let ex = GradCheckExample::random(&cfg, 6, 3, 11);
        let opts = GradCheckOptions {
            samples_per_tensor: usize::MAX,
            tensor_prefix: Some("classifier".into()),
            ..GradCheckOptions::default()
        };
        let report = grad_check(&cfg, &ex, &opts).unwrap();
        assert_eq!(report.class.checked, 16 * 4 + 4);
        assert!(
            report.class.max_rel_error < 1e-8,
            "{}",
            report.class.max_rel_error
        );
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-12);
    }
}
