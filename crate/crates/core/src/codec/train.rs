//! Decoder training on text-side features.
//!
//! Messages are sampled once, split into disjoint train/held-out halves,
//! encoded through the frozen text encoder, and the decoder alone is
//! optimized with Adam on the summed binary cross-entropy. Fully seeded:
//! identical configs give bit-identical weights.

use super::decoder::{DecoderModel, PROB_CLAMP};
use super::{tokenize, MessageBits, MAX_BITS};
use crate::encoders::{EncoderBundle, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::seed::derive_seed;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct DecoderTrainConfig {
    pub bits: usize,
    /// Cap on sampled messages (N_K); actual count is `min(2^L, max)`.
    pub max_messages: usize,
    /// Maximum epochs; training may stop earlier on the loss target.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Stop once the epoch-average train loss drops below this many nats
    /// per bit. Caps how saturated the decoder's margins get, which keeps
    /// its decision boundaries within reach of the later embedding
    /// optimization. `None` always runs all epochs.
    pub early_stop_loss_per_bit: Option<f64>,
    /// How to condition features before the first layer (folded back into
    /// fc1 afterwards, so the stored decoder always runs on raw features).
    pub conditioning: FeatureConditioning,
    pub seed: u64,
}

/// Input conditioning used during decoder training. Anything stronger than
/// `Center` trades off how far the decoder's margins extend for features
/// off the text manifold (e.g. image-side features), because directions
/// the text features barely vary in get amplified by 1/sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureConditioning {
    /// Mean-centering only.
    Center,
    /// Per-dimension standardization with a sigma floor.
    Standardize,
    /// ZCA whitening with covariance shrinkage (fraction of the mean
    /// eigenvalue).
    Whiten { shrinkage: f64 },
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            bits: 32,
            max_messages: 2048,
            epochs: 100,
            batch_size: 64,
            learning_rate: 5e-3,
            weight_decay: 1e-6,
            early_stop_loss_per_bit: Some(0.01),
            conditioning: FeatureConditioning::Standardize,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecoderTrainReport {
    pub n_messages: usize,
    pub n_train: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
}

/// Draw `count` distinct messages of length `bits`, seeded.
fn sample_distinct_messages(bits: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<MessageBits> {
    if bits < 63 && (1usize << bits) <= count * 4 {
        // Small space: enumerate and shuffle, then truncate.
        let total = 1usize << bits;
        let mut all: Vec<usize> = (0..total).collect();
        all.shuffle(rng);
        all.truncate(count.min(total));
        all.into_iter()
            .map(|v| {
                MessageBits::new((0..bits).map(|i| ((v >> (bits - 1 - i)) & 1) as u8).collect())
                    .unwrap()
            })
            .collect()
    } else {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let m = MessageBits::random(bits, rng).unwrap();
            if seen.insert(m.bits().to_vec()) {
                out.push(m);
            }
        }
        out
    }
}

/// Symmetric ZCA whitening map `C_shrunk^{-1/2}` of the centered features,
/// with shrinkage `C + eps I` (eps relative to the mean eigenvalue).
fn zca_whitening(
    features: &Array2<f64>,
    mean: &ndarray::Array1<f64>,
    shrinkage: f64,
) -> Array2<f64> {
    let n = features.nrows();
    let d = features.ncols();
    let mut centered = features.clone();
    for mut row in centered.axis_iter_mut(Axis(0)) {
        row -= mean;
    }
    let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
    let mut cov_na = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            cov_na[(i, j)] = cov[(i, j)];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov_na);
    let eps = shrinkage * eig.eigenvalues.iter().sum::<f64>().max(1e-12) / d as f64;
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    // U diag(w) U^T with w = 1/sqrt(l + eps) on the retained spectrum.
    // Directions the training features essentially never move in are
    // dropped outright (weight 0) instead of amplified: the decoder then
    // ignores off-manifold deviations in those directions, instead of
    // exploding on them.
    let rank_floor = 1e-6 * lambda_max;
    let mut scaled = eig.eigenvectors.clone();
    for k in 0..d {
        let l = eig.eigenvalues[k].max(0.0);
        let w = if l < rank_floor { 0.0 } else { 1.0 / (l + eps).sqrt() };
        scaled.column_mut(k).scale_mut(w);
    }
    let map_na = scaled * eig.eigenvectors.transpose();
    Array2::from_shape_fn((d, d), |(i, j)| map_na[(i, j)])
}

fn bit_accuracy_on(
    model: &DecoderModel,
    features: &Array2<f64>,
    targets: &[MessageBits],
) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let out = model.forward(&features.view());
    let mut correct = 0usize;
    let mut total = 0usize;
    for (row, msg) in out.probs.axis_iter(Axis(0)).zip(targets) {
        for (&p, &m) in row.iter().zip(msg.bits()) {
            correct += usize::from(u8::from(p >= 0.5) == m);
            total += 1;
        }
    }
    correct as f64 / total as f64
}

/// Train a fresh decoder against a bundle's text encoder.
pub fn train_decoder<B: EncoderBundle>(
    bundle: &B,
    config: &DecoderTrainConfig,
) -> Result<(DecoderModel, DecoderTrainReport)> {
    if config.bits == 0 || config.bits > MAX_BITS {
        return Err(Error::Invariant(format!(
            "bits {} outside [1, {MAX_BITS}]",
            config.bits
        )));
    }
    if bundle.feature_dim() != FEATURE_DIM {
        return Err(Error::BundleMismatch(format!(
            "encoder feature dimension {} is not {FEATURE_DIM}",
            bundle.feature_dim()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "decoder-messages"));
    let space = if config.bits >= 63 { usize::MAX } else { 1usize << config.bits };
    let count = config.max_messages.min(space).max(2);
    let messages = sample_distinct_messages(config.bits, count, &mut rng);

    // Disjoint 50/50 split; the shuffle above already randomized order.
    let n_train = messages.len() / 2;
    let (train_msgs, held_msgs) = messages.split_at(n_train);

    // Text features are frozen; compute once.
    let encode_all = |msgs: &[MessageBits]| -> Result<Array2<f64>> {
        let rows: Vec<_> = msgs
            .par_iter()
            .map(|m| bundle.encode_text(&tokenize(m)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((rows.len(), FEATURE_DIM));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    };
    let raw_train_feats = encode_all(train_msgs)?;
    let raw_held_feats = encode_all(held_msgs)?;

    // Condition features so optimization is tractable in the epoch
    // budget. The conditioning affine map is folded into fc1 afterwards,
    // so the stored decoder is still exactly three affine layers over raw
    // features.
    let mean = raw_train_feats.mean_axis(Axis(0)).unwrap();
    let cond_map = match config.conditioning {
        FeatureConditioning::Center => Array2::eye(FEATURE_DIM),
        FeatureConditioning::Standardize => {
            let std = raw_train_feats.std_axis(Axis(0), 0.0);
            let floor = 1e-3 * std.iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
            Array2::from_diag(&std.mapv(|s| 1.0 / s.max(floor)))
        }
        FeatureConditioning::Whiten { shrinkage } => {
            zca_whitening(&raw_train_feats, &mean, shrinkage)
        }
    };
    let train_feats = {
        let mut centered = raw_train_feats.clone();
        for mut row in centered.axis_iter_mut(Axis(0)) {
            row -= &mean;
        }
        centered.dot(&cond_map.t())
    };

    let mut model = DecoderModel::new_random(
        config.bits,
        bundle.identifier(),
        derive_seed(config.seed, "decoder-init"),
    )?;
    let mut params = model.params_flat();
    let mut adam = Adam::new(params.len(), config.learning_rate, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "decoder-batches"));

    let targets: Array2<f64> = {
        let mut t = Array2::zeros((train_msgs.len(), config.bits));
        for (i, m) in train_msgs.iter().enumerate() {
            for (j, &b) in m.bits().iter().enumerate() {
                t[(i, j)] = f64::from(b);
            }
        }
        t
    };

    let mut final_train_loss = f64::NAN;
    let mut epochs_run = 0;
    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_msgs.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch_x = train_feats.select(Axis(0), chunk);
            let batch_t = targets.select(Axis(0), chunk);
            let ctx = model.forward(&batch_x.view());

            // Summed BCE per message, averaged over the batch. The logit
            // gradient is the standard (p - m); the clamp only guards the
            // logs in the reported loss.
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            let mut d_logits = Array2::zeros(ctx.probs.raw_dim());
            for i in 0..chunk.len() {
                for j in 0..config.bits {
                    let p = ctx.probs[(i, j)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    let m = batch_t[(i, j)];
                    loss -= m * p.ln() + (1.0 - m) * (1.0 - p).ln();
                    d_logits[(i, j)] = (ctx.probs[(i, j)] - m) * scale;
                }
            }
            epoch_loss += loss;
            let back = model.backward(&ctx, &d_logits.view());
            adam.step(&mut params, &back.d_params);
            model.set_params_flat(&params);
        }
        final_train_loss = epoch_loss / train_msgs.len() as f64;
        epochs_run += 1;
        if let Some(per_bit) = config.early_stop_loss_per_bit {
            if final_train_loss <= per_bit * config.bits as f64 {
                break;
            }
        }
    }

    model.fold_input_affine(&cond_map, &mean);

    let report = DecoderTrainReport {
        n_messages: messages.len(),
        n_train: train_msgs.len(),
        epochs_run,
        final_train_loss,
        train_accuracy: bit_accuracy_on(&model, &raw_train_feats, train_msgs),
        heldout_accuracy: bit_accuracy_on(&model, &raw_held_feats, held_msgs),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ToyBundle;

    #[test]
    fn untrained_decoder_sits_at_chance() {
        let bundle = ToyBundle::seeded(21);
        let config = DecoderTrainConfig { bits: 16, epochs: 0, seed: 4, ..Default::default() };
        let (_, report) = train_decoder(&bundle, &config).unwrap();
        assert!(
            (report.heldout_accuracy - 0.5).abs() <= 0.05,
            "chance-level accuracy expected, got {}",
            report.heldout_accuracy
        );
    }

    #[test]
    fn training_is_seed_reproducible() {
        let bundle = ToyBundle::seeded(21);
        let config = DecoderTrainConfig {
            bits: 8,
            max_messages: 64,
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let (a, ra) = train_decoder(&bundle, &config).unwrap();
        let (b, rb) = train_decoder(&bundle, &config).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert_eq!(ra.heldout_accuracy, rb.heldout_accuracy);
    }

    #[test]
    fn rejects_out_of_range_bits() {
        let bundle = ToyBundle::seeded(21);
        let config = DecoderTrainConfig { bits: 80, ..Default::default() };
        assert!(train_decoder(&bundle, &config).is_err());
    }

    /// L=8 enumerates all 256 messages; held-out accuracy should be high
    /// after full training.
    #[test]
    fn l8_toy_decoder_reaches_high_heldout_accuracy() {
        let bundle = ToyBundle::seeded(21);
        let config = DecoderTrainConfig { bits: 8, seed: 5, ..Default::default() };
        let (model, report) = train_decoder(&bundle, &config).unwrap();
        assert_eq!(report.n_messages, 256);
        assert_eq!(model.bits(), 8);
        assert!(
            report.heldout_accuracy >= 0.99,
            "held-out accuracy {} below 0.99 (train {}, loss {})",
            report.heldout_accuracy,
            report.train_accuracy,
            report.final_train_loss
        );
    }
}
