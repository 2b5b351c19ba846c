//! The 3-layer message decoder and its checkpoint format.

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, sigmoid, Linear};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const HIDDEN_1: usize = 512;
const HIDDEN_2: usize = 256;
const INPUT_DIM: usize = 512;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SMDC";
const CHECKPOINT_VERSION: u32 = 1;

/// Probability clamp shared with the message loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Three affine layers (512 -> 512 -> 256 -> L), GELU after the first two,
/// logistic output. Immutable after training.
#[derive(Debug, Clone)]
pub struct DecoderModel {
    bits: usize,
    encoder_id: String,
    seed: u64,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

/// Activations retained for the backward pass.
pub struct DecoderForward {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    /// Pre-sigmoid logits, (batch, L).
    pub logits: Array2<f64>,
    /// Sigmoid probabilities, (batch, L).
    pub probs: Array2<f64>,
}

/// Flattened parameter gradients plus the input-feature gradient.
pub struct DecoderBackward {
    pub d_input: Array2<f64>,
    pub d_params: Vec<f64>,
}

impl DecoderModel {
    /// Uniform fan-in initialization from a fixed seed.
    pub fn new_random(bits: usize, encoder_id: &str, seed: u64) -> Result<Self> {
        if bits == 0 || bits > crate::codec::MAX_BITS {
            return Err(Error::Invariant(format!(
                "decoder bit width {bits} outside [1, {}]",
                crate::codec::MAX_BITS
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |out: usize, inp: usize| {
            let a = 1.0 / (inp as f64).sqrt();
            Linear {
                weight: Array2::from_shape_fn((out, inp), |_| rng.random_range(-a..a)),
                bias: Array1::from_shape_fn(out, |_| rng.random_range(-a..a)),
            }
        };
        Ok(Self {
            bits,
            encoder_id: encoder_id.to_string(),
            seed,
            fc1: layer(HIDDEN_1, INPUT_DIM),
            fc2: layer(HIDDEN_2, HIDDEN_1),
            fc3: layer(bits, HIDDEN_2),
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        [(HIDDEN_1, INPUT_DIM), (HIDDEN_2, HIDDEN_1), (self.bits, HIDDEN_2)]
    }

    pub fn forward(&self, features: &ArrayView2<f64>) -> DecoderForward {
        let z1 = self.fc1.forward(features);
        let a1 = z1.mapv(gelu);
        let z2 = self.fc2.forward(&a1.view());
        let a2 = z2.mapv(gelu);
        let logits = self.fc3.forward(&a2.view());
        let probs = logits.mapv(sigmoid);
        DecoderForward { x: features.to_owned(), z1, a1, z2, a2, logits, probs }
    }

    /// Probabilities for a single feature vector, clamped away from {0, 1}.
    pub fn probabilities(&self, feature: &Array1<f64>) -> Vec<f64> {
        let batch = feature.view().insert_axis(ndarray::Axis(0));
        let out = self.forward(&batch);
        out.probs
            .row(0)
            .iter()
            .map(|&p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect()
    }

    /// Backpropagate a logit-space gradient to parameters and input.
    pub fn backward(&self, ctx: &DecoderForward, d_logits: &ArrayView2<f64>) -> DecoderBackward {
        let (d_a2, d_w3, d_b3) = self.fc3.backward(&ctx.a2.view(), d_logits);
        let mut d_z2 = d_a2;
        d_z2.zip_mut_with(&ctx.z2, |g, &z| *g *= gelu_grad(z));
        let (d_a1, d_w2, d_b2) = self.fc2.backward(&ctx.a1.view(), &d_z2.view());
        let mut d_z1 = d_a1;
        d_z1.zip_mut_with(&ctx.z1, |g, &z| *g *= gelu_grad(z));
        let (d_input, d_w1, d_b1) = self.fc1.backward(&ctx.x.view(), &d_z1.view());

        let mut d_params =
            Vec::with_capacity(self.fc1.n_params() + self.fc2.n_params() + self.fc3.n_params());
        d_params.extend(d_w1.iter());
        d_params.extend(d_b1.iter());
        d_params.extend(d_w2.iter());
        d_params.extend(d_b2.iter());
        d_params.extend(d_w3.iter());
        d_params.extend(d_b3.iter());
        DecoderBackward { d_input, d_params }
    }

    pub fn n_params(&self) -> usize {
        self.fc1.n_params() + self.fc2.n_params() + self.fc3.n_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.fc1.weight.iter());
        out.extend(self.fc1.bias.iter());
        out.extend(self.fc2.weight.iter());
        out.extend(self.fc2.bias.iter());
        out.extend(self.fc3.weight.iter());
        out.extend(self.fc3.bias.iter());
        out
    }

    /// Compose a fixed input map `x -> A (x - mean)` into the first layer:
    /// `W1' = W1 A`, `b1' = b1 - W1 A mean`. Used to fold training-time
    /// feature whitening into the stored weights so the architecture stays
    /// three plain affine layers over raw features.
    pub fn fold_input_affine(&mut self, map: &Array2<f64>, mean: &Array1<f64>) {
        assert_eq!(map.shape(), [INPUT_DIM, INPUT_DIM]);
        assert_eq!(mean.len(), INPUT_DIM);
        let w = self.fc1.weight.dot(map);
        let correction = w.dot(mean);
        self.fc1.weight = w;
        self.fc1.bias -= &correction;
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut cursor = 0;
        for layer in [&mut self.fc1, &mut self.fc2, &mut self.fc3] {
            for v in layer.weight.iter_mut() {
                *v = flat[cursor];
                cursor += 1;
            }
            for v in layer.bias.iter_mut() {
                *v = flat[cursor];
                cursor += 1;
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    bits: usize,
    layer_dims: Vec<[usize; 2]>,
    seed: u64,
    encoder: String,
    blobs: Vec<BlobMeta>,
}

/// Write a decoder as JSON metadata plus raw little-endian f32 blobs in the
/// declared order.
pub fn save_checkpoint(model: &DecoderModel, path: &Path) -> Result<()> {
    let dims = model.layer_dims();
    let mut blobs = Vec::new();
    for (i, (out, inp)) in dims.iter().enumerate() {
        blobs.push(BlobMeta { name: format!("fc{}.weight", i + 1), rows: *out, cols: *inp });
        blobs.push(BlobMeta { name: format!("fc{}.bias", i + 1), rows: *out, cols: 1 });
    }
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        bits: model.bits,
        layer_dims: dims.iter().map(|&(o, i)| [o, i]).collect(),
        seed: model.seed,
        encoder: model.encoder_id.clone(),
        blobs,
    };
    let json = serde_json::to_vec(&meta)
        .map_err(|e| Error::Checkpoint(format!("metadata encode: {e}")))?;

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;
    for v in model.params_flat() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DecoderModel> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic; not a decoder checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("metadata decode: {e}")))?;

    let mut model = DecoderModel::new_random(meta.bits, &meta.encoder, meta.seed)?;
    let expected_dims: Vec<[usize; 2]> =
        model.layer_dims().iter().map(|&(o, i)| [o, i]).collect();
    if meta.layer_dims != expected_dims {
        return Err(Error::Checkpoint(format!(
            "layer dims {:?} do not match the decoder architecture {:?}",
            meta.layer_dims, expected_dims
        )));
    }
    let n: usize = meta.blobs.iter().map(|b| b.rows * b.cols).sum();
    if n != model.n_params() {
        return Err(Error::Checkpoint("blob sizes do not cover the parameter count".into()));
    }
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r
            .read_f32::<LittleEndian>()
            .map_err(|_| Error::Checkpoint("truncated weight blob".into()))?;
        flat.push(f64::from(v));
    }
    model.set_params_flat(&flat);
    Ok(model)
}
