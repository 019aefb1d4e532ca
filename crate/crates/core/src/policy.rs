//! Feedforward policy over the action catalogue, its flat parameter vector and
//! the checkpoint codec.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];

const MAGIC: &[u8; 4] = b"SASP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint mismatch: {0}")]
    VersionMismatch(String),
    #[error("checkpoint io: {0}")]
    Io(String),
}

/// Flat parameters of a fully connected ReLU network with a softmax head.
///
/// Layer `i` maps `layers[i]` inputs to `layers[i + 1]` outputs and is stored
/// as its weights (row-major, one row per output) followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layers: Vec<usize>,
    theta: Vec<f64>,
}

pub fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// `[input, hidden..., output]`.
pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

impl PolicyParams {
    pub fn zeros(layers: Vec<usize>) -> Self {
        assert!(layers.len() >= 2 && layers.iter().all(|&n| n > 0), "bad layer sizes {layers:?}");
        let theta = vec![0.0; param_count(&layers)];
        PolicyParams { layers, theta }
    }

    /// Uniform in ±1/√fan_in for every weight and bias of a layer.
    pub fn init(layers: Vec<usize>, seed: u64) -> Self {
        let mut p = Self::zeros(layers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in p.layers.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for v in &mut p.theta[off..off + (w[0] + 1) * w[1]] {
                *v = rng.random_range(-bound..bound);
            }
            off += (w[0] + 1) * w[1];
        }
        p
    }

    pub fn from_flat(layers: Vec<usize>, theta: Vec<f64>) -> Result<Self, PolicyError> {
        let expected = param_count(&layers);
        if theta.len() != expected {
            return Err(PolicyError::DimensionMismatch { expected, got: theta.len() });
        }
        Ok(PolicyParams { layers, theta })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn logits(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if obs.len() != self.input_dim() {
            return Err(PolicyError::DimensionMismatch { expected: self.input_dim(), got: obs.len() });
        }
        let n_layers = self.layers.len() - 1;
        let mut x = obs.to_vec();
        let mut off = 0;
        for (i, w) in self.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.theta[off..off + fan_in * fan_out];
            let bias = &self.theta[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            off += (fan_in + 1) * fan_out;
            let mut y: Vec<f64> = weights
                .chunks_exact(fan_in)
                .zip(bias)
                .map(|(row, b)| row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() + b)
                .collect();
            if i + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        Ok(x)
    }

    /// Action probabilities for one observation.
    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(softmax(&self.logits(obs)?))
    }

    /// `θ + sign·σ·ε(seed)`.
    pub fn perturb(&self, noise: NoiseSample, sigma: f64) -> PolicyParams {
        let mut out = self.clone();
        let scale = noise.sign as f64 * sigma;
        let mut stream = noise_stream(noise.seed);
        for v in &mut out.theta {
            let e: f64 = stream.sample(StandardNormal);
            *v += scale * e;
        }
        out
    }

    /// `θ += scale·dir`.
    pub fn add_scaled(&mut self, dir: &[f64], scale: f64) {
        assert_eq!(dir.len(), self.theta.len());
        for (v, d) in self.theta.iter_mut().zip(dir) {
            *v += scale * d;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.layers.len() + 8 * self.theta.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for &n in &self.layers {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let corrupt = |m: &str| PolicyError::CorruptCheckpoint(m.to_string());
        if bytes.len() < 4 + 2 + 4 + 8 + 4 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = u16::from_le_bytes(r.take::<2>()?);
        if version != FORMAT_VERSION {
            return Err(PolicyError::VersionMismatch(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let n_layers = u32::from_le_bytes(r.take::<4>()?) as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(corrupt("implausible layer count"));
        }
        let layers = (0..n_layers)
            .map(|_| r.take::<4>().map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = u64::from_le_bytes(r.take::<8>()?) as usize;
        if layers.contains(&0) || count != param_count(&layers) || body.len() != r.pos + 8 * count {
            return Err(corrupt("shape header disagrees with payload"));
        }
        let theta = (0..count).map(|_| r.take::<8>().map(f64::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
        Ok(PolicyParams { layers, theta })
    }

    /// Decodes a checkpoint and checks it fits a network of shape `layers`.
    pub fn from_bytes_for(bytes: &[u8], layers: &[usize]) -> Result<Self, PolicyError> {
        let p = Self::from_bytes(bytes)?;
        if p.layers != layers {
            return Err(PolicyError::VersionMismatch(format!(
                "checkpoint shape {:?}, policy shape {layers:?}",
                p.layers
            )));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| PolicyError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| PolicyError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let bytes = std::fs::read(path).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], PolicyError> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| PolicyError::CorruptCheckpoint("truncated".into()))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Indices of the `min(k, n)` largest probabilities, descending, ties to the
/// lower index.
pub fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k.min(probs.len()));
    idx
}

/// One exploration direction: `ε` is regenerated from `seed`, `sign` mirrors it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSample {
    pub seed: u64,
    pub sign: i8,
}

impl NoiseSample {
    pub fn positive(seed: u64) -> Self {
        NoiseSample { seed, sign: 1 }
    }

    pub fn negative(seed: u64) -> Self {
        NoiseSample { seed, sign: -1 }
    }
}

fn noise_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The unsigned Gaussian vector `ε(seed)` of length `len`.
pub fn noise_vector(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = noise_stream(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
