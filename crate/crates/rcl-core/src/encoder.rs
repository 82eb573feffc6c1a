//! Two-layer projection encoder with analytic forward and backward passes.
//!
//! `embedding = W2 * tanh(W1 * x + b1) + b2`, all f64. Embeddings are not
//! L2-normalized; the objectives use cosine similarity, and leaving the raw
//! scale visible is what makes the anisotropy diagnostics meaningful.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend;
use crate::error::{Error, Result};
use crate::rng;
use crate::textfeat::FeatureVector;

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Feature dimension (must equal the featurizer's `num_buckets`).
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Embedding dimension d.
    pub embed_dim: usize,
    /// Initialization seed; shared between entropy models and the final
    /// model so every run starts from the same point.
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.hidden_dim < 1 || self.embed_dim < 1 {
            return Err(Error::config(format!(
                "encoder dims must all be >= 1 (input {}, hidden {}, embed {})",
                self.input_dim, self.hidden_dim, self.embed_dim
            )));
        }
        Ok(())
    }
}

/// Trainable weights. `w1` is hidden_dim x input_dim row-major, `w2` is
/// embed_dim x hidden_dim row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient (or moment) buffers shaped like the four parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        ParamGrads {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += b;
        }
    }

    /// Largest absolute entry across all blocks.
    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .fold(0.0f64, |m, &g| m.max(g.abs()))
    }
}

/// A batch of embeddings with their sentence ids, one row per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingBatch {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::shape(
                "EmbeddingBatch",
                format!("{} ids", rows.len()),
                format!("{} ids", ids.len()),
            ));
        }
        Ok(EmbeddingBatch { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Every row finite and not numerically zero.
    pub fn validate_rows(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "embedding row {i} (id {})",
                    self.ids[i]
                )));
            }
            let norm_sq: f64 = row.iter().map(|v| v * v).sum();
            if norm_sq.sqrt() <= 1e-12 {
                return Err(Error::ZeroVector(format!(
                    "embedding row {i} (id {})",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }
}

/// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out)) per layer),
/// zero biases, fully determined by `cfg.seed`.
pub fn init_params(cfg: &EncoderConfig) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, "encoder-init", 0);
    let s1 = (6.0 / (cfg.input_dim + cfg.hidden_dim) as f64).sqrt();
    let w1: Vec<f64> = (0..cfg.hidden_dim * cfg.input_dim)
        .map(|_| rng::uniform(&mut r, -s1, s1))
        .collect();
    let s2 = (6.0 / (cfg.hidden_dim + cfg.embed_dim) as f64).sqrt();
    let w2: Vec<f64> = (0..cfg.embed_dim * cfg.hidden_dim)
        .map(|_| rng::uniform(&mut r, -s2, s2))
        .collect();
    Ok(EncoderParams {
        input_dim: cfg.input_dim,
        hidden_dim: cfg.hidden_dim,
        embed_dim: cfg.embed_dim,
        seed: cfg.seed,
        w1,
        b1: vec![0.0; cfg.hidden_dim],
        w2,
        b2: vec![0.0; cfg.embed_dim],
    })
}

fn check_feats(params: &EncoderParams, feats: &[FeatureVector]) -> Result<()> {
    for (i, f) in feats.iter().enumerate() {
        if f.dim() != params.input_dim {
            return Err(Error::shape(
                "encoder input",
                format!("feature dim {}", params.input_dim),
                format!("feature dim {} at row {i}", f.dim()),
            ));
        }
    }
    Ok(())
}

fn forward_row(params: &EncoderParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h: Vec<f64> = (0..params.hidden_dim)
        .map(|r| {
            let row = &params.w1[r * params.input_dim..(r + 1) * params.input_dim];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + params.b1[r];
            z.tanh()
        })
        .collect();
    let e: Vec<f64> = (0..params.embed_dim)
        .map(|r| {
            let row = &params.w2[r * params.hidden_dim..(r + 1) * params.hidden_dim];
            row.iter().zip(&h).map(|(w, hi)| w * hi).sum::<f64>() + params.b2[r]
        })
        .collect();
    (h, e)
}

/// Encode a feature batch; row i of the result is the embedding of
/// `feats[i]` with id `ids[i]`.
pub fn forward(
    params: &EncoderParams,
    feats: &[FeatureVector],
    ids: &[String],
) -> Result<EmbeddingBatch> {
    check_feats(params, feats)?;
    if ids.len() != feats.len() {
        return Err(Error::shape(
            "encoder forward",
            format!("{} ids", feats.len()),
            format!("{} ids", ids.len()),
        ));
    }
    let rows = backend::map_indexed(feats.len(), |i| forward_row(params, feats[i].values()).1);
    EmbeddingBatch::new(ids.to_vec(), rows)
}

/// Gradient of `sum_{i,k} grad_embeddings[i][k] * forward(params, feats)[i][k]`
/// with respect to every parameter block.
pub fn backward(
    params: &EncoderParams,
    feats: &[FeatureVector],
    grad_embeddings: &[Vec<f64>],
) -> Result<ParamGrads> {
    check_feats(params, feats)?;
    if grad_embeddings.len() != feats.len() {
        return Err(Error::shape(
            "encoder backward",
            format!("{} gradient rows", feats.len()),
            format!("{} gradient rows", grad_embeddings.len()),
        ));
    }
    for (i, g) in grad_embeddings.iter().enumerate() {
        if g.len() != params.embed_dim {
            return Err(Error::shape(
                "encoder backward",
                format!("gradient dim {}", params.embed_dim),
                format!("gradient dim {} at row {i}", g.len()),
            ));
        }
    }
    let batch = feats.len();
    // Per-row hidden activations and pre-activation gradients.
    let per_row: Vec<(Vec<f64>, Vec<f64>)> = backend::map_indexed(batch, |i| {
        let (h, _) = forward_row(params, feats[i].values());
        let g_e = &grad_embeddings[i];
        let g_z: Vec<f64> = (0..params.hidden_dim)
            .map(|c| {
                let g_h: f64 = (0..params.embed_dim)
                    .map(|r| params.w2[r * params.hidden_dim + c] * g_e[r])
                    .sum();
                g_h * (1.0 - h[c] * h[c])
            })
            .collect();
        (h, g_z)
    });

    let mut grads = ParamGrads::zeros_like(params);
    // Each output row reduces over the batch in index order, so the result
    // is identical on the parallel and sequential paths.
    backend::fill_rows(&mut grads.w2, params.hidden_dim, |r, out| {
        for (i, (h, _)) in per_row.iter().enumerate() {
            let g = grad_embeddings[i][r];
            for (o, hv) in out.iter_mut().zip(h) {
                *o += g * hv;
            }
        }
    });
    backend::fill_rows(&mut grads.w1, params.input_dim, |r, out| {
        for (i, (_, g_z)) in per_row.iter().enumerate() {
            let g = g_z[r];
            for (o, xv) in out.iter_mut().zip(feats[i].values()) {
                *o += g * xv;
            }
        }
    });
    for r in 0..params.embed_dim {
        grads.b2[r] = grad_embeddings.iter().map(|g| g[r]).sum();
    }
    for r in 0..params.hidden_dim {
        grads.b1[r] = per_row.iter().map(|(_, g_z)| g_z[r]).sum();
    }
    Ok(grads)
}

// Parameter file layout (all little-endian):
//   bytes 0..8    magic "RCLPARAM"
//   bytes 8..12   format version, u32 (currently 1)
//   bytes 12..44  input_dim, hidden_dim, embed_dim, seed as u64
//   then f64 arrays in order: w1 (hidden*input, row-major), b1 (hidden),
//   w2 (embed*hidden, row-major), b2 (embed)
const PARAMS_MAGIC: &[u8; 8] = b"RCLPARAM";
const PARAMS_VERSION: u32 = 1;

/// Serialize parameters to the documented binary layout.
pub fn params_to_bytes(params: &EncoderParams) -> Vec<u8> {
    let n_floats =
        params.w1.len() + params.b1.len() + params.w2.len() + params.b2.len();
    let mut out = Vec::with_capacity(44 + 8 * n_floats);
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    for dim in [
        params.input_dim as u64,
        params.hidden_dim as u64,
        params.embed_dim as u64,
        params.seed,
    ] {
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for block in [&params.w1, &params.b1, &params.w2, &params.b2] {
        for v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse the documented binary layout.
pub fn params_from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::data("parameter file truncated"));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(8)? != PARAMS_MAGIC {
        return Err(Error::data("not a parameter file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != PARAMS_VERSION {
        return Err(Error::data(format!(
            "unsupported parameter file version {version}"
        )));
    }
    let mut dims = [0u64; 4];
    for d in dims.iter_mut() {
        *d = u64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let (input_dim, hidden_dim, embed_dim) =
        (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let mut read_block = |len: usize| -> Result<Vec<f64>> {
        let raw = take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let w1 = read_block(hidden_dim * input_dim)?;
    let b1 = read_block(hidden_dim)?;
    let w2 = read_block(embed_dim * hidden_dim)?;
    let b2 = read_block(embed_dim)?;
    if !cursor.is_empty() {
        return Err(Error::data("parameter file has trailing bytes"));
    }
    let params = EncoderParams {
        input_dim,
        hidden_dim,
        embed_dim,
        seed: dims[3],
        w1,
        b1,
        w2,
        b2,
    };
    if params
        .w1
        .iter()
        .chain(&params.b1)
        .chain(&params.w2)
        .chain(&params.b2)
        .any(|v| !v.is_finite())
    {
        return Err(Error::data("parameter file contains non-finite values"));
    }
    Ok(params)
}

pub fn save_params(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&params_to_bytes(params))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<EncoderParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    params_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfeat::{featurize, FeatConfig};

    fn small_cfg(seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_dim: 16,
            hidden_dim: 8,
            embed_dim: 4,
            seed,
        }
    }

    fn random_feats(n: usize, dim: usize, seed: u64) -> Vec<FeatureVector> {
        // Featurize short random strings so inputs go through the real path.
        let cfg = FeatConfig {
            ngram_size: 2,
            num_buckets: dim,
            lowercase: true,
        };
        let mut r = rng::stream(seed, "feat-gen", 0);
        (0..n)
            .map(|_| {
                let len = 4 + rng::bounded(&mut r, 8) as usize;
                let s: String = (0..len)
                    .map(|_| (b'a' + rng::bounded(&mut r, 26) as u8) as char)
                    .collect();
                featurize(&s, &cfg)
            })
            .collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = small_cfg(7);
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
    }

    #[test]
    fn init_biases_are_zero() {
        let p = init_params(&small_cfg(7)).unwrap();
        assert!(p.b1.iter().all(|&v| v == 0.0));
        assert!(p.b2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_xavier_bound() {
        let cfg = small_cfg(3);
        let p = init_params(&cfg).unwrap();
        let s1 = (6.0 / (cfg.input_dim + cfg.hidden_dim) as f64).sqrt();
        let s2 = (6.0 / (cfg.hidden_dim + cfg.embed_dim) as f64).sqrt();
        assert!(p.w1.iter().all(|&v| v.abs() <= s1));
        assert!(p.w2.iter().all(|&v| v.abs() <= s2));
    }

    #[test]
    fn zero_output_layer_gives_zero_embedding() {
        let mut p = init_params(&small_cfg(1)).unwrap();
        p.w2.iter_mut().for_each(|v| *v = 0.0);
        p.b2.iter_mut().for_each(|v| *v = 0.0);
        let feats = random_feats(3, 16, 9);
        let out = forward(&p, &feats, &ids(3)).unwrap();
        assert!(out.rows.iter().all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rows_are_independent_of_batch_composition() {
        let p = init_params(&small_cfg(2)).unwrap();
        let feats = random_feats(32, 16, 11);
        let full = forward(&p, &feats, &ids(32)).unwrap();
        let single = forward(&p, &feats[5..6], &ids(1)).unwrap();
        assert_eq!(full.rows[5], single.rows[0]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let p = init_params(&small_cfg(4)).unwrap();
        let feats = random_feats(6, 16, 13);
        let out = forward(&p, &feats, &ids(6)).unwrap();
        // Independent triple-loop evaluation.
        for (i, f) in feats.iter().enumerate() {
            let x = f.values();
            let mut h = vec![0.0; p.hidden_dim];
            for r in 0..p.hidden_dim {
                let mut z = p.b1[r];
                for c in 0..p.input_dim {
                    z += p.w1[r * p.input_dim + c] * x[c];
                }
                h[r] = z.tanh();
            }
            for r in 0..p.embed_dim {
                let mut e = p.b2[r];
                for c in 0..p.hidden_dim {
                    e += p.w2[r * p.hidden_dim + c] * h[c];
                }
                assert!((out.rows[i][r] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let p = init_params(&small_cfg(4)).unwrap();
        let feats = random_feats(2, 8, 5);
        assert!(matches!(
            forward(&p, &feats, &ids(2)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_gradient() {
        let p = init_params(&small_cfg(6)).unwrap();
        let feats = random_feats(4, 16, 17);
        let grads = backward(&p, &feats, &vec![vec![0.0; 4]; 4]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn duplicate_rows_double_the_gradient() {
        let p = init_params(&small_cfg(8)).unwrap();
        let feats = random_feats(1, 16, 19);
        let g_e = vec![vec![0.3, -0.7, 0.1, 0.9]];
        let single = backward(&p, &feats, &g_e).unwrap();
        let doubled_feats = vec![feats[0].clone(), feats[0].clone()];
        let doubled = backward(&p, &doubled_feats, &vec![g_e[0].clone(); 2]).unwrap();
        for (a, b) in doubled.w1.iter().zip(&single.w1) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        for (a, b) in doubled.b2.iter().zip(&single.b2) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = init_params(&small_cfg(10)).unwrap();
        let feats = random_feats(3, 16, 23);
        let mut r = rng::stream(29, "grad", 0);
        let g_e: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect())
            .collect();
        let analytic = backward(&p, &feats, &g_e).unwrap();

        let objective = |p: &EncoderParams| -> f64 {
            let out = forward(p, &feats, &ids(3)).unwrap();
            out.rows
                .iter()
                .zip(&g_e)
                .map(|(row, g)| row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };

        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        let blocks: [(&[f64], fn(&mut EncoderParams) -> &mut Vec<f64>); 4] = [
            (&analytic.w1, |p| &mut p.w1),
            (&analytic.b1, |p| &mut p.b1),
            (&analytic.w2, |p| &mut p.w2),
            (&analytic.b2, |p| &mut p.b2),
        ];
        for (grad_block, accessor) in blocks {
            for k in 0..grad_block.len() {
                let mut plus = p.clone();
                accessor(&mut plus)[k] += h;
                let mut minus = p.clone();
                accessor(&mut minus)[k] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let denom = grad_block[k].abs().max(fd.abs()).max(1e-8);
                max_rel = max_rel.max((grad_block[k] - fd).abs() / denom);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn params_round_trip_is_bit_identical() {
        let p = init_params(&small_cfg(12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        save_params(&p, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(p, loaded);
    }

    #[test]
    fn corrupt_params_file_is_rejected() {
        let p = init_params(&small_cfg(12)).unwrap();
        let mut bytes = params_to_bytes(&p);
        bytes[0] = b'X';
        assert!(params_from_bytes(&bytes).is_err());
        let mut truncated = params_to_bytes(&p);
        truncated.truncate(truncated.len() - 3);
        assert!(params_from_bytes(&truncated).is_err());
    }
}
