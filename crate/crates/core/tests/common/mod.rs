//! Independent reference implementations used as test oracles. Everything
//! here is written with plain nested loops over `Vec<f64>` and shares no
//! code with the library's tensor kernels.

#![allow(dead_code)]

use gdformer::model::{Gdformer, ModelConfig, NORM_EPS};
use gdformer::numerics::{Rng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn random_mat(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * rng.uniform_range(-1.0, 1.0)).collect())
        .collect()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::from_rows(m)
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Straight-line multi-head dictionary cross attention.
pub struct OracleAttention {
    pub output: Mat,
    pub similarity: Vec<f64>,
    pub maps: Vec<Mat>,
    pub head_similarity: Vec<Mat>,
}

pub fn oracle_dictionary_attention(x: &Mat, wq: &Mat, k: &Mat, v: &Mat, e: &Mat, heads: usize) -> OracleAttention {
    let t = x.len();
    let d = wq.len();
    let n = k.len();
    let p = e.len();
    let dh = d / heads;
    let e_norm: Mat = e.iter().map(|r| softmax_row(r)).collect();

    let mut q = vec![vec![0.0; d]; t];
    for i in 0..t {
        for j in 0..d {
            let mut acc = 0.0;
            for m in 0..d {
                acc += x[i][m] * wq[m][j];
            }
            q[i][j] = acc;
        }
    }

    let mut output = vec![vec![0.0; d]; t];
    let mut similarity = vec![0.0; t];
    let mut maps = Vec::new();
    let mut head_similarity = Vec::new();
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut map = vec![vec![0.0; n]; t];
        for i in 0..t {
            let logits: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            map[i] = softmax_row(&logits);
        }
        for i in 0..t {
            for c in cols.clone() {
                output[i][c] = (0..n).map(|j| map[i][j] * v[j][c]).sum();
            }
        }
        let mut s = vec![vec![0.0; p]; t];
        for i in 0..t {
            for r in 0..p {
                s[i][r] = (0..n).map(|j| map[i][j] * e_norm[r][j]).sum();
            }
            similarity[i] += s[i].iter().sum::<f64>();
        }
        maps.push(map);
        head_similarity.push(s);
    }
    OracleAttention {
        output,
        similarity,
        maps,
        head_similarity,
    }
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        window_len: 4,
        channels: 2,
        model_dim: 8,
        layers: 1,
        heads: 1,
        dict_size: 3,
        prototypes: 2,
        ffn_dim: 16,
        ..ModelConfig::default()
    }
}

pub fn random_window(rng: &mut Rng, t: usize, d: usize) -> Tensor {
    let data = (0..t * d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    Tensor::matrix(t, d, data).unwrap()
}

/// One-layer, one-head forward pass written out line by line. Returns the
/// denormalized reconstruction and the per-timestep similarity.
pub fn oracle_single_layer(model: &Gdformer, window: &Tensor) -> (Mat, Vec<f64>) {
    let cfg = model.config();
    assert_eq!((cfg.layers, cfg.heads), (1, 1));
    let (t_len, d, dm) = (cfg.window_len, cfg.channels, cfg.model_dim);
    let p = |name: &str| model.params().get(name).unwrap();
    let x = to_mat(window);
    let mean: Vec<f64> = (0..d).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / t_len as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|c| (x.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / t_len as f64).sqrt())
        .collect();
    let norm: Mat = x
        .iter()
        .map(|r| (0..d).map(|c| (r[c] - mean[c]) / (std[c] + NORM_EPS)).collect())
        .collect();
    let affine = |m: &Mat, w: &Mat, b: &[f64]| -> Mat {
        m.iter()
            .map(|r| (0..b.len()).map(|j| b[j] + (0..r.len()).map(|i| r[i] * w[i][j]).sum::<f64>()).collect())
            .collect()
    };
    let layer_norm = |m: &Mat, g: &[f64], b: &[f64]| -> Mat {
        m.iter()
            .map(|r| {
                let mu = r.iter().sum::<f64>() / r.len() as f64;
                let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / r.len() as f64;
                r.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mu) / (var + NORM_EPS).sqrt() * g[j] + b[j])
                    .collect()
            })
            .collect()
    };
    let add = |a: &Mat, b: &Mat| -> Mat { a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect() };
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());

    let x0 = affine(&norm, &to_mat(p("embed.weight")), p("embed.bias").data());
    assert_eq!(x0[0].len(), dm);
    let o = oracle_dictionary_attention(
        &x0,
        &to_mat(p("layers.0.attn.query")),
        &to_mat(p("layers.0.attn.keys")),
        &to_mat(p("layers.0.attn.values")),
        &to_mat(p("layers.0.attn.prototypes")),
        1,
    );
    let u = layer_norm(&add(&x0, &o.output), p("layers.0.norm1.gain").data(), p("layers.0.norm1.bias").data());
    let hidden: Mat = affine(&u, &to_mat(p("layers.0.ffn.w1")), p("layers.0.ffn.b1").data())
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let ff = affine(&hidden, &to_mat(p("layers.0.ffn.w2")), p("layers.0.ffn.b2").data());
    let x1 = layer_norm(&add(&u, &ff), p("layers.0.norm2.gain").data(), p("layers.0.norm2.bias").data());
    let proj = affine(&x1, &to_mat(p("head.weight")), p("head.bias").data());
    let recon = proj
        .iter()
        .map(|r| (0..d).map(|c| r[c] * (std[c] + NORM_EPS) + mean[c]).collect())
        .collect();
    (recon, o.similarity)
}
