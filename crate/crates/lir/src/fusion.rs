//! Fusing per-partition representations into one long-term interest vector.
//!
//! The default path is single-head self-attention pooling: stack the
//! partition vectors into R, attend with learned query/key/value
//! projections, then average the attended rows. The ablation path replaces
//! attention with mean pooling followed by the same value projection so the
//! output dimension matches. Both paths expose analytic gradients with
//! respect to the projection weights for joint training with the CTR head.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::encoding::{KnowledgeVector, Stage};
use crate::error::{Error, Result};
use crate::matrix::Mat;

const WEIGHTS_MAGIC: &[u8; 4] = b"LATW";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FuseMode {
    SelfAttention,
    MeanPool,
}

/// Learned query/key/value projections, each `d_red × d_att`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    w_q: Mat,
    w_k: Mat,
    w_v: Mat,
}

impl AttentionWeights {
    /// Seeded uniform init in `[-1/sqrt(d_red), 1/sqrt(d_red)]`.
    pub fn init(d_red: usize, d_att: usize, seed: u64) -> Self {
        assert!(d_red >= 1, "d_red must be >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_red as f64).sqrt();
        let mut draw = |_r: usize, _c: usize| rng.random_range(-bound..bound);
        AttentionWeights {
            w_q: Mat::from_fn(d_red, d_att, &mut draw),
            w_k: Mat::from_fn(d_red, d_att, &mut draw),
            w_v: Mat::from_fn(d_red, d_att, &mut draw),
        }
    }

    pub fn from_parts(w_q: Mat, w_k: Mat, w_v: Mat) -> Result<Self> {
        let same = w_q.rows() == w_k.rows()
            && w_k.rows() == w_v.rows()
            && w_q.cols() == w_k.cols()
            && w_k.cols() == w_v.cols();
        if !same {
            return Err(Error::Precondition(
                "query/key/value projections must share one shape".into(),
            ));
        }
        Ok(AttentionWeights { w_q, w_k, w_v })
    }

    pub fn d_red(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_att(&self) -> usize {
        self.w_q.cols()
    }

    pub fn w_q(&self) -> &Mat {
        &self.w_q
    }

    pub fn w_k(&self) -> &Mat {
        &self.w_k
    }

    pub fn w_v(&self) -> &Mat {
        &self.w_v
    }

    pub(crate) fn parts_mut(&mut self) -> [&mut Mat; 3] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_magic(WEIGHTS_MAGIC);
        w.put_u32(WEIGHTS_VERSION);
        w.put_u32(self.d_red() as u32);
        w.put_u32(self.d_att() as u32);
        for m in [&self.w_q, &self.w_k, &self.w_v] {
            w.put_f64_slice(m.data());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(WEIGHTS_MAGIC, "attention weights")?;
        let version = r.read_u32("weights version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!("unsupported weights version {version}")));
        }
        let d_red = r.read_u32("d_red")? as usize;
        let d_att = r.read_u32("d_att")? as usize;
        if d_red == 0 {
            return Err(Error::Format("d_red must be positive".into()));
        }
        let mut mats = Vec::with_capacity(3);
        for name in ["w_q", "w_k", "w_v"] {
            let data = r.read_f64_vec(d_red * d_att, name)?;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("{name} holds non-finite values")));
            }
            let mut m = Mat::zeros(d_red, d_att);
            m.data_mut().copy_from_slice(&data);
            mats.push(m);
        }
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after weights payload",
                r.remaining()
            )));
        }
        let w_v = mats.pop().unwrap();
        let w_k = mats.pop().unwrap();
        let w_q = mats.pop().unwrap();
        Ok(AttentionWeights { w_q, w_k, w_v })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// The fused long-term interest vector for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation {
    pub user_id: String,
    pub values: Vec<f64>,
    pub partition_count_used: u32,
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Everything the backward pass needs from one fusion forward.
#[derive(Debug, Clone)]
pub struct FuseTrace {
    mode: FuseMode,
    r: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Mat,
    out: Vec<f64>,
}

impl FuseTrace {
    pub fn output(&self) -> &[f64] {
        &self.out
    }

    /// Row-stochastic attention matrix; empty for the mean-pool mode.
    pub fn attention(&self) -> &Mat {
        &self.attn
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionGrads {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

/// Forward fusion over raw rows (each of length `d_red`).
pub fn fuse_forward(rows: &[&[f64]], weights: &AttentionWeights, mode: FuseMode) -> Result<FuseTrace> {
    if rows.is_empty() {
        return Err(Error::DegenerateInput(
            "cannot fuse an empty list of representations".into(),
        ));
    }
    let d_red = weights.d_red();
    for row in rows {
        if row.len() != d_red {
            return Err(Error::Dimension {
                what: "fusion input",
                expected: d_red,
                got: row.len(),
            });
        }
    }
    let j = rows.len();
    let mut r = Mat::zeros(j, d_red);
    for (i, row) in rows.iter().enumerate() {
        r.row_mut(i).copy_from_slice(row);
    }

    match mode {
        FuseMode::MeanPool => {
            let mean = r.column_mean();
            let mean_mat = Mat::from_rows(&[mean]);
            let out = mean_mat.matmul(&weights.w_v);
            Ok(FuseTrace {
                mode,
                r,
                q: Mat::zeros(0, 0),
                k: Mat::zeros(0, 0),
                v: Mat::zeros(0, 0),
                attn: Mat::zeros(0, 0),
                out: out.row(0).to_vec(),
            })
        }
        FuseMode::SelfAttention => {
            let q = r.matmul(&weights.w_q);
            let k = r.matmul(&weights.w_k);
            let v = r.matmul(&weights.w_v);
            let d_att = weights.d_att();
            let scale = 1.0 / (d_att.max(1) as f64).sqrt();
            let mut attn = q.matmul_transpose(&k);
            for row_i in 0..j {
                let row = attn.row_mut(row_i);
                for x in row.iter_mut() {
                    *x *= scale;
                }
                softmax_in_place(row);
            }
            let h = attn.matmul(&v);
            let out = h.column_mean();
            Ok(FuseTrace {
                mode,
                r,
                q,
                k,
                v,
                attn,
                out,
            })
        }
    }
}

/// Gradients of a scalar loss with respect to the three projections, given
/// the gradient `g_out` with respect to the fused output.
pub(crate) fn fuse_backward(
    trace: &FuseTrace,
    weights: &AttentionWeights,
    g_out: &[f64],
) -> AttentionGrads {
    let d_att = weights.d_att();
    debug_assert_eq!(g_out.len(), d_att);
    let j = trace.r.rows();

    match trace.mode {
        FuseMode::MeanPool => {
            // out = mean(R)·W_V  →  dW_V = mean(R)ᵀ · g
            let mean = trace.r.column_mean();
            let mut w_v = Mat::zeros(weights.d_red(), d_att);
            for (i, m) in mean.iter().enumerate() {
                for (c, g) in g_out.iter().enumerate() {
                    *w_v.at_mut(i, c) = m * g;
                }
            }
            AttentionGrads {
                w_q: Mat::zeros(weights.d_red(), d_att),
                w_k: Mat::zeros(weights.d_red(), d_att),
                w_v,
            }
        }
        FuseMode::SelfAttention => {
            // out = mean rows of H, H = A·V → every row of dH is g/j
            let inv_j = 1.0 / j as f64;
            let mut dh = Mat::zeros(j, d_att);
            for i in 0..j {
                for (c, g) in g_out.iter().enumerate() {
                    *dh.at_mut(i, c) = g * inv_j;
                }
            }
            // dV = Aᵀ·dH ; dA = dH·Vᵀ
            let dv = trace.attn.transpose_matmul(&dh);
            let da = dh.matmul_transpose(&trace.v);
            // softmax backward, row-wise: dS = A ⊙ (dA − (dA·A) 1)
            let mut ds = Mat::zeros(j, j);
            for row_i in 0..j {
                let a_row = trace.attn.row(row_i);
                let da_row = da.row(row_i);
                let dot: f64 = a_row.iter().zip(da_row).map(|(a, d)| a * d).sum();
                for col in 0..j {
                    *ds.at_mut(row_i, col) = a_row[col] * (da_row[col] - dot);
                }
            }
            let scale = 1.0 / (d_att.max(1) as f64).sqrt();
            for x in ds.data_mut().iter_mut() {
                *x *= scale;
            }
            // S = (Q·Kᵀ)·scale → dQ = dS·K, dK = dSᵀ·Q
            let dq = ds.matmul(&trace.k);
            let dk = ds.transpose_matmul(&trace.q);
            AttentionGrads {
                w_q: trace.r.transpose_matmul(&dq),
                w_k: trace.r.transpose_matmul(&dk),
                w_v: trace.r.transpose_matmul(&dv),
            }
        }
    }
}

fn fuse_vectors(
    reps: &[KnowledgeVector],
    weights: &AttentionWeights,
    mode: FuseMode,
) -> Result<FusedRepresentation> {
    if reps.is_empty() {
        return Err(Error::DegenerateInput(
            "cannot fuse an empty list of representations".into(),
        ));
    }
    for rep in reps {
        if rep.stage != Stage::Reduced {
            return Err(Error::Precondition(format!(
                "fusion expects reduced vectors, found a raw one for partition {}",
                rep.partition_index
            )));
        }
    }
    let rows: Vec<&[f64]> = reps.iter().map(|r| r.values.as_slice()).collect();
    let trace = fuse_forward(&rows, weights, mode)?;
    Ok(FusedRepresentation {
        user_id: reps[0].user_id.clone(),
        values: trace.out,
        partition_count_used: reps.len() as u32,
    })
}

/// Self-attention pooling over the ordered partition vectors.
pub fn self_attention_fuse(
    reps: &[KnowledgeVector],
    weights: &AttentionWeights,
) -> Result<FusedRepresentation> {
    fuse_vectors(reps, weights, FuseMode::SelfAttention)
}

/// Mean pooling followed by the value projection (ablation path).
pub fn mean_pool_fuse(
    reps: &[KnowledgeVector],
    weights: &AttentionWeights,
) -> Result<FusedRepresentation> {
    fuse_vectors(reps, weights, FuseMode::MeanPool)
}
