//! Dense encoding of interest knowledge.
//!
//! Texts are embedded independently and pooled by equal-weight averaging,
//! then reduced with a principal-component projection fitted on the run's
//! training-window vectors. The eigendecomposition is a cyclic Jacobi sweep
//! over the sample covariance; components are sign-canonicalized so fits are
//! reproducible.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::binio::{ByteReader, ByteWriter};
use crate::client::EmbedClient;
use crate::error::{Error, Result};
use crate::prompt::InterestKnowledge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    Raw,
    Reduced,
}

impl Stage {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Stage::Raw => 0,
            Stage::Reduced => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Stage::Raw),
            1 => Ok(Stage::Reduced),
            other => Err(Error::Format(format!("unknown stage byte {other}"))),
        }
    }
}

/// Dense representation of one partition's knowledge texts.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeVector {
    pub user_id: String,
    pub partition_index: u32,
    pub values: Vec<f64>,
    pub stage: Stage,
}

impl KnowledgeVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Embeds the summary and (when present) the shift text independently, then
/// averages them with equal weight. Output dimension is whatever the
/// encoder produces.
pub fn encode_knowledge(
    encoder: &dyn EmbedClient,
    user_id: &str,
    knowledge: &InterestKnowledge,
) -> Result<KnowledgeVector> {
    if knowledge.summary.is_empty() {
        return Err(Error::Precondition("cannot encode an empty summary".into()));
    }
    let mut texts: Vec<&str> = vec![&knowledge.summary];
    if let Some(shift) = &knowledge.shift {
        texts.push(shift);
    }
    let vectors = encoder.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Protocol(format!(
            "encoder returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 {
        return Err(Error::Protocol("encoder returned a zero-length embedding".into()));
    }
    for v in &vectors {
        if v.len() != dim {
            return Err(Error::Protocol("encoder returned ragged embeddings".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Protocol("encoder returned non-finite values".into()));
        }
    }
    let n = vectors.len() as f64;
    let mut values = vec![0.0; dim];
    for v in &vectors {
        for (acc, x) in values.iter_mut().zip(v) {
            *acc += x / n;
        }
    }
    Ok(KnowledgeVector {
        user_id: user_id.to_string(),
        partition_index: knowledge.partition_index,
        values,
        stage: Stage::Raw,
    })
}

const PROJECTION_MAGIC: &[u8; 4] = b"LPCA";
const PROJECTION_VERSION: u32 = 1;

/// A fitted principal-component projection.
///
/// `components[k]` is the k-th principal direction (length `d_enc`); the
/// directions are orthonormal and ordered by explained variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
}

impl Projection {
    pub fn d_enc(&self) -> usize {
        self.mean.len()
    }

    pub fn d_red(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// componentsᵀ · (v − mean)
    pub fn project_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.d_enc() {
            return Err(Error::Dimension {
                what: "projection input",
                expected: self.d_enc(),
                got: values.len(),
            });
        }
        let centered: Vec<f64> = values.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn project(&self, v: &KnowledgeVector) -> Result<KnowledgeVector> {
        if v.stage != Stage::Raw {
            return Err(Error::Precondition("project expects a raw vector".into()));
        }
        Ok(KnowledgeVector {
            user_id: v.user_id.clone(),
            partition_index: v.partition_index,
            values: self.project_values(&v.values)?,
            stage: Stage::Reduced,
        })
    }

    /// mean + components · coords — the least-squares preimage of a
    /// reduced vector.
    pub fn reconstruct(&self, reduced: &[f64]) -> Result<Vec<f64>> {
        if reduced.len() != self.d_red() {
            return Err(Error::Dimension {
                what: "reconstruction input",
                expected: self.d_red(),
                got: reduced.len(),
            });
        }
        let mut out = self.mean.clone();
        for (coord, component) in reduced.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(component) {
                *o += coord * c;
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.put_magic(PROJECTION_MAGIC);
        w.put_u32(PROJECTION_VERSION);
        w.put_u32(self.d_enc() as u32);
        w.put_u32(self.d_red() as u32);
        w.put_f64_slice(&self.mean);
        for component in &self.components {
            w.put_f64_slice(component);
        }
        w.put_f64_slice(&self.explained_variance);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(PROJECTION_MAGIC, "projection")?;
        let version = r.read_u32("projection version")?;
        if version != PROJECTION_VERSION {
            return Err(Error::Format(format!("unsupported projection version {version}")));
        }
        let d_enc = r.read_u32("d_enc")? as usize;
        let d_red = r.read_u32("d_red")? as usize;
        if d_red > d_enc {
            return Err(Error::Format(format!("d_red {d_red} exceeds d_enc {d_enc}")));
        }
        let mean = r.read_f64_vec(d_enc, "projection mean")?;
        let mut components = Vec::with_capacity(d_red);
        for k in 0..d_red {
            components.push(r.read_f64_vec(d_enc, &format!("component {k}"))?);
        }
        let explained_variance = r.read_f64_vec(d_red, "explained variance")?;
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after projection payload",
                r.remaining()
            )));
        }
        let all = mean
            .iter()
            .chain(components.iter().flatten())
            .chain(explained_variance.iter());
        for v in all {
            if !v.is_finite() {
                return Err(Error::Format("projection holds non-finite values".into()));
            }
        }
        Ok(Projection {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Fits the projection on raw knowledge vectors: sample mean, then the top
/// `d_red` eigendirections of the sample covariance. Components are
/// sign-canonicalized (largest-magnitude entry made positive).
pub fn fit_projection(vectors: &[KnowledgeVector], d_red: usize) -> Result<Projection> {
    if d_red == 0 {
        return Err(Error::Dimension {
            what: "d_red",
            expected: 1,
            got: 0,
        });
    }
    if vectors.len() < d_red {
        return Err(Error::DegenerateInput(format!(
            "need at least {d_red} vectors to fit a {d_red}-component projection, got {}",
            vectors.len()
        )));
    }
    let d_enc = vectors[0].dim();
    if d_red > d_enc {
        return Err(Error::Dimension {
            what: "d_red",
            expected: d_enc,
            got: d_red,
        });
    }
    for v in vectors {
        if v.dim() != d_enc {
            return Err(Error::Dimension {
                what: "fit input vector",
                expected: d_enc,
                got: v.dim(),
            });
        }
    }

    let n = vectors.len();
    let mut mean = vec![0.0; d_enc];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // sample covariance (divisor n−1; degenerate n=1 handled by the max)
    let denom = (n.saturating_sub(1)).max(1) as f64;
    let mut cov = vec![vec![0.0; d_enc]; d_enc];
    for v in vectors {
        let centered: Vec<f64> = v.values.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d_enc {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d_enc {
                cov[i][j] += ci * centered[j];
            }
        }
    }
    for i in 0..d_enc {
        for j in i..d_enc {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }

    let (mut eigenvalues, mut eigenvectors) = jacobi_eigh(&cov);

    // order by eigenvalue, descending; stable for ties
    let mut order: Vec<usize> = (0..d_enc).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap().then(a.cmp(&b)));
    eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
    eigenvectors = order.iter().map(|&i| eigenvectors[i].clone()).collect();

    let mut components = Vec::with_capacity(d_red);
    let mut explained_variance = Vec::with_capacity(d_red);
    for k in 0..d_red {
        let mut component = eigenvectors[k].clone();
        canonicalize_sign(&mut component);
        components.push(component);
        // covariance is PSD; clamp Jacobi round-off
        explained_variance.push(eigenvalues[k].max(0.0));
    }

    Ok(Projection {
        mean,
        components,
        explained_variance,
    })
}

/// Flip the vector so its largest-magnitude entry (first such entry on
/// ties) is positive.
fn canonicalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors) with `eigenvectors[k]` the unit eigenvector
/// for `eigenvalues[k]` (unordered).
pub(crate) fn jacobi_eigh(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    if n <= 1 {
        return (a.iter().enumerate().map(|(i, r)| *r.get(i).unwrap_or(&0.0)).collect(), v);
    }

    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += a[i][j] * a[i][j];
                }
            }
            s.sqrt()
        };
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    // column k of v is the k-th eigenvector; return as row vectors
    let eigenvectors: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|i| v[i][k]).collect()).collect();
    (eigenvalues, eigenvectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::MockEmbedClient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw(values: Vec<f64>) -> KnowledgeVector {
        KnowledgeVector {
            user_id: "u".into(),
            partition_index: 1,
            values,
            stage: Stage::Raw,
        }
    }

    struct FixedEncoder {
        vectors: Vec<Vec<f64>>,
    }

    impl EmbedClient for FixedEncoder {
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
            Ok(self.vectors[..texts.len()].to_vec())
        }
        fn kind(&self) -> &'static str {
            "fixed"
        }
    }

    #[test]
    fn single_text_is_not_averaged() {
        let enc = FixedEncoder {
            vectors: vec![vec![1.0, 2.0, 3.0]],
        };
        let k = InterestKnowledge::new(1, "summary".into(), None).unwrap();
        let out = encode_knowledge(&enc, "u", &k).unwrap();
        assert_eq!(out.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(out.stage, Stage::Raw);
        assert_eq!(out.partition_index, 1);
    }

    #[test]
    fn two_texts_average_elementwise() {
        let enc = FixedEncoder {
            vectors: vec![vec![1.0, 2.0], vec![3.0, 6.0]],
        };
        let k = InterestKnowledge::new(2, "summary".into(), Some("shift".into())).unwrap();
        let out = encode_knowledge(&enc, "u", &k).unwrap();
        assert_eq!(out.values, vec![2.0, 4.0]);
    }

    #[test]
    fn bert_sized_encoder_gives_bert_sized_vector() {
        let enc = MockEmbedClient::new(768);
        let k = InterestKnowledge::new(1, "some knowledge text".into(), None).unwrap();
        let out = encode_knowledge(&enc, "u", &k).unwrap();
        assert_eq!(out.dim(), 768);
    }

    #[test]
    fn zero_length_embedding_is_protocol_error() {
        let enc = FixedEncoder {
            vectors: vec![vec![]],
        };
        let k = InterestKnowledge::new(1, "s".into(), None).unwrap();
        assert!(matches!(
            encode_knowledge(&enc, "u", &k).unwrap_err(),
            Error::Protocol(_)
        ));
    }

    #[test]
    fn encoding_is_deterministic_with_deterministic_client() {
        let enc = MockEmbedClient::new(32);
        let k = InterestKnowledge::new(2, "summary text".into(), Some("shift text".into())).unwrap();
        let a = encode_knowledge(&enc, "u", &k).unwrap();
        let b = encode_knowledge(&enc, "u", &k).unwrap();
        assert_eq!(a, b);
    }

    /// Independent oracle for the planted-subspace test: dense SVD of the
    /// centered data matrix (a different algorithm and library from the
    /// covariance+Jacobi route being checked).
    fn svd_oracle_reconstruction_error(data: &[Vec<f64>], rank: usize) -> f64 {
        let n = data.len();
        let d = data[0].len();
        let mut mean = vec![0.0; d];
        for row in data {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n as f64;
            }
        }
        let centered: Vec<f64> = data
            .iter()
            .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
            .collect();
        let m = nalgebra::DMatrix::from_row_slice(n, d, &centered);
        let svd = m.clone().svd(true, true);
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let mut approx = nalgebra::DMatrix::zeros(n, d);
        for k in 0..rank {
            let sigma = svd.singular_values[k];
            let uk = u.column(k);
            let vk = vt.row(k);
            for i in 0..n {
                for j in 0..d {
                    approx[(i, j)] += sigma * uk[i] * vk[j];
                }
            }
        }
        let diff = m - approx;
        let mut max_err: f64 = 0.0;
        for x in diff.iter() {
            max_err = max_err.max(x.abs());
        }
        max_err
    }

    fn planted_plane_data(n: usize, seed: u64) -> Vec<Vec<f64>> {
        // points in a 2-D affine subspace of R^5
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = [
            [1.0, 0.5, -0.25, 2.0, 0.0],
            [0.0, 1.0, 0.75, -0.5, 1.5],
        ];
        let offset = [3.0, -1.0, 0.5, 2.0, -2.0];
        (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-2.0..2.0);
                let b: f64 = rng.random_range(-2.0..2.0);
                (0..5)
                    .map(|j| offset[j] + a * basis[0][j] + b * basis[1][j])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn recovers_planted_two_dimensional_subspace() {
        let data = planted_plane_data(40, 7);
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let projection = fit_projection(&vectors, 2).unwrap();

        let mut max_err: f64 = 0.0;
        for v in &data {
            let reduced = projection.project_values(v).unwrap();
            let back = projection.reconstruct(&reduced).unwrap();
            for (x, y) in v.iter().zip(&back) {
                max_err = max_err.max((x - y).abs());
            }
        }
        assert!(max_err <= 1e-6, "reconstruction error {max_err}");

        let oracle_err = svd_oracle_reconstruction_error(&data, 2);
        assert!(oracle_err <= 1e-6, "oracle disagrees: {oracle_err}");
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vectors: Vec<KnowledgeVector> = (0..30)
            .map(|_| raw((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let p = fit_projection(&vectors, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = p.components()[i]
                    .iter()
                    .zip(&p.components()[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() <= 1e-6, "({i},{j}) dot {dot}");
            }
        }
    }

    #[test]
    fn full_rank_projection_is_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vectors: Vec<KnowledgeVector> = (0..40)
            .map(|_| raw((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let p = fit_projection(&vectors, 6).unwrap();
        for v in vectors.iter().take(10) {
            let reduced = p.project_values(&v.values).unwrap();
            let back = p.reconstruct(&reduced).unwrap();
            for (x, y) in v.values.iter().zip(&back) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn explained_variance_is_sorted_and_sums_to_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..7).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let p = fit_projection(&vectors, 7).unwrap();

        let ev = p.explained_variance();
        for w in ev.windows(2) {
            assert!(w[0] >= w[1] - 1e-12, "variance not sorted: {ev:?}");
        }

        // trace of the sample covariance, computed directly
        let n = data.len();
        let d = data[0].len();
        let mut mean = vec![0.0; d];
        for row in &data {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n as f64;
            }
        }
        let mut trace = 0.0;
        for j in 0..d {
            let mut s = 0.0;
            for row in &data {
                let c = row[j] - mean[j];
                s += c * c;
            }
            trace += s / (n - 1) as f64;
        }
        let sum: f64 = ev.iter().sum();
        assert!(
            ((sum - trace) / trace).abs() <= 1e-6,
            "eigenvalue sum {sum} vs trace {trace}"
        );
    }

    #[test]
    fn reconstruction_error_monotone_in_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let mse = |rank: usize| -> f64 {
            let p = fit_projection(&vectors, rank).unwrap();
            let mut total = 0.0;
            for v in &data {
                let back = p.reconstruct(&p.project_values(v).unwrap()).unwrap();
                total += v
                    .iter()
                    .zip(&back)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
            }
            total / data.len() as f64
        };
        let mut last = f64::INFINITY;
        for rank in 1..=6 {
            let e = mse(rank);
            assert!(e <= last + 1e-9, "rank {rank}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let vectors: Vec<KnowledgeVector> = vec![
            raw(vec![1.0, 0.0, 0.0]),
            raw(vec![0.0, 1.0, 0.0]),
            raw(vec![0.0, 0.0, 1.0]),
            raw(vec![1.0, 1.0, 1.0]),
        ];
        let p = fit_projection(&vectors, 2).unwrap();
        let reduced = p.project_values(p.mean()).unwrap();
        // exact: centering produces literal zeros before the dot products
        assert!(reduced.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn component_directions_have_unit_coordinates() {
        let data = planted_plane_data(30, 21);
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let p = fit_projection(&vectors, 2).unwrap();
        for k in 0..2 {
            let c = 1.75;
            let shifted: Vec<f64> = p
                .mean()
                .iter()
                .zip(&p.components()[k])
                .map(|(m, comp)| m + c * comp)
                .collect();
            let reduced = p.project_values(&shifted).unwrap();
            for (i, x) in reduced.iter().enumerate() {
                let expected = if i == k { c } else { 0.0 };
                assert!((x - expected).abs() <= 1e-6, "coordinate {i} = {x}");
            }
        }
    }

    #[test]
    fn projection_difference_is_linear_in_delta() {
        let data = planted_plane_data(30, 9);
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let p = fit_projection(&vectors, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = v.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let lhs: Vec<f64> = p
            .project_values(&shifted)
            .unwrap()
            .iter()
            .zip(p.project_values(&v).unwrap())
            .map(|(a, b)| a - b)
            .collect();
        let rhs: Vec<f64> = p
            .components()
            .iter()
            .map(|c| c.iter().zip(&delta).map(|(a, b)| a * b).sum())
            .collect();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn fit_rejects_bad_shapes() {
        let vectors: Vec<KnowledgeVector> = (0..3).map(|_| raw(vec![0.0; 4])).collect();
        assert!(matches!(
            fit_projection(&vectors, 5).unwrap_err(),
            Error::DegenerateInput(_)
        ));
        let vectors: Vec<KnowledgeVector> = (0..8).map(|_| raw(vec![0.0; 4])).collect();
        assert!(matches!(
            fit_projection(&vectors, 5).unwrap_err(),
            Error::Dimension { .. }
        ));
    }

    #[test]
    fn projection_file_round_trip() {
        let data = planted_plane_data(25, 31);
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let p = fit_projection(&vectors, 3).unwrap();
        let bytes = p.to_bytes();
        let q = Projection::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn projection_decode_rejects_corruption() {
        let data = planted_plane_data(25, 31);
        let vectors: Vec<KnowledgeVector> = data.iter().map(|v| raw(v.clone())).collect();
        let p = fit_projection(&vectors, 3).unwrap();
        let mut bytes = p.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Projection::from_bytes(&bytes).is_err());
        let mut bytes = p.to_bytes();
        bytes[0] = b'X';
        assert!(Projection::from_bytes(&bytes).is_err());
    }
}
