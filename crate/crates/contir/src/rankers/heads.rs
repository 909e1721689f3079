//! The scoring heads: DRMM, KNRM, Duet, pooled dot product, and max-sim
//! late interaction, all over a shared trainable embedding table.

use rand::RngExt;

use super::config::{HeadKind, KernelSpec, RankerConfig};
use super::pair::TokenizedPair;
use super::tfidf::TfidfStats;
use crate::autodiff::{ParameterSet, Tape, TapeParams, Tensor, Var};
use crate::data::{EmbeddingMatrix, PAD_ID};
use crate::error::{Error, Result};
use crate::seeding;

/// A configured ranker. Holds no trainable state itself; parameters live
/// in a [`ParameterSet`] so learning strategies can snapshot and anchor
/// them freely. The TF-IDF statistics (Duet local path) are refreshed at
/// task start and ride along here.
#[derive(Debug, Clone)]
pub struct Ranker {
    config: RankerConfig,
    tfidf: TfidfStats,
}

impl Ranker {
    pub fn new(config: RankerConfig) -> Result<Self> {
        config.validate()?;
        if config.head == HeadKind::Duet {
            let positions = config.doc_len - config.conv_window + 1;
            if positions < config.conv_channels {
                return Err(Error::Config(format!(
                    "duet needs doc_len - conv_window + 1 >= conv_channels \
                     ({positions} < {})",
                    config.conv_channels
                )));
            }
        }
        Ok(Ranker {
            config,
            tfidf: TfidfStats::empty(),
        })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    /// Install term statistics for the task about to be trained.
    pub fn set_tfidf(&mut self, stats: TfidfStats) {
        self.tfidf = stats;
    }

    /// Initial parameters: the embedding table plus head weights drawn
    /// uniformly in +-sqrt(6 / (fan_in + fan_out)), biases zero,
    /// deterministic per seed.
    pub fn init_params(&self, embedding: &EmbeddingMatrix, seed: u64) -> Result<ParameterSet> {
        if embedding.dim() != self.config.embedding_dim {
            return Err(Error::Config(format!(
                "embedding file dimension {} does not match configured {}",
                embedding.dim(),
                self.config.embedding_dim
            )));
        }
        let n = self.config.embedding_dim;
        let mut params = ParameterSet::new();
        params.insert("embedding", embedding.as_tensor().clone());
        let mut linear = |name: &str, fan_in: usize, fan_out: usize, shape: Vec<usize>| {
            params.insert(name, glorot(seed, name, fan_in, fan_out, shape));
            params.insert(format!("{name}_bias"), Tensor::zeros(&[fan_out]));
        };
        match self.config.head {
            HeadKind::Drmm => {
                let (b, h) = (self.config.hist_bins, self.config.drmm_hidden);
                linear("drmm.mlp1", b, h, vec![b, h]);
                linear("drmm.mlp2", h, 1, vec![h, 1]);
                linear("drmm.gate", n, 1, vec![n, 1]);
            }
            HeadKind::Knrm => {
                let k = self.config.kernels.len();
                linear("knrm.out", k, 1, vec![k, 1]);
            }
            HeadKind::Duet => {
                let (lq, ld) = (self.config.query_len, self.config.doc_len);
                let (c, w) = (self.config.conv_channels, self.config.conv_window);
                linear("duet.local", lq * ld, n, vec![lq * ld, n]);
                linear("duet.conv_q", w * n, n, vec![n, w, n]);
                linear("duet.conv_d", w * n, n, vec![n, w, n]);
                linear("duet.dist", c, 1, vec![c, 1]);
                linear("duet.out", n, 1, vec![n, 1]);
            }
            HeadKind::PooledDot | HeadKind::Maxsim => {}
        }
        Ok(params)
    }

    /// Re-zero frozen rows after an optimizer step: the pad embedding row
    /// must stay exactly zero.
    pub fn enforce_frozen_rows(params: &mut ParameterSet) {
        if let Some(table) = params.get_mut("embedding") {
            let cols = table.shape()[1];
            table.data_mut()[PAD_ID * cols..(PAD_ID + 1) * cols].fill(0.0);
        }
    }

    /// Score one pair on the given tape, returning a scalar variable.
    pub fn score_pair(&self, tape: &Tape, params: &TapeParams, pair: &TokenizedPair) -> Var {
        let cfg = &self.config;
        assert_eq!(pair.query_ids.len(), cfg.query_len, "query length mismatch");
        assert_eq!(pair.doc_ids.len(), cfg.doc_len, "doc length mismatch");
        let n = cfg.embedding_dim;
        let table = params.var("embedding");
        let e_q = table.lookup(&pair.query_ids);
        let e_d = table.lookup(&pair.doc_ids);
        let q_mask_mat = tape.constant(mask_matrix(&pair.query_mask, n));
        let d_mask_mat = tape.constant(mask_matrix(&pair.doc_mask, n));
        let e_qm = e_q.mul(&q_mask_mat);
        let e_dm = e_d.mul(&d_mask_mat);
        let q_mask_vec = tape.constant(Tensor::from_vec(pair.query_mask.clone()));

        match cfg.head {
            HeadKind::Drmm => {
                // Dividing the representations by their matrix norm scales
                // every row equally and cancels in the row-wise cosine, so
                // the cosine matrix is taken over the masked embeddings
                // directly. The histogram is piecewise constant and enters
                // as a stop-gradient constant.
                let m_cos = e_qm.cosine_matrix(&e_dm);
                let hist = tape.constant(matching_histogram(
                    &m_cos.value(),
                    &pair.doc_mask,
                    cfg.hist_bins,
                ));
                let h1 = hist
                    .matmul(params.var("drmm.mlp1"))
                    .add(params.var("drmm.mlp1_bias"))
                    .tanh();
                let m_rel = h1
                    .matmul(params.var("drmm.mlp2"))
                    .add(params.var("drmm.mlp2_bias"))
                    .tanh()
                    .reshape(&[cfg.query_len]);
                // Gate consumes the raw query embeddings.
                let m_gate = e_q
                    .matmul(params.var("drmm.gate"))
                    .add(params.var("drmm.gate_bias"))
                    .tanh()
                    .reshape(&[cfg.query_len]);
                m_rel.mul(&m_gate).mul(&q_mask_vec).sum_all()
            }
            HeadKind::Knrm => {
                let m_inter = e_qm.l2_normalize().matmul(&e_dm.l2_normalize().transpose());
                let pooled = kernel_pooling(
                    tape,
                    &m_inter,
                    &pair.query_mask,
                    &pair.doc_mask,
                    &cfg.kernels,
                    cfg.kernel_log,
                );
                pooled
                    .reshape(&[1, cfg.kernels.len()])
                    .matmul(params.var("knrm.out"))
                    .add(params.var("knrm.out_bias"))
                    .reshape(&[])
                    .sigmoid()
            }
            HeadKind::Duet => {
                let local = tape.constant(local_match_matrix(pair, &self.tfidf));
                let local_vec = local
                    .reshape(&[1, cfg.query_len * cfg.doc_len])
                    .matmul(params.var("duet.local"))
                    .add(params.var("duet.local_bias"));
                let local_score = local_vec
                    .matmul(params.var("duet.out"))
                    .add(params.var("duet.out_bias"))
                    .reshape(&[]);

                let m_q = e_qm
                    .conv1d(params.var("duet.conv_q"), params.var("duet.conv_q_bias"))
                    .max_axis(0);
                let conv_d = e_dm
                    .conv1d(params.var("duet.conv_d"), params.var("duet.conv_d_bias"));
                let m_d = segmented_max(tape, &conv_d, cfg.conv_channels).transpose();
                let dist_score = m_q
                    .reshape(&[1, n])
                    .matmul(&m_d)
                    .matmul(params.var("duet.dist"))
                    .add(params.var("duet.dist_bias"))
                    .reshape(&[]);
                dist_score.add(&local_score)
            }
            HeadKind::PooledDot => {
                let b_q = e_qm
                    .sum_axis(0)
                    .mul_scalar(1.0 / pair.query_real_count() as f64);
                let b_d = e_dm
                    .sum_axis(0)
                    .mul_scalar(1.0 / pair.doc_real_count() as f64);
                b_q.mul(&b_d).sum_all()
            }
            HeadKind::Maxsim => {
                let m_inter = e_qm.l2_normalize().matmul(&e_dm.l2_normalize().transpose());
                // Cosines live in [-1, 1]; -2 can never win the max, so
                // padded doc positions are inert.
                let doc_cols = tile_rows(&pair.doc_mask, cfg.query_len);
                let m_q = m_inter.masked_fill(&doc_cols, -2.0).max_axis(1);
                m_q.mul(&q_mask_vec).sum_all()
            }
        }
    }

    /// Score a batch of pairs with frozen parameters. One finite score per
    /// pair, in order.
    pub fn score_batch(&self, pairs: &[TokenizedPair], params: &ParameterSet) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let attached = params.attach(&tape);
        pairs
            .iter()
            .enumerate()
            .map(|(i, pair)| {
                self.score_pair(&tape, &attached, pair)
                    .scalar_value()
                    .map_err(|_| Error::NonFinite(format!("score of pair {i}")))
            })
            .collect()
    }
}

/// Log-count matching histogram (DRMM). Bin `j` of row `i` counts unmasked
/// doc positions whose cosine with query term `i` falls in
/// `[-1 + 2j/b, -1 + 2(j+1)/b)`, the last bin right-closed; the output is
/// `ln(1 + count)`. Inputs are clamped to `[-1, 1]`.
pub fn matching_histogram(cosines: &Tensor, doc_mask: &[f64], bins: usize) -> Tensor {
    assert!(bins >= 2, "need at least two bins");
    let shape = cosines.shape();
    assert_eq!(shape.len(), 2, "histogram input must be a matrix");
    let (rows, cols) = (shape[0], shape[1]);
    assert_eq!(cols, doc_mask.len(), "doc mask length mismatch");
    let mut out = vec![0.0; rows * bins];
    for i in 0..rows {
        for j in 0..cols {
            if doc_mask[j] == 0.0 {
                continue;
            }
            let v = cosines.data()[i * cols + j].clamp(-1.0, 1.0);
            let bin = (((v + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
            out[i * bins + bin] += 1.0;
        }
    }
    for v in &mut out {
        *v = f64::ln(1.0 + *v);
    }
    Tensor::matrix(rows, bins, out)
}

/// KNRM kernel pooling. For kernel j, sums `m_d * exp(-(M - mu_j)^2 /
/// (2 sigma_j^2))` over doc positions, optionally applies `ln(1 + x)`,
/// masks and sums over query positions, and returns the length-k vector.
pub fn kernel_pooling(
    tape: &Tape,
    interaction: &Var,
    query_mask: &[f64],
    doc_mask: &[f64],
    kernels: &[KernelSpec],
    log_pool: bool,
) -> Var {
    let d_mask = tape.constant(Tensor::from_vec(doc_mask.to_vec()));
    let q_mask = tape.constant(Tensor::from_vec(query_mask.to_vec()));
    let per_kernel: Vec<Var> = kernels
        .iter()
        .map(|k| {
            let diff = interaction.add_scalar(-k.mu);
            let scaled = diff.mul(&diff).mul_scalar(-1.0 / (2.0 * k.sigma * k.sigma));
            let pooled_docs = scaled.exp().mul(&d_mask).sum_axis(1);
            let activated = if log_pool {
                pooled_docs.log1p()
            } else {
                pooled_docs
            };
            activated.mul(&q_mask).sum_axis(0).reshape(&[1])
        })
        .collect();
    let refs: Vec<&Var> = per_kernel.iter().collect();
    tape.concat(&refs, 0)
}

/// Duet local path: entry `(i, j)` carries the TF-IDF weight of the query
/// term when it lexically equals the doc term, both unmasked; 0 otherwise.
fn local_match_matrix(pair: &TokenizedPair, tfidf: &TfidfStats) -> Tensor {
    let (lq, ld) = (pair.query_ids.len(), pair.doc_ids.len());
    let doc_real: Vec<usize> = pair
        .doc_ids
        .iter()
        .zip(&pair.doc_mask)
        .filter(|(_, &m)| m == 1.0)
        .map(|(&t, _)| t)
        .collect();
    let mut out = vec![0.0; lq * ld];
    for i in 0..lq {
        if pair.query_mask[i] == 0.0 {
            continue;
        }
        for j in 0..ld {
            if pair.doc_mask[j] == 0.0 || pair.query_ids[i] != pair.doc_ids[j] {
                continue;
            }
            out[i * ld + j] = tfidf.weight(pair.query_ids[i], &doc_real);
        }
    }
    Tensor::matrix(lq, ld, out)
}

/// Max-pool conv outputs `[positions, channels]` into `segments` roughly
/// equal contiguous position ranges, yielding `[segments, channels]`.
fn segmented_max(tape: &Tape, conv_out: &Var, segments: usize) -> Var {
    let positions = conv_out.shape()[0];
    let channels = conv_out.shape()[1];
    assert!(positions >= segments, "fewer conv positions than segments");
    let mut parts = Vec::with_capacity(segments);
    for s in 0..segments {
        let start = s * positions / segments;
        let end = (s + 1) * positions / segments;
        let mut mask = vec![0.0; positions * channels];
        mask[start * channels..end * channels].fill(1.0);
        let segment = conv_out
            .masked_fill(&Tensor::matrix(positions, channels, mask), -1e9)
            .max_axis(0)
            .reshape(&[1, channels]);
        parts.push(segment);
    }
    let refs: Vec<&Var> = parts.iter().collect();
    tape.concat(&refs, 0)
}

/// `[len, cols]` matrix whose row `i` is `mask[i]` repeated.
fn mask_matrix(mask: &[f64], cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(mask.len() * cols);
    for &m in mask {
        data.extend(std::iter::repeat_n(m, cols));
    }
    Tensor::matrix(mask.len(), cols, data)
}

/// `[rows, len]` matrix whose every row is `mask`.
fn tile_rows(mask: &[f64], rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * mask.len());
    for _ in 0..rows {
        data.extend_from_slice(mask);
    }
    Tensor::matrix(rows, mask.len(), data)
}

fn glorot(seed: u64, name: &str, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seeding::stream(seed, name, 0);
    let n: usize = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )
}
