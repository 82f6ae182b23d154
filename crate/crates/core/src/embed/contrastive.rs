//! Symmetric contrastive (CLIP-style) loss over paired binary/source
//! embeddings, and a small linear projection trained against it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cosine, hashed_features, Embedding};
use crate::error::{Error, Result};

/// N paired embeddings; row i of `bin` is the positive for row i of `src`.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    bin: &'a [Embedding],
    src: &'a [Embedding],
    tau: f64,
}

impl<'a> LossBatch<'a> {
    pub fn new(bin: &'a [Embedding], src: &'a [Embedding], tau: f64) -> Result<Self> {
        if bin.len() != src.len() {
            return Err(Error::invalid(format!(
                "batch sides differ in length: {} binary vs {} source",
                bin.len(),
                src.len()
            )));
        }
        if bin.len() < 2 {
            return Err(Error::BatchTooSmall(bin.len()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        let dim = bin[0].dim();
        for (i, e) in bin.iter().chain(src).enumerate() {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    id: format!("batch[{i}]"),
                    expected: dim,
                    found: e.dim(),
                });
            }
            if !e.is_retrievable() {
                return Err(Error::invalid(format!("batch[{i}] is the empty-function sentinel")));
            }
        }
        Ok(LossBatch { bin, src, tau })
    }

    pub fn len(&self) -> usize {
        self.bin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipLoss {
    pub loss: f64,
    pub l_bin: f64,
    pub l_src: f64,
}

impl ClipLoss {
    fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.l_bin.is_finite() && self.l_src.is_finite()
    }
}

fn similarity_matrix(rows: &[&[f64]], cols: &[&[f64]]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| cols.iter().map(|c| cosine(r, c)).collect())
        .collect()
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..m[0].len()).map(|j| m.iter().map(|row| row[j]).collect()).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of each row of `sim / tau` against its diagonal entry.
fn diagonal_cross_entropy(sim: &[Vec<f64>], tau: f64) -> f64 {
    let n = sim.len() as f64;
    sim.iter()
        .enumerate()
        .map(|(i, row)| {
            let logits: Vec<f64> = row.iter().map(|s| s / tau).collect();
            log_sum_exp(&logits) - logits[i]
        })
        .sum::<f64>()
        / n
}

fn loss_from_similarity(sim: &[Vec<f64>], tau: f64) -> ClipLoss {
    let l_bin = diagonal_cross_entropy(sim, tau);
    let l_src = diagonal_cross_entropy(&transpose(sim), tau);
    ClipLoss {
        loss: (l_bin + l_src) / 2.0,
        l_bin,
        l_src,
    }
}

/// Binary-to-source and source-to-binary cross-entropy over the N x N
/// cosine matrix scaled by `1/tau`, and their mean.
pub fn clip_symmetric_loss(batch: &LossBatch<'_>) -> ClipLoss {
    let bin: Vec<&[f64]> = batch.bin.iter().map(Embedding::as_slice).collect();
    let src: Vec<&[f64]> = batch.src.iter().map(Embedding::as_slice).collect();
    loss_from_similarity(&similarity_matrix(&bin, &src), batch.tau)
}

/// Loss plus its gradient with respect to every similarity entry and to
/// `ln tau`.
fn loss_and_similarity_grad(sim: &[Vec<f64>], tau: f64) -> (ClipLoss, Vec<Vec<f64>>, f64) {
    let n = sim.len();
    let loss = loss_from_similarity(sim, tau);

    let softmax = |xs: Vec<f64>| {
        let lse = log_sum_exp(&xs);
        xs.into_iter().map(|x| (x - lse).exp()).collect::<Vec<_>>()
    };
    let row_p: Vec<Vec<f64>> = sim
        .iter()
        .map(|row| softmax(row.iter().map(|s| s / tau).collect()))
        .collect();
    let col_p: Vec<Vec<f64>> = (0..n)
        .map(|j| softmax(sim.iter().map(|row| row[j] / tau).collect()))
        .collect();

    // d loss / d logit_ij = (P_ij + Q_ij - 2 [i == j]) / 2N
    let mut grad_sim = vec![vec![0.0; n]; n];
    let mut grad_log_tau = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 2.0 } else { 0.0 };
            let g_logit = (row_p[i][j] + col_p[j][i] - target) / (2.0 * n as f64);
            grad_sim[i][j] = g_logit / tau;
            grad_log_tau -= g_logit * sim[i][j] / tau;
        }
    }
    (loss, grad_sim, grad_log_tau)
}

/// A learned linear map from hashed features to a shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    in_dim: usize,
    out_dim: usize,
    /// Row-major, `out_dim` rows of `in_dim`.
    weights: Vec<f64>,
    log_tau: f64,
}

impl Projection {
    pub fn random(in_dim: usize, out_dim: usize, tau: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Projection {
            in_dim,
            out_dim,
            weights,
            log_tau: tau.ln(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    pub fn set_weight(&mut self, row: usize, col: usize, value: f64) {
        self.weights[row * self.in_dim + col] = value;
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.in_dim)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Input features for a token stream: the normalized hashed vector.
    pub fn features(&self, tokens: &[String]) -> Vec<f64> {
        Embedding::from_vec(hashed_features(tokens, self.in_dim)).vec
    }

    pub fn project(&self, features: &[f64]) -> Embedding {
        Embedding::from_vec(self.apply(features))
    }

    pub fn embed(&self, tokens: &[String]) -> Embedding {
        self.project(&self.features(tokens))
    }

    /// Loss of the projected batch, evaluated through [`clip_symmetric_loss`].
    pub fn batch_loss(&self, bin: &[Vec<f64>], src: &[Vec<f64>]) -> Result<ClipLoss> {
        let b: Vec<Embedding> = bin.iter().map(|x| self.project(x)).collect();
        let s: Vec<Embedding> = src.iter().map(|x| self.project(x)).collect();
        Ok(clip_symmetric_loss(&LossBatch::new(&b, &s, self.tau())?))
    }

    /// Analytic gradient of the batch loss with respect to every weight
    /// (row-major, same layout as the weights) and to `ln tau`.
    pub fn loss_gradient(&self, bin: &[Vec<f64>], src: &[Vec<f64>]) -> Result<(ClipLoss, Vec<f64>, f64)> {
        if bin.len() != src.len() {
            return Err(Error::invalid("batch sides differ in length"));
        }
        if bin.len() < 2 {
            return Err(Error::BatchTooSmall(bin.len()));
        }
        let tau = self.tau();
        let z_bin: Vec<Vec<f64>> = bin.iter().map(|x| self.apply(x)).collect();
        let z_src: Vec<Vec<f64>> = src.iter().map(|x| self.apply(x)).collect();
        let unit = |z: &Vec<f64>| Embedding::from_vec(z.clone()).vec;
        let e_bin: Vec<Vec<f64>> = z_bin.iter().map(unit).collect();
        let e_src: Vec<Vec<f64>> = z_src.iter().map(unit).collect();

        let rows: Vec<&[f64]> = e_bin.iter().map(Vec::as_slice).collect();
        let cols: Vec<&[f64]> = e_src.iter().map(Vec::as_slice).collect();
        let sim = similarity_matrix(&rows, &cols);
        let (loss, grad_sim, grad_log_tau) = loss_and_similarity_grad(&sim, tau);

        let n = bin.len();
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut accumulate = |x: &[f64], z: &[f64], e: &[f64], grad_e: Vec<f64>| {
            let norm = super::l2_norm(z);
            if norm == 0.0 {
                return;
            }
            // through e = z / |z|
            let along = super::dot(e, &grad_e);
            for r in 0..self.out_dim {
                let gz = (grad_e[r] - e[r] * along) / norm;
                if gz == 0.0 {
                    continue;
                }
                let row = &mut grad_w[r * self.in_dim..(r + 1) * self.in_dim];
                row.iter_mut().zip(x).for_each(|(g, v)| *g += gz * v);
            }
        };
        for i in 0..n {
            let mut grad_e = vec![0.0; self.out_dim];
            for j in 0..n {
                grad_e.iter_mut().zip(&e_src[j]).for_each(|(g, s)| *g += grad_sim[i][j] * s);
            }
            accumulate(&bin[i], &z_bin[i], &e_bin[i], grad_e);
        }
        for j in 0..n {
            let mut grad_e = vec![0.0; self.out_dim];
            for i in 0..n {
                grad_e.iter_mut().zip(&e_bin[i]).for_each(|(g, b)| *g += grad_sim[i][j] * b);
            }
            accumulate(&src[j], &z_src[j], &e_src[j], grad_e);
        }
        Ok((loss, grad_w, grad_log_tau))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub initial_tau: f64,
    pub learn_tau: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            in_dim: 128,
            out_dim: 32,
            epochs: 50,
            lr: 0.5,
            initial_tau: 0.5,
            learn_tau: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTraining {
    pub projection: Projection,
    pub initial: ClipLoss,
    pub last: ClipLoss,
    /// Loss before each update, then the final loss.
    pub history: Vec<f64>,
}

pub const MIN_TRAINING_PAIRS: usize = 8;

/// Full-batch gradient descent on the contrastive loss of a shared linear
/// projection.
pub fn train_toy_projection(pairs: &[(Vec<String>, Vec<String>)], config: &TrainConfig) -> Result<ToyTraining> {
    if pairs.len() < MIN_TRAINING_PAIRS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRAINING_PAIRS} training pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(b, s)| b.is_empty() || s.is_empty()) {
        return Err(Error::invalid("training pair with an empty token stream"));
    }
    let mut projection = Projection::random(config.in_dim, config.out_dim, config.initial_tau, config.seed);
    let bin: Vec<Vec<f64>> = pairs.iter().map(|(b, _)| projection.features(b)).collect();
    let src: Vec<Vec<f64>> = pairs.iter().map(|(_, s)| projection.features(s)).collect();

    let initial = projection.batch_loss(&bin, &src)?;
    let mut history = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grad_w, grad_log_tau) = projection.loss_gradient(&bin, &src)?;
        if !loss.is_finite() || grad_w.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss.loss);
        projection
            .weights
            .iter_mut()
            .zip(&grad_w)
            .for_each(|(w, g)| *w -= config.lr * g);
        if config.learn_tau {
            projection.log_tau = (projection.log_tau - config.lr * grad_log_tau).clamp(-5.0, 5.0);
        }
    }
    let last = projection.batch_loss(&bin, &src)?;
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: config.epochs });
    }
    history.push(last.loss);
    Ok(ToyTraining {
        projection,
        initial,
        last,
        history,
    })
}
