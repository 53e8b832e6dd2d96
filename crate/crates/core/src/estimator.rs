//! Streaming directed-influence estimation.
//!
//! For each feasible edge-channel triplet we maintain a rank-normalized
//! exponentially smoothed covariance over the concatenated
//! (source, target, history) vectors and score each turn with a
//! Gaussian-copula approximation of the conditional mutual information
//! I(U; V | H). Conditioning uses the target history *before* the current
//! turn, so the current target observation never leaks into its own
//! conditioning context. Scores are clipped at zero and folded into a
//! cumulative nonnegative influence tensor with geometric decay.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureVector;
use crate::error::{ConfigError, EstimatorError};
use crate::mat::{cholesky_logdet, Matrix};
use crate::topology::{Channel, SystemTopology, NUM_CHANNELS};
use crate::trace::TurnBatch;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// History EMA weight, channel-agnostic.
    pub alpha: f64,
    /// Covariance forgetting rate; 0 keeps a cumulative running covariance.
    pub beta: f64,
    /// Linear shrinkage intensity toward the identity.
    pub shrink: f64,
    /// Diagonal jitter added after shrinkage.
    pub jitter: f64,
    /// Per-turn decay of tensor entries.
    pub tensor_decay: f64,
    /// Observations required on an edge-channel state before scoring.
    pub warmup: u64,
    pub epsilon: f64,
    /// Fisher-z gate on off-diagonal correlations: an entry is kept only
    /// when |atanh(r)|·sqrt(n_eff − 3) clears this value. Part of the
    /// shrinkage stage; 0 disables. The threshold decays with the
    /// effective sample count, so long stationary streams are unaffected.
    pub gate_z: f64,
    /// Below this raw observation count every off-diagonal entry shrinks
    /// fully to independence: a handful of discrete observations produces
    /// exact spurious correlations that no z-test can reject, and the
    /// warmup window of rank-normalized monotone dimensions has not yet
    /// flattened out.
    pub gate_min_obs: f64,
    /// Liveness floor on rank-normalized dimensions: a genuinely varying
    /// dimension has near-unit variance after rank normalization, so a
    /// dimension whose smoothed variance sits below this floor is
    /// numerically constant and its correlations are dropped. 0 disables.
    pub var_floor: f64,
    /// Rank-sketch reservoir size per dimension.
    pub reservoir: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            alpha: 0.3,
            beta: 0.05,
            shrink: 0.1,
            jitter: 1e-6,
            tensor_decay: 0.2,
            warmup: 8,
            epsilon: 1e-8,
            gate_z: 5.0,
            gate_min_obs: 40.0,
            var_floor: 0.2,
            reservoir: 256,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            (self.alpha > 0.0 && self.alpha <= 1.0, "alpha must be in (0, 1]"),
            (self.beta >= 0.0 && self.beta < 1.0, "beta must be in [0, 1)"),
            (self.shrink >= 0.0 && self.shrink < 1.0, "shrink must be in [0, 1)"),
            (self.jitter > 0.0, "jitter must be positive"),
            (
                self.tensor_decay > 0.0 && self.tensor_decay < 1.0,
                "tensor_decay must be in (0, 1)",
            ),
            (self.warmup >= 1, "warmup must be at least 1"),
            (self.epsilon > 0.0, "epsilon must be positive"),
            (self.gate_z >= 0.0, "gate_z must be non-negative"),
            (self.gate_min_obs >= 0.0, "gate_min_obs must be non-negative"),
            (
                self.var_floor >= 0.0 && self.var_floor < 1.0,
                "var_floor must be in [0, 1)",
            ),
            (self.reservoir >= 16, "reservoir must be at least 16"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(ConfigError::Invalid(format!("estimator.{msg}")));
            }
        }
        Ok(())
    }
}

/// History EMA: `h <- (1 - alpha) h + alpha v_bar`. Callers skip the call
/// entirely for agent-channel pairs with no event this turn, which leaves
/// the history unchanged.
pub fn update_history(prev: &FeatureVector, v_bar: &FeatureVector, alpha: f64) -> FeatureVector {
    let mut out = prev.clone();
    for (h, &v) in out.0.iter_mut().zip(v_bar.0.iter()) {
        *h = (1.0 - alpha) * *h + alpha * v;
    }
    out
}

/// Fixed-size reservoir holding a recency-weighted sample of past values;
/// once full, each insert overwrites a uniformly random slot.
#[derive(Debug, Clone)]
struct ReservoirSketch {
    cap: usize,
    samples: Vec<f64>,
    all_same: bool,
}

impl ReservoirSketch {
    fn new(cap: usize) -> Self {
        ReservoirSketch {
            cap,
            samples: Vec::with_capacity(cap),
            all_same: true,
        }
    }

    fn observe(&mut self, x: f64, rng: &mut ChaCha8Rng) {
        if self.all_same && !self.samples.is_empty() && self.samples[0] != x {
            self.all_same = false;
        }
        if self.samples.len() < self.cap {
            self.samples.push(x);
        } else {
            let slot = rng.gen_range(0..self.cap);
            self.samples[slot] = x;
        }
    }

    /// Mid-rank of `x` among the stored samples, mapped through the
    /// standard-normal quantile. Ties collapse to the same score, so an
    /// exactly constant stream normalizes to zero.
    fn rank_normalize(&self, x: f64) -> f64 {
        let n = self.samples.len();
        debug_assert!(n > 0);
        if self.all_same {
            // Constant stream so far: mid-rank 0.5, score 0.
            return 0.0;
        }
        let mut less = 0usize;
        let mut equal = 0usize;
        for &s in &self.samples {
            if s < x {
                less += 1;
            } else if s == x {
                equal += 1;
            }
        }
        let rank = (less as f64 + 0.5 * equal as f64) / n as f64;
        probit(rank)
    }
}

/// Streaming state for one edge-channel pair: rank sketches plus an
/// exponentially smoothed mean/covariance over the 3d concatenation.
#[derive(Debug, Clone)]
pub struct EdgeChannelState {
    dim3: usize,
    count: u64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    sketches: Vec<ReservoirSketch>,
    rng: ChaCha8Rng,
    degenerate: u64,
}

impl EdgeChannelState {
    pub fn new(feature_dim: usize, reservoir: usize, seed: u64) -> Self {
        let dim3 = 3 * feature_dim;
        EdgeChannelState {
            dim3,
            count: 0,
            mean: vec![0.0; dim3],
            cov: vec![0.0; dim3 * dim3],
            sketches: vec![ReservoirSketch::new(reservoir); dim3],
            rng: ChaCha8Rng::seed_from_u64(seed),
            degenerate: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn degenerate_count(&self) -> u64 {
        self.degenerate
    }

    fn effective_samples(&self, beta: f64) -> f64 {
        let n = self.count as f64;
        if beta > 0.0 {
            n.min((2.0 - beta) / beta)
        } else {
            n
        }
    }

    /// Ingest one observation and return the influence score in nats.
    pub fn observe_and_score(
        &mut self,
        u: &FeatureVector,
        v: &FeatureVector,
        h_prev: &FeatureVector,
        cfg: &EstimatorConfig,
    ) -> Result<f64, EstimatorError> {
        let d = self.dim3 / 3;
        debug_assert_eq!(u.dim(), d);
        debug_assert_eq!(v.dim(), d);
        debug_assert_eq!(h_prev.dim(), d);
        if !(u.is_finite() && v.is_finite() && h_prev.is_finite()) {
            return Err(EstimatorError::NonFiniteInput {
                src: 0,
                tgt: 0,
                channel: "",
            });
        }

        // Rank-normalize each dimension against its updated sketch.
        let mut z = vec![0.0f64; self.dim3];
        for (k, value) in u
            .0
            .iter()
            .chain(v.0.iter())
            .chain(h_prev.0.iter())
            .enumerate()
        {
            self.sketches[k].observe(*value, &mut self.rng);
            z[k] = self.sketches[k].rank_normalize(*value);
        }

        // Smoothed mean and central covariance.
        self.count += 1;
        let w = if cfg.beta > 0.0 {
            cfg.beta.max(1.0 / self.count as f64)
        } else {
            1.0 / self.count as f64
        };
        let n = self.dim3;
        let mut delta = vec![0.0f64; n];
        for k in 0..n {
            delta[k] = z[k] - self.mean[k];
            self.mean[k] += w * delta[k];
        }
        for i in 0..n {
            let wi = w * delta[i];
            let row = i * n;
            for j in 0..n {
                self.cov[row + j] = (1.0 - w) * (self.cov[row + j] + wi * delta[j]);
            }
        }

        if self.count < cfg.warmup {
            return Ok(0.0);
        }

        let n_eff = self.effective_samples(cfg.beta);
        if (cfg.gate_z > 0.0 || cfg.var_floor > 0.0) && (self.count as f64) < cfg.gate_min_obs {
            // Too few raw observations for any correlation to be
            // trustworthy: full shrinkage to independence, score 0.
            return Ok(0.0);
        }
        let mut sigma = self.cov.clone();

        // Gate off-diagonal correlations that a Fisher z-test cannot
        // distinguish from zero at the current effective sample count,
        // and drop correlations of numerically constant dimensions.
        if cfg.gate_z > 0.0 || cfg.var_floor > 0.0 {
            let dof = (n_eff - 3.0).max(1.0).sqrt();
            let live: Vec<bool> = (0..n)
                .map(|i| sigma[i * n + i] >= cfg.var_floor && sigma[i * n + i] > 1e-300)
                .collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    let keep = if live[i] && live[j] {
                        if cfg.gate_z > 0.0 {
                            let vi = sigma[i * n + i];
                            let vj = sigma[j * n + j];
                            let r = (sigma[i * n + j] / (vi * vj).sqrt())
                                .clamp(-0.999_999, 0.999_999);
                            r.abs().atanh() * dof >= cfg.gate_z
                        } else {
                            true
                        }
                    } else {
                        false
                    };
                    if !keep {
                        sigma[i * n + j] = 0.0;
                        sigma[j * n + i] = 0.0;
                    } else if std::env::var_os("MAS_SENTINEL_DEBUG_PAIRS").is_some() {
                        eprintln!(
                            "pair ({i},{j}) r={:.4} vi={:.4} vj={:.4} n_eff={n_eff:.1}",
                            sigma[i * n + j] / (sigma[i * n + i] * sigma[j * n + j]).sqrt(),
                            sigma[i * n + i],
                            sigma[j * n + j]
                        );
                    }
                }
            }
            // With every source-side cross correlation gated away the
            // conditional MI is exactly zero; skip the factorizations.
            let mut any_source_cross = false;
            'outer: for i in 0..d {
                for j in d..n {
                    if sigma[i * n + j] != 0.0 {
                        any_source_cross = true;
                        break 'outer;
                    }
                }
            }
            if !any_source_cross {
                return Ok(0.0);
            }
        }

        // Shrink toward the identity, then jitter the diagonal.
        for x in &mut sigma {
            *x *= 1.0 - cfg.shrink;
        }
        for i in 0..n {
            sigma[i * n + i] += cfg.shrink + cfg.jitter;
        }

        let uh: Vec<usize> = (0..d).chain(2 * d..3 * d).collect();
        let vh: Vec<usize> = (d..3 * d).collect();
        let h: Vec<usize> = (2 * d..3 * d).collect();
        let all: Vec<usize> = (0..n).collect();
        let lds = [
            block_logdet(&sigma, n, &uh),
            block_logdet(&sigma, n, &vh),
            block_logdet(&sigma, n, &all),
            block_logdet(&sigma, n, &h),
        ];
        match lds {
            [Some(ld_uh), Some(ld_vh), Some(ld_uvh), Some(ld_h)] => {
                let cmi = 0.5 * (ld_uh + ld_vh - ld_uvh - ld_h);
                if cmi.is_finite() {
                    Ok(cmi.max(0.0))
                } else {
                    self.degenerate += 1;
                    Ok(0.0)
                }
            }
            _ => {
                self.degenerate += 1;
                Ok(0.0)
            }
        }
    }
}

fn block_logdet(sigma: &[f64], n: usize, idx: &[usize]) -> Option<f64> {
    let k = idx.len();
    let mut block = Matrix::zeros(k, k);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            block.set(a, b, sigma[i * n + j]);
        }
    }
    cholesky_logdet(&block)
}

/// Acklam's rational approximation of the standard-normal quantile.
fn probit(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Cumulative nonnegative influence tensor over (src, tgt, channel).
#[derive(Debug, Clone)]
pub struct InfluenceTensor {
    n: usize,
    values: Vec<f64>,
    epsilon: f64,
}

/// Degree-normalized views of the tensor for one turn.
#[derive(Debug, Clone)]
pub struct NormalizedInfluence {
    /// Channel sum, unnormalized.
    pub raw: Matrix,
    /// Degree-normalized channel sum.
    pub unified: Matrix,
    /// Each channel slice degree-normalized independently.
    pub channels: [Matrix; NUM_CHANNELS],
    /// Unnormalized channel slices; degree normalization is scale-free,
    /// so absolute channel comparisons need these.
    pub raw_channels: [Matrix; NUM_CHANNELS],
    pub row_strengths: Vec<f64>,
    pub col_strengths: Vec<f64>,
}

impl InfluenceTensor {
    pub fn new(agent_count: usize, epsilon: f64) -> Self {
        InfluenceTensor {
            n: agent_count,
            values: vec![0.0; agent_count * agent_count * NUM_CHANNELS],
            epsilon,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, c: Channel) -> usize {
        (i * self.n + j) * NUM_CHANNELS + c.index()
    }

    pub fn get(&self, i: usize, j: usize, c: Channel) -> f64 {
        self.values[self.idx(i, j, c)]
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    /// Apply one turn of scores: scored triplets relax toward the score,
    /// unscored feasible triplets decay, infeasible entries stay zero.
    pub fn update(
        &mut self,
        scores: &BTreeMap<(usize, usize, Channel), f64>,
        decay: f64,
        topo: &SystemTopology,
    ) -> Result<(), EstimatorError> {
        for (&(i, j, _c), &s) in scores {
            if !topo.is_feasible(i, j) {
                return Err(EstimatorError::InfeasibleEdge { src: i, tgt: j });
            }
            if s < 0.0 || !s.is_finite() {
                return Err(EstimatorError::NegativeScore {
                    src: i,
                    tgt: j,
                    score: s,
                });
            }
        }
        for (i, j) in topo.edges() {
            for c in crate::topology::CHANNELS {
                let idx = self.idx(i, j, c);
                self.values[idx] *= 1.0 - decay;
                if let Some(&s) = scores.get(&(i, j, c)) {
                    self.values[idx] += decay * s;
                }
            }
        }
        Ok(())
    }

    pub fn channel_matrix(&self, c: Channel) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m.set(i, j, self.get(i, j, c));
            }
        }
        m
    }

    pub fn normalize(&self) -> NormalizedInfluence {
        let mut raw = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = 0.0;
                for c in crate::topology::CHANNELS {
                    s += self.get(i, j, c);
                }
                raw.set(i, j, s);
            }
        }
        let row_strengths = raw.row_sums();
        let col_strengths = raw.col_sums();
        let unified = degree_normalize(&raw, self.epsilon);
        let raw_channels = [
            self.channel_matrix(Channel::Comm),
            self.channel_matrix(Channel::Mem),
            self.channel_matrix(Channel::Tool),
            self.channel_matrix(Channel::Exec),
        ];
        let channels = [
            degree_normalize(&raw_channels[0], self.epsilon),
            degree_normalize(&raw_channels[1], self.epsilon),
            degree_normalize(&raw_channels[2], self.epsilon),
            degree_normalize(&raw_channels[3], self.epsilon),
        ];
        NormalizedInfluence {
            raw,
            unified,
            channels,
            raw_channels,
            row_strengths,
            col_strengths,
        }
    }
}

/// `out(i,j) = m(i,j) / (sqrt(r_i c_j) + eps)` with row/column sums of `m`
/// itself; the all-zero matrix maps to itself through the epsilon guard.
pub fn degree_normalize(m: &Matrix, eps: f64) -> Matrix {
    let r = m.row_sums();
    let c = m.col_sums();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let denom = (r[i] * c[j]).sqrt() + eps;
            out.set(i, j, m.get(i, j) / denom);
        }
    }
    out
}

/// Whole-system estimator: per-edge-channel streaming states, per-agent
/// channel histories, and the cumulative tensor.
pub struct InfluenceEstimator {
    cfg: EstimatorConfig,
    dim: usize,
    seed: u64,
    states: BTreeMap<(usize, usize, Channel), EdgeChannelState>,
    histories: BTreeMap<(usize, Channel), (FeatureVector, u64)>,
    tensor: InfluenceTensor,
}

impl InfluenceEstimator {
    pub fn new(cfg: EstimatorConfig, dim: usize, agent_count: usize, seed: u64) -> Self {
        let epsilon = cfg.epsilon;
        InfluenceEstimator {
            cfg,
            dim,
            seed,
            states: BTreeMap::new(),
            histories: BTreeMap::new(),
            tensor: InfluenceTensor::new(agent_count, epsilon),
        }
    }

    pub fn tensor(&self) -> &InfluenceTensor {
        &self.tensor
    }

    /// Conditioning history for an agent-channel pair: the EMA state with
    /// warmup bias correction, so a constant target stream conditions on
    /// its constant value instead of a zero-to-value ramp.
    pub fn history(&self, agent: usize, channel: Channel) -> FeatureVector {
        match self.histories.get(&(agent, channel)) {
            Some((raw, updates)) => {
                let correction = 1.0 - (1.0 - self.cfg.alpha).powi(*updates as i32);
                let mut h = raw.clone();
                if correction > 0.0 {
                    h.scale(1.0 / correction);
                }
                h
            }
            None => FeatureVector::zeros(self.dim),
        }
    }

    pub fn degenerate_scores(&self) -> u64 {
        self.states.values().map(|s| s.degenerate_count()).sum()
    }

    /// Score every bucket of the batch, fold the scores into the tensor,
    /// then advance the target histories.
    pub fn process_batch(
        &mut self,
        batch: &TurnBatch,
        topo: &SystemTopology,
    ) -> Result<BTreeMap<(usize, usize, Channel), f64>, EstimatorError> {
        let mut scores = BTreeMap::new();
        for (&(i, j, c), sig) in &batch.buckets {
            let h_prev = self.history(j, c);
            let state = self.states.entry((i, j, c)).or_insert_with(|| {
                EdgeChannelState::new(self.dim, self.cfg.reservoir, state_seed(self.seed, i, j, c))
            });
            let s = state
                .observe_and_score(&sig.u, &sig.v, &h_prev, &self.cfg)
                .map_err(|e| match e {
                    EstimatorError::NonFiniteInput { .. } => EstimatorError::NonFiniteInput {
                        src: i,
                        tgt: j,
                        channel: c.name(),
                    },
                    other => other,
                })?;
            scores.insert((i, j, c), s);
        }
        self.tensor.update(&scores, self.cfg.tensor_decay, topo)?;
        let zero = FeatureVector::zeros(self.dim);
        for (&(j, c), v_bar) in &batch.agent_targets {
            let (prev, updates) = self
                .histories
                .get(&(j, c))
                .cloned()
                .unwrap_or((zero.clone(), 0));
            let next = update_history(&prev, v_bar, self.cfg.alpha);
            self.histories.insert((j, c), (next, updates + 1));
        }
        Ok(scores)
    }
}

fn state_seed(seed: u64, i: usize, j: usize, c: Channel) -> u64 {
    let mut h = seed ^ 0x51_7cc1_b727_220a95;
    for part in [i as u64, j as u64, c.index() as u64] {
        h ^= part.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = h.rotate_left(23).wrapping_mul(0x2545_f491_4f6c_dd1d);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector(values.to_vec())
    }

    #[test]
    fn history_full_replacement_at_alpha_one() {
        let h = update_history(&fv(&[0.0, 0.0]), &fv(&[2.0, -1.0]), 1.0);
        assert_eq!(h.0, vec![2.0, -1.0]);
    }

    #[test]
    fn history_ema_arithmetic() {
        let h = update_history(&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0]), 0.5);
        assert_eq!(h.0, vec![0.5, 0.5]);
    }

    /// Stationary-accuracy configuration: cumulative covariance, no
    /// shrinkage bias. Used by the closed-form checks.
    fn accuracy_cfg() -> EstimatorConfig {
        EstimatorConfig {
            beta: 0.0,
            shrink: 0.0,
            warmup: 8,
            ..EstimatorConfig::default()
        }
    }

    fn gaussian_pair(rng: &mut ChaCha8Rng, rho: f64) -> (f64, f64) {
        let x: f64 = StandardNormal.sample(rng);
        let n: f64 = StandardNormal.sample(rng);
        (x, rho * x + (1.0 - rho * rho).sqrt() * n)
    }

    #[test]
    fn scalar_correlated_stream_matches_closed_form() {
        let cfg = accuracy_cfg();
        let mut state = EdgeChannelState::new(1, 4096, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rho = 0.9f64;
        let mut last = 0.0;
        for _ in 0..8000 {
            let (x, y) = gaussian_pair(&mut rng, rho);
            last = state
                .observe_and_score(&fv(&[x]), &fv(&[y]), &fv(&[0.0]), &cfg)
                .unwrap();
        }
        let want = -0.5 * (1.0 - rho * rho).ln();
        assert!(
            (last - want).abs() / want < 0.10,
            "got {last}, want {want} within 10%"
        );
    }

    #[test]
    fn independent_stream_converges_to_zero() {
        let cfg = accuracy_cfg();
        let mut state = EdgeChannelState::new(1, 256, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut last = f64::MAX;
        for _ in 0..2000 {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            last = state
                .observe_and_score(&fv(&[x]), &fv(&[y]), &fv(&[0.0]), &cfg)
                .unwrap();
        }
        assert!(last.abs() < 0.05, "expected near-zero score, got {last}");
    }

    #[test]
    fn scores_are_never_negative() {
        let cfg = EstimatorConfig::default();
        let mut state = EdgeChannelState::new(2, 64, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            let s = state
                .observe_and_score(&fv(&[x, -x]), &fv(&[y, y]), &fv(&[0.0, 0.0]), &cfg)
                .unwrap();
            assert!(s >= 0.0);
        }
    }

    #[test]
    fn warmup_returns_zero() {
        let cfg = EstimatorConfig::default();
        let mut state = EdgeChannelState::new(1, 64, 1);
        for k in 0..7u64 {
            let s = state
                .observe_and_score(&fv(&[k as f64]), &fv(&[k as f64]), &fv(&[0.0]), &cfg)
                .unwrap();
            assert_eq!(s, 0.0, "score before warmup must be zero");
        }
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let cfg = EstimatorConfig::default();
        let mut state = EdgeChannelState::new(1, 64, 1);
        let err = state.observe_and_score(&fv(&[f64::NAN]), &fv(&[0.0]), &fv(&[0.0]), &cfg);
        assert!(err.is_err());
    }

    fn small_topo() -> SystemTopology {
        SystemTopology::new(2, vec![(0, 1), (1, 0)]).unwrap()
    }

    #[test]
    fn tensor_single_step_recurrence() {
        let topo = small_topo();
        let mut t = InfluenceTensor::new(2, 1e-8);
        let mut scores = BTreeMap::new();
        scores.insert((0, 1, Channel::Comm), 2.0);
        t.update(&scores, 0.2, &topo).unwrap();
        assert_relative_eq!(t.get(0, 1, Channel::Comm), 0.4);
        assert_eq!(t.get(1, 0, Channel::Comm), 0.0);
    }

    #[test]
    fn tensor_geometric_decay() {
        let topo = small_topo();
        let decay = 0.2;
        let mut t = InfluenceTensor::new(2, 1e-8);
        let mut scores = BTreeMap::new();
        scores.insert((0, 1, Channel::Comm), 1.0);
        t.update(&scores, decay, &topo).unwrap();
        let start = t.get(0, 1, Channel::Comm);
        let empty = BTreeMap::new();
        for _ in 0..5 {
            t.update(&empty, decay, &topo).unwrap();
        }
        let want = start * (1.0f64 - decay).powi(5);
        assert_relative_eq!(t.get(0, 1, Channel::Comm), want, epsilon = 1e-12);
        assert!((want / start - (-1.0f64).exp()).abs() < 0.05);
    }

    #[test]
    fn tensor_two_consecutive_scores() {
        let topo = small_topo();
        let decay = 0.2;
        let s = 1.5;
        let mut t = InfluenceTensor::new(2, 1e-8);
        let mut scores = BTreeMap::new();
        scores.insert((0, 1, Channel::Tool), s);
        t.update(&scores, decay, &topo).unwrap();
        t.update(&scores, decay, &topo).unwrap();
        assert_relative_eq!(
            t.get(0, 1, Channel::Tool),
            decay * s * (2.0 - decay),
            epsilon = 1e-12
        );
    }

    #[test]
    fn tensor_rejects_negative_and_infeasible() {
        let topo = small_topo();
        let mut t = InfluenceTensor::new(2, 1e-8);
        let mut neg = BTreeMap::new();
        neg.insert((0, 1, Channel::Comm), -0.1);
        assert!(t.update(&neg, 0.2, &topo).is_err());
        let mut bad_edge = BTreeMap::new();
        bad_edge.insert((1, 1, Channel::Comm), 0.1);
        assert!(t.update(&bad_edge, 0.2, &topo).is_err());
    }

    #[test]
    fn normalize_zero_tensor_yields_zeros() {
        let t = InfluenceTensor::new(3, 1e-8);
        let norm = t.normalize();
        assert!(norm.unified.data().iter().all(|&x| x == 0.0));
        assert!(norm.raw.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_hand_case() {
        let m = Matrix::from_rows(&[vec![0.0, 4.0], vec![1.0, 0.0]]);
        let out = degree_normalize(&m, 1e-8);
        assert_relative_eq!(out.get(0, 1), 1.0, epsilon = 1e-6);
        assert_relative_eq!(out.get(1, 0), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn normalize_uniform_symmetric_stays_uniform() {
        let m = Matrix::from_rows(&[
            vec![0.0, 0.7, 0.7],
            vec![0.7, 0.0, 0.7],
            vec![0.7, 0.7, 0.0],
        ]);
        let out = degree_normalize(&m, 1e-8);
        let reference = out.get(0, 1);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_relative_eq!(out.get(i, j), reference, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn normalization_is_scale_covariant() {
        let m = Matrix::from_rows(&[
            vec![0.0, 3.0, 0.5],
            vec![0.2, 0.0, 1.0],
            vec![0.0, 2.0, 0.0],
        ]);
        let a = degree_normalize(&m, 1e-8);
        let b = degree_normalize(&m.scale(37.0), 1e-8);
        let argmax = |mat: &Matrix| {
            let mut best = (0, 0);
            for i in 0..mat.rows() {
                for j in 0..mat.cols() {
                    if mat.get(i, j) > mat.get(best.0, best.1) {
                        best = (i, j);
                    }
                }
            }
            best
        };
        assert_eq!(argmax(&a), argmax(&b));
    }
}
