//! Per-turn spectral signals over the normalized influence matrices.

use serde::{Deserialize, Serialize};

use crate::error::SpectralError;
use crate::mat::Matrix;
use crate::topology::NUM_CHANNELS;

/// Two largest singular values of `m`.
///
/// Agent counts stay small, so this takes the exact route: eigenvalues of
/// the Gram matrix MᵀM by cyclic Jacobi rotations, singular values as the
/// square roots of the two largest. Deterministic and robust to repeated
/// or zero singular values.
pub fn leading_spectrum(m: &Matrix) -> Result<(f64, f64), SpectralError> {
    if !m.is_finite() {
        return Err(SpectralError::NonFinite);
    }
    let rows = m.rows();
    let cols = m.cols();
    if rows == 0 || cols == 0 {
        return Ok((0.0, 0.0));
    }
    let mut gram = vec![0.0f64; cols * cols];
    for i in 0..cols {
        for j in i..cols {
            let mut s = 0.0;
            for k in 0..rows {
                s += m.get(k, i) * m.get(k, j);
            }
            gram[i * cols + j] = s;
            gram[j * cols + i] = s;
        }
    }
    let mut eig = jacobi_eigenvalues(gram, cols);
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let l1 = eig.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let mut l2 = eig.get(1).copied().unwrap_or(0.0).max(0.0).sqrt().min(l1);
    // Rank-deficient inputs leave rotation dust in the trailing
    // eigenvalues; clamp it so strict comparisons downstream see a true
    // zero second mode.
    if l2 <= 1e-7 * l1 {
        l2 = 0.0;
    }
    Ok((l1, l2))
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi sweeps.
fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if fro == 0.0 {
        return vec![0.0; n];
    }
    let tol = (1e-15 * fro).powi(2);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    1.0 / (theta - (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// All per-turn spectral signals. Field names match the diagnostics
/// stream schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSignals {
    pub lambda1: f64,
    pub lambda2: f64,
    pub energy: f64,
    pub amp: f64,
    pub ratio: f64,
    pub gap: f64,
    pub gap_contraction: f64,
    pub phase: f64,
    pub phase_shift: bool,
    pub channel_energies: [f64; NUM_CHANNELS],
    pub channel_shares: [f64; NUM_CHANNELS],
    pub entropy_norm: f64,
    pub cross_channel: bool,
}

impl SpectralSignals {
    /// First observed turn: no predecessor, so growth and transition
    /// signals are neutral and no flag can fire.
    pub fn first_turn(lambda1: f64, lambda2: f64, eps: f64) -> Self {
        let ratio = lambda2 / (lambda1 + eps);
        SpectralSignals {
            lambda1,
            lambda2,
            energy: lambda1 + lambda2,
            amp: 1.0,
            ratio,
            gap: 1.0 - ratio,
            gap_contraction: 0.0,
            phase: 0.0,
            phase_shift: false,
            channel_energies: [0.0; NUM_CHANNELS],
            channel_shares: [0.0; NUM_CHANNELS],
            entropy_norm: 0.0,
            cross_channel: false,
        }
    }

    /// Signals for turn t given the previous turn's signals.
    pub fn next(lambda1: f64, lambda2: f64, prev: &SpectralSignals, eps: f64) -> Self {
        let energy = lambda1 + lambda2;
        let amp = energy / (prev.energy + eps);
        let ratio = lambda2 / (lambda1 + eps);
        let gap = 1.0 - ratio;
        let gap_contraction = prev.gap - gap;
        let phase = (ratio - prev.ratio).abs() / (prev.ratio + eps);
        SpectralSignals {
            lambda1,
            lambda2,
            energy,
            amp,
            ratio,
            gap,
            gap_contraction,
            phase,
            phase_shift: phase > gap_contraction,
            channel_energies: [0.0; NUM_CHANNELS],
            channel_shares: [0.0; NUM_CHANNELS],
            entropy_norm: 0.0,
            cross_channel: false,
        }
    }

    /// Fill the cross-channel fields from the per-channel normalized
    /// matrices: energies are leading singular values, shares their exact
    /// normalization, entropy the normalized Shannon entropy with the
    /// inclusive 0.5 flag boundary.
    pub fn with_channel_spread(
        mut self,
        channel_matrices: &[Matrix; NUM_CHANNELS],
    ) -> Result<Self, SpectralError> {
        let mut energies = [0.0; NUM_CHANNELS];
        for (e, m) in energies.iter_mut().zip(channel_matrices) {
            let (l1, _) = leading_spectrum(m)?;
            *e = l1;
        }
        let total: f64 = energies.iter().sum();
        let mut shares = [0.0; NUM_CHANNELS];
        if total > 0.0 {
            for (s, &e) in shares.iter_mut().zip(&energies) {
                *s = e / total;
            }
        }
        let mut entropy = 0.0;
        for &p in &shares {
            if p > 0.0 {
                entropy -= p * p.ln();
            }
        }
        let entropy_norm = entropy / (NUM_CHANNELS as f64).ln();
        self.channel_energies = energies;
        self.channel_shares = shares;
        self.entropy_norm = entropy_norm;
        self.cross_channel = entropy_norm >= 0.5;
        Ok(self)
    }
}
