//! Geometric distances, information-theoretic divergences, within-domain
//! diversity statistics and distribution moments.
//!
//! Vector inputs are plain slices. Operations that need probability vectors
//! rescale their operands to sum to one first; Rényi divergence also adds
//! `epsilon_smoothing` to every entry and rescales again so that it stays
//! finite on disjoint supports. All logarithms are natural.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RENYI_ALPHA: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Variance below which skewness and kurtosis are reported as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub renyi_alpha: f64,
    pub epsilon_smoothing: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            renyi_alpha: DEFAULT_RENYI_ALPHA,
            epsilon_smoothing: DEFAULT_EPSILON,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.renyi_alpha)?;
        if !(self.epsilon_smoothing > 0.0 && self.epsilon_smoothing < 1e-6) {
            return Err(Error::invalid(format!(
                "epsilon_smoothing must lie in (0, 1e-6), got {}",
                self.epsilon_smoothing
            )));
        }
        Ok(())
    }
}

/// The closed set of measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    CosineDistance,
    L1Distance,
    L2Distance,
    RenyiDivergence,
    JsDivergence,
    WassersteinDistance,
    BhattacharyyaCoefficient,
    Entropy,
    RenyiEntropy,
    SimpsonIndex,
    Mean,
    Variance,
    Skewness,
    Kurtosis,
}

impl Measure {
    pub const ALL: [Measure; 14] = [
        Measure::CosineDistance,
        Measure::L1Distance,
        Measure::L2Distance,
        Measure::RenyiDivergence,
        Measure::JsDivergence,
        Measure::WassersteinDistance,
        Measure::BhattacharyyaCoefficient,
        Measure::Entropy,
        Measure::RenyiEntropy,
        Measure::SimpsonIndex,
        Measure::Mean,
        Measure::Variance,
        Measure::Skewness,
        Measure::Kurtosis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::CosineDistance => "cosine_distance",
            Measure::L1Distance => "l1_distance",
            Measure::L2Distance => "l2_distance",
            Measure::RenyiDivergence => "renyi_divergence",
            Measure::JsDivergence => "js_divergence",
            Measure::WassersteinDistance => "wasserstein_distance",
            Measure::BhattacharyyaCoefficient => "bhattacharyya_coefficient",
            Measure::Entropy => "entropy",
            Measure::RenyiEntropy => "renyi_entropy",
            Measure::SimpsonIndex => "simpson_index",
            Measure::Mean => "mean",
            Measure::Variance => "variance",
            Measure::Skewness => "skewness",
            Measure::Kurtosis => "kurtosis",
        }
    }

    /// Whether the measure compares two domains (as opposed to describing one).
    pub fn is_between_domain(self) -> bool {
        matches!(
            self,
            Measure::CosineDistance
                | Measure::L1Distance
                | Measure::L2Distance
                | Measure::RenyiDivergence
                | Measure::JsDivergence
                | Measure::WassersteinDistance
                | Measure::BhattacharyyaCoefficient
        )
    }

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            Measure::CosineDistance | Measure::L1Distance | Measure::L2Distance
        )
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a measure value was computed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operands {
    Pair { source: String, target: String },
    Single { domain: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub measure: Measure,
    pub value: f64,
    pub operands: Operands,
}

fn check_len(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    if u.is_empty() {
        return Err(Error::invalid("empty vector"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha != 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidOrder(alpha))
    }
}

/// Rescales a non-negative vector to sum to one.
pub fn renormalize(p: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid("distribution has negative or non-finite entries"));
    }
    let s: f64 = p.iter().sum();
    if s <= 0.0 {
        return Err(Error::invalid("distribution has zero mass"));
    }
    Ok(p.iter().map(|x| x / s).collect())
}

/// Adds `eps` to every entry of a probability vector and rescales.
pub fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let s = 1.0 + eps * p.len() as f64;
    p.iter().map(|x| (x + eps) / s).collect()
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(u, v)?;
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

pub fn l1_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum())
}

pub fn l2_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// `D_α(p‖q) = ln(Σ p^α q^{1−α}) / (α − 1)` on smoothed operands.
///
/// The sum is evaluated as `1 + Σ p·expm1((1−α)·ln(q/p))` so that orders
/// close to one keep their precision.
pub fn renyi_divergence(p: &[f64], q: &[f64], alpha: f64, eps: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_len(p, q)?;
    let p = smooth(&renormalize(p)?, eps);
    let q = smooth(&renormalize(q)?, eps);
    let excess: f64 = p
        .iter()
        .zip(&q)
        .map(|(pi, qi)| pi * ((1.0 - alpha) * (qi / pi).ln()).exp_m1())
        .sum();
    let d = excess.ln_1p() / (alpha - 1.0);
    Ok(d.max(0.0))
}

/// `Σ a·ln(a/b)` with `0·ln 0 = 0`.
fn kl_terms(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| x * (x / y).ln())
        .sum()
}

/// Jensen–Shannon divergence, bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let p = renormalize(p)?;
    let q = renormalize(q)?;
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_terms(&p, &m) + 0.5 * kl_terms(&q, &m);
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// `Σ sqrt(p_i q_i)`. A similarity: one for identical operands.
pub fn bhattacharyya_coefficient(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let p = renormalize(p)?;
    let q = renormalize(q)?;
    let bc: f64 = p.iter().zip(&q).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(bc.clamp(0.0, 1.0))
}

/// First Wasserstein distance with unit spacing between adjacent indices:
/// the L1 distance between the two cumulative distributions.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let p = renormalize(p)?;
    let q = renormalize(q)?;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(&q).take(p.len() - 1) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    Ok(total)
}

pub fn entropy(p: &[f64]) -> Result<f64> {
    let p = renormalize(p)?;
    let h: f64 = p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum();
    Ok(h.max(0.0))
}

/// `ln(Σ p^α) / (1 − α)`, with zero entries contributing nothing.
pub fn renyi_entropy(p: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let p = renormalize(p)?;
    let excess: f64 = p
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * ((alpha - 1.0) * x.ln()).exp_m1())
        .sum();
    Ok((excess.ln_1p() / (1.0 - alpha)).max(0.0))
}

/// `Σ p_i²`: the probability that two draws coincide.
pub fn simpson_index(p: &[f64]) -> Result<f64> {
    let p = renormalize(p)?;
    Ok(p.iter().map(|x| x * x).sum())
}

/// Population mean, variance, skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Result<Moments> {
    if x.len() < 2 {
        return Err(Error::invalid("moments need at least two values"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moments input".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let variance = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if variance < DEGENERATE_VARIANCE {
        return Ok(Moments {
            mean,
            variance,
            skewness: 0.0,
            kurtosis: 0.0,
        });
    }
    let sd = variance.sqrt();
    let (mut m3, mut m4) = (0.0, 0.0);
    for v in x {
        let z = (v - mean) / sd;
        let z2 = z * z;
        m3 += z2 * z;
        m4 += z2 * z2;
    }
    Ok(Moments {
        mean,
        variance,
        skewness: m3 / n,
        kurtosis: m4 / n - 3.0,
    })
}
