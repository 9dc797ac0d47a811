//! Spearman rank correlation with midranks and a Student-t p-value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::student_t_two_sided;

/// Significance level used for the `significant` flag.
pub const ALPHA: f64 = 0.05;

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("n = {} < 3", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    Ok(())
}

fn rho_of_ranks(rx: &[f64], ry: &[f64]) -> Result<f64> {
    pearson(rx, ry).ok_or_else(|| Error::UndefinedCorrelation("zero rank variance".into()))
}

/// Spearman's ρ and its two-sided p-value from the t approximation with
/// `n − 2` degrees of freedom. `|ρ| = 1` gives `p = 0`.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check(x, y)?;
    let rho = rho_of_ranks(&midranks(x), &midranks(y))?;
    let n = x.len() as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        student_t_two_sided(t, n - 2.0)
    };
    Ok((rho, p))
}

/// Largest sample size accepted by [`spearman_exact_p`].
pub const EXACT_MAX_N: usize = 10;

/// Exact two-sided permutation p-value: the fraction of the `n!`
/// rearrangements of `y` whose |ρ| is at least the observed |ρ|.
pub fn spearman_exact_p(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check(x, y)?;
    if x.len() > EXACT_MAX_N {
        return Err(Error::invalid(format!(
            "exact permutation p-value limited to n <= {EXACT_MAX_N}"
        )));
    }
    let rx = midranks(x);
    let mut ry = midranks(y);
    let observed = rho_of_ranks(&rx, &ry)?;
    let tol = 1e-12;
    let (mut hits, mut total) = (0u64, 0u64);
    // Heap's algorithm over positions of ry.
    let n = ry.len();
    let mut c = vec![0usize; n];
    let mut visit = |r: &[f64]| {
        total += 1;
        if let Some(v) = pearson(&rx, r) {
            if v.abs() >= observed.abs() - tol {
                hits += 1;
            }
        }
    };
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((observed, hits as f64 / total as f64))
}

/// One correlation between a measure and performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub measure: String,
    pub n_s: usize,
    /// `None` when the correlation is undefined (e.g. a constant column).
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CorrelationResult {
    pub fn compute(measure: impl Into<String>, n_s: usize, x: &[f64], y: &[f64]) -> Self {
        let measure = measure.into();
        match spearman_rho(x, y) {
            Ok((rho, p)) => CorrelationResult {
                measure,
                n_s,
                rho: Some(rho),
                p_value: Some(p),
                significant: p <= ALPHA,
                n: x.len(),
                note: None,
            },
            Err(e) => CorrelationResult {
                measure,
                n_s,
                rho: None,
                p_value: None,
                significant: false,
                n: x.len(),
                note: Some(e.to_string()),
            },
        }
    }
}
