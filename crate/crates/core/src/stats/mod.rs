//! Correlation, simple regression, Welch's t-test and the top-quintile
//! contribution share.

pub mod special;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComunaId;
pub use special::{beta_reg, ln_gamma, student_t_two_sided};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    /// Degrees of freedom, `n - 2`.
    pub df: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub r2: f64,
    pub n: usize,
    pub p_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_value: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Centered second moments `(sxx, syy, sxy)` with two-pass means.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (mx, my, sxx, syy, sxy)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("{} pairs, at least 3 needed", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite sample value"));
    }
    Ok(())
}

/// Sample Pearson correlation with a two-sided p-value from the t
/// distribution with `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let (_, _, sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateData("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let n = x.len();
    let df = n - 2;
    // t^2 = r^2 df / (1 - r^2), so df / (df + t^2) = 1 - r^2
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        beta_reg(df as f64 / 2.0, 0.5, (1.0 - r) * (1.0 + r))
    };
    Ok(Correlation { r, p_value, n, df })
}

/// Least-squares line `y = slope·x + intercept`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    let c = pearson(x, y)?;
    let (mx, my, sxx, _, sxy) = moments(x, y);
    let slope = sxy / sxx;
    Ok(RegressionFit {
        slope,
        intercept: my - slope * mx,
        r: c.r,
        r2: c.r * c.r,
        n: c.n,
        p_value: c.p_value,
    })
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch's unequal-variance two-sample t-test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "samples of size {} and {}, at least 2 each needed",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite sample value"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let qa = sample_var(a, ma) / a.len() as f64;
    let qb = sample_var(b, mb) / b.len() as f64;
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        return Ok(if ma == mb {
            WelchTest { t: 0.0, df, p_value: 1.0 }
        } else {
            WelchTest { t: (ma - mb).signum() * f64::INFINITY, df, p_value: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (a.len() - 1) as f64 + qb * qb / (b.len() - 1) as f64);
    Ok(WelchTest { t, df, p_value: student_t_two_sided(t, df) })
}

/// Comunas present in both maps, richest first: income decile descending,
/// ties broken by ascending comuna id.
fn rank_by_decile(
    values: &BTreeMap<ComunaId, f64>,
    deciles: &BTreeMap<ComunaId, f64>,
) -> Vec<(ComunaId, f64, f64)> {
    let mut rows: Vec<(ComunaId, f64, f64)> = values
        .iter()
        .filter_map(|(c, &v)| deciles.get(c).map(|&d| (*c, d, v)))
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    rows
}

/// Size of the top quintile, `⌈n/5⌉`.
pub fn top_quintile_len(n: usize) -> usize {
    n.div_ceil(5)
}

/// Splits `values` into the top-quintile comunas by income decile and the
/// rest, as used for the richest-20% versus poorest-80% comparison.
pub fn quintile_split(
    values: &BTreeMap<ComunaId, f64>,
    deciles: &BTreeMap<ComunaId, f64>,
) -> (Vec<f64>, Vec<f64>) {
    let rows = rank_by_decile(values, deciles);
    let k = top_quintile_len(rows.len());
    let top = rows[..k].iter().map(|r| r.2).collect();
    let rest = rows[k..].iter().map(|r| r.2).collect();
    (top, rest)
}

/// Percentage of the total absolute value contributed by the top income
/// quintile of comunas.
pub fn quintile_share(
    values: &BTreeMap<ComunaId, f64>,
    deciles: &BTreeMap<ComunaId, f64>,
) -> Result<f64> {
    let rows = rank_by_decile(values, deciles);
    if rows.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} comunas with both a value and a decile, at least 5 needed",
            rows.len()
        )));
    }
    let total: f64 = rows.iter().map(|r| r.2.abs()).sum();
    if total == 0.0 {
        return Err(Error::DegenerateData("all values are zero".into()));
    }
    let k = top_quintile_len(rows.len());
    let top: f64 = rows[..k].iter().map(|r| r.2.abs()).sum();
    Ok(100.0 * top / total)
}
