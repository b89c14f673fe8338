//! Empirical distributions and the per-experiment summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted `(value, fraction of samples <= value)` steps, one per distinct
/// value.
pub fn compute_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Contract("CDF of an empty sample set".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Contract("CDF input contains NaN".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in s.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = f,
            _ => out.push((v, f)),
        }
    }
    Ok(out)
}

/// `(value, fraction of samples >= value)`, the "fraction of users above"
/// view.
pub fn compute_ccdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    let cdf = compute_cdf(samples)?;
    let mut prev = 0.0;
    Ok(cdf
        .into_iter()
        .map(|(v, f)| {
            let above = 1.0 - prev;
            prev = f;
            (v, above)
        })
        .collect())
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("percentile of an empty sample set".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Domain(format!("percentile {p} outside (0, 100]")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    Ok(s[rank.clamp(1, s.len()) - 1])
}

/// Threshold separating "error-prone" users.
pub const HIGH_BER: f64 = 0.1;

/// Per-user samples of one experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserSamples {
    pub ber: Vec<f64>,
    pub sinr_db: Vec<f64>,
    /// bit/s
    pub rate: Vec<f64>,
}

impl UserSamples {
    pub fn len(&self) -> usize {
        self.ber.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ber.is_empty()
    }

    pub fn extend(&mut self, other: &UserSamples) {
        self.ber.extend_from_slice(&other.ber);
        self.sinr_db.extend_from_slice(&other.sinr_db);
        self.rate.extend_from_slice(&other.rate);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// percent
    pub mean_ber: f64,
    pub frac_ber_zero: f64,
    pub frac_ber_ge_0_1: f64,
    /// Mbps
    pub mean_rate: f64,
    /// 95%-likely rate, Mbps
    pub p5_rate: f64,
    pub num_users: usize,
}

impl MetricsSummary {
    pub fn from_samples(s: &UserSamples) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Contract("no user samples".into()));
        }
        let n = s.len() as f64;
        let pct = |c: usize| 100.0 * c as f64 / n;
        Ok(MetricsSummary {
            mean_ber: 100.0 * s.ber.iter().sum::<f64>() / n,
            frac_ber_zero: pct(s.ber.iter().filter(|&&b| b == 0.0).count()),
            frac_ber_ge_0_1: pct(s.ber.iter().filter(|&&b| b >= HIGH_BER).count()),
            mean_rate: s.rate.iter().sum::<f64>() / n / 1e6,
            p5_rate: percentile(&s.rate, 5.0)? / 1e6,
            num_users: s.len(),
        })
    }

    pub const CSV_HEADER: &'static str = "mean_ber_pct,frac_ber_zero_pct,frac_ber_ge_0_1_pct,mean_rate_mbps,p5_rate_mbps,num_users";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            self.mean_ber, self.frac_ber_zero, self.frac_ber_ge_0_1, self.mean_rate, self.p5_rate, self.num_users
        )
    }
}

/// `value,fraction` CSV body.
pub fn cdf_csv(cdf: &[(f64, f64)]) -> String {
    let mut s = String::from("value,fraction\n");
    for (v, f) in cdf {
        s.push_str(&format!("{v},{f}\n"));
    }
    s
}
