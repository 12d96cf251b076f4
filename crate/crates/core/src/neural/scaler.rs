//! Per-feature standardization with z-score outlier replacement.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTLIER_WINDOW: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Median of the centred window of `OUTLIER_WINDOW` samples around `i`.
fn rolling_median(x: &[f64], i: usize) -> f64 {
    let half = OUTLIER_WINDOW / 2;
    let lo = i.saturating_sub(half);
    let hi = (i + half).min(x.len());
    let mut w: Vec<f64> = x[lo..hi].to_vec();
    w.sort_by(f64::total_cmp);
    let n = w.len();
    if n % 2 == 1 {
        w[n / 2]
    } else {
        0.5 * (w[n / 2 - 1] + w[n / 2])
    }
}

fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Replaces values whose population z-score exceeds `threshold` by the
/// rolling median of the original series. Returns the number replaced.
pub fn replace_outliers(x: &mut [f64], threshold: f64) -> usize {
    let (mean, var) = moments(x);
    let std = var.sqrt();
    if std == 0.0 || !threshold.is_finite() {
        return 0;
    }
    let original = x.to_vec();
    let mut replaced = 0;
    for (i, v) in x.iter_mut().enumerate() {
        if ((*v - mean) / std).abs() > threshold {
            *v = rolling_median(&original, i);
            replaced += 1;
        }
    }
    replaced
}

impl Scaler {
    /// Fits on the columns of `features` (rows are samples) after outlier
    /// replacement and returns the cleaned, standardized training matrix.
    pub fn fit(
        features: ArrayView2<f64>,
        names: &[String],
        threshold: f64,
    ) -> Result<(Array2<f64>, Scaler)> {
        let (n, f) = features.dim();
        if names.len() != f {
            return Err(Error::Shape(format!(
                "{} feature names for {f} columns",
                names.len()
            )));
        }
        if n < 2 {
            return Err(Error::invalid(format!(
                "scaler needs at least 2 samples, got {n}"
            )));
        }
        if let Some(((r, c), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature `{}` row {r}", names[c])));
        }
        let mut out = features.to_owned();
        let mut means = Vec::with_capacity(f);
        let mut stds = Vec::with_capacity(f);
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let mut x = col.to_vec();
            let replaced = replace_outliers(&mut x, threshold);
            if replaced > 0 {
                log::debug!("feature `{}`: replaced {replaced} outliers", names[c]);
            }
            let (mean, var) = moments(&x);
            if var <= f64::EPSILON * mean.abs().max(1.0).powi(2) {
                return Err(Error::ZeroVariance(names[c].clone()));
            }
            let std = var.sqrt();
            for (dst, v) in col.iter_mut().zip(&x) {
                *dst = (v - mean) / std;
            }
            means.push(mean);
            stds.push(std);
        }
        Ok((
            out,
            Scaler {
                names: names.to_vec(),
                means,
                stds,
            },
        ))
    }

    pub fn fit_series(x: &[f64], name: &str, threshold: f64) -> Result<(Vec<f64>, Scaler)> {
        let view = ArrayView2::from_shape((x.len(), 1), x).expect("column");
        let (out, scaler) = Self::fit(view, &[name.to_string()], threshold)?;
        Ok((out.into_raw_vec_and_offset().0, scaler))
    }

    pub fn identity(names: &[String]) -> Self {
        Self {
            names: names.to_vec(),
            means: vec![0.0; names.len()],
            stds: vec![1.0; names.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn transform(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.len() {
            return Err(Error::Shape(format!(
                "scaler has {} features, input has {}",
                self.len(),
                features.ncols()
            )));
        }
        let mut out = features.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.means[c]) / self.stds[c]);
        }
        Ok(out)
    }

    /// Single-feature forward map.
    pub fn scale(&self, feature: usize, v: f64) -> f64 {
        (v - self.means[feature]) / self.stds[feature]
    }

    pub fn unscale(&self, feature: usize, v: f64) -> f64 {
        v * self.stds[feature] + self.means[feature]
    }

    /// Means followed by standard deviations.
    pub fn to_params(&self) -> Vec<f64> {
        self.means.iter().chain(&self.stds).copied().collect()
    }

    pub fn from_params(names: Vec<String>, params: &[f64]) -> Result<Self> {
        if params.len() != 2 * names.len() {
            return Err(Error::Shape(format!(
                "scaler blob has {} values for {} features",
                params.len(),
                names.len()
            )));
        }
        let (means, stds) = params.split_at(names.len());
        Ok(Self {
            names,
            means: means.to_vec(),
            stds: stds.to_vec(),
        })
    }
}
