//! Ensemble Empirical Mode Decomposition.
//!
//! Each ensemble member sifts a white-noise-perturbed copy of the input with
//! natural cubic-spline envelopes whose knots are mirrored at both ends. Member IMFs
//! are averaged index-wise and the residue is defined as the input minus the
//! IMF sum, so recomposition is exact up to rounding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_LENGTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EemdConfig {
    pub ensemble_size: usize,
    /// Standard deviation of the added white noise as a fraction of std(x).
    pub noise_amplitude: f64,
    pub seed: u64,
    /// Huang's standard-deviation stop criterion for sifting.
    pub sd_threshold: f64,
    pub max_sifts: usize,
    /// Defaults to floor(log2(len)).
    pub max_imfs: Option<usize>,
}

impl Default for EemdConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 50,
            noise_amplitude: 0.2,
            seed: 0,
            sd_threshold: 0.2,
            max_sifts: 10,
            max_imfs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Fastest first.
    pub imfs: Vec<Vec<f64>>,
    pub residue: Vec<f64>,
    pub meta: EemdConfig,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.residue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residue.is_empty()
    }

    /// IMFs followed by the residue.
    pub fn components(&self) -> impl Iterator<Item = &[f64]> {
        self.imfs
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.residue.as_slice()))
    }
}

pub fn recompose(d: &Decomposition) -> Vec<f64> {
    let mut out = d.residue.clone();
    for imf in &d.imfs {
        for (o, c) in out.iter_mut().zip(imf) {
            *o += c;
        }
    }
    out
}

/// Natural cubic spline through strictly increasing knots, evaluated at
/// `offset + 0, offset + 1, ..` for `count` points.
fn spline_on_grid(xs: &[f64], ys: &[f64], offset: f64, count: usize) -> Vec<f64> {
    let k = xs.len();
    debug_assert!(k >= 2);
    // Second derivatives via the tridiagonal system (Thomas algorithm).
    let mut m = vec![0.0; k];
    if k > 2 {
        let n = k - 2;
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..k - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            diag[i - 1] = 2.0 * (h0 + h1);
            upper[i - 1] = h1;
            rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
        }
        for i in 1..n {
            let lower = xs[i + 1] - xs[i];
            let w = lower / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[n] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for p in 0..count {
        let x = offset + p as f64;
        while seg + 2 < k && x > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        out.push(
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0,
        );
    }
    out
}

fn extrema(h: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for i in 1..h.len() - 1 {
        if h[i] > h[i - 1] && h[i] >= h[i + 1] {
            maxima.push(i);
        } else if h[i] < h[i - 1] && h[i] <= h[i + 1] {
            minima.push(i);
        }
    }
    (maxima, minima)
}

const MIRRORED: usize = 4;

/// Spline knots for one envelope: the interior extrema plus up to
/// `MIRRORED` extrema reflected about the outermost extremum at each end.
/// End samples become knots only when mirroring leaves an end uncovered.
fn envelope_knots(h: &[f64], idx: &[usize], left: usize, right: usize) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(idx.len() + 2 * MIRRORED + 2);
    for &i in idx.iter().filter(|&&i| i > left).take(MIRRORED) {
        knots.push((2.0 * left as f64 - i as f64, h[i]));
    }
    knots.extend(idx.iter().map(|&i| (i as f64, h[i])));
    for &i in idx.iter().rev().filter(|&&i| i < right).take(MIRRORED) {
        knots.push((2.0 * right as f64 - i as f64, h[i]));
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    knots.dedup_by(|a, b| a.0 == b.0);
    if knots.first().is_none_or(|k| k.0 > 0.0) {
        knots.insert(0, (0.0, h[0]));
    }
    if knots.last().is_none_or(|k| k.0 < (n - 1) as f64) {
        knots.push(((n - 1) as f64, h[n - 1]));
    }
    knots.into_iter().unzip()
}

/// Mean of the upper and lower spline envelopes, or `None` when `h` lacks
/// a local maximum or minimum.
fn envelope_mean(h: &[f64]) -> Option<Vec<f64>> {
    let n = h.len();
    let (maxima, minima) = extrema(h);
    if maxima.is_empty() || minima.is_empty() {
        return None;
    }
    let left = maxima[0].min(minima[0]);
    let right = (*maxima.last().unwrap()).max(*minima.last().unwrap());
    let (ux, uy) = envelope_knots(h, &maxima, left, right);
    let (lx, ly) = envelope_knots(h, &minima, left, right);
    let upper = spline_on_grid(&ux, &uy, 0.0, n);
    let lower = spline_on_grid(&lx, &ly, 0.0, n);
    Some(
        upper
            .iter()
            .zip(&lower)
            .map(|(u, l)| 0.5 * (u + l))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy)]
struct SiftParams {
    sd_threshold: f64,
    max_sifts: usize,
    max_imfs: usize,
}

/// Plain EMD. Returns the IMFs; the remainder is `x - sum(imfs)`.
fn emd(x: &[f64], params: SiftParams) -> Vec<Vec<f64>> {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut residue = x.to_vec();
    let mut imfs = Vec::new();
    while imfs.len() < params.max_imfs {
        let (maxima, minima) = extrema(&residue);
        if maxima.len() < 2 || minima.len() < 2 {
            break;
        }
        let energy = residue.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if energy <= 1e-12 * scale {
            break;
        }
        let mut h = residue.clone();
        for _ in 0..params.max_sifts {
            let Some(mean) = envelope_mean(&h) else { break };
            let floor = 1e-12 * h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64;
            let mut sd = 0.0;
            for (hi, mi) in h.iter_mut().zip(&mean) {
                sd += mi * mi / (*hi * *hi + floor);
                *hi -= mi;
            }
            if sd < params.sd_threshold {
                break;
            }
        }
        for (r, v) in residue.iter_mut().zip(&h) {
            *r -= v;
        }
        imfs.push(h);
    }
    imfs
}

fn validate(x: &[f64], config: &EemdConfig) -> Result<()> {
    if x.len() < MIN_LENGTH {
        return Err(Error::invalid(format!(
            "EEMD needs at least {MIN_LENGTH} samples, got {}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("EEMD input sample {i}")));
    }
    if config.ensemble_size == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    if !(config.noise_amplitude >= 0.0 && config.noise_amplitude.is_finite()) {
        return Err(Error::invalid("noise amplitude must be non-negative"));
    }
    if config.max_sifts == 0 {
        return Err(Error::invalid("at least one sift per IMF is required"));
    }
    Ok(())
}

pub fn eemd(x: &[f64], config: &EemdConfig) -> Result<Decomposition> {
    validate(x, config)?;
    let n = x.len();
    let params = SiftParams {
        sd_threshold: config.sd_threshold,
        max_sifts: config.max_sifts,
        max_imfs: config
            .max_imfs
            .unwrap_or((n as f64).log2().floor() as usize),
    };
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let noise_std = config.noise_amplitude * std;

    let members: Vec<Vec<Vec<f64>>> = if noise_std == 0.0 {
        vec![emd(x, params)]
    } else {
        (0..config.ensemble_size)
            .into_par_iter()
            .map(|member| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(member as u64);
                let noisy: Vec<f64> = x
                    .iter()
                    .map(|v| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        v + noise_std * e
                    })
                    .collect();
                emd(&noisy, params)
            })
            .collect()
    };

    let n_imfs = members.iter().map(Vec::len).max().unwrap_or(0);
    let mut imfs = vec![vec![0.0; n]; n_imfs];
    for member in &members {
        for (acc, imf) in imfs.iter_mut().zip(member) {
            for (a, v) in acc.iter_mut().zip(imf) {
                *a += v;
            }
        }
    }
    let count = members.len() as f64;
    for imf in &mut imfs {
        for v in imf.iter_mut() {
            *v /= count;
        }
    }
    let mut residue = x.to_vec();
    for imf in &imfs {
        for (r, c) in residue.iter_mut().zip(imf) {
            *r -= c;
        }
    }
    Ok(Decomposition {
        imfs,
        residue,
        meta: config.clone(),
    })
}
