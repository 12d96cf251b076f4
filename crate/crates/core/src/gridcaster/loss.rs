//! Spatially weighted rollout loss with location up-weighting and derived
//! wind-magnitude / wind-power terms.

use std::f64::consts::PI;

use ndarray::{Array, Array5, ArrayView, ArrayView5, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{GridSpec, GridStateSequence};
use crate::error::{Error, Result};

/// Grid geometry needed to weight cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeometry {
    pub lat0: f64,
    pub dlat: f64,
    pub n_lat: usize,
    pub lon0: f64,
    pub dlon: f64,
    pub n_lon: usize,
}

impl GridGeometry {
    pub fn of(spec: &GridSpec) -> Self {
        Self {
            lat0: spec.lat0,
            dlat: spec.dlat,
            n_lat: spec.n_lat,
            lon0: spec.lon0,
            dlon: spec.dlon,
            n_lon: spec.n_lon,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat0 + i as f64 * self.dlat
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon0 + j as f64 * self.dlon
    }
}

/// Closed latitude/longitude box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }

    /// Parses `latmin,latmax,lonmin,lonmax`.
    pub fn parse(text: &str) -> Result<Self> {
        let v = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bounding box `{text}`: {e}")))?;
        if v.len() != 4 {
            return Err(Error::Config(format!(
                "bounding box `{text}` needs 4 numbers"
            )));
        }
        let b = Self {
            lat_min: v[0],
            lat_max: v[1],
            lon_min: v[2],
            lon_max: v[3],
        };
        if !(b.lat_min <= b.lat_max && b.lon_min <= b.lon_max) {
            return Err(Error::Config(format!(
                "bounding box `{text}` has min > max"
            )));
        }
        Ok(b)
    }
}

/// Loss weights. Empty vectors, zero inverse variances and a missing grid
/// are filled from training data by [`LossConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub variables: Vec<String>,
    /// w_j per grid variable.
    pub variable_weights: Vec<f64>,
    /// s_j per grid variable.
    pub inverse_diff_variance: Vec<f64>,
    pub wind_u: String,
    pub wind_v: String,
    pub wind_magnitude_weight: f64,
    pub wind_power_weight: f64,
    pub wind_magnitude_inverse_diff_variance: f64,
    pub wind_power_inverse_diff_variance: f64,
    pub bounding_box: Option<BoundingBox>,
    /// omega_l, applied to cells inside the box.
    pub location_weight: f64,
    /// Autoregressive steps per training sample.
    pub rollout_steps: usize,
    pub grid: Option<GridGeometry>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variables: Vec::new(),
            variable_weights: Vec::new(),
            inverse_diff_variance: Vec::new(),
            wind_u: "u10".into(),
            wind_v: "v10".into(),
            wind_magnitude_weight: 1.0,
            wind_power_weight: 0.1,
            wind_magnitude_inverse_diff_variance: 0.0,
            wind_power_inverse_diff_variance: 0.0,
            bounding_box: None,
            location_weight: 1.0,
            rollout_steps: 4,
            grid: None,
        }
    }
}

impl LossConfig {
    /// Fills unset fields from `training` and validates the result.
    pub fn resolve(mut self, training: &GridStateSequence) -> Result<Self> {
        let spec = training.spec();
        if self.variables.is_empty() {
            self.variables = spec.variables.clone();
        } else if self.variables != spec.variables {
            return Err(Error::Config(format!(
                "loss variables {:?} differ from grid variables {:?}",
                self.variables, spec.variables
            )));
        }
        if self.variable_weights.is_empty() {
            self.variable_weights = vec![1.0; self.variables.len()];
        }
        if self.inverse_diff_variance.is_empty() {
            self.inverse_diff_variance = estimate_s_j(training)?;
        }
        match self.grid {
            None => self.grid = Some(GridGeometry::of(spec)),
            Some(g) if g != GridGeometry::of(spec) => {
                return Err(Error::Config("loss grid differs from the data grid".into()));
            }
            Some(_) => {}
        }
        if self.wind_indices().is_none() {
            if self.wind_magnitude_weight != 0.0 || self.wind_power_weight != 0.0 {
                log::info!(
                    "grid has no `{}`/`{}` pair; wind magnitude and power terms disabled",
                    self.wind_u,
                    self.wind_v
                );
            }
            self.wind_magnitude_weight = 0.0;
            self.wind_power_weight = 0.0;
        } else if self.wind_magnitude_inverse_diff_variance == 0.0
            || self.wind_power_inverse_diff_variance == 0.0
        {
            let (sm, sp) = estimate_wind_s(training, &self.wind_u, &self.wind_v)?;
            if self.wind_magnitude_inverse_diff_variance == 0.0 {
                self.wind_magnitude_inverse_diff_variance = sm;
            }
            if self.wind_power_inverse_diff_variance == 0.0 {
                self.wind_power_inverse_diff_variance = sp;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.variables.len();
        if nv == 0 {
            return Err(Error::Config("loss needs at least one variable".into()));
        }
        if self.variable_weights.len() != nv || self.inverse_diff_variance.len() != nv {
            return Err(Error::Config(format!(
                "{} variables but {} weights and {} inverse variances",
                nv,
                self.variable_weights.len(),
                self.inverse_diff_variance.len()
            )));
        }
        if let Some((j, _)) = self
            .inverse_diff_variance
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config(format!(
                "s_j for `{}` must be positive",
                self.variables[j]
            )));
        }
        let weights = self
            .variable_weights
            .iter()
            .chain([&self.wind_magnitude_weight, &self.wind_power_weight]);
        if weights.clone().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.location_weight >= 1.0 && self.location_weight.is_finite()) {
            return Err(Error::Config(format!(
                "location weight {} must be >= 1",
                self.location_weight
            )));
        }
        if self.rollout_steps == 0 {
            return Err(Error::Config("rollout_steps must be at least 1".into()));
        }
        let grid = self
            .grid
            .ok_or_else(|| Error::Config("loss grid is not set".into()))?;
        if grid.n_lat == 0 || grid.n_lon == 0 {
            return Err(Error::Config("loss grid is empty".into()));
        }
        if self.wind_magnitude_weight > 0.0 || self.wind_power_weight > 0.0 {
            if self.wind_indices().is_none() {
                return Err(Error::Config(format!(
                    "wind terms need variables `{}` and `{}`",
                    self.wind_u, self.wind_v
                )));
            }
            let s = [
                (
                    self.wind_magnitude_weight,
                    self.wind_magnitude_inverse_diff_variance,
                ),
                (
                    self.wind_power_weight,
                    self.wind_power_inverse_diff_variance,
                ),
            ];
            if s.iter()
                .any(|&(w, s)| w > 0.0 && !(s > 0.0 && s.is_finite()))
            {
                return Err(Error::Config(
                    "wind-term inverse variances must be positive".into(),
                ));
            }
        }
        if let Some(b) = self.bounding_box {
            if self.box_cells().is_empty() {
                return Err(Error::Config(format!(
                    "bounding box {b:?} contains no grid cell"
                )));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        self.grid.expect("validated loss config has a grid")
    }

    pub fn wind_indices(&self) -> Option<(usize, usize)> {
        let u = self.variables.iter().position(|v| *v == self.wind_u)?;
        let v = self.variables.iter().position(|v| *v == self.wind_v)?;
        Some((u, v))
    }

    /// Whether the derived wind terms enter the loss.
    pub fn has_wind_terms(&self) -> bool {
        self.wind_indices().is_some()
            && (self.wind_magnitude_weight > 0.0 || self.wind_power_weight > 0.0)
    }

    /// a_i: cos(latitude), normalized to unit mean over the grid.
    pub fn area_weights(&self) -> Vec<f64> {
        let g = self.geometry();
        let row: Vec<f64> = (0..g.n_lat)
            .map(|i| (g.lat(i) * PI / 180.0).cos().max(0.0))
            .collect();
        let mean = row.iter().sum::<f64>() / g.n_lat as f64;
        let mut out = Vec::with_capacity(g.n_cells());
        for a in &row {
            out.extend(std::iter::repeat_n(a / mean, g.n_lon));
        }
        out
    }

    /// m_i: omega_l inside the box, 1 elsewhere.
    pub fn location_weights(&self) -> Vec<f64> {
        let g = self.geometry();
        let mut m = vec![1.0; g.n_cells()];
        for c in self.box_cells() {
            m[c] = self.location_weight;
        }
        m
    }

    /// Row-major indices of the cells inside the bounding box.
    pub fn box_cells(&self) -> Vec<usize> {
        let (Some(b), Some(g)) = (self.bounding_box, self.grid) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for i in 0..g.n_lat {
            for j in 0..g.n_lon {
                if b.contains(g.lat(i), g.lon(j)) {
                    out.push(i * g.n_lon + j);
                }
            }
        }
        out
    }
}

/// Wind magnitude `sqrt(u^2 + v^2)` and the cubic power proxy `wm^3`.
pub fn wind_derivations<D: Dimension>(
    u: ArrayView<f64, D>,
    v: ArrayView<f64, D>,
) -> Result<(Array<f64, D>, Array<f64, D>)> {
    if u.shape() != v.shape() {
        return Err(Error::Shape(format!(
            "u {:?} vs v {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let wm = Zip::from(&u)
        .and(&v)
        .map_collect(|&a, &b| (a * a + b * b).sqrt());
    let wp = wm.mapv(|m| m * m * m);
    Ok((wm, wp))
}

fn inverse_diff_variance(name: &str, diffs: impl Iterator<Item = f64> + Clone) -> Result<f64> {
    let n = diffs.clone().count() as f64;
    let mean = diffs.clone().sum::<f64>() / n;
    let var = diffs.map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::ZeroVariance(format!("time differences of {name}")));
    }
    Ok(1.0 / var)
}

/// s_j = 1 / variance over all cells and steps of `x[t+1] - x[t]`.
pub fn estimate_s_j(training: &GridStateSequence) -> Result<Vec<f64>> {
    if training.n_times() < 3 {
        return Err(Error::invalid("s_j estimation needs at least 3 time steps"));
    }
    let d = training.data();
    (0..training.spec().n_vars())
        .map(|v| {
            let name = &training.spec().variables[v];
            let diffs = (1..training.n_times()).flat_map(move |t| {
                let a = d.slice(ndarray::s![t, v, .., ..]);
                let b = d.slice(ndarray::s![t - 1, v, .., ..]);
                a.into_iter()
                    .zip(b)
                    .map(|(x, y)| *x as f64 - *y as f64)
                    .collect::<Vec<_>>()
            });
            inverse_diff_variance(name, diffs)
        })
        .collect()
}

/// s for the derived wind-magnitude and wind-power series.
pub fn estimate_wind_s(training: &GridStateSequence, u: &str, v: &str) -> Result<(f64, f64)> {
    if training.n_times() < 3 {
        return Err(Error::invalid("s_j estimation needs at least 3 time steps"));
    }
    let spec = training.spec();
    let (Some(iu), Some(iv)) = (spec.variable_index(u), spec.variable_index(v)) else {
        return Err(Error::MissingEntry(format!("wind variables `{u}`/`{v}`")));
    };
    let d = training.data().mapv(f64::from);
    let (wm, wp) = wind_derivations(
        d.index_axis(ndarray::Axis(1), iu),
        d.index_axis(ndarray::Axis(1), iv),
    )?;
    let diffs = |x: &ndarray::Array3<f64>| -> Vec<f64> {
        (1..x.dim().0)
            .flat_map(|t| {
                let a = x.index_axis(ndarray::Axis(0), t);
                let b = x.index_axis(ndarray::Axis(0), t - 1);
                a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| p - q)
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let sm = inverse_diff_variance("wind magnitude", diffs(&wm).into_iter())?;
    let sp = inverse_diff_variance("wind power", diffs(&wp).into_iter())?;
    Ok((sm, sp))
}

fn check_shapes(
    pred: &ArrayView5<f64>,
    target: &ArrayView5<f64>,
    config: &LossConfig,
) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let g = config.geometry();
    let (b, t, v, ny, nx) = pred.dim();
    if v != config.variables.len() || ny != g.n_lat || nx != g.n_lon {
        return Err(Error::Shape(format!(
            "prediction {:?} does not fit {} variables on a {}x{} grid",
            pred.shape(),
            config.variables.len(),
            g.n_lat,
            g.n_lon
        )));
    }
    if b == 0 || t == 0 {
        return Err(Error::Shape("empty batch or rollout".into()));
    }
    Ok(())
}

/// Loss over `(batch, step, variable, lat, lon)` arrays and, on request, its
/// gradient with respect to `pred`.
pub(crate) fn loss_and_grad(
    pred: ArrayView5<f64>,
    target: ArrayView5<f64>,
    config: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Array5<f64>>)> {
    check_shapes(&pred, &target, config)?;
    let (nb, nt, nv, ny, nx) = pred.dim();
    let area = config.area_weights();
    let loc = config.location_weights();
    let norm = 1.0 / (nb * nt * ny * nx) as f64;
    let sw: Vec<f64> = config
        .inverse_diff_variance
        .iter()
        .zip(&config.variable_weights)
        .map(|(s, w)| s * w)
        .collect();
    let wind = if config.has_wind_terms() {
        config.wind_indices()
    } else {
        None
    };
    let sm = config.wind_magnitude_inverse_diff_variance * config.wind_magnitude_weight;
    let sp = config.wind_power_inverse_diff_variance * config.wind_power_weight;
    let mut grad = want_grad.then(|| Array5::<f64>::zeros(pred.raw_dim()));
    let mut total = 0.0;
    for b in 0..nb {
        for t in 0..nt {
            for i in 0..ny {
                for j in 0..nx {
                    let c = i * nx + j;
                    let cw = area[c] * loc[c];
                    let mut cell = 0.0;
                    for v in 0..nv {
                        let e = pred[[b, t, v, i, j]] - target[[b, t, v, i, j]];
                        cell += sw[v] * e * e;
                        if let Some(g) = grad.as_mut() {
                            g[[b, t, v, i, j]] = 2.0 * sw[v] * e * cw * norm;
                        }
                    }
                    if let Some((iu, iv)) = wind {
                        let (pu, pv) = (pred[[b, t, iu, i, j]], pred[[b, t, iv, i, j]]);
                        let (tu, tv) = (target[[b, t, iu, i, j]], target[[b, t, iv, i, j]]);
                        let pm = (pu * pu + pv * pv).sqrt();
                        let tm = (tu * tu + tv * tv).sqrt();
                        let em = pm - tm;
                        let ep = pm * pm * pm - tm * tm * tm;
                        cell += sm * em * em + sp * ep * ep;
                        if let Some(g) = grad.as_mut() {
                            if pm > 0.0 {
                                let d_pm = (2.0 * sm * em + 6.0 * sp * ep * pm * pm) * cw * norm;
                                g[[b, t, iu, i, j]] += d_pm * pu / pm;
                                g[[b, t, iv, i, j]] += d_pm * pv / pm;
                            }
                        }
                    }
                    total += cw * cell;
                }
            }
        }
    }
    Ok((total * norm, grad))
}

/// Spatially weighted squared error averaged over initializations, rollout
/// steps and cells, summed over variables (including the derived wind terms).
pub fn weighted_loss(
    pred: ArrayView5<f64>,
    target: ArrayView5<f64>,
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    loss_and_grad(pred, target, config, false).map(|(l, _)| l)
}
