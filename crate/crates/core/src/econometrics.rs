//! Fixed-effects OLS for the thermal marginal-response model.
//!
//! The dependent series (aggregate thermal output or one plant) is regressed on
//! solar, wind, demand, the one-hour wind and solar ramps, hydro/geothermal/
//! import controls, and month and year dummies with an intercept.

use std::collections::BTreeSet;
use std::fmt;

use chrono::Datelike;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SeriesKey, Technology, TimeSeriesPanel};
use crate::error::{Error, Result};

pub const SOLAR: &str = "solar";
pub const WIND: &str = "wind";
pub const DEMAND: &str = "demand";
pub const WIND_RAMP: &str = "wind_ramp";
pub const SOLAR_RAMP: &str = "solar_ramp";
pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependent {
    AggregateThermal,
    Plant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSpec {
    pub dependent: Dependent,
    pub controls: bool,
    pub month_effects: bool,
    pub year_effects: bool,
    /// Two-sided critical |t| for "statistically significant".
    pub significance: f64,
    /// Relative pivot size below which a column counts as collinear.
    pub rank_tolerance: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            dependent: Dependent::AggregateThermal,
            controls: true,
            month_effects: true,
            year_effects: true,
            significance: 1.96,
            rank_tolerance: 1e-9,
        }
    }
}

impl RegressionSpec {
    pub fn for_plant(plant_id: impl Into<String>) -> Self {
        Self {
            dependent: Dependent::Plant(plant_id.into()),
            ..Self::default()
        }
    }
}

/// Dense regression problem after listwise deletion.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    /// Panel hour index of each row.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub residual_variance: f64,
    pub n_obs: usize,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.t_stats[i])
    }
}

fn dependent_series(panel: &TimeSeriesPanel, dep: &Dependent) -> Result<Vec<Option<f64>>> {
    match dep {
        Dependent::AggregateThermal => panel
            .aggregate(Technology::Thermal)
            .ok_or_else(|| Error::invalid("panel has no thermal series")),
        Dependent::Plant(id) => panel
            .get(&SeriesKey::new(id.clone(), Technology::Thermal))
            .map(<[_]>::to_vec)
            .ok_or_else(|| Error::invalid(format!("no thermal series for plant `{id}`"))),
    }
}

fn required(panel: &TimeSeriesPanel, tech: Technology) -> Result<Vec<Option<f64>>> {
    panel
        .aggregate(tech)
        .ok_or_else(|| Error::invalid(format!("panel has no {tech} series")))
}

/// Assembles the design matrix. Row `t` is kept only when every input at
/// `t` and the lagged wind/solar at `t - 1` are present; hour 0 is always
/// dropped because its ramps are undefined.
pub fn build_design(panel: &TimeSeriesPanel, spec: &RegressionSpec) -> Result<Design> {
    let y = dependent_series(panel, &spec.dependent)?;
    let solar = required(panel, Technology::Solar)?;
    let wind = required(panel, Technology::Wind)?;
    let demand = required(panel, Technology::Demand)?;
    let mut controls: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
    if spec.controls {
        for (name, tech) in [
            ("hydro", Technology::Hydro),
            ("geothermal", Technology::Geothermal),
            ("imports", Technology::Import),
        ] {
            if let Some(s) = panel.aggregate(tech) {
                controls.push((name, s));
            }
        }
    }

    let mut rows = Vec::new();
    for t in 1..panel.len() {
        let base = [
            y[t],
            solar[t],
            solar[t - 1],
            wind[t],
            wind[t - 1],
            demand[t],
        ];
        if base.iter().all(Option::is_some) && controls.iter().all(|(_, s)| s[t].is_some()) {
            rows.push(t);
        }
    }
    let first = rows
        .first()
        .copied()
        .ok_or_else(|| Error::invalid("no complete rows after listwise deletion"))?;

    let month_of = |t: usize| panel.timestamp(t).month();
    let year_of = |t: usize| panel.timestamp(t).year();
    let months: BTreeSet<u32> = rows.iter().map(|&t| month_of(t)).collect();
    let years: BTreeSet<i32> = rows.iter().map(|&t| year_of(t)).collect();
    let month_levels: Vec<u32> = if spec.month_effects && months.len() >= 2 {
        months
            .into_iter()
            .filter(|&m| m != month_of(first))
            .collect()
    } else {
        if spec.month_effects {
            log::warn!("fewer than two months present; month fixed effects dropped");
        }
        Vec::new()
    };
    let year_levels: Vec<i32> = if spec.year_effects && years.len() >= 2 {
        years.into_iter().filter(|&a| a != year_of(first)).collect()
    } else {
        Vec::new()
    };

    let mut names: Vec<String> = [INTERCEPT, SOLAR, WIND, DEMAND, WIND_RAMP, SOLAR_RAMP]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(controls.iter().map(|(n, _)| n.to_string()));
    names.extend(month_levels.iter().map(|m| format!("month_{m:02}")));
    names.extend(year_levels.iter().map(|a| format!("year_{a}")));

    let p = names.len();
    let mut x = Array2::<f64>::zeros((rows.len(), p));
    let mut yv = Vec::with_capacity(rows.len());
    for (r, &t) in rows.iter().enumerate() {
        let v = |s: &[Option<f64>], i: usize| s[i].unwrap();
        let mut row = vec![
            1.0,
            v(&solar, t),
            v(&wind, t),
            v(&demand, t),
            v(&wind, t) - v(&wind, t - 1),
            v(&solar, t) - v(&solar, t - 1),
        ];
        row.extend(controls.iter().map(|(_, s)| v(s, t)));
        row.extend(
            month_levels
                .iter()
                .map(|&m| f64::from(u8::from(month_of(t) == m))),
        );
        row.extend(
            year_levels
                .iter()
                .map(|&a| f64::from(u8::from(year_of(t) == a))),
        );
        for (c, val) in row.into_iter().enumerate() {
            x[[r, c]] = val;
        }
        yv.push(v(&y, t));
    }
    Ok(Design {
        names,
        x,
        y: yv,
        rows,
    })
}

/// Householder QR of `x`, reporting every column that is (numerically) a
/// linear combination of the columns before it.
struct Qr {
    /// One reflector per column; reflector `k` acts on rows `k..`.
    reflectors: Vec<Vec<f64>>,
    r: Array2<f64>,
}

fn householder_qr(x: &Array2<f64>, names: &[String], tol: f64) -> Result<Qr> {
    let (n, p) = x.dim();
    let mut a = x.clone();
    let mut reflectors = Vec::with_capacity(p);
    let mut collinear = Vec::new();
    // Row offset of the next reflector; lags `k` once a column is skipped.
    let mut rank = 0;
    for k in 0..p {
        let col_norm = x.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = (rank..n).map(|i| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
        if col_norm == 0.0 || norm <= tol * col_norm {
            collinear.push(names[k].clone());
            continue;
        }
        let alpha = if a[[rank, k]] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (rank..n).map(|i| a[[i, k]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..p {
                let dot: f64 = (rank..n).map(|i| v[i - rank] * a[[i, j]]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in rank..n {
                    a[[i, j]] -= f * v[i - rank];
                }
            }
        }
        reflectors.push(v);
        rank += 1;
    }
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    let r = a.slice(ndarray::s![..p, ..]).to_owned();
    Ok(Qr { reflectors, r })
}

impl Qr {
    fn apply_qt(&self, y: &mut [f64]) {
        for (k, v) in self.reflectors.iter().enumerate() {
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let dot: f64 = v.iter().zip(&y[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (yi, vi) in y[k..].iter_mut().zip(v) {
                *yi -= f * vi;
            }
        }
    }

    fn solve(&self, qty: &[f64]) -> Vec<f64> {
        let p = self.r.ncols();
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = ((i + 1)..p).map(|j| self.r[[i, j]] * beta[j]).sum();
            beta[i] = (qty[i] - s) / self.r[[i, i]];
        }
        beta
    }

    /// Diagonal of (R'R)^-1 = diag(R^-1 R^-T).
    fn inverse_gram_diagonal(&self) -> Vec<f64> {
        let p = self.r.ncols();
        let mut rinv = Array2::<f64>::zeros((p, p));
        for j in 0..p {
            rinv[[j, j]] = 1.0 / self.r[[j, j]];
            for i in (0..j).rev() {
                let s: f64 = ((i + 1)..=j).map(|k| self.r[[i, k]] * rinv[[k, j]]).sum();
                rinv[[i, j]] = -s / self.r[[i, i]];
            }
        }
        (0..p)
            .map(|i| rinv.row(i).iter().map(|v| v * v).sum())
            .collect()
    }
}

/// Least squares by orthogonal decomposition with classical homoskedastic
/// standard errors.
pub fn fit_design(design: &Design, rank_tolerance: f64) -> Result<FitResult> {
    let (n, p) = design.x.dim();
    if n < p {
        return Err(Error::Underdetermined { rows: n, cols: p });
    }
    let qr = householder_qr(&design.x, &design.names, rank_tolerance)?;
    let mut qty = design.y.clone();
    qr.apply_qt(&mut qty);
    let beta = qr.solve(&qty);

    let fitted = design.x.dot(&ndarray::Array1::from(beta.clone()));
    let residuals: Vec<f64> = design
        .y
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| y - f)
        .collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let mean_y = design.y.iter().sum::<f64>() / n as f64;
    let tss: f64 = design.y.iter().map(|y| (y - mean_y).powi(2)).sum();
    let dof = n - p;
    let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let standard_errors: Vec<f64> = qr
        .inverse_gram_diagonal()
        .into_iter()
        .map(|d| (sigma2 * d).sqrt())
        .collect();
    let t_stats = beta
        .iter()
        .zip(&standard_errors)
        .map(|(b, se)| if *se > 0.0 { b / se } else { f64::NAN })
        .collect();
    let r_squared = if tss > 0.0 {
        1.0 - rss / tss
    } else if rss == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(FitResult {
        names: design.names.clone(),
        coefficients: beta,
        standard_errors,
        t_stats,
        residual_variance: sigma2,
        n_obs: n,
        r_squared,
        residuals,
    })
}

pub fn fit_fixed_effects(panel: &TimeSeriesPanel, spec: &RegressionSpec) -> Result<FitResult> {
    let design = build_design(panel, spec)?;
    fit_design(&design, spec.rank_tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantLabel {
    WindFollowing,
    SolarFollowing,
    Unclassified,
}

impl fmt::Display for PlantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlantLabel::WindFollowing => "wind_following",
            PlantLabel::SolarFollowing => "solar_following",
            PlantLabel::Unclassified => "unclassified",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantClassification {
    pub plant_id: String,
    pub label: PlantLabel,
    /// `wind` or `solar`: the coefficient that decided (or, if unclassified,
    /// the one with the larger magnitude).
    pub deciding_coefficient: &'static str,
    pub coefficient: f64,
    pub standard_error: f64,
    pub t_stat: f64,
    /// Both coefficients significant with equal magnitude.
    pub tie: bool,
}

fn classify_fit(plant_id: &str, fit: &FitResult, threshold: f64) -> PlantClassification {
    let pick = |name: &'static str| {
        (
            name,
            fit.coefficient(name).unwrap(),
            fit.standard_error(name).unwrap(),
            fit.t_stat(name).unwrap(),
        )
    };
    let solar = pick(SOLAR);
    let wind = pick(WIND);
    let significant = |c: &(&str, f64, f64, f64)| c.3.abs() > threshold;
    let (chosen, label, tie) = match (significant(&wind), significant(&solar)) {
        (false, false) => {
            let larger = if solar.1.abs() > wind.1.abs() {
                solar
            } else {
                wind
            };
            (larger, PlantLabel::Unclassified, false)
        }
        (true, false) => (wind, PlantLabel::WindFollowing, false),
        (false, true) => (solar, PlantLabel::SolarFollowing, false),
        (true, true) => {
            if solar.1.abs() > wind.1.abs() {
                (solar, PlantLabel::SolarFollowing, false)
            } else {
                let tie = solar.1.abs() == wind.1.abs();
                if tie {
                    log::warn!("plant {plant_id}: |solar| == |wind|, labelled wind_following");
                }
                (wind, PlantLabel::WindFollowing, tie)
            }
        }
    };
    PlantClassification {
        plant_id: plant_id.to_string(),
        label,
        deciding_coefficient: chosen.0,
        coefficient: chosen.1,
        standard_error: chosen.2,
        t_stat: chosen.3,
        tie,
    }
}

/// Decides a label from a fitted plant regression. Exposed so callers with
/// their own fits apply the same rule.
pub fn classify_from_fit(
    plant_id: &str,
    fit: &FitResult,
    significance: f64,
) -> PlantClassification {
    classify_fit(plant_id, fit, significance)
}

/// Fits every plant independently (in parallel) and labels it by the larger
/// significant of the solar and wind coefficients. Output is sorted by plant id.
pub fn classify_plants(
    panel: &TimeSeriesPanel,
    plants: &[String],
    base: &RegressionSpec,
) -> Result<Vec<PlantClassification>> {
    let mut sorted: Vec<&String> = plants.iter().collect();
    sorted.sort();
    sorted.dedup();
    sorted
        .par_iter()
        .map(|id| {
            let spec = RegressionSpec {
                dependent: Dependent::Plant((*id).clone()),
                ..base.clone()
            };
            fit_fixed_effects(panel, &spec)
                .map(|fit| classify_fit(id, &fit, base.significance))
                .map_err(|e| e.context(format!("plant {id}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourStat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of a technology's aggregate output
/// for each hour of the day over one calendar year, optionally divided by
/// installed capacity.
pub fn hourly_profile(
    panel: &TimeSeriesPanel,
    technology: Technology,
    year: i32,
    capacity: Option<f64>,
) -> Result<[HourStat; 24]> {
    let series = panel
        .aggregate(technology)
        .ok_or_else(|| Error::invalid(format!("panel has no {technology} series")))?;
    let scale = match capacity {
        Some(c) if c == 0.0 || !c.is_finite() => {
            return Err(Error::invalid(format!(
                "invalid installed capacity {c} for normalization"
            )))
        }
        Some(c) => 1.0 / c,
        None => 1.0,
    };
    // Welford accumulators per hour.
    let mut acc = [(0usize, 0.0f64, 0.0f64); 24];
    let mut seen = false;
    for (t, v) in series.iter().enumerate() {
        let ts = panel.timestamp(t);
        if ts.year() != year {
            continue;
        }
        seen = true;
        let Some(v) = v else { continue };
        let x = v * scale;
        let a = &mut acc[chrono::Timelike::hour(&ts) as usize];
        a.0 += 1;
        let delta = x - a.1;
        a.1 += delta / a.0 as f64;
        a.2 += delta * (x - a.1);
    }
    if !seen {
        return Err(Error::invalid(format!("panel does not cover year {year}")));
    }
    let mut out = [HourStat {
        mean: f64::NAN,
        std: f64::NAN,
    }; 24];
    for (h, (n, mean, m2)) in acc.iter().enumerate() {
        if *n > 0 {
            out[h] = HourStat {
                mean: *mean,
                std: (m2 / *n as f64).max(0.0).sqrt(),
            };
        }
    }
    Ok(out)
}
