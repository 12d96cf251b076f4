//! Per-lead, per-variable, per-cell linear bias correction.

use ndarray::{Array3, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::wind_derivations;
use super::model::{ForcingSequence, GridForecaster};
use crate::container::{config_echo, parse_config, ModelContainer, Section};
use crate::data::GridStateSequence;
use crate::error::{Error, Result};

/// Default correction horizon: 10 days of 6-hour steps.
pub const DEFAULT_BIAS_LEADS: usize = 40;

/// Forecast or truth values indexed `(issue, lead, variable, cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub lead_hours: Vec<usize>,
    pub variables: Vec<String>,
    /// Row-major grid cell indices.
    pub cells: Vec<usize>,
    pub values: Array4<f64>,
}

impl ForecastSet {
    pub fn validate(&self) -> Result<()> {
        let (_, nl, nv, nc) = self.values.dim();
        if nl != self.lead_hours.len() || nv != self.variables.len() || nc != self.cells.len() {
            return Err(Error::Shape(format!(
                "forecast values {:?} vs {} leads, {} variables, {} cells",
                self.values.shape(),
                self.lead_hours.len(),
                self.variables.len(),
                self.cells.len()
            )));
        }
        Ok(())
    }

    fn same_keys(&self, other: &Self) -> bool {
        self.lead_hours == other.lead_hours
            && self.variables == other.variables
            && self.cells == other.cells
    }
}

/// Affine correction `alpha + beta * raw`, indexed `(lead, variable, cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel {
    pub lead_hours: Vec<usize>,
    pub variables: Vec<String>,
    pub cells: Vec<usize>,
    pub alpha: Array3<f64>,
    pub beta: Array3<f64>,
}

#[derive(Serialize, Deserialize)]
struct BiasEcho {
    lead_hours: Vec<usize>,
    variables: Vec<String>,
    cells: Vec<usize>,
}

/// Least-squares intercept and slope of `y` on `x`. A constant `x` gives
/// `(mean(y), 0)` and `false`.
pub fn simple_regression(x: &[f64], y: &[f64]) -> (f64, f64, bool) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale: f64 = x.iter().map(|a| a * a).sum::<f64>().max(f64::MIN_POSITIVE);
    if sxx <= 1e-24 * scale {
        return (my, 0.0, false);
    }
    let beta = sxy / sxx;
    (my - beta * mx, beta, true)
}

/// Ordinary least squares of target on raw for every (lead, variable, cell).
pub fn fit_bias_correction(raw: &ForecastSet, targets: &ForecastSet) -> Result<BiasModel> {
    raw.validate()?;
    targets.validate()?;
    if !raw.same_keys(targets) || raw.values.dim() != targets.values.dim() {
        return Err(Error::Shape(
            "raw forecasts and targets are not aligned".into(),
        ));
    }
    let (n, nl, nv, nc) = raw.values.dim();
    if n < 3 {
        return Err(Error::invalid(format!(
            "bias correction needs at least 3 pairs, got {n}"
        )));
    }
    let keys: Vec<(usize, usize, usize)> = (0..nl)
        .flat_map(|l| (0..nv).flat_map(move |v| (0..nc).map(move |c| (l, v, c))))
        .collect();
    let fits: Vec<(f64, f64, bool)> = keys
        .par_iter()
        .map(|&(l, v, c)| {
            let x: Vec<f64> = (0..n).map(|k| raw.values[[k, l, v, c]]).collect();
            let y: Vec<f64> = (0..n).map(|k| targets.values[[k, l, v, c]]).collect();
            simple_regression(&x, &y)
        })
        .collect();
    let mut alpha = Array3::zeros((nl, nv, nc));
    let mut beta = Array3::zeros((nl, nv, nc));
    for (&(l, v, c), &(a, b, ok)) in keys.iter().zip(&fits) {
        if !ok {
            log::warn!(
                "constant raw forecast at lead {}h, variable `{}`, cell {}: intercept-only correction",
                raw.lead_hours[l],
                raw.variables[v],
                raw.cells[c]
            );
        }
        alpha[[l, v, c]] = a;
        beta[[l, v, c]] = b;
    }
    Ok(BiasModel {
        lead_hours: raw.lead_hours.clone(),
        variables: raw.variables.clone(),
        cells: raw.cells.clone(),
        alpha,
        beta,
    })
}

/// Elementwise `alpha + beta * raw` with coefficients looked up by key.
pub fn apply_bias_correction(raw: &ForecastSet, bias: &BiasModel) -> Result<ForecastSet> {
    raw.validate()?;
    let find = |what: &str, hay: &[usize], key: usize| -> Result<usize> {
        hay.iter().position(|&h| h == key).ok_or_else(|| {
            Error::MissingEntry(format!(
                "bias correction has no {what} {key}{}",
                if what == "lead" { "h" } else { "" }
            ))
        })
    };
    let leads = raw
        .lead_hours
        .iter()
        .map(|&l| find("lead", &bias.lead_hours, l))
        .collect::<Result<Vec<_>>>()?;
    let vars = raw
        .variables
        .iter()
        .map(|v| {
            bias.variables.iter().position(|b| b == v).ok_or_else(|| {
                Error::MissingEntry(format!("bias correction has no variable `{v}`"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = raw
        .cells
        .iter()
        .map(|&c| find("cell", &bias.cells, c))
        .collect::<Result<Vec<_>>>()?;
    let mut out = raw.clone();
    for ((_, l, v, c), x) in out.values.indexed_iter_mut() {
        let key = (leads[l], vars[v], cells[c]);
        *x = bias.alpha[key] + bias.beta[key] * *x;
    }
    Ok(out)
}

impl BiasModel {
    pub fn to_container(&self) -> ModelContainer {
        let echo = BiasEcho {
            lead_hours: self.lead_hours.clone(),
            variables: self.variables.clone(),
            cells: self.cells.clone(),
        };
        let mut params: Vec<f64> = self.alpha.iter().copied().collect();
        params.extend(self.beta.iter().copied());
        let mut c = ModelContainer::new("bias");
        c.push(Section::new("bias", config_echo(&echo), params));
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind("bias")?;
        let section = c.section("bias")?;
        let e: BiasEcho = parse_config(section)?;
        let dim = (e.lead_hours.len(), e.variables.len(), e.cells.len());
        let n = dim.0 * dim.1 * dim.2;
        if section.params.len() != 2 * n {
            return Err(Error::Shape(format!(
                "bias has {} values, expected {}",
                section.params.len(),
                2 * n
            )));
        }
        let alpha =
            Array3::from_shape_vec(dim, section.params[..n].to_vec()).expect("checked length");
        let beta =
            Array3::from_shape_vec(dim, section.params[n..].to_vec()).expect("checked length");
        Ok(Self {
            lead_hours: e.lead_hours,
            variables: e.variables,
            cells: e.cells,
            alpha,
            beta,
        })
    }
}

/// Names of the corrected quantities: grid variables, then wind magnitude
/// and power when the wind pair exists.
pub fn corrected_variables(variables: &[String], wind: Option<(usize, usize)>) -> Vec<String> {
    let mut out = variables.to_vec();
    if wind.is_some() {
        out.push("wm".into());
        out.push("wp".into());
    }
    out
}

/// Values at the listed cells of a `(var, lat, lon)` state, extended with
/// the derived wind quantities.
fn cell_values(
    state: ndarray::ArrayView3<f64>,
    cells: &[usize],
    wind: Option<(usize, usize)>,
) -> Vec<Vec<f64>> {
    let (nv, _, nx) = state.dim();
    let mut out: Vec<Vec<f64>> = (0..nv)
        .map(|v| cells.iter().map(|&c| state[[v, c / nx, c % nx]]).collect())
        .collect();
    if let Some((iu, iv)) = wind {
        let u = ndarray::Array1::from(out[iu].clone());
        let v = ndarray::Array1::from(out[iv].clone());
        let (wm, wp) = wind_derivations(u.view(), v.view()).expect("equal lengths");
        out.push(wm.to_vec());
        out.push(wp.to_vec());
    }
    out
}

/// Raw forecasts and matching truths for every issue index, `n_leads`
/// model steps ahead, at the listed cells.
pub fn hindcast(
    model: &GridForecaster,
    seq: &GridStateSequence,
    forcing: Option<&ForcingSequence>,
    issues: &[usize],
    n_leads: usize,
    cells: &[usize],
    wind: Option<(usize, usize)>,
) -> Result<(ForecastSet, ForecastSet)> {
    if cells.is_empty() || issues.is_empty() || n_leads == 0 {
        return Err(Error::invalid("hindcast needs issues, leads and cells"));
    }
    if let Some(&c) = cells.iter().find(|&&c| c >= seq.spec().n_cells()) {
        return Err(Error::invalid(format!("cell {c} outside the grid")));
    }
    let variables = corrected_variables(&seq.spec().variables, wind);
    let nv = variables.len();
    let step_hours = (seq.spec().dt / 3600) as usize;
    let mut raw = Array4::zeros((issues.len(), n_leads, nv, cells.len()));
    let mut truth = raw.clone();
    let rows: Vec<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>)> = issues
        .par_iter()
        .map(|&t0| -> Result<_> {
            if t0 + n_leads >= seq.n_times() {
                return Err(Error::invalid(format!(
                    "issue {t0} plus {n_leads} leads runs past the data"
                )));
            }
            let f = model.forecast_from(seq, t0, n_leads, forcing)?;
            let p = f
                .iter()
                .map(|s| cell_values(s.view(), cells, wind))
                .collect();
            let t = (1..=n_leads)
                .map(|k| cell_values(seq.state(t0 + k).mapv(f64::from).view(), cells, wind))
                .collect();
            Ok((p, t))
        })
        .collect::<Result<_>>()?;
    for (k, (p, t)) in rows.into_iter().enumerate() {
        for l in 0..n_leads {
            for v in 0..nv {
                for c in 0..cells.len() {
                    raw[[k, l, v, c]] = p[l][v][c];
                    truth[[k, l, v, c]] = t[l][v][c];
                }
            }
        }
    }
    let lead_hours: Vec<usize> = (1..=n_leads).map(|k| k * step_hours).collect();
    let make = |values| ForecastSet {
        lead_hours: lead_hours.clone(),
        variables: variables.clone(),
        cells: cells.to_vec(),
        values,
    };
    Ok((make(raw), make(truth)))
}

/// Mean squared error per (lead, variable, cell).
pub fn per_key_mse(pred: &ForecastSet, truth: &ForecastSet) -> Result<Array3<f64>> {
    if pred.values.dim() != truth.values.dim() {
        return Err(Error::Shape("forecast sets differ in shape".into()));
    }
    let diff = &pred.values - &truth.values;
    Ok(diff.mapv(|d| d * d).mean_axis(Axis(0)).expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(values: Array4<f64>) -> ForecastSet {
        let (_, nl, nv, nc) = values.dim();
        ForecastSet {
            lead_hours: (1..=nl).map(|k| 6 * k).collect(),
            variables: (0..nv).map(|v| format!("v{v}")).collect(),
            cells: (0..nc).map(|c| 3 * c).collect(),
            values,
        }
    }

    fn random(seed: u64, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn identity_and_constant_bias() {
        let t = random(1, (10, 2, 2, 3));
        let b = fit_bias_correction(&set(t.clone()), &set(t.clone())).unwrap();
        assert!(b.alpha.iter().all(|a| a.abs() < 1e-10));
        assert!(b.beta.iter().all(|x| (x - 1.0).abs() < 1e-10));
        let b = fit_bias_correction(&set(&t + 2.0), &set(t)).unwrap();
        assert!(b.alpha.iter().all(|a| (a + 2.0).abs() < 1e-10));
        assert!(b.beta.iter().all(|x| (x - 1.0).abs() < 1e-10));
    }

    #[test]
    fn matches_closed_form_oracle() {
        let t = random(2, (50, 3, 2, 2));
        let noise = random(3, (50, 3, 2, 2));
        let raw = &t * 0.5 + &noise * 0.1;
        let b = fit_bias_correction(&set(raw.clone()), &set(t.clone())).unwrap();
        for l in 0..3 {
            for v in 0..2 {
                for c in 0..2 {
                    let x: Vec<f64> = (0..50).map(|k| raw[[k, l, v, c]]).collect();
                    let y: Vec<f64> = (0..50).map(|k| t[[k, l, v, c]]).collect();
                    let n = 50.0;
                    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
                    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
                    let sxx: f64 = x.iter().map(|a| a * a).sum();
                    let beta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
                    let alpha = (sy - beta * sx) / n;
                    assert!((b.beta[[l, v, c]] - beta).abs() < 1e-10);
                    assert!((b.alpha[[l, v, c]] - alpha).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn apply_examples() {
        let raw = set(Array4::from_elem((1, 1, 1, 1), 3.0));
        let bias = BiasModel {
            lead_hours: vec![6],
            variables: vec!["v0".into()],
            cells: vec![0],
            alpha: Array3::from_elem((1, 1, 1), 1.0),
            beta: Array3::from_elem((1, 1, 1), 2.0),
        };
        assert_eq!(
            apply_bias_correction(&raw, &bias).unwrap().values[[0, 0, 0, 0]],
            7.0
        );
        let ident = BiasModel {
            alpha: Array3::zeros((1, 1, 1)),
            beta: Array3::ones((1, 1, 1)),
            ..bias.clone()
        };
        assert_eq!(apply_bias_correction(&raw, &ident).unwrap(), raw);
    }

    #[test]
    fn missing_lead_is_named() {
        let raw = set(Array4::zeros((1, 2, 1, 1)));
        let bias = BiasModel {
            lead_hours: vec![6],
            variables: vec!["v0".into()],
            cells: vec![0],
            alpha: Array3::zeros((1, 1, 1)),
            beta: Array3::ones((1, 1, 1)),
        };
        let err = apply_bias_correction(&raw, &bias).unwrap_err().to_string();
        assert!(err.contains("lead 12h"), "{err}");
    }

    #[test]
    fn corrected_residuals_are_orthogonal_to_raw() {
        let t = random(4, (40, 2, 2, 2));
        let raw = &t * 0.8 + random(5, (40, 2, 2, 2)) * 0.3 + 1.0;
        let (r, tt) = (set(raw.clone()), set(t.clone()));
        let b = fit_bias_correction(&r, &tt).unwrap();
        let c = apply_bias_correction(&r, &b).unwrap();
        for l in 0..2 {
            for v in 0..2 {
                for cell in 0..2 {
                    let dot: f64 = (0..40)
                        .map(|k| {
                            (t[[k, l, v, cell]] - c.values[[k, l, v, cell]]) * raw[[k, l, v, cell]]
                        })
                        .sum();
                    assert!(dot.abs() < 1e-8, "{dot}");
                }
            }
        }
    }

    #[test]
    fn never_increases_in_sample_mse() {
        let t = random(6, (30, 3, 2, 4));
        let raw = &t * 1.3 - 0.4 + random(7, (30, 3, 2, 4)) * 0.5;
        let (r, tt) = (set(raw), set(t));
        let b = fit_bias_correction(&r, &tt).unwrap();
        let before = per_key_mse(&r, &tt).unwrap();
        let after = per_key_mse(&apply_bias_correction(&r, &b).unwrap(), &tt).unwrap();
        for (a, b) in after.iter().zip(before.iter()) {
            assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn constant_raw_falls_back_to_intercept() {
        let t = random(8, (5, 1, 1, 1));
        let raw = Array4::from_elem((5, 1, 1, 1), 4.0);
        let b = fit_bias_correction(&set(raw), &set(t.clone())).unwrap();
        assert_eq!(b.beta[[0, 0, 0]], 0.0);
        assert!((b.alpha[[0, 0, 0]] - t.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn too_few_pairs_and_misalignment_are_errors() {
        let t = random(9, (2, 1, 1, 1));
        assert!(fit_bias_correction(&set(t.clone()), &set(t)).is_err());
        let a = set(random(10, (4, 1, 1, 1)));
        let mut b = a.clone();
        b.cells = vec![7];
        assert!(fit_bias_correction(&a, &b).is_err());
    }

    #[test]
    fn container_round_trip() {
        let t = random(11, (6, 2, 2, 2));
        let b = fit_bias_correction(&set(&t * 2.0), &set(t)).unwrap();
        let back =
            BiasModel::from_container(&ModelContainer::decode(&b.to_container().encode()).unwrap())
                .unwrap();
        assert_eq!(back, b);
    }
}
