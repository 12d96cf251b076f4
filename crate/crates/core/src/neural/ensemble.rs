//! Decomposition-ensemble forecasting: one TiDE model per EEMD component,
//! component forecasts summed.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::iterative::randomized_iterative_predict;
use super::tide::{ForecastTask, TideConfig, TideModel};
use super::train::{train_tide, SeriesDataset, TrainReport};
use crate::container::{config_echo, parse_config, ModelContainer, Section};
use crate::decomposition::{eemd, EemdConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub tide: TideConfig,
    pub eemd: EemdConfig,
    /// Interval chains averaged per component forecast.
    pub n_chains: usize,
    /// False trains a single model on the raw series.
    pub decompose: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            tide: TideConfig::default(),
            eemd: EemdConfig::default(),
            n_chains: 4,
            decompose: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionEnsemble {
    pub config: EnsembleConfig,
    /// IMF count of the training decomposition; the last component is the
    /// residue.
    pub n_imfs: usize,
    pub components: Vec<TideModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub total: Vec<f64>,
    /// Fastest IMF first, residue last.
    pub components: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleEcho {
    ensemble: EnsembleConfig,
    n_imfs: usize,
}

impl DecompositionEnsemble {
    /// Component series of `x`: IMFs padded or truncated to `n_imfs`, with
    /// the residue holding everything else.
    fn split(&self, x: &[f64], n_imfs: Option<usize>) -> Result<Vec<Vec<f64>>> {
        if !self.config.decompose {
            return Ok(vec![x.to_vec()]);
        }
        let cfg = EemdConfig {
            max_imfs: n_imfs.or(self.config.eemd.max_imfs),
            ..self.config.eemd.clone()
        };
        let d = eemd(x, &cfg)?;
        let want = n_imfs.unwrap_or(d.imfs.len());
        let mut parts: Vec<Vec<f64>> = (0..want)
            .map(|j| d.imfs.get(j).cloned().unwrap_or_else(|| vec![0.0; x.len()]))
            .collect();
        let mut residue = x.to_vec();
        for p in &parts {
            for (r, v) in residue.iter_mut().zip(p) {
                *r -= v;
            }
        }
        parts.push(residue);
        Ok(parts)
    }

    /// Decomposes the whole target of `data` and trains one model per
    /// component. Components train in parallel; each is deterministic.
    pub fn fit(data: &SeriesDataset, config: &EnsembleConfig) -> Result<(Self, Vec<TrainReport>)> {
        config.tide.validate()?;
        data.validate()?;
        if config.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        let mut shell = Self {
            config: config.clone(),
            n_imfs: 0,
            components: Vec::new(),
        };
        let parts = shell.split(&data.target, None)?;
        shell.n_imfs = parts.len() - 1;
        let trained: Vec<(TideModel, TrainReport)> = parts
            .into_par_iter()
            .enumerate()
            .map(|(j, part)| {
                let tide = TideConfig {
                    seed: config.tide.seed.wrapping_add(j as u64),
                    ..config.tide.clone()
                };
                train_tide(&data.with_target(part), &tide)
                    .map_err(|e| e.context(format!("component {j}")))
            })
            .collect::<Result<_>>()?;
        let (components, reports) = trained.into_iter().unzip();
        shell.components = components;
        Ok((shell, reports))
    }

    /// Decomposes `task.history` with the training IMF count and sums the
    /// per-component randomized iterative forecasts out to `lead`.
    pub fn predict(&self, task: &ForecastTask, lead: usize, seed: u64) -> Result<EnsembleForecast> {
        let parts = self.split(&task.history, Some(self.n_imfs))?;
        let components: Vec<Vec<f64>> = parts
            .into_par_iter()
            .zip(self.components.par_iter())
            .enumerate()
            .map(|(j, (history, model))| {
                let sub = ForecastTask {
                    history,
                    covariates: task.covariates.clone(),
                    statics: task.statics.clone(),
                };
                randomized_iterative_predict(model, &sub, lead, self.config.n_chains, seed)
                    .map(|f| f.mean)
                    .map_err(|e| e.context(format!("component {j}")))
            })
            .collect::<Result<_>>()?;
        let total = (0..lead)
            .map(|i| components.iter().map(|c| c[i]).sum())
            .collect();
        Ok(EnsembleForecast { total, components })
    }

    pub fn lookback(&self) -> usize {
        self.config.tide.lookback
    }

    pub fn horizon(&self) -> usize {
        self.config.tide.horizon
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new("tide-ensemble");
        let echo = EnsembleEcho {
            ensemble: self.config.clone(),
            n_imfs: self.n_imfs,
        };
        c.push(Section::new("ensemble", config_echo(&echo), Vec::new()));
        for (j, m) in self.components.iter().enumerate() {
            for s in m.to_sections(&format!("c{j}/")) {
                c.push(s);
            }
        }
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind("tide-ensemble")?;
        let echo: EnsembleEcho = parse_config(c.section("ensemble")?)?;
        let n = if echo.ensemble.decompose {
            echo.n_imfs + 1
        } else {
            1
        };
        let components = (0..n)
            .map(|j| TideModel::from_sections(c, &format!("c{j}/")))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: echo.ensemble,
            n_imfs: echo.n_imfs,
            components,
        })
    }
}

/// Fits the ensemble on the whole of `data` and forecasts `lead` steps past
/// its end. `future_covariates` continues `data.covariates` and needs at
/// least `lead + horizon` rows.
pub fn decompose_predict_ensemble(
    data: &SeriesDataset,
    future_covariates: ArrayView2<f64>,
    config: &EnsembleConfig,
    lead: usize,
) -> Result<(DecompositionEnsemble, EnsembleForecast)> {
    let (ensemble, _) = DecompositionEnsemble::fit(data, config)?;
    let l = config.tide.lookback;
    if data.len() < l {
        return Err(Error::invalid("series shorter than the lookback"));
    }
    let covariates: Array2<f64> = concatenate![
        Axis(0),
        data.covariates.slice(s![data.len() - l.., ..]),
        future_covariates
    ];
    let task = ForecastTask {
        history: data.target.clone(),
        covariates,
        statics: data.statics.clone(),
    };
    let forecast = ensemble.predict(&task, lead, config.tide.seed)?;
    Ok((ensemble, forecast))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(target: Vec<f64>) -> SeriesDataset {
        let n = target.len();
        SeriesDataset {
            covariates: Array2::from_shape_fn((n + 64, 1), |(t, _)| {
                (t as f64 * std::f64::consts::TAU / 24.0).sin()
            })
            .slice(s![..n, ..])
            .to_owned(),
            target,
            covariate_names: vec!["hour_sin".into()],
            statics: vec![],
        }
    }

    fn small_config() -> EnsembleConfig {
        EnsembleConfig {
            tide: TideConfig {
                lookback: 16,
                horizon: 6,
                interval_set: vec![3, 6],
                max_epochs: 3,
                dropout: 0.0,
                ..TideConfig::default()
            },
            eemd: EemdConfig {
                ensemble_size: 4,
                ..EemdConfig::default()
            },
            n_chains: 2,
            decompose: true,
        }
    }

    #[test]
    fn constant_input_forecasts_the_constant() {
        let data = dataset(vec![3.5; 120]);
        let future = Array2::from_shape_fn((12, 1), |(t, _)| t as f64 * 0.01);
        let (ens, f) =
            decompose_predict_ensemble(&data, future.view(), &small_config(), 6).unwrap();
        assert_eq!(ens.n_imfs, 0);
        assert_eq!(f.total, vec![3.5; 6]);
    }

    #[test]
    fn total_is_sum_of_components() {
        let target: Vec<f64> = (0..160)
            .map(|t| (t as f64 * 0.4).sin() + 0.01 * t as f64)
            .collect();
        let data = dataset(target);
        let future = Array2::from_shape_fn((12, 1), |(t, _)| (t as f64).cos());
        let (ens, f) =
            decompose_predict_ensemble(&data, future.view(), &small_config(), 6).unwrap();
        assert_eq!(f.components.len(), ens.n_imfs + 1);
        for i in 0..6 {
            let sum: f64 = f.components.iter().map(|c| c[i]).sum();
            assert_eq!(f.total[i], sum);
        }
        let back = DecompositionEnsemble::from_container(
            &ModelContainer::decode(&ens.to_container().encode()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, ens);
    }
}
