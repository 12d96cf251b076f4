//! Data assembly shared by the short-term, grid and hybrid subcommands.

use std::collections::BTreeMap;

use chrono::Duration;
use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ventus_core::container::{config_echo, parse_config, ModelContainer, Section};
use ventus_core::data::{
    calendar_features, snap_to_grid, CalendarCovariates, GridStateSequence, LocationSet,
};
use ventus_core::gridcaster::{apply_bias_correction, hindcast, BiasModel, GridForecaster};
use ventus_core::hybrid_eval::{stitch_hybrid, ForecastBundle, ForecastPoint, HybridConfig};
use ventus_core::ingestion::StationTable;
use ventus_core::neural::{
    select_columns, DecompositionEnsemble, EnsembleConfig, ForecastTask, SeriesDataset,
};
use ventus_core::{Error, Result};

/// First index of the held-out period.
pub fn split_index(len: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1]"
        )));
    }
    Ok(((len as f64) * train_fraction).floor() as usize)
}

/// Calendar encodings followed by the station weather covariates.
pub fn station_covariates(table: &StationTable, k: usize) -> (Array2<f64>, Vec<String>) {
    let n = table.len();
    let cal = calendar_features(&table.timestamps()).encoded_matrix();
    let mut x = Array2::zeros((n, CalendarCovariates::N_ENCODED + 2));
    x.slice_mut(s![.., ..CalendarCovariates::N_ENCODED])
        .assign(&cal);
    for h in 0..n {
        x[[h, CalendarCovariates::N_ENCODED]] = table.t2m[k][h];
        x[[h, CalendarCovariates::N_ENCODED + 1]] = table.sp[k][h];
    }
    let mut names: Vec<String> = CalendarCovariates::ENCODED_NAMES.map(String::from).to_vec();
    names.push("t2m".into());
    names.push("sp".into());
    (x, names)
}

fn location_index(table: &StationTable, name: &str) -> Result<usize> {
    table
        .index_of(name)
        .ok_or_else(|| Error::MissingEntry(format!("station `{name}`")))
}

/// Wind-speed target with covariates for the first `until` hours.
pub fn station_dataset(table: &StationTable, name: &str, until: usize) -> Result<SeriesDataset> {
    let k = location_index(table, name)?;
    let (x, names) = station_covariates(table, k);
    let mut data = SeriesDataset {
        target: table.wind_speed[k][..until].to_vec(),
        covariates: x.slice(s![..until, ..]).to_owned(),
        covariate_names: names,
        statics: Vec::new(),
    };
    let dropped = data.drop_constant_covariates();
    if !dropped.is_empty() {
        log::info!("{name}: dropped constant covariates {dropped:?}");
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TideTrainConfig {
    pub train_fraction: f64,
    /// Empty trains every station.
    pub locations: Vec<String>,
    pub ensemble: EnsembleConfig,
}

impl Default for TideTrainConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            locations: Vec::new(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

/// One decomposition ensemble per station, keyed by station name.
#[derive(Debug, Clone, PartialEq)]
pub struct TideSet {
    pub models: BTreeMap<String, DecompositionEnsemble>,
}

#[derive(Serialize, Deserialize)]
struct TideSetEcho {
    locations: Vec<String>,
}

impl TideSet {
    pub fn train(table: &StationTable, config: &TideTrainConfig) -> Result<Self> {
        let until = split_index(table.len(), config.train_fraction)?;
        let names = if config.locations.is_empty() {
            table.names.clone()
        } else {
            config.locations.clone()
        };
        let mut models = BTreeMap::new();
        for name in names {
            let data = station_dataset(table, &name, until)?;
            let (ensemble, reports) = DecompositionEnsemble::fit(&data, &config.ensemble)
                .map_err(|e| e.context(format!("station {name}")))?;
            for (j, r) in reports.iter().enumerate() {
                log::info!(
                    "{name} component {j}: {} epochs, best validation loss {:.5}",
                    r.epochs_run,
                    r.best_validation_loss
                );
            }
            models.insert(name, ensemble);
        }
        Ok(Self { models })
    }

    pub fn get(&self, name: &str) -> Result<&DecompositionEnsemble> {
        self.models
            .get(name)
            .ok_or_else(|| Error::MissingEntry(format!("short-term model for `{name}`")))
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new("tide-set");
        let echo = TideSetEcho {
            locations: self.models.keys().cloned().collect(),
        };
        c.push(Section::new("set", config_echo(&echo), Vec::new()));
        for (name, m) in &self.models {
            for s in m.to_container().sections {
                c.push(Section::new(
                    format!("{name}:{}", s.name),
                    s.config,
                    s.params,
                ));
            }
        }
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind("tide-set")?;
        let echo: TideSetEcho = parse_config(c.section("set")?)?;
        let mut models = BTreeMap::new();
        for name in echo.locations {
            let prefix = format!("{name}:");
            let mut inner = ModelContainer::new("tide-ensemble");
            for s in &c.sections {
                if let Some(rest) = s.name.strip_prefix(&prefix) {
                    inner.push(Section::new(rest, s.config.clone(), s.params.clone()));
                }
            }
            let m = DecompositionEnsemble::from_container(&inner)
                .map_err(|e| e.context(format!("station {name}")))?;
            models.insert(name, m);
        }
        Ok(Self { models })
    }
}

/// Forecast task whose history ends at hour `issue` inclusive, with
/// covariates running `lead` hours past it plus one model horizon.
pub fn station_task(
    table: &StationTable,
    name: &str,
    model: &DecompositionEnsemble,
    issue: usize,
    lead: usize,
) -> Result<ForecastTask> {
    let k = location_index(table, name)?;
    let l = model.lookback();
    let end = issue + 1 + lead + model.horizon();
    if issue + 1 < l || end > table.len() {
        return Err(Error::invalid(format!(
            "issue hour {issue} needs hours {} to {} of station data, which has {}",
            (issue + 1).saturating_sub(l),
            end,
            table.len()
        )));
    }
    let (x, names) = station_covariates(table, k);
    let wanted = model.components[0].covariate_scaler.names.clone();
    let x = select_columns(&x, &names, &wanted)?;
    Ok(ForecastTask {
        history: table.wind_speed[k][..=issue].to_vec(),
        covariates: x.slice(s![issue + 1 - l..end, ..]).to_owned(),
        statics: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridRunConfig {
    pub hybrid: HybridConfig,
    pub train_fraction: f64,
    pub issue_every_hours: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl Default for HybridRunConfig {
    fn default() -> Self {
        Self {
            hybrid: HybridConfig::default(),
            train_fraction: 0.75,
            issue_every_hours: 24,
            n_chains: 4,
            seed: 0,
        }
    }
}

pub struct HybridInputs<'a> {
    pub short: &'a TideSet,
    pub grid: &'a GridForecaster,
    pub bias: &'a BiasModel,
    pub grid_data: &'a GridStateSequence,
    pub stations: &'a StationTable,
    pub locations: &'a LocationSet,
}

/// Station hours at which forecasts are issued: on the grid clock, inside
/// the held-out period, with truth available out to the last medium lead.
pub fn issue_hours(inputs: &HybridInputs, config: &HybridRunConfig) -> Result<Vec<usize>> {
    let spec = inputs.grid_data.spec();
    let step = (spec.dt / 3600) as usize;
    if spec.dt <= 0 || spec.dt % 3600 != 0 {
        return Err(Error::invalid(
            "grid time step must be a whole number of hours",
        ));
    }
    if spec.t0 != inputs.stations.start {
        return Err(Error::invalid(
            "grid and station data start at different times",
        ));
    }
    if config.issue_every_hours == 0 || config.issue_every_hours % step != 0 {
        return Err(Error::Config(format!(
            "issue spacing {}h is not a multiple of the {step}h grid step",
            config.issue_every_hours
        )));
    }
    let n = inputs.stations.len();
    let grid_hours = (inputs.grid_data.n_times() - 1) * step;
    let max_lead = config.hybrid.max_lead_hours;
    let horizon = inputs
        .short
        .models
        .values()
        .map(DecompositionEnsemble::horizon)
        .max()
        .unwrap_or(0);
    let lookback = inputs
        .short
        .models
        .values()
        .map(DecompositionEnsemble::lookback)
        .max()
        .unwrap_or(1);
    let first = split_index(n, config.train_fraction)?
        .max(step)
        .max(lookback - 1)
        .next_multiple_of(step);
    let hours: Vec<usize> = (first..n)
        .step_by(config.issue_every_hours)
        .filter(|&o| {
            o + max_lead < n
                && o + max_lead <= grid_hours
                && o + 1 + config.hybrid.handoff_hours + horizon <= n
        })
        .collect();
    if hours.is_empty() {
        return Err(Error::invalid(format!(
            "no issue time in the held-out period leaves room for {max_lead}h of verification"
        )));
    }
    Ok(hours)
}

/// Short-term, bias-corrected medium-term and persistence forecasts at
/// every location and issue, stitched into one bundle.
pub fn predict_hybrid(inputs: &HybridInputs, config: &HybridRunConfig) -> Result<ForecastBundle> {
    config.hybrid.validate()?;
    let spec = inputs.grid_data.spec();
    if inputs.grid.spec.variables != spec.variables {
        return Err(Error::Shape(
            "grid model and grid data variables differ".into(),
        ));
    }
    if inputs.grid.n_forcing() > 0 {
        return Err(Error::invalid(
            "grid models with forcing inputs are not supported here",
        ));
    }
    let wind = match (spec.variable_index("u10"), spec.variable_index("v10")) {
        (Some(u), Some(v)) => Some((u, v)),
        _ => return Err(Error::MissingEntry("grid variables u10 and v10".into())),
    };
    let step = (spec.dt / 3600) as usize;
    let issues = issue_hours(inputs, config)?;
    let snapped = snap_to_grid(inputs.locations, spec)?;
    let mut cells: Vec<usize> = snapped
        .values()
        .map(|&(i, j)| spec.cell_index(i, j))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let grid_issues: Vec<usize> = issues.iter().map(|o| o / step).collect();
    let n_leads = config.hybrid.max_lead_hours / step;
    let (raw, _) = hindcast(
        inputs.grid,
        inputs.grid_data,
        None,
        &grid_issues,
        n_leads,
        &cells,
        wind,
    )?;
    let corrected = apply_bias_correction(&raw, inputs.bias)?;
    let wm = corrected
        .variables
        .iter()
        .position(|v| v == "wm")
        .expect("wind pair present");

    let jobs: Vec<(&str, usize, usize)> = inputs
        .locations
        .entries()
        .iter()
        .flat_map(|loc| {
            issues
                .iter()
                .enumerate()
                .map(move |(n, &o)| (loc.name.as_str(), n, o))
        })
        .collect();
    let handoff = config.hybrid.handoff_hours;
    let per_job: Vec<(Vec<ForecastPoint>, Vec<ForecastPoint>)> = jobs
        .par_iter()
        .map(|&(name, n, o)| -> Result<_> {
            let k = location_index(inputs.stations, name)?;
            let ws = &inputs.stations.wind_speed[k];
            let issue = inputs.stations.start + Duration::hours(o as i64);
            let point = |lead: usize, value: f64| ForecastPoint {
                location: name.to_string(),
                issue,
                lead_hours: lead,
                value,
                truth: ws[o + lead],
                baseline: Some(ws[o]),
            };
            let model = inputs.short.get(name)?;
            let task = station_task(inputs.stations, name, model, o, handoff)?;
            let f = model
                .predict(&task, handoff, config.seed.wrapping_add(o as u64))
                .map_err(|e| e.context(format!("station {name}, issue hour {o}")))?;
            let short = (1..=handoff)
                .map(|lead| point(lead, f.total[lead - 1]))
                .collect();
            let (i, j) = snapped[name];
            let c = corrected
                .cells
                .binary_search(&spec.cell_index(i, j))
                .expect("cell listed");
            let medium = corrected
                .lead_hours
                .iter()
                .enumerate()
                .map(|(l, &lead)| point(lead, corrected.values[[n, l, wm, c]]))
                .collect();
            Ok((short, medium))
        })
        .collect::<Result<_>>()?;
    let (short, medium): (Vec<Vec<ForecastPoint>>, Vec<Vec<ForecastPoint>>) =
        per_job.into_iter().unzip();
    let short: Vec<ForecastPoint> = short.into_iter().flatten().collect();
    let medium: Vec<ForecastPoint> = medium.into_iter().flatten().collect();
    log::info!(
        "{} short-term and {} medium-term points",
        short.len(),
        medium.len()
    );
    stitch_hybrid(&short, &medium, &config.hybrid)
}

/// Values in a `(time, var, lat, lon)` grid averaged over time; used in
/// ingestion summaries.
pub fn variable_means(seq: &GridStateSequence) -> Vec<f64> {
    seq.data()
        .mapv(f64::from)
        .mean_axis(Axis(0))
        .map(|m| {
            m.mean_axis(Axis(1))
                .unwrap()
                .mean_axis(Axis(1))
                .unwrap()
                .to_vec()
        })
        .unwrap_or_default()
}
