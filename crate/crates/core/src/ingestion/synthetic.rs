//! Seeded synthetic datasets with planted ground truth.
//!
//! One scenario drives three products that share a single hourly wind field:
//! the 6-hourly grid, hourly station observations at wind-farm locations, and
//! a generation panel whose thermal plants follow the marginal-response model
//! with planted coefficients.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::csv_io::StationTable;
use crate::data::{
    GridSpec, GridStateSequence, Location, LocationSet, SeriesKey, Technology, TimeSeriesPanel,
};
use crate::econometrics::PlantLabel;
use crate::error::{Error, Result};

const STREAM_FIELD: u64 = 1;
const STREAM_STATIONS: u64 = 2;
const STREAM_LOCATIONS: u64 = 3;
const STREAM_PANEL: u64 = 4;
const STREAM_TWO_TONE: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary AR(1) path with marginal standard deviation `sigma`.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64, sigma: f64) -> Vec<f64> {
    let innovation = sigma * (1.0 - phi * phi).max(0.0).sqrt();
    let mut x = sigma * gauss(rng);
    (0..n)
        .map(|_| {
            let out = x;
            x = phi * x + innovation * gauss(rng);
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelScenario {
    pub alpha: f64,
    /// Solar, wind, demand, wind ramp, solar ramp.
    pub beta: [f64; 5],
    /// Hydro, geothermal, imports.
    pub gamma: [f64; 3],
    /// January first.
    pub month_offsets: [f64; 12],
    /// Offsets for successive calendar years starting at the first year; cycles if short.
    pub year_offsets: Vec<f64>,
    pub noise_scale: f64,
    pub n_thermal_plants: usize,
    /// Per wind farm, GWh per hour at rated output.
    pub wind_capacity: f64,
    pub solar_capacity: f64,
}

impl Default for PanelScenario {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            beta: [-0.67, -0.95, 0.8, 0.1, -0.1],
            gamma: [-0.3, -0.5, -0.4],
            month_offsets: [
                0.0, 0.1, 0.2, 0.15, -0.1, -0.2, -0.3, -0.15, 0.05, 0.1, 0.2, 0.25,
            ],
            year_offsets: vec![0.0, 0.3, -0.2],
            noise_scale: 0.05,
            n_thermal_plants: 20,
            wind_capacity: 0.5,
            solar_capacity: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindFieldScenario {
    pub lat0: f64,
    pub dlat: f64,
    pub n_lat: usize,
    pub lon0: f64,
    pub dlon: f64,
    pub n_lon: usize,
    pub step_hours: usize,
    /// Mean eastward flow, m/s.
    pub base_flow: f64,
    pub diurnal_amplitude: f64,
    pub spatial_amplitude: f64,
    /// Degrees.
    pub spatial_wavelength: f64,
    /// Eastward phase speed of the spatial pattern, degrees per hour.
    pub advection_speed: f64,
    pub noise_scale: f64,
    pub ar_coefficient: f64,
    pub n_locations: usize,
    pub station_noise: f64,
}

impl Default for WindFieldScenario {
    fn default() -> Self {
        Self {
            lat0: -34.0,
            dlat: 0.25,
            n_lat: 12,
            lon0: -72.0,
            dlon: 0.25,
            n_lon: 12,
            step_hours: 6,
            base_flow: 6.0,
            diurnal_amplitude: 1.5,
            spatial_amplitude: 3.0,
            spatial_wavelength: 2.0,
            advection_speed: 0.25 / 12.0,
            noise_scale: 0.3,
            ar_coefficient: 0.97,
            n_locations: 4,
            station_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub hours: usize,
    pub start: DateTime<Utc>,
    pub panel: PanelScenario,
    pub wind: WindFieldScenario,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self::new(0, 24 * 60)
    }
}

impl SyntheticScenario {
    pub fn new(seed: u64, hours: usize) -> Self {
        Self {
            seed,
            hours,
            start: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            panel: PanelScenario::default(),
            wind: WindFieldScenario::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.wind;
        let p = &self.panel;
        if self.hours < 2 {
            return Err(Error::invalid("scenario needs at least 2 hours"));
        }
        if w.step_hours == 0 || 24 % w.step_hours != 0 {
            return Err(Error::invalid("grid step must divide 24 hours"));
        }
        if (self.hours - 1) / w.step_hours < 1 {
            return Err(Error::invalid("scenario too short for two grid states"));
        }
        if w.n_lat < 2 || w.n_lon < 2 || w.n_locations == 0 || p.n_thermal_plants == 0 {
            return Err(Error::invalid(
                "grid dimensions and plant counts must be positive",
            ));
        }
        let positive = [
            w.dlat,
            w.dlon,
            w.spatial_wavelength,
            p.wind_capacity,
            p.solar_capacity,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(
                "grid spacing, wavelength and capacities must be positive",
            ));
        }
        let non_negative = [
            w.noise_scale,
            w.station_noise,
            w.diurnal_amplitude,
            w.spatial_amplitude,
            p.noise_scale,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "noise scales and amplitudes must be non-negative",
            ));
        }
        if !(0.0..1.0).contains(&w.ar_coefficient) {
            return Err(Error::invalid("AR coefficient must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Analytic hourly wind/temperature/pressure field shared by every product.
struct Field<'a> {
    w: &'a WindFieldScenario,
    noise: [Vec<f64>; 2],
}

impl<'a> Field<'a> {
    fn new(scenario: &'a SyntheticScenario) -> Self {
        let w = &scenario.wind;
        let mut rng = rng_for(scenario.seed, STREAM_FIELD);
        let a = ar1(&mut rng, scenario.hours, w.ar_coefficient, w.noise_scale);
        let b = ar1(&mut rng, scenario.hours, w.ar_coefficient, w.noise_scale);
        Self { w, noise: [a, b] }
    }

    /// `(u10, v10, t2m, sp)` at a point and hour.
    fn eval(&self, lat: f64, lon: f64, hour: usize) -> [f64; 4] {
        let w = self.w;
        let t = hour as f64;
        let extent_x = w.n_lon as f64 * w.dlon;
        let extent_y = w.n_lat as f64 * w.dlat;
        let px = TAU * (lon - w.lon0 - w.advection_speed * t) / w.spatial_wavelength;
        let py = TAU * (lat - w.lat0) / w.spatial_wavelength;
        let day = TAU * t / 24.0;
        let mode_a = (PI * (lon - w.lon0) / extent_x).cos();
        let mode_b = (PI * (lat - w.lat0) / extent_y).sin();
        let u = w.base_flow
            + w.diurnal_amplitude * day.sin()
            + w.spatial_amplitude * px.sin() * py.cos()
            + self.noise[0][hour] * mode_a;
        let v = 0.3 * w.base_flow
            + 0.5 * w.diurnal_amplitude * day.cos()
            + 0.7 * w.spatial_amplitude * px.cos() * py.sin()
            + self.noise[1][hour] * mode_b;
        let t2m =
            288.0 + 2.0 * w.diurnal_amplitude * (day - 0.75 * PI).sin() - 0.5 * (lat - w.lat0);
        let sp =
            101_325.0 + 100.0 * w.spatial_amplitude * (px + 1.0).cos() + 40.0 * self.noise[0][hour];
        [u, v, t2m, sp]
    }
}

pub fn generate_grid(scenario: &SyntheticScenario) -> Result<GridStateSequence> {
    scenario.validate()?;
    let field = Field::new(scenario);
    grid_from_field(scenario, &field)
}

fn grid_from_field(scenario: &SyntheticScenario, field: &Field<'_>) -> Result<GridStateSequence> {
    let w = &scenario.wind;
    let n_times = (scenario.hours - 1) / w.step_hours + 1;
    let spec = GridSpec {
        lat0: w.lat0,
        dlat: w.dlat,
        n_lat: w.n_lat,
        lon0: w.lon0,
        dlon: w.dlon,
        n_lon: w.n_lon,
        variables: ["u10", "v10", "t2m", "sp"].map(String::from).to_vec(),
        t0: scenario.start,
        dt: (w.step_hours * 3600) as i64,
    };
    let mut data = Array4::<f32>::zeros((n_times, 4, w.n_lat, w.n_lon));
    for t in 0..n_times {
        for i in 0..w.n_lat {
            for j in 0..w.n_lon {
                let vals = field.eval(spec.lat(i), spec.lon(j), t * w.step_hours);
                for (v, x) in vals.iter().enumerate() {
                    data[[t, v, i, j]] = *x as f32;
                }
            }
        }
    }
    GridStateSequence::new(spec, data)
}

fn locations(scenario: &SyntheticScenario) -> Result<LocationSet> {
    let w = &scenario.wind;
    let mut rng = rng_for(scenario.seed, STREAM_LOCATIONS);
    let entries = (0..w.n_locations)
        .map(|k| {
            // Interior cell, jittered by up to a fifth of a cell.
            let i = rng.random_range(1..w.n_lat.max(3) - 1).min(w.n_lat - 1);
            let j = rng.random_range(1..w.n_lon.max(3) - 1).min(w.n_lon - 1);
            let jitter_lat = rng.random_range(-0.2..0.2) * w.dlat;
            let jitter_lon = rng.random_range(-0.2..0.2) * w.dlon;
            Location {
                name: format!("loc{:02}", k + 1),
                lat: w.lat0 + i as f64 * w.dlat + jitter_lat,
                lon: w.lon0 + j as f64 * w.dlon + jitter_lon,
            }
        })
        .collect();
    LocationSet::new(entries)
}

pub fn generate_stations(scenario: &SyntheticScenario) -> Result<(LocationSet, StationTable)> {
    scenario.validate()?;
    let field = Field::new(scenario);
    stations_from_field(scenario, &field)
}

fn stations_from_field(
    scenario: &SyntheticScenario,
    field: &Field<'_>,
) -> Result<(LocationSet, StationTable)> {
    let locs = locations(scenario)?;
    let mut rng = rng_for(scenario.seed, STREAM_STATIONS);
    let mut table = StationTable {
        start: scenario.start,
        names: locs.entries().iter().map(|l| l.name.clone()).collect(),
        wind_speed: Vec::new(),
        t2m: Vec::new(),
        sp: Vec::new(),
    };
    for loc in locs.entries() {
        let mut ws = Vec::with_capacity(scenario.hours);
        let mut t2m = Vec::with_capacity(scenario.hours);
        let mut sp = Vec::with_capacity(scenario.hours);
        for h in 0..scenario.hours {
            let [u, v, t, p] = field.eval(loc.lat, loc.lon, h);
            let noise = scenario.wind.station_noise * gauss(&mut rng);
            ws.push(((u * u + v * v).sqrt() + noise).abs());
            t2m.push(t);
            sp.push(p);
        }
        table.wind_speed.push(ws);
        table.t2m.push(t2m);
        table.sp.push(sp);
    }
    Ok((locs, table))
}

/// Generation panel whose aggregate thermal series is the planted
/// marginal-response model. Thermal plants alternate between wind-following
/// (even index) and solar-following (odd index).
pub fn generate_panel(
    scenario: &SyntheticScenario,
    stations: &StationTable,
) -> Result<(TimeSeriesPanel, BTreeMap<String, PlantLabel>)> {
    scenario.validate()?;
    let p = &scenario.panel;
    let n = scenario.hours;
    let mut rng = rng_for(scenario.seed, STREAM_PANEL);
    let stamps: Vec<DateTime<Utc>> = (0..n)
        .map(|h| scenario.start + Duration::hours(h as i64))
        .collect();
    let first_year = scenario.start.year();

    let mut series: BTreeMap<SeriesKey, Vec<Option<f64>>> = BTreeMap::new();

    let mut wind_total = vec![0.0; n];
    for (k, name) in stations.names.iter().enumerate() {
        let values: Vec<f64> = stations.wind_speed[k]
            .iter()
            .map(|ws| p.wind_capacity * (ws / 12.0).powi(3).min(1.0))
            .collect();
        for (acc, v) in wind_total.iter_mut().zip(&values) {
            *acc += v;
        }
        series.insert(
            SeriesKey::new(name.clone(), Technology::Wind),
            values.into_iter().map(Some).collect(),
        );
    }

    let cloud = ar1(&mut rng, n, 0.9, 0.15);
    let solar: Vec<f64> = stamps
        .iter()
        .zip(&cloud)
        .map(|(ts, c)| {
            let h = ts.hour() as f64;
            let sun = (PI * (h - 6.0) / 12.0).sin().max(0.0);
            p.solar_capacity * sun * (0.85 + c).clamp(0.0, 1.0)
        })
        .collect();
    let demand_noise = ar1(&mut rng, n, 0.9, 0.2);
    let demand: Vec<f64> = stamps
        .iter()
        .zip(&demand_noise)
        .map(|(ts, e)| {
            let h = ts.hour() as f64;
            let doy = ts.ordinal0() as f64;
            let weekday = if ts.weekday().num_days_from_monday() < 5 {
                0.3
            } else {
                -0.3
            };
            8.0 + 1.2 * (TAU * (h - 9.0) / 24.0).sin()
                + weekday
                + 0.5 * (TAU * doy / 365.0).sin()
                + e
        })
        .collect();
    let hydro_noise = ar1(&mut rng, n, 0.95, 0.1);
    let hydro: Vec<f64> = stamps
        .iter()
        .zip(&hydro_noise)
        .map(|(ts, e)| (2.0 + 0.6 * (TAU * ts.ordinal0() as f64 / 365.0 + 1.0).sin() + e).max(0.0))
        .collect();
    let geothermal: Vec<f64> = (0..n)
        .map(|_| (0.05 + 0.005 * gauss(&mut rng)).abs())
        .collect();
    let import_noise = ar1(&mut rng, n, 0.95, 0.3);
    let imports: Vec<f64> = stamps
        .iter()
        .zip(&import_noise)
        .map(|(ts, e)| e + 0.1 * (TAU * ts.hour() as f64 / 24.0).cos())
        .collect();

    let as_series = |v: &[f64]| v.iter().copied().map(Some).collect::<Vec<_>>();
    series.insert(
        SeriesKey::new("solar1", Technology::Solar),
        as_series(&solar),
    );
    series.insert(
        SeriesKey::new("system", Technology::Demand),
        as_series(&demand),
    );
    series.insert(
        SeriesKey::new("hydro1", Technology::Hydro),
        as_series(&hydro),
    );
    series.insert(
        SeriesKey::new("geo1", Technology::Geothermal),
        as_series(&geothermal),
    );
    series.insert(
        SeriesKey::new("imports", Technology::Import),
        as_series(&imports),
    );

    let plants = p.n_thermal_plants as f64;
    let plant_noise = p.noise_scale / plants.sqrt();
    let mut labels = BTreeMap::new();
    for k in 0..p.n_thermal_plants {
        let id = format!("th{:02}", k + 1);
        let wind_following = k % 2 == 0;
        // Shares sum to the aggregate coefficient across an even fleet.
        let (solar_share, wind_share) = if wind_following {
            (0.2, 1.8)
        } else {
            (1.8, 0.2)
        };
        let (solar_share, wind_share) =
            if p.n_thermal_plants % 2 == 1 && k == p.n_thermal_plants - 1 {
                (1.0, 1.0)
            } else {
                (solar_share, wind_share)
            };
        labels.insert(
            id.clone(),
            if wind_following {
                PlantLabel::WindFollowing
            } else {
                PlantLabel::SolarFollowing
            },
        );
        let b1 = solar_share * p.beta[0] / plants;
        let b2 = wind_share * p.beta[1] / plants;
        let values: Vec<Option<f64>> = (0..n)
            .map(|t| {
                let ts = stamps[t];
                let dw = if t == 0 {
                    0.0
                } else {
                    wind_total[t] - wind_total[t - 1]
                };
                let ds = if t == 0 { 0.0 } else { solar[t] - solar[t - 1] };
                let year = (ts.year() - first_year) as usize;
                let eta_a = if p.year_offsets.is_empty() {
                    0.0
                } else {
                    p.year_offsets[year % p.year_offsets.len()]
                };
                let eta_m = p.month_offsets[ts.month0() as usize];
                let g = (p.alpha + eta_m + eta_a) / plants
                    + b1 * solar[t]
                    + b2 * wind_total[t]
                    + p.beta[2] / plants * demand[t]
                    + p.beta[3] / plants * dw
                    + p.beta[4] / plants * ds
                    + (p.gamma[0] * hydro[t]
                        + p.gamma[1] * geothermal[t]
                        + p.gamma[2] * imports[t])
                        / plants
                    + plant_noise * gauss(&mut rng);
                Some(g)
            })
            .collect();
        if let Some(t) = values.iter().position(|v| v.unwrap() < 0.0) {
            return Err(Error::invalid(format!(
                "planted coefficients give negative thermal output for {id} at hour {t}"
            )));
        }
        series.insert(SeriesKey::new(id, Technology::Thermal), values);
    }
    let panel = TimeSeriesPanel::new(scenario.start, n, series)?;
    Ok((panel, labels))
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub panel: TimeSeriesPanel,
    pub grid: GridStateSequence,
    pub locations: LocationSet,
    pub stations: StationTable,
    pub planted_labels: BTreeMap<String, PlantLabel>,
}

pub fn generate_synthetic(scenario: &SyntheticScenario) -> Result<SyntheticOutput> {
    scenario.validate()?;
    let field = Field::new(scenario);
    let grid = grid_from_field(scenario, &field)?;
    let (locations, stations) = stations_from_field(scenario, &field)?;
    let (panel, planted_labels) = generate_panel(scenario, &stations)?;
    Ok(SyntheticOutput {
        panel,
        grid,
        locations,
        stations,
        planted_labels,
    })
}

/// Hourly wind-speed-like series: two incommensurate tones plus white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoToneScenario {
    pub seed: u64,
    pub hours: usize,
    pub offset: f64,
    pub fast_period: f64,
    pub fast_amplitude: f64,
    pub slow_period: f64,
    pub slow_amplitude: f64,
    pub noise_scale: f64,
}

impl TwoToneScenario {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            hours: 1200,
            offset: 8.0,
            fast_period: 17.0,
            fast_amplitude: 1.0,
            slow_period: 67.0,
            slow_amplitude: 1.5,
            noise_scale: 0.15,
        }
    }
}

pub fn two_tone_series(s: &TwoToneScenario) -> Result<Vec<f64>> {
    if s.hours == 0 || !(s.fast_period > 0.0 && s.slow_period > 0.0) || !(s.noise_scale >= 0.0) {
        return Err(Error::invalid(
            "two-tone scenario needs positive length and periods",
        ));
    }
    let mut rng = rng_for(s.seed, STREAM_TWO_TONE);
    // Random phases so different seeds see different alignments.
    let phase_fast = rng.random_range(0.0..TAU);
    let phase_slow = rng.random_range(0.0..TAU);
    Ok((0..s.hours)
        .map(|t| {
            let t = t as f64;
            s.offset
                + s.fast_amplitude * (TAU * t / s.fast_period + phase_fast).sin()
                + s.slow_amplitude * (TAU * t / s.slow_period + phase_slow).sin()
                + s.noise_scale * gauss(&mut rng)
        })
        .collect())
}
