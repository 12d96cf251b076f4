//! Shared domain types: hourly generation panels, gridded weather states,
//! location sets and calendar covariates.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use ndarray::{Array2, Array4, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Thermal,
    Solar,
    Wind,
    Hydro,
    Geothermal,
    Import,
    Demand,
}

impl Technology {
    pub const ALL: [Technology; 7] = [
        Technology::Thermal,
        Technology::Solar,
        Technology::Wind,
        Technology::Hydro,
        Technology::Geothermal,
        Technology::Import,
        Technology::Demand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technology::Thermal => "thermal",
            Technology::Solar => "solar",
            Technology::Wind => "wind",
            Technology::Hydro => "hydro",
            Technology::Geothermal => "geothermal",
            Technology::Import => "import",
            Technology::Demand => "demand",
        }
    }

    /// Generation technologies must be non-negative; imports are net
    /// injections and demand follows its own convention.
    pub fn is_generation(self) -> bool {
        !matches!(self, Technology::Import | Technology::Demand)
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technology::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown technology `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub plant_id: String,
    pub technology: Technology,
}

impl SeriesKey {
    pub fn new(plant_id: impl Into<String>, technology: Technology) -> Self {
        Self {
            plant_id: plant_id.into(),
            technology,
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.plant_id, self.technology)
    }
}

/// Hourly energy records keyed by plant and technology, in GWh.
///
/// Every series holds one entry per timestamp; `None` marks a missing hour.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    start: DateTime<Utc>,
    len: usize,
    series: BTreeMap<SeriesKey, Vec<Option<f64>>>,
}

impl TimeSeriesPanel {
    pub fn new(
        start: DateTime<Utc>,
        len: usize,
        series: BTreeMap<SeriesKey, Vec<Option<f64>>>,
    ) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("panel must contain at least one timestamp"));
        }
        for (key, values) in &series {
            if values.len() != len {
                return Err(Error::Shape(format!(
                    "series {key} has {} values for {len} timestamps",
                    values.len()
                )));
            }
            for (i, v) in values.iter().enumerate() {
                let Some(v) = v else { continue };
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("series {key}, hour {i}")));
                }
                if key.technology.is_generation() && *v < 0.0 {
                    return Err(Error::invalid(format!(
                        "negative generation {v} in series {key}, hour {i}"
                    )));
                }
            }
        }
        Ok(Self { start, len, series })
    }

    /// Builds a panel from explicit timestamps, checking the one-hour step.
    pub fn from_timestamps(
        timestamps: &[DateTime<Utc>],
        series: BTreeMap<SeriesKey, Vec<Option<f64>>>,
    ) -> Result<Self> {
        let start = *timestamps
            .first()
            .ok_or_else(|| Error::invalid("panel must contain at least one timestamp"))?;
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1] - pair[0] != Duration::hours(1) {
                return Err(Error::NonConstantStep(format!(
                    "{} -> {} at index {}",
                    pair[0].to_rfc3339(),
                    pair[1].to_rfc3339(),
                    i + 1
                )));
            }
        }
        Self::new(start, timestamps.len(), series)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::hours(i as i64)
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        (0..self.len).map(|i| self.timestamp(i)).collect()
    }

    pub fn series(&self) -> &BTreeMap<SeriesKey, Vec<Option<f64>>> {
        &self.series
    }

    pub fn get(&self, key: &SeriesKey) -> Option<&[Option<f64>]> {
        self.series.get(key).map(Vec::as_slice)
    }

    pub fn plants(&self, technology: Technology) -> Vec<&str> {
        self.series
            .keys()
            .filter(|k| k.technology == technology)
            .map(|k| k.plant_id.as_str())
            .collect()
    }

    pub fn has_technology(&self, technology: Technology) -> bool {
        self.series.keys().any(|k| k.technology == technology)
    }

    /// Hour-by-hour sum over all series of one technology. An hour is missing
    /// if any contributing series is missing; `None` if the technology is absent.
    pub fn aggregate(&self, technology: Technology) -> Option<Vec<Option<f64>>> {
        let mut out: Option<Vec<Option<f64>>> = None;
        for (key, values) in &self.series {
            if key.technology != technology {
                continue;
            }
            let acc = out.get_or_insert_with(|| vec![Some(0.0); self.len]);
            for (a, v) in acc.iter_mut().zip(values) {
                *a = match (*a, *v) {
                    (Some(a), Some(v)) => Some(a + v),
                    _ => None,
                };
            }
        }
        out
    }

    /// Returns a copy with every series multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let series = self
            .series
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|x| x.map(|x| x * factor)).collect()))
            .collect();
        Self::new(self.start, self.len, series)
    }

    pub fn with_series(mut self, key: SeriesKey, values: Vec<Option<f64>>) -> Result<Self> {
        self.series.insert(key, values);
        Self::new(self.start, self.len, self.series)
    }
}

/// Regular latitude/longitude grid with an ordered variable list and a time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat0: f64,
    pub dlat: f64,
    pub n_lat: usize,
    pub lon0: f64,
    pub dlon: f64,
    pub n_lon: usize,
    pub variables: Vec<String>,
    pub t0: DateTime<Utc>,
    /// Step in seconds.
    pub dt: i64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dlat > 0.0 && self.dlon > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        if !(self.lat0.is_finite() && self.lon0.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        if self.n_lat < 2 || self.n_lon < 2 {
            return Err(Error::invalid(
                "grid needs at least 2 cells along each axis",
            ));
        }
        let unique: BTreeSet<&str> = self.variables.iter().map(String::as_str).collect();
        if unique.len() != self.variables.len() {
            return Err(Error::invalid("grid variable names must be unique"));
        }
        if self.variables.is_empty() {
            return Err(Error::invalid("grid needs at least one variable"));
        }
        if self.dt <= 0 || 86_400 % self.dt != 0 {
            return Err(Error::invalid(format!(
                "time step {}s must be positive and divide one day",
                self.dt
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat0 + i as f64 * self.dlat
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon0 + j as f64 * self.dlon
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i * self.n_lon + j
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn time(&self, step: usize) -> DateTime<Utc> {
        self.t0 + Duration::seconds(self.dt * step as i64)
    }
}

/// Dense `[time][variable][lat][lon]` stack of grid states.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStateSequence {
    spec: GridSpec,
    data: Array4<f32>,
}

impl GridStateSequence {
    pub fn new(spec: GridSpec, data: Array4<f32>) -> Result<Self> {
        spec.validate()?;
        let (_, nv, ny, nx) = data.dim();
        if nv != spec.n_vars() || ny != spec.n_lat || nx != spec.n_lon {
            return Err(Error::Shape(format!(
                "data shape {:?} does not match grid ({} vars, {}x{})",
                data.dim(),
                spec.n_vars(),
                spec.n_lat,
                spec.n_lon
            )));
        }
        if data.dim().0 < 2 {
            return Err(Error::invalid("grid sequence needs at least 2 time steps"));
        }
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid element {idx:?}")));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn n_times(&self) -> usize {
        self.data.dim().0
    }

    /// State at one time as `[variable][lat][lon]`.
    pub fn state(&self, t: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), t)
    }

    pub fn field(&self, t: usize, var: usize) -> ArrayView2<'_, f32> {
        self.data
            .index_axis(ndarray::Axis(0), t)
            .index_axis_move(ndarray::Axis(0), var)
    }

    /// Sub-sequence of time steps `[from, to)`.
    pub fn slice_time(&self, from: usize, to: usize) -> Result<Self> {
        if to > self.n_times() || from >= to {
            return Err(Error::invalid(format!(
                "time slice {from}..{to} out of range for {} steps",
                self.n_times()
            )));
        }
        let mut spec = self.spec.clone();
        spec.t0 = self.spec.time(from);
        let data = self
            .data
            .slice(ndarray::s![from..to, .., .., ..])
            .to_owned();
        Self::new(spec, data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocationSet {
    entries: Vec<Location>,
}

impl LocationSet {
    pub fn new(entries: Vec<Location>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for loc in &entries {
            if !seen.insert(loc.name.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate location name `{}`",
                    loc.name
                )));
            }
            if !(loc.lat.is_finite() && loc.lon.is_finite()) {
                return Err(Error::NonFinite(format!("coordinates of `{}`", loc.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Location] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Nearest center along one axis; ties go to the lower index.
fn nearest_index(x: f64, origin: f64, step: f64, n: usize) -> Option<usize> {
    let half = step / 2.0;
    let last = origin + (n - 1) as f64 * step;
    if x < origin - half || x > last + half {
        return None;
    }
    let pos = ((x - origin) / step).floor();
    let lo = (pos.max(0.0) as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let d_lo = (x - (origin + lo as f64 * step)).abs();
    let d_hi = (x - (origin + hi as f64 * step)).abs();
    Some(if d_hi < d_lo { hi } else { lo })
}

/// Maps every location to the `(lat_index, lon_index)` of its nearest cell center.
pub fn snap_to_grid(
    locations: &LocationSet,
    spec: &GridSpec,
) -> Result<BTreeMap<String, (usize, usize)>> {
    spec.validate()?;
    locations
        .entries()
        .iter()
        .map(|loc| {
            let i = nearest_index(loc.lat, spec.lat0, spec.dlat, spec.n_lat);
            let j = nearest_index(loc.lon, spec.lon0, spec.dlon, spec.n_lon);
            match (i, j) {
                (Some(i), Some(j)) => Ok((loc.name.clone(), (i, j))),
                _ => Err(Error::OutOfDomain {
                    name: loc.name.clone(),
                    lat: loc.lat,
                    lon: loc.lon,
                }),
            }
        })
        .collect()
}

/// Angle pair on the unit circle for `value` on a cycle of length `period`.
fn cyclic(value: f64, period: f64) -> (f64, f64) {
    let angle = TAU * value / period;
    (angle.sin(), angle.cos())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalendarCovariates {
    pub hour: Vec<u32>,
    /// Monday = 0.
    pub day_of_week: Vec<u32>,
    pub month: Vec<u32>,
    pub hour_sin: Vec<f64>,
    pub hour_cos: Vec<f64>,
    pub dow_sin: Vec<f64>,
    pub dow_cos: Vec<f64>,
    pub month_sin: Vec<f64>,
    pub month_cos: Vec<f64>,
}

impl CalendarCovariates {
    pub const N_ENCODED: usize = 6;
    pub const ENCODED_NAMES: [&'static str; 6] = [
        "hour_sin",
        "hour_cos",
        "dow_sin",
        "dow_cos",
        "month_sin",
        "month_cos",
    ];

    pub fn len(&self) -> usize {
        self.hour.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hour.is_empty()
    }

    /// Sine/cosine encodings of row `i` in a fixed order.
    pub fn encoded_row(&self, i: usize) -> [f64; 6] {
        [
            self.hour_sin[i],
            self.hour_cos[i],
            self.dow_sin[i],
            self.dow_cos[i],
            self.month_sin[i],
            self.month_cos[i],
        ]
    }

    /// One row per timestamp, columns in [`Self::ENCODED_NAMES`] order.
    pub fn encoded_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), Self::N_ENCODED), |(i, j)| {
            self.encoded_row(i)[j]
        })
    }
}

pub fn calendar_features(timestamps: &[DateTime<Utc>]) -> CalendarCovariates {
    let mut cal = CalendarCovariates::default();
    for ts in timestamps {
        let hour = ts.hour();
        let dow = ts.weekday().num_days_from_monday();
        let month = ts.month();
        let (hs, hc) = cyclic(hour as f64, 24.0);
        let (ds, dc) = cyclic(dow as f64, 7.0);
        let (ms, mc) = cyclic((month - 1) as f64, 12.0);
        cal.hour.push(hour);
        cal.day_of_week.push(dow);
        cal.month.push(month);
        cal.hour_sin.push(hs);
        cal.hour_cos.push(hc);
        cal.dow_sin.push(ds);
        cal.dow_cos.push(dc);
        cal.month_sin.push(ms);
        cal.month_cos.push(mc);
    }
    cal
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn grid() -> GridSpec {
        GridSpec {
            lat0: -30.25,
            dlat: 0.25,
            n_lat: 4,
            lon0: -71.5,
            dlon: 0.25,
            n_lon: 4,
            variables: vec!["u10".into(), "v10".into()],
            t0: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            dt: 21_600,
        }
    }

    fn locs(points: &[(&str, f64, f64)]) -> LocationSet {
        LocationSet::new(
            points
                .iter()
                .map(|(n, lat, lon)| Location {
                    name: n.to_string(),
                    lat: *lat,
                    lon: *lon,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Brute-force nearest center over all cells.
    fn enumerate_nearest(spec: &GridSpec, lat: f64, lon: f64) -> (usize, usize) {
        let mut best = (f64::INFINITY, (0, 0));
        for i in 0..spec.n_lat {
            for j in 0..spec.n_lon {
                let d = (lat - spec.lat(i)).powi(2) + (lon - spec.lon(j)).powi(2);
                if d < best.0 {
                    best = (d, (i, j));
                }
            }
        }
        best.1
    }

    #[test]
    fn snap_matches_enumeration() {
        let spec = grid();
        let snapped = snap_to_grid(&locs(&[("a", -30.10, -71.20)]), &spec).unwrap();
        assert_eq!(snapped["a"], (1, 1));
        assert_eq!(enumerate_nearest(&spec, -30.10, -71.20), (1, 1));
    }

    #[test]
    fn snap_on_center_and_tie() {
        let spec = grid();
        let s = snap_to_grid(
            &locs(&[("c", -29.75, -71.0), ("t", -30.125, -71.375)]),
            &spec,
        )
        .unwrap();
        assert_eq!(s["c"], (2, 2));
        assert_eq!(s["t"], (0, 0));
    }

    #[test]
    fn snap_out_of_domain_names_location() {
        let err = snap_to_grid(&locs(&[("far", -40.0, -71.0)]), &grid()).unwrap_err();
        assert!(err.to_string().contains("far"), "{err}");
        // Half a cell beyond the last center is still inside.
        assert!(snap_to_grid(&locs(&[("edge", -29.375, -70.625)]), &grid()).is_ok());
    }

    #[test]
    fn snap_is_idempotent() {
        let spec = grid();
        let first = snap_to_grid(&locs(&[("p", -29.9, -70.8)]), &spec).unwrap()["p"];
        let center = locs(&[("p", spec.lat(first.0), spec.lon(first.1))]);
        assert_eq!(snap_to_grid(&center, &spec).unwrap()["p"], first);
    }

    #[test]
    fn calendar_examples() {
        let t = |y, m, d, h| Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap();
        let cal = calendar_features(&[t(2021, 1, 1, 0), t(2021, 1, 1, 6), t(2021, 7, 15, 13)]);
        assert_eq!(cal.hour[0], 0);
        assert_eq!(cal.hour_sin[0], 0.0);
        assert_eq!(cal.hour_cos[0], 1.0);
        assert!((cal.hour_sin[1] - 1.0).abs() < 1e-15);
        assert!(cal.hour_cos[1].abs() < 1e-15);
        assert_eq!(cal.month[2], 7);
        assert_eq!(cal.day_of_week[2], 3);
        assert_eq!(cal.hour[2], 13);
    }

    #[test]
    fn calendar_unit_circle_for_random_instants() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let stamps: Vec<_> = (0..10_000)
            .map(|_| {
                Utc.timestamp_opt(rng.random_range(0..4_000_000_000i64), 0)
                    .unwrap()
            })
            .collect();
        let cal = calendar_features(&stamps);
        for i in 0..cal.len() {
            for (s, c) in [
                (cal.hour_sin[i], cal.hour_cos[i]),
                (cal.dow_sin[i], cal.dow_cos[i]),
                (cal.month_sin[i], cal.month_cos[i]),
            ] {
                assert!((s * s + c * c - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_spec_validation() {
        let mut spec = grid();
        assert!(spec.validate().is_ok());
        spec.dt = 7 * 3600;
        assert!(spec.validate().is_err());
        let mut spec = grid();
        spec.variables.push("u10".into());
        assert!(spec.validate().is_err());
        let mut spec = grid();
        spec.n_lat = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn panel_rejects_bad_series() {
        let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let mut series = BTreeMap::new();
        series.insert(
            SeriesKey::new("w1", Technology::Wind),
            vec![Some(1.0), Some(-1.0)],
        );
        assert!(TimeSeriesPanel::new(start, 2, series.clone()).is_err());
        series.insert(
            SeriesKey::new("w1", Technology::Wind),
            vec![Some(1.0), None],
        );
        series.insert(
            SeriesKey::new("x", Technology::Import),
            vec![Some(-3.0), Some(2.0)],
        );
        let panel = TimeSeriesPanel::new(start, 2, series).unwrap();
        assert_eq!(
            panel.aggregate(Technology::Wind).unwrap(),
            vec![Some(1.0), None]
        );
        let stamps = [start, start + Duration::hours(2)];
        assert!(matches!(
            TimeSeriesPanel::from_timestamps(&stamps, BTreeMap::new()),
            Err(Error::NonConstantStep(_))
        ));
    }
}
