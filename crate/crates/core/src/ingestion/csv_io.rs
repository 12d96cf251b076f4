use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};

use crate::data::{Location, LocationSet, SeriesKey, Technology, TimeSeriesPanel};
use crate::error::{Error, Result};

const GENERATION_HEADER: [&str; 4] = ["timestamp", "plant_id", "technology", "energy_gwh"];
const LOCATION_HEADER: [&str; 3] = ["name", "lat", "lon"];
const STATION_HEADER: [&str; 5] = ["timestamp", "location", "wind_speed", "t2m", "sp"];

pub(crate) fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub(crate) fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str], source: &str) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: source.to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                found.join(",")
            ),
        });
    }
    Ok(())
}

pub fn load_generation_csv(path: &Path) -> Result<TimeSeriesPanel> {
    parse_generation_csv(open(path)?, &path.display().to_string())
}

/// Parses the four-column generation CSV into a panel on an hourly axis.
///
/// Hours absent for a series between the first and last timestamp become
/// explicit missing entries; an empty `energy_gwh` field is also missing.
pub fn parse_generation_csv(reader: impl Read, source: &str) -> Result<TimeSeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    check_header(&mut rdr, &GENERATION_HEADER, source)?;

    let mut rows: BTreeMap<(SeriesKey, DateTime<Utc>), Option<f64>> = BTreeMap::new();
    let mut stamps = BTreeSet::new();
    let mut keys = BTreeSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: source.to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let perr = |message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let ts = parse_time(&record[0]).map_err(perr)?;
        let plant = record[1].trim().to_string();
        if plant.is_empty() {
            return Err(perr("empty plant_id".into()));
        }
        let tech: Technology = record[2]
            .trim()
            .parse()
            .map_err(|e: Error| perr(e.to_string()))?;
        let raw = record[3].trim();
        let value = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| perr(format!("bad energy value `{raw}`")))?;
            if !v.is_finite() {
                return Err(perr(format!("non-finite energy value `{raw}`")));
            }
            Some(v)
        };
        let key = SeriesKey::new(plant, tech);
        if rows.insert((key.clone(), ts), value).is_some() {
            return Err(Error::DuplicateKey {
                key: format!("({}, {})", format_time(ts), key.plant_id),
                line,
            });
        }
        stamps.insert(ts);
        keys.insert(key);
    }

    let first = *stamps
        .first()
        .ok_or_else(|| Error::invalid(format!("{source}: no data rows")))?;
    let last = *stamps.last().unwrap();
    for ts in &stamps {
        let offset = *ts - first;
        if offset.num_seconds() % 3600 != 0 {
            return Err(Error::NonConstantStep(format!(
                "{} is not on the hourly axis starting {}",
                format_time(*ts),
                format_time(first)
            )));
        }
    }
    let len = ((last - first).num_hours() + 1) as usize;
    let mut series: BTreeMap<SeriesKey, Vec<Option<f64>>> =
        keys.into_iter().map(|k| (k, vec![None; len])).collect();
    for ((key, ts), value) in rows {
        let idx = (ts - first).num_hours() as usize;
        series.get_mut(&key).unwrap()[idx] = value;
    }
    TimeSeriesPanel::new(first, len, series)
}

/// Writes one row per (timestamp, series), leaving missing values empty.
pub fn write_generation_csv(panel: &TimeSeriesPanel, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    wtr.write_record(GENERATION_HEADER).map_err(io)?;
    for i in 0..panel.len() {
        let ts = format_time(panel.timestamp(i));
        for (key, values) in panel.series() {
            let energy = values[i].map(|v| v.to_string()).unwrap_or_default();
            wtr.write_record([ts.as_str(), &key.plant_id, key.technology.as_str(), &energy])
                .map_err(io)?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn load_locations_csv(path: &Path) -> Result<LocationSet> {
    let source = path.display().to_string();
    let mut rdr = csv::Reader::from_reader(open(path)?);
    check_header(&mut rdr, &LOCATION_HEADER, &source)?;
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: source.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: source.clone(),
                line,
                message: format!("bad coordinate `{s}`"),
            })
        };
        entries.push(Location {
            name: record[0].trim().to_string(),
            lat: num(&record[1])?,
            lon: num(&record[2])?,
        });
    }
    LocationSet::new(entries)
}

pub fn write_locations_csv(locations: &LocationSet, path: &Path) -> Result<()> {
    let mut out = String::from("name,lat,lon\n");
    for loc in locations.entries() {
        out.push_str(&format!("{},{},{}\n", loc.name, loc.lat, loc.lon));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Hourly observations at named locations: wind speed (m/s) plus the
/// weather covariates that are known over the forecast horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StationTable {
    pub start: DateTime<Utc>,
    pub names: Vec<String>,
    /// `[location][hour]`
    pub wind_speed: Vec<Vec<f64>>,
    /// `[location][hour]` 2 m temperature, K.
    pub t2m: Vec<Vec<f64>>,
    /// `[location][hour]` surface pressure, Pa.
    pub sp: Vec<Vec<f64>>,
}

impl StationTable {
    pub fn len(&self) -> usize {
        self.wind_speed.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        (0..self.len())
            .map(|i| self.start + Duration::hours(i as i64))
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn write_station_csv(table: &StationTable, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut out = String::new();
    out.push_str(&STATION_HEADER.join(","));
    out.push('\n');
    for h in 0..table.len() {
        let ts = format_time(table.start + Duration::hours(h as i64));
        for (k, name) in table.names.iter().enumerate() {
            out.push_str(&format!(
                "{ts},{name},{},{},{}\n",
                table.wind_speed[k][h], table.t2m[k][h], table.sp[k][h]
            ));
        }
    }
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn load_station_csv(path: &Path) -> Result<StationTable> {
    let source = path.display().to_string();
    let mut rdr = csv::Reader::from_reader(open(path)?);
    check_header(&mut rdr, &STATION_HEADER, &source)?;
    let mut rows: BTreeMap<String, BTreeMap<DateTime<Utc>, [f64; 3]>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: source.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let perr = |message: String| Error::Parse {
            path: source.clone(),
            line,
            message,
        };
        let ts = parse_time(&record[0]).map_err(perr)?;
        let name = record[1].trim().to_string();
        let mut vals = [0.0; 3];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = &record[2 + k];
            *v = raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(format!("bad value `{raw}`")))?;
        }
        if !rows.contains_key(&name) {
            order.push(name.clone());
        }
        if rows
            .entry(name.clone())
            .or_default()
            .insert(ts, vals)
            .is_some()
        {
            return Err(Error::DuplicateKey {
                key: format!("({}, {name})", format_time(ts)),
                line,
            });
        }
    }
    let first_name = order
        .first()
        .ok_or_else(|| Error::invalid(format!("{source}: no data rows")))?;
    let stamps: Vec<DateTime<Utc>> = rows[first_name].keys().copied().collect();
    let start = stamps[0];
    for (i, ts) in stamps.iter().enumerate() {
        if *ts != start + Duration::hours(i as i64) {
            return Err(Error::NonConstantStep(format!(
                "station series at {}",
                format_time(*ts)
            )));
        }
    }
    let mut table = StationTable {
        start,
        names: order.clone(),
        wind_speed: Vec::new(),
        t2m: Vec::new(),
        sp: Vec::new(),
    };
    for name in &order {
        let series = &rows[name];
        if series.keys().ne(stamps.iter()) {
            return Err(Error::invalid(format!(
                "location `{name}` has a different time axis"
            )));
        }
        table
            .wind_speed
            .push(series.values().map(|v| v[0]).collect());
        table.t2m.push(series.values().map(|v| v[1]).collect());
        table.sp.push(series.values().map(|v| v[2]).collect());
    }
    Ok(table)
}
