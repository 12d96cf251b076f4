//! `GRIDTS1` grid tensor container.
//!
//! ```text
//! GRIDTS1\n
//! key=value\n        (lat0 dlat n_lat lon0 dlon n_lon variables t0 dt n_times)
//! DATA\n
//! <n_times * n_vars * n_lat * n_lon little-endian f32, [time][var][lat][lon]>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array4;

use super::csv_io::{format_time, parse_time};
use crate::data::{GridSpec, GridStateSequence};
use crate::error::{Error, Result};

pub const GT1_MAGIC: &str = "GRIDTS1";
const REQUIRED_KEYS: [&str; 10] = [
    "lat0",
    "dlat",
    "n_lat",
    "lon0",
    "dlon",
    "n_lon",
    "variables",
    "t0",
    "dt",
    "n_times",
];

pub fn encode_grid_tensor(seq: &GridStateSequence) -> Vec<u8> {
    let spec = seq.spec();
    let mut out = format!(
        "{GT1_MAGIC}\nlat0={}\ndlat={}\nn_lat={}\nlon0={}\ndlon={}\nn_lon={}\nvariables={}\nt0={}\ndt={}\nn_times={}\nDATA\n",
        spec.lat0,
        spec.dlat,
        spec.n_lat,
        spec.lon0,
        spec.dlon,
        spec.n_lon,
        spec.variables.join(","),
        format_time(spec.t0),
        spec.dt,
        seq.n_times()
    )
    .into_bytes();
    out.reserve(seq.data().len() * 4);
    for v in seq.data().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_grid_tensor(seq: &GridStateSequence, path: &Path) -> Result<()> {
    std::fs::write(path, encode_grid_tensor(seq)).map_err(|e| Error::io(path, e))
}

pub fn load_grid_tensor(path: &Path) -> Result<GridStateSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid_tensor(&bytes).map_err(|e| e.context(path.display().to_string()))
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n')?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).ok()
}

pub fn decode_grid_tensor(bytes: &[u8]) -> Result<GridStateSequence> {
    let mut pos = 0;
    let magic = next_line(bytes, &mut pos).unwrap_or("");
    if magic != GT1_MAGIC {
        return Err(Error::BadMagic {
            expected: GT1_MAGIC.into(),
            found: magic.chars().take(16).collect(),
        });
    }
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    loop {
        let line = next_line(bytes, &mut pos)
            .ok_or_else(|| Error::invalid("GT1 header is not terminated by a DATA line"))?;
        if line == "DATA" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("malformed GT1 header line `{line}`")))?;
        if !REQUIRED_KEYS.contains(&key) {
            return Err(Error::invalid(format!("unknown GT1 header key `{key}`")));
        }
        if header.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::invalid(format!("duplicate GT1 header key `{key}`")));
        }
    }
    for key in REQUIRED_KEYS {
        if !header.contains_key(key) {
            return Err(Error::MissingKey(key.to_string()));
        }
    }
    let float = |k: &str| {
        header[k]
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("GT1 key `{k}` is not a number: `{}`", header[k])))
    };
    let int = |k: &str| {
        header[k]
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("GT1 key `{k}` is not a count: `{}`", header[k])))
    };
    let spec = GridSpec {
        lat0: float("lat0")?,
        dlat: float("dlat")?,
        n_lat: int("n_lat")?,
        lon0: float("lon0")?,
        dlon: float("dlon")?,
        n_lon: int("n_lon")?,
        variables: header["variables"].split(',').map(str::to_string).collect(),
        t0: parse_time(&header["t0"]).map_err(Error::Invalid)?,
        dt: header["dt"].parse().map_err(|_| {
            Error::invalid(format!(
                "GT1 key `dt` is not an integer: `{}`",
                header["dt"]
            ))
        })?,
    };
    spec.validate()?;
    let n_times = int("n_times")?;

    let payload = &bytes[pos..];
    let count = n_times * spec.n_vars() * spec.n_lat * spec.n_lon;
    if payload.len() != count * 4 {
        return Err(Error::PayloadLength {
            expected: count * 4,
            found: payload.len(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("GT1 payload element {i}")));
    }
    let data = Array4::from_shape_vec((n_times, spec.n_vars(), spec.n_lat, spec.n_lon), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    GridStateSequence::new(spec, data)
}
