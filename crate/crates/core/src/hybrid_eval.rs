//! Hybrid stitching of the short- and medium-term regimes, skill metrics and
//! report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::csv_io::{format_time, parse_time};

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("rmse of an empty sample"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let se: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((se / predictions.len() as f64).sqrt())
}

/// RMSE over N series of horizon H: `sqrt(sum ||y_i - yhat_i||^2 / (N H))`.
pub fn panel_rmse(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predicted series vs {} true series",
            predictions.len(),
            truths.len()
        )));
    }
    let h = predictions[0].len();
    if predictions.iter().chain(truths).any(|s| s.len() != h) || h == 0 {
        return Err(Error::Shape(
            "series must share one non-zero horizon".into(),
        ));
    }
    let flat_p: Vec<f64> = predictions.concat();
    let flat_t: Vec<f64> = truths.concat();
    rmse(&flat_p, &flat_t)
}

/// One forecast value with its verifying observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPoint {
    pub location: String,
    pub issue: DateTime<Utc>,
    pub lead_hours: usize,
    pub value: f64,
    pub truth: f64,
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleRecord {
    pub location: String,
    pub issue: DateTime<Utc>,
    pub lead_hours: usize,
    pub short_term: Option<f64>,
    pub medium_term: Option<f64>,
    pub baseline: Option<f64>,
    pub truth: f64,
}

impl BundleRecord {
    /// Short-term value where present, else medium-term.
    pub fn point_forecast(&self) -> Option<f64> {
        self.short_term.or(self.medium_term)
    }
}

/// Stitched hybrid forecasts, sorted by location, issue and lead.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle {
    pub records: Vec<BundleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    /// Last hourly lead served by the short-term model.
    pub handoff_hours: usize,
    /// Last 6-hourly lead served by the medium-term model.
    pub max_lead_hours: usize,
    pub medium_step_hours: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            handoff_hours: 48,
            max_lead_hours: 240,
            medium_step_hours: 6,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.handoff_hours == 0 || self.medium_step_hours == 0 {
            return Err(Error::Config(
                "handoff and medium step must be positive".into(),
            ));
        }
        if self.handoff_hours % self.medium_step_hours != 0 {
            return Err(Error::Config(format!(
                "handoff {}h is not on the {}-hour medium grid",
                self.handoff_hours, self.medium_step_hours
            )));
        }
        if self.max_lead_hours < self.handoff_hours {
            return Err(Error::Config("max lead precedes the handoff".into()));
        }
        Ok(())
    }

    pub fn short_leads(&self) -> impl Iterator<Item = usize> {
        1..=self.handoff_hours
    }

    pub fn medium_leads(&self) -> impl Iterator<Item = usize> {
        (self.handoff_hours..=self.max_lead_hours).step_by(self.medium_step_hours)
    }
}

type Key = (String, DateTime<Utc>);

fn index(
    points: &[ForecastPoint],
    what: &str,
) -> Result<BTreeMap<Key, BTreeMap<usize, ForecastPoint>>> {
    let mut out: BTreeMap<Key, BTreeMap<usize, ForecastPoint>> = BTreeMap::new();
    for p in points {
        if !(p.value.is_finite() && p.truth.is_finite())
            || p.baseline.is_some_and(|b| !b.is_finite())
        {
            return Err(Error::NonFinite(format!(
                "{what} forecast for {} at lead {}h",
                p.location, p.lead_hours
            )));
        }
        let slot = out.entry((p.location.clone(), p.issue)).or_default();
        if slot.insert(p.lead_hours, p.clone()).is_some() {
            return Err(Error::invalid(format!(
                "duplicate {what} forecast for {} issued {} at lead {}h",
                p.location,
                format_time(p.issue),
                p.lead_hours
            )));
        }
    }
    Ok(out)
}

/// Hourly short-term leads up to the handoff, 6-hourly medium-term leads
/// from the handoff on. Both values are kept at the handoff lead. Leads
/// outside a model's regime are ignored.
pub fn stitch_hybrid(
    short: &[ForecastPoint],
    medium: &[ForecastPoint],
    config: &HybridConfig,
) -> Result<ForecastBundle> {
    config.validate()?;
    let short = index(short, "short-term")?;
    let medium = index(medium, "medium-term")?;
    let keys: BTreeSet<&Key> = short.keys().chain(medium.keys()).collect();
    let empty = BTreeMap::new();
    let mut records = Vec::new();
    for key in keys {
        let context = || format!("location {}, issue {}", key.0, format_time(key.1));
        let s = short.get(key).unwrap_or(&empty);
        let m = medium.get(key).unwrap_or(&empty);
        for lead in config.short_leads() {
            let p = s
                .get(&lead)
                .ok_or_else(|| Error::Coverage(lead.to_string()).context(context()))?;
            let med = (lead == config.handoff_hours)
                .then(|| m.get(&lead))
                .flatten();
            records.push(BundleRecord {
                location: key.0.clone(),
                issue: key.1,
                lead_hours: lead,
                short_term: Some(p.value),
                medium_term: med.map(|q| q.value),
                baseline: p.baseline.or(med.and_then(|q| q.baseline)),
                truth: p.truth,
            });
        }
        for lead in config.medium_leads() {
            let p = m
                .get(&lead)
                .ok_or_else(|| Error::Coverage(lead.to_string()).context(context()))?;
            if lead == config.handoff_hours {
                continue;
            }
            records.push(BundleRecord {
                location: key.0.clone(),
                issue: key.1,
                lead_hours: lead,
                short_term: None,
                medium_term: Some(p.value),
                baseline: p.baseline,
                truth: p.truth,
            });
        }
    }
    Ok(ForecastBundle { records })
}

const BUNDLE_HEADER: [&str; 7] = [
    "location",
    "issue_time",
    "lead_hours",
    "short_term",
    "medium_term",
    "baseline",
    "truth",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

impl ForecastBundle {
    /// Writes `bundle.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("bundle.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
        w.write_record(BUNDLE_HEADER).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.location.clone(),
                format_time(r.issue),
                r.lead_hours.to_string(),
                opt(r.short_term),
                opt(r.medium_term),
                opt(r.baseline),
                format!("{:.16e}", r.truth),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Reads `bundle.csv` from `dir`.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("bundle.csv");
        let source = path.display().to_string();
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: source.clone(),
            line,
            message,
        };
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        if header != BUNDLE_HEADER {
            return Err(parse_err(
                1,
                format!("expected header `{}`", BUNDLE_HEADER.join(",")),
            ));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| parse_err(line, e.to_string()))?;
            let num = |k: usize| -> Result<Option<f64>> {
                let s = row.get(k).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| parse_err(line, format!("column {}: {e}", BUNDLE_HEADER[k])))
            };
            records.push(BundleRecord {
                location: row.get(0).unwrap_or("").to_string(),
                issue: parse_time(row.get(1).unwrap_or("")).map_err(|m| parse_err(line, m))?,
                lead_hours: row
                    .get(2)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(line, format!("lead_hours: {e}")))?,
                short_term: num(3)?,
                medium_term: num(4)?,
                baseline: num(5)?,
                truth: num(6)?.ok_or_else(|| parse_err(line, "truth is missing".into()))?,
            });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadSkill {
    pub lead_hours: usize,
    pub rmse_model: f64,
    pub rmse_baseline: f64,
    pub normalized_rmse: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub start_hours: usize,
    pub end_hours: usize,
    pub n_leads: usize,
    pub mean_rmse_model: f64,
    pub mean_rmse_baseline: f64,
    pub mean_improvement: f64,
    pub min_improvement: f64,
    pub max_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkillReport {
    pub leads: Vec<LeadSkill>,
    pub crossover_lead: Option<usize>,
    pub windows: Vec<WindowSummary>,
}

/// Per-lead RMSE: RMSE over issues for each location, then the mean over
/// locations in name order.
fn per_lead_rmse(
    samples: &BTreeMap<usize, BTreeMap<String, (Vec<f64>, Vec<f64>)>>,
) -> Result<BTreeMap<usize, f64>> {
    samples
        .iter()
        .map(|(&lead, by_loc)| {
            let mut sum = 0.0;
            for (p, t) in by_loc.values() {
                sum += rmse(p, t)?;
            }
            Ok((lead, sum / by_loc.len() as f64))
        })
        .collect()
}

fn normalize(model: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if model == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        model / baseline
    }
}

/// Smallest lead from which the model beats the baseline at every later lead.
pub fn crossover(leads: &[LeadSkill]) -> Option<usize> {
    let mut first = None;
    for l in leads.iter().rev() {
        if l.rmse_model < l.rmse_baseline {
            first = Some(l.lead_hours);
        } else {
            break;
        }
    }
    first
}

/// Per-lead skill of the point forecast against the baseline, plus
/// summaries over closed lead windows such as `(14, 38)`.
pub fn skill_report(bundle: &ForecastBundle, windows: &[(usize, usize)]) -> Result<SkillReport> {
    if bundle.records.is_empty() {
        return Err(Error::invalid("empty forecast bundle"));
    }
    let mut model: BTreeMap<usize, BTreeMap<String, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    let mut base = model.clone();
    for r in &bundle.records {
        let Some(p) = r.point_forecast() else {
            continue;
        };
        let b = r.baseline.ok_or_else(|| {
            Error::MissingEntry(format!(
                "baseline for {} issued {} at lead {}h",
                r.location,
                format_time(r.issue),
                r.lead_hours
            ))
        })?;
        let m = model
            .entry(r.lead_hours)
            .or_default()
            .entry(r.location.clone())
            .or_default();
        m.0.push(p);
        m.1.push(r.truth);
        let q = base
            .entry(r.lead_hours)
            .or_default()
            .entry(r.location.clone())
            .or_default();
        q.0.push(b);
        q.1.push(r.truth);
    }
    if model.is_empty() {
        return Err(Error::invalid("bundle holds no model forecasts"));
    }
    let rm = per_lead_rmse(&model)?;
    let rb = per_lead_rmse(&base)?;
    let leads: Vec<LeadSkill> = rm
        .iter()
        .map(|(&lead, &m)| {
            let b = rb[&lead];
            let n = normalize(m, b);
            LeadSkill {
                lead_hours: lead,
                rmse_model: m,
                rmse_baseline: b,
                normalized_rmse: n,
                improvement: 1.0 - n,
            }
        })
        .collect();
    let mut summaries = Vec::new();
    for &(start, end) in windows {
        if start > end {
            return Err(Error::Config(format!("window {start}:{end} is reversed")));
        }
        let inside: Vec<&LeadSkill> = leads
            .iter()
            .filter(|l| (start..=end).contains(&l.lead_hours))
            .collect();
        if inside.is_empty() {
            log::warn!("window {start}:{end}h holds no leads");
            continue;
        }
        let k = inside.len() as f64;
        summaries.push(WindowSummary {
            start_hours: start,
            end_hours: end,
            n_leads: inside.len(),
            mean_rmse_model: inside.iter().map(|l| l.rmse_model).sum::<f64>() / k,
            mean_rmse_baseline: inside.iter().map(|l| l.rmse_baseline).sum::<f64>() / k,
            mean_improvement: inside.iter().map(|l| l.improvement).sum::<f64>() / k,
            min_improvement: inside
                .iter()
                .map(|l| l.improvement)
                .fold(f64::INFINITY, f64::min),
            max_improvement: inside
                .iter()
                .map(|l| l.improvement)
                .fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(SkillReport {
        crossover_lead: crossover(&leads),
        leads,
        windows: summaries,
    })
}

/// Parses `start:end` in hours.
pub fn parse_window(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("window `{text}` must look like 14:38")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("window `{text}`: {e}")))
    };
    let w = (parse(a)?, parse(b)?);
    if w.0 > w.1 {
        return Err(Error::Config(format!("window `{text}` is reversed")));
    }
    Ok(w)
}

pub const SKILL_HEADER: &str = "lead_hours,rmse_model,rmse_baseline,normalized_rmse,improvement";

pub fn skill_csv(report: &SkillReport) -> String {
    let mut s = String::from(SKILL_HEADER);
    s.push('\n');
    for l in &report.leads {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            l.lead_hours, l.rmse_model, l.rmse_baseline, l.normalized_rmse, l.improvement
        );
    }
    s
}

pub fn parse_skill_csv(text: &str) -> Result<Vec<LeadSkill>> {
    let mut lines = text.lines();
    if lines.next() != Some(SKILL_HEADER) {
        return Err(Error::invalid("skill.csv header mismatch"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("skill.csv line {}: `{line}`", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            Ok(LeadSkill {
                lead_hours: f[0].parse().map_err(|_| bad())?,
                rmse_model: num(1)?,
                rmse_baseline: num(2)?,
                normalized_rmse: num(3)?,
                improvement: num(4)?,
            })
        })
        .collect()
}

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn polyline(
    out: &mut String,
    panel: &Panel,
    xs: &[f64],
    ys: &[f64],
    xr: (f64, f64),
    yr: (f64, f64),
    style: &str,
) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| y.is_finite())
        .map(|(x, y)| {
            let px = panel.x0 + (x - xr.0) / (xr.1 - xr.0).max(1e-12) * panel.w;
            let py = panel.y0 + panel.h - (y - yr.0) / (yr.1 - yr.0) * panel.h;
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" {style} points="{}"/>"#,
        pts.join(" ")
    );
}

fn frame(out: &mut String, panel: &Panel, title: &str, xr: (f64, f64), yr: (f64, f64)) {
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        panel.x0, panel.y0, panel.w, panel.h
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{title}</text>"#,
        panel.x0 + panel.w / 2.0,
        panel.y0 - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">lead (h): {:.0} to {:.0}</text>"#,
        panel.x0 + panel.w / 2.0,
        panel.y0 + panel.h + 16.0,
        xr.0,
        xr.1
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10">{:.3}</text><text x="{}" y="{}" font-size="10">{:.3}</text>"#,
        panel.x0 - 44.0,
        panel.y0 + 10.0,
        yr.1,
        panel.x0 - 44.0,
        panel.y0 + panel.h,
        yr.0
    );
}

/// Two panels: RMSE of model and baseline by lead, and normalized RMSE with
/// a reference line at 1.
pub fn skill_svg(report: &SkillReport) -> String {
    let xs: Vec<f64> = report.leads.iter().map(|l| l.lead_hours as f64).collect();
    let xr = if xs.len() > 1 {
        (xs[0], xs[xs.len() - 1])
    } else {
        (
            xs.first().copied().unwrap_or(0.0) - 1.0,
            xs.first().copied().unwrap_or(0.0) + 1.0,
        )
    };
    let model: Vec<f64> = report.leads.iter().map(|l| l.rmse_model).collect();
    let base: Vec<f64> = report.leads.iter().map(|l| l.rmse_baseline).collect();
    let norm: Vec<f64> = report.leads.iter().map(|l| l.normalized_rmse).collect();
    let mut s = String::new();
    s.push_str(r#"<svg xmlns="http://www.w3.org/2000/svg" width="900" height="360" viewBox="0 0 900 360">"#);
    s.push('\n');
    s.push_str(r#"<rect width="900" height="360" fill="white"/>"#);
    s.push('\n');
    let left = Panel {
        x0: 60.0,
        y0: 40.0,
        w: 360.0,
        h: 260.0,
    };
    let yr = finite_range(model.iter().chain(&base).copied());
    frame(&mut s, &left, "RMSE by lead", xr, yr);
    polyline(
        &mut s,
        &left,
        &xs,
        &base,
        xr,
        yr,
        r##"stroke="#999" stroke-dasharray="4 3""##,
    );
    polyline(
        &mut s,
        &left,
        &xs,
        &model,
        xr,
        yr,
        r##"stroke="#1f6fb4" stroke-width="2""##,
    );
    let right = Panel {
        x0: 510.0,
        y0: 40.0,
        w: 360.0,
        h: 260.0,
    };
    let yr = finite_range(norm.iter().copied().chain([1.0]));
    frame(&mut s, &right, "normalized RMSE", xr, yr);
    polyline(
        &mut s,
        &right,
        &[xr.0, xr.1],
        &[1.0, 1.0],
        xr,
        yr,
        r##"stroke="#c33" stroke-dasharray="2 2""##,
    );
    polyline(
        &mut s,
        &right,
        &xs,
        &norm,
        xr,
        yr,
        r##"stroke="#1f6fb4" stroke-width="2""##,
    );
    let _ = writeln!(
        s,
        r##"<text x="60" y="340" font-size="11">model (solid), baseline (dashed){}</text>"##,
        report
            .crossover_lead
            .map(|c| format!(", crossover at {c} h"))
            .unwrap_or_default()
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `skill.csv` and `skill.svg` into `dir`.
pub fn emit_report(report: &SkillReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("skill.csv");
    fs::write(&csv_path, skill_csv(report)).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = dir.join("skill.svg");
    fs::write(&svg_path, skill_svg(report)).map_err(|e| Error::io(&svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 3, 1, 10, 0, 0).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..500).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..500).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut acc = 0.0;
        for i in 0..500 {
            acc += (p[i] - t[i]).powi(2);
        }
        assert!((rmse(&p, &t).unwrap() - (acc / 500.0).sqrt()).abs() < 1e-12);
        let series_p: Vec<Vec<f64>> = p.chunks(50).map(<[f64]>::to_vec).collect();
        let series_t: Vec<Vec<f64>> = t.chunks(50).map(<[f64]>::to_vec).collect();
        assert!((panel_rmse(&series_p, &series_t).unwrap() - (acc / 500.0).sqrt()).abs() < 1e-12);
    }

    fn points(
        locs: &[&str],
        issues: usize,
        leads: impl Iterator<Item = usize> + Clone,
        f: impl Fn(usize, usize, usize) -> (f64, f64, f64),
    ) -> Vec<ForecastPoint> {
        let mut out = Vec::new();
        for (li, loc) in locs.iter().enumerate() {
            for k in 0..issues {
                for lead in leads.clone() {
                    let (value, truth, baseline) = f(li, k, lead);
                    out.push(ForecastPoint {
                        location: loc.to_string(),
                        issue: t0() + chrono::Duration::days(k as i64),
                        lead_hours: lead,
                        value,
                        truth,
                        baseline: Some(baseline),
                    });
                }
            }
        }
        out
    }

    fn small() -> HybridConfig {
        HybridConfig {
            handoff_hours: 12,
            max_lead_hours: 36,
            medium_step_hours: 6,
        }
    }

    #[test]
    fn agreeing_models_stitch_to_either() {
        let f = |_, k: usize, lead: usize| (lead as f64 + k as f64, 1.0, 0.0);
        let s = points(&["a"], 2, 1..=12, f);
        let m = points(&["a"], 2, (12..=36).step_by(6), f);
        let b = stitch_hybrid(&s, &m, &small()).unwrap();
        assert_eq!(b.records.len(), 2 * (12 + 4));
        for r in &b.records {
            assert_eq!(
                r.point_forecast().unwrap(),
                r.lead_hours as f64 + (r.issue - t0()).num_days() as f64
            );
        }
        let at_handoff = b.records.iter().find(|r| r.lead_hours == 12).unwrap();
        assert!(at_handoff.short_term.is_some() && at_handoff.medium_term.is_some());
    }

    #[test]
    fn missing_medium_lead_is_a_coverage_error() {
        let f = |_, _, _| (0.0, 0.0, 0.0);
        let s = points(&["a"], 1, 1..=48, f);
        let m = points(&["a"], 1, (48..=240).step_by(6).filter(|&l| l != 54), f);
        let err = stitch_hybrid(&s, &m, &HybridConfig::default()).unwrap_err();
        assert!(err.to_string().contains("lead 54h"), "{err}");
    }

    #[test]
    fn stitched_rmse_is_at_most_the_better_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut noise = |scale: f64| scale * rng.random_range(-1.0..1.0);
        let cfg = small();
        let all: Vec<usize> = (1..=36).collect();
        let mut short = Vec::new();
        let mut medium = Vec::new();
        for loc in ["a", "b", "c"] {
            for k in 0..20 {
                for &lead in &all {
                    let truth = (k * lead) as f64 * 0.01;
                    let (es, em) = if lead <= 12 { (0.2, 1.0) } else { (1.0, 0.2) };
                    let mk = |v: f64| ForecastPoint {
                        location: loc.into(),
                        issue: t0() + chrono::Duration::days(k as i64),
                        lead_hours: lead,
                        value: v,
                        truth,
                        baseline: Some(truth + 0.5),
                    };
                    short.push(mk(truth + noise(es)));
                    medium.push(mk(truth + noise(em)));
                }
            }
        }
        let stitched = skill_report(&stitch_hybrid(&short, &medium, &cfg).unwrap(), &[]).unwrap();
        let lone = |pts: &[ForecastPoint]| {
            let bundle = ForecastBundle {
                records: pts
                    .iter()
                    .map(|p| BundleRecord {
                        location: p.location.clone(),
                        issue: p.issue,
                        lead_hours: p.lead_hours,
                        short_term: Some(p.value),
                        medium_term: None,
                        baseline: p.baseline,
                        truth: p.truth,
                    })
                    .collect(),
            };
            skill_report(&bundle, &[]).unwrap()
        };
        let (rs, rm) = (lone(&short), lone(&medium));
        for l in &stitched.leads {
            let a = rs
                .leads
                .iter()
                .find(|x| x.lead_hours == l.lead_hours)
                .unwrap()
                .rmse_model;
            let b = rm
                .leads
                .iter()
                .find(|x| x.lead_hours == l.lead_hours)
                .unwrap()
                .rmse_model;
            assert!(l.rmse_model <= a.min(b) + 1e-12, "lead {}", l.lead_hours);
        }
    }

    fn report_for(
        model_err: impl Fn(usize) -> f64,
        base_err: impl Fn(usize) -> f64,
        leads: &[usize],
    ) -> SkillReport {
        let mut records = Vec::new();
        for loc in ["x", "y"] {
            for k in 0..4 {
                for &lead in leads {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    records.push(BundleRecord {
                        location: loc.into(),
                        issue: t0() + chrono::Duration::days(k),
                        lead_hours: lead,
                        short_term: Some(10.0 + sign * model_err(lead)),
                        medium_term: None,
                        baseline: Some(10.0 - sign * base_err(lead)),
                        truth: 10.0,
                    });
                }
            }
        }
        skill_report(&ForecastBundle { records }, &[(14, 38)]).unwrap()
    }

    #[test]
    fn self_comparison_has_no_crossover() {
        let leads: Vec<usize> = (6..=48).step_by(6).collect();
        let r = report_for(|l| l as f64 * 0.1, |l| l as f64 * 0.1, &leads);
        assert!(r.leads.iter().all(|l| l.normalized_rmse == 1.0));
        assert_eq!(r.crossover_lead, None);
    }

    #[test]
    fn half_errors_give_half_improvement() {
        let leads: Vec<usize> = (6..=48).step_by(6).collect();
        let r = report_for(|l| l as f64 * 0.05, |l| l as f64 * 0.1, &leads);
        assert!(r.leads.iter().all(|l| (l.improvement - 0.5).abs() < 1e-12));
        assert_eq!(r.crossover_lead, Some(6));
    }

    #[test]
    fn planted_crossover_after_thirty_hours() {
        let leads: Vec<usize> = (6..=240).step_by(6).collect();
        let r = report_for(|l| if l > 30 { 0.8 } else { 1.2 }, |_| 1.0, &leads);
        assert_eq!(r.crossover_lead, Some(36));
        for l in &r.leads {
            assert!((l.improvement - (1.0 - l.normalized_rmse)).abs() < 1e-12);
        }
        let w = &r.windows[0];
        assert_eq!((w.start_hours, w.end_hours, w.n_leads), (14, 38, 4));
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let records = vec![BundleRecord {
            location: "a".into(),
            issue: t0(),
            lead_hours: 1,
            short_term: Some(1.0),
            medium_term: None,
            baseline: None,
            truth: 1.0,
        }];
        assert!(skill_report(&ForecastBundle { records }, &[]).is_err());
    }

    #[test]
    fn csv_round_trips_report_values() {
        let leads: Vec<usize> = (1..=5).collect();
        let r = report_for(
            |l| 0.1 * l as f64 + 1.0 / 3.0,
            |l| 0.7 + (l as f64).sqrt(),
            &leads,
        );
        let text = skill_csv(&r);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(parse_skill_csv(&text).unwrap(), r.leads);
        let one = SkillReport {
            leads: r.leads[..1].to_vec(),
            crossover_lead: None,
            windows: vec![],
        };
        assert_eq!(skill_csv(&one).lines().count(), 2);
    }

    /// Minimal XML structure check: one root element and balanced tags.
    fn well_formed(xml: &str) -> bool {
        let mut stack: Vec<String> = Vec::new();
        let mut roots = 0;
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let Some(end) = rest[start..].find('>') else {
                return false;
            };
            let tag = &rest[start + 1..start + end];
            rest = &rest[start + end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                if stack.pop().as_deref() != Some(name.trim()) {
                    return false;
                }
                continue;
            }
            let name = tag
                .split_whitespace()
                .next()
                .unwrap_or("")
                .trim_end_matches('/')
                .to_string();
            if stack.is_empty() {
                roots += 1;
            }
            if !tag.ends_with('/') {
                stack.push(name);
            }
        }
        stack.is_empty() && roots == 1
    }

    #[test]
    fn svg_is_well_formed() {
        let leads: Vec<usize> = (6..=60).step_by(6).collect();
        let r = report_for(|l| if l > 30 { 0.8 } else { 1.2 }, |_| 1.0, &leads);
        let svg = skill_svg(&r);
        assert!(well_formed(&svg));
        assert!(!well_formed("<a><b></a>"));
        assert!(!well_formed("<a/><b/>"));
        let one = SkillReport {
            leads: r.leads[..1].to_vec(),
            crossover_lead: None,
            windows: vec![],
        };
        assert!(well_formed(&skill_svg(&one)));
    }

    #[test]
    fn bundle_file_round_trip() {
        let f =
            |li: usize, k: usize, lead: usize| (li as f64 + 0.1 * lead as f64, k as f64 / 3.0, 2.0);
        let s = points(&["b", "a"], 2, 1..=12, f);
        let m = points(&["b", "a"], 2, (12..=36).step_by(6), f);
        let bundle = stitch_hybrid(&s, &m, &small()).unwrap();
        assert_eq!(bundle.records[0].location, "a");
        let dir = tempfile::tempdir().unwrap();
        bundle.write(dir.path()).unwrap();
        assert_eq!(ForecastBundle::read(dir.path()).unwrap(), bundle);
        emit_report(&skill_report(&bundle, &[(14, 38)]).unwrap(), dir.path()).unwrap();
        assert!(dir.path().join("skill.svg").exists());
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("14:38").unwrap(), (14, 38));
        assert!(parse_window("38:14").is_err());
        assert!(parse_window("14-38").is_err());
    }

    proptest::proptest! {
        #[test]
        fn rmse_scales_and_ignores_shift(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..60),
            c in 0.01f64..50.0,
            shift in -1e3f64..1e3,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = rmse(&p, &t).unwrap();
            let sp: Vec<f64> = p.iter().map(|x| c * x + shift).collect();
            let st: Vec<f64> = t.iter().map(|x| c * x + shift).collect();
            let scaled = rmse(&sp, &st).unwrap();
            proptest::prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + c * base));
            proptest::prop_assert!(base >= 0.0);
        }

        #[test]
        fn crossover_leads_are_all_better(flags in proptest::collection::vec(proptest::bool::ANY, 1..40)) {
            let leads: Vec<LeadSkill> = flags
                .iter()
                .enumerate()
                .map(|(i, &better)| {
                    let m = if better { 0.5 } else { 1.5 };
                    LeadSkill {
                        lead_hours: 6 * (i + 1),
                        rmse_model: m,
                        rmse_baseline: 1.0,
                        normalized_rmse: m,
                        improvement: 1.0 - m,
                    }
                })
                .collect();
            match crossover(&leads) {
                Some(c) => {
                    proptest::prop_assert!(leads.iter().filter(|l| l.lead_hours >= c).all(|l| l.rmse_model < l.rmse_baseline));
                    if c > 6 {
                        let prev = leads.iter().find(|l| l.lead_hours == c - 6).unwrap();
                        proptest::prop_assert!(prev.rmse_model >= prev.rmse_baseline);
                    }
                }
                None => proptest::prop_assert!(!flags[flags.len() - 1]),
            }
        }
    }
}
