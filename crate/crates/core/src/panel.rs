//! Ingestion and normalisation of the regional panel.
//!
//! The raw input is a long-format CSV of official per-region surveillance
//! records: one row per region per day carrying cumulative confirmed cases
//! and cumulative tests. Ingestion
//!
//! * maps configurable column names onto the fields it needs,
//! * restricts to a closed date window,
//! * enforces non-decreasing cumulative series by a running maximum
//!   (negative revisions in the raw feed are carried forward),
//! * optionally rebases each region's cumulative series to the window start
//!   so the counts measure the epidemic wave under analysis rather than
//!   everything since the start of surveillance, and
//! * aligns all regions onto the identical, gap-free daily date grid.
//!
//! The resulting [`Panel`] is the single input shared by the synthetic
//! control and the growth regressions.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Column mapping and window for [`load_panel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Name of the date column (ISO dates or ISO datetimes; only the date
    /// part is used).
    pub date_col: String,
    /// Name of the region identifier column.
    pub region_col: String,
    /// Name of the cumulative confirmed-cases column.
    pub cases_col: String,
    /// Name of the cumulative-tests column.
    pub tests_col: String,
    /// First date of the analysis window (inclusive).
    pub window_start: NaiveDate,
    /// Last date of the analysis window (inclusive).
    pub window_end: NaiveDate,
    /// Subtract each region's value at `window_start` from its cumulative
    /// series, so counts are relative to the start of the window.
    pub rebase_to_window: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            date_col: "data".into(),
            region_col: "denominazione_regione".into(),
            cases_col: "totale_casi".into(),
            tests_col: "tamponi".into(),
            window_start: NaiveDate::from_ymd_opt(2020, 8, 31).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
            rebase_to_window: true,
        }
    }
}

/// One region's aligned cumulative series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSeries {
    /// Region identifier as it appears in the source data.
    pub id: String,
    /// Cumulative confirmed cases, one value per panel date.
    pub cumulative_cases: Vec<f64>,
    /// Cumulative tests, one value per panel date.
    pub cumulative_tests: Vec<f64>,
}

/// A balanced panel: every region observed on every date of a gap-free
/// daily grid, with non-decreasing cumulative series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Panel {
    /// Consecutive daily dates shared by all regions.
    pub dates: Vec<NaiveDate>,
    /// Regions sorted by identifier.
    pub regions: Vec<RegionSeries>,
    /// Number of raw observations adjusted by the monotonicity repair,
    /// summed over regions.
    pub repaired_points: usize,
}

impl Panel {
    /// Builds a panel directly from aligned series (used by simulation and
    /// tests). Validates alignment and monotonicity.
    pub fn from_series(dates: Vec<NaiveDate>, regions: Vec<RegionSeries>) -> Result<Panel> {
        if dates.len() < 2 {
            return Err(CoreError::invalid("panel needs at least two dates"));
        }
        for w in dates.windows(2) {
            if w[1] != w[0].succ_opt().unwrap() {
                return Err(CoreError::invalid(format!(
                    "panel dates must be consecutive days, found gap after {}",
                    w[0]
                )));
            }
        }
        for r in &regions {
            if r.cumulative_cases.len() != dates.len() || r.cumulative_tests.len() != dates.len() {
                return Err(CoreError::invalid(format!(
                    "region {} has series length mismatching the date grid",
                    r.id
                )));
            }
            for v in r.cumulative_cases.iter().chain(r.cumulative_tests.iter()) {
                if !v.is_finite() {
                    return Err(CoreError::invalid(format!(
                        "region {} has a non-finite value",
                        r.id
                    )));
                }
            }
            for w in r.cumulative_cases.windows(2) {
                if w[1] < w[0] {
                    return Err(CoreError::invalid(format!(
                        "region {} cumulative cases decrease",
                        r.id
                    )));
                }
            }
        }
        let mut regions = regions;
        regions.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Panel {
            dates,
            regions,
            repaired_points: 0,
        })
    }

    /// Index of a region by identifier.
    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    /// Region series by identifier.
    pub fn region(&self, id: &str) -> Option<&RegionSeries> {
        self.region_index(id).map(|i| &self.regions[i])
    }

    /// Index of a date on the panel grid.
    pub fn date_index(&self, d: NaiveDate) -> Option<usize> {
        if self.dates.is_empty() || d < self.dates[0] || d > *self.dates.last().unwrap() {
            return None;
        }
        Some((d - self.dates[0]).num_days() as usize)
    }

    /// Daily new cases for a region: first differences of the cumulative
    /// series, one value per date from the second panel date onwards.
    pub fn new_cases(&self, region_idx: usize) -> Vec<f64> {
        diff(&self.regions[region_idx].cumulative_cases)
    }

    /// Daily new tests for a region, analogous to [`Panel::new_cases`].
    pub fn new_tests(&self, region_idx: usize) -> Vec<f64> {
        diff(&self.regions[region_idx].cumulative_tests)
    }

    /// Convex combination of donor series: the synthetic unit implied by a
    /// weight vector. Weights are applied as given.
    pub fn weighted_series(&self, weights: &[(String, f64)]) -> Result<RegionSeries> {
        let n = self.dates.len();
        let mut cases = vec![0.0; n];
        let mut tests = vec![0.0; n];
        for (id, w) in weights {
            let r = self
                .region(id)
                .ok_or_else(|| CoreError::invalid(format!("unknown region in weights: {id}")))?;
            for t in 0..n {
                cases[t] += w * r.cumulative_cases[t];
                tests[t] += w * r.cumulative_tests[t];
            }
        }
        Ok(RegionSeries {
            id: "synthetic".into(),
            cumulative_cases: cases,
            cumulative_tests: tests,
        })
    }

    /// Day-of-week index for each panel date, 0 = Monday … 6 = Sunday.
    pub fn day_of_week(&self) -> Vec<u8> {
        self.dates
            .iter()
            .map(|d| d.weekday().num_days_from_monday() as u8)
            .collect()
    }

    /// Writes the normalised panel in long format
    /// (`date,region,cumulative_cases,cumulative_tests`).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["date", "region", "cumulative_cases", "cumulative_tests"])?;
        for r in &self.regions {
            for (t, d) in self.dates.iter().enumerate() {
                wtr.write_record([
                    d.format("%Y-%m-%d").to_string(),
                    r.id.clone(),
                    format_count(r.cumulative_cases[t]),
                    format_count(r.cumulative_tests[t]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn diff(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

fn format_count(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Enforces a non-decreasing series by carrying the running maximum
/// forward. Returns the repaired series and the number of adjusted points.
pub fn monotonize(v: &[f64]) -> (Vec<f64>, usize) {
    let mut out = Vec::with_capacity(v.len());
    let mut hi = f64::NEG_INFINITY;
    let mut repaired = 0;
    for &x in v {
        if x < hi {
            repaired += 1;
        } else {
            hi = x;
        }
        out.push(hi);
    }
    (out, repaired)
}

/// Reads the raw long-format CSV and produces a normalised [`Panel`].
///
/// Regions that do not cover the full window are dropped; the loader fails
/// if fewer than two regions remain (a synthetic control needs at least one
/// donor). Duplicate (region, date) rows keep the last occurrence, and a
/// missing day inside the window is filled by carrying the previous value
/// forward.
pub fn load_panel(path: &Path, cfg: &IngestConfig) -> Result<Panel> {
    let file = std::fs::File::open(path)
        .map_err(|e| CoreError::data(format!("cannot open {}: {e}", path.display())))?;
    load_panel_from_reader(file, cfg)
}

/// Same as [`load_panel`] for an already-open reader.
pub fn load_panel_from_reader<R: std::io::Read>(reader: R, cfg: &IngestConfig) -> Result<Panel> {
    if cfg.window_end < cfg.window_start {
        return Err(CoreError::invalid("window_end before window_start"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| CoreError::data(format!("missing column '{name}' in input")))
    };
    let date_i = col(&cfg.date_col)?;
    let region_i = col(&cfg.region_col)?;
    let cases_i = col(&cfg.cases_col)?;
    let tests_i = col(&cfg.tests_col)?;

    let mut by_region: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let raw_date = rec
            .get(date_i)
            .ok_or_else(|| CoreError::data("short record"))?;
        let date = parse_date(raw_date)?;
        if date < cfg.window_start || date > cfg.window_end {
            continue;
        }
        let region = rec
            .get(region_i)
            .ok_or_else(|| CoreError::data("short record"))?
            .trim()
            .to_string();
        let cases = parse_count(rec.get(cases_i).unwrap_or(""), &region, "cases")?;
        let tests = parse_count(rec.get(tests_i).unwrap_or(""), &region, "tests")?;
        by_region.entry(region).or_default().insert(date, (cases, tests));
    }

    let n_days = (cfg.window_end - cfg.window_start).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..n_days)
        .map(|k| cfg.window_start + chrono::Duration::days(k as i64))
        .collect();

    let mut regions = Vec::new();
    let mut repaired_total = 0;
    for (id, obs) in by_region {
        if !obs.contains_key(&cfg.window_start) || !obs.contains_key(&cfg.window_end) {
            continue;
        }
        let mut cases = Vec::with_capacity(n_days);
        let mut tests = Vec::with_capacity(n_days);
        let mut last = *obs.get(&cfg.window_start).unwrap();
        for d in &dates {
            if let Some(&v) = obs.get(d) {
                last = v;
            }
            cases.push(last.0);
            tests.push(last.1);
        }
        let (cases, r1) = monotonize(&cases);
        let (tests, r2) = monotonize(&tests);
        repaired_total += r1 + r2;
        let (cases, tests) = if cfg.rebase_to_window {
            let (c0, t0) = (cases[0], tests[0]);
            (
                cases.iter().map(|v| v - c0).collect(),
                tests.iter().map(|v| v - t0).collect(),
            )
        } else {
            (cases, tests)
        };
        regions.push(RegionSeries {
            id,
            cumulative_cases: cases,
            cumulative_tests: tests,
        });
    }

    if regions.len() < 2 {
        return Err(CoreError::data(format!(
            "only {} region(s) cover the window {}..{}",
            regions.len(),
            cfg.window_start,
            cfg.window_end
        )));
    }

    let mut panel = Panel::from_series(dates, regions)?;
    panel.repaired_points = repaired_total;
    Ok(panel)
}

fn parse_date(raw: &str) -> Result<NaiveDate> {
    let s = raw.trim();
    let date_part = if s.len() >= 10 { &s[..10] } else { s };
    NaiveDate::parse_from_str(date_part, "%Y-%m-%d")
        .map_err(|_| CoreError::data(format!("unparseable date '{raw}'")))
}

fn parse_count(raw: &str, region: &str, what: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(0.0);
    }
    s.parse::<f64>()
        .map_err(|_| CoreError::data(format!("unparseable {what} value '{raw}' for {region}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonize_carries_running_max() {
        let (fixed, repaired) = monotonize(&[10.0, 8.0, 12.0]);
        assert_eq!(fixed, vec![10.0, 10.0, 12.0]);
        assert_eq!(repaired, 1);
        assert_eq!(diff(&fixed), vec![0.0, 2.0]);
    }

    #[test]
    fn date_index_round_trips() {
        let dates: Vec<NaiveDate> = (0..5)
            .map(|k| NaiveDate::from_ymd_opt(2020, 8, 31).unwrap() + chrono::Duration::days(k))
            .collect();
        let r = RegionSeries {
            id: "a".into(),
            cumulative_cases: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            cumulative_tests: vec![0.0; 5],
        };
        let r2 = RegionSeries {
            id: "b".into(),
            cumulative_cases: vec![0.0; 5],
            cumulative_tests: vec![0.0; 5],
        };
        let p = Panel::from_series(dates.clone(), vec![r, r2]).unwrap();
        for (i, d) in dates.iter().enumerate() {
            assert_eq!(p.date_index(*d), Some(i));
        }
        assert_eq!(p.date_index(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap()), None);
    }
}
