//! Evaluation against reference: summary statistics, rolling bias, daily
//! exceedances, segmented error statistics and IDW concentration rasters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_timestamp;
use crate::model::{hour_time, HourlySeries};

/// Mean absolute difference over the trailing `window_hours` paired hours.
///
/// Hours whose window holds fewer than `min_coverage * window_hours` paired
/// values are missing.
pub fn rolling_mab(
    sensor: &HourlySeries,
    reference: &HourlySeries,
    window_hours: usize,
    min_coverage: f64,
) -> HourlySeries {
    let start = sensor.start_hour();
    let n = sensor.len();
    let mut sum = vec![0.0; n + 1];
    let mut cnt = vec![0usize; n + 1];
    for i in 0..n {
        let h = start + i as i64;
        let d = match (sensor.at_hour(h), reference.at_hour(h)) {
            (Some(s), Some(r)) => Some((s - r).abs()),
            _ => None,
        };
        sum[i + 1] = sum[i] + d.unwrap_or(0.0);
        cnt[i + 1] = cnt[i] + usize::from(d.is_some());
    }
    let need = (min_coverage * window_hours as f64).ceil().max(1.0) as usize;
    HourlySeries::from_fn(sensor.site_id(), sensor.channel(), start, n, |h| {
        let i = (h - start) as usize + 1;
        let lo = i.saturating_sub(window_hours);
        let c = cnt[i] - cnt[lo];
        (c >= need && i >= window_hours).then(|| (sum[i] - sum[lo]) / c as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    /// Squared Pearson correlation; missing when either side is constant.
    pub r2: Option<f64>,
    pub mab: f64,
    pub rmse: f64,
    /// Mean of `sensor - reference`.
    pub mean_error: f64,
}

/// Summary statistics over paired values.
pub fn summary_values(sensor: &[f64], reference: &[f64]) -> Result<SummaryStats> {
    if sensor.len() != reference.len() {
        return Err(Error::InvalidParams("sensor and reference lengths differ".into()));
    }
    let n = sensor.len();
    if n < 2 {
        return Err(Error::InsufficientData { coverage: 0.0 });
    }
    let nf = n as f64;
    let (ms, mr) = (sensor.iter().sum::<f64>() / nf, reference.iter().sum::<f64>() / nf);
    let (mut sxy, mut sxx, mut syy, mut abs, mut sq, mut err) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&s, &r) in sensor.iter().zip(reference) {
        sxy += (s - ms) * (r - mr);
        sxx += (s - ms) * (s - ms);
        syy += (r - mr) * (r - mr);
        let d = s - r;
        abs += d.abs();
        sq += d * d;
        err += d;
    }
    let r2 = (sxx > 0.0 && syy > 0.0).then(|| (sxy * sxy / (sxx * syy)).min(1.0));
    Ok(SummaryStats {
        n,
        r2,
        mab: abs / nf,
        rmse: (sq / nf).sqrt(),
        mean_error: err / nf,
    })
}

/// Summary statistics over the hours where both series are present.
pub fn summary_stats(sensor: &HourlySeries, reference: &HourlySeries) -> Result<SummaryStats> {
    let (s, r): (Vec<f64>, Vec<f64>) = sensor
        .present()
        .filter_map(|(h, v)| reference.at_hour(h).map(|r| (v, r)))
        .unzip();
    summary_values(&s, &r)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; missing when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sxy += (x - ma) * (y - mb);
        sxx += (x - ma) * (x - ma);
        syy += (y - mb) * (y - mb);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyExceedance {
    pub date: NaiveDate,
    pub sensor_hours: u32,
    pub reference_hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSummary {
    pub threshold: f64,
    pub days: Vec<DailyExceedance>,
    pub spearman: Option<f64>,
}

/// Hours above `threshold` per UTC day, counted over paired hours only, and
/// the rank correlation of the daily counts.
pub fn exceedance_counts(sensor: &HourlySeries, reference: &HourlySeries, threshold: f64) -> ExceedanceSummary {
    let mut days: BTreeMap<NaiveDate, (u32, u32)> = BTreeMap::new();
    for (h, s) in sensor.present() {
        if let Some(r) = reference.at_hour(h) {
            let e = days.entry(hour_time(h).date_naive()).or_default();
            e.0 += u32::from(s > threshold);
            e.1 += u32::from(r > threshold);
        }
    }
    let days: Vec<DailyExceedance> = days
        .into_iter()
        .map(|(date, (s, r))| DailyExceedance {
            date,
            sensor_hours: s,
            reference_hours: r,
        })
        .collect();
    let a: Vec<f64> = days.iter().map(|d| d.sensor_hours as f64).collect();
    let b: Vec<f64> = days.iter().map(|d| d.reference_hours as f64).collect();
    ExceedanceSummary {
        threshold,
        spearman: spearman(&a, &b),
        days,
    }
}

/// Raster geometry: `ncols x nrows` square cells of `cellsize` degrees with
/// the lower-left corner at (`xllcorner` lon, `yllcorner` lat).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
}

impl GridSpec {
    /// Smallest grid of `cellsize` cells covering every point plus `margin` degrees.
    pub fn covering(points: &[(f64, f64)], cellsize: f64, margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(cellsize > 0.0) {
            return Err(Error::InvalidParams("cellsize must be positive".into()));
        }
        let (mut lat_lo, mut lat_hi, mut lon_lo, mut lon_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(lat, lon) in points {
            lat_lo = lat_lo.min(lat);
            lat_hi = lat_hi.max(lat);
            lon_lo = lon_lo.min(lon);
            lon_hi = lon_hi.max(lon);
        }
        let xll = lon_lo - margin;
        let yll = lat_lo - margin;
        Ok(Self {
            ncols: (((lon_hi + margin - xll) / cellsize).ceil() as usize).max(1),
            nrows: (((lat_hi + margin - yll) / cellsize).ceil() as usize).max(1),
            xllcorner: xll,
            yllcorner: yll,
            cellsize,
        })
    }

    /// Centre (lat, lon) of the cell at `row` (0 = north) and `col`.
    pub fn cell_centre(&self, row: usize, col: usize) -> (f64, f64) {
        let lat = self.yllcorner + (self.nrows - row) as f64 * self.cellsize - self.cellsize / 2.0;
        let lon = self.xllcorner + (col as f64 + 0.5) * self.cellsize;
        (lat, lon)
    }
}

pub const NODATA: f64 = -9999.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub spec: GridSpec,
    /// Row-major, north row first.
    pub values: Vec<f64>,
}

impl Raster {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.ncols + col]
    }

    /// ESRI ASCII grid text.
    pub fn to_ascii(&self) -> String {
        let g = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "ncols {}", g.ncols);
        let _ = writeln!(out, "nrows {}", g.nrows);
        let _ = writeln!(out, "xllcorner {}", header_number(g.xllcorner));
        let _ = writeln!(out, "yllcorner {}", header_number(g.yllcorner));
        let _ = writeln!(out, "cellsize {}", header_number(g.cellsize));
        let _ = writeln!(out, "NODATA_value {NODATA}");
        for row in self.values.chunks(g.ncols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_ascii(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_ascii()).map_err(|e| Error::io(path, e))
    }
}

/// Nine decimals with trailing zeros dropped, so `-118.47000000000001` prints as `-118.47`.
fn header_number(v: f64) -> String {
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Inverse-distance-weighted interpolation of `(lat, lon, value)` sites.
///
/// Weights are `d^-power` with distances on a local equirectangular
/// projection. A site inside a cell sets that cell to its value exactly (the
/// nearest such site when several share a cell).
pub fn idw_grid(sites: &[(f64, f64, f64)], grid: &GridSpec, power: f64) -> Result<Raster> {
    let sites: Vec<_> = sites.iter().copied().filter(|s| s.2.is_finite()).collect();
    if sites.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lat0 = (grid.yllcorner + grid.nrows as f64 * grid.cellsize / 2.0).to_radians();
    let kx = lat0.cos();
    let half = grid.cellsize / 2.0;
    let mut values = Vec::with_capacity(grid.nrows * grid.ncols);
    for row in 0..grid.nrows {
        for col in 0..grid.ncols {
            let (lat, lon) = grid.cell_centre(row, col);
            let mut inside: Option<(f64, f64)> = None;
            let (mut wsum, mut vsum) = (0.0, 0.0);
            for &(slat, slon, v) in &sites {
                let (dy, dx) = (slat - lat, (slon - lon) * kx);
                let d = (dx * dx + dy * dy).sqrt();
                if (slat - lat).abs() <= half && (slon - lon).abs() <= half && inside.is_none_or(|(bd, _)| d < bd) {
                    inside = Some((d, v));
                }
                let w = d.powf(-power);
                wsum += w;
                vsum += w * v;
            }
            values.push(match inside {
                Some((_, v)) => v,
                None => vsum / wsum,
            });
        }
    }
    Ok(Raster { spec: *grid, values })
}

/// Quartile edges (q25, q50, q75) with linear interpolation between order statistics.
pub fn quartiles(x: &[f64]) -> Option<[f64; 3]> {
    if x.is_empty() {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < s.len() {
            s[i] + f * (s[i + 1] - s[i])
        } else {
            s[i]
        }
    };
    Some([q(0.25), q(0.5), q(0.75)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub segmentation: String,
    pub segment: String,
    pub n: usize,
    pub mean_error: f64,
    pub sd_error: f64,
    pub mab: f64,
}

fn segment_stats(segmentation: &str, labels: &[String], groups: Vec<Vec<f64>>) -> Vec<SegmentStats> {
    labels
        .iter()
        .zip(groups)
        .map(|(label, g)| {
            let n = g.len();
            let nf = n.max(1) as f64;
            let mean = g.iter().sum::<f64>() / nf;
            let var = g.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / nf;
            SegmentStats {
                segmentation: segmentation.into(),
                segment: label.clone(),
                n,
                mean_error: if n > 0 { mean } else { f64::NAN },
                sd_error: if n > 0 { var.sqrt() } else { f64::NAN },
                mab: if n > 0 {
                    g.iter().map(|e| e.abs()).sum::<f64>() / nf
                } else {
                    f64::NAN
                },
            }
        })
        .collect()
}

fn by_quartile(name: &str, errors: &[(i64, f64)], covariate: &HourlySeries) -> Vec<SegmentStats> {
    let pairs: Vec<(f64, f64)> = errors
        .iter()
        .filter_map(|&(h, e)| covariate.at_hour(h).map(|c| (c, e)))
        .collect();
    let labels: Vec<String> = ["q1", "q2", "q3", "q4"].map(String::from).to_vec();
    let mut groups = vec![Vec::new(); 4];
    if let Some([a, b, c]) = quartiles(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()) {
        for (x, e) in pairs {
            let k = if x <= a {
                0
            } else if x <= b {
                1
            } else if x <= c {
                2
            } else {
                3
            };
            groups[k].push(e);
        }
    }
    segment_stats(name, &labels, groups)
}

pub const CALM_WIND_MS: f64 = 2.0;
const SECTORS: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];

/// Error statistics segmented by humidity quartile, wind-speed class, wind
/// sector and reference-concentration quartile. Quartile edges come from the
/// data at hand.
pub fn segment_errors(
    sensor: &HourlySeries,
    reference: &HourlySeries,
    humidity: Option<&HourlySeries>,
    wind_speed: Option<&HourlySeries>,
    wind_direction: Option<&HourlySeries>,
) -> Vec<SegmentStats> {
    let errors: Vec<(i64, f64)> = sensor
        .present()
        .filter_map(|(h, s)| reference.at_hour(h).map(|r| (h, s - r)))
        .collect();
    let mut out = Vec::new();
    if let Some(rh) = humidity {
        out.extend(by_quartile("rh_quartile", &errors, rh));
    }
    if let Some(ws) = wind_speed {
        let mut groups = vec![Vec::new(); 2];
        for &(h, e) in &errors {
            if let Some(v) = ws.at_hour(h) {
                groups[usize::from(v >= CALM_WIND_MS)].push(e);
            }
        }
        out.extend(segment_stats(
            "wind_speed",
            &["below_2ms".into(), "at_least_2ms".into()],
            groups,
        ));
    }
    if let Some(wd) = wind_direction {
        let mut groups = vec![Vec::new(); 8];
        for &(h, e) in &errors {
            if let Some(v) = wd.at_hour(h) {
                groups[((v.rem_euclid(360.0) + 22.5) / 45.0) as usize % 8].push(e);
            }
        }
        let labels: Vec<String> = SECTORS.iter().map(|s| s.to_string()).collect();
        out.extend(segment_stats("wind_sector", &labels, groups));
    }
    out.extend(by_quartile("concentration_quartile", &errors, reference));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Uncorrected,
    FrameworkCorrected,
    FrameworkPlusEs,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Uncorrected, Stage::FrameworkCorrected, Stage::FrameworkPlusEs];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Uncorrected => "uncorrected",
            Stage::FrameworkCorrected => "framework_corrected",
            Stage::FrameworkPlusEs => "framework_plus_es",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub site_id: String,
    pub stage: Stage,
    pub stats: SummaryStats,
}

pub const REPORT_HEADER: [&str; 7] = ["site_id", "stage", "n", "r2", "mab_ppb", "rmse_ppb", "mean_error_ppb"];

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub fn write_report_csv_to(writer: impl std::io::Write, rows: &[ReportRow], label: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER).map_err(|e| Error::csv(label, e))?;
    for r in rows {
        w.write_record([
            r.site_id.clone(),
            r.stage.as_str().to_string(),
            r.stats.n.to_string(),
            r.stats.r2.map(fmt).unwrap_or_default(),
            fmt(r.stats.mab),
            fmt(r.stats.rmse),
            fmt(r.stats.mean_error),
        ])
        .map_err(|e| Error::csv(label, e))?;
    }
    w.flush().map_err(|e| Error::io(label, e))
}

pub fn read_report_csv_from(reader: impl std::io::Read, label: &Path) -> Result<Vec<ReportRow>> {
    #[derive(Deserialize)]
    struct Row {
        site_id: String,
        stage: String,
        n: Option<usize>,
        r2: Option<f64>,
        mab_ppb: f64,
        rmse_ppb: f64,
        mean_error_ppb: Option<f64>,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::csv(label, e))?;
        let stage = row.stage.parse().map_err(|_| Error::Ingest {
            index: i + 1,
            reason: format!("unknown stage '{}'", row.stage),
        })?;
        out.push(ReportRow {
            site_id: row.site_id,
            stage,
            stats: SummaryStats {
                n: row.n.unwrap_or(0),
                r2: row.r2,
                mab: row.mab_ppb,
                rmse: row.rmse_ppb,
                mean_error: row.mean_error_ppb.unwrap_or(f64::NAN),
            },
        });
    }
    Ok(out)
}

/// Everything the `report` stage produces for one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    /// Rolling MAB per site and stage.
    pub rolling_mab: Vec<(String, Stage, HourlySeries)>,
    pub exceedances: Vec<(String, ExceedanceSummary)>,
    pub segments: Vec<(String, Stage, Vec<SegmentStats>)>,
}

impl EvaluationReport {
    pub fn row(&self, site: &str, stage: Stage) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.site_id == site && r.stage == stage)
    }

    /// Write `report.csv` plus the rolling, exceedance and segment tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_report_csv_to(std::io::BufWriter::new(file), &self.rows, &path)?;

        let mut w = writer(&dir.join("rolling_mab.csv"))?;
        w.write_record(["timestamp", "site_id", "stage", "mab_ppb"])
            .map_err(|e| Error::csv(dir, e))?;
        for (site, stage, s) in &self.rolling_mab {
            for (t, v) in s.iter() {
                w.write_record([
                    format_timestamp(t),
                    site.clone(),
                    stage.as_str().into(),
                    v.map(fmt).unwrap_or_default(),
                ])
                .map_err(|e| Error::csv(dir, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = writer(&dir.join("exceedances.csv"))?;
        w.write_record([
            "site_id",
            "date",
            "sensor_hours",
            "reference_hours",
            "threshold_ppb",
            "spearman",
        ])
        .map_err(|e| Error::csv(dir, e))?;
        for (site, ex) in &self.exceedances {
            for d in &ex.days {
                w.write_record([
                    site.clone(),
                    d.date.to_string(),
                    d.sensor_hours.to_string(),
                    d.reference_hours.to_string(),
                    fmt(ex.threshold),
                    ex.spearman.map(fmt).unwrap_or_default(),
                ])
                .map_err(|e| Error::csv(dir, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = writer(&dir.join("segments.csv"))?;
        w.write_record([
            "site_id",
            "stage",
            "segmentation",
            "segment",
            "n",
            "mean_error_ppb",
            "sd_error_ppb",
            "mab_ppb",
        ])
        .map_err(|e| Error::csv(dir, e))?;
        for (site, stage, segs) in &self.segments {
            for s in segs {
                w.write_record([
                    site.clone(),
                    stage.as_str().into(),
                    s.segmentation.clone(),
                    s.segment.clone(),
                    s.n.to_string(),
                    fmt(s.mean_error),
                    fmt(s.sd_error),
                    fmt(s.mab),
                ])
                .map_err(|e| Error::csv(dir, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;
    use proptest::prelude::*;

    const H0: i64 = 17_916 * 24;

    fn series(values: Vec<Option<f64>>) -> HourlySeries {
        HourlySeries::new("S", Channel::No2Sensor, hour_time(H0), values).unwrap()
    }

    #[test]
    fn mab_of_identical_and_offset_series() {
        let r = series((0..200).map(|i| Some((i as f64 * 0.3).sin() * 10.0 + 20.0)).collect());
        let m = rolling_mab(&r, &r, 72, 0.75);
        assert!(m.values()[..71].iter().all(Option::is_none));
        assert!(m.values()[71..].iter().all(|v| *v == Some(0.0)));
        let s = r.map(Channel::No2Sensor, |v| v + 4.0);
        let m = rolling_mab(&s, &r, 72, 0.75);
        assert!(m.values()[71..].iter().all(|v| (v.unwrap() - 4.0).abs() < 1e-12));
    }

    #[test]
    fn mab_missing_when_coverage_low() {
        let r = series((0..100).map(|i| (i % 2 == 0).then_some(1.0)).collect());
        let s = series((0..100).map(|_| Some(2.0)).collect());
        let m = rolling_mab(&s, &r, 72, 0.75);
        assert!(m.values().iter().all(Option::is_none));
        let m = rolling_mab(&s, &r, 72, 0.5);
        assert_eq!(m.values()[99], Some(1.0));
    }

    #[test]
    fn identical_series_summary() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 1.7).collect();
        let s = summary_values(&x, &x).unwrap();
        assert_eq!((s.r2, s.mab, s.rmse), (Some(1.0), 0.0, 0.0));
    }

    #[test]
    fn constant_series_has_missing_r2() {
        let s = summary_values(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.r2, None);
        assert!(summary_values(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn noise_rmse_matches_injected_sd() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let r: Vec<f64> = (0..1000).map(|i| 20.0 + (i as f64 / 9.0).sin() * 8.0).collect();
        let s: Vec<f64> = r.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let st = summary_values(&s, &r).unwrap();
        assert!((st.rmse - 5.0).abs() < 0.5, "{}", st.rmse);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn spearman_matches_brute_force() {
        // Brute force: Pearson on ranks computed by counting.
        let brute = |a: &[f64], b: &[f64]| {
            let rank = |x: &[f64]| -> Vec<f64> {
                x.iter()
                    .map(|v| {
                        let less = x.iter().filter(|w| *w < v).count() as f64;
                        let eq = x.iter().filter(|w| *w == v).count() as f64;
                        less + (eq + 1.0) / 2.0
                    })
                    .collect()
            };
            let (ra, rb) = (rank(a), rank(b));
            let n = a.len() as f64;
            let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
            let c: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
            c / (va * vb).sqrt()
        };
        let a: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + ((i * 3) % 5) as f64).collect();
        assert!((spearman(&a, &b).unwrap() - brute(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn exceedances() {
        let r = series((0..72).map(|i| Some(if i % 24 < 6 { 30.0 } else { 10.0 })).collect());
        let e = exceedance_counts(&r, &r, 20.0);
        assert_eq!(e.days.len(), 3);
        assert!(e.days.iter().all(|d| d.sensor_hours == d.reference_hours));
        let low = r.map(Channel::No2Sensor, |_| 1.0);
        let e = exceedance_counts(&low, &low, 20.0);
        assert!(e.days.iter().all(|d| d.sensor_hours == 0));
        assert_eq!(e.spearman, None);
    }

    fn grid() -> GridSpec {
        GridSpec {
            ncols: 5,
            nrows: 4,
            xllcorner: -118.5,
            yllcorner: 33.7,
            cellsize: 0.1,
        }
    }

    #[test]
    fn idw_single_and_equal_sites() {
        let r = idw_grid(&[(33.9, -118.2, 17.0)], &grid(), 2.0).unwrap();
        assert!(r.values.iter().all(|v| (*v - 17.0).abs() < 1e-12));
        let r = idw_grid(&[(33.75, -118.45, 5.0), (34.05, -118.05, 5.0)], &grid(), 2.0).unwrap();
        assert!(r.values.iter().all(|v| (*v - 5.0).abs() < 1e-12));
        assert!(matches!(idw_grid(&[], &grid(), 2.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn idw_symmetry_and_coincidence() {
        let g = grid();
        let (lat, lon) = g.cell_centre(1, 2);
        let sites = [(lat + 0.25, lon, 10.0), (lat - 0.25, lon, 30.0)];
        let r = idw_grid(&sites, &g, 2.0).unwrap();
        assert!((r.get(1, 2) - 20.0).abs() < 1e-9);
        let sites = [(lat + 0.01, lon - 0.02, 42.0), (lat - 0.3, lon, 0.0)];
        let r = idw_grid(&sites, &g, 2.0).unwrap();
        assert_eq!(r.get(1, 2), 42.0);
    }

    #[test]
    fn ascii_header() {
        let r = idw_grid(&[(33.9, -118.2, 17.0)], &grid(), 2.0).unwrap();
        let text = r.to_ascii();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6 + 4);
        for (line, key) in lines
            .iter()
            .zip(["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"])
        {
            assert!(line.starts_with(key));
        }
        assert_eq!(lines[6].split(' ').count(), 5);
        assert_eq!(header_number(-118.47000000000001), "-118.47");
        assert_eq!(header_number(0.02), "0.02");
        assert_eq!(header_number(34.0), "34");
    }

    #[test]
    fn segments_cover_every_error() {
        let n = 96;
        let r = series((0..n).map(|i| Some(10.0 + i as f64)).collect());
        let s = series((0..n).map(|i| Some(12.0 + i as f64 + (i % 3) as f64)).collect());
        let rh = series((0..n).map(|i| Some((i * 37 % 100) as f64)).collect());
        let ws = series((0..n).map(|i| Some((i % 5) as f64)).collect());
        let wd = series((0..n).map(|i| Some((i * 45) as f64)).collect());
        let segs = segment_errors(&s, &r, Some(&rh), Some(&ws), Some(&wd));
        for name in ["rh_quartile", "wind_speed", "wind_sector", "concentration_quartile"] {
            let total: usize = segs.iter().filter(|x| x.segmentation == name).map(|x| x.n).sum();
            assert_eq!(total, n, "{name}");
        }
        let sectors: Vec<_> = segs.iter().filter(|x| x.segmentation == "wind_sector").collect();
        assert!(sectors.iter().all(|x| x.n == n / 8));
    }

    #[test]
    fn report_csv_round_trip() {
        let rows = vec![ReportRow {
            site_id: "X".into(),
            stage: Stage::FrameworkPlusEs,
            stats: SummaryStats {
                n: 10,
                r2: None,
                mab: 1.25,
                rmse: 2.5,
                mean_error: -0.5,
            },
        }];
        let mut buf = Vec::new();
        write_report_csv_to(&mut buf, &rows, Path::new("m")).unwrap();
        assert_eq!(read_report_csv_from(buf.as_slice(), Path::new("m")).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn report_arithmetic(pairs in proptest::collection::vec((-50.0f64..150.0, -50.0f64..150.0), 2..200)) {
            let (s, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let st = summary_values(&s, &r).unwrap();
            prop_assert!(st.rmse >= 0.0);
            prop_assert!(st.rmse * st.rmse >= st.mean_error * st.mean_error - 1e-9);
            prop_assert!(st.rmse >= st.mab - 1e-9);
            if let Some(r2) = st.r2 {
                prop_assert!((0.0..=1.0).contains(&r2));
            }
        }
    }
}
