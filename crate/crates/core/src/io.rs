//! CSV ingestion and export.
//!
//! Time series use the long format `timestamp,site_id,channel,value` with
//! ISO-8601 UTC timestamps and an empty value for a missing hour.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::Deserialize;

use crate::calibrator::Classification;
use crate::drift::{AlarmRecord, DriftCheck};
use crate::error::{Error, Result};
use crate::model::{hour_index, hourly_average, CalibrationParams, Channel, HourlySeries};
use crate::simulator::{LedgerRow, Scenario};
use crate::spatial::ErrorSeries;

pub const LONG_HEADER: [&str; 4] = ["timestamp", "site_id", "channel", "value"];
pub const ALARM_HEADER: [&str; 9] = [
    "timestamp",
    "site_id",
    "p_ks",
    "a1_hat",
    "a0_hat",
    "ks_pass",
    "slope_pass",
    "offset_pass",
    "alarmed",
];
pub const PARAMS_HEADER: [&str; 9] = [
    "fitted_at",
    "site_id",
    "b0",
    "b1",
    "b2",
    "achieved_dkl",
    "iterations",
    "converged",
    "classification",
];
pub const ERRORS_HEADER: [&str; 7] = [
    "timestamp",
    "site_id",
    "proxy_id",
    "raw_error",
    "damped_error",
    "applied",
    "smoothed_error",
];
pub const GROUND_TRUTH_HEADER: [&str; 7] = ["site_id", "onset", "type", "magnitude", "b0_true", "b1_true", "b2_true"];

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// RFC 3339 with any offset, or a naive `YYYY-MM-DD HH:MM[:SS]` read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Deserialize)]
struct LongRow {
    timestamp: String,
    site_id: String,
    channel: String,
    value: Option<String>,
}

/// Parse long-format rows and average them to hourly series, one per
/// `(site, channel)`, ordered by site then channel.
///
/// Rows for each `(site, channel)` must have strictly increasing timestamps.
/// Explicit missing rows extend the series span so leading and trailing gaps
/// survive a round trip.
pub fn read_long_csv_from(reader: impl Read, label: &Path) -> Result<Vec<HourlySeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(label, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != LONG_HEADER {
        return Err(Error::Ingest {
            index: 0,
            reason: format!("expected header {}", LONG_HEADER.join(",")),
        });
    }
    type Rows = Vec<(usize, DateTime<Utc>, Option<f64>)>;
    let mut groups: BTreeMap<(String, usize), (Channel, Rows)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<LongRow>().enumerate() {
        let index = i + 1;
        let row = row.map_err(|e| Error::Ingest {
            index,
            reason: e.to_string(),
        })?;
        let t = parse_timestamp(&row.timestamp).ok_or_else(|| Error::Ingest {
            index,
            reason: format!("bad timestamp '{}'", row.timestamp),
        })?;
        let channel: Channel = row.channel.parse().map_err(|_| Error::Ingest {
            index,
            reason: format!("unknown channel '{}'", row.channel),
        })?;
        let value = match row.value.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| Error::Ingest {
                    index,
                    reason: format!("bad value '{s}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingest {
                        index,
                        reason: "non-finite value".into(),
                    });
                }
                Some(v)
            }
        };
        let order = Channel::ALL.iter().position(|c| *c == channel).unwrap_or(usize::MAX);
        groups
            .entry((row.site_id, order))
            .or_insert_with(|| (channel, Vec::new()))
            .1
            .push((index, t, value));
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((site, _), (channel, rows)) in groups {
        for pair in rows.windows(2) {
            if pair[1].1 <= pair[0].1 {
                return Err(Error::Ingest {
                    index: pair[1].0,
                    reason: format!("timestamp {} does not increase for {site}/{channel}", pair[1].1),
                });
            }
        }
        let present: Vec<(DateTime<Utc>, f64)> = rows.iter().filter_map(|&(_, t, v)| v.map(|v| (t, v))).collect();
        let averaged = hourly_average(&site, channel, &present).map_err(|e| match e {
            Error::Ingest { index, reason } => {
                // Translate the index within present rows back to the file row.
                let row = rows.iter().filter(|r| r.2.is_some()).nth(index).map_or(0, |r| r.0);
                Error::Ingest { index: row, reason }
            }
            e => e,
        })?;
        let first = hour_index(rows[0].1);
        let last = hour_index(rows[rows.len() - 1].1);
        out.push(HourlySeries::from_fn(
            &site,
            channel,
            first,
            (last - first + 1) as usize,
            |h| averaged.at_hour(h),
        ));
    }
    Ok(out)
}

pub fn read_long_csv(path: &Path) -> Result<Vec<HourlySeries>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_long_csv_from(std::io::BufReader::new(file), path)
}

pub fn write_long_csv_to(writer: impl Write, series: &[HourlySeries], label: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e| Error::csv(label, e);
    w.write_record(LONG_HEADER).map_err(err)?;
    for s in series {
        for (t, v) in s.iter() {
            w.write_record([
                format_timestamp(t),
                s.site_id().to_string(),
                s.channel().to_string(),
                fmt_opt(v),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(label, e))
}

pub fn write_long_csv(path: &Path, series: &[HourlySeries]) -> Result<()> {
    let file = create(path)?;
    write_long_csv_to(std::io::BufWriter::new(file), series, path)
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_rows<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl IntoIterator<Item = [String; N]>,
) -> Result<()> {
    let file = create(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every `*.csv` under `dir` (sorted by name, skipping `skip`), read
/// independently so one bad file does not hide the others.
pub fn read_data_dir(dir: &Path, skip: &[&str]) -> Result<Vec<(PathBuf, Result<Vec<HourlySeries>>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| skip.contains(&n))
        })
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let r = read_long_csv(&p);
            (p, r)
        })
        .collect())
}

fn flag(b: bool) -> String {
    b.to_string()
}

pub fn write_alarms_csv<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a AlarmRecord)>) -> Result<()> {
    write_rows(
        path,
        ALARM_HEADER,
        rows.into_iter().map(|(site, r)| match &r.check {
            DriftCheck::Evaluated(t) => [
                format_timestamp(t.evaluated_at),
                site.to_string(),
                fmt_f64(t.p_ks),
                fmt_f64(t.a1_hat),
                fmt_f64(t.a0_hat),
                flag(t.ks_pass),
                flag(t.slope_pass),
                flag(t.offset_pass),
                flag(r.alarmed),
            ],
            DriftCheck::NotEvaluable { at, .. } => [
                format_timestamp(*at),
                site.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                flag(r.alarmed),
            ],
        }),
    )
}

/// One fitted parameter set with the diagnostics verdict at fit time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub site_id: String,
    pub params: CalibrationParams,
    pub classification: Classification,
}

pub fn write_params_csv(path: &Path, rows: &[ParamRecord]) -> Result<()> {
    write_rows(
        path,
        PARAMS_HEADER,
        rows.iter().map(|r| {
            [
                r.params.fitted_at.map(format_timestamp).unwrap_or_default(),
                r.site_id.clone(),
                fmt_f64(r.params.b0),
                fmt_f64(r.params.b1),
                fmt_f64(r.params.b2),
                fmt_f64(r.params.achieved_dkl),
                r.params.iterations.to_string(),
                flag(r.params.converged),
                r.classification.as_str().to_string(),
            ]
        }),
    )
}

pub fn write_errors_csv(path: &Path, series: &[ErrorSeries]) -> Result<()> {
    write_rows(
        path,
        ERRORS_HEADER,
        series.iter().flat_map(|s| {
            s.samples().iter().map(move |e| {
                [
                    format_timestamp(e.at),
                    s.site_id.clone(),
                    s.proxy_id.clone(),
                    fmt_opt(e.raw_error),
                    fmt_opt(e.damped_error),
                    flag(e.applied),
                    fmt_opt(e.smoothed_error),
                ]
            })
        }),
    )
}

pub fn write_ground_truth_csv(path: &Path, ledger: &[LedgerRow]) -> Result<()> {
    write_rows(
        path,
        GROUND_TRUTH_HEADER,
        ledger.iter().map(|r| {
            [
                r.site_id.clone(),
                format_timestamp(r.onset),
                r.kind.clone(),
                fmt_f64(r.magnitude),
                fmt_f64(r.b0_true),
                fmt_f64(r.b1_true),
                fmt_f64(r.b2_true),
            ]
        }),
    )
}

pub const TRUTH_FILE: &str = "truth.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Write a generated scenario: `<site>.csv` per site in the long format,
/// `ground_truth.csv` and `truth.csv` with the hidden hourly state.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &scenario.sites {
        write_long_csv(&dir.join(format!("{}.csv", s.site.site_id)), &s.channels)?;
    }
    write_ground_truth_csv(&dir.join(GROUND_TRUTH_FILE), &scenario.ledger)?;
    let start = scenario.start_hour();
    write_rows(
        &dir.join(TRUTH_FILE),
        [
            "timestamp",
            "site_id",
            "no2_true",
            "o3_true",
            "shared_error",
            "b0_true",
            "b1_true",
            "b2_true",
        ],
        scenario.sites.iter().flat_map(|s| {
            let t = &s.truth;
            (0..t.no2.len()).map(move |i| {
                [
                    format_timestamp(crate::model::hour_time(start + i as i64)),
                    s.site.site_id.clone(),
                    fmt_f64(t.no2[i]),
                    fmt_f64(t.o3[i]),
                    fmt_f64(t.shared_error[i]),
                    fmt_f64(t.params[i][0]),
                    fmt_f64(t.params[i][1]),
                    fmt_f64(t.params[i][2]),
                ]
            })
        }),
    )
}

/// Read back the `no2_true` column of `truth.csv` as one series per site.
pub fn read_truth_no2(path: &Path) -> Result<Vec<HourlySeries>> {
    #[derive(Deserialize)]
    struct Row {
        timestamp: String,
        site_id: String,
        no2_true: Option<f64>,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut by_site: BTreeMap<String, Vec<(DateTime<Utc>, Option<f64>)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Ingest {
            index: i + 1,
            reason: e.to_string(),
        })?;
        let t = parse_timestamp(&row.timestamp).ok_or_else(|| Error::Ingest {
            index: i + 1,
            reason: format!("bad timestamp '{}'", row.timestamp),
        })?;
        by_site.entry(row.site_id).or_default().push((t, row.no2_true));
    }
    by_site
        .into_iter()
        .map(|(site, rows)| HourlySeries::from_samples(site, Channel::No2Ref, &rows))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hour_time;
    use proptest::prelude::*;

    fn label() -> &'static Path {
        Path::new("<memory>")
    }

    fn parse(text: &str) -> Result<Vec<HourlySeries>> {
        read_long_csv_from(text.as_bytes(), label())
    }

    #[test]
    fn parses_and_averages() {
        let text = "timestamp,site_id,channel,value\n\
            2018-01-05T13:00:00Z,RIVR,c_ox,10\n\
            2018-01-05T13:30:00Z,RIVR,c_ox,20\n\
            2018-01-05T15:00:00Z,RIVR,c_ox,\n\
            2018-01-05T13:00:00Z,RIVR,o3,5\n";
        let s = parse(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].channel(), Channel::COx);
        assert_eq!(s[0].values(), &[Some(15.0), None, None]);
        assert_eq!(s[1].values(), &[Some(5.0)]);
    }

    #[test]
    fn rejects_out_of_order_with_row_index() {
        let text = "timestamp,site_id,channel,value\n\
            2018-01-05T13:00:00Z,RIVR,c_ox,10\n\
            2018-01-05T12:00:00Z,RIVR,c_ox,10\n";
        assert!(matches!(parse(text), Err(Error::Ingest { index: 2, .. })));
    }

    #[test]
    fn rejects_bad_rows() {
        let base = "timestamp,site_id,channel,value\n";
        assert!(matches!(
            parse(&format!("{base}nope,RIVR,c_ox,1\n")),
            Err(Error::Ingest { index: 1, .. })
        ));
        assert!(matches!(
            parse(&format!("{base}2018-01-05T13:00:00Z,RIVR,pm25,1\n")),
            Err(Error::Ingest { .. })
        ));
        assert!(matches!(
            parse(&format!("{base}2018-01-05T13:00:00Z,RIVR,c_ox,NaN\n")),
            Err(Error::Ingest { .. })
        ));
        assert!(matches!(
            parse(&format!("{base}2018-01-05T13:00:00Z,RIVR,no2_ref,-25\n")),
            Err(Error::Ingest { .. })
        ));
        assert!(parse("a,b\n1,2\n").is_err());
    }

    #[test]
    fn accepts_offsets_and_naive_times() {
        assert_eq!(
            parse_timestamp("2018-01-05T14:00:00+01:00"),
            parse_timestamp("2018-01-05T13:00:00Z")
        );
        assert_eq!(
            parse_timestamp("2018-01-05 13:00:00"),
            parse_timestamp("2018-01-05T13:00:00Z")
        );
    }

    proptest! {
        #[test]
        fn long_csv_round_trips_exactly(
            start in 420_000i64..430_000,
            values in proptest::collection::vec(proptest::option::weighted(0.8, -19.0f64..500.0), 1..60),
        ) {
            let s = HourlySeries::new("S1", Channel::No2Ref, hour_time(start), values).unwrap();
            let t = s.map(Channel::Temperature, |v| v * 0.37 - 3.0);
            let mut buf = Vec::new();
            write_long_csv_to(&mut buf, &[s.clone(), t.clone()], label()).unwrap();
            let back = read_long_csv_from(buf.as_slice(), label()).unwrap();
            prop_assert_eq!(back, vec![s, t]);
        }
    }
}
