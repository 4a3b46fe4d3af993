use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SECONDS_PER_HOUR: i64 = 3600;

/// Lowest concentration accepted at ingestion, in ppb.
pub const CONCENTRATION_FLOOR_PPB: f64 = -20.0;

/// Measurement channel carried by an [`HourlySeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    COx,
    O3,
    No2Sensor,
    No2Ref,
    O3Ref,
    Temperature,
    RelativeHumidity,
    WindSpeed,
    WindDirection,
}

impl Channel {
    pub const ALL: [Channel; 9] = [
        Channel::COx,
        Channel::O3,
        Channel::No2Sensor,
        Channel::No2Ref,
        Channel::O3Ref,
        Channel::Temperature,
        Channel::RelativeHumidity,
        Channel::WindSpeed,
        Channel::WindDirection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::COx => "c_ox",
            Channel::O3 => "o3",
            Channel::No2Sensor => "no2_sensor",
            Channel::No2Ref => "no2_ref",
            Channel::O3Ref => "o3_ref",
            Channel::Temperature => "temperature",
            Channel::RelativeHumidity => "relative_humidity",
            Channel::WindSpeed => "wind_speed",
            Channel::WindDirection => "wind_direction",
        }
    }

    /// Channels whose values are gas mixing ratios in ppb.
    pub fn is_concentration(self) -> bool {
        matches!(
            self,
            Channel::COx | Channel::O3 | Channel::No2Sensor | Channel::No2Ref | Channel::O3Ref
        )
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Channel::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown channel '{s}'"))
    }
}

/// Hours since the Unix epoch for the hour containing `t` (floor).
pub fn hour_index(t: DateTime<Utc>) -> i64 {
    t.timestamp().div_euclid(SECONDS_PER_HOUR)
}

/// Start instant of the hour with the given index.
pub fn hour_time(index: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(index * SECONDS_PER_HOUR, 0)
        .single()
        .expect("hour index within chrono range")
}

pub fn is_hour_aligned(t: DateTime<Utc>) -> bool {
    t.timestamp().rem_euclid(SECONDS_PER_HOUR) == 0 && t.timestamp_subsec_nanos() == 0
}

/// Half-open interval of whole hours `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Window {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self { start, end }
    }

    /// The `hours` whole hours ending with (and including) the hour `at`.
    pub fn ending_at(at: DateTime<Utc>, hours: i64) -> Self {
        let end = hour_time(hour_index(at) + 1);
        Self {
            start: end - Duration::hours(hours),
            end,
        }
    }

    pub fn hours(&self) -> i64 {
        (hour_index(self.end) - hour_index(self.start)).max(0)
    }

    pub(crate) fn index_range(&self) -> (i64, i64) {
        (hour_index(self.start), hour_index(self.end))
    }
}

/// Timestamped hourly series for one site and channel.
///
/// Hours are stored contiguously from `start`; a gap is an explicit `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    site_id: String,
    channel: Channel,
    start_hour: i64,
    values: Vec<Option<f64>>,
}

impl HourlySeries {
    pub fn empty(site_id: impl Into<String>, channel: Channel) -> Self {
        Self {
            site_id: site_id.into(),
            channel,
            start_hour: 0,
            values: Vec::new(),
        }
    }

    /// Build from a start hour and a contiguous run of hourly values.
    pub fn new(
        site_id: impl Into<String>,
        channel: Channel,
        start: DateTime<Utc>,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if !is_hour_aligned(start) {
            return Err(Error::Ingest {
                index: 0,
                reason: format!("start {start} is not aligned to a whole hour"),
            });
        }
        if let Some(index) = values.iter().position(|v| matches!(v, Some(x) if !x.is_finite())) {
            return Err(Error::Ingest {
                index,
                reason: "non-finite value".into(),
            });
        }
        Ok(Self {
            site_id: site_id.into(),
            channel,
            start_hour: hour_index(start),
            values,
        })
    }

    /// Build from explicit `(timestamp, value)` samples. Timestamps must be
    /// hour-aligned and strictly increasing; skipped hours become missing.
    pub fn from_samples(
        site_id: impl Into<String>,
        channel: Channel,
        samples: &[(DateTime<Utc>, Option<f64>)],
    ) -> Result<Self> {
        let site_id = site_id.into();
        let Some(&(first, _)) = samples.first() else {
            return Ok(Self::empty(site_id, channel));
        };
        let start_hour = hour_index(first);
        let mut values = Vec::with_capacity(samples.len());
        let mut previous: Option<i64> = None;
        for (index, &(t, v)) in samples.iter().enumerate() {
            if !is_hour_aligned(t) {
                return Err(Error::Ingest {
                    index,
                    reason: format!("timestamp {t} is not aligned to a whole hour"),
                });
            }
            let h = hour_index(t);
            if let Some(p) = previous {
                if h <= p {
                    return Err(Error::Ingest {
                        index,
                        reason: format!("timestamp {t} is not strictly increasing"),
                    });
                }
            }
            if matches!(v, Some(x) if !x.is_finite()) {
                return Err(Error::Ingest {
                    index,
                    reason: "non-finite value".into(),
                });
            }
            values.resize((h - start_hour) as usize, None);
            values.push(v);
            previous = Some(h);
        }
        Ok(Self {
            site_id,
            channel,
            start_hour,
            values,
        })
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn with_identity(mut self, site_id: impl Into<String>, channel: Channel) -> Self {
        self.site_id = site_id.into();
        self.channel = channel;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start(&self) -> DateTime<Utc> {
        hour_time(self.start_hour)
    }

    /// Exclusive end hour.
    pub fn end(&self) -> DateTime<Utc> {
        hour_time(self.start_hour + self.values.len() as i64)
    }

    pub fn start_hour(&self) -> i64 {
        self.start_hour
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    /// Value at hour index `h` (hours since epoch); `None` outside the series or when missing.
    pub fn at_hour(&self, h: i64) -> Option<f64> {
        let offset = h - self.start_hour;
        if offset < 0 {
            return None;
        }
        self.values.get(offset as usize).copied().flatten()
    }

    pub fn get(&self, t: DateTime<Utc>) -> Option<f64> {
        self.at_hour(hour_index(t))
    }

    pub fn iter(&self) -> impl Iterator<Item = (DateTime<Utc>, Option<f64>)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (hour_time(self.start_hour + i as i64), *v))
    }

    /// Non-missing samples only.
    pub fn present(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(move |(i, v)| v.map(|x| (self.start_hour + i as i64, x)))
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Fraction of the window's hours that carry a value.
    pub fn coverage(&self, window: &Window) -> f64 {
        let (lo, hi) = window.index_range();
        if hi <= lo {
            return 0.0;
        }
        let n = (lo..hi).filter(|&h| self.at_hour(h).is_some()).count();
        n as f64 / (hi - lo) as f64
    }

    /// Apply `f` to every present value, keeping gaps.
    pub fn map(&self, channel: Channel, f: impl Fn(f64) -> f64) -> Self {
        Self {
            site_id: self.site_id.clone(),
            channel,
            start_hour: self.start_hour,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
        }
    }

    /// Build a series over `[start_hour, start_hour + len)` from a per-hour function.
    pub fn from_fn(
        site_id: impl Into<String>,
        channel: Channel,
        start_hour: i64,
        len: usize,
        f: impl FnMut(i64) -> Option<f64>,
    ) -> Self {
        let values = (start_hour..start_hour + len as i64).map(f).collect();
        Self {
            site_id: site_id.into(),
            channel,
            start_hour,
            values,
        }
    }

    /// Reject concentrations below [`CONCENTRATION_FLOOR_PPB`].
    pub fn check_concentration_floor(&self) -> Result<()> {
        if !self.channel.is_concentration() {
            return Ok(());
        }
        if let Some(index) = self
            .values
            .iter()
            .position(|v| matches!(v, Some(x) if *x < CONCENTRATION_FLOOR_PPB))
        {
            return Err(Error::Ingest {
                index,
                reason: format!(
                    "{} value {} ppb below plausibility floor {CONCENTRATION_FLOOR_PPB} ppb",
                    self.channel,
                    self.values[index].unwrap_or_default()
                ),
            });
        }
        Ok(())
    }
}

/// Average sub-hourly samples into whole hours.
///
/// Each output hour `[H, H+1)` is the arithmetic mean of the raw samples it
/// contains, labelled by `H`. Hours between the first and last sample that
/// received nothing are missing.
pub fn hourly_average(
    site_id: impl Into<String>,
    channel: Channel,
    raw: &[(DateTime<Utc>, f64)],
) -> Result<HourlySeries> {
    let site_id = site_id.into();
    for (index, pair) in raw.windows(2).enumerate() {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::Ingest {
                index: index + 1,
                reason: format!("timestamp {} does not increase", pair[1].0),
            });
        }
    }
    if let Some(index) = raw.iter().position(|(_, v)| !v.is_finite()) {
        return Err(Error::Ingest {
            index,
            reason: "non-finite value".into(),
        });
    }
    let Some(&(first, _)) = raw.first() else {
        return Ok(HourlySeries::empty(site_id, channel));
    };
    let start_hour = hour_index(first);
    let last_hour = hour_index(raw[raw.len() - 1].0);
    let n = (last_hour - start_hour + 1) as usize;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for &(t, v) in raw {
        let i = (hour_index(t) - start_hour) as usize;
        sums[i] += v;
        counts[i] += 1;
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect();
    let series = HourlySeries {
        site_id,
        channel,
        start_hour,
        values,
    };
    series.check_concentration_floor()?;
    Ok(series)
}

/// One hour where both aligned series carry a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Paired {
    pub at: DateTime<Utc>,
    pub a: f64,
    pub b: f64,
}

/// Pair two series over a window, keeping hours where both are present.
///
/// Fails with [`Error::InsufficientData`] carrying the lower of the two
/// coverages when either series covers less than `min_coverage` of the window.
pub fn align(a: &HourlySeries, b: &HourlySeries, window: &Window, min_coverage: f64) -> Result<Vec<Paired>> {
    let coverage = a.coverage(window).min(b.coverage(window));
    if coverage < min_coverage || window.hours() == 0 {
        return Err(Error::InsufficientData { coverage });
    }
    let (lo, hi) = window.index_range();
    Ok((lo..hi)
        .filter_map(|h| match (a.at_hour(h), b.at_hour(h)) {
            (Some(x), Some(y)) => Some(Paired {
                at: hour_time(h),
                a: x,
                b: y,
            }),
            _ => None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 1, 5, 13, 0, 0).unwrap()
    }

    fn full(site: &str, n: usize, f: impl Fn(usize) -> f64) -> HourlySeries {
        HourlySeries::new(site, Channel::No2Ref, t0(), (0..n).map(|i| Some(f(i))).collect()).unwrap()
    }

    #[test]
    fn constant_minute_samples_average_to_constant() {
        let raw: Vec<_> = (0..60).map(|m| (t0() + Duration::minutes(m), 10.0)).collect();
        let s = hourly_average("A", Channel::No2Ref, &raw).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(t0()), Some(10.0));
    }

    #[test]
    fn gap_hours_are_marked_missing() {
        let h = t0();
        let raw = vec![
            (h + Duration::minutes(5), 5.0),
            (h + Duration::minutes(40), 15.0),
            (h + Duration::minutes(130), 9.0),
        ];
        let s = hourly_average("A", Channel::No2Ref, &raw).unwrap();
        let got: Vec<_> = s.iter().collect();
        assert_eq!(
            got,
            vec![
                (h, Some(10.0)),
                (h + Duration::hours(1), None),
                (h + Duration::hours(2), Some(9.0)),
            ]
        );
    }

    #[test]
    fn sinusoid_averages_to_its_mean() {
        let raw: Vec<_> = (0..60)
            .map(|m| {
                let v = 10.0 + 5.0 * (2.0 * std::f64::consts::PI * m as f64 / 60.0).sin();
                (t0() + Duration::minutes(m), v)
            })
            .collect();
        // direct summation oracle
        let oracle: f64 = raw.iter().map(|(_, v)| v).sum::<f64>() / 60.0;
        let s = hourly_average("A", Channel::No2Ref, &raw).unwrap();
        let v = s.get(t0()).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 10.0).abs() < 0.1);
    }

    #[test]
    fn non_increasing_timestamp_names_index() {
        let raw = vec![
            (t0(), 1.0),
            (t0() + Duration::minutes(1), 1.0),
            (t0() + Duration::minutes(1), 1.0),
        ];
        match hourly_average("A", Channel::No2Ref, &raw) {
            Err(Error::Ingest { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn implausible_concentration_rejected() {
        let raw = vec![(t0(), -25.0)];
        assert!(matches!(
            hourly_average("A", Channel::No2Ref, &raw),
            Err(Error::Ingest { index: 0, .. })
        ));
        // temperature is not a concentration
        assert!(hourly_average("A", Channel::Temperature, &raw).is_ok());
    }

    #[test]
    fn hourly_average_idempotent_on_hourly_input() {
        let raw: Vec<_> = (0..48)
            .map(|i| (t0() + Duration::hours(i), (i as f64 * 0.37).sin() * 7.0 + 12.0))
            .collect();
        let once = hourly_average("A", Channel::No2Ref, &raw).unwrap();
        let again: Vec<_> = once.present().map(|(h, v)| (hour_time(h), v)).collect();
        let twice = hourly_average("A", Channel::No2Ref, &again).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn align_identical_full_series() {
        let a = full("A", 72, |i| i as f64);
        let w = Window::new(t0(), t0() + Duration::hours(72));
        assert_eq!(align(&a, &a, &w, 0.75).unwrap().len(), 72);
    }

    #[test]
    fn align_takes_intersection() {
        let a = HourlySeries::new(
            "A",
            Channel::No2Ref,
            t0(),
            (0..72).map(|i| (![3, 4].contains(&i)).then_some(1.0)).collect(),
        )
        .unwrap();
        let b = HourlySeries::new(
            "B",
            Channel::No2Ref,
            t0(),
            (0..72).map(|i| (![4, 7].contains(&i)).then_some(2.0)).collect(),
        )
        .unwrap();
        let w = Window::new(t0(), t0() + Duration::hours(72));
        let ab = align(&a, &b, &w, 0.75).unwrap();
        let ba = align(&b, &a, &w, 0.75).unwrap();
        assert_eq!(ab.len(), 69);
        let ts_ab: Vec<_> = ab.iter().map(|p| p.at).collect();
        let ts_ba: Vec<_> = ba.iter().map(|p| p.at).collect();
        assert_eq!(ts_ab, ts_ba);
    }

    #[test]
    fn align_reports_coverage_shortfall() {
        let a = HourlySeries::new(
            "A",
            Channel::No2Ref,
            t0(),
            (0..72).map(|i| (i % 2 == 0).then_some(1.0)).collect(),
        )
        .unwrap();
        let b = full("B", 72, |_| 1.0);
        let w = Window::new(t0(), t0() + Duration::hours(72));
        match align(&a, &b, &w, 0.75) {
            Err(Error::InsufficientData { coverage }) => assert_eq!(coverage, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_samples_rejects_unaligned_and_fills_gaps() {
        let bad = [(t0() + Duration::minutes(30), Some(1.0))];
        assert!(HourlySeries::from_samples("A", Channel::O3, &bad).is_err());
        let ok = [(t0(), Some(1.0)), (t0() + Duration::hours(3), Some(2.0))];
        let s = HourlySeries::from_samples("A", Channel::O3, &ok).unwrap();
        assert_eq!(s.values(), &[Some(1.0), None, None, Some(2.0)]);
    }

    #[test]
    fn window_ending_at_includes_hour() {
        let w = Window::ending_at(t0(), 72);
        assert_eq!(w.hours(), 72);
        assert_eq!(w.end, t0() + Duration::hours(1));
    }

    #[test]
    fn channel_names_round_trip() {
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
        }
    }

    proptest! {
        #[test]
        fn align_is_symmetric(
            a in proptest::collection::vec(proptest::option::weighted(0.8, 0.0f64..100.0), 24..96),
            b in proptest::collection::vec(proptest::option::weighted(0.8, 0.0f64..100.0), 24..96),
            lag in 0i64..12,
        ) {
            let a = HourlySeries::new("A", Channel::No2Sensor, t0(), a).unwrap();
            let b = HourlySeries::new("B", Channel::No2Ref, t0() + Duration::hours(lag), b).unwrap();
            let w = Window::new(t0(), t0() + Duration::hours(48));
            let ab = align(&a, &b, &w, 0.0).unwrap();
            let ba = align(&b, &a, &w, 0.0).unwrap();
            prop_assert_eq!(ab.len(), ba.len());
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert_eq!((x.at, x.a, x.b), (y.at, y.b, y.a));
            }
        }
    }
}
