//! Synthetic network generator with a known ground truth.
//!
//! A regional NO2 and O3 field (diurnal cycle, AR(1) synoptic term, log-normal
//! multiplicative noise) is shared by every site, with small independent
//! site perturbations. Sensor signals follow the inverted measurement model so
//! that applying the true parameters recovers the true concentration.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, TimeZone, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    hour_index, hour_time, Channel, DriftConfig, HourlySeries, SiteRole, SiteSpec, CONCENTRATION_FLOOR_PPB,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diurnal {
    pub mean: f64,
    pub amplitude: f64,
    /// Local hour of the daily maximum.
    pub peak_hour: f64,
}

impl Diurnal {
    fn at(&self, hour_of_day: f64) -> f64 {
        self.mean + self.amplitude * (2.0 * PI * (hour_of_day - self.peak_hour) / 24.0).cos()
    }
}

/// One generative concentration field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub diurnal: Diurnal,
    /// Hourly AR(1) coefficient of the synoptic term.
    pub ar_phi: f64,
    /// Stationary standard deviation of the synoptic term, ppb.
    pub ar_sd: f64,
    /// Log-space sd of the multiplicative noise.
    pub lognormal_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    OffsetStep,
    SlopeDecay,
    OffsetRamp,
}

impl DriftKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DriftKind::OffsetStep => "offset_step",
            DriftKind::SlopeDecay => "slope_decay",
            DriftKind::OffsetRamp => "offset_ramp",
        }
    }
}

/// Change to a sensor's generative parameters from `onset_day` onward.
///
/// * `offset_step`: `b0 += magnitude` at onset.
/// * `offset_ramp`: `b0` rises linearly by `magnitude` over `duration_days`.
/// * `slope_decay`: `b1` and `b2` shrink by the fraction `magnitude` over
///   `duration_days`, while `b0` grows by `magnitude` times the mean NO2 level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub site_id: String,
    pub onset_day: f64,
    pub kind: DriftKind,
    pub magnitude: f64,
    #[serde(default = "default_event_days")]
    pub duration_days: f64,
}

fn default_event_days() -> f64 {
    30.0
}

/// Replace the reference NO2 at `site_id` with an unrelated field from
/// `onset_day` onward, breaking it as a distribution proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyShift {
    pub site_id: String,
    pub onset_day: f64,
    /// Multiplier on the replacement field.
    pub scale: f64,
    /// Shape of the replacement field; small values make it near-Gaussian.
    pub lognormal_sigma: f64,
}

/// Offset error shared across the network.
///
/// Every site carries a common diurnal term plus a stochastic term whose
/// between-site correlation decays as `exp(-distance / decay_length_km)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedErrorSpec {
    pub amplitude: f64,
    pub phase_hour: f64,
    pub decay_length_km: f64,
    #[serde(default = "default_shared_sd")]
    pub stochastic_sd: f64,
    #[serde(default = "default_shared_phi")]
    pub ar_phi: f64,
}

fn default_shared_sd() -> f64 {
    3.0
}

fn default_shared_phi() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub sites: Vec<SiteSpec>,
    pub start: DateTime<Utc>,
    pub duration_days: f64,
    pub no2: FieldSpec,
    pub o3: FieldSpec,
    /// Log-space sd of each site's departure from the regional field.
    pub site_perturbation: f64,
    /// Sensor noise on the NO2 side of the measurement model, ppb.
    pub noise_sd: f64,
    /// Noise on the sensor O3 channel, ppb.
    pub o3_sensor_noise_sd: f64,
    /// Generative `(b0, b1, b2)` per site before any drift; absent sites use (0, 1, 1).
    pub initial_params: BTreeMap<String, [f64; 3]>,
    pub drift_events: Vec<DriftEvent>,
    pub shared_error: Option<SharedErrorSpec>,
    pub proxy_shifts: Vec<ProxyShift>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            sites: Vec::new(),
            start: Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap(),
            duration_days: 30.0,
            no2: FieldSpec {
                diurnal: Diurnal {
                    mean: 18.0,
                    amplitude: 7.0,
                    peak_hour: 7.0,
                },
                ar_phi: 0.97,
                ar_sd: 5.0,
                lognormal_sigma: 0.35,
            },
            o3: FieldSpec {
                diurnal: Diurnal {
                    mean: 32.0,
                    amplitude: 18.0,
                    peak_hour: 14.0,
                },
                ar_phi: 0.97,
                ar_sd: 6.0,
                lognormal_sigma: 0.15,
            },
            site_perturbation: 0.08,
            noise_sd: 1.5,
            o3_sensor_noise_sd: 1.0,
            initial_params: BTreeMap::new(),
            drift_events: Vec::new(),
            shared_error: None,
            proxy_shifts: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// Shortest scenario that fits two full detection cycles.
    pub fn min_duration_days(drift: &DriftConfig) -> f64 {
        2.0 * (drift.window_days + drift.persistence_days)
    }

    pub fn hours(&self) -> usize {
        (self.duration_days * 24.0).round() as usize
    }

    /// Generative parameters at `site` before drift.
    pub fn base_params(&self, site: &str) -> [f64; 3] {
        self.initial_params.get(site).copied().unwrap_or([0.0, 1.0, 1.0])
    }

    /// Turn every noise source off.
    pub fn noiseless(mut self) -> Self {
        self.site_perturbation = 0.0;
        self.noise_sd = 0.0;
        self.o3_sensor_noise_sd = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_against(&DriftConfig::default())
    }

    pub fn validate_against(&self, drift: &DriftConfig) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.sites.is_empty() {
            return err("no sites".into());
        }
        let min = Self::min_duration_days(drift);
        if !(self.duration_days >= min) {
            return err(format!(
                "duration {} days is below the minimum {min}",
                self.duration_days
            ));
        }
        if hour_index(self.start) * 3600 != self.start.timestamp() {
            return err("start is not on an hour boundary".into());
        }
        for (label, v) in [
            ("site_perturbation", self.site_perturbation),
            ("noise_sd", self.noise_sd),
            ("o3_sensor_noise_sd", self.o3_sensor_noise_sd),
            ("no2.ar_sd", self.no2.ar_sd),
            ("o3.ar_sd", self.o3.ar_sd),
            ("no2.lognormal_sigma", self.no2.lognormal_sigma),
            ("o3.lognormal_sigma", self.o3.lognormal_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{label} must be finite and non-negative"));
            }
        }
        for phi in [self.no2.ar_phi, self.o3.ar_phi] {
            if !(0.0..1.0).contains(&phi) {
                return err(format!("ar_phi {phi} outside [0, 1)"));
            }
        }
        let roles: BTreeMap<&str, SiteRole> = self.sites.iter().map(|s| (s.site_id.as_str(), s.role)).collect();
        if roles.len() != self.sites.len() {
            return err("duplicate site id".into());
        }
        for s in &self.sites {
            for proxy in [&s.no2_proxy_id, &s.proximity_proxy_id].into_iter().flatten() {
                match roles.get(proxy.as_str()) {
                    None => return err(format!("site {} refers to unknown proxy {proxy}", s.site_id)),
                    Some(r) if !r.has_reference() => {
                        return err(format!("proxy {proxy} of site {} has no reference channel", s.site_id))
                    }
                    Some(_) => {}
                }
            }
            if s.role.has_sensor() && s.no2_proxy_id.is_none() {
                return err(format!("sensor site {} has no NO2 proxy", s.site_id));
            }
        }
        for (site, p) in &self.initial_params {
            if !roles.contains_key(site.as_str()) {
                return err(format!("initial_params for unknown site {site}"));
            }
            if p.iter().any(|v| !v.is_finite()) || p[1] <= 0.0 || p[2] <= 0.0 {
                return err(format!("initial_params for {site} must be finite with positive slopes"));
            }
        }
        for e in &self.drift_events {
            match roles.get(e.site_id.as_str()) {
                Some(r) if r.has_sensor() => {}
                _ => return err(format!("drift event on {} which has no sensor", e.site_id)),
            }
            if !e.onset_day.is_finite() || !e.magnitude.is_finite() || !(e.duration_days > 0.0) {
                return err(format!("drift event on {} is malformed", e.site_id));
            }
            if e.kind == DriftKind::SlopeDecay && !(0.0..1.0).contains(&e.magnitude) {
                return err("slope_decay magnitude must be in [0, 1)".into());
            }
        }
        for p in &self.proxy_shifts {
            match roles.get(p.site_id.as_str()) {
                Some(r) if r.has_reference() => {}
                _ => return err(format!("proxy shift on {} which has no reference", p.site_id)),
            }
            if !(p.scale > 0.0) || !(p.lognormal_sigma >= 0.0) {
                return err(format!("proxy shift on {} is malformed", p.site_id));
            }
        }
        if let Some(se) = &self.shared_error {
            if !(se.decay_length_km > 0.0) || !(0.0..1.0).contains(&se.ar_phi) || !(se.stochastic_sd >= 0.0) {
                return err("shared_error is malformed".into());
            }
        }
        Ok(())
    }

    /// Generative `(b0, b1, b2)` at `site` for each hour offset from the start.
    pub fn params_at(&self, site: &str, hour: usize) -> [f64; 3] {
        let [mut b0, mut b1, mut b2] = self.base_params(site);
        let day = hour as f64 / 24.0;
        for e in self.drift_events.iter().filter(|e| e.site_id == site) {
            if day < e.onset_day {
                continue;
            }
            let progress = ((day - e.onset_day) / e.duration_days).min(1.0);
            match e.kind {
                DriftKind::OffsetStep => b0 += e.magnitude,
                DriftKind::OffsetRamp => b0 += e.magnitude * progress,
                DriftKind::SlopeDecay => {
                    let f = 1.0 - e.magnitude * progress;
                    b1 *= f;
                    b2 *= f;
                    b0 += e.magnitude * progress * self.no2.diurnal.mean;
                }
            }
        }
        [b0, b1, b2]
    }
}

/// One `ground_truth.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub site_id: String,
    pub onset: DateTime<Utc>,
    /// `baseline`, a drift kind, or `proxy_shift`.
    #[serde(rename = "type")]
    pub kind: String,
    pub magnitude: f64,
    pub b0_true: f64,
    pub b1_true: f64,
    pub b2_true: f64,
}

/// Hidden state at one site, hour by hour from the scenario start.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTruth {
    pub no2: Vec<f64>,
    pub o3: Vec<f64>,
    /// Offset error added to the sensor signal, ppb.
    pub shared_error: Vec<f64>,
    pub params: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteData {
    pub site: SiteSpec,
    /// Observable channels in [`Channel::ALL`] order.
    pub channels: Vec<HourlySeries>,
    pub truth: SiteTruth,
}

impl SiteData {
    pub fn series(&self, channel: Channel) -> Option<&HourlySeries> {
        self.channels.iter().find(|s| s.channel() == channel)
    }

    /// Truth NO2 as a series, for oracles.
    pub fn truth_no2(&self, start_hour: i64) -> HourlySeries {
        HourlySeries::from_fn(
            &self.site.site_id,
            Channel::No2Ref,
            start_hour,
            self.truth.no2.len(),
            |h| Some(self.truth.no2[(h - start_hour) as usize]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: DateTime<Utc>,
    pub sites: Vec<SiteData>,
    pub ledger: Vec<LedgerRow>,
}

impl Scenario {
    pub fn start_hour(&self) -> i64 {
        hour_index(self.start)
    }

    pub fn site(&self, id: &str) -> Option<&SiteData> {
        self.sites.iter().find(|s| s.site.site_id == id)
    }
}

// RNG streams. Regional streams are small integers; per-site streams are
// offset by the site index so sites can be generated in any order.
const STREAM_NO2: u64 = 1;
const STREAM_O3: u64 = 2;
const STREAM_MET: u64 = 3;
const STREAM_SHARED: u64 = 4;
const STREAM_SHIFT_BASE: u64 = 100;
const STREAM_SITE_BASE: u64 = 1_000;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Zero-mean AR(1) with the given stationary sd, started from stationarity.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64, sd: f64) -> Vec<f64> {
    let innovation = sd * (1.0 - phi * phi).sqrt();
    let mut x = sd * normal(rng);
    (0..n)
        .map(|_| {
            let out = x;
            x = phi * x + innovation * normal(rng);
            out
        })
        .collect()
}

fn hour_of_day(start_hour: i64, i: usize) -> f64 {
    ((start_hour + i as i64).rem_euclid(24)) as f64
}

fn field(rng: &mut ChaCha8Rng, spec: &FieldSpec, start_hour: i64, n: usize) -> Vec<f64> {
    let synoptic = ar1(rng, n, spec.ar_phi, spec.ar_sd);
    let s = spec.lognormal_sigma;
    synoptic
        .iter()
        .enumerate()
        .map(|(i, ar)| {
            let additive = (spec.diurnal.at(hour_of_day(start_hour, i)) + ar).max(0.0);
            additive * (s * normal(rng) - 0.5 * s * s).exp()
        })
        .collect()
}

/// Great-circle distance in km.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const R: f64 = 6371.0;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * a.sqrt().asin()
}

fn shared_errors(spec: &ScenarioSpec, start_hour: i64, n: usize) -> Vec<Vec<f64>> {
    let m = spec.sites.len();
    let Some(se) = &spec.shared_error else {
        return vec![vec![0.0; n]; m];
    };
    let cov = DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = (&spec.sites[i], &spec.sites[j]);
        let d = haversine_km(a.latitude, a.longitude, b.latitude, b.longitude);
        (-d / se.decay_length_km).exp() + if i == j { 1e-9 } else { 0.0 }
    });
    let l = cov.cholesky().expect("exponential covariance is positive definite").l();
    let mut rng = rng_for(spec.seed, STREAM_SHARED);
    let latent: Vec<Vec<f64>> = (0..m).map(|_| ar1(&mut rng, n, se.ar_phi, 1.0)).collect();
    (0..m)
        .map(|i| {
            (0..n)
                .map(|t| {
                    let diurnal = se.amplitude * (2.0 * PI * (hour_of_day(start_hour, t) - se.phase_hour) / 24.0).cos();
                    let stochastic: f64 = (0..=i).map(|j| l[(i, j)] * latent[j][t]).sum();
                    diurnal + se.stochastic_sd * stochastic
                })
                .collect()
        })
        .collect()
}

struct Meteorology {
    temperature: Vec<f64>,
    humidity: Vec<f64>,
    wind_speed: Vec<f64>,
    wind_direction: Vec<f64>,
}

fn meteorology(seed: u64, start_hour: i64, n: usize) -> Meteorology {
    let mut rng = rng_for(seed, STREAM_MET);
    let t_anom = ar1(&mut rng, n, 0.97, 2.5);
    let rh_anom = ar1(&mut rng, n, 0.95, 6.0);
    let ws_anom = ar1(&mut rng, n, 0.9, 0.35);
    let wd_anom = ar1(&mut rng, n, 0.95, 50.0);
    let mut m = Meteorology {
        temperature: Vec::with_capacity(n),
        humidity: Vec::with_capacity(n),
        wind_speed: Vec::with_capacity(n),
        wind_direction: Vec::with_capacity(n),
    };
    for i in 0..n {
        let phase = 2.0 * PI * (hour_of_day(start_hour, i) - 15.0) / 24.0;
        let t = 20.0 + 6.0 * phase.cos() + t_anom[i];
        m.temperature.push(t);
        m.humidity
            .push((60.0 - 2.5 * (t - 20.0) + rh_anom[i]).clamp(5.0, 100.0));
        m.wind_speed.push((0.6 + 0.5 * phase.cos() + ws_anom[i]).exp());
        m.wind_direction
            .push((250.0 + 30.0 * phase.cos() + wd_anom[i]).rem_euclid(360.0));
    }
    m
}

struct Regional {
    no2: Vec<f64>,
    o3: Vec<f64>,
    met: Meteorology,
    shared: Vec<Vec<f64>>,
    /// Replacement reference NO2 per shifted site.
    shifted: BTreeMap<String, (usize, Vec<f64>)>,
}

fn regional(spec: &ScenarioSpec, start_hour: i64, n: usize) -> Regional {
    let no2 = field(&mut rng_for(spec.seed, STREAM_NO2), &spec.no2, start_hour, n);
    let o3 = field(&mut rng_for(spec.seed, STREAM_O3), &spec.o3, start_hour, n);
    let mut shifted = BTreeMap::new();
    for (k, p) in spec.proxy_shifts.iter().enumerate() {
        let mut rng = rng_for(spec.seed, STREAM_SHIFT_BASE + k as u64);
        let mut fs = spec.no2;
        fs.lognormal_sigma = p.lognormal_sigma;
        fs.diurnal.peak_hour += 12.0;
        let replacement: Vec<f64> = field(&mut rng, &fs, start_hour, n)
            .iter()
            .map(|v| v * p.scale)
            .collect();
        let onset = (p.onset_day * 24.0).round().max(0.0) as usize;
        shifted.insert(p.site_id.clone(), (onset, replacement));
    }
    Regional {
        no2,
        o3,
        met: meteorology(spec.seed, start_hour, n),
        shared: shared_errors(spec, start_hour, n),
        shifted,
    }
}

fn generate_site(spec: &ScenarioSpec, idx: usize, start_hour: i64, n: usize, reg: &Regional) -> SiteData {
    let site = &spec.sites[idx];
    let id = site.site_id.as_str();
    let mut rng = rng_for(spec.seed, STREAM_SITE_BASE + idx as u64);
    let sp = spec.site_perturbation;
    let xi_no2 = ar1(&mut rng, n, 0.7, 1.0);
    let xi_o3 = ar1(&mut rng, n, 0.7, 1.0);
    let no2: Vec<f64> = (0..n)
        .map(|t| reg.no2[t] * (sp * xi_no2[t] - 0.5 * sp * sp).exp())
        .collect();
    let o3: Vec<f64> = (0..n)
        .map(|t| reg.o3[t] * (sp * xi_o3[t] - 0.5 * sp * sp).exp())
        .collect();
    let params: Vec<[f64; 3]> = (0..n).map(|t| spec.params_at(id, t)).collect();
    let shared = &reg.shared[idx];

    let mut channels = Vec::new();
    // Readings under the ingestion floor are reported as missing, like an out-of-range instrument flag.
    let series = |ch: Channel, f: &dyn Fn(usize) -> f64| {
        HourlySeries::from_fn(id, ch, start_hour, n, |h| {
            let v = f((h - start_hour) as usize);
            (!ch.is_concentration() || v >= CONCENTRATION_FLOOR_PPB).then_some(v)
        })
    };
    if site.role.has_sensor() {
        let noise: Vec<f64> = (0..n).map(|_| spec.noise_sd * normal(&mut rng)).collect();
        let o3_noise: Vec<f64> = (0..n).map(|_| spec.o3_sensor_noise_sd * normal(&mut rng)).collect();
        let c_ox: Vec<f64> = (0..n)
            .map(|t| {
                let [b0, b1, b2] = params[t];
                (no2[t] + shared[t] + noise[t] - b0 + b2 * o3[t]) / b1
            })
            .collect();
        let o3_sensor: Vec<f64> = (0..n).map(|t| o3[t] + o3_noise[t]).collect();
        channels.push(series(Channel::COx, &|t| c_ox[t]));
        channels.push(series(Channel::O3, &|t| o3_sensor[t]));
        // Uncorrected sensor output under factory parameters (0, 1, 1).
        channels.push(series(Channel::No2Sensor, &|t| c_ox[t] - o3_sensor[t]));
    }
    if site.role.has_reference() {
        let shifted = reg.shifted.get(id);
        channels.push(series(Channel::No2Ref, &|t| match shifted {
            Some((onset, repl)) if t >= *onset => repl[t],
            _ => no2[t],
        }));
        channels.push(series(Channel::O3Ref, &|t| o3[t]));
    }
    // Meteorology is regional with a small site-dependent temperature shift.
    let dt = 0.5 * (idx as f64 - spec.sites.len() as f64 / 2.0) / spec.sites.len().max(1) as f64;
    channels.push(series(Channel::Temperature, &|t| reg.met.temperature[t] + dt));
    channels.push(series(Channel::RelativeHumidity, &|t| reg.met.humidity[t]));
    channels.push(series(Channel::WindSpeed, &|t| reg.met.wind_speed[t]));
    channels.push(series(Channel::WindDirection, &|t| reg.met.wind_direction[t]));
    channels.sort_by_key(|s| Channel::ALL.iter().position(|c| *c == s.channel()));

    SiteData {
        site: site.clone(),
        channels,
        truth: SiteTruth {
            no2,
            o3,
            shared_error: shared.clone(),
            params,
        },
    }
}

fn ledger(spec: &ScenarioSpec) -> Vec<LedgerRow> {
    let n = spec.hours();
    let hour_at = |day: f64| ((day * 24.0).round().max(0.0) as usize).min(n.saturating_sub(1));
    let mut rows = Vec::new();
    for s in spec.sites.iter().filter(|s| s.role.has_sensor()) {
        let [b0, b1, b2] = spec.params_at(&s.site_id, 0);
        rows.push(LedgerRow {
            site_id: s.site_id.clone(),
            onset: spec.start,
            kind: "baseline".into(),
            magnitude: 0.0,
            b0_true: b0,
            b1_true: b1,
            b2_true: b2,
        });
    }
    for e in &spec.drift_events {
        // Parameters once the event has fully developed.
        let settled = match e.kind {
            DriftKind::OffsetStep => e.onset_day,
            _ => e.onset_day + e.duration_days,
        };
        let [b0, b1, b2] = spec.params_at(&e.site_id, hour_at(settled));
        rows.push(LedgerRow {
            site_id: e.site_id.clone(),
            onset: hour_time(hour_index(spec.start) + hour_at(e.onset_day) as i64),
            kind: e.kind.as_str().into(),
            magnitude: e.magnitude,
            b0_true: b0,
            b1_true: b1,
            b2_true: b2,
        });
    }
    for p in &spec.proxy_shifts {
        rows.push(LedgerRow {
            site_id: p.site_id.clone(),
            onset: hour_time(hour_index(spec.start) + hour_at(p.onset_day) as i64),
            kind: "proxy_shift".into(),
            magnitude: p.scale,
            b0_true: f64::NAN,
            b1_true: f64::NAN,
            b2_true: f64::NAN,
        });
    }
    rows
}

/// Generate a scenario. Identical specs produce identical output.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let n = spec.hours();
    let start_hour = hour_index(spec.start);
    let reg = regional(spec, start_hour, n);
    let sites = (0..spec.sites.len())
        .into_par_iter()
        .map(|i| generate_site(spec, i, start_hour, n, &reg))
        .collect();
    Ok(Scenario {
        start: spec.start,
        sites,
        ledger: ledger(spec),
    })
}

fn site(id: &str, lat: f64, lon: f64, no2: &str, near: &str) -> SiteSpec {
    SiteSpec {
        site_id: id.into(),
        latitude: lat,
        longitude: lon,
        role: SiteRole::CoLocated,
        no2_proxy_id: Some(no2.into()),
        proximity_proxy_id: Some(near.into()),
    }
}

/// Nine co-located sites across the Los Angeles basin with their NO2 and
/// proximity proxies.
pub fn sample_network() -> Vec<SiteSpec> {
    vec![
        site("RIVR", 33.9995, -117.4160, "MLVB", "MLVB"),
        site("MLVB", 33.9996, -117.4924, "RIVR", "RIVR"),
        site("SNBO", 34.1070, -117.2740, "MLVB", "RIVR"),
        site("FONT", 34.1000, -117.4920, "SNBO", "MLVB"),
        site("PICO", 34.0110, -118.0690, "CELA", "CELA"),
        site("CMPT", 33.9010, -118.2050, "HDSN", "HDSN"),
        site("LAXH", 33.9550, -118.4300, "CMPT", "CMPT"),
        site("HDSN", 33.8020, -118.2200, "CMPT", "CMPT"),
        site("CELA", 34.0660, -118.2270, "HDSN", "PICO"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrator::apply_model;
    use crate::model::CalibrationParams;

    fn pair() -> Vec<SiteSpec> {
        sample_network().into_iter().take(2).collect()
    }

    fn spec() -> ScenarioSpec {
        ScenarioSpec {
            sites: pair(),
            duration_days: 20.0,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioSpec { seed: 8, ..spec() }).unwrap();
        assert_ne!(a.sites[0].truth.no2, c.sites[0].truth.no2);
    }

    #[test]
    fn truth_params_recover_truth_exactly() {
        let mut s = spec().noiseless();
        s.initial_params.insert("RIVR".into(), [3.0, 1.1, 0.9]);
        s.drift_events.push(DriftEvent {
            site_id: "RIVR".into(),
            onset_day: 5.0,
            kind: DriftKind::SlopeDecay,
            magnitude: 0.3,
            duration_days: 10.0,
        });
        let sc = generate(&s).unwrap();
        let site = &sc.sites[0];
        let c_ox = site.series(Channel::COx).unwrap().values();
        let o3 = site.series(Channel::O3).unwrap().values();
        for t in 0..site.truth.no2.len() {
            let [b0, b1, b2] = site.truth.params[t];
            let p = CalibrationParams::new(b0, b1, b2).unwrap();
            let y = apply_model(&p, c_ox[t].unwrap(), o3[t].unwrap());
            assert!((y - site.truth.no2[t]).abs() < 1e-9, "hour {t}");
        }
    }

    #[test]
    fn proxy_pair_shares_field_when_noiseless() {
        let sc = generate(&spec().noiseless()).unwrap();
        let a = sc.sites[0].series(Channel::No2Ref).unwrap();
        let b = sc.sites[1].series(Channel::No2Ref).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn no2_is_right_skewed_and_non_negative() {
        let sc = generate(&ScenarioSpec {
            duration_days: 120.0,
            ..spec()
        })
        .unwrap();
        let x = &sc.sites[0].truth.no2;
        assert!(x.iter().all(|v| *v >= 0.0));
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
        let skew = x.iter().map(|a| (a - m).powi(3)).sum::<f64>() / n / v.powf(1.5);
        assert!(skew > 0.2, "skew {skew}");
    }

    #[test]
    fn step_applies_from_onset() {
        let mut s = spec();
        s.drift_events.push(DriftEvent {
            site_id: "MLVB".into(),
            onset_day: 10.0,
            kind: DriftKind::OffsetStep,
            magnitude: 8.0,
            duration_days: 1.0,
        });
        assert_eq!(s.params_at("MLVB", 239), [0.0, 1.0, 1.0]);
        assert_eq!(s.params_at("MLVB", 240), [8.0, 1.0, 1.0]);
        assert_eq!(s.params_at("RIVR", 400), [0.0, 1.0, 1.0]);
        let l = ledger(&s);
        let row = l.iter().find(|r| r.kind == "offset_step").unwrap();
        assert_eq!(row.b0_true, 8.0);
        assert_eq!(row.onset, s.start + chrono::Duration::days(10));
    }

    #[test]
    fn large_offset_output_stays_ingestible() {
        let mut s = spec();
        s.drift_events.push(DriftEvent {
            site_id: "RIVR".into(),
            onset_day: 2.0,
            kind: DriftKind::OffsetStep,
            magnitude: 40.0,
            duration_days: 1.0,
        });
        let sc = generate(&s).unwrap();
        let raw = sc.site("RIVR").unwrap().series(Channel::No2Sensor).unwrap();
        assert!(raw.present_count() < raw.len());
        for s in sc.sites.iter().flat_map(|s| &s.channels) {
            s.check_concentration_floor().unwrap();
        }
    }

    #[test]
    fn slope_decay_halves() {
        let mut s = spec();
        s.drift_events.push(DriftEvent {
            site_id: "RIVR".into(),
            onset_day: 0.0,
            kind: DriftKind::SlopeDecay,
            magnitude: 0.5,
            duration_days: 10.0,
        });
        let p = s.params_at("RIVR", 24 * 10);
        assert!((p[1] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
        assert!(p[0] > 0.0);
    }

    #[test]
    fn proxy_without_reference_rejected() {
        let mut s = spec();
        s.sites[1].role = SiteRole::Sensor;
        assert!(matches!(generate(&s), Err(Error::Spec(_))));
    }

    #[test]
    fn short_duration_rejected() {
        let s = ScenarioSpec {
            duration_days: 15.0,
            ..spec()
        };
        assert!(matches!(generate(&s), Err(Error::Spec(_))));
    }

    #[test]
    fn shared_error_correlates_with_distance() {
        let s = ScenarioSpec {
            sites: sample_network(),
            duration_days: 60.0,
            shared_error: Some(SharedErrorSpec {
                amplitude: 0.0,
                phase_hour: 15.0,
                decay_length_km: 20.0,
                stochastic_sd: 3.0,
                ar_phi: 0.9,
            }),
            ..spec()
        };
        let sc = generate(&s).unwrap();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        let e = |id: &str| sc.site(id).unwrap().truth.shared_error.clone();
        // RIVR-MLVB about 7 km apart, RIVR-LAXH about 94 km.
        let near = corr(&e("RIVR"), &e("MLVB"));
        let far = corr(&e("RIVR"), &e("LAXH"));
        assert!(near > 0.5, "near {near}");
        assert!(far < near);
    }
}
