use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteRole {
    /// Regulatory-grade station only.
    Reference,
    /// Low-cost sensor only.
    Sensor,
    /// Low-cost sensor sharing a site with a regulatory-grade station.
    CoLocated,
}

impl SiteRole {
    pub fn has_reference(self) -> bool {
        matches!(self, SiteRole::Reference | SiteRole::CoLocated)
    }

    pub fn has_sensor(self) -> bool {
        matches!(self, SiteRole::Sensor | SiteRole::CoLocated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SiteRole::Reference => "reference",
            SiteRole::Sensor => "sensor",
            SiteRole::CoLocated => "co_located",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub site_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub role: SiteRole,
    /// Reference site whose NO2 distribution stands in for this site's.
    #[serde(default)]
    pub no2_proxy_id: Option<String>,
    /// Nearest co-located site; source of the O3 proxy and the offset-error estimate.
    #[serde(default)]
    pub proximity_proxy_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    /// Comparison window `t_d`.
    pub window_days: f64,
    /// Failure persistence `t_f` before an alarm.
    pub persistence_days: f64,
    pub ks_alpha: f64,
    pub slope_bounds: (f64, f64),
    /// ppb
    pub offset_bounds: (f64, f64),
    pub min_coverage: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            window_days: 3.0,
            persistence_days: 5.0,
            ks_alpha: 0.05,
            slope_bounds: (0.7, 1.3),
            offset_bounds: (-5.0, 5.0),
            min_coverage: 0.75,
        }
    }
}

impl DriftConfig {
    pub fn window_hours(&self) -> i64 {
        (self.window_days * 24.0).round() as i64
    }

    pub fn persistence_hours(&self) -> u32 {
        (self.persistence_days * 24.0).round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.slope_bounds;
        let (olo, ohi) = self.offset_bounds;
        if !(self.ks_alpha > 0.0 && self.ks_alpha < 1.0) {
            return Err(Error::Config(format!("ks_alpha {} not in (0, 1)", self.ks_alpha)));
        }
        if !(slo < 1.0 && 1.0 < shi) {
            return Err(Error::Config(format!("slope_bounds ({slo}, {shi}) must bracket 1")));
        }
        if !(olo <= 0.0 && 0.0 <= ohi && olo < ohi) {
            return Err(Error::Config(format!("offset_bounds ({olo}, {ohi}) must contain 0")));
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(Error::Config(format!(
                "min_coverage {} not in (0, 1]",
                self.min_coverage
            )));
        }
        if self.window_hours() < 2 || self.persistence_hours() < 1 {
            return Err(Error::Config(
                "window and persistence durations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RangePolicy {
    /// Range spans the union of the two compared samples.
    #[default]
    JointMinMax,
    Fixed {
        min: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramConfig {
    /// ppb
    pub bin_width: f64,
    pub range_policy: RangePolicy,
    pub smoothing_epsilon: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bin_width: 2.0,
            range_policy: RangePolicy::JointMinMax,
            smoothing_epsilon: 1e-6,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::Config(format!("bin_width {} must be > 0", self.bin_width)));
        }
        if !(self.smoothing_epsilon > 0.0) {
            return Err(Error::Config("smoothing_epsilon must be > 0".into()));
        }
        if let RangePolicy::Fixed { min, max } = self.range_policy {
            if !(min < max) {
                return Err(Error::Config(format!("fixed range ({min}, {max}) is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingAlignment {
    /// Window centred on the hour (batch processing).
    #[default]
    Centered,
    /// Window ending at the hour (streaming).
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialCorrectionConfig {
    /// Sigmoid rate, per ppb.
    pub sigmoid_k: f64,
    pub rolling_hours: usize,
    pub enabled: bool,
    pub alignment: SmoothingAlignment,
}

impl Default for SpatialCorrectionConfig {
    fn default() -> Self {
        Self {
            sigmoid_k: 0.057,
            rolling_hours: 3,
            enabled: true,
            alignment: SmoothingAlignment::Centered,
        }
    }
}

impl SpatialCorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigmoid_k > 0.0) {
            return Err(Error::Config(format!("sigmoid_k {} must be > 0", self.sigmoid_k)));
        }
        if self.rolling_hours < 1 {
            return Err(Error::Config("rolling_hours must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which closed form seeds the offset before the divergence search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitVariant {
    /// `b0 = E[Z] - b1 * E[C_ox - C_O3]`, consistent with the moment-matched offset.
    #[default]
    SlopeConsistent,
    /// `b0 = E[Z] - E[C_ox - C_O3]`, with no slope factor on the mean.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub init_variant: InitVariant,
    /// Box for both slopes.
    pub slope_bounds: (f64, f64),
    /// Box for the offset, ppb.
    pub offset_bounds: (f64, f64),
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Jittered restarts in addition to the start from the moment-matched guess.
    pub restarts: usize,
    /// Parameters in force before the first fit (pre-deployment calibration).
    pub factory_params: (f64, f64, f64),
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            init_variant: InitVariant::SlopeConsistent,
            slope_bounds: (0.2, 5.0),
            offset_bounds: (-50.0, 50.0),
            max_iterations: 500,
            tolerance: 1e-8,
            restarts: 3,
            factory_params: (0.0, 1.0, 1.0),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.slope_bounds;
        let (olo, ohi) = self.offset_bounds;
        if !(slo > 0.0 && slo < shi) {
            return Err(Error::Config(format!(
                "slope search box ({slo}, {shi}) must be positive"
            )));
        }
        if !(olo < ohi) {
            return Err(Error::Config(format!("offset search box ({olo}, {ohi}) is empty")));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be > 0".into()));
        }
        let (_, b1, b2) = self.factory_params;
        if !(b1 > 0.0 && b2 > 0.0) {
            return Err(Error::Config("factory slopes must be positive".into()));
        }
        Ok(())
    }
}

/// Network topology, proxy wiring and every tunable threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub sites: Vec<SiteSpec>,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub spatial: SpatialCorrectionConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

impl NetworkConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Toml {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: NetworkConfig = toml::from_str(&text).map_err(|e| Error::Toml {
            path: path.into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn site(&self, id: &str) -> Option<&SiteSpec> {
        self.sites.iter().find(|s| s.site_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        self.drift.validate()?;
        self.histogram.validate()?;
        self.spatial.validate()?;
        self.calibration.validate()?;

        let mut seen = BTreeSet::new();
        for s in &self.sites {
            if !seen.insert(s.site_id.as_str()) {
                return Err(Error::Config(format!("duplicate site '{}'", s.site_id)));
            }
            if !(-90.0..=90.0).contains(&s.latitude) || !(-180.0..=180.0).contains(&s.longitude) {
                return Err(Error::Config(format!(
                    "site '{}' has coordinates out of range ({}, {})",
                    s.site_id, s.latitude, s.longitude
                )));
            }
        }
        let roles: BTreeMap<&str, SiteRole> = self.sites.iter().map(|s| (s.site_id.as_str(), s.role)).collect();
        for s in &self.sites {
            for (label, proxy) in [
                ("no2_proxy_id", &s.no2_proxy_id),
                ("proximity_proxy_id", &s.proximity_proxy_id),
            ] {
                match proxy {
                    None if s.role.has_sensor() => {
                        return Err(Error::Config(format!("sensor site '{}' lacks {label}", s.site_id)));
                    }
                    None => {}
                    Some(p) if p == &s.site_id => {
                        return Err(Error::Config(format!("site '{}' is its own {label}", s.site_id)));
                    }
                    Some(p) => match roles.get(p.as_str()) {
                        None => {
                            return Err(Error::Config(format!(
                                "site '{}' {label} '{p}' is not declared",
                                s.site_id
                            )))
                        }
                        Some(r) if !r.has_reference() => {
                            return Err(Error::Config(format!(
                                "site '{}' {label} '{p}' has no reference NO2 channel",
                                s.site_id
                            )))
                        }
                        Some(_) => {}
                    },
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[[sites]]
site_id = "RIVR"
latitude = 33.9995
longitude = -117.4160
role = "co_located"
no2_proxy_id = "MLVB"
proximity_proxy_id = "MLVB"

[[sites]]
site_id = "MLVB"
latitude = 33.9996
longitude = -117.4924
role = "co_located"
no2_proxy_id = "RIVR"
proximity_proxy_id = "RIVR"

[histogram]
range_policy = { fixed = { min = 0.0, max = 100.0 } }
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = NetworkConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.sites.len(), 2);
        assert_eq!(cfg.drift, DriftConfig::default());
        assert_eq!(cfg.drift.persistence_hours(), 120);
        assert_eq!(cfg.drift.window_hours(), 72);
        assert_eq!(cfg.spatial.sigmoid_k, 0.057);
        assert_eq!(cfg.histogram.range_policy, RangePolicy::Fixed { min: 0.0, max: 100.0 });
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = NetworkConfig::from_toml_str(SAMPLE).unwrap();
        let again = NetworkConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_self_proxy() {
        let text = SAMPLE.replace("no2_proxy_id = \"MLVB\"", "no2_proxy_id = \"RIVR\"");
        assert!(matches!(NetworkConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_proxy_without_reference() {
        let text = SAMPLE.replace(
            "site_id = \"MLVB\"\nlatitude = 33.9996\nlongitude = -117.4924\nrole = \"co_located\"",
            "site_id = \"MLVB\"\nlatitude = 33.9996\nlongitude = -117.4924\nrole = \"sensor\"",
        );
        assert!(matches!(NetworkConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_thresholds() {
        let mut d = DriftConfig::default();
        d.slope_bounds = (1.1, 1.3);
        assert!(d.validate().is_err());
        let mut d = DriftConfig::default();
        d.offset_bounds = (1.0, 5.0);
        assert!(d.validate().is_err());
        let mut d = DriftConfig::default();
        d.ks_alpha = 1.0;
        assert!(d.validate().is_err());
        let h = HistogramConfig {
            bin_width: 0.0,
            ..Default::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        let text = SAMPLE.replace("latitude = 33.9995", "latitude = 95.0");
        assert!(NetworkConfig::from_toml_str(&text).is_err());
    }
}
