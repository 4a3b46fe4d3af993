//! Batch orchestration: per-site drift monitoring with alarm-triggered
//! re-fits, the spatial offset stage in dependency order, evaluation, and the
//! on-disk layout of a run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrator::{classify_diagnostics, fit_params, init_params, Classification};
use crate::drift::{drift_check_or_skip, AlarmState};
use crate::error::{Error, Result};
use crate::io::{
    format_timestamp, parse_timestamp, read_data_dir, read_truth_no2, write_alarms_csv, write_errors_csv,
    write_params_csv, ParamRecord, GROUND_TRUTH_FILE, TRUTH_FILE,
};
use crate::model::{hour_time, CalibrationParams, Channel, HourlySeries, NetworkConfig, Window};
use crate::report::{
    exceedance_counts, idw_grid, rolling_mab, segment_errors, summary_stats, EvaluationReport, GridSpec, Raster,
    ReportRow, Stage,
};
use crate::simulator::Scenario;
use crate::spatial::{apply_es, compute_raw_error, damp_and_smooth, tune_k, ErrorSeries, TuneCase};

/// Which O3 input and NO2 proxy each sensor is calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Reference O3 and the co-located reference NO2 as the proxy.
    ColocationReferenceO3,
    /// The sensor's own O3 and the configured NO2 proxies.
    #[default]
    DeployedSensorO3,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ColocationReferenceO3 => "colocation_reference_o3",
            Mode::DeployedSensorO3 => "deployed_sensor_o3",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colocation_reference_o3" => Ok(Mode::ColocationReferenceO3),
            "deployed_sensor_o3" => Ok(Mode::DeployedSensorO3),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

/// Resolved inputs of one calibrated site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteWiring {
    pub site_id: String,
    pub o3_site: String,
    pub o3_channel: Channel,
    pub no2_proxy_id: String,
    pub proximity_proxy_id: Option<String>,
}

/// Wiring of every sensor-bearing site, sorted by site id.
pub fn wiring(config: &NetworkConfig, mode: Mode) -> Result<Vec<SiteWiring>> {
    let mut out = Vec::new();
    for s in config.sites.iter().filter(|s| s.role.has_sensor()) {
        let missing = |what: &str| Error::Config(format!("sensor site '{}' lacks {what}", s.site_id));
        let (o3_site, o3_channel, no2_proxy_id) = match mode {
            Mode::DeployedSensorO3 => (
                s.site_id.clone(),
                Channel::O3,
                s.no2_proxy_id.clone().ok_or_else(|| missing("no2_proxy_id"))?,
            ),
            Mode::ColocationReferenceO3 if s.role.has_reference() => {
                (s.site_id.clone(), Channel::O3Ref, s.site_id.clone())
            }
            Mode::ColocationReferenceO3 => (
                s.proximity_proxy_id
                    .clone()
                    .ok_or_else(|| missing("proximity_proxy_id"))?,
                Channel::O3Ref,
                s.no2_proxy_id.clone().ok_or_else(|| missing("no2_proxy_id"))?,
            ),
        };
        out.push(SiteWiring {
            site_id: s.site_id.clone(),
            o3_site,
            o3_channel,
            no2_proxy_id,
            proximity_proxy_id: s.proximity_proxy_id.clone(),
        });
    }
    out.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Drift monitoring, re-fits and the measurement model.
    Framework,
    /// Offset correction from the proximity proxy.
    Spatial,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Framework => "framework",
            StepKind::Spatial => "spatial",
        }
    }
}

pub type Node = (StepKind, String);

/// Kahn ordering of a dependency map (`node -> prerequisites`). Ready nodes
/// are taken in sorted order, so the result is deterministic.
pub fn topological_order(deps: &BTreeMap<Node, Vec<Node>>) -> Result<Vec<Node>> {
    let mut nodes: BTreeSet<Node> = deps.keys().cloned().collect();
    nodes.extend(deps.values().flatten().cloned());
    let mut pending: BTreeMap<Node, usize> = nodes.iter().map(|n| (n.clone(), 0)).collect();
    let mut dependents: BTreeMap<Node, Vec<Node>> = BTreeMap::new();
    for (node, pre) in deps {
        for p in pre.iter().collect::<BTreeSet<_>>() {
            *pending.get_mut(node).unwrap() += 1;
            dependents.entry(p.clone()).or_default().push(node.clone());
        }
    }
    let mut ready: BTreeSet<Node> = pending
        .iter()
        .filter(|(_, &c)| c == 0)
        .map(|(n, _)| n.clone())
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop_first() {
        for d in dependents.get(&n).into_iter().flatten() {
            let c = pending.get_mut(d).unwrap();
            *c -= 1;
            if *c == 0 {
                ready.insert(d.clone());
            }
        }
        order.push(n);
    }
    if order.len() < nodes.len() {
        let stuck: Vec<String> = pending
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|((k, s), _)| format!("{}:{s}", k.as_str()))
            .collect();
        return Err(Error::Config(format!(
            "cyclic proxy dependency among {}",
            stuck.join(", ")
        )));
    }
    Ok(order)
}

/// Dependencies of a run: the spatial step of a site needs its own framework
/// output and the framework output of its proximity proxy.
pub fn dependencies(wiring: &[SiteWiring]) -> BTreeMap<Node, Vec<Node>> {
    let sensors: BTreeSet<&str> = wiring.iter().map(|w| w.site_id.as_str()).collect();
    let mut deps = BTreeMap::new();
    for w in wiring {
        deps.insert((StepKind::Framework, w.site_id.clone()), Vec::new());
        let mut pre = vec![(StepKind::Framework, w.site_id.clone())];
        if let Some(p) = w.proximity_proxy_id.as_deref().filter(|p| sensors.contains(p)) {
            pre.push((StepKind::Framework, p.to_string()));
        }
        deps.insert((StepKind::Spatial, w.site_id.clone()), pre);
    }
    deps
}

#[derive(Debug, Clone, Default)]
pub struct PipelineInput {
    pub series: BTreeMap<String, Vec<HourlySeries>>,
    /// Sources that could not be loaded, keyed by site (file stem).
    pub failures: BTreeMap<String, String>,
    /// Optional true NO2; when present a site is evaluated against it instead
    /// of its reference channel.
    pub truth: BTreeMap<String, HourlySeries>,
}

impl PipelineInput {
    /// Every `<site>.csv` in `dir`. A file that fails to parse is recorded as a
    /// failure of its site and does not stop the others.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut input = PipelineInput::default();
        for (path, loaded) in read_data_dir(dir, &[TRUTH_FILE, GROUND_TRUTH_FILE])? {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            match loaded {
                Ok(series) => {
                    for s in series {
                        input.series.entry(s.site_id().to_string()).or_default().push(s);
                    }
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    input.failures.insert(stem, e.to_string());
                }
            }
        }
        Ok(input)
    }

    /// Also read `truth.csv` from `dir` if it exists.
    pub fn with_truth_from(mut self, dir: &Path) -> Result<Self> {
        let path = dir.join(TRUTH_FILE);
        if path.exists() {
            for s in read_truth_no2(&path)? {
                self.truth.insert(s.site_id().to_string(), s);
            }
        }
        Ok(self)
    }

    pub fn from_scenario(scenario: &Scenario, with_truth: bool) -> Self {
        let mut input = PipelineInput::default();
        for s in &scenario.sites {
            input.series.insert(s.site.site_id.clone(), s.channels.clone());
            if with_truth && s.site.role.has_sensor() {
                input
                    .truth
                    .insert(s.site.site_id.clone(), s.truth_no2(scenario.start_hour()));
            }
        }
        input
    }

    pub fn get(&self, site: &str, channel: Channel) -> Result<&HourlySeries> {
        self.series
            .get(site)
            .and_then(|v| v.iter().find(|s| s.channel() == channel && s.present_count() > 0))
            .ok_or_else(|| Error::MissingChannel {
                site_id: site.into(),
                channel: channel.as_str().into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    /// Raster cell size in degrees.
    pub grid_cellsize: f64,
    pub idw_power: f64,
    /// ppb
    pub exceedance_threshold: f64,
    pub mab_window_hours: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: Mode::DeployedSensorO3,
            grid_cellsize: 0.02,
            idw_power: 2.0,
            exceedance_threshold: 20.0,
            mab_window_hours: 72,
        }
    }
}

/// Everything produced for one calibrated site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteRun {
    pub site_id: String,
    /// Measurement model with the factory parameters throughout.
    pub uncorrected: HourlySeries,
    /// Measurement model with the parameters in force at each hour.
    pub framework: HourlySeries,
    /// `framework` minus the transferred offset error.
    pub corrected: HourlySeries,
    /// Factory parameters followed by every re-fit.
    pub params: Vec<ParamRecord>,
    pub alarms: AlarmState,
    pub errors: Option<ErrorSeries>,
}

impl SiteRun {
    pub fn series(&self, stage: Stage) -> &HourlySeries {
        match stage {
            Stage::Uncorrected => &self.uncorrected,
            Stage::FrameworkCorrected => &self.framework,
            Stage::FrameworkPlusEs => &self.corrected,
        }
    }

    /// Re-fitted parameter sets, without the factory row.
    pub fn fits(&self) -> impl Iterator<Item = &ParamRecord> {
        self.params.iter().filter(|p| p.params.fitted_at.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub order: usize,
    pub kind: StepKind,
    pub site_id: String,
    pub depends_on: Vec<String>,
    /// `ok`, `skipped` or `failed`.
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub mode: Mode,
    pub wiring: Vec<SiteWiring>,
    pub sites: Vec<SiteRun>,
    /// (site, reason), sorted.
    pub failures: Vec<(String, String)>,
    pub trace: Vec<TraceStep>,
    pub report: EvaluationReport,
    pub grid: Option<Raster>,
}

impl PipelineOutput {
    pub fn site(&self, id: &str) -> Option<&SiteRun> {
        self.sites.iter().find(|s| s.site_id == id)
    }
}

/// Load `data_dir` and run.
pub fn run_pipeline(config: &NetworkConfig, data_dir: &Path, opts: &RunOptions) -> Result<PipelineOutput> {
    let input = PipelineInput::load(data_dir)?;
    run_pipeline_on(config, &input, opts)
}

/// Run the full chain on in-memory inputs.
///
/// Sites are monitored and re-fitted in parallel; the spatial step follows
/// the dependency order. A site that fails is reported in `failures` and the
/// others complete.
pub fn run_pipeline_on(config: &NetworkConfig, input: &PipelineInput, opts: &RunOptions) -> Result<PipelineOutput> {
    config.validate()?;
    let wiring = wiring(config, opts.mode)?;
    let order = topological_order(&dependencies(&wiring))?;
    let by_id: BTreeMap<&str, &SiteWiring> = wiring.iter().map(|w| (w.site_id.as_str(), w)).collect();

    let framework: BTreeMap<String, Result<FrameworkRun>> = wiring
        .par_iter()
        .map(|w| {
            if let Some(reason) = input.failures.get(&w.site_id) {
                return (
                    w.site_id.clone(),
                    Err(Error::Config(format!("input not loaded: {reason}"))),
                );
            }
            (w.site_id.clone(), run_framework(w, input, config))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let mut failures: BTreeMap<String, String> = input.failures.clone();
    let mut trace = Vec::new();
    let mut sites: BTreeMap<String, SiteRun> = BTreeMap::new();
    let deps = dependencies(&wiring);
    for (i, node) in order.iter().enumerate() {
        let (kind, site) = node;
        let depends_on = deps[node].iter().map(|(k, s)| format!("{}:{s}", k.as_str())).collect();
        let status = match kind {
            StepKind::Framework => match &framework[site] {
                Ok(_) => "ok",
                Err(e) => {
                    log::warn!("site {site} failed: {e}");
                    failures.entry(site.clone()).or_insert_with(|| e.to_string());
                    "failed"
                }
            },
            StepKind::Spatial => match &framework[site] {
                Err(_) => "skipped",
                Ok(run) => {
                    let w = by_id[site.as_str()];
                    let (corrected, errors) = spatial_step(w, run, &framework, input, config);
                    let status = if errors.is_some() { "ok" } else { "skipped" };
                    sites.insert(site.clone(), run.clone().finish(corrected, errors));
                    status
                }
            },
        };
        trace.push(TraceStep {
            order: i,
            kind: *kind,
            site_id: site.clone(),
            depends_on,
            status,
        });
    }

    let sites: Vec<SiteRun> = sites.into_values().collect();
    let report = evaluate(&sites, input, config, opts);
    let grid = render_grid(&sites, config, opts);
    Ok(PipelineOutput {
        mode: opts.mode,
        wiring,
        sites,
        failures: failures.into_iter().collect(),
        trace,
        report,
        grid,
    })
}

#[derive(Debug, Clone)]
struct FrameworkRun {
    uncorrected: HourlySeries,
    framework: HourlySeries,
    params: Vec<ParamRecord>,
    alarms: AlarmState,
}

impl FrameworkRun {
    fn finish(self, corrected: HourlySeries, errors: Option<ErrorSeries>) -> SiteRun {
        SiteRun {
            site_id: self.alarms.site_id.clone(),
            uncorrected: self.uncorrected,
            framework: self.framework,
            corrected,
            params: self.params,
            alarms: self.alarms,
            errors,
        }
    }
}

fn model_values(p: &CalibrationParams, c_ox: &HourlySeries, o3: &HourlySeries, from: i64, values: &mut [Option<f64>]) {
    let start = c_ox.start_hour();
    for h in from.max(start)..start + values.len() as i64 {
        values[(h - start) as usize] = match (c_ox.at_hour(h), o3.at_hour(h)) {
            (Some(x), Some(o)) => Some(p.apply(x, o)),
            _ => None,
        };
    }
}

fn run_framework(w: &SiteWiring, input: &PipelineInput, cfg: &NetworkConfig) -> Result<FrameworkRun> {
    let c_ox = input.get(&w.site_id, Channel::COx)?;
    let o3 = input.get(&w.o3_site, w.o3_channel)?;
    let z = input.get(&w.no2_proxy_id, Channel::No2Ref)?;
    let (start, n) = (c_ox.start_hour(), c_ox.len());
    let series = |values: &[Option<f64>]| {
        HourlySeries::from_fn(&w.site_id, Channel::No2Sensor, start, n, |h| {
            values[(h - start) as usize]
        })
    };

    let (f0, f1, f2) = cfg.calibration.factory_params;
    let factory = CalibrationParams::new(f0, f1, f2)?;
    let mut values = vec![None; n];
    model_values(&factory, c_ox, o3, start, &mut values);
    let uncorrected = series(&values);
    let mut y = uncorrected.clone();
    let mut params = vec![ParamRecord {
        site_id: w.site_id.clone(),
        params: factory,
        classification: Classification::Ok,
    }];
    let mut fitted: Vec<CalibrationParams> = Vec::new();
    let mut alarms = AlarmState::new(&w.site_id);

    let wh = cfg.drift.window_hours();
    for h in start + wh - 1..start + n as i64 {
        let at = hour_time(h);
        let check = drift_check_or_skip(&y, z, at, &cfg.drift)?;
        if !alarms.record(check, &cfg.drift)? {
            continue;
        }
        match refit(c_ox, o3, z, h, cfg) {
            Ok(p) => {
                log::info!(
                    "{}: re-fit at {} -> ({:.3}, {:.3}, {:.3}), dkl {:.4}",
                    w.site_id,
                    format_timestamp(at),
                    p.b0,
                    p.b1,
                    p.b2,
                    p.achieved_dkl
                );
                model_values(&p, c_ox, o3, h, &mut values);
                y = series(&values);
                fitted.push(p.clone());
                params.push(ParamRecord {
                    site_id: w.site_id.clone(),
                    params: p,
                    classification: classify_diagnostics(&fitted).classification,
                });
            }
            Err(e) => log::warn!("{}: re-fit at {} failed: {e}", w.site_id, format_timestamp(at)),
        }
        alarms.consecutive_fail_hours = 0;
        alarms.alarmed = false;
    }
    Ok(FrameworkRun {
        uncorrected,
        framework: y,
        params,
        alarms,
    })
}

fn refit(
    c_ox: &HourlySeries,
    o3: &HourlySeries,
    z: &HourlySeries,
    h: i64,
    cfg: &NetworkConfig,
) -> Result<CalibrationParams> {
    let wh = cfg.drift.window_hours();
    let (mut x, mut o) = (Vec::new(), Vec::new());
    for k in h + 1 - wh..=h {
        if let (Some(a), Some(b)) = (c_ox.at_hour(k), o3.at_hour(k)) {
            x.push(a);
            o.push(b);
        }
    }
    let zs: Vec<f64> = (h + 1 - wh..=h).filter_map(|k| z.at_hour(k)).collect();
    let mut init = init_params(&zs, &x, &o, cfg.calibration.init_variant)?;
    init.fitted_at = Some(hour_time(h));
    init.window = Some(Window::ending_at(hour_time(h), wh));
    fit_params(&init, &x, &o, &zs, &cfg.histogram, &cfg.calibration)
}

fn spatial_step(
    w: &SiteWiring,
    run: &FrameworkRun,
    framework: &BTreeMap<String, Result<FrameworkRun>>,
    input: &PipelineInput,
    cfg: &NetworkConfig,
) -> (HourlySeries, Option<ErrorSeries>) {
    let proxy = w.proximity_proxy_id.as_deref();
    let source = proxy.and_then(|p| match (framework.get(p), input.get(p, Channel::No2Ref)) {
        (Some(Ok(pr)), Ok(reference)) => Some((pr, reference)),
        _ => None,
    });
    let Some((proxy_run, reference)) = source else {
        log::info!("{}: no offset estimate available from {:?}", w.site_id, proxy);
        return (run.framework.clone(), None);
    };
    let raw = compute_raw_error(&proxy_run.framework, reference).for_site(&w.site_id);
    let damped = damp_and_smooth(&raw, &cfg.spatial, cfg.drift.window_hours() as usize);
    (apply_es(&run.framework, &damped), Some(damped))
}

fn evaluate(sites: &[SiteRun], input: &PipelineInput, cfg: &NetworkConfig, opts: &RunOptions) -> EvaluationReport {
    let mut report = EvaluationReport::default();
    for run in sites {
        let reference = match input.truth.get(&run.site_id) {
            Some(t) => t,
            None => match input.get(&run.site_id, Channel::No2Ref) {
                Ok(r) => r,
                Err(_) => continue,
            },
        };
        for stage in Stage::ALL {
            let s = run.series(stage);
            match summary_stats(s, reference) {
                Ok(stats) => report.rows.push(ReportRow {
                    site_id: run.site_id.clone(),
                    stage,
                    stats,
                }),
                Err(e) => log::warn!("{}: no {} summary: {e}", run.site_id, stage.as_str()),
            }
            report.rolling_mab.push((
                run.site_id.clone(),
                stage,
                rolling_mab(s, reference, opts.mab_window_hours, cfg.drift.min_coverage),
            ));
        }
        report.exceedances.push((
            run.site_id.clone(),
            exceedance_counts(&run.corrected, reference, opts.exceedance_threshold),
        ));
        let met = |ch| input.get(&run.site_id, ch).ok();
        for stage in [Stage::Uncorrected, Stage::FrameworkPlusEs] {
            report.segments.push((
                run.site_id.clone(),
                stage,
                segment_errors(
                    run.series(stage),
                    reference,
                    met(Channel::RelativeHumidity),
                    met(Channel::WindSpeed),
                    met(Channel::WindDirection),
                ),
            ));
        }
    }
    report
}

/// Site means of the corrected series, clamped at zero for display.
pub fn site_means(sites: &[SiteRun], config: &NetworkConfig) -> Vec<(f64, f64, f64)> {
    sites
        .iter()
        .filter_map(|run| {
            let spec = config.site(&run.site_id)?;
            let n = run.corrected.present_count();
            (n > 0).then(|| {
                let mean = run.corrected.present().map(|(_, v)| v).sum::<f64>() / n as f64;
                (spec.latitude, spec.longitude, mean.max(0.0))
            })
        })
        .collect()
}

fn render_grid(sites: &[SiteRun], config: &NetworkConfig, opts: &RunOptions) -> Option<Raster> {
    let points = site_means(sites, config);
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.0, p.1)).collect();
    let spec = GridSpec::covering(&coords, opts.grid_cellsize, 2.0 * opts.grid_cellsize).ok()?;
    idw_grid(&points, &spec, opts.idw_power).ok()
}

pub const CALIBRATED_DIR: &str = "calibrated";
pub const GRIDS_DIR: &str = "grids";
pub const MEAN_GRID_FILE: &str = "mean_no2.asc";

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl PipelineOutput {
    /// Write the run layout into `dir`:
    /// `calibrated/<site>.csv`, `alarms.csv`, `params.csv`, `errors.csv`,
    /// `report.csv` (with its companion tables), `grids/`, `wiring.csv`,
    /// `trace.csv` and `failures.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let cal_dir = dir.join(CALIBRATED_DIR);
        std::fs::create_dir_all(&cal_dir).map_err(|e| Error::io(&cal_dir, e))?;
        for run in &self.sites {
            let path = cal_dir.join(format!("{}.csv", run.site_id));
            let mut w = csv_writer(&path)?;
            w.write_record([
                "timestamp",
                "site_id",
                "uncorrected",
                "framework_corrected",
                "framework_plus_es",
            ])
            .map_err(|e| Error::csv(&path, e))?;
            let start = run.framework.start_hour();
            for i in 0..run.framework.len() as i64 {
                let h = start + i;
                w.write_record([
                    format_timestamp(hour_time(h)),
                    run.site_id.clone(),
                    opt(run.uncorrected.at_hour(h)),
                    opt(run.framework.at_hour(h)),
                    opt(run.corrected.at_hour(h)),
                ])
                .map_err(|e| Error::csv(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }

        write_alarms_csv(
            &dir.join("alarms.csv"),
            self.sites
                .iter()
                .flat_map(|s| s.alarms.history.iter().map(move |r| (s.site_id.as_str(), r))),
        )?;
        let params: Vec<ParamRecord> = self.sites.iter().flat_map(|s| s.params.iter().cloned()).collect();
        write_params_csv(&dir.join("params.csv"), &params)?;
        let errors: Vec<ErrorSeries> = self.sites.iter().filter_map(|s| s.errors.clone()).collect();
        write_errors_csv(&dir.join("errors.csv"), &errors)?;
        self.report.write(dir)?;
        if let Some(grid) = &self.grid {
            grid.write_ascii(&dir.join(GRIDS_DIR).join(MEAN_GRID_FILE))?;
        } else {
            let g = dir.join(GRIDS_DIR);
            std::fs::create_dir_all(&g).map_err(|e| Error::io(&g, e))?;
        }

        let path = dir.join("wiring.csv");
        let mut w = csv_writer(&path)?;
        w.write_record([
            "site_id",
            "mode",
            "o3_site",
            "o3_channel",
            "no2_proxy_id",
            "proximity_proxy_id",
        ])
        .map_err(|e| Error::csv(&path, e))?;
        for x in &self.wiring {
            w.write_record([
                x.site_id.as_str(),
                self.mode.as_str(),
                x.o3_site.as_str(),
                x.o3_channel.as_str(),
                x.no2_proxy_id.as_str(),
                x.proximity_proxy_id.as_deref().unwrap_or_default(),
            ])
            .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("trace.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["order", "step", "site_id", "depends_on", "status"])
            .map_err(|e| Error::csv(&path, e))?;
        for t in &self.trace {
            w.write_record([
                t.order.to_string(),
                t.kind.as_str().into(),
                t.site_id.clone(),
                t.depends_on.join(";"),
                t.status.into(),
            ])
            .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("failures.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["site_id", "reason"])
            .map_err(|e| Error::csv(&path, e))?;
        for (s, r) in &self.failures {
            w.write_record([s, r]).map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Pooled RMSE of the corrected series for each candidate sigmoid rate.
///
/// Only co-located sites whose proximity proxy is itself a calibrated site
/// take part: their own reference NO2 is the target and the offset estimate
/// comes from the proxy's framework output.
pub fn tune_sigmoid_k(
    config: &NetworkConfig,
    input: &PipelineInput,
    opts: &RunOptions,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let out = run_pipeline_on(config, input, opts)?;
    let mut owned = Vec::new();
    for run in &out.sites {
        let Some(spec) = config.site(&run.site_id).filter(|s| s.role.has_reference()) else {
            continue;
        };
        let Some(proxy) = spec.proximity_proxy_id.as_deref().and_then(|p| out.site(p)) else {
            continue;
        };
        let (Ok(own_ref), Ok(proxy_ref)) = (
            input.get(&run.site_id, Channel::No2Ref),
            input.get(&proxy.site_id, Channel::No2Ref),
        ) else {
            continue;
        };
        let raw = compute_raw_error(&proxy.framework, proxy_ref).for_site(&run.site_id);
        owned.push((&run.framework, own_ref, raw));
    }
    if owned.is_empty() {
        return Err(Error::Config(
            "no co-located site with a calibrated proximity proxy".into(),
        ));
    }
    let cases: Vec<TuneCase<'_>> = owned
        .iter()
        .map(|(c, r, e)| TuneCase {
            calibrated: c,
            reference: r,
            raw_error: e,
        })
        .collect();
    Ok(tune_k(
        &cases,
        grid,
        &config.spatial,
        config.drift.window_hours() as usize,
    ))
}

/// The `framework_plus_es` column of every `calibrated/<site>.csv` in a run directory.
pub fn read_calibrated(run_dir: &Path) -> Result<Vec<HourlySeries>> {
    #[derive(Deserialize)]
    struct Row {
        timestamp: String,
        site_id: String,
        framework_plus_es: Option<f64>,
    }
    let dir = run_dir.join(CALIBRATED_DIR);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        let mut samples = Vec::new();
        let mut site = String::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::csv(&path, e))?;
            let t = parse_timestamp(&row.timestamp).ok_or_else(|| Error::Ingest {
                index: i + 1,
                reason: format!("bad timestamp '{}'", row.timestamp),
            })?;
            site = row.site_id;
            samples.push((t, row.framework_plus_es));
        }
        out.push(HourlySeries::from_samples(site, Channel::No2Sensor, &samples)?);
    }
    Ok(out)
}

/// Files of a written run, relative to its directory, for comparisons.
pub fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                out.push(path.strip_prefix(base).unwrap_or(&path).to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SiteRole, SiteSpec};
    use crate::simulator::{generate, sample_network, DriftEvent, DriftKind, ScenarioSpec};

    fn node(k: StepKind, s: &str) -> Node {
        (k, s.to_string())
    }

    #[test]
    fn cycle_is_a_config_error() {
        let mut deps = BTreeMap::new();
        deps.insert(node(StepKind::Spatial, "A"), vec![node(StepKind::Spatial, "B")]);
        deps.insert(node(StepKind::Spatial, "B"), vec![node(StepKind::Spatial, "A")]);
        deps.insert(node(StepKind::Framework, "C"), vec![]);
        assert!(matches!(topological_order(&deps), Err(Error::Config(_))));
    }

    #[test]
    fn order_respects_dependencies() {
        let cfg = NetworkConfig {
            sites: sample_network(),
            ..config()
        };
        let w = wiring(&cfg, Mode::DeployedSensorO3).unwrap();
        let deps = dependencies(&w);
        let order = topological_order(&deps).unwrap();
        let pos: BTreeMap<&Node, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
        for (n, pre) in &deps {
            for p in pre {
                assert!(pos[p] < pos[n]);
            }
        }
    }

    fn config() -> NetworkConfig {
        NetworkConfig {
            sites: Vec::new(),
            drift: Default::default(),
            histogram: Default::default(),
            spatial: Default::default(),
            calibration: Default::default(),
        }
    }

    #[test]
    fn mode_changes_only_o3_and_proxy() {
        let cfg = NetworkConfig {
            sites: sample_network(),
            ..config()
        };
        let a = wiring(&cfg, Mode::DeployedSensorO3).unwrap();
        let b = wiring(&cfg, Mode::ColocationReferenceO3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.site_id, y.site_id);
            assert_eq!(x.proximity_proxy_id, y.proximity_proxy_id);
            assert_eq!((x.o3_channel, y.o3_channel), (Channel::O3, Channel::O3Ref));
            assert_eq!(y.no2_proxy_id, y.site_id);
        }
    }

    fn two_site_spec(seed: u64, days: f64) -> ScenarioSpec {
        let sites: Vec<SiteSpec> = sample_network()
            .into_iter()
            .filter(|s| s.site_id == "RIVR" || s.site_id == "MLVB")
            .collect();
        assert!(sites.iter().all(|s| s.role == SiteRole::CoLocated));
        ScenarioSpec {
            sites,
            duration_days: days,
            seed,
            noise_sd: 0.3,
            o3_sensor_noise_sd: 0.3,
            ..Default::default()
        }
    }

    #[test]
    fn no_drift_run_has_no_alarms_and_tracks_truth() {
        let spec = two_site_spec(5, 20.0);
        let scenario = generate(&spec).unwrap();
        let cfg = NetworkConfig {
            sites: spec.sites.clone(),
            ..config()
        };
        let input = PipelineInput::from_scenario(&scenario, true);
        let out = run_pipeline_on(&cfg, &input, &RunOptions::default()).unwrap();
        assert!(out.failures.is_empty());
        for run in &out.sites {
            assert_eq!(run.alarms.alarmed_hours(), 0, "{}", run.site_id);
            let row = out.report.row(&run.site_id, Stage::FrameworkPlusEs).unwrap();
            assert!(row.stats.rmse < 1.0, "{} rmse {}", run.site_id, row.stats.rmse);
        }
    }

    #[test]
    fn step_drift_alarms_refits_and_recovers() {
        let mut spec = two_site_spec(9, 40.0);
        spec.drift_events.push(DriftEvent {
            site_id: "RIVR".into(),
            onset_day: 10.0,
            kind: DriftKind::OffsetStep,
            magnitude: 8.0,
            duration_days: 30.0,
        });
        let scenario = generate(&spec).unwrap();
        let cfg = NetworkConfig {
            sites: spec.sites.clone(),
            ..config()
        };
        let input = PipelineInput::from_scenario(&scenario, true);
        let out = run_pipeline_on(&cfg, &input, &RunOptions::default()).unwrap();
        let run = out.site("RIVR").unwrap();
        let first = run.fits().next().expect("re-fit").params.fitted_at.unwrap();
        let onset = scenario.start + chrono::Duration::days(10);
        assert!(first > onset);
        let mab = out
            .report
            .rolling_mab
            .iter()
            .find(|(s, st, _)| s == "RIVR" && *st == Stage::FrameworkCorrected)
            .map(|x| &x.2)
            .unwrap();
        let last_fit = run.fits().last().unwrap().params.fitted_at.unwrap();
        let settle = last_fit + chrono::Duration::days(3);
        let after: Vec<f64> = mab.iter().filter(|(t, _)| *t > settle).filter_map(|(_, v)| v).collect();
        assert!(!after.is_empty());
        assert!(
            after.iter().all(|v| *v < 5.0),
            "max {}",
            after.iter().cloned().fold(0.0, f64::max)
        );
    }
}
