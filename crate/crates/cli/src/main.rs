use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use proxycal_core::io::{format_timestamp, parse_timestamp, read_long_csv, write_long_csv, write_scenario};
use proxycal_core::pipeline::{read_calibrated, tune_sigmoid_k, GRIDS_DIR, MEAN_GRID_FILE};
use proxycal_core::report::read_report_csv_from;
use proxycal_core::simulator::{generate, sample_network, ScenarioSpec};
use proxycal_core::{
    hour_index, hour_time, idw_grid, run_pipeline_on, GridSpec, InitVariant, Mode, NetworkConfig, PipelineInput,
    RunOptions,
};

#[derive(Parser)]
#[command(
    name = "proxycal",
    version,
    about = "Proxy-based drift detection and calibration for low-cost NO2 sensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average a long-format CSV to hourly values and report coverage.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a synthetic network with ground truth.
    Simulate {
        /// Scenario TOML; defaults to the built-in 9-site network.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<f64>,
    },
    /// Monitor, re-fit and correct every sensor, then write the run layout.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate against `truth.csv` in the data directory when present.
        #[arg(long)]
        truth: bool,
    },
    /// Score candidate sigmoid rates on co-located sites.
    TuneK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated candidates.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.01,0.02,0.03,0.04,0.057,0.08,0.1,0.15,0.2"
        )]
        grid: Vec<f64>,
    },
    /// Print the summary table of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Interpolate corrected NO2 of a finished run onto a raster.
    Grid {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Hour to render (RFC 3339); the run mean when absent.
        #[arg(long)]
        at: Option<String>,
        #[arg(long, default_value_t = 0.02)]
        cellsize: f64,
        #[arg(long, default_value_t = 2.0)]
        power: f64,
        /// Output file; defaults to `<run>/grids/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ColocationReferenceO3,
    DeployedSensorO3,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    SlopeConsistent,
    AsPrinted,
}

/// Config file plus flags that override its fields.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "deployed-sensor-o3")]
    mode: ModeArg,
    #[arg(long)]
    window_days: Option<f64>,
    #[arg(long)]
    persistence_days: Option<f64>,
    #[arg(long)]
    ks_alpha: Option<f64>,
    #[arg(long)]
    min_coverage: Option<f64>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long, value_enum)]
    init_variant: Option<InitArg>,
    #[arg(long)]
    sigmoid_k: Option<f64>,
    #[arg(long)]
    rolling_hours: Option<usize>,
    /// Skip the offset-error correction.
    #[arg(long)]
    no_es: bool,
}

impl Common {
    fn config(&self) -> Result<NetworkConfig> {
        let mut cfg = NetworkConfig::load(&self.config)?;
        if let Some(v) = self.window_days {
            cfg.drift.window_days = v;
        }
        if let Some(v) = self.persistence_days {
            cfg.drift.persistence_days = v;
        }
        if let Some(v) = self.ks_alpha {
            cfg.drift.ks_alpha = v;
        }
        if let Some(v) = self.min_coverage {
            cfg.drift.min_coverage = v;
        }
        if let Some(v) = self.bin_width {
            cfg.histogram.bin_width = v;
        }
        if let Some(v) = self.init_variant {
            cfg.calibration.init_variant = match v {
                InitArg::SlopeConsistent => InitVariant::SlopeConsistent,
                InitArg::AsPrinted => InitVariant::AsPrinted,
            };
        }
        if let Some(v) = self.sigmoid_k {
            cfg.spatial.sigmoid_k = v;
        }
        if let Some(v) = self.rolling_hours {
            cfg.spatial.rolling_hours = v;
        }
        if self.no_es {
            cfg.spatial.enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            mode: match self.mode {
                ModeArg::ColocationReferenceO3 => Mode::ColocationReferenceO3,
                ModeArg::DeployedSensorO3 => Mode::DeployedSensorO3,
            },
            ..RunOptions::default()
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest { input, output } => ingest(&input, &output),
        Command::Simulate {
            scenario,
            out,
            seed,
            days,
        } => simulate(scenario.as_deref(), &out, seed, days),
        Command::Run { common, out, truth } => {
            let cfg = common.config()?;
            let mut input = PipelineInput::load(&common.data)?;
            if truth {
                input = input.with_truth_from(&common.data)?;
            }
            let output = run_pipeline_on(&cfg, &input, &common.options())?;
            output
                .write(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            for (site, reason) in &output.failures {
                eprintln!("site {site} failed: {reason}");
            }
            let refits: usize = output.sites.iter().map(|s| s.fits().count()).sum();
            println!(
                "{} sites calibrated, {} re-fits, {} failures -> {}",
                output.sites.len(),
                refits,
                output.failures.len(),
                out.display()
            );
            Ok(())
        }
        Command::TuneK { common, grid } => {
            let cfg = common.config()?;
            let input = PipelineInput::load(&common.data)?;
            let scores = tune_sigmoid_k(&cfg, &input, &common.options(), &grid)?;
            println!("{:>8} {:>10}", "k", "rmse_ppb");
            for (k, rmse) in &scores {
                println!("{k:>8} {rmse:>10.4}");
            }
            if let Some((k, rmse)) = scores
                .iter()
                .filter(|s| s.1.is_finite())
                .min_by(|a, b| a.1.total_cmp(&b.1))
            {
                println!("best k = {k} (rmse {rmse:.4} ppb)");
            }
            Ok(())
        }
        Command::Report { run } => report(&run),
        Command::Grid {
            run,
            config,
            at,
            cellsize,
            power,
            out,
        } => grid(&run, &config, at.as_deref(), cellsize, power, out),
    }
}

fn ingest(input: &Path, output: &Path) -> Result<()> {
    let series = read_long_csv(input)?;
    for s in &series {
        let n = s.len().max(1);
        println!(
            "{:<8} {:<18} {:>6} hours {:>6.1}% present",
            s.site_id(),
            s.channel().as_str(),
            s.len(),
            100.0 * s.present_count() as f64 / n as f64
        );
    }
    write_long_csv(output, &series)?;
    Ok(())
}

fn simulate(scenario: Option<&Path>, out: &Path, seed: Option<u64>, days: Option<f64>) -> Result<()> {
    let mut spec = match scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<ScenarioSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ScenarioSpec {
            sites: sample_network(),
            ..ScenarioSpec::default()
        },
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(d) = days {
        spec.duration_days = d;
    }
    let scenario = generate(&spec)?;
    write_scenario(out, &scenario)?;
    let cfg = NetworkConfig {
        sites: spec.sites.clone(),
        drift: Default::default(),
        histogram: Default::default(),
        spatial: Default::default(),
        calibration: Default::default(),
    };
    std::fs::write(out.join("network.toml"), cfg.to_toml_string())?;
    println!(
        "{} sites, {} hours, {} ledger rows -> {}",
        scenario.sites.len(),
        spec.hours(),
        scenario.ledger.len(),
        out.display()
    );
    Ok(())
}

fn report(run: &Path) -> Result<()> {
    let path = run.join("report.csv");
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_report_csv_from(file, &path)?;
    println!(
        "{:<8} {:<20} {:>6} {:>6} {:>8} {:>8}",
        "site", "stage", "n", "r2", "mab", "rmse"
    );
    for r in rows {
        let r2 = r.stats.r2.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<8} {:<20} {:>6} {:>6} {:>8.2} {:>8.2}",
            r.site_id,
            r.stage.as_str(),
            r.stats.n,
            r2,
            r.stats.mab,
            r.stats.rmse
        );
    }
    Ok(())
}

fn grid(run: &Path, config: &Path, at: Option<&str>, cellsize: f64, power: f64, out: Option<PathBuf>) -> Result<()> {
    let cfg = NetworkConfig::load(config)?;
    let hour = match at {
        Some(s) => Some(hour_index(
            parse_timestamp(s).with_context(|| format!("bad timestamp '{s}'"))?,
        )),
        None => None,
    };
    let mut points = Vec::new();
    for s in read_calibrated(run)? {
        let Some(site) = cfg.site(s.site_id()) else {
            continue;
        };
        let value = match hour {
            Some(h) => s.at_hour(h),
            None => {
                let n = s.present_count();
                (n > 0).then(|| s.present().map(|(_, v)| v).sum::<f64>() / n as f64)
            }
        };
        if let Some(v) = value {
            points.push((site.latitude, site.longitude, v.max(0.0)));
        }
    }
    if points.is_empty() {
        bail!("no site has a value to interpolate");
    }
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.0, p.1)).collect();
    let spec = GridSpec::covering(&coords, cellsize, 2.0 * cellsize)?;
    let raster = idw_grid(&points, &spec, power)?;
    let out = out.unwrap_or_else(|| match at {
        Some(_) => {
            let stamp = format_timestamp(hour_time(hour.unwrap_or_default())).replace([':', '-'], "");
            run.join(GRIDS_DIR).join(format!("no2_{stamp}.asc"))
        }
        None => run.join(GRIDS_DIR).join(MEAN_GRID_FILE),
    });
    raster.write_ascii(&out)?;
    println!(
        "{} x {} grid from {} sites -> {}",
        spec.ncols,
        spec.nrows,
        points.len(),
        out.display()
    );
    Ok(())
}
