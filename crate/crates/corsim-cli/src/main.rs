use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use corsim::config::SimConfig;
use corsim::demand::VolumePreset;
use corsim::engine::{run_case, RunSpec};
use corsim::report;
use corsim::sweep::{run_sweep, SummaryRow, SweepOutcome, SweepPlan};

#[derive(Parser)]
#[command(
    name = "corsim",
    about = "Corridor traffic microsimulation with coordinated automated vehicles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write its tables.
    Run {
        /// TOML config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed index for the run's random streams.
        #[arg(long, default_value_t = 0)]
        seed: u32,
        /// Output directory for the CSV tables.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the penetration × volume × seed grid and write its tables.
    Sweep {
        /// TOML config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Penetration rates: "start:end:step" or a comma list, in percent.
        #[arg(long, default_value = "0:100:10")]
        penetrations: String,
        /// Comma list of volume presets.
        #[arg(long, default_value = "high,medium,low")]
        volumes: String,
        /// Number of seed replicates per cell.
        #[arg(long, default_value_t = 5)]
        seeds: u32,
        /// Output directory for the CSV tables.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Draw an SVG chart from a sweep's output directory.
    Plot {
        /// Directory holding the sweep CSVs.
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Volume preset shown in the speed-profile chart.
        #[arg(long, default_value = "high")]
        volume: VolumePreset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Fuel,
    Traveltime,
    SpeedProfile,
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => {
            SimConfig::load(p).with_context(|| format!("loading config {}", p.display()))
        }
        None => Ok(SimConfig::default()),
    }
}

/// "0:100:10" → 0,10,…,100; otherwise a comma list of percentages.
fn parse_penetrations(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let start: f64 = parts[0].trim().parse().context("bad range start")?;
        let end: f64 = parts[1].trim().parse().context("bad range end")?;
        let step: f64 = parts[2].trim().parse().context("bad range step")?;
        if step <= 0.0 || end < start {
            bail!("penetration range must have start <= end and step > 0");
        }
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let p = start + step * k as f64;
            if p > end + 1e-9 {
                break;
            }
            out.push(p.min(end));
            k += 1;
        }
        return Ok(out);
    }
    if parts.len() != 1 {
        bail!("penetrations must be start:end:step or a comma list");
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad penetration \"{p}\"")))
        .collect()
}

fn parse_volumes(s: &str) -> Result<Vec<VolumePreset>> {
    s.split(',')
        .map(|v| v.trim().parse::<VolumePreset>().map_err(anyhow::Error::msg))
        .collect()
}

fn cmd_run(config: Option<PathBuf>, seed: u32, out: PathBuf) -> Result<()> {
    let cfg = load_config(&config)?;
    let spec = RunSpec {
        volume: cfg.run.volume,
        penetration_pct: cfg.run.penetration_pct,
        seed_index: seed,
    };
    let res = run_case(&cfg, spec).context("run failed")?;
    let row = SummaryRow {
        run_id: spec.run_id(),
        volume: spec.volume,
        penetration_pct: spec.penetration_pct,
        seed: spec.seed_index,
        fuel_economy_m_per_ml: res.fuel_economy(),
        fe_improvement_pct: None, // single run: no baseline to compare against
        mean_travel_time_s: res.mean_travel_time(),
        tt_variation_pct: None,
        mean_speed_mps: res.mean_speed(),
        rear_end_events: res.rear_end_events,
        lateral_events: res.lateral_events,
    };
    println!(
        "{}: {} completed trips, fuel economy {}, mean travel time {}, \
         rear-end events {}, lateral events {}",
        row.run_id,
        res.completed_count(),
        row.fuel_economy_m_per_ml
            .map(|v| format!("{v:.3} m/mL"))
            .unwrap_or_else(|| "n/a".into()),
        row.mean_travel_time_s
            .map(|v| format!("{v:.1} s"))
            .unwrap_or_else(|| "n/a".into()),
        res.rear_end_events,
        res.lateral_events,
    );
    let outcome = SweepOutcome {
        runs: vec![res],
        summary: vec![row],
        penetration_stats: vec![],
        class_stats: vec![],
        trends: vec![],
    };
    report::write_outputs(&outcome, &out)?;
    println!("wrote tables to {}", out.display());
    Ok(())
}

fn cmd_sweep(
    config: Option<PathBuf>,
    penetrations: String,
    volumes: String,
    seeds: u32,
    out: PathBuf,
) -> Result<()> {
    let cfg = load_config(&config)?;
    let plan = SweepPlan::new(parse_penetrations(&penetrations)?, parse_volumes(&volumes)?, seeds)?;
    let cells = plan.cells().len();
    eprintln!(
        "sweep: {} penetrations × {} volumes × {} seeds = {} runs",
        plan.penetrations_pct().len(),
        plan.volumes().len(),
        plan.seeds(),
        cells,
    );
    let outcome = run_sweep(&cfg, &plan)?;
    report::write_outputs(&outcome, &out)?;
    for t in &outcome.trends {
        let full = outcome
            .penetration_stats
            .iter()
            .find(|s| s.volume == t.volume && s.penetration_pct == 100.0)
            .and_then(|s| s.fe_improvement_mean_pct);
        println!(
            "{}: fuel-economy improvement at 100% {}, penetration trend (Spearman) {}",
            t.volume.label(),
            full.map(|v| format!("{v:+.2}%")).unwrap_or_else(|| "n/a".into()),
            t.spearman_fe.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()),
        );
    }
    println!("wrote tables to {}", out.display());
    Ok(())
}

fn cmd_plot(in_dir: PathBuf, kind: PlotKind, out: PathBuf, volume: VolumePreset) -> Result<()> {
    let svg = match kind {
        PlotKind::Fuel => {
            let stats = report::read_penetration_stats_csv(&in_dir.join("penetration_stats.csv"))?;
            report::fuel_plot_svg(&stats)
        }
        PlotKind::Traveltime => {
            let rows = report::read_summary_csv(&in_dir.join("summary.csv"))?;
            report::travel_time_plot_svg(&rows)
        }
        PlotKind::SpeedProfile => {
            let rows = report::read_speed_profile_csv(&in_dir.join("speed_profile.csv"))?;
            report::speed_profile_svg(&rows, volume)
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, seed, out } => cmd_run(config, seed, out),
        Command::Sweep { config, penetrations, volumes, seeds, out } => {
            cmd_sweep(config, penetrations, volumes, seeds, out)
        }
        Command::Plot { in_dir, kind, out, volume } => cmd_plot(in_dir, kind, out, volume),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penetration_ranges_expand_inclusively() {
        assert_eq!(
            parse_penetrations("0:100:10").unwrap(),
            vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0]
        );
        assert_eq!(parse_penetrations("0:100:40").unwrap(), vec![0.0, 40.0, 80.0]);
        assert_eq!(parse_penetrations("0, 50,100").unwrap(), vec![0.0, 50.0, 100.0]);
        assert!(parse_penetrations("10:0:5").is_err());
        assert!(parse_penetrations("0:100:0").is_err());
        assert!(parse_penetrations("a:b:c").is_err());
    }

    #[test]
    fn volume_lists_parse() {
        assert_eq!(
            parse_volumes("high, low").unwrap(),
            vec![VolumePreset::High, VolumePreset::Low]
        );
        assert!(parse_volumes("rush-hour").is_err());
    }
}
