//! File outputs: the CSV tables a sweep emits, their readers (the plotting
//! command consumes its own output), and self-contained SVG charts.
//!
//! All numbers are written with fixed precision so rerunning over the same
//! inputs reproduces every file byte for byte. Missing values (censored
//! trips, empty aggregates) are empty fields.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::demand::VolumePreset;
use crate::engine::RunResult;
use crate::metrics::{mean, ClassFilter};
use crate::sweep::{ClassStat, PenetrationStat, SummaryRow, SweepOutcome};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {what}")]
    Malformed { file: String, line: usize, what: String },
}

// ---------------------------------------------------------------------------
// Field formatting: one place decides how every value becomes text.
// ---------------------------------------------------------------------------

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn opt_f3(x: Option<f64>) -> String {
    x.filter(|v| v.is_finite()).map(f3).unwrap_or_default()
}

fn parse_opt_f64(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

pub const VEHICLES_HEADER: &str = "run_id,vehicle_id,class,route,spawn_s,travel_time_s,distance_m,fuel_ml,mean_speed_mps,min_gap_m,censored";
pub const SUMMARY_HEADER: &str = "run_id,volume,penetration_pct,seed,fuel_economy_m_per_ml,fe_improvement_pct,mean_travel_time_s,tt_variation_pct,mean_speed_mps,rear_end_events,lateral_events";
pub const SPEED_PROFILE_HEADER: &str = "run_id,bin_start_m,mean_speed_mps,class_filter";
pub const PENETRATION_STATS_HEADER: &str =
    "volume,penetration_pct,fe_improvement_mean_pct,fe_improvement_sd";
pub const CLASS_STATS_HEADER: &str =
    "volume,penetration_pct,class,fe_improvement_mean_pct,fe_improvement_sd";

pub fn vehicles_csv(runs: &[RunResult]) -> String {
    let mut out = String::from(VEHICLES_HEADER);
    out.push('\n');
    for r in runs {
        let run_id = r.spec.run_id();
        for v in &r.vehicles {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                run_id,
                v.id.0,
                v.class.label(),
                v.route_name,
                f3(v.spawn_s),
                opt_f3(v.travel_time_s()),
                f3(v.distance_m),
                f3(v.fuel_ml),
                opt_f3(v.mean_speed_mps()),
                opt_f3(Some(v.min_gap_m)),
                u8::from(v.censored),
            );
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.run_id,
            s.volume.label(),
            f3(s.penetration_pct),
            s.seed,
            opt_f3(s.fuel_economy_m_per_ml),
            opt_f3(s.fe_improvement_pct),
            opt_f3(s.mean_travel_time_s),
            opt_f3(s.tt_variation_pct),
            opt_f3(s.mean_speed_mps),
            s.rear_end_events,
            s.lateral_events,
        );
    }
    out
}

pub fn speed_profile_csv(runs: &[RunResult]) -> String {
    let mut out = String::from(SPEED_PROFILE_HEADER);
    out.push('\n');
    for r in runs {
        let run_id = r.spec.run_id();
        for filter in ClassFilter::ALL_FILTERS {
            for bin in 0..r.profile.bin_count() {
                if let Some(v) = r.profile.mean_speed(bin, filter) {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        run_id,
                        f3(r.profile.bin_start_m(bin)),
                        f3(v),
                        filter.label(),
                    );
                }
            }
        }
    }
    out
}

pub fn penetration_stats_csv(stats: &[PenetrationStat]) -> String {
    let mut out = String::from(PENETRATION_STATS_HEADER);
    out.push('\n');
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.volume.label(),
            f3(s.penetration_pct),
            opt_f3(s.fe_improvement_mean_pct),
            opt_f3(s.fe_improvement_sd),
        );
    }
    out
}

pub fn class_stats_csv(stats: &[ClassStat]) -> String {
    let mut out = String::from(CLASS_STATS_HEADER);
    out.push('\n');
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.volume.label(),
            f3(s.penetration_pct),
            s.class.label(),
            opt_f3(s.fe_improvement_mean_pct),
            opt_f3(s.fe_improvement_sd),
        );
    }
    out
}

/// Writes the full CSV set for a sweep into `dir` (created if needed).
pub fn write_outputs(out: &SweepOutcome, dir: &Path) -> Result<(), ReportError> {
    let write = |name: &str, content: String| -> Result<(), ReportError> {
        let path = dir.join(name);
        std::fs::write(&path, content)
            .map_err(|source| ReportError::Write { path: path.display().to_string(), source })
    };
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)
            .map_err(|source| ReportError::Write { path: dir.display().to_string(), source })?;
    }
    write("vehicles.csv", vehicles_csv(&out.runs))?;
    write("summary.csv", summary_csv(&out.summary))?;
    write("speed_profile.csv", speed_profile_csv(&out.runs))?;
    write("penetration_stats.csv", penetration_stats_csv(&out.penetration_stats))?;
    write("class_stats.csv", class_stats_csv(&out.class_stats))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Readers: the plot command consumes the CSVs a sweep wrote.
// ---------------------------------------------------------------------------

/// One `speed_profile.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub run_id: String,
    pub bin_start_m: f64,
    pub mean_speed_mps: f64,
    pub class_filter: String,
}

/// Splits a canonical run id ("high-p050-s02") back into its cell.
pub fn parse_run_id(run_id: &str) -> Option<(VolumePreset, u32, u32)> {
    let (vol, rest) = run_id.rsplit_once("-p")?;
    let (pen, seed) = rest.split_once("-s")?;
    Some((vol.parse().ok()?, pen.parse().ok()?, seed.parse().ok()?))
}

fn read_lines(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>, ReportError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ReportError::Read { path: file.clone(), source })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        _ => {
            return Err(ReportError::Malformed {
                file,
                line: 1,
                what: format!("expected header \"{header}\""),
            })
        }
    }
    let want = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_owned).collect();
        if fields.len() != want {
            return Err(ReportError::Malformed {
                file,
                line: i + 1,
                what: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn field_err(path: &Path, line: usize, what: &str) -> ReportError {
    ReportError::Malformed {
        file: path.display().to_string(),
        line,
        what: what.to_string(),
    }
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, ReportError> {
    let mut out = Vec::new();
    for (line, f) in read_lines(path, SUMMARY_HEADER)? {
        let volume: VolumePreset =
            f[1].parse().map_err(|_| field_err(path, line, "bad volume"))?;
        let row = SummaryRow {
            run_id: f[0].clone(),
            volume,
            penetration_pct: f[2]
                .parse()
                .map_err(|_| field_err(path, line, "bad penetration_pct"))?,
            seed: f[3].parse().map_err(|_| field_err(path, line, "bad seed"))?,
            fuel_economy_m_per_ml: parse_opt_f64(&f[4]),
            fe_improvement_pct: parse_opt_f64(&f[5]),
            mean_travel_time_s: parse_opt_f64(&f[6]),
            tt_variation_pct: parse_opt_f64(&f[7]),
            mean_speed_mps: parse_opt_f64(&f[8]),
            rear_end_events: f[9]
                .parse()
                .map_err(|_| field_err(path, line, "bad rear_end_events"))?,
            lateral_events: f[10]
                .parse()
                .map_err(|_| field_err(path, line, "bad lateral_events"))?,
        };
        out.push(row);
    }
    Ok(out)
}

pub fn read_speed_profile_csv(path: &Path) -> Result<Vec<ProfileRow>, ReportError> {
    let mut out = Vec::new();
    for (line, f) in read_lines(path, SPEED_PROFILE_HEADER)? {
        out.push(ProfileRow {
            run_id: f[0].clone(),
            bin_start_m: f[1]
                .parse()
                .map_err(|_| field_err(path, line, "bad bin_start_m"))?,
            mean_speed_mps: f[2]
                .parse()
                .map_err(|_| field_err(path, line, "bad mean_speed_mps"))?,
            class_filter: f[3].clone(),
        });
    }
    Ok(out)
}

pub fn read_penetration_stats_csv(path: &Path) -> Result<Vec<PenetrationStat>, ReportError> {
    let mut out = Vec::new();
    for (line, f) in read_lines(path, PENETRATION_STATS_HEADER)? {
        out.push(PenetrationStat {
            volume: f[0].parse().map_err(|_| field_err(path, line, "bad volume"))?,
            penetration_pct: f[1]
                .parse()
                .map_err(|_| field_err(path, line, "bad penetration_pct"))?,
            fe_improvement_mean_pct: parse_opt_f64(&f[2]),
            fe_improvement_sd: parse_opt_f64(&f[3]),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// SVG charts. Everything is inlined: no scripts, fonts, or external assets.
// ---------------------------------------------------------------------------

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn volume_color(v: VolumePreset) -> &'static str {
    match v {
        VolumePreset::High => "#d4a017",
        VolumePreset::Medium => "#c0392b",
        VolumePreset::Low => "#2980b9",
    }
}

/// Blue ramp, light for low penetrations to dark for high ones.
fn penetration_color(pct: f64) -> String {
    let t = (pct / 100.0).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(170.0, 16.0), lerp(200.0, 70.0), lerp(230.0, 120.0))
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    /// Pads the y range so lines keep clear of the frame edges.
    fn around(x_lo: f64, x_hi: f64, ys: impl Iterator<Item = f64>) -> Frame {
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in ys {
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        if !y_lo.is_finite() || !y_hi.is_finite() {
            (y_lo, y_hi) = (0.0, 1.0);
        }
        if y_hi - y_lo < 1e-9 {
            y_lo -= 0.5;
            y_hi += 0.5;
        }
        let pad = 0.08 * (y_hi - y_lo);
        Frame { x_lo, x_hi, y_lo: y_lo - pad, y_hi: y_hi + pad }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (v - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" ",
            "font-family=\"sans-serif\" font-size=\"13\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{t}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        t = title,
    )
}

fn axes(out: &mut String, fr: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64]) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for &t in x_ticks {
        let x = fr.x(t);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{y0}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{t}</text>",
            y0 + 5.0,
            y0 + 20.0,
        );
    }
    // Five evenly spaced y ticks over the padded range.
    for k in 0..=4 {
        let v = fr.y_lo + (fr.y_hi - fr.y_lo) * k as f64 / 4.0;
        let y = fr.y(v);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{x0}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>",
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
        );
    }
    if fr.y_lo < 0.0 && fr.y_hi > 0.0 {
        let y = fr.y(0.0);
        let _ = writeln!(
            out,
            "<line x1=\"{x0}\" y1=\"{y:.1}\" x2=\"{x1}\" y2=\"{y:.1}\" \
             stroke=\"#999999\" stroke-dasharray=\"4 4\"/>"
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
    );
}

fn polyline(out: &mut String, fr: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> =
        pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", fr.x(x), fr.y(y))).collect();
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    let _ = writeln!(
        out,
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
        coords.join(" ")
    );
}

fn legend_entry(out: &mut String, slot: usize, color: &str, label: &str) {
    let y = MARGIN_T + 14.0 + 18.0 * slot as f64;
    let x = MARGIN_L + 12.0;
    let _ = writeln!(
        out,
        "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"3\"/>\n\
         <text x=\"{}\" y=\"{}\">{label}</text>",
        x + 24.0,
        x + 30.0,
        y + 4.0,
    );
}

/// Fuel-economy improvement vs penetration, one line per volume, whiskers
/// showing ± one standard deviation across seeds.
pub fn fuel_plot_svg(stats: &[PenetrationStat]) -> String {
    let ys = stats.iter().filter_map(|s| s.fe_improvement_mean_pct).chain(
        stats.iter().filter_map(|s| {
            Some(s.fe_improvement_mean_pct? + s.fe_improvement_sd.unwrap_or(0.0))
        }),
    );
    let fr = Frame::around(0.0, 100.0, ys);
    let mut out = svg_open("Fuel-economy improvement vs penetration rate");
    axes(
        &mut out,
        &fr,
        "Penetration rate (%)",
        "Fuel-economy improvement (%)",
        &[0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
    );
    for (slot, &vol) in VolumePreset::ALL.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for s in stats.iter().filter(|s| s.volume == vol) {
            let Some(m) = s.fe_improvement_mean_pct else { continue };
            pts.push((s.penetration_pct, m));
            if let Some(sd) = s.fe_improvement_sd {
                let x = fr.x(s.penetration_pct);
                let _ = writeln!(
                    out,
                    "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
                     stroke=\"{}\" stroke-width=\"1\"/>",
                    fr.y(m - sd),
                    fr.y(m + sd),
                    volume_color(vol),
                );
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        polyline(&mut out, &fr, &pts, volume_color(vol), false);
        if !pts.is_empty() {
            legend_entry(&mut out, slot, volume_color(vol), vol.label());
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Travel-time change vs penetration, one line per volume, seeds averaged.
pub fn travel_time_plot_svg(rows: &[SummaryRow]) -> String {
    // (volume, penetration) → mean tt variation over seeds.
    let mut series: Vec<(VolumePreset, Vec<(f64, f64)>)> = Vec::new();
    for &vol in &VolumePreset::ALL {
        let mut pens: Vec<f64> = rows
            .iter()
            .filter(|r| r.volume == vol)
            .map(|r| r.penetration_pct)
            .collect();
        pens.sort_by(|a, b| a.total_cmp(b));
        pens.dedup();
        let mut pts = Vec::new();
        for pen in pens {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.volume == vol && r.penetration_pct == pen)
                .filter_map(|r| r.tt_variation_pct)
                .collect();
            if let Some(m) = mean(&vals) {
                pts.push((pen, m));
            }
        }
        if !pts.is_empty() {
            series.push((vol, pts));
        }
    }
    let fr = Frame::around(
        0.0,
        100.0,
        series.iter().flat_map(|(_, pts)| pts.iter().map(|&(_, y)| y)),
    );
    let mut out = svg_open("Travel-time change vs penetration rate");
    axes(
        &mut out,
        &fr,
        "Penetration rate (%)",
        "Travel-time change (%, negative is faster)",
        &[0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
    );
    for (slot, (vol, pts)) in series.iter().enumerate() {
        polyline(&mut out, &fr, pts, volume_color(*vol), false);
        legend_entry(&mut out, slot, volume_color(*vol), vol.label());
    }
    out.push_str("</svg>\n");
    out
}

/// Main-line speed by position for one volume: one line per penetration rate
/// (the 0% baseline dashed), seeds averaged, whole fleet only.
pub fn speed_profile_svg(rows: &[ProfileRow], volume: VolumePreset) -> String {
    // (penetration, bin) → mean over seeds.
    let mut pens: Vec<u32> = Vec::new();
    let mut cells: std::collections::BTreeMap<(u32, i64), Vec<f64>> =
        std::collections::BTreeMap::new();
    let mut x_hi = 0.0_f64;
    for r in rows.iter().filter(|r| r.class_filter == "all") {
        let Some((vol, pen, _seed)) = parse_run_id(&r.run_id) else { continue };
        if vol != volume {
            continue;
        }
        if !pens.contains(&pen) {
            pens.push(pen);
        }
        // Bin starts are clean multiples of the bin width; keyed in mm so the
        // map key is exact.
        cells.entry((pen, (r.bin_start_m * 1000.0).round() as i64)).or_default().push(
            r.mean_speed_mps,
        );
        x_hi = x_hi.max(r.bin_start_m);
    }
    pens.sort_unstable();
    let mut series: Vec<(u32, Vec<(f64, f64)>)> = Vec::new();
    for &pen in &pens {
        let pts: Vec<(f64, f64)> = cells
            .range((pen, i64::MIN)..=(pen, i64::MAX))
            .map(|(&(_, mm), vals)| (mm as f64 / 1000.0, mean(vals).expect("nonempty cell")))
            .collect();
        series.push((pen, pts));
    }
    let fr = Frame::around(
        0.0,
        x_hi.max(1.0),
        series.iter().flat_map(|(_, pts)| pts.iter().map(|&(_, y)| y)),
    );
    let mut out = svg_open(&format!("Mean speed along the main line ({} volume)", volume.label()));
    let ticks: Vec<f64> = (0..=5).map(|k| x_hi.max(1.0) * k as f64 / 5.0).collect();
    axes(&mut out, &fr, "Position (m)", "Mean speed (m/s)", &ticks);
    for (slot, (pen, pts)) in series.iter().enumerate() {
        let color =
            if *pen == 0 { "#333333".to_string() } else { penetration_color(*pen as f64) };
        polyline(&mut out, &fr, pts, &color, *pen == 0);
        let label =
            if *pen == 0 { "0% (baseline)".to_string() } else { format!("{pen}%") };
        legend_entry(&mut out, slot, &color, &label);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::sweep::{run_sweep, SweepPlan};

    fn tiny_outcome() -> SweepOutcome {
        let mut cfg = SimConfig::default();
        cfg.run.horizon_s = 60.0;
        cfg.run.drain_factor = 3.0;
        let plan =
            SweepPlan::new(vec![0.0, 50.0, 100.0], vec![VolumePreset::Low], 2).unwrap();
        run_sweep(&cfg, &plan).unwrap()
    }

    fn scratch_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("corsim-report-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn empty_outcome_writes_headers_only() {
        let out = SweepOutcome {
            runs: vec![],
            summary: vec![],
            penetration_stats: vec![],
            class_stats: vec![],
            trends: vec![],
        };
        let dir = scratch_dir("empty");
        write_outputs(&out, &dir).unwrap();
        for (name, header) in [
            ("vehicles.csv", VEHICLES_HEADER),
            ("summary.csv", SUMMARY_HEADER),
            ("speed_profile.csv", SPEED_PROFILE_HEADER),
            ("penetration_stats.csv", PENETRATION_STATS_HEADER),
            ("class_stats.csv", CLASS_STATS_HEADER),
        ] {
            let text = std::fs::read_to_string(dir.join(name)).unwrap();
            assert_eq!(text, format!("{header}\n"), "{name}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rerun_emits_identical_bytes() {
        let out = tiny_outcome();
        let dir = scratch_dir("rerun");
        write_outputs(&out, &dir).unwrap();
        let first = std::fs::read(dir.join("summary.csv")).unwrap();
        let first_veh = std::fs::read(dir.join("vehicles.csv")).unwrap();
        write_outputs(&out, &dir).unwrap();
        assert_eq!(std::fs::read(dir.join("summary.csv")).unwrap(), first);
        assert_eq!(std::fs::read(dir.join("vehicles.csv")).unwrap(), first_veh);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn summary_round_trips_through_csv() {
        let out = tiny_outcome();
        let dir = scratch_dir("roundtrip");
        write_outputs(&out, &dir).unwrap();
        let rows = read_summary_csv(&dir.join("summary.csv")).unwrap();
        assert_eq!(rows.len(), out.summary.len());
        for (read, orig) in rows.iter().zip(&out.summary) {
            assert_eq!(read.run_id, orig.run_id);
            assert_eq!(read.volume, orig.volume);
            assert_eq!(read.seed, orig.seed);
            assert_eq!(read.rear_end_events, orig.rear_end_events);
            // Numeric fields round-trip at the written precision.
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() < 5e-4,
                (None, None) => true,
                _ => false,
            };
            assert!(close(read.fuel_economy_m_per_ml, orig.fuel_economy_m_per_ml));
            assert!(close(read.fe_improvement_pct, orig.fe_improvement_pct));
            assert!(close(read.mean_travel_time_s, orig.mean_travel_time_s));
        }
        let stats = read_penetration_stats_csv(&dir.join("penetration_stats.csv")).unwrap();
        assert_eq!(stats.len(), out.penetration_stats.len());
        let profile = read_speed_profile_csv(&dir.join("speed_profile.csv")).unwrap();
        assert!(!profile.is_empty());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn malformed_csv_is_reported_with_line_numbers() {
        let dir = scratch_dir("malformed");
        let path = dir.join("summary.csv");
        std::fs::write(&path, format!("{SUMMARY_HEADER}\nnot,enough,fields\n")).unwrap();
        let err = read_summary_csv(&path).unwrap_err();
        assert!(matches!(err, ReportError::Malformed { line: 2, .. }), "{err}");
        std::fs::write(&path, "wrong,header\n").unwrap();
        let err = read_summary_csv(&path).unwrap_err();
        assert!(matches!(err, ReportError::Malformed { line: 1, .. }), "{err}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn run_ids_parse_back_into_cells() {
        assert_eq!(
            parse_run_id("high-p050-s02"),
            Some((VolumePreset::High, 50, 2))
        );
        assert_eq!(
            parse_run_id("medium-p000-s00"),
            Some((VolumePreset::Medium, 0, 0))
        );
        assert_eq!(parse_run_id("nonsense"), None);
    }

    #[test]
    fn speed_profile_svg_draws_one_line_per_penetration() {
        let out = tiny_outcome();
        let dir = scratch_dir("svg");
        write_outputs(&out, &dir).unwrap();
        let rows = read_speed_profile_csv(&dir.join("speed_profile.csv")).unwrap();
        let svg = speed_profile_svg(&rows, VolumePreset::Low);
        let lines = svg.matches("<polyline").count();
        assert_eq!(lines, 3); // 0% baseline, 50%, 100%
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("http://") || svg.contains("xmlns"), "no external refs");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn fuel_plot_covers_each_volume_present() {
        let out = tiny_outcome();
        let svg = fuel_plot_svg(&out.penetration_stats);
        assert_eq!(svg.matches("<polyline").count(), 1); // only low volume ran
        assert!(svg.contains(">low<"));
        let tt = travel_time_plot_svg(&out.summary);
        assert_eq!(tt.matches("<polyline").count(), 1);
    }
}
