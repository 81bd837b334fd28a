use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::density::{emit_density, grid, scott_bandwidth};
use super::metrics::{count_curve, oracle_line};
use super::runner::read_meta;
use crate::error::{Error, Result};
use crate::quantile::wasserstein2_to_gaussian;
use crate::stats::std_normal_pdf;

const DENSITY_POINTS: usize = 256;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
}

/// (t, label) → θ, ordered by t then label.
type Snapshots = BTreeMap<(u64, String), Vec<f64>>;

/// path → (weight, mean, std) per component.
type GroundTruth = BTreeMap<String, Vec<(f64, f64, f64)>>;

/// Turns a run directory into plot-ready CSVs under `out` (default
/// `<run_dir>/plots`). A sweep directory is processed setting by setting.
pub fn plotdata(run_dir: &Path, out: Option<&Path>) -> Result<PlotReport> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("plots"));
    if run_dir.join("sweep_summary.csv").exists() {
        let mut report = PlotReport::default();
        let mut subdirs: Vec<PathBuf> = fs::read_dir(run_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("summary.csv").exists())
            .collect();
        subdirs.sort();
        for d in subdirs {
            let name = d.file_name().expect("directory entry").to_owned();
            report.files.extend(plot_one(&d, &out.join(name))?.files);
        }
        return Ok(report);
    }
    plot_one(run_dir, &out)
}

fn plot_one(dir: &Path, out: &Path) -> Result<PlotReport> {
    if !dir.join("summary.csv").exists() {
        return Err(Error::Config(format!(
            "{} is not a run directory (no summary.csv)",
            dir.display()
        )));
    }
    let meta: BTreeMap<String, String> = read_meta(dir)?.into_iter().collect();
    let get = |k: &str| -> Result<u64> {
        meta.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("meta.txt lacks `{k}`")))
    };
    let total_steps = get("total_steps")?;
    let stride = get("eval_interval")?.max(1);
    let bandwidth = match meta.get("kde_bandwidth").map(String::as_str) {
        None | Some("scott") => None,
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad kde_bandwidth `{v}`")))?,
        ),
    };
    let start = get("start_state")?;
    let truth = read_ground_truth(dir)?;
    let left_gauss = match truth.get("left").map(Vec::as_slice) {
        Some(&[(_, mu, sigma)]) if sigma > 0.0 => Some((mu, sigma)),
        _ => None,
    };
    fs::create_dir_all(out)?;
    let mut report = PlotReport::default();

    // agent → seed → file stem suffix
    let mut runs: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some((agent, seed)) = name
            .strip_prefix("trace_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.rsplit_once('_'))
        {
            if let Ok(seed) = seed.parse() {
                runs.entry(agent.to_string()).or_default().push(seed);
            }
        }
    }

    for (agent, seeds) in &mut runs {
        seeds.sort_unstable();
        let mut counts: Vec<Vec<(u64, u64)>> = Vec::new();
        let mut w2: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for &seed in seeds.iter() {
            counts.push(count_curve(
                read_flags(&dir.join(format!("trace_{agent}_{seed}.csv")))?,
                stride,
            ));
            let snaps = read_snapshots(&dir.join(format!("snapshots_{agent}_{seed}.csv")))?;
            if let Some((mu, sigma)) = left_gauss {
                let label = format!("s{start}_a0");
                for ((t, l), theta) in &snaps {
                    if *l == label {
                        w2.entry(*t)
                            .or_default()
                            .push(wasserstein2_to_gaussian(theta, mu, sigma)?);
                    }
                }
            }
            let path = out.join(format!("density_{agent}_{seed}.csv"));
            write_densities(&path, &snaps, bandwidth)?;
            report.files.push(path);
        }

        let path = out.join(format!("counts_{agent}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["t", "mean_count", "min_count", "max_count", "oracle", "seed_count"])?;
        let len = counts.iter().map(Vec::len).min().unwrap_or(0);
        for i in 0..len {
            let t = counts[0][i].0;
            let vals: Vec<u64> = counts.iter().filter(|c| c[i].0 == t).map(|c| c[i].1).collect();
            let mean = vals.iter().sum::<u64>() as f64 / vals.len() as f64;
            w.write_record([
                t.to_string(),
                format!("{mean}"),
                vals.iter().min().unwrap().to_string(),
                vals.iter().max().unwrap().to_string(),
                oracle_line(t.min(total_steps)).to_string(),
                vals.len().to_string(),
            ])?;
        }
        w.flush()?;
        report.files.push(path);

        if !w2.is_empty() {
            let path = out.join(format!("w2_{agent}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["t", "mean_w2", "seed_count"])?;
            for (t, v) in &w2 {
                w.write_record([
                    t.to_string(),
                    format!("{}", v.iter().sum::<f64>() / v.len() as f64),
                    v.len().to_string(),
                ])?;
            }
            w.flush()?;
            report.files.push(path);
        }
    }

    if !truth.is_empty() {
        let path = out.join("density_ground_truth.csv");
        write_truth_density(&path, &truth)?;
        report.files.push(path);
    }
    Ok(report)
}

fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let mut out = GroundTruth::new();
    let path = dir.join("ground_truth.csv");
    if !path.exists() {
        return Ok(out);
    }
    for rec in csv::Reader::from_path(&path)?.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad row {rec:?}", path.display())))
        };
        out.entry(rec.get(0).unwrap_or("").to_string())
            .or_default()
            .push((num(1)?, num(2)?, num(3)?));
    }
    Ok(out)
}

fn read_flags(path: &Path) -> Result<Vec<(u64, bool)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", path.display())))
    };
    let (ti, oi) = (col("t")?, col("is_optimal_action")?);
    rdr.records()
        .map(|r| {
            let r = r?;
            let t = r[ti]
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad t `{}`", path.display(), &r[ti])))?;
            Ok((t, &r[oi] == "1"))
        })
        .collect()
}

fn read_snapshots(path: &Path) -> Result<Snapshots> {
    let mut out = Snapshots::new();
    for rec in csv::Reader::from_path(path)?.records() {
        let rec = rec?;
        let bad = || Error::Config(format!("{}: bad row {rec:?}", path.display()));
        let t: u64 = rec[0].parse().map_err(|_| bad())?;
        let v: f64 = rec[3].parse().map_err(|_| bad())?;
        out.entry((t, rec[1].to_string())).or_default().push(v);
    }
    Ok(out)
}

/// One shared grid per (state, action) label so densities at different
/// times overlay directly.
fn write_densities(path: &Path, snaps: &Snapshots, bandwidth: Option<f64>) -> Result<()> {
    let mut ranges: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    for ((_, label), theta) in snaps {
        let h = bandwidth.map_or_else(|| scott_bandwidth(theta), Ok)?;
        let e = ranges.entry(label).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0.0));
        for &v in theta {
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
        e.2 = e.2.max(h);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "sa_label", "x", "density"])?;
    for ((t, label), theta) in snaps {
        let (lo, hi, h) = ranges[label.as_str()];
        for (x, d) in emit_density(theta, lo - 4.0 * h, hi + 4.0 * h, DENSITY_POINTS, bandwidth)? {
            w.write_record([t.to_string(), label.clone(), format!("{x}"), format!("{d}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_truth_density(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "x", "density"])?;
    for (name, comps) in truth {
        if comps.iter().any(|c| !(c.2 > 0.0)) {
            continue;
        }
        let lo = comps.iter().map(|c| c.1 - 5.0 * c.2).fold(f64::INFINITY, f64::min);
        let hi = comps.iter().map(|c| c.1 + 5.0 * c.2).fold(f64::NEG_INFINITY, f64::max);
        for x in grid(lo, hi, 4 * DENSITY_POINTS)? {
            let d: f64 = comps
                .iter()
                .map(|&(wt, m, s)| wt * std_normal_pdf((x - m) / s) / s)
                .sum();
            w.write_record([name.clone(), format!("{x}"), format!("{d}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
