use std::fs;
use std::path::{Path, PathBuf};

use crate::drl::mean_std;
use crate::drl::policy::EpisodeSummary;
use crate::error::{Error, Result};

/// Centered moving average: each point averages `window/2` neighbours on
/// either side, truncated at the ends.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn read_trace(path: &Path) -> Result<Vec<EpisodeSummary>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::MissingResults(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<EpisodeSummary>, _>>()
        .map_err(|e| Error::MissingResults(format!("{}: {e}", path.display())))
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

struct Series {
    algorithm: String,
    /// [seed][episode]
    runs: Vec<Vec<EpisodeSummary>>,
}

fn seed_number(p: &Path) -> Option<u64> {
    p.file_name()?.to_str()?.strip_prefix("seed_")?.parse().ok()
}

fn collect(results: &Path, file: &str) -> Result<Vec<Series>> {
    let mut out = Vec::new();
    for algo_dir in sorted_dirs(results)? {
        let name = algo_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if name == "plotdata" {
            continue;
        }
        let mut seeds: Vec<(u64, PathBuf)> = sorted_dirs(&algo_dir)?
            .into_iter()
            .filter_map(|p| seed_number(&p).map(|s| (s, p)))
            .collect();
        if seeds.is_empty() {
            return Err(Error::MissingResults(format!("{} has no seed results", algo_dir.display())));
        }
        seeds.sort();
        let runs = seeds
            .iter()
            .map(|(_, p)| read_trace(&p.join(file)))
            .collect::<Result<Vec<_>>>()?;
        out.push(Series { algorithm: name, runs });
    }
    if out.is_empty() {
        return Err(Error::MissingResults(format!("no algorithm results under {}", results.display())));
    }
    Ok(out)
}

fn emit(series: &[Series], metric: fn(&EpisodeSummary) -> f64, window: usize, path: &Path) -> Result<()> {
    let len = series.iter().flat_map(|s| s.runs.iter().map(Vec::len)).max().unwrap_or(0);
    let mut header = vec!["episode".to_string()];
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for s in series {
        let (mut means, mut stds) = (Vec::new(), Vec::new());
        for ep in 0..len {
            let vals: Vec<f64> = s.runs.iter().filter_map(|r| r.get(ep)).map(metric).collect();
            let (m, sd) = mean_std(&vals);
            means.push(m);
            stds.push(sd);
        }
        let sm = smooth(&means, window);
        for (suffix, col) in [("mean", means), ("std", stds), ("smooth", sm)] {
            header.push(format!("{}_{suffix}", s.algorithm));
            columns.push(col.into_iter().map(Some).collect());
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for ep in 0..len {
        let mut rec = vec![ep.to_string()];
        rec.extend(columns.iter().map(|c| c[ep].map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-figure CSVs (mean, std and smoothed mean across seeds, per episode)
/// under `<results>/plotdata`.
pub fn emit_plotdata(results: &Path, window: usize) -> Result<Vec<PathBuf>> {
    if !results.is_dir() {
        return Err(Error::MissingResults(format!("{} is not a directory", results.display())));
    }
    let train = collect(results, "train.csv")?;
    let test = collect(results, "test.csv")?;
    let out = results.join("plotdata");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    let reward: fn(&EpisodeSummary) -> f64 = |e| e.mean_reward;
    let power: fn(&EpisodeSummary) -> f64 = |e| e.mean_power_w;
    for (name, series, metric) in [
        ("train_reward.csv", &train, reward),
        ("train_power.csv", &train, power),
        ("test_reward.csv", &test, reward),
        ("test_power.csv", &test, power),
    ] {
        let path = out.join(name);
        emit(series, metric, window, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_by_hand() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = smooth(&xs, 4);
        // window 4 averages two neighbours on each side
        let expect = [2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 8.5, 9.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
        assert_eq!(smooth(&xs, 1), xs);
    }

    fn summary(ep: usize, r: f64) -> EpisodeSummary {
        EpisodeSummary {
            episode: ep,
            steps: 1,
            mean_reward: r,
            mean_power_w: -r,
            mean_utilization: 0.1,
            violations: 0,
            over_bound_steps: 0,
            mean_loss: None,
        }
    }

    fn write_seed(root: &Path, algo: &str, seed: u64, vals: &[f64]) {
        let d = root.join(algo).join(format!("seed_{seed}"));
        fs::create_dir_all(&d).unwrap();
        for f in ["train.csv", "test.csv"] {
            let mut w = csv::Writer::from_path(d.join(f)).unwrap();
            for (i, &v) in vals.iter().enumerate() {
                w.serialize(summary(i, v)).unwrap();
            }
            w.flush().unwrap();
        }
    }

    #[test]
    fn aggregates_across_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let vals_a: Vec<f64> = (0..2500).map(|i| f64::from(i) * 0.001).collect();
        let vals_b: Vec<f64> = vals_a.iter().map(|v| v + 1.0).collect();
        write_seed(dir.path(), "dqn", 0, &vals_a);
        write_seed(dir.path(), "dqn", 1, &vals_b);
        let files = emit_plotdata(dir.path(), 50).unwrap();
        assert_eq!(files.len(), 4);
        let mut r = csv::Reader::from_path(dir.path().join("plotdata/train_reward.csv")).unwrap();
        let h = r.headers().unwrap().clone();
        assert_eq!(&h[1], "dqn_mean");
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 2500);
        let m: f64 = rows[10][1].parse().unwrap();
        let s: f64 = rows[10][2].parse().unwrap();
        assert!((m - (0.01 + 0.5)).abs() < 1e-12);
        assert!((s - (0.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_seed_set_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("ddqn")).unwrap();
        assert!(matches!(emit_plotdata(dir.path(), 50), Err(Error::MissingResults(_))));
        assert!(!dir.path().join("plotdata/train_reward.csv").exists());
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plotdata(empty.path(), 50), Err(Error::MissingResults(_))));
    }
}
