use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::episode::{run_episode, EpisodeConfig, FailureCause, SelectionMode};
use super::metrics::Metrics;
use crate::error::{Result, SagaError};
use crate::fmt::{round_sig9, sig9};
use crate::net::PlannerNet;
use crate::world::PillarWorld;

pub const REPORT_HEADER: &str =
    "speed,seed,density,mode,success,failure_cause,time_s,length_m,avg_safety_m,min_safety_m,smoothness";
pub const AGGREGATE_HEADER: &str =
    "#agg,speed,density,mode,runs,successes,success_rate,time_s,length_m,avg_safety_m,min_safety_m,smoothness";

#[derive(Clone, Debug)]
pub struct BenchmarkSpec {
    pub seeds: Vec<u64>,
    pub speeds: Vec<f64>,
    pub densities: Vec<f64>,
    pub modes: Vec<SelectionMode>,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub speed: f64,
    pub seed: u64,
    pub density: f64,
    pub mode: SelectionMode,
    pub success: bool,
    pub failure_cause: FailureCause,
    /// Metrics rounded as written to the report.
    pub metrics: Metrics,
    /// Diagnostic of an aborted episode.
    pub error: Option<String>,
}

/// Means over the successful runs of one (speed, density, mode) group.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub speed: f64,
    pub density: f64,
    pub mode: SelectionMode,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub means: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

fn rounded(m: &Metrics) -> Metrics {
    Metrics {
        time_consumption: round_sig9(m.time_consumption),
        traj_length: round_sig9(m.traj_length),
        avg_safety: round_sig9(m.avg_safety),
        min_safety: round_sig9(m.min_safety),
        smoothness: round_sig9(m.smoothness),
    }
}

fn run_one(base: &EpisodeConfig, net: Option<&PlannerNet>, speed: f64, seed: u64, density: f64, mode: SelectionMode) -> ReportRow {
    let config = EpisodeConfig {
        v_max: speed,
        selection_mode: mode,
        seed,
        ..base.clone()
    };
    let outcome = PillarWorld::generate_default(seed, density).and_then(|w| run_episode(&w, net, &config));
    let nan = Metrics {
        time_consumption: f64::NAN,
        traj_length: f64::NAN,
        avg_safety: f64::NAN,
        min_safety: f64::NAN,
        smoothness: f64::NAN,
    };
    match outcome {
        Ok(r) => ReportRow {
            speed,
            seed,
            density,
            mode,
            success: r.success,
            failure_cause: r.failure_cause,
            metrics: rounded(&r.metrics),
            error: None,
        },
        Err(e) => {
            log::warn!("episode speed={speed} seed={seed} density={density} mode={mode} aborted: {e}");
            ReportRow {
                speed,
                seed,
                density,
                mode,
                success: false,
                failure_cause: FailureCause::Fault,
                metrics: nan,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs every (speed, density, mode, seed) episode on `jobs` threads.
/// Rows come back in that nesting order whatever the thread count.
pub fn run_benchmark(spec: &BenchmarkSpec, base: &EpisodeConfig, net: Option<&PlannerNet>) -> Result<BenchmarkReport> {
    if spec.jobs == 0 {
        return Err(SagaError::config("jobs must be at least 1"));
    }
    if spec.modes.contains(&SelectionMode::Learned) && net.is_none() {
        return Err(SagaError::config("learned mode needs network weights"));
    }
    base.validate()?;
    let mut tasks = Vec::new();
    for &speed in &spec.speeds {
        for &density in &spec.densities {
            for &mode in &spec.modes {
                for &seed in &spec.seeds {
                    tasks.push((speed, seed, density, mode));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| SagaError::config(format!("thread pool: {e}")))?;
    let rows: Vec<ReportRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(speed, seed, density, mode)| run_one(base, net, speed, seed, density, mode))
            .collect()
    });
    let aggregates = aggregate_rows(&rows);
    Ok(BenchmarkReport { rows, aggregates })
}

/// Groups rows by (speed, density, mode) in first-appearance order.
pub fn aggregate_rows(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut groups: Vec<(f64, f64, SelectionMode, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.speed && g.1 == r.density && g.2 == r.mode)
        {
            Some(g) => g.3.push(r),
            None => groups.push((r.speed, r.density, r.mode, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(speed, density, mode, members)| {
            let ok: Vec<&Metrics> = members.iter().filter(|r| r.success).map(|r| &r.metrics).collect();
            let n = ok.len() as f64;
            let mean = |f: fn(&Metrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / n;
            let means = (!ok.is_empty()).then(|| Metrics {
                time_consumption: mean(|m| m.time_consumption),
                traj_length: mean(|m| m.traj_length),
                avg_safety: mean(|m| m.avg_safety),
                min_safety: mean(|m| m.min_safety),
                smoothness: mean(|m| m.smoothness),
            });
            Aggregate {
                speed,
                density,
                mode,
                runs: members.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / members.len() as f64,
                means,
            }
        })
        .collect()
}

fn metric_fields(m: Option<&Metrics>) -> String {
    match m {
        Some(m) => format!(
            "{},{},{},{},{}",
            sig9(m.time_consumption),
            sig9(m.traj_length),
            sig9(m.avg_safety),
            sig9(m.min_safety),
            sig9(m.smoothness)
        ),
        None => "nan,nan,nan,nan,nan".to_string(),
    }
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{REPORT_HEADER}");
        for r in &self.rows {
            let m = (!r.metrics.time_consumption.is_nan()).then_some(&r.metrics);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                sig9(r.speed),
                r.seed,
                sig9(r.density),
                r.mode,
                r.success as u8,
                r.failure_cause,
                metric_fields(m)
            );
        }
        let _ = writeln!(out, "{AGGREGATE_HEADER}");
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "#agg,{},{},{},{},{},{},{}",
                sig9(a.speed),
                sig9(a.density),
                a.mode,
                a.runs,
                a.successes,
                sig9(a.success_rate),
                metric_fields(a.means.as_ref())
            );
        }
        out
    }

    /// Reads the rows and stored aggregates back from a report.
    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(SagaError::format(origin, "missing report header"));
        }
        let bad = |n: usize, what: &str| SagaError::format(origin, format!("line {}: {what}", n + 2));
        let num = |s: &str, n: usize| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let metrics = |f: &[&str], n: usize| -> Result<Metrics> {
            Ok(Metrics {
                time_consumption: num(f[0], n)?,
                traj_length: num(f[1], n)?,
                avg_safety: num(f[2], n)?,
                min_safety: num(f[3], n)?,
                smoothness: num(f[4], n)?,
            })
        };
        let mut rows = Vec::new();
        let mut aggregates = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if line == AGGREGATE_HEADER {
                continue;
            }
            if f[0] == "#agg" {
                if f.len() != 12 {
                    return Err(bad(n, "expected 12 aggregate fields"));
                }
                let means = metrics(&f[7..12], n)?;
                aggregates.push(Aggregate {
                    speed: num(f[1], n)?,
                    density: num(f[2], n)?,
                    mode: f[3].parse()?,
                    runs: f[4].parse().map_err(|_| bad(n, "bad run count"))?,
                    successes: f[5].parse().map_err(|_| bad(n, "bad success count"))?,
                    success_rate: num(f[6], n)?,
                    means: (!means.time_consumption.is_nan()).then_some(means),
                });
                continue;
            }
            if f.len() != 11 {
                return Err(bad(n, "expected 11 row fields"));
            }
            let cause = match f[5] {
                "none" => FailureCause::None,
                "collision" => FailureCause::Collision,
                "timeout" => FailureCause::Timeout,
                "fault" => FailureCause::Fault,
                _ => return Err(bad(n, "unknown failure cause")),
            };
            rows.push(ReportRow {
                speed: num(f[0], n)?,
                seed: f[1].parse().map_err(|_| bad(n, "bad seed"))?,
                density: num(f[2], n)?,
                mode: f[3].parse()?,
                success: f[4] == "1",
                failure_cause: cause,
                metrics: metrics(&f[6..11], n)?,
                error: None,
            });
        }
        Ok(BenchmarkReport { rows, aggregates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(speed: f64, seed: u64, mode: SelectionMode, success: bool, t: f64) -> ReportRow {
        ReportRow {
            speed,
            seed,
            density: 0.05,
            mode,
            success,
            failure_cause: if success { FailureCause::None } else { FailureCause::Collision },
            metrics: Metrics {
                time_consumption: t,
                traj_length: 2.0 * t,
                avg_safety: 1.0,
                min_safety: 0.5,
                smoothness: 10.0,
            },
            error: None,
        }
    }

    #[test]
    fn aggregates_use_successful_runs_only() {
        let rows = vec![
            row(2.0, 0, SelectionMode::Oracle, true, 10.0),
            row(2.0, 1, SelectionMode::Oracle, false, 99.0),
            row(2.0, 2, SelectionMode::Oracle, true, 20.0),
            row(2.0, 0, SelectionMode::Random, false, 5.0),
        ];
        let agg = aggregate_rows(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].successes, 2);
        assert_eq!(agg[0].means.unwrap().time_consumption, 15.0);
        assert!((agg[0].success_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!(agg[1].means.is_none());
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![
            row(2.0, 0, SelectionMode::Oracle, true, 10.0),
            row(3.0, 0, SelectionMode::Oracle, false, 1.0),
        ];
        let report = BenchmarkReport {
            aggregates: aggregate_rows(&rows),
            rows,
        };
        let back = BenchmarkReport::from_csv(&report.to_csv(), Path::new("r.csv")).unwrap();
        assert_eq!(back.rows, report.rows);
        assert_eq!(aggregate_rows(&back.rows), back.aggregates);
    }

    #[test]
    fn zero_jobs_rejected() {
        let spec = BenchmarkSpec {
            seeds: vec![0],
            speeds: vec![2.0],
            densities: vec![0.05],
            modes: vec![SelectionMode::Oracle],
            jobs: 0,
        };
        assert!(run_benchmark(&spec, &EpisodeConfig::default(), None).is_err());
    }
}
