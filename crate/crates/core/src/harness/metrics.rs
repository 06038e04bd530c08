use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SagaError};
use crate::fmt::{round_sig9, sig9};
use crate::geometry::Vec3;
use crate::trajectory::{QuinticTrajectory, LOG_HEADER};
use crate::world::PillarWorld;

/// One logged control step, values already rounded to 9 significant digits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
    pub signed_distance: f64,
}

impl LogSample {
    /// Copy with every field rounded to 9 significant digits.
    pub fn rounded(&self) -> LogSample {
        let r = |v: &Vec3| [round_sig9(v[0]), round_sig9(v[1]), round_sig9(v[2])];
        LogSample {
            t: round_sig9(self.t),
            position: r(&self.position),
            velocity: r(&self.velocity),
            acceleration: r(&self.acceleration),
            jerk: r(&self.jerk),
            signed_distance: round_sig9(self.signed_distance),
        }
    }
}

/// Executed part `[0, duration]` of one planned trajectory, started at
/// episode time `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub traj: QuinticTrajectory,
    pub start: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlightLog {
    pub samples: Vec<LogSample>,
    pub pieces: Vec<Piece>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub time_consumption: f64,
    pub traj_length: f64,
    pub avg_safety: f64,
    pub min_safety: f64,
    /// Integrated squared jerk over the executed pieces.
    pub smoothness: f64,
}

/// Metrics from the logged samples; safety uses distances clamped at zero.
pub fn sample_metrics(samples: &[LogSample]) -> Result<Metrics> {
    let first = samples
        .first()
        .ok_or_else(|| SagaError::config("empty flight log"))?;
    let last = samples.last().expect("nonempty");
    let mut length = 0.0;
    for w in samples.windows(2) {
        let d = [
            w[1].position[0] - w[0].position[0],
            w[1].position[1] - w[0].position[1],
            w[1].position[2] - w[0].position[2],
        ];
        length += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    let clamped = samples.iter().map(|s| s.signed_distance.max(0.0));
    let sum: f64 = clamped.clone().sum();
    let min = clamped.fold(f64::INFINITY, f64::min);
    Ok(Metrics {
        time_consumption: last.t - first.t,
        traj_length: length,
        avg_safety: sum / samples.len() as f64,
        min_safety: min,
        smoothness: 0.0,
    })
}

/// Episode metrics; signed distances are recomputed against `world`.
pub fn compute_metrics(log: &FlightLog, world: &PillarWorld) -> Result<Metrics> {
    let samples: Vec<LogSample> = log
        .samples
        .iter()
        .map(|s| LogSample {
            signed_distance: round_sig9(world.signed_distance(&s.position)),
            ..*s
        })
        .collect();
    let mut m = sample_metrics(&samples)?;
    m.smoothness = log
        .pieces
        .iter()
        .map(|p| p.traj.jerk_integral_between(0.0, p.duration))
        .sum();
    if !(m.smoothness.is_finite() && m.traj_length.is_finite()) {
        return Err(SagaError::NonFinite("episode metrics".into()));
    }
    Ok(m)
}

pub fn log_header() -> String {
    format!("{LOG_HEADER},signed_distance")
}

pub fn log_to_csv(log: &FlightLog) -> String {
    let mut out = log_header();
    out.push('\n');
    for s in &log.samples {
        out.push_str(&sig9(s.t));
        for v in [&s.position, &s.velocity, &s.acceleration, &s.jerk] {
            for x in v {
                let _ = write!(out, ",{}", sig9(*x));
            }
        }
        let _ = writeln!(out, ",{}", sig9(s.signed_distance));
    }
    out
}

/// Parses a flight log written by [`log_to_csv`].
pub fn log_from_csv(text: &str, origin: &Path) -> Result<Vec<LogSample>> {
    let mut lines = text.lines();
    if lines.next() != Some(log_header().as_str()) {
        return Err(SagaError::format(origin, "missing flight log header"));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SagaError::format(origin, format!("line {}: {e}", n + 2)))?;
        if vals.len() != 14 {
            return Err(SagaError::format(origin, format!("line {}: expected 14 fields", n + 2)));
        }
        let v3 = |i: usize| [vals[i], vals[i + 1], vals[i + 2]];
        out.push(LogSample {
            t: vals[0],
            position: v3(1),
            velocity: v3(4),
            acceleration: v3(7),
            jerk: v3(10),
            signed_distance: vals[13],
        });
    }
    Ok(out)
}

pub fn metrics_line(m: &Metrics) -> String {
    format!(
        "time_s={} length_m={} avg_safety_m={} min_safety_m={} smoothness={}",
        sig9(m.time_consumption),
        sig9(m.traj_length),
        sig9(m.avg_safety),
        sig9(m.min_safety),
        sig9(m.smoothness)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::solve_quintic;
    use crate::world::{Pillar, Pose};

    fn sample_at(t: f64, position: Vec3) -> LogSample {
        LogSample {
            t,
            position,
            velocity: [0.0; 3],
            acceleration: [0.0; 3],
            jerk: [0.0; 3],
            signed_distance: 0.0,
        }
    }

    #[test]
    fn straight_segment_time_and_length() {
        let samples: Vec<LogSample> = (0..=50)
            .map(|k| {
                let t = k as f64 * 0.1;
                sample_at(t, [2.0 * t, 0.0, 1.0])
            })
            .collect();
        let log = FlightLog {
            samples,
            pieces: vec![],
        };
        let m = compute_metrics(&log, &PillarWorld::empty()).unwrap();
        assert!((m.time_consumption - 5.0).abs() < 1e-12);
        assert!((m.traj_length - 10.0).abs() < 1e-9);
    }

    #[test]
    fn constant_clearance_is_avg_and_min() {
        let mut world = PillarWorld::empty();
        world.pillars.push(Pillar { x: 0.0, y: 0.0, r: 0.5 });
        let samples = (0..12)
            .map(|k| {
                let a = k as f64 * 0.5;
                sample_at(k as f64, [a.cos(), a.sin(), 0.0])
            })
            .collect();
        let m = compute_metrics(&FlightLog { samples, pieces: vec![] }, &world).unwrap();
        assert!((m.avg_safety - 0.5).abs() < 1e-9);
        assert!((m.min_safety - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unit_rest_to_rest_smoothness() {
        let z = [0.0; 3];
        let traj = solve_quintic(&z, &z, &z, &[1.0, 0.0, 0.0], &z, &z, 1.0).unwrap();
        let traj = traj.with_origin(Pose::default());
        let log = FlightLog {
            samples: vec![sample_at(0.0, z), sample_at(1.0, [1.0, 0.0, 0.0])],
            pieces: vec![Piece {
                traj,
                start: 0.0,
                duration: 1.0,
            }],
        };
        let m = compute_metrics(&log, &PillarWorld::empty()).unwrap();
        assert!((m.smoothness - 720.0).abs() < 1e-9);
    }

    #[test]
    fn penetration_clamps_to_zero() {
        let mut world = PillarWorld::empty();
        world.pillars.push(Pillar { x: 0.0, y: 0.0, r: 1.0 });
        let samples = vec![sample_at(0.0, [0.0, 0.0, 0.0]), sample_at(1.0, [3.0, 0.0, 0.0])];
        let m = compute_metrics(&FlightLog { samples, pieces: vec![] }, &world).unwrap();
        assert_eq!(m.min_safety, 0.0);
        assert!((m.avg_safety - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let samples = vec![
            LogSample {
                t: 0.02,
                position: [1.0 / 3.0, -2.0, 1.5],
                velocity: [0.1, 0.2, 0.3],
                acceleration: [1e-12, 0.0, -4.0],
                jerk: [7.0, 8.0, 9.0],
                signed_distance: 2.5,
            }
            .rounded(),
        ];
        let log = FlightLog { samples: samples.clone(), pieces: vec![] };
        let back = log_from_csv(&log_to_csv(&log), Path::new("x.csv")).unwrap();
        assert_eq!(back, samples);
        assert!(log_from_csv("t,px\n", Path::new("x.csv")).is_err());
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(compute_metrics(&FlightLog::default(), &PillarWorld::empty()).is_err());
    }
}
