//! Per-axis quintic boundary-value trajectories with closed-form
//! squared-jerk and squared-acceleration integrals.

use crate::error::{Result, SagaError};
use crate::fmt::sig9;
use crate::geometry::{Rotation3, Vec3};
use crate::real::Real;
use crate::world::Pose;

/// Lower and upper clamp of the duration rule, seconds.
pub const MIN_DURATION: f64 = 0.5;
pub const MAX_DURATION: f64 = 3.0;

/// Header for the kinematic log CSV.
pub const LOG_HEADER: &str = "t,px,py,pz,vx,vy,vz,ax,ay,az,jx,jy,jz";

/// Degree-5 polynomial per axis, `q_k(t) = Σ c[k][m] t^m`, on `[0, duration]`.
///
/// Coefficients live in the body frame at solve time; `origin` is the world
/// pose the body frame was attached to.
#[derive(Clone, Debug, PartialEq)]
pub struct QuinticTrajectory<S = f64> {
    pub coeffs: [[S; 6]; 3],
    pub duration: S,
    pub origin: Pose,
}

/// Position and its first three derivatives at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicSample<S = f64> {
    pub t: f64,
    pub position: Vec3<S>,
    pub velocity: Vec3<S>,
    pub acceleration: Vec3<S>,
    pub jerk: Vec3<S>,
}

fn solve_axis<S: Real>(p0: S, v0: S, a0: S, p1: S, v1: S, a1: S, t: S) -> [S; 6] {
    let t2 = t * t;
    let t3 = t2 * t;
    let c2 = a0 * 0.5;
    // residuals after the fixed low-order terms
    let d = p1 - (p0 + v0 * t + c2 * t2);
    let dv = v1 - (v0 + a0 * t);
    let da = a1 - a0;
    let c3 = (d * 10.0 - dv * t * 4.0 + da * t2 * 0.5) / t3;
    let c4 = (d * -15.0 + dv * t * 7.0 - da * t2) / (t3 * t);
    let c5 = (d * 6.0 - dv * t * 3.0 + da * t2 * 0.5) / (t3 * t2);
    [p0, v0, c2, c3, c4, c5]
}

/// Unique quintic per axis matching position, velocity and acceleration at
/// `t = 0` and `t = duration`.
pub fn solve_quintic<S: Real>(
    p0: &Vec3<S>,
    v0: &Vec3<S>,
    a0: &Vec3<S>,
    p1: &Vec3<S>,
    v1: &Vec3<S>,
    a1: &Vec3<S>,
    duration: S,
) -> Result<QuinticTrajectory<S>> {
    let tv = duration.value();
    if !(tv > 0.0) || !tv.is_finite() {
        return Err(SagaError::config(format!(
            "trajectory duration must be positive, got {tv}"
        )));
    }
    let mut coeffs = [[S::zero(); 6]; 3];
    for k in 0..3 {
        coeffs[k] = solve_axis(p0[k], v0[k], a0[k], p1[k], v1[k], a1[k], duration);
    }
    Ok(QuinticTrajectory {
        coeffs,
        duration,
        origin: Pose::default(),
    })
}

/// `T = clamp(r / v_max, 0.5, 3.0)`.
pub fn duration_rule<S: Real>(r: S, v_max: f64) -> S {
    (r / v_max).clamp_value(MIN_DURATION, MAX_DURATION)
}

fn horner<S: Real>(c: &[S], t: S) -> S {
    let mut acc = S::zero();
    for &x in c.iter().rev() {
        acc = acc * t + x;
    }
    acc
}

fn jerk_coeffs<S: Real>(c: &[S; 6]) -> [S; 3] {
    [c[3] * 6.0, c[4] * 24.0, c[5] * 60.0]
}

fn acc_coeffs<S: Real>(c: &[S; 6]) -> [S; 4] {
    [c[2] * 2.0, c[3] * 6.0, c[4] * 12.0, c[5] * 20.0]
}

/// `∫_0^T p(t)^2 dt` for a polynomial with coefficients `p`.
fn square_integral<S: Real>(p: &[S], t: S) -> S {
    let n = p.len();
    // powers of T up to 2n-1
    let mut pw = Vec::with_capacity(2 * n);
    let mut acc = t;
    for _ in 0..2 * n {
        pw.push(acc);
        acc = acc * t;
    }
    let mut total = S::zero();
    for m in 0..n {
        for k in 0..n {
            total += p[m] * p[k] * pw[m + k] / (m + k + 1) as f64;
        }
    }
    total
}

fn square_integral_between(p: &[f64], a: f64, b: f64) -> f64 {
    square_integral(p, b) - square_integral(p, a)
}

impl<S: Real> QuinticTrajectory<S> {
    /// Body-frame sample without range checking.
    pub fn eval(&self, t: S) -> KinematicSample<S> {
        let mut s = KinematicSample {
            t: t.value(),
            position: [S::zero(); 3],
            velocity: [S::zero(); 3],
            acceleration: [S::zero(); 3],
            jerk: [S::zero(); 3],
        };
        for k in 0..3 {
            let c = &self.coeffs[k];
            s.position[k] = horner(c, t);
            let dc = [c[1], c[2] * 2.0, c[3] * 3.0, c[4] * 4.0, c[5] * 5.0];
            s.velocity[k] = horner(&dc, t);
            s.acceleration[k] = horner(&acc_coeffs(c), t);
            s.jerk[k] = horner(&jerk_coeffs(c), t);
        }
        s
    }

    /// Body-frame sample at `t ∈ [0, T]`.
    pub fn sample(&self, t: f64) -> Result<KinematicSample<S>> {
        let dur = self.duration.value();
        let slack = 1e-9 * dur.max(1.0);
        if !(t >= -slack && t <= dur + slack) {
            return Err(SagaError::OutOfRange {
                what: "trajectory time (ns)",
                index: (t * 1e9).max(0.0) as usize,
                len: (dur * 1e9) as usize,
            });
        }
        Ok(self.eval(S::cst(t.clamp(0.0, dur))))
    }

    /// Closed-form `∫_0^T ‖q'''(t)‖² dt`.
    pub fn jerk_integral(&self) -> S {
        let mut total = S::zero();
        for k in 0..3 {
            total += square_integral(&jerk_coeffs(&self.coeffs[k]), self.duration);
        }
        total
    }

    /// Closed-form `∫_0^T ‖q''(t)‖² dt`.
    pub fn acc_integral(&self) -> S {
        let mut total = S::zero();
        for k in 0..3 {
            total += square_integral(&acc_coeffs(&self.coeffs[k]), self.duration);
        }
        total
    }

    /// World-frame position of the body-frame point `p`.
    pub fn to_world_point(&self, p: &Vec3<S>) -> Vec3<S> {
        let (s, c) = self.origin.yaw.sin_cos();
        [
            p[0] * c - p[1] * s + self.origin.position[0],
            p[0] * s + p[1] * c + self.origin.position[1],
            p[2] + self.origin.position[2],
        ]
    }
}

impl QuinticTrajectory<f64> {
    /// Closed-form `∫_{t0}^{t1} ‖q'''(t)‖² dt` over a sub-interval.
    pub fn jerk_integral_between(&self, t0: f64, t1: f64) -> f64 {
        (0..3)
            .map(|k| square_integral_between(&jerk_coeffs(&self.coeffs[k]), t0, t1))
            .sum()
    }

    pub fn with_origin(mut self, origin: Pose) -> Self {
        self.origin = origin;
        self
    }

    /// World-frame sample; derivatives are rotated by the origin yaw.
    pub fn sample_world(&self, t: f64) -> Result<KinematicSample> {
        let s = self.sample(t)?;
        let rot = Rotation3::about_z(self.origin.yaw);
        Ok(KinematicSample {
            t,
            position: self.to_world_point(&s.position),
            velocity: rot.apply(&s.velocity),
            acceleration: rot.apply(&s.acceleration),
            jerk: rot.apply(&s.jerk),
        })
    }
}

impl KinematicSample<f64> {
    /// One CSV log line (no trailing newline), nine significant digits.
    pub fn csv_line(&self) -> String {
        let mut fields = Vec::with_capacity(13);
        fields.push(sig9(self.t));
        for v in [&self.position, &self.velocity, &self.acceleration, &self.jerk] {
            fields.extend(v.iter().map(|x| sig9(*x)));
        }
        fields.join(",")
    }
}
