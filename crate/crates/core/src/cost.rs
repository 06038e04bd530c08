//! Structured per-anchor trajectory cost and the training losses built on it.

use crate::error::{Result, SagaError};
use crate::geometry::{decode_terminal, AnchorLattice, BodyState, NormalizedRefinement, Vec3, NUM_ANCHORS, REFINE_DIM};
use crate::nn::smooth_l1;
use crate::real::{Dual, Real};
use crate::trajectory::{duration_rule, solve_quintic, QuinticTrajectory};
use crate::world::{PillarWorld, Pose};

/// Term weights and sampling settings of the structured cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub lambda_smooth: f64,
    pub lambda_safe: f64,
    pub lambda_goal: f64,
    pub lambda_acc: f64,
    pub lambda_traj: f64,
    pub lambda_score: f64,
    /// Clearance below which the safety hinge activates, meters.
    pub d_safe: f64,
    /// Uniform time samples used by the safety term.
    pub n_samples: usize,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            lambda_smooth: 0.01,
            lambda_safe: 1000.0,
            lambda_goal: 1.0,
            lambda_acc: 0.01,
            lambda_traj: 1.0,
            lambda_score: 0.5,
            d_safe: 0.8,
            n_samples: 20,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_smooth,
            self.lambda_safe,
            self.lambda_goal,
            self.lambda_acc,
            self.lambda_traj,
            self.lambda_score,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(SagaError::config("cost weights must be finite and >= 0"));
        }
        if !(self.d_safe > 0.0) {
            return Err(SagaError::config("d_safe must be positive"));
        }
        if self.n_samples < 2 {
            return Err(SagaError::config("n_samples must be >= 2"));
        }
        Ok(())
    }

    /// Multiplies the four structured-cost weights by `k`.
    pub fn scaled(mut self, k: f64) -> Self {
        self.lambda_smooth *= k;
        self.lambda_safe *= k;
        self.lambda_goal *= k;
        self.lambda_acc *= k;
        self
    }
}

/// The four cost terms and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown<S = f64> {
    pub j_smooth: S,
    pub j_safe: S,
    pub j_goal: S,
    pub j_acc: S,
    pub total: S,
}

impl<S: Real> CostBreakdown<S> {
    pub fn values(&self) -> CostBreakdown<f64> {
        CostBreakdown {
            j_smooth: self.j_smooth.value(),
            j_safe: self.j_safe.value(),
            j_goal: self.j_goal.value(),
            j_acc: self.j_acc.value(),
            total: self.total.value(),
        }
    }
}

pub fn smooth_cost<S: Real>(traj: &QuinticTrajectory<S>) -> S {
    traj.jerk_integral()
}

pub fn acc_cost<S: Real>(traj: &QuinticTrajectory<S>) -> S {
    traj.acc_integral()
}

/// Mean squared hinge `max(0, d_safe - sd)²` over `n_samples` uniform times
/// on `[0, T]`, evaluated at world-frame positions.
pub fn safety_cost<S: Real>(
    traj: &QuinticTrajectory<S>,
    world: &PillarWorld,
    d_safe: f64,
    n_samples: usize,
) -> S {
    let n = n_samples.max(2);
    let mut total = S::zero();
    for j in 0..n {
        let t = traj.duration * (j as f64 / (n - 1) as f64);
        let body = traj.eval(t).position;
        let p = traj.to_world_point(&body);
        let gap = -world.signed_distance(&p) + d_safe;
        if gap.value() > 0.0 {
            total += gap * gap;
        }
    }
    total / n as f64
}

/// Goal vector pulled onto the reachable shell: `g_b` scaled to norm
/// `min(‖g_b‖, r_max)`.
pub fn goal_target(g_b: &Vec3, r_max: f64) -> Vec3 {
    let n = (g_b[0] * g_b[0] + g_b[1] * g_b[1] + g_b[2] * g_b[2]).sqrt();
    if n == 0.0 {
        return [0.0; 3];
    }
    let k = n.min(r_max) / n;
    [g_b[0] * k, g_b[1] * k, g_b[2] * k]
}

/// `‖p(T) − g_target‖²` in the body frame.
pub fn goal_cost<S: Real>(traj: &QuinticTrajectory<S>, g_b: &Vec3, r_max: f64) -> S {
    let target = goal_target(g_b, r_max);
    let end = traj.eval(traj.duration).position;
    let mut total = S::zero();
    for k in 0..3 {
        let d = end[k] - target[k];
        total += d * d;
    }
    total
}

pub fn structured_cost<S: Real>(
    traj: &QuinticTrajectory<S>,
    world: &PillarWorld,
    g_b: &Vec3,
    r_max: f64,
    weights: &CostWeights,
) -> CostBreakdown<S> {
    let j_smooth = smooth_cost(traj);
    let j_safe = safety_cost(traj, world, weights.d_safe, weights.n_samples);
    let j_goal = goal_cost(traj, g_b, r_max);
    let j_acc = acc_cost(traj);
    let total = j_smooth * weights.lambda_smooth
        + j_safe * weights.lambda_safe
        + j_goal * weights.lambda_goal
        + j_acc * weights.lambda_acc;
    CostBreakdown {
        j_smooth,
        j_safe,
        j_goal,
        j_acc,
        total,
    }
}

/// Mean of the structured-cost totals over all anchors.
pub fn traj_loss(breakdowns: &[CostBreakdown]) -> Result<f64> {
    if breakdowns.len() != NUM_ANCHORS {
        return Err(SagaError::config(format!(
            "trajectory loss expects {NUM_ANCHORS} anchors, got {}",
            breakdowns.len()
        )));
    }
    Ok(breakdowns.iter().map(|b| b.total).sum::<f64>() / NUM_ANCHORS as f64)
}

/// Mean Smooth-L1 between scores and (constant) cost targets.
pub fn score_loss(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(SagaError::config("score loss needs equal, nonempty inputs"));
    }
    Ok(scores
        .iter()
        .zip(targets)
        .map(|(s, t)| smooth_l1(*s, *t))
        .sum::<f64>()
        / scores.len() as f64)
}

pub fn total_loss(l_traj: f64, l_score: f64, weights: &CostWeights) -> f64 {
    weights.lambda_traj * l_traj + weights.lambda_score * l_score
}

/// Everything needed to turn one anchor refinement into a scored,
/// world-anchored candidate trajectory.
#[derive(Clone, Copy, Debug)]
pub struct CandidateContext<'a> {
    pub world: &'a PillarWorld,
    pub lattice: &'a AnchorLattice,
    pub weights: &'a CostWeights,
    pub state: BodyState,
    pub origin: Pose,
    pub v_max: f64,
}

impl<'a> CandidateContext<'a> {
    /// Decodes anchor `index` with `u` and solves the quintic from the
    /// current body-frame state.
    pub fn trajectory<S: Real>(
        &self,
        index: usize,
        u: &NormalizedRefinement<S>,
    ) -> Result<QuinticTrajectory<S>> {
        let term = decode_terminal(self.lattice, index, u)?;
        let duration = duration_rule(term.r, self.v_max);
        let lift = |v: &Vec3| [S::cst(v[0]), S::cst(v[1]), S::cst(v[2])];
        let mut traj = solve_quintic(
            &[S::zero(); 3],
            &lift(&self.state.v_b),
            &lift(&self.state.a_b),
            &term.p_b,
            &term.v_b,
            &term.a_b,
            duration,
        )?;
        traj.origin = self.origin;
        Ok(traj)
    }

    pub fn cost(&self, index: usize, u: &NormalizedRefinement) -> Result<CostBreakdown> {
        let traj = self.trajectory(index, u)?;
        Ok(structured_cost(
            &traj,
            self.world,
            &self.state.g_b,
            self.lattice.r_max,
            self.weights,
        ))
    }

    /// Cost plus the gradient of the total w.r.t. the nine refinement inputs.
    pub fn cost_with_grad(
        &self,
        index: usize,
        u: &NormalizedRefinement,
    ) -> Result<(CostBreakdown, [f64; REFINE_DIM])> {
        let mut du = [Dual::<REFINE_DIM>::constant(0.0); REFINE_DIM];
        for (k, x) in du.iter_mut().enumerate() {
            *x = Dual::variable(u.0[k], k);
        }
        let traj = self.trajectory(index, &NormalizedRefinement(du))?;
        let b = structured_cost(
            &traj,
            self.world,
            &self.state.g_b,
            self.lattice.r_max,
            self.weights,
        );
        Ok((b.values(), b.total.d))
    }

    /// Costs of all anchors, each decoded with its own refinement.
    pub fn all_costs(&self, u: &[NormalizedRefinement]) -> Result<Vec<CostBreakdown>> {
        if u.len() != NUM_ANCHORS {
            return Err(SagaError::config("expected one refinement per anchor"));
        }
        u.iter().enumerate().map(|(i, ui)| self.cost(i, ui)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Pillar;

    fn line_x(len: f64, t: f64) -> QuinticTrajectory {
        let z = [0.0; 3];
        solve_quintic(&z, &z, &z, &[len, 0.0, 0.0], &z, &z, t).unwrap()
    }

    #[test]
    fn smooth_and_acc_of_unit_quintic() {
        let q = line_x(1.0, 1.0);
        assert!((smooth_cost(&q) - 720.0).abs() < 1e-9);
        assert!((acc_cost(&q) - 120.0 / 7.0).abs() < 1e-12);
        let q2 = line_x(2.0, 1.0);
        assert!((acc_cost(&q2) - 4.0 * acc_cost(&q)).abs() < 1e-9);
    }

    #[test]
    fn smooth_is_additive_over_axes() {
        let z = [0.0; 3];
        let qx = solve_quintic(&z, &z, &z, &[1.0, 0.0, 0.0], &z, &z, 1.5).unwrap();
        let qy = solve_quintic(&z, &z, &z, &[0.0, 2.0, 0.0], &z, &z, 1.5).unwrap();
        let qxy = solve_quintic(&z, &z, &z, &[1.0, 2.0, 0.0], &z, &z, 1.5).unwrap();
        assert!((smooth_cost(&qxy) - smooth_cost(&qx) - smooth_cost(&qy)).abs() < 1e-9);
    }

    #[test]
    fn safety_hinge() {
        let w = PillarWorld {
            pillars: vec![Pillar { x: 0.0, y: 1.3, r: 1.0 }],
            ..PillarWorld::empty()
        };
        // stationary trajectory at the origin: every sample is 0.3 m away
        let z = [0.0; 3];
        let q = solve_quintic(&z, &z, &z, &z, &z, &z, 1.0).unwrap();
        assert!((safety_cost(&q, &w, 0.8, 2) - 0.25).abs() < 1e-12);
        assert_eq!(safety_cost(&q, &PillarWorld::empty(), 0.8, 20), 0.0);
    }

    #[test]
    fn goal_target_projection() {
        let t = goal_target(&[30.0, 40.0, 0.0], 6.0);
        assert!(((t[0] * t[0] + t[1] * t[1]).sqrt() - 6.0).abs() < 1e-12);
        assert_eq!(goal_target(&[1.0, 0.0, 0.0], 6.0), [1.0, 0.0, 0.0]);
        let q = line_x(3.0, 1.0);
        assert!(goal_cost(&q, &[3.0, 0.0, 0.0], 6.0).abs() < 1e-20);
        assert!((goal_cost(&q, &[2.0, 0.0, 0.0], 6.0) - 1.0).abs() < 1e-12);
        assert!((goal_cost(&q, &[0.0, 0.0, 0.0], 6.0) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum() {
        let w = PillarWorld {
            pillars: vec![Pillar { x: 1.5, y: 0.5, r: 0.4 }],
            ..PillarWorld::empty()
        };
        let q = line_x(3.0, 1.5);
        let cw = CostWeights::default();
        let b = structured_cost(&q, &w, &[10.0, 1.0, 0.0], 6.0, &cw);
        let manual = cw.lambda_smooth * b.j_smooth
            + cw.lambda_safe * b.j_safe
            + cw.lambda_goal * b.j_goal
            + cw.lambda_acc * b.j_acc;
        assert!((b.total - manual).abs() < 1e-12);
        let zero = CostWeights {
            lambda_smooth: 0.0,
            lambda_safe: 0.0,
            lambda_goal: 0.0,
            lambda_acc: 0.0,
            ..cw
        };
        assert_eq!(structured_cost(&q, &w, &[10.0, 1.0, 0.0], 6.0, &zero).total, 0.0);
    }

    #[test]
    fn losses() {
        let b = CostBreakdown {
            j_smooth: 0.0,
            j_safe: 0.0,
            j_goal: 0.0,
            j_acc: 0.0,
            total: 2.5,
        };
        assert_eq!(traj_loss(&[b; 15]).unwrap(), 2.5);
        assert!(traj_loss(&[b; 14]).is_err());
        let t = [1.0; 15];
        let mut s = t;
        assert_eq!(score_loss(&s, &t).unwrap(), 0.0);
        s[3] += 0.5;
        assert!((score_loss(&s, &t).unwrap() - 0.125 / 15.0).abs() < 1e-15);
        s[3] = 3.0;
        assert!((score_loss(&s, &t).unwrap() - 1.5 / 15.0).abs() < 1e-15);
        let w = CostWeights::default();
        assert_eq!(total_loss(2.0, 4.0, &w), 4.0);
        assert_eq!(total_loss(0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn weight_validation() {
        assert!(CostWeights::default().validate().is_ok());
        assert!(CostWeights { d_safe: 0.0, ..Default::default() }.validate().is_err());
        assert!(CostWeights { n_samples: 1, ..Default::default() }.validate().is_err());
        assert!(CostWeights { lambda_goal: -1.0, ..Default::default() }.validate().is_err());
    }
}
