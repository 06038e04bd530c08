use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{compute_metrics, FlightLog, LogSample, Metrics, Piece};
use crate::cost::{CandidateContext, CostWeights};
use crate::error::{Result, SagaError};
use crate::fmt::round_sig9;
use crate::geometry::{AnchorLattice, BodyState, NormalizedRefinement, Rotation3, Vec3, NUM_ANCHORS};
use crate::net::{NetInput, PlannerNet, PlannerOutput};
use crate::trajectory::KinematicSample;
use crate::world::{render_depth, CameraModel, DepthImage, PillarWorld, Pose};

/// Below this speed the camera faces the goal instead of the velocity.
pub const YAW_SPEED_THRESHOLD: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SelectionMode {
    Learned,
    Oracle,
    Random,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Learned => "learned",
            SelectionMode::Oracle => "oracle",
            SelectionMode::Random => "random",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = SagaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(SelectionMode::Learned),
            "oracle" => Ok(SelectionMode::Oracle),
            "random" => Ok(SelectionMode::Random),
            _ => Err(SagaError::config(format!(
                "unknown mode {s:?} (learned, oracle, random)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureCause {
    None,
    Collision,
    Timeout,
    /// Aborted by a numerical or configuration fault.
    Fault,
}

impl FailureCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCause::None => "none",
            FailureCause::Collision => "collision",
            FailureCause::Timeout => "timeout",
            FailureCause::Fault => "fault",
        }
    }
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub v_max: f64,
    pub replan_interval: f64,
    pub control_dt: f64,
    pub goal_tolerance: f64,
    pub vehicle_radius: f64,
    pub timeout: f64,
    pub ppe_enabled: bool,
    pub selection_mode: SelectionMode,
    /// Seed of the random selector.
    pub seed: u64,
    pub lattice: AnchorLattice,
    pub cost: CostWeights,
    pub camera: CameraModel,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            v_max: 2.0,
            replan_interval: 0.1,
            control_dt: 0.02,
            goal_tolerance: 1.5,
            vehicle_radius: 0.3,
            timeout: 120.0,
            ppe_enabled: true,
            selection_mode: SelectionMode::Oracle,
            seed: 0,
            lattice: AnchorLattice::default(),
            cost: CostWeights::default(),
            camera: CameraModel::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.v_max) {
            return Err(SagaError::config(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(pos(self.control_dt) && self.control_dt <= self.replan_interval && self.replan_interval.is_finite()) {
            return Err(SagaError::config("need 0 < control_dt <= replan_interval"));
        }
        if !pos(self.goal_tolerance) || !pos(self.timeout) || !(self.vehicle_radius >= 0.0) {
            return Err(SagaError::config(
                "goal_tolerance and timeout must be positive, vehicle_radius nonnegative",
            ));
        }
        self.cost.validate()
    }

    /// Control steps per replanning slice.
    pub fn steps_per_replan(&self) -> usize {
        ((self.replan_interval / self.control_dt).round() as usize).max(1)
    }

    /// Lattice with terminal velocity scaled to this episode's speed limit.
    pub fn effective_lattice(&self) -> Result<AnchorLattice> {
        let a = self.lattice.a_term_max;
        self.lattice.clone().with_terminal_scales(self.v_max, a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub failure_cause: FailureCause,
    pub metrics: Metrics,
    pub log: FlightLog,
    /// Number of replanning steps taken.
    pub replans: usize,
}

/// Everything the planner saw and chose at one replanning step.
#[derive(Clone, Debug)]
pub struct PlanFrame<'a> {
    pub time: f64,
    pub pose: Pose,
    pub state: BodyState,
    pub depth: Option<&'a DepthImage>,
    pub index: usize,
}

/// Argmin of the scores, lowest index on ties.
pub fn select_anchor(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive true-cost selection with zero refinements.
pub fn oracle_select(ctx: &CandidateContext) -> Result<usize> {
    let u = [NormalizedRefinement::zeros(); NUM_ANCHORS];
    let costs = ctx.all_costs(&u)?;
    let totals: Vec<f64> = costs.iter().map(|c| c.total).collect();
    Ok(select_anchor(&totals))
}

/// Camera heading: velocity azimuth when moving, goal azimuth otherwise.
pub fn camera_yaw(position: &Vec3, velocity: &Vec3, goal: &Vec3) -> f64 {
    let speed = velocity[0].hypot(velocity[1]);
    if speed >= YAW_SPEED_THRESHOLD {
        velocity[1].atan2(velocity[0])
    } else {
        (goal[1] - position[1]).atan2(goal[0] - position[0])
    }
}

/// World-frame motion expressed in the body frame of `pose`.
pub fn body_state(pose: &Pose, velocity: &Vec3, acceleration: &Vec3, goal: &Vec3) -> BodyState {
    let r = Rotation3::about_z(-pose.yaw);
    let g = [
        goal[0] - pose.position[0],
        goal[1] - pose.position[1],
        goal[2] - pose.position[2],
    ];
    BodyState {
        v_b: r.apply(velocity),
        a_b: r.apply(acceleration),
        g_b: r.apply(&g),
    }
}

fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn log_sample(world: &PillarWorld, t: f64, k: &KinematicSample) -> LogSample {
    let mut s = LogSample {
        t,
        position: k.position,
        velocity: k.velocity,
        acceleration: k.acceleration,
        jerk: k.jerk,
        signed_distance: 0.0,
    }
    .rounded();
    s.signed_distance = round_sig9(world.signed_distance(&s.position));
    s
}

/// Flies one receding-horizon episode from `world.start` to `world.goal`.
pub fn run_episode(world: &PillarWorld, net: Option<&PlannerNet>, config: &EpisodeConfig) -> Result<EpisodeResult> {
    run_episode_observed(world, net, config, false, &mut |_| Ok(()))
}

/// [`run_episode`] that reports every replanning step to `observe`; with
/// `render_always` the depth image is rendered even when the selector does
/// not need it.
pub fn run_episode_observed(
    world: &PillarWorld,
    net: Option<&PlannerNet>,
    config: &EpisodeConfig,
    render_always: bool,
    observe: &mut dyn FnMut(&PlanFrame) -> Result<()>,
) -> Result<EpisodeResult> {
    config.validate()?;
    if config.selection_mode == SelectionMode::Learned && net.is_none() {
        return Err(SagaError::config("learned mode needs network weights"));
    }
    if !world.bounds.contains(&world.start) || !world.bounds.contains(&world.goal) {
        return Err(SagaError::config("start and goal must lie inside the world bounds"));
    }
    let lattice = config.effective_lattice()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let steps = config.steps_per_replan();
    let goal = world.goal;

    let mut position = world.start;
    let mut velocity = [0.0; 3];
    let mut acceleration = [0.0; 3];
    let mut log = FlightLog::default();
    let start = KinematicSample {
        t: 0.0,
        position,
        velocity,
        acceleration,
        jerk: [0.0; 3],
    };
    log.samples.push(log_sample(world, 0.0, &start));

    let mut step_count: u64 = 0;
    let mut replans = 0;
    let cause = 'flight: loop {
        if distance(&position, &goal) <= config.goal_tolerance {
            break FailureCause::None;
        }
        if world.collision(&position, config.vehicle_radius) {
            break FailureCause::Collision;
        }
        let now = step_count as f64 * config.control_dt;
        if now > config.timeout {
            break FailureCause::Timeout;
        }
        let yaw = camera_yaw(&position, &velocity, &goal);
        let pose = Pose::new(position, yaw);
        let state = body_state(&pose, &velocity, &acceleration, &goal);
        let ctx = CandidateContext {
            world,
            lattice: &lattice,
            weights: &config.cost,
            state,
            origin: pose,
            v_max: config.v_max,
        };
        let needs_depth = render_always || config.selection_mode == SelectionMode::Learned;
        let depth = needs_depth.then(|| render_depth(world, &pose, &config.camera));
        let (index, u) = match config.selection_mode {
            SelectionMode::Learned => {
                let net = net.expect("checked above");
                let input = NetInput::prepare(depth.as_ref().expect("rendered"), &state, config.v_max)?;
                let out: PlannerOutput = net.forward(&lattice, &input, config.ppe_enabled)?;
                let i = select_anchor(&out.scores);
                (i, out.u_norm[i])
            }
            SelectionMode::Oracle => (oracle_select(&ctx)?, NormalizedRefinement::zeros()),
            SelectionMode::Random => (rng.gen_range(0..NUM_ANCHORS), NormalizedRefinement::zeros()),
        };
        observe(&PlanFrame {
            time: now,
            pose,
            state,
            depth: depth.as_ref(),
            index,
        })?;
        let traj = ctx.trajectory(index, &u)?;
        replans += 1;

        let mut executed = 0.0;
        let mut outcome = None;
        for k in 1..=steps {
            let tl = k as f64 * config.control_dt;
            let s = traj.sample_world(tl)?;
            if !(s.position.iter().chain(&s.velocity).chain(&s.acceleration).all(|x| x.is_finite())) {
                return Err(SagaError::NonFinite(format!("trajectory state at t={now}")));
            }
            step_count += 1;
            executed = tl;
            let t = step_count as f64 * config.control_dt;
            let sample = log_sample(world, t, &s);
            position = s.position;
            velocity = s.velocity;
            acceleration = s.acceleration;
            let sd = sample.signed_distance;
            log.samples.push(sample);
            if sd < config.vehicle_radius {
                outcome = Some(FailureCause::Collision);
            } else if distance(&position, &goal) <= config.goal_tolerance {
                outcome = Some(FailureCause::None);
            } else if t > config.timeout {
                outcome = Some(FailureCause::Timeout);
            }
            if outcome.is_some() {
                break;
            }
        }
        log.pieces.push(Piece {
            traj,
            start: now,
            duration: executed,
        });
        if let Some(c) = outcome {
            break 'flight c;
        }
    };
    let metrics = compute_metrics(&log, world)?;
    Ok(EpisodeResult {
        success: cause == FailureCause::None,
        failure_cause: cause,
        metrics,
        log,
        replans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Pillar;

    #[test]
    fn select_anchor_rules() {
        let mut s = [9.0; NUM_ANCHORS];
        s[0] = 3.0;
        s[1] = 1.0;
        s[2] = 2.0;
        assert_eq!(select_anchor(&s), 1);
        assert_eq!(select_anchor(&[0.5; NUM_ANCHORS]), 0);
        let shifted: Vec<f64> = s.iter().map(|x| x + 4.0).collect();
        assert_eq!(select_anchor(&shifted), 1);
    }

    fn ctx_for<'a>(world: &'a PillarWorld, lattice: &'a AnchorLattice, weights: &'a CostWeights) -> CandidateContext<'a> {
        let pose = Pose::new([0.0, 0.0, 1.5], 0.0);
        CandidateContext {
            world,
            lattice,
            weights,
            state: body_state(&pose, &[0.0; 3], &[0.0; 3], &[15.0, 0.0, 1.5]),
            origin: pose,
            v_max: 2.0,
        }
    }

    #[test]
    fn oracle_goes_straight_in_free_space() {
        let world = PillarWorld::empty();
        let lattice = AnchorLattice::default().with_terminal_scales(2.0, 5.0).unwrap();
        let w = CostWeights::default();
        assert_eq!(oracle_select(&ctx_for(&world, &lattice, &w)).unwrap(), 7);
    }

    #[test]
    fn oracle_avoids_a_pillar_on_the_center_path() {
        let mut world = PillarWorld::empty();
        world.pillars.push(Pillar { x: 3.0, y: 0.0, r: 0.5 });
        let lattice = AnchorLattice::default().with_terminal_scales(2.0, 5.0).unwrap();
        let w = CostWeights::default();
        let i = oracle_select(&ctx_for(&world, &lattice, &w)).unwrap();
        assert_ne!(i, 7);
        // uniform scaling of the term weights keeps the argmin
        for k in [0.1, 3.0, 250.0] {
            let ws = w.scaled(k);
            assert_eq!(oracle_select(&ctx_for(&world, &lattice, &ws)).unwrap(), i);
        }
    }

    #[test]
    fn camera_yaw_switches_at_threshold() {
        let p = [0.0, 0.0, 0.0];
        let g = [0.0, 10.0, 0.0];
        assert!((camera_yaw(&p, &[0.1, 0.0, 0.0], &g) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(camera_yaw(&p, &[1.0, 0.0, 0.0], &g), 0.0);
    }

    #[test]
    fn body_state_rotates_into_heading() {
        let pose = Pose::new([1.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2);
        let s = body_state(&pose, &[0.0, 2.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 5.0, 0.0]);
        assert!((s.v_b[0] - 2.0).abs() < 1e-15 && s.v_b[1].abs() < 1e-15);
        assert!((s.a_b[1] + 1.0).abs() < 1e-15);
        assert!((s.g_b[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_episode_succeeds_immediately() {
        let mut world = PillarWorld::empty();
        world.goal = world.start;
        let r = run_episode(&world, None, &EpisodeConfig::default()).unwrap();
        assert!(r.success);
        assert_eq!(r.metrics.time_consumption, 0.0);
        assert_eq!(r.replans, 0);
    }

    #[test]
    fn learned_mode_requires_weights() {
        let cfg = EpisodeConfig {
            selection_mode: SelectionMode::Learned,
            ..EpisodeConfig::default()
        };
        assert!(matches!(run_episode(&PillarWorld::empty(), None, &cfg), Err(SagaError::Config(_))));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [SelectionMode::Learned, SelectionMode::Oracle, SelectionMode::Random] {
            assert_eq!(m.as_str().parse::<SelectionMode>().unwrap(), m);
        }
        assert!("greedy".parse::<SelectionMode>().is_err());
    }
}
