#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;

use saga::cost::{safety_cost, structured_cost, CandidateContext, CostWeights};
use saga::geometry::{
    anchor_rotation, decode_terminal, norm3, AnchorLattice, BodyState, NormalizedRefinement, Vec3, NUM_ANCHORS,
    REFINE_DIM,
};
use saga::harness::{oracle_select, select_anchor};
use saga::trajectory::{solve_quintic, QuinticTrajectory};
use saga::world::{render_depth, CameraModel, Pillar, PillarWorld, Pose};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    [lo..hi, lo..hi, lo..hi]
}

fn refinement() -> impl Strategy<Value = NormalizedRefinement> {
    prop::array::uniform9(-1.0f64..1.0).prop_map(NormalizedRefinement)
}

fn trajectory() -> impl Strategy<Value = (Vec3, Vec3, Vec3, Vec3, Vec3, Vec3, f64)> {
    (
        vec3(-6.0, 6.0),
        vec3(-3.0, 3.0),
        vec3(-5.0, 5.0),
        vec3(-6.0, 6.0),
        vec3(-3.0, 3.0),
        vec3(-5.0, 5.0),
        0.5f64..3.0,
    )
}

fn solve(b: &(Vec3, Vec3, Vec3, Vec3, Vec3, Vec3, f64)) -> QuinticTrajectory {
    solve_quintic(&b.0, &b.1, &b.2, &b.3, &b.4, &b.5, b.6).unwrap()
}

fn simpson<F: Fn(f64) -> f64>(f: F, t1: f64, n: usize) -> f64 {
    let h = t1 / n as f64;
    let mut s = f(0.0) + f(t1);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Least-squares degree-5 fit of `ys` at times `ts` on `[0, t1]`, returned
/// as monomial coefficients in `t`. Solved by modified Gram-Schmidt on the
/// Vandermonde matrix of `t / t1`.
fn refit(ts: &[f64], ys: &[f64], t1: f64) -> [f64; 6] {
    let n = ts.len();
    let mut q: Vec<Vec<f64>> = (0..6).map(|k| ts.iter().map(|t| (t / t1).powi(k)).collect()).collect();
    let mut r = [[0.0; 6]; 6];
    for k in 0..6 {
        for j in 0..k {
            let d: f64 = (0..n).map(|i| q[j][i] * q[k][i]).sum();
            r[j][k] = d;
            for i in 0..n {
                q[k][i] -= d * q[j][i];
            }
        }
        let norm = q[k].iter().map(|x| x * x).sum::<f64>().sqrt();
        r[k][k] = norm;
        for x in q[k].iter_mut() {
            *x /= norm;
        }
    }
    let qty: Vec<f64> = (0..6).map(|k| (0..n).map(|i| q[k][i] * ys[i]).sum()).collect();
    let mut b = [0.0; 6];
    for k in (0..6).rev() {
        let s: f64 = (k + 1..6).map(|j| r[k][j] * b[j]).sum();
        b[k] = (qty[k] - s) / r[k][k];
    }
    let mut c = [0.0; 6];
    for k in 0..6 {
        c[k] = b[k] / t1.powi(k as i32);
    }
    c
}

fn world_with(pillars: Vec<Pillar>) -> PillarWorld {
    PillarWorld {
        pillars,
        ..PillarWorld::empty()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decode_keeps_radius(index in 0usize..NUM_ANCHORS, u in refinement()) {
        let lattice = AnchorLattice::default();
        let t = decode_terminal(&lattice, index, &u).unwrap();
        prop_assert!((norm3(&t.p_b) - t.r).abs() <= 1e-12);
        prop_assert!(t.r >= lattice.r_min - 1e-12 && t.r <= lattice.r_max + 1e-12);
    }

    #[test]
    fn refined_direction_stays_in_cone(index in 0usize..NUM_ANCHORS, u in refinement()) {
        let lattice = AnchorLattice::default();
        let t = decode_terminal(&lattice, index, &u).unwrap();
        let yaw = t.p_b[1].atan2(t.p_b[0]);
        let pitch = (t.p_b[2] / t.r).asin();
        prop_assert!(yaw.abs() <= lattice.yaw_span() + lattice.delta_yaw_max + 1e-12);
        prop_assert!(pitch.abs() <= lattice.pitch_span() + lattice.delta_pitch_max + 1e-12);
    }

    #[test]
    fn anchor_rotation_is_proper(alpha in -3.2f64..3.2, beta in -1.5f64..1.5) {
        let r = anchor_rotation(alpha, beta);
        let rtr = r.transpose().mul(&r);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((rtr.0[i][j] - want).abs() <= 1e-12);
            }
        }
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn decode_is_lipschitz_in_refinement(
        index in 0usize..NUM_ANCHORS,
        u in prop::array::uniform9(-0.99f64..0.99),
        k in 0usize..REFINE_DIM,
    ) {
        let lattice = AnchorLattice::default();
        let eps = 1e-6;
        let a = decode_terminal(&lattice, index, &NormalizedRefinement(u)).unwrap();
        let mut v = u;
        v[k] += eps;
        let b = decode_terminal(&lattice, index, &NormalizedRefinement(v)).unwrap();
        let slope = norm3(&[b.p_b[0] - a.p_b[0], b.p_b[1] - a.p_b[1], b.p_b[2] - a.p_b[2]]) / eps;
        let bound = lattice.r_max * (lattice.delta_yaw_max + lattice.delta_pitch_max)
            + (lattice.r_max - lattice.r_min) / 2.0
            + 1.0;
        prop_assert!(slope <= bound, "slope {slope} > {bound}");
    }

    #[test]
    fn quintic_reproduces_boundaries(b in trajectory()) {
        let q = solve(&b);
        let s0 = q.eval(0.0);
        let s1 = q.eval(b.6);
        for k in 0..3 {
            prop_assert!((s0.position[k] - b.0[k]).abs() <= 1e-9);
            prop_assert!((s0.velocity[k] - b.1[k]).abs() <= 1e-9);
            prop_assert!((s0.acceleration[k] - b.2[k]).abs() <= 1e-9);
            prop_assert!((s1.position[k] - b.3[k]).abs() <= 1e-9);
            prop_assert!((s1.velocity[k] - b.4[k]).abs() <= 1e-9);
            prop_assert!((s1.acceleration[k] - b.5[k]).abs() <= 1e-9);
        }
    }

    #[test]
    fn integrals_match_quadrature(b in trajectory()) {
        let q = solve(&b);
        let sq = |v: Vec3| v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let jerk = simpson(|t| sq(q.eval(t).jerk), b.6, 10_000);
        let acc = simpson(|t| sq(q.eval(t).acceleration), b.6, 10_000);
        prop_assert!((q.jerk_integral() - jerk).abs() <= 1e-9 * jerk.max(1e-12));
        prop_assert!((q.acc_integral() - acc).abs() <= 1e-9 * acc.max(1e-12));
    }

    #[test]
    fn sampled_trajectory_refits_to_its_coefficients(b in trajectory(), n in 12usize..80) {
        let q = solve(&b);
        let ts: Vec<f64> = (0..n).map(|i| b.6 * i as f64 / (n - 1) as f64).collect();
        for k in 0..3 {
            let ys: Vec<f64> = ts.iter().map(|&t| q.eval(t).position[k]).collect();
            let c = refit(&ts, &ys, b.6);
            for d in 0..6 {
                let tol = 1e-6 * q.coeffs[k][d].abs().max(1.0);
                prop_assert!((c[d] - q.coeffs[k][d]).abs() <= tol, "axis {k} degree {d}: {} vs {}", c[d], q.coeffs[k][d]);
            }
        }
    }

    #[test]
    fn signed_distance_is_one_lipschitz(seed in 0u64..50, p in vec3(-20.0, 20.0), q in vec3(-20.0, 20.0)) {
        let w = PillarWorld::generate_default(seed, 0.1).unwrap();
        let d = (w.signed_distance(&p) - w.signed_distance(&q)).abs();
        let gap = norm3(&[p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
        prop_assert!(d <= gap + 1e-12);
    }

    #[test]
    fn select_anchor_ignores_monotone_transforms(
        scores in prop::array::uniform15(0.0f64..50.0),
        shift in 0.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        let base = select_anchor(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let affine: Vec<f64> = scores.iter().map(|s| s * scale + shift).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + s).collect();
        let logged: Vec<f64> = scores.iter().map(|s| (1.0 + s).ln()).collect();
        prop_assert_eq!(select_anchor(&shifted), base);
        prop_assert_eq!(select_anchor(&affine), base);
        prop_assert_eq!(select_anchor(&cubed), base);
        prop_assert_eq!(select_anchor(&logged), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn world_text_round_trip(seed in 0u64..10_000, density in prop::sample::select(vec![0.0, 0.05, 0.1, 0.15])) {
        let w = PillarWorld::generate_default(seed, density).unwrap();
        let text = w.to_text();
        let back = PillarWorld::from_text(&text, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &w);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn render_is_deterministic_and_yaw_continuous(
        seed in 0u64..1000,
        x in -17.0f64..10.0,
        y in -5.0f64..5.0,
        yaw in -1.0f64..1.0,
    ) {
        let w = PillarWorld::generate_default(seed, 0.1).unwrap();
        let cam = CameraModel::default();
        let pose = Pose::new([x, y, 1.5], yaw);
        let a = render_depth(&w, &pose, &cam);
        prop_assert_eq!(&a, &render_depth(&w, &pose, &cam));
        let b = render_depth(&w, &Pose::new([x, y, 1.5], yaw + 1e-6), &cam);
        let (h, wd) = (a.height, a.width);
        for r in 1..h - 1 {
            for c in 1..wd - 1 {
                let d = a.at(r, c);
                // silhouette pixels: a neighbour sees a different surface
                let edge = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
                    .iter()
                    .any(|&(i, j)| (a.at(i, j) - d).abs() > 0.05);
                if !edge {
                    prop_assert!((b.at(r, c) - d).abs() < 1e-3, "pixel ({r},{c}) {d} -> {}", b.at(r, c));
                }
            }
        }
    }

    #[test]
    fn cost_terms_nonnegative_and_deterministic(
        seed in 0u64..200,
        index in 0usize..NUM_ANCHORS,
        u in refinement(),
        v in vec3(-2.0, 2.0),
        a in vec3(-3.0, 3.0),
        g in vec3(-30.0, 30.0),
        x in -16.0f64..16.0,
    ) {
        let world = PillarWorld::generate_default(seed, 0.15).unwrap();
        let lattice = AnchorLattice::default();
        let weights = CostWeights::default();
        let ctx = CandidateContext {
            world: &world,
            lattice: &lattice,
            weights: &weights,
            state: BodyState { v_b: v, a_b: a, g_b: g },
            origin: Pose::new([x, 0.0, 1.5], 0.0),
            v_max: 2.0,
        };
        let c = ctx.cost(index, &u).unwrap();
        prop_assert!(c.j_smooth >= 0.0 && c.j_safe >= 0.0 && c.j_goal >= 0.0 && c.j_acc >= 0.0);
        prop_assert!(c.total >= 0.0);
        let again = ctx.cost(index, &u).unwrap();
        prop_assert_eq!(c.total.to_bits(), again.total.to_bits());
    }

    #[test]
    fn safety_cost_shrinks_as_obstacles_recede(
        b in trajectory(),
        px in -3.0f64..3.0,
        py in -3.0f64..3.0,
        r in 0.3f64..0.8,
        shrink in 0.0f64..0.3,
    ) {
        let q = solve(&b);
        let near = world_with(vec![Pillar { x: px, y: py, r }]);
        let far = world_with(vec![Pillar { x: px, y: py, r: r - shrink }]);
        // every sample is at least as far from `far`, so the hinge can only drop
        let a = safety_cost(&q, &near, 1.0, 20);
        let f = safety_cost(&q, &far, 1.0, 20);
        prop_assert!(f <= a + 1e-12, "{f} > {a}");
    }

    #[test]
    fn cost_gradient_matches_central_differences(
        seed in 0u64..100,
        index in 0usize..NUM_ANCHORS,
        u in prop::array::uniform9(-0.9f64..0.9),
        v in vec3(-1.5, 1.5),
        g in vec3(-20.0, 20.0),
    ) {
        let world = PillarWorld::generate_default(seed, 0.1).unwrap();
        let lattice = AnchorLattice::default();
        let weights = CostWeights::default();
        let ctx = CandidateContext {
            world: &world,
            lattice: &lattice,
            weights: &weights,
            state: BodyState { v_b: v, a_b: [0.0; 3], g_b: g },
            origin: Pose::new([-14.0, 0.0, 1.5], 0.0),
            v_max: 2.0,
        };
        let (base, grad) = ctx.cost_with_grad(index, &NormalizedRefinement(u)).unwrap();
        let h = 1e-5;
        for k in 0..REFINE_DIM {
            let mut up = u;
            up[k] += h;
            let mut dn = u;
            dn[k] -= h;
            let fp = ctx.cost(index, &NormalizedRefinement(up)).unwrap().total;
            let fm = ctx.cost(index, &NormalizedRefinement(dn)).unwrap().total;
            let fd = (fp - fm) / (2.0 * h);
            // scale floor: rounding of the total over a 2h step
            let floor = 1e-9 * base.total.max(1.0) / h;
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(floor);
            // a hinge kink inside the stencil is the only admissible mismatch
            let kinked = {
                let mid = ctx.cost(index, &NormalizedRefinement(u)).unwrap().total;
                ((fp - mid) - (mid - fm)).abs() > 1e-3 * (fp - fm).abs().max(1e-9)
            };
            prop_assert!(rel < 1e-4 || kinked, "component {k}: autodiff {} fd {fd}", grad[k]);
        }
    }

    #[test]
    fn oracle_choice_survives_weight_scaling(seed in 0u64..100, k in 0.1f64..50.0, x in -16.0f64..10.0) {
        let world = PillarWorld::generate_default(seed, 0.1).unwrap();
        let lattice = AnchorLattice::default();
        let weights = CostWeights::default();
        let scaled = weights.scaled(k);
        let state = BodyState { v_b: [1.0, 0.0, 0.0], a_b: [0.0; 3], g_b: [18.0 - x, 0.0, 0.0] };
        let origin = Pose::new([x, 0.0, 1.5], 0.0);
        let ctx = |w| CandidateContext { world: &world, lattice: &lattice, weights: w, state, origin, v_max: 2.0 };
        let a = oracle_select(&ctx(&weights)).unwrap();
        let b = oracle_select(&ctx(&scaled)).unwrap();
        if a != b {
            // only a near-tie can flip under rounding
            let u = [NormalizedRefinement::zeros(); NUM_ANCHORS];
            let c = ctx(&weights).all_costs(&u).unwrap();
            prop_assert!((c[a].total - c[b].total).abs() <= 1e-9 * c[a].total.abs().max(1.0));
        }
    }
}

#[test]
fn structured_cost_total_is_weighted_sum() {
    let world = PillarWorld::generate_default(2, 0.1).unwrap();
    let q = solve_quintic(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0; 3], &[3.0, 0.5, 0.2], &[1.0, 0.0, 0.0], &[0.0; 3], 1.5)
        .unwrap()
        .with_origin(Pose::new([-10.0, 0.0, 1.5], 0.0));
    let w = CostWeights::default();
    let c = structured_cost(&q, &world, &[20.0, 0.0, 0.0], 6.0, &w);
    let sum = w.lambda_smooth * c.j_smooth + w.lambda_safe * c.j_safe + w.lambda_goal * c.j_goal + w.lambda_acc * c.j_acc;
    assert!((c.total - sum).abs() <= 1e-12 * sum.max(1.0));
}
