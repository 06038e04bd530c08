//! Motion-anchor lattice, body-frame state and the analytic decode from
//! normalized refinements to body-frame terminal states.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, SagaError};
use crate::real::Real;

pub const LATTICE_ROWS: usize = 3;
pub const LATTICE_COLS: usize = 5;
/// Number of anchors (rows × cols).
pub const NUM_ANCHORS: usize = LATTICE_ROWS * LATTICE_COLS;
/// Width of the per-anchor refinement vector.
pub const REFINE_DIM: usize = 9;
/// Default terminal-acceleration scale, m/s².
pub const DEFAULT_A_TERM_MAX: f64 = 5.0;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of refinement components clamped into [-1, 1] since process start.
pub fn clamp_event_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

pub type Vec3<S = f64> = [S; 3];

/// Fixed 3×5 lattice of (yaw, pitch) anchors with refinement ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorLattice {
    pub yaw_angles: [f64; LATTICE_COLS],
    pub pitch_angles: [f64; LATTICE_ROWS],
    pub delta_yaw_max: f64,
    pub delta_pitch_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub v_term_max: f64,
    pub a_term_max: f64,
}

impl AnchorLattice {
    /// Evenly spaced anchors on `[-span, +span]`, refinement half-ranges set
    /// to half the grid spacing. Terminal scales default to 2 m/s and 5 m/s².
    pub fn build(yaw_span: f64, pitch_span: f64, r_min: f64, r_max: f64) -> Result<Self> {
        let finite = [yaw_span, pitch_span, r_min, r_max]
            .iter()
            .all(|x| x.is_finite());
        if !finite || yaw_span <= 0.0 || pitch_span <= 0.0 {
            return Err(SagaError::config(format!(
                "lattice spans must be positive (yaw {yaw_span}, pitch {pitch_span})"
            )));
        }
        if !(r_min > 0.0 && r_min < r_max) {
            return Err(SagaError::config(format!(
                "radial range must satisfy 0 < r_min < r_max (got {r_min}, {r_max})"
            )));
        }
        let yaw_step = 2.0 * yaw_span / (LATTICE_COLS - 1) as f64;
        let pitch_step = 2.0 * pitch_span / (LATTICE_ROWS - 1) as f64;
        let mut yaw_angles = [0.0; LATTICE_COLS];
        for (c, y) in yaw_angles.iter_mut().enumerate() {
            *y = -yaw_span + yaw_step * c as f64;
        }
        let mut pitch_angles = [0.0; LATTICE_ROWS];
        for (r, p) in pitch_angles.iter_mut().enumerate() {
            *p = -pitch_span + pitch_step * r as f64;
        }
        Ok(AnchorLattice {
            yaw_angles,
            pitch_angles,
            delta_yaw_max: 0.5 * yaw_step,
            delta_pitch_max: 0.5 * pitch_step,
            r_min,
            r_max,
            v_term_max: 2.0,
            a_term_max: DEFAULT_A_TERM_MAX,
        })
    }

    pub fn with_terminal_scales(mut self, v_term_max: f64, a_term_max: f64) -> Result<Self> {
        if !(v_term_max > 0.0 && a_term_max >= 0.0) {
            return Err(SagaError::config("terminal scales must be positive"));
        }
        self.v_term_max = v_term_max;
        self.a_term_max = a_term_max;
        Ok(self)
    }

    pub fn yaw_span(&self) -> f64 {
        self.yaw_angles[LATTICE_COLS - 1]
    }

    pub fn pitch_span(&self) -> f64 {
        self.pitch_angles[LATTICE_ROWS - 1]
    }

    /// Row-major anchor index: `row * 5 + col`.
    pub fn index(row: usize, col: usize) -> usize {
        row * LATTICE_COLS + col
    }

    /// (row, col) of an anchor index.
    pub fn cell(index: usize) -> (usize, usize) {
        (index / LATTICE_COLS, index % LATTICE_COLS)
    }

    /// Nominal (yaw, pitch) of anchor `index`.
    pub fn anchor(&self, index: usize) -> Result<(f64, f64)> {
        if index >= NUM_ANCHORS {
            return Err(SagaError::OutOfRange {
                what: "anchor",
                index,
                len: NUM_ANCHORS,
            });
        }
        let (row, col) = Self::cell(index);
        Ok((self.yaw_angles[col], self.pitch_angles[row]))
    }

    /// All anchors as (yaw, pitch) pairs in index order.
    pub fn anchors(&self) -> [(f64, f64); NUM_ANCHORS] {
        let mut out = [(0.0, 0.0); NUM_ANCHORS];
        for (i, a) in out.iter_mut().enumerate() {
            let (row, col) = Self::cell(i);
            *a = (self.yaw_angles[col], self.pitch_angles[row]);
        }
        out
    }
}

impl Default for AnchorLattice {
    fn default() -> Self {
        AnchorLattice::build(40f64.to_radians(), 15f64.to_radians(), 1.0, 6.0)
            .expect("default lattice is valid")
    }
}

/// Body-frame motion state: velocity, acceleration and goal vector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyState {
    pub v_b: Vec3,
    pub a_b: Vec3,
    pub g_b: Vec3,
}

impl BodyState {
    /// `[v_b, a_b, g_b]` concatenated.
    pub fn to_vector(&self) -> [f64; 9] {
        let mut o = [0.0; 9];
        o[..3].copy_from_slice(&self.v_b);
        o[3..6].copy_from_slice(&self.a_b);
        o[6..].copy_from_slice(&self.g_b);
        o
    }

    pub fn from_vector(o: &[f64; 9]) -> Self {
        BodyState {
            v_b: [o[0], o[1], o[2]],
            a_b: [o[3], o[4], o[5]],
            g_b: [o[6], o[7], o[8]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Row-major 3×3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3<S = f64>(pub [[S; 3]; 3]);

impl<S: Real> Rotation3<S> {
    pub fn apply(&self, v: &Vec3<S>) -> Vec3<S> {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

impl Rotation3<f64> {
    pub fn identity() -> Self {
        Rotation3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Rotation3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = (0..3).map(|k| self.0[r][k] * other.0[k][c]).sum();
            }
        }
        Rotation3(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Rotation about +z by `yaw`.
    pub fn about_z(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }
}

/// `Rz(alpha) · Ry(-beta)`: maps the primitive x-axis onto the anchor
/// direction `[cosβ cosα, cosβ sinα, sinβ]`.
pub fn anchor_rotation<S: Real>(alpha: S, beta: S) -> Rotation3<S> {
    let (sa, ca) = (alpha.sin(), alpha.cos());
    let (sb, cb) = (beta.sin(), beta.cos());
    let z = S::zero();
    Rotation3([
        [ca * cb, -sa, -(ca * sb)],
        [sa * cb, ca, -(sa * sb)],
        [sb, z, cb],
    ])
}

/// Body-frame terminal position, velocity and acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerminalState<S = f64> {
    pub p_b: Vec3<S>,
    pub v_b: Vec3<S>,
    pub a_b: Vec3<S>,
    /// Radial extent `‖p_b‖`.
    pub r: S,
}

/// Nine normalized refinement components, nominally in [-1, 1]:
/// `(δα, δβ, r, v_p[3], a_p[3])`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedRefinement<S = f64>(pub [S; REFINE_DIM]);

impl NormalizedRefinement<f64> {
    pub fn zeros() -> Self {
        NormalizedRefinement([0.0; REFINE_DIM])
    }
}

/// Decodes anchor `index` with refinement `u` into a body-frame terminal state.
pub fn decode_terminal<S: Real>(
    lattice: &AnchorLattice,
    index: usize,
    u: &NormalizedRefinement<S>,
) -> Result<TerminalState<S>> {
    let (alpha0, beta0) = lattice.anchor(index)?;
    let mut c = u.0;
    for x in c.iter_mut() {
        let v = x.value();
        if !(-1.0..=1.0).contains(&v) {
            CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
            log::warn!("refinement component {v} clamped to [-1, 1]");
            *x = x.clamp_value(-1.0, 1.0);
        }
    }
    let alpha = c[0] * lattice.delta_yaw_max + alpha0;
    let beta = c[1] * lattice.delta_pitch_max + beta0;
    let r = (c[2] + 1.0) * (0.5 * (lattice.r_max - lattice.r_min)) + lattice.r_min;
    let (sa, ca) = (alpha.sin(), alpha.cos());
    let (sb, cb) = (beta.sin(), beta.cos());
    let p_b = [r * cb * ca, r * cb * sa, r * sb];
    let rot = anchor_rotation(alpha, beta);
    let v_p = [
        c[3] * lattice.v_term_max,
        c[4] * lattice.v_term_max,
        c[5] * lattice.v_term_max,
    ];
    let a_p = [
        c[6] * lattice.a_term_max,
        c[7] * lattice.a_term_max,
        c[8] * lattice.a_term_max,
    ];
    Ok(TerminalState {
        p_b,
        v_b: rot.apply(&v_p),
        a_b: rot.apply(&a_p),
        r,
    })
}

pub fn norm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
