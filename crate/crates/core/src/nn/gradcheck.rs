use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Result, SagaError};

/// Analytic and central-difference derivative of one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordinateCheck {
    /// `|a - n| / max(|a|, |n|, 1e-8)`.
    pub fn rel_error(&self) -> f64 {
        let (a, n) = (self.analytic, self.numeric);
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn from_coordinates(coords: &[CoordinateCheck]) -> Self {
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            worst_values: (0.0, 0.0),
            coordinates: coords.len(),
        };
        for c in coords {
            let rel = c.rel_error();
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((c.name.clone(), c.index));
                report.worst_values = (c.analytic, c.numeric);
            }
        }
        report
    }
}

fn eval<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = build(&mut tape)?;
    tape.value(loss)
        .item()
        .ok_or_else(|| SagaError::shape("grad_check", "loss must be scalar"))
}

/// Reverse-mode and central-difference derivatives of the scalar built by
/// `build`, for every coordinate of every parameter in `store`.
///
/// `build` must be deterministic; a builder that draws fresh randomness per
/// call makes the numeric side meaningless.
pub fn grad_check_coordinates<F>(store: &ParamStore, h: f64, build: F) -> Result<Vec<CoordinateCheck>>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.numel());
    for pi in 0..store.len() {
        let id = ParamId(pi);
        let analytic = grads.get(id);
        for j in 0..store.get(id).value.len() {
            let x0 = store.get(id).value.data()[j];
            probe.get_mut(id).value.data_mut()[j] = x0 + h;
            let fp = eval(&probe, &build)?;
            probe.get_mut(id).value.data_mut()[j] = x0 - h;
            let fm = eval(&probe, &build)?;
            probe.get_mut(id).value.data_mut()[j] = x0;
            out.push(CoordinateCheck {
                name: store.get(id).name.clone(),
                index: j,
                analytic: analytic.map_or(0.0, |g| g.data()[j]),
                numeric: (fp - fm) / (2.0 * h),
            });
        }
    }
    Ok(out)
}

/// Maximum relative error of [`grad_check_coordinates`].
pub fn grad_check<F>(store: &ParamStore, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    Ok(GradCheckReport::from_coordinates(&grad_check_coordinates(store, h, build)?))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

/// Values bounded away from zero so leaky kinks are never crossed.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape, 0.1, 1.5);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn store(entries: Vec<(&str, Tensor)>) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.add(n, t)?;
    }
    Ok(s)
}

/// Checks `build` after reducing its output to a scalar with fixed random
/// weights, so every output coordinate contributes with a distinct factor.
fn check<F>(name: &'static str, store: &ParamStore, seed: u64, h: f64, build: F) -> Result<(&'static str, GradCheckReport)>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let report = grad_check(store, h, |t| {
        let y = build(t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let shape = t.value(y).shape().to_vec();
        let w = t.constant(random(&mut rng, &shape, -1.0, 1.0))?;
        let p = t.mul(y, w)?;
        t.sum(p)
    })?;
    Ok((name, report))
}

/// Finite-difference check of every tape primitive on random inputs drawn
/// from `seed`, one report per primitive.
pub fn primitive_suite(seed: u64, h: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let s = store(vec![
        ("x", random(&mut rng, &[3, 4], -1.0, 1.0)),
        ("W", random(&mut rng, &[4, 5], -1.0, 1.0)),
        ("b", random(&mut rng, &[5], -1.0, 1.0)),
    ])?;
    out.push(check("linear", &s, seed, h, |t| {
        let (x, w, b) = (t.param_named("x")?, t.param_named("W")?, t.param_named("b")?);
        t.linear(x, w, b)
    })?);

    let s = store(vec![
        ("x", random(&mut rng, &[2, 7, 6], -1.0, 1.0)),
        ("k", random(&mut rng, &[3, 2, 3, 3], -1.0, 1.0)),
        ("b", random(&mut rng, &[3], -1.0, 1.0)),
    ])?;
    out.push(check("conv2d", &s, seed, h, |t| {
        let (x, k, b) = (t.param_named("x")?, t.param_named("k")?, t.param_named("b")?);
        t.conv2d(x, k, b, 2, 1)
    })?);

    let s = store(vec![("x", off_zero(&mut rng, &[4, 3]))])?;
    out.push(check("leaky_relu", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.leaky_relu(x)
    })?);

    let s = store(vec![("x", random(&mut rng, &[4, 3], -3.0, 3.0))])?;
    out.push(check("tanh", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.tanh(x)
    })?);
    out.push(check("softplus", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.softplus(x)
    })?);
    out.push(check("scale", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.scale(x, -1.7)
    })?);
    out.push(check("reshape", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.reshape(x, &[2, 6])
    })?);

    let s = store(vec![
        ("a", random(&mut rng, &[3, 3], -2.0, 2.0)),
        ("b", random(&mut rng, &[3, 3], -2.0, 2.0)),
    ])?;
    out.push(check("add", &s, seed, h, |t| {
        let (a, b) = (t.param_named("a")?, t.param_named("b")?);
        t.add(a, b)
    })?);
    out.push(check("mul", &s, seed, h, |t| {
        let (a, b) = (t.param_named("a")?, t.param_named("b")?);
        t.mul(a, b)
    })?);

    let s = store(vec![
        ("x", random(&mut rng, &[3, 6], -2.0, 2.0)),
        ("g", random(&mut rng, &[6], 0.5, 1.5)),
        ("b", random(&mut rng, &[6], -0.5, 0.5)),
    ])?;
    out.push(check("layer_norm", &s, seed, h, |t| {
        let (x, g, b) = (t.param_named("x")?, t.param_named("g")?, t.param_named("b")?);
        t.layer_norm(x, g, b, 1e-5)
    })?);

    let s = store(vec![
        ("q", random(&mut rng, &[5, 4], -1.0, 1.0)),
        ("k", random(&mut rng, &[5, 4], -1.0, 1.0)),
        ("v", random(&mut rng, &[5, 4], -1.0, 1.0)),
    ])?;
    out.push(check("attention", &s, seed, h, |t| {
        let (q, k, v) = (t.param_named("q")?, t.param_named("k")?, t.param_named("v")?);
        t.attention(q, k, v, 2)
    })?);

    let s = store(vec![("x", random(&mut rng, &[3, 2, 4], -1.0, 1.0))])?;
    out.push(check("map_to_tokens", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.map_to_tokens(x)
    })?);

    let s = store(vec![("x", random(&mut rng, &[3, 6], -1.0, 1.0))])?;
    out.push(check("slice_cols", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.slice_cols(x, 2, 3)
    })?);

    let s = store(vec![
        ("x", random(&mut rng, &[4, 3], -1.0, 1.0)),
        ("g", random(&mut rng, &[1, 3], -1.0, 1.0)),
        ("b", random(&mut rng, &[1, 3], -1.0, 1.0)),
    ])?;
    out.push(check("modulate", &s, seed, h, |t| {
        let (x, g, b) = (t.param_named("x")?, t.param_named("g")?, t.param_named("b")?);
        t.modulate(x, g, b)
    })?);

    // residuals kept away from the |d| = 1 switch
    let target: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = Tensor::zeros(&[6]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        let d = if i % 2 == 0 { rng.gen_range(0.05..0.8) } else { rng.gen_range(1.2..3.0) };
        *v = target[i] + if rng.gen_bool(0.5) { d } else { -d };
    }
    let s = store(vec![("x", x)])?;
    out.push(check("smooth_l1", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.smooth_l1(x, &target)
    })?);

    let s = store(vec![("x", random(&mut rng, &[2, 5], -1.0, 1.0))])?;
    out.push(check("sum", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.sum(x)
    })?);
    out.push(check("mean", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        t.mean(x)
    })?);
    // y_i = Σ_k sin(x_ik), supplied with its Jacobian
    out.push(check("row_function", &s, seed, h, |t| {
        let x = t.param_named("x")?;
        let xv = t.value(x).clone();
        let values = (0..2).map(|r| xv.row(r).iter().map(|v| v.sin()).sum()).collect();
        let jac = xv.data().iter().map(|v| v.cos()).collect();
        t.row_function(x, values, jac)
    })?);
    Ok(out)
}
