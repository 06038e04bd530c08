//! The planner network: strided conv encoder, one token per anchor cell,
//! polar positional encoding, one pre-norm self-attention block, goal-aware
//! modulation and the per-token prediction head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SagaError};
use crate::geometry::{AnchorLattice, BodyState, NormalizedRefinement, LATTICE_COLS, LATTICE_ROWS, NUM_ANCHORS, REFINE_DIM};
use crate::nn::{fan_in_uniform, load_weights, read_weights, write_weights, ParamStore, Tape, Tensor, Var, LN_EPS};
use crate::world::DepthImage;

/// Channels produced by the prediction head: nine refinements and a score.
pub const HEAD_CHANNELS: usize = REFINE_DIM + 1;
/// Number of stride-2 convolutions in the encoder.
pub const CONV_LAYERS: usize = 5;
/// Goal vectors longer than this are shortened before entering the network.
pub const GOAL_INPUT_CLIP: f64 = 10.0;
/// Divisor applied to body-frame acceleration at the network input.
pub const ACC_INPUT_SCALE: f64 = 10.0;

const HEADS_KEY: &str = "attn.heads";
const RECTIFIED_INIT_GAIN: f64 = 2.449489742783178; // √6

/// Layer widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Output channels of each conv layer (input has one channel).
    pub channels: [usize; CONV_LAYERS],
    pub hidden: usize,
    pub heads: usize,
    pub mod_hidden: usize,
    pub height: usize,
    pub width: usize,
}

impl NetConfig {
    pub fn standard() -> Self {
        NetConfig {
            channels: [16, 32, 64, 64, 64],
            hidden: 256,
            heads: 4,
            mod_hidden: 128,
            height: 96,
            width: 160,
        }
    }

    /// Shrunken widths used for finite-difference checks.
    pub fn tiny() -> Self {
        NetConfig {
            channels: [2, 2, 2, 2, 4],
            hidden: 16,
            heads: 2,
            mod_hidden: 8,
            height: 96,
            width: 160,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.hidden == 0 || self.mod_hidden == 0 {
            return Err(SagaError::config("layer widths must be positive"));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(SagaError::config(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        let mut h = self.height;
        let mut w = self.width;
        for _ in 0..CONV_LAYERS {
            if h < 2 || w < 2 {
                return Err(SagaError::config("input too small for the encoder"));
            }
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        if (h, w) != (LATTICE_ROWS, LATTICE_COLS) {
            return Err(SagaError::config(format!(
                "input {}×{} encodes to {h}×{w}, not the {LATTICE_ROWS}×{LATTICE_COLS} lattice",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Expected parameter names and shapes in store order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.hidden;
        let mut out = Vec::new();
        let mut cin = 1;
        for (i, &co) in self.channels.iter().enumerate() {
            out.push((format!("backbone.conv{i}.kernel"), vec![co, cin, 3, 3]));
            out.push((format!("backbone.conv{i}.bias"), vec![co]));
            cin = co;
        }
        let affine = |out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
            out.push((format!("{name}.W"), vec![i, o]));
            out.push((format!("{name}.b"), vec![o]));
        };
        let norm = |out: &mut Vec<(String, Vec<usize>)>, name: &str| {
            out.push((format!("{name}.gain"), vec![c]));
            out.push((format!("{name}.bias"), vec![c]));
        };
        affine(&mut out, "proj", cin, c);
        affine(&mut out, "pe", 2, c);
        norm(&mut out, "attn.ln");
        affine(&mut out, "attn.q", c, c);
        // a key bias shifts every logit of a query equally and cancels in the softmax
        out.push(("attn.k.W".to_string(), vec![c, c]));
        affine(&mut out, "attn.v", c, c);
        affine(&mut out, "attn.o", c, c);
        norm(&mut out, "mod.ln");
        affine(&mut out, "mod.mlp0", REFINE_DIM, self.mod_hidden);
        affine(&mut out, "mod.mlp1", self.mod_hidden, 2 * c);
        norm(&mut out, "head.ln");
        affine(&mut out, "head", c, HEAD_CHANNELS);
        out
    }

    /// Recovers widths from a loaded store and checks every shape.
    fn from_store(store: &ParamStore, heads: usize) -> Result<Self> {
        let shape = |name: &str| -> Result<Vec<usize>> {
            store
                .by_name(name)
                .map(|p| p.value.shape().to_vec())
                .ok_or_else(|| SagaError::config(format!("weights lack {name}")))
        };
        let mut channels = [0; CONV_LAYERS];
        for (i, ch) in channels.iter_mut().enumerate() {
            *ch = shape(&format!("backbone.conv{i}.kernel"))?[0];
        }
        let proj = shape("proj.W")?;
        let mod_hidden = shape("mod.mlp0.W")?.get(1).copied().unwrap_or(0);
        let cfg = NetConfig {
            channels,
            hidden: proj.get(1).copied().unwrap_or(0),
            heads,
            mod_hidden,
            ..NetConfig::standard()
        };
        cfg.validate()?;
        let expected = cfg.parameter_shapes();
        if expected.len() != store.len() {
            return Err(SagaError::config(format!(
                "weights hold {} tensors, network needs {}",
                store.len(),
                expected.len()
            )));
        }
        for (name, sh) in expected {
            if shape(&name)? != sh {
                return Err(SagaError::shape("weights", format!("{name}: expected {sh:?}")));
            }
        }
        Ok(cfg)
    }
}

/// Network inputs after scaling: the normalized, lattice-aligned depth map
/// and the scaled 9-vector state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    pub depth: Tensor,
    pub state: [f64; REFINE_DIM],
}

impl NetInput {
    /// Normalizes depth by its max range and rotates the image by 180° so that
    /// encoder cell (row, col) looks along anchor (row, col): anchors run
    /// right-to-left and bottom-to-top while image pixels run the other way.
    pub fn prepare(depth: &DepthImage, state: &BodyState, v_max: f64) -> Result<Self> {
        if !(v_max > 0.0) {
            return Err(SagaError::config("v_max must be positive"));
        }
        if !state.is_finite() {
            return Err(SagaError::NonFinite("body state".into()));
        }
        let (h, w) = (depth.height, depth.width);
        let scale = 1.0 / depth.max_range as f64;
        let mut data = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                data[(h - 1 - r) * w + (w - 1 - c)] = depth.at(r, c) as f64 * scale;
            }
        }
        Ok(NetInput {
            depth: Tensor::new(vec![1, h, w], data)?,
            state: scale_state(state, v_max),
        })
    }
}

/// `[v/v_max, a/10, clip(g, 10)/10]`.
pub fn scale_state(state: &BodyState, v_max: f64) -> [f64; REFINE_DIM] {
    let gn = crate::geometry::norm3(&state.g_b);
    let gk = if gn > GOAL_INPUT_CLIP { GOAL_INPUT_CLIP / gn } else { 1.0 };
    let mut o = [0.0; REFINE_DIM];
    for k in 0..3 {
        o[k] = state.v_b[k] / v_max;
        o[3 + k] = state.a_b[k] / ACC_INPUT_SCALE;
        o[6 + k] = state.g_b[k] * gk / GOAL_INPUT_CLIP;
    }
    o
}

/// Per-anchor normalized refinements and nonnegative scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerOutput {
    pub u_norm: [NormalizedRefinement; NUM_ANCHORS],
    pub scores: [f64; NUM_ANCHORS],
}

impl PlannerOutput {
    /// Head activations as a `10×3×5` map: channels 0..9 refinements, 9 score.
    pub fn to_lattice_layout(&self) -> Tensor {
        let mut data = vec![0.0; HEAD_CHANNELS * NUM_ANCHORS];
        for i in 0..NUM_ANCHORS {
            for k in 0..REFINE_DIM {
                data[k * NUM_ANCHORS + i] = self.u_norm[i].0[k];
            }
            data[REFINE_DIM * NUM_ANCHORS + i] = self.scores[i];
        }
        Tensor::new(vec![HEAD_CHANNELS, LATTICE_ROWS, LATTICE_COLS], data).expect("fixed layout")
    }

    pub fn max_abs_diff(&self, other: &PlannerOutput) -> f64 {
        let mut m = 0.0f64;
        for i in 0..NUM_ANCHORS {
            m = m.max((self.scores[i] - other.scores[i]).abs());
            for k in 0..REFINE_DIM {
                m = m.max((self.u_norm[i].0[k] - other.u_norm[i].0[k]).abs());
            }
        }
        m
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `15×9` tanh refinements.
    pub u_norm: Var,
    /// `15×1` softplus scores.
    pub scores: Var,
}

/// Parameters plus the widths needed to interpret them.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerNet {
    pub config: NetConfig,
    pub params: ParamStore,
}

impl PlannerNet {
    /// Fan-in uniform init for conv and affine maps, unit gains, zero
    /// positional encoding. Maps feeding a leaky rectifier use the wider
    /// `±√(6/fan_in)` range so the encoder keeps its signal scale; all others
    /// and all biases use `±1/√fan_in`.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut fan_in = 1;
        for (name, shape) in config.parameter_shapes() {
            let t = if name.starts_with("pe.") {
                Tensor::zeros(&shape)
            } else if name.ends_with(".gain") {
                Tensor::filled(&shape, 1.0)
            } else if name.ends_with(".bias") && name.contains("ln") {
                Tensor::zeros(&shape)
            } else {
                let mut gain = 1.0;
                if name.ends_with(".kernel") {
                    fan_in = shape[1] * shape[2] * shape[3];
                    gain = RECTIFIED_INIT_GAIN;
                } else if name.ends_with(".W") {
                    fan_in = shape[0];
                    if name == "mod.mlp0.W" {
                        gain = RECTIFIED_INIT_GAIN;
                    }
                }
                fan_in_uniform(&mut rng, &shape, fan_in, gain)
            };
            params.add(&name, t)?;
        }
        Ok(PlannerNet { config, params })
    }

    /// Every parameter zero except unit layer-norm gains.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            let v = if name.ends_with(".gain") { 1.0 } else { 0.0 };
            params.add(&name, Tensor::filled(&shape, v))?;
        }
        Ok(PlannerNet { config, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut store = self.params.clone();
        store.add(HEADS_KEY, Tensor::scalar(self.config.heads as f64))?;
        write_weights(&store)
    }

    pub fn from_store(mut store: ParamStore, origin: &Path) -> Result<Self> {
        let heads = store
            .by_name(HEADS_KEY)
            .and_then(|p| p.value.item())
            .ok_or_else(|| SagaError::format(origin, format!("missing {HEADS_KEY}")))?;
        if !(heads >= 1.0 && heads.fract() == 0.0) {
            return Err(SagaError::format(origin, format!("bad head count {heads}")));
        }
        let mut clean = ParamStore::new();
        for p in store.iter_mut() {
            if p.name != HEADS_KEY {
                clean.add(&p.name, std::mem::replace(&mut p.value, Tensor::zeros(&[0])))?;
            }
        }
        let config = NetConfig::from_store(&clean, heads as usize)
            .map_err(|e| SagaError::format(origin, e.to_string()))?;
        Ok(PlannerNet { config, params: clean })
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        Self::from_store(read_weights(bytes, origin)?, origin)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| SagaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(load_weights(path)?, path)
    }

    /// `name<TAB>shape` per parameter, then the total scalar count.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for p in self.params.iter() {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{}\t{}\n", p.name, dims.join("x")));
        }
        s.push_str(&format!("{HEADS_KEY}\t{}\n", self.config.heads));
        s.push_str(&format!("# total {}\n", self.params.numel()));
        s
    }

    /// Records the full forward pass on `tape` (which must borrow
    /// `self.params`). `cell_order`, if given, reorders encoder cells before
    /// tokenization: token `j` is taken from cell `cell_order[j]`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        lattice: &AnchorLattice,
        input: &NetInput,
        ppe: bool,
        cell_order: Option<&[usize; NUM_ANCHORS]>,
    ) -> Result<ForwardVars> {
        let features = encode_depth(tape, &self.config, &input.depth)?;
        let mut tokens = tokenize(tape, features)?;
        if let Some(order) = cell_order {
            tokens = permute_rows(tape, tokens, order)?;
        }
        if ppe {
            let e = polar_encode(tape, lattice)?;
            tokens = tape.add(tokens, e)?;
        }
        let z1 = attention_block(tape, tokens, self.config.heads)?;
        let z2 = goal_modulation(tape, z1, &input.state)?;
        prediction_head(tape, z2)
    }

    pub fn forward(&self, lattice: &AnchorLattice, input: &NetInput, ppe: bool) -> Result<PlannerOutput> {
        self.forward_permuted(lattice, input, ppe, None)
    }

    pub fn forward_permuted(
        &self,
        lattice: &AnchorLattice,
        input: &NetInput,
        ppe: bool,
        cell_order: Option<&[usize; NUM_ANCHORS]>,
    ) -> Result<PlannerOutput> {
        let mut tape = Tape::new(&self.params);
        let vars = self.forward_tape(&mut tape, lattice, input, ppe, cell_order)?;
        read_output(&tape, vars)
    }

    /// Largest output change when encoder cells are reordered by `order`,
    /// after undoing the reordering on the output rows. Zero (to rounding)
    /// means the network cannot tell anchors apart except through content.
    pub fn permutation_sensitivity(
        &self,
        lattice: &AnchorLattice,
        input: &NetInput,
        ppe: bool,
        order: &[usize; NUM_ANCHORS],
    ) -> Result<f64> {
        let base = self.forward(lattice, input, ppe)?;
        let perm = self.forward_permuted(lattice, input, ppe, Some(order))?;
        let mut m = 0.0f64;
        for j in 0..NUM_ANCHORS {
            let i = order[j];
            m = m.max((perm.scores[j] - base.scores[i]).abs());
            for k in 0..REFINE_DIM {
                m = m.max((perm.u_norm[j].0[k] - base.u_norm[i].0[k]).abs());
            }
        }
        Ok(m)
    }
}

/// Reads refinements and scores off a finished forward pass.
pub fn read_output(tape: &Tape, vars: ForwardVars) -> Result<PlannerOutput> {
    let u = tape.value(vars.u_norm).data();
    let s = tape.value(vars.scores).data();
    let mut out = PlannerOutput {
        u_norm: [NormalizedRefinement::zeros(); NUM_ANCHORS],
        scores: [0.0; NUM_ANCHORS],
    };
    for i in 0..NUM_ANCHORS {
        out.u_norm[i].0.copy_from_slice(&u[i * REFINE_DIM..(i + 1) * REFINE_DIM]);
        out.scores[i] = s[i];
    }
    if !u.iter().all(|x| x.abs() <= 1.0) || !s.iter().all(|x| *x >= 0.0) {
        return Err(SagaError::NonFinite("planner output left its range".into()));
    }
    Ok(out)
}

/// Five stride-2 3×3 convolutions with leaky rectifiers: `1×H×W → C×3×5`.
pub fn encode_depth(tape: &mut Tape, config: &NetConfig, depth: &Tensor) -> Result<Var> {
    if depth.shape() != [1, config.height, config.width] {
        return Err(SagaError::shape(
            "encode_depth",
            format!("expected 1×{}×{}, got {:?}", config.height, config.width, depth.shape()),
        ));
    }
    let mut x = tape.constant(depth.clone())?;
    for i in 0..CONV_LAYERS {
        let k = tape.param_named(&format!("backbone.conv{i}.kernel"))?;
        let b = tape.param_named(&format!("backbone.conv{i}.bias"))?;
        x = tape.conv2d(x, k, b, 2, 1)?;
        x = tape.leaky_relu(x)?;
    }
    Ok(x)
}

/// Per-cell projection to the hidden width, one token per cell, row-major.
pub fn tokenize(tape: &mut Tape, features: Var) -> Result<Var> {
    let t = tape.map_to_tokens(features)?;
    let w = tape.param_named("proj.W")?;
    let b = tape.param_named("proj.b")?;
    tape.linear(t, w, b)
}

/// Affine embedding of each anchor's nominal (yaw, pitch).
pub fn polar_encode(tape: &mut Tape, lattice: &AnchorLattice) -> Result<Var> {
    let mut a = Vec::with_capacity(2 * NUM_ANCHORS);
    for (yaw, pitch) in lattice.anchors() {
        a.push(yaw);
        a.push(pitch);
    }
    let a = tape.constant(Tensor::new(vec![NUM_ANCHORS, 2], a)?)?;
    let w = tape.param_named("pe.W")?;
    let b = tape.param_named("pe.b")?;
    tape.linear(a, w, b)
}

/// `z + MHA(LN(z))` with query/key/value/output projections.
pub fn attention_block(tape: &mut Tape, z: Var, heads: usize) -> Result<Var> {
    let g = tape.param_named("attn.ln.gain")?;
    let b = tape.param_named("attn.ln.bias")?;
    let n = tape.layer_norm(z, g, b, LN_EPS)?;
    let proj = |tape: &mut Tape, name: &str, x: Var| -> Result<Var> {
        let w = tape.param_named(&format!("attn.{name}.W"))?;
        let b = tape.param_named(&format!("attn.{name}.b"))?;
        tape.linear(x, w, b)
    };
    let q = proj(tape, "q", n)?;
    let kw = tape.param_named("attn.k.W")?;
    let k = tape.matmul(n, kw)?;
    let v = proj(tape, "v", n)?;
    let a = tape.attention(q, k, v, heads)?;
    let o = proj(tape, "o", a)?;
    tape.add(z, o)
}

/// `LN(z) ⊙ (1 + tanh γ) + β` with `[γ, β]` from a two-layer MLP on the state.
pub fn goal_modulation(tape: &mut Tape, z: Var, state: &[f64; REFINE_DIM]) -> Result<Var> {
    let c = tape.value(z).dims2("goal_modulation")?.1;
    let o = tape.constant(Tensor::new(vec![1, REFINE_DIM], state.to_vec())?)?;
    let w0 = tape.param_named("mod.mlp0.W")?;
    let b0 = tape.param_named("mod.mlp0.b")?;
    let h = tape.linear(o, w0, b0)?;
    let h = tape.leaky_relu(h)?;
    let w1 = tape.param_named("mod.mlp1.W")?;
    let b1 = tape.param_named("mod.mlp1.b")?;
    let gb = tape.linear(h, w1, b1)?;
    let gamma = tape.slice_cols(gb, 0, c)?;
    let beta = tape.slice_cols(gb, c, c)?;
    let g = tape.param_named("mod.ln.gain")?;
    let b = tape.param_named("mod.ln.bias")?;
    let n = tape.layer_norm(z, g, b, LN_EPS)?;
    tape.modulate(n, gamma, beta)
}

/// Layer norm, per-token affine to 10 channels, tanh on nine and softplus on
/// the last.
pub fn prediction_head(tape: &mut Tape, z: Var) -> Result<ForwardVars> {
    let g = tape.param_named("head.ln.gain")?;
    let b = tape.param_named("head.ln.bias")?;
    let n = tape.layer_norm(z, g, b, LN_EPS)?;
    let w = tape.param_named("head.W")?;
    let b = tape.param_named("head.b")?;
    let y = tape.linear(n, w, b)?;
    let u = tape.slice_cols(y, 0, REFINE_DIM)?;
    let u_norm = tape.tanh(u)?;
    let s = tape.slice_cols(y, REFINE_DIM, 1)?;
    let scores = tape.softplus(s)?;
    Ok(ForwardVars { u_norm, scores })
}

/// Row `j` of the result is row `order[j]` of `x`, as a linear map so that
/// gradients flow.
fn permute_rows(tape: &mut Tape, x: Var, order: &[usize; NUM_ANCHORS]) -> Result<Var> {
    let mut seen = [false; NUM_ANCHORS];
    for &i in order {
        if i >= NUM_ANCHORS || std::mem::replace(&mut seen[i], true) {
            return Err(SagaError::config(format!("{order:?} is not a permutation")));
        }
    }
    let n = tape.value(x).dims2("permute_rows")?.1;
    let mut data = Vec::with_capacity(NUM_ANCHORS * n);
    for &i in order {
        data.extend_from_slice(tape.value(x).row(i));
    }
    // Rebuild through a constant: the permutation probe is inference-only.
    tape.constant(Tensor::new(vec![NUM_ANCHORS, n], data)?)
}
