//! End-to-end finite-difference check of the training loss on the shrunken
//! network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::record_sample_loss;
use crate::cost::{CandidateContext, CostWeights};
use crate::error::Result;
use crate::geometry::{AnchorLattice, BodyState};
use crate::net::{NetConfig, NetInput, PlannerNet, CONV_LAYERS};
use crate::nn::{grad_check_coordinates, CoordinateCheck, GradCheckReport, Tape, Tensor};
use crate::world::{render_depth, CameraModel, PillarWorld, Pose};

/// Network seed of the reference end-to-end check.
pub const TINY_CHECK_SEED: u64 = 3;

/// Safety weight of the check scene.
pub const CHECK_LAMBDA_SAFE: f64 = 10.0;

/// Smallest pre-activation allowed after the kink shift.
const KINK_MARGIN: f64 = 0.05;

/// One fixed training frame: world, pose and motion state.
pub struct CheckScene {
    pub world: PillarWorld,
    pub pose: Pose,
    pub state: BodyState,
    pub lattice: AnchorLattice,
    pub weights: CostWeights,
    pub v_max: f64,
}

impl CheckScene {
    /// Mid-flight frame in a medium-density world with pillars in view.
    pub fn standard() -> Result<Self> {
        Ok(CheckScene {
            world: PillarWorld::generate_default(3, 0.1)?,
            pose: Pose::new([-15.0, 0.5, 1.5], 0.1),
            state: BodyState {
                v_b: [1.2, 0.1, 0.0],
                a_b: [0.3, -0.2, 0.05],
                g_b: [33.0, -0.5, 0.0],
            },
            lattice: AnchorLattice::default(),
            // light safety weight keeps the loss near 30, where the
            // finite-difference rounding floor is ~1e-9
            weights: CostWeights {
                lambda_safe: CHECK_LAMBDA_SAFE,
                ..CostWeights::default()
            },
            v_max: 2.0,
        })
    }

    pub fn context(&self) -> CandidateContext<'_> {
        CandidateContext {
            world: &self.world,
            lattice: &self.lattice,
            weights: &self.weights,
            state: self.state,
            origin: self.pose,
            v_max: self.v_max,
        }
    }

    pub fn input(&self) -> Result<NetInput> {
        let depth = render_depth(&self.world, &self.pose, &CameraModel::default());
        NetInput::prepare(&depth, &self.state, self.v_max)
    }
}

/// Raises rectifier biases until every pre-activation on `input` is at least
/// [`KINK_MARGIN`], so no finite-difference step crosses a rectifier kink.
pub fn shift_off_kinks(net: &mut PlannerNet, input: &NetInput) -> Result<()> {
    for layer in 0..=CONV_LAYERS {
        let (bias_name, mins) = {
            let mut tape = Tape::new(&net.params);
            let pre = if layer < CONV_LAYERS {
                let mut x = tape.constant(input.depth.clone())?;
                for i in 0..=layer {
                    if i > 0 {
                        x = tape.leaky_relu(x)?;
                    }
                    let k = tape.param_named(&format!("backbone.conv{i}.kernel"))?;
                    let b = tape.param_named(&format!("backbone.conv{i}.bias"))?;
                    x = tape.conv2d(x, k, b, 2, 1)?;
                }
                x
            } else {
                let o = tape.constant(Tensor::new(vec![1, 9], input.state.to_vec())?)?;
                let w = tape.param_named("mod.mlp0.W")?;
                let b = tape.param_named("mod.mlp0.b")?;
                tape.linear(o, w, b)?
            };
            let v = tape.value(pre);
            let channels = v.shape()[if layer < CONV_LAYERS { 0 } else { 1 }];
            let per = v.len() / channels;
            let mins: Vec<f64> = (0..channels)
                .map(|c| {
                    if layer < CONV_LAYERS {
                        v.data()[c * per..(c + 1) * per].iter().cloned().fold(f64::INFINITY, f64::min)
                    } else {
                        v.data()[c]
                    }
                })
                .collect();
            let name = if layer < CONV_LAYERS {
                format!("backbone.conv{layer}.bias")
            } else {
                "mod.mlp0.b".to_string()
            };
            (name, mins)
        };
        let p = net.params.by_name_mut(&bias_name).expect("bias exists");
        for (b, m) in p.value.data_mut().iter_mut().zip(mins) {
            if m < KINK_MARGIN {
                *b += KINK_MARGIN - m;
            }
        }
    }
    Ok(())
}

/// Gradient check of the full training loss (forward → decode → quintic →
/// structured cost → loss) on the shrunken network initialized from `seed`.
///
/// The positional encoding is set to small random values so it takes part,
/// rectifier biases are shifted off their kinks, and score targets are pinned
/// at the unperturbed costs.
pub fn tiny_end_to_end(seed: u64, h: f64) -> Result<GradCheckReport> {
    let coords = tiny_end_to_end_coordinates(&CheckScene::standard()?, seed, h)?;
    Ok(GradCheckReport::from_coordinates(&coords))
}

pub fn tiny_end_to_end_coordinates(scene: &CheckScene, seed: u64, h: f64) -> Result<Vec<CoordinateCheck>> {
    let ctx = scene.context();
    let input = scene.input()?;
    let mut net = PlannerNet::init(NetConfig::tiny(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in net.params.iter_mut().filter(|p| p.name.starts_with("pe.")) {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
    }
    shift_off_kinks(&mut net, &input)?;
    let targets: Vec<f64> = {
        let mut tape = Tape::new(&net.params);
        let s = record_sample_loss(&mut tape, &net, &input, &ctx, true, None)?;
        s.costs.iter().map(|c| c.total).collect()
    };
    grad_check_coordinates(&net.params, h, |tape| {
        record_sample_loss(tape, &net, &input, &ctx, true, Some(&targets)).map(|s| s.loss)
    })
}
