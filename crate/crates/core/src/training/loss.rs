use crate::cost::{CandidateContext, CostBreakdown};
use crate::error::Result;
use crate::geometry::{NUM_ANCHORS, REFINE_DIM};
use crate::net::{read_output, ForwardVars, NetInput, PlannerNet};
use crate::nn::{Tape, Var};

/// Loss terms of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub l_traj: f64,
    pub l_score: f64,
    pub total: f64,
}

/// Per-anchor costs of the network's own refinements, used as score targets.
#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub loss: Var,
    pub parts: LossParts,
    pub forward: ForwardVars,
    pub costs: Vec<CostBreakdown>,
}

/// Records forward pass and training loss on `tape`.
///
/// `score_targets` overrides the score-regression targets; finite-difference
/// checks pin them to the unperturbed costs so the numeric side sees the same
/// stopped-gradient objective as the analytic side.
///
/// The trajectory term is the mean structured cost over all 15 anchors, each
/// decoded with its predicted refinement; its gradient reaches the network
/// through the exact Jacobian of decode → quintic → cost. The score term
/// regresses the scores onto those costs with the costs held constant.
pub fn record_sample_loss(
    tape: &mut Tape,
    net: &PlannerNet,
    input: &NetInput,
    ctx: &CandidateContext,
    ppe: bool,
    score_targets: Option<&[f64]>,
) -> Result<SampleLoss> {
    let forward = net.forward_tape(tape, ctx.lattice, input, ppe, None)?;
    let out = read_output(tape, forward)?;
    let mut values = Vec::with_capacity(NUM_ANCHORS);
    let mut jac = Vec::with_capacity(NUM_ANCHORS * REFINE_DIM);
    let mut costs = Vec::with_capacity(NUM_ANCHORS);
    for (i, u) in out.u_norm.iter().enumerate() {
        let (b, g) = ctx.cost_with_grad(i, u)?;
        values.push(b.total);
        jac.extend_from_slice(&g);
        costs.push(b);
    }
    let totals = tape.row_function(forward.u_norm, values.clone(), jac)?;
    let l_traj = tape.mean(totals)?;
    let targets = score_targets.unwrap_or(&values);
    let per_score = tape.smooth_l1(forward.scores, targets)?;
    let l_score = tape.mean(per_score)?;
    let a = tape.scale(l_traj, ctx.weights.lambda_traj)?;
    let b = tape.scale(l_score, ctx.weights.lambda_score)?;
    let loss = tape.add(a, b)?;
    let parts = LossParts {
        l_traj: tape.value(l_traj).data()[0],
        l_score: tape.value(l_score).data()[0],
        total: tape.value(loss).data()[0],
    };
    Ok(SampleLoss {
        loss,
        parts,
        forward,
        costs,
    })
}

/// Loss value without recording gradients.
pub fn sample_loss(net: &PlannerNet, input: &NetInput, ctx: &CandidateContext, ppe: bool) -> Result<LossParts> {
    let mut tape = Tape::new(&net.params);
    Ok(record_sample_loss(&mut tape, net, input, ctx, ppe, None)?.parts)
}
