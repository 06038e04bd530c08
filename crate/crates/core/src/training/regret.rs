use rayon::prelude::*;

use super::dataset::Dataset;
use super::train::TrainConfig;
use crate::error::Result;
use crate::geometry::NUM_ANCHORS;
use crate::harness::select_anchor;
use crate::net::PlannerNet;

/// Predicted scores and true costs of one frame, each anchor decoded with its
/// own predicted refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameEval {
    pub scores: [f64; NUM_ANCHORS],
    pub costs: [f64; NUM_ANCHORS],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegretStats {
    pub frames: usize,
    /// Mean of cost(selected) − min cost.
    pub mean_regret: f64,
    /// Expected regret of a uniformly random selection: mean cost − min cost.
    pub random_mean_regret: f64,
    /// Fraction of frames where the selection is the cost minimizer.
    pub agreement: f64,
}

pub fn evaluate_frames(net: &PlannerNet, data: &Dataset, config: &TrainConfig) -> Result<Vec<FrameEval>> {
    let lattice = config.effective_lattice()?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let input = data.input(i, config.v_max)?;
            let out = net.forward(&lattice, &input, config.ppe_enabled)?;
            let ctx = data.context(i, &lattice, &config.weights, config.v_max);
            let mut costs = [0.0; NUM_ANCHORS];
            for (k, c) in ctx.all_costs(&out.u_norm)?.iter().enumerate() {
                costs[k] = c.total;
            }
            Ok(FrameEval {
                scores: out.scores,
                costs,
            })
        })
        .collect()
}

pub fn regret_stats(frames: &[FrameEval]) -> RegretStats {
    if frames.is_empty() {
        return RegretStats::default();
    }
    let mut regret = 0.0;
    let mut random = 0.0;
    let mut agree = 0;
    for f in frames {
        let best = select_anchor(&f.costs);
        let pick = select_anchor(&f.scores);
        let min = f.costs[best];
        regret += f.costs[pick] - min;
        random += f.costs.iter().sum::<f64>() / NUM_ANCHORS as f64 - min;
        agree += (f.costs[pick] == min) as usize;
    }
    let n = frames.len() as f64;
    RegretStats {
        frames: frames.len(),
        mean_regret: regret / n,
        random_mean_regret: random / n,
        agreement: agree as f64 / n,
    }
}

pub fn evaluate_regret(net: &PlannerNet, data: &Dataset, config: &TrainConfig) -> Result<RegretStats> {
    Ok(regret_stats(&evaluate_frames(net, data, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_as_score_has_zero_regret() {
        let mut costs = [0.0; NUM_ANCHORS];
        for (i, c) in costs.iter_mut().enumerate() {
            *c = ((i * 7) % 15) as f64 + 0.5;
        }
        let f = FrameEval { scores: costs, costs };
        let s = regret_stats(&[f, f]);
        assert_eq!(s.mean_regret, 0.0);
        assert_eq!(s.agreement, 1.0);
        assert!(s.random_mean_regret > 0.0);
    }

    #[test]
    fn reversed_scores_pick_the_worst() {
        let mut costs = [0.0; NUM_ANCHORS];
        for (i, c) in costs.iter_mut().enumerate() {
            *c = i as f64;
        }
        let scores = costs.map(|c| -c);
        let s = regret_stats(&[FrameEval { scores, costs }]);
        assert_eq!(s.mean_regret, 14.0);
        assert_eq!(s.random_mean_regret, 7.0);
        assert_eq!(s.agreement, 0.0);
    }
}
