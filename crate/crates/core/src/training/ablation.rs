use std::fmt::Write as _;
use std::path::Path;

use super::dataset::Dataset;
use super::regret::{evaluate_regret, RegretStats};
use super::train::{train, TrainConfig};
use crate::error::{Result, SagaError};
use crate::fmt::sig9;
use crate::geometry::NUM_ANCHORS;
use crate::harness::{run_benchmark, BenchmarkSpec, EpisodeConfig, SelectionMode};
use crate::net::PlannerNet;

pub const ABLATION_HEADER: &str = "arm,ppe,seed,epochs,samples,initial_loss,final_loss,mean_regret,random_regret,agreement,perm_sensitivity,bench_episodes,bench_success_rate";

/// Token order of the permutation probe: the lattice read backwards.
pub const PROBE_ORDER: [usize; NUM_ANCHORS] = [14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0];

#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub ppe: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub regret: RegretStats,
    /// Output change under [`PROBE_ORDER`] on the first held-out frame.
    pub perm_sensitivity: f64,
    pub bench_episodes: usize,
    pub bench_success_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seed: u64,
    pub epochs: usize,
    pub samples: usize,
    pub arms: Vec<ArmReport>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_HEADER}\n");
        for a in &self.arms {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                if a.ppe { "ppe" } else { "no_ppe" },
                a.ppe as u8,
                self.seed,
                self.epochs,
                self.samples,
                sig9(a.initial_loss),
                sig9(a.final_loss),
                sig9(a.regret.mean_regret),
                sig9(a.regret.random_mean_regret),
                sig9(a.regret.agreement),
                sig9(a.perm_sensitivity),
                a.bench_episodes,
                a.bench_success_rate.map_or("nan".to_string(), sig9)
            );
        }
        out
    }
}

/// Trains the PPE and no-PPE arms from the same initialization and compares
/// held-out regret, permutation sensitivity and (optionally) learned-mode
/// flight success. Arm weights go to `out_dir/{ppe,no_ppe}` when given.
pub fn ablate_ppe(
    train_set: &Dataset,
    held_out: &Dataset,
    config: &TrainConfig,
    bench: Option<(&BenchmarkSpec, &EpisodeConfig)>,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if held_out.is_empty() {
        return Err(SagaError::config("ablation needs held-out frames"));
    }
    let init = PlannerNet::init(config.net, config.seed)?;
    let lattice = config.effective_lattice()?;
    let mut arms = Vec::new();
    for ppe in [true, false] {
        let cfg = TrainConfig {
            ppe_enabled: ppe,
            ..config.clone()
        };
        let dir = out_dir.map(|d| d.join(if ppe { "ppe" } else { "no_ppe" }));
        let outcome = train(train_set, &cfg, init.clone(), dir.as_deref())?;
        if let Some(d) = &dir {
            outcome.net.save(&d.join("weights.sagw"))?;
        }
        let regret = evaluate_regret(&outcome.net, held_out, &cfg)?;
        let probe = held_out.input(0, cfg.v_max)?;
        let perm_sensitivity = outcome.net.permutation_sensitivity(&lattice, &probe, ppe, &PROBE_ORDER)?;
        let (bench_episodes, bench_success_rate) = match bench {
            Some((spec, base)) => {
                let spec = BenchmarkSpec {
                    modes: vec![SelectionMode::Learned],
                    ..spec.clone()
                };
                let base = EpisodeConfig {
                    ppe_enabled: ppe,
                    ..base.clone()
                };
                let report = run_benchmark(&spec, &base, Some(&outcome.net))?;
                let n = report.rows.len();
                let ok = report.rows.iter().filter(|r| r.success).count();
                (n, (n > 0).then(|| ok as f64 / n as f64))
            }
            None => (0, None),
        };
        arms.push(ArmReport {
            ppe,
            initial_loss: outcome.curve[0].l_total,
            final_loss: outcome.curve.last().expect("epoch 0 present").l_total,
            regret,
            perm_sensitivity,
            bench_episodes,
            bench_success_rate,
        });
    }
    Ok(AblationReport {
        seed: config.seed,
        epochs: config.epochs,
        samples: train_set.len(),
        arms,
    })
}
