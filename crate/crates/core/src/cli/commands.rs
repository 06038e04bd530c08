use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::meta::Metadata;
use super::{parse_f64_list, parse_seed_list, Command, PoseArgs, EXIT_FAULT, EXIT_OK};
use crate::config::RunConfig;
use crate::error::{Result, SagaError};
use crate::fmt::sig9;
use crate::geometry::{decode_terminal, NUM_ANCHORS};
use crate::harness::{
    body_state, log_to_csv, metrics_line, run_benchmark, run_episode, BenchmarkSpec, EpisodeConfig, SelectionMode,
};
use crate::net::{NetConfig, NetInput, PlannerNet};
use crate::training::{
    ablate_ppe, collect_dataset, evaluate_regret, loss_curve_csv, tiny_end_to_end, train, CollectConfig, Dataset,
    TINY_CHECK_SEED,
};
use crate::world::{render_depth, PillarWorld, Pose};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct Context {
    pub config: RunConfig,
    pub command_line: String,
    pub meta: Option<PathBuf>,
}

impl Context {
    fn metadata(&self) -> Metadata {
        Metadata::new(&self.command_line, &self.config)
    }

    /// Saves metadata at `--meta` or `default`.
    fn finish(&self, meta: &Metadata, default: PathBuf) -> Result<()> {
        meta.save(self.meta.as_deref().unwrap_or(&default))
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SagaError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| SagaError::io(path, e))
}

fn pose_in(world: &PillarWorld, p: &PoseArgs) -> Pose {
    let s = world.start;
    let position = [p.x.unwrap_or(s[0]), p.y.unwrap_or(s[1]), p.z.unwrap_or(s[2])];
    let yaw = p
        .yaw
        .unwrap_or_else(|| (world.goal[1] - position[1]).atan2(world.goal[0] - position[0]));
    Pose::new(position, yaw)
}

fn load_net(path: &Path, meta: &mut Metadata) -> Result<PlannerNet> {
    meta.input("weights", path)?;
    PlannerNet::load(path)
}

pub fn dispatch(ctx: &Context, command: &Command) -> Result<i32> {
    match command {
        Command::GenWorld { seed, density, out } => gen_world(ctx, *seed, *density, out),
        Command::Render { world, pose, out } => render(ctx, world, pose, out),
        Command::Plan {
            world,
            weights,
            zero_weights,
            pose,
            out,
        } => plan(ctx, world, weights.as_deref(), *zero_weights, pose, out.as_deref()),
        Command::Fly {
            world,
            weights,
            vmax,
            mode,
            out_prefix,
        } => fly(ctx, world, weights.as_deref(), *vmax, mode.as_deref(), out_prefix),
        Command::Bench {
            seeds,
            speeds,
            densities,
            modes,
            weights,
            jobs,
            out,
        } => bench(ctx, seeds, speeds, densities.as_deref(), modes, weights.as_deref(), *jobs, out),
        Command::Collect {
            seeds,
            densities,
            frames_per_world,
            out_dir,
        } => collect(ctx, seeds, densities, *frames_per_world, out_dir),
        Command::Train { dataset, init, out_dir } => train_cmd(ctx, dataset, init.as_deref(), out_dir),
        Command::Regret { weights, dataset, out } => regret(ctx, weights, dataset, out.as_deref()),
        Command::Ablate {
            dataset,
            held_out,
            bench_seeds,
            bench_speeds,
            jobs,
            out_dir,
        } => ablate(ctx, dataset, held_out, bench_seeds.as_deref(), bench_speeds, *jobs, out_dir),
        Command::Gradcheck { tiny, net_seed, step } => gradcheck(ctx, *tiny, *net_seed, *step),
        Command::Manifest { weights } => manifest(ctx, weights.as_deref()),
    }
}

fn gen_world(ctx: &Context, seed: Option<u64>, density: Option<f64>, out: &Path) -> Result<i32> {
    let seed = match seed {
        Some(s) => s,
        None => ctx.config.u64("seed")?,
    };
    let density = match density {
        Some(d) => d,
        None => ctx.config.f64("density")?,
    };
    let world = PillarWorld::generate_default(seed, density)?;
    write(out, &world.to_text())?;
    let mut meta = ctx.metadata();
    meta.output(out);
    meta.note("seed", seed);
    meta.note("density", sig9(density));
    meta.note("pillars", world.pillars.len());
    ctx.finish(&meta, with_suffix(out, ".meta"))?;
    println!("wrote {} ({} pillars)", out.display(), world.pillars.len());
    Ok(EXIT_OK)
}

fn render(ctx: &Context, world_path: &Path, pose: &PoseArgs, out: &Path) -> Result<i32> {
    let mut meta = ctx.metadata();
    meta.input("world", world_path)?;
    let world = PillarWorld::load(world_path)?;
    let pose = pose_in(&world, pose);
    let img = render_depth(&world, &pose, &EpisodeConfig::default().camera);
    img.save(out)?;
    meta.output(out);
    meta.note("pose", format!("{},{},{},{}", pose.position[0], pose.position[1], pose.position[2], pose.yaw));
    ctx.finish(&meta, with_suffix(out, ".meta"))?;
    println!("wrote {} ({}x{})", out.display(), img.height, img.width);
    Ok(EXIT_OK)
}

pub const PLAN_HEADER: &str = "anchor,yaw_rad,pitch_rad,r,px,py,pz,vx,vy,vz,ax,ay,az,score";

fn plan(
    ctx: &Context,
    world_path: &Path,
    weights: Option<&Path>,
    zero_weights: bool,
    pose: &PoseArgs,
    out: Option<&Path>,
) -> Result<i32> {
    let mut meta = ctx.metadata();
    meta.input("world", world_path)?;
    let net = match (weights, zero_weights) {
        (Some(w), _) => load_net(w, &mut meta)?,
        (None, true) => PlannerNet::zeros(ctx.config.net_config()?)?,
        (None, false) => return Err(SagaError::config("plan needs --weights or --zero-weights")),
    };
    let world = PillarWorld::load(world_path)?;
    let ep = ctx.config.episode_config()?;
    let lattice = ep.effective_lattice()?;
    let pose = pose_in(&world, pose);
    let state = body_state(&pose, &[0.0; 3], &[0.0; 3], &world.goal);
    let depth = render_depth(&world, &pose, &ep.camera);
    let input = NetInput::prepare(&depth, &state, ep.v_max)?;
    let output = net.forward(&lattice, &input, ep.ppe_enabled)?;
    let mut csv = format!("{PLAN_HEADER}\n");
    for i in 0..NUM_ANCHORS {
        let (yaw, pitch) = lattice.anchor(i)?;
        let t = decode_terminal(&lattice, i, &output.u_norm[i])?;
        let _ = write!(csv, "{i},{},{},{}", sig9(yaw), sig9(pitch), sig9(t.r));
        for v in [&t.p_b, &t.v_b, &t.a_b] {
            for x in v.iter() {
                let _ = write!(csv, ",{}", sig9(*x));
            }
        }
        let _ = writeln!(csv, ",{}", sig9(output.scores[i]));
    }
    print!("{csv}");
    let default_meta = match out {
        Some(o) => {
            write(o, &csv)?;
            meta.output(o);
            with_suffix(o, ".meta")
        }
        None => PathBuf::from("saga-plan.meta"),
    };
    ctx.finish(&meta, default_meta)?;
    Ok(EXIT_OK)
}

fn fly(
    ctx: &Context,
    world_path: &Path,
    weights: Option<&Path>,
    vmax: Option<f64>,
    mode: Option<&str>,
    prefix: &Path,
) -> Result<i32> {
    let mut config = ctx.config.clone();
    if let Some(v) = vmax {
        config.set("v_max", &v.to_string())?;
    }
    if let Some(m) = mode {
        config.set("mode", m)?;
    }
    let ep = config.episode_config()?;
    let mut meta = Metadata::new(&ctx.command_line, &config);
    meta.input("world", world_path)?;
    let net = match weights {
        Some(w) => Some(load_net(w, &mut meta)?),
        None => None,
    };
    if ep.selection_mode == SelectionMode::Learned && net.is_none() {
        return Err(SagaError::config("--mode learned needs --weights"));
    }
    let world = PillarWorld::load(world_path)?;
    let result = run_episode(&world, net.as_ref(), &ep)?;
    let csv_path = with_suffix(prefix, ".csv");
    write(&csv_path, &log_to_csv(&result.log))?;
    meta.output(&csv_path);
    let summary = format!(
        "success={} failure_cause={} {}",
        result.success as u8,
        result.failure_cause,
        metrics_line(&result.metrics)
    );
    meta.note("summary", &summary);
    ctx.finish(&meta, with_suffix(prefix, ".meta"))?;
    println!("{summary}");
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn bench(
    ctx: &Context,
    seeds: &str,
    speeds: &str,
    densities: Option<&str>,
    modes: &str,
    weights: Option<&Path>,
    jobs: usize,
    out: &Path,
) -> Result<i32> {
    let mut meta = ctx.metadata();
    let spec = BenchmarkSpec {
        seeds: parse_seed_list(seeds)?,
        speeds: parse_f64_list(speeds)?,
        densities: match densities {
            Some(d) => parse_f64_list(d)?,
            None => vec![ctx.config.f64("density")?],
        },
        modes: modes
            .split(',')
            .map(|m| m.trim().parse::<SelectionMode>())
            .collect::<Result<_>>()?,
        jobs,
    };
    let net = match weights {
        Some(w) => Some(load_net(w, &mut meta)?),
        None => None,
    };
    let base = ctx.config.episode_config()?;
    let report = run_benchmark(&spec, &base, net.as_ref())?;
    write(out, &report.to_csv())?;
    meta.output(out);
    for a in &report.aggregates {
        meta.note(
            &format!("success_rate[{},{},{}]", sig9(a.speed), sig9(a.density), a.mode),
            sig9(a.success_rate),
        );
    }
    ctx.finish(&meta, with_suffix(out, ".meta"))?;
    println!("wrote {} ({} rows, {} aggregates)", out.display(), report.rows.len(), report.aggregates.len());
    Ok(EXIT_OK)
}

fn collect(ctx: &Context, seeds: &str, densities: &str, frames: usize, out_dir: &Path) -> Result<i32> {
    let config = CollectConfig {
        seeds: parse_seed_list(seeds)?,
        densities: parse_f64_list(densities)?,
        frames_per_world: frames,
        episode: ctx.config.episode_config()?,
    };
    let (ds, stats) = collect_dataset(&config, out_dir)?;
    let path = out_dir.join("dataset.sgds");
    ds.save(&path)?;
    let mut meta = ctx.metadata();
    meta.output(&path);
    for p in &ds.world_paths {
        meta.input("world", &out_dir.join(p))?;
    }
    meta.note("episodes", stats.episodes);
    meta.note("failed_skipped", stats.failed);
    meta.note("frames", stats.frames);
    ctx.finish(&meta, out_dir.join("dataset.meta"))?;
    println!(
        "wrote {} ({} frames, {} of {} episodes skipped)",
        path.display(),
        stats.frames,
        stats.failed,
        stats.episodes
    );
    Ok(EXIT_OK)
}

fn train_cmd(ctx: &Context, dataset: &Path, init: Option<&Path>, out_dir: &Path) -> Result<i32> {
    let mut meta = ctx.metadata();
    meta.input("dataset", dataset)?;
    let config = ctx.config.train_config()?;
    let ds = Dataset::load(dataset)?;
    let net = match init {
        Some(p) => load_net(p, &mut meta)?,
        None => PlannerNet::init(config.net, config.seed)?,
    };
    let outcome = train(&ds, &config, net, Some(out_dir))?;
    let weights = out_dir.join("weights.sagw");
    outcome.net.save(&weights)?;
    let curve = out_dir.join("loss_curve.csv");
    write(&curve, &loss_curve_csv(&outcome.curve))?;
    meta.output(&weights);
    meta.output(&curve);
    let first = outcome.curve[0].l_total;
    let last = outcome.curve.last().expect("epoch 0 present").l_total;
    meta.note("samples", ds.len());
    meta.note("steps", outcome.steps);
    meta.note("initial_loss", sig9(first));
    meta.note("final_loss", sig9(last));
    ctx.finish(&meta, out_dir.join("train.meta"))?;
    println!("trained {} steps: loss {} -> {}", outcome.steps, sig9(first), sig9(last));
    Ok(EXIT_OK)
}

fn regret(ctx: &Context, weights: &Path, dataset: &Path, out: Option<&Path>) -> Result<i32> {
    let mut meta = ctx.metadata();
    meta.input("dataset", dataset)?;
    let net = load_net(weights, &mut meta)?;
    let config = ctx.config.train_config()?;
    let ds = Dataset::load(dataset)?;
    let s = evaluate_regret(&net, &ds, &config)?;
    let line = format!(
        "frames={} mean_regret={} random_regret={} agreement={}",
        s.frames,
        sig9(s.mean_regret),
        sig9(s.random_mean_regret),
        sig9(s.agreement)
    );
    println!("{line}");
    meta.note("regret", &line);
    let default_meta = match out {
        Some(o) => {
            write(o, &format!("{line}\n"))?;
            meta.output(o);
            with_suffix(o, ".meta")
        }
        None => PathBuf::from("saga-regret.meta"),
    };
    ctx.finish(&meta, default_meta)?;
    Ok(EXIT_OK)
}

fn ablate(
    ctx: &Context,
    dataset: &Path,
    held_out: &Path,
    bench_seeds: Option<&str>,
    bench_speeds: &str,
    jobs: usize,
    out_dir: &Path,
) -> Result<i32> {
    let mut meta = ctx.metadata();
    meta.input("dataset", dataset)?;
    meta.input("held_out", held_out)?;
    let config = ctx.config.train_config()?;
    let train_set = Dataset::load(dataset)?;
    let held = Dataset::load(held_out)?;
    let base = ctx.config.episode_config()?;
    let spec = match bench_seeds {
        Some(s) => Some(BenchmarkSpec {
            seeds: parse_seed_list(s)?,
            speeds: parse_f64_list(bench_speeds)?,
            densities: vec![ctx.config.f64("density")?],
            modes: vec![SelectionMode::Learned],
            jobs,
        }),
        None => None,
    };
    let report = ablate_ppe(&train_set, &held, &config, spec.as_ref().map(|s| (s, &base)), Some(out_dir))?;
    let path = out_dir.join("ablation.csv");
    write(&path, &report.to_csv())?;
    meta.output(&path);
    ctx.finish(&meta, out_dir.join("ablation.meta"))?;
    print!("{}", report.to_csv());
    Ok(EXIT_OK)
}

fn gradcheck(ctx: &Context, tiny: bool, net_seed: Option<u64>, step: f64) -> Result<i32> {
    if !tiny {
        return Err(SagaError::config(
            "the end-to-end check runs on the shrunken network only; pass --tiny",
        ));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(SagaError::config("step must be positive"));
    }
    let seed = net_seed.unwrap_or(TINY_CHECK_SEED);
    let report = tiny_end_to_end(seed, step)?;
    let worst = report
        .worst
        .as_ref()
        .map_or("-".to_string(), |(n, i)| format!("{n}[{i}]"));
    let line = format!(
        "max_rel_error={:.3e} worst={worst} coordinates={} tolerance={:.0e}",
        report.max_rel_error, report.coordinates, GRADCHECK_TOLERANCE
    );
    println!("{line}");
    let mut meta = ctx.metadata();
    meta.note("net_seed", seed);
    meta.note("gradcheck", &line);
    ctx.finish(&meta, PathBuf::from("saga-gradcheck.meta"))?;
    Ok(if report.max_rel_error < GRADCHECK_TOLERANCE {
        EXIT_OK
    } else {
        EXIT_FAULT
    })
}

fn manifest(ctx: &Context, weights: Option<&Path>) -> Result<i32> {
    let mut meta = ctx.metadata();
    let net = match weights {
        Some(w) => load_net(w, &mut meta)?,
        None => {
            let c: NetConfig = ctx.config.net_config()?;
            PlannerNet::init(c, ctx.config.u64("seed")?)?
        }
    };
    print!("{}", net.manifest());
    ctx.finish(&meta, PathBuf::from("saga-manifest.meta"))?;
    Ok(EXIT_OK)
}
