use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cost::{CandidateContext, CostWeights};
use crate::error::{Result, SagaError};
use crate::geometry::{AnchorLattice, BodyState};
use crate::harness::{run_episode_observed, EpisodeConfig, SelectionMode};
use crate::net::NetInput;
use crate::world::{DepthImage, PillarWorld, Pose};

pub const DATASET_MAGIC: &[u8; 4] = b"SGDS";

/// One recorded frame. `world` indexes [`Dataset::worlds`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub depth: DepthImage,
    pub state: BodyState,
    pub world: usize,
    pub pose: Pose,
}

/// Frames plus the worlds they were captured in. World paths are stored
/// relative to the dataset file's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub world_paths: Vec<String>,
    pub worlds: Vec<PillarWorld>,
    pub samples: Vec<DatasetSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input(&self, i: usize, v_max: f64) -> Result<NetInput> {
        let s = &self.samples[i];
        NetInput::prepare(&s.depth, &s.state, v_max)
    }

    pub fn context<'a>(
        &'a self,
        i: usize,
        lattice: &'a AnchorLattice,
        weights: &'a CostWeights,
        v_max: f64,
    ) -> CandidateContext<'a> {
        let s = &self.samples[i];
        CandidateContext {
            world: &self.worlds[s.world],
            lattice,
            weights,
            state: s.state,
            origin: s.pose,
            v_max,
        }
    }

    /// Dataset holding `samples[range]` and the same worlds.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            world_paths: self.world_paths.clone(),
            worlds: self.worlds.clone(),
            samples: self.samples[range].to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.samples.len()).map_err(|_| SagaError::config("dataset too large"))?;
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&count.to_le_bytes());
        for s in &self.samples {
            s.depth.write_to(&mut out);
            for v in s.state.to_vector() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let path = self.world_paths[s.world].as_bytes();
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path);
            out.extend_from_slice(&world_digest(&self.worlds[s.world]));
            for v in [s.pose.position[0], s.pose.position[1], s.pose.position[2], s.pose.yaw] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a dataset; world files are resolved against `base_dir`.
    pub fn from_bytes(bytes: &[u8], base_dir: &Path, origin: &Path) -> Result<Dataset> {
        let mut r = Reader { bytes, at: 0, origin };
        if r.take(4)? != DATASET_MAGIC {
            return Err(r.bad("missing SGDS magic"));
        }
        let count = r.u32()? as usize;
        let mut ds = Dataset::default();
        for _ in 0..count {
            let (depth, used) = DepthImage::read_from(&bytes[r.at..], origin)?;
            r.take(used)?;
            let mut o = [0.0; 9];
            for v in &mut o {
                *v = r.f64()?;
            }
            let n = r.u32()? as usize;
            let path = std::str::from_utf8(r.take(n)?)
                .map_err(|_| r.bad("world path is not utf-8"))?
                .to_string();
            let digest = r.take(32)?;
            let mut p = [0.0; 4];
            for v in &mut p {
                *v = r.f64()?;
            }
            let state = BodyState::from_vector(&o);
            if !state.is_finite() || !p.iter().all(|v| v.is_finite()) {
                return Err(r.bad("non-finite state or pose"));
            }
            let world = match ds.world_paths.iter().position(|w| *w == path) {
                Some(i) => i,
                None => {
                    let file = base_dir.join(&path);
                    let world = PillarWorld::load(&file)?;
                    if world_digest(&world).as_slice() != digest {
                        return Err(SagaError::format(&file, "world differs from the one the frames were recorded in"));
                    }
                    ds.worlds.push(world);
                    ds.world_paths.push(path);
                    ds.worlds.len() - 1
                }
            };
            if world_digest(&ds.worlds[world]).as_slice() != digest {
                return Err(r.bad("frames of one world path disagree on its hash"));
            }
            ds.samples.push(DatasetSample {
                depth,
                state,
                world,
                pose: Pose::new([p[0], p[1], p[2]], p[3]),
            });
        }
        if r.at != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| SagaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let bytes = fs::read(path).map_err(|e| SagaError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Dataset::from_bytes(&bytes, base, path)
    }
}

/// SHA-256 of the world's canonical text form.
fn world_digest(world: &PillarWorld) -> [u8; 32] {
    Sha256::digest(world.to_text().as_bytes()).into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, detail: &str) -> SagaError {
        SagaError::format(self.origin, format!("{detail} at byte {}", self.at))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.at..self.at + n).ok_or_else(|| self.bad("truncated"))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Clone, Debug)]
pub struct CollectConfig {
    pub seeds: Vec<u64>,
    /// World density cycles through this list by seed position.
    pub densities: Vec<f64>,
    pub frames_per_world: usize,
    pub episode: EpisodeConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CollectStats {
    pub episodes: usize,
    pub failed: usize,
    pub frames: usize,
}

/// Flies one oracle episode per seed and records (depth, state, pose) at the
/// replanning steps, evenly thinned to `frames_per_world`. World files are
/// written under `out_dir/worlds`. Failed episodes contribute no frames.
pub fn collect_dataset(config: &CollectConfig, out_dir: &Path) -> Result<(Dataset, CollectStats)> {
    if config.seeds.is_empty() || config.densities.is_empty() || config.frames_per_world == 0 {
        return Err(SagaError::config("collection needs seeds, densities and frames_per_world ≥ 1"));
    }
    let world_dir = out_dir.join("worlds");
    fs::create_dir_all(&world_dir).map_err(|e| SagaError::io(&world_dir, e))?;
    let episode = EpisodeConfig {
        selection_mode: SelectionMode::Oracle,
        ..config.episode.clone()
    };
    let mut ds = Dataset::default();
    let mut stats = CollectStats::default();
    for (k, &seed) in config.seeds.iter().enumerate() {
        let density = config.densities[k % config.densities.len()];
        let world = PillarWorld::generate_default(seed, density)?;
        let mut frames = Vec::new();
        let result = run_episode_observed(&world, None, &episode, true, &mut |f| {
            frames.push(DatasetSample {
                depth: f.depth.expect("rendered").clone(),
                state: f.state,
                world: ds.worlds.len(),
                pose: f.pose,
            });
            Ok(())
        })?;
        stats.episodes += 1;
        if !result.success {
            stats.failed += 1;
            log::info!("seed {seed} density {density}: oracle episode failed ({}), skipped", result.failure_cause);
            continue;
        }
        let rel = format!("worlds/world_{seed}_{density}.txt");
        world.save(&out_dir.join(&rel))?;
        let n = frames.len();
        let keep = config.frames_per_world.min(n);
        let picked: Vec<DatasetSample> = (0..keep).map(|j| frames[j * n / keep].clone()).collect();
        stats.frames += picked.len();
        ds.samples.extend(picked);
        ds.world_paths.push(rel);
        ds.worlds.push(world);
    }
    log::info!(
        "collected {} frames from {} episodes ({} failed and skipped)",
        stats.frames,
        stats.episodes,
        stats.failed
    );
    Ok((ds, stats))
}
