//! Board trajectories: explicit pose lists, or poses chosen from a random
//! pool so the dataset hits requested collection / partial / complete counts.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_collection, SceneConfig, SceneError, SimMode};
use crate::dataset::Detection;
use crate::geometry::{exp_so3, frame_from_z_axis, RigidTransform};

fn default_min_detections() -> usize {
    4
}

fn default_pool() -> usize {
    1500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetCounts {
    pub collections: usize,
    /// Total partial RGB detections; `None` leaves it free.
    #[serde(default)]
    pub rgb_partials: Option<usize>,
    /// Collections seen by every sensor; `None` leaves it free.
    #[serde(default)]
    pub complete: Option<usize>,
    /// Every sensor must detect the board in at least this many collections.
    #[serde(default = "default_min_detections")]
    pub min_detections_per_sensor: usize,
    /// Number of random candidate poses to choose from.
    #[serde(default = "default_pool")]
    pub pool_size: usize,
}

impl TargetCounts {
    pub fn new(collections: usize, rgb_partials: Option<usize>, complete: Option<usize>) -> Self {
        TargetCounts {
            collections,
            rgb_partials,
            complete,
            min_detections_per_sensor: default_min_detections(),
            pool_size: default_pool(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// World poses of the board, one collection each.
    Explicit { poses: Vec<RigidTransform> },
    Targeted(TargetCounts),
}

/// Noise-free visibility summary of one candidate pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Signature {
    mask: u64,
    partials: usize,
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random board pose inside the cell, facing one randomly chosen sensor with
/// some tilt and in-plane rotation.
fn sample_pose(rng: &mut ChaCha8Rng, cfg: &SceneConfig, sensor_positions: &[Vector3<f64>]) -> Option<RigidTransform> {
    let [dx, dy, dz] = cfg.cell;
    let c = Vector3::new(
        uniform_in(rng, 0.18 * dx, 0.82 * dx),
        uniform_in(rng, 0.2 * dy, 0.8 * dy),
        uniform_in(rng, 0.24 * dz, 0.72 * dz),
    );
    let viewer = sensor_positions[rng.random_range(0..sensor_positions.len())];
    let r: Vector3<f64> = Vector3::from(UnitSphere.sample(rng));
    let tilt = uniform_in(rng, 0.0, 0.4);
    let spin = uniform_in(rng, -0.6, 0.6);
    if sensor_positions.iter().any(|p| (p - c).norm() < 0.6) {
        return None;
    }
    let n0 = (viewer - c).normalize();
    let axis = n0.cross(&r);
    if axis.norm() < 1e-6 {
        return None;
    }
    let n = exp_so3(&(axis.normalize() * tilt)) * n0;
    let hint = Vector3::z().cross(&n);
    let hint = if hint.norm() < 1e-6 { Vector3::x() } else { hint };
    let rot = frame_from_z_axis(&n, &hint) * exp_so3(&(Vector3::z() * spin));
    let rect = cfg.pattern.rect();
    let center = rect.center();
    Some(RigidTransform::new(rot, c - rot * Vector3::new(center.x, center.y, 0.0)))
}

struct Selection<'a> {
    sigs: &'a [Signature],
    target: &'a TargetCounts,
    full: u64,
    n_sensors: usize,
}

impl Selection<'_> {
    fn score(&self, chosen: &[usize]) -> usize {
        let mut partials = 0;
        let mut complete = 0;
        let mut counts = vec![0usize; self.n_sensors];
        // union-find over sensors linked by co-detection
        let mut parent: Vec<usize> = (0..self.n_sensors).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &i in chosen {
            let s = self.sigs[i];
            partials += s.partials;
            complete += usize::from(s.mask == self.full);
            let mut first = None;
            for (k, c) in counts.iter_mut().enumerate() {
                if s.mask & (1 << k) != 0 {
                    *c += 1;
                    match first {
                        None => first = Some(k),
                        Some(f) => {
                            let (a, b) = (find(&mut parent, f), find(&mut parent, k));
                            parent[a] = b;
                        }
                    }
                }
            }
        }
        let components = (0..self.n_sensors).filter(|&k| find(&mut parent, k) == k).count();
        let coverage: usize = counts
            .iter()
            .map(|&c| self.target.min_detections_per_sensor.saturating_sub(c))
            .sum();
        let mut score = 3 * coverage + 6 * (components - 1);
        if let Some(p) = self.target.rgb_partials {
            score += 4 * partials.abs_diff(p);
        }
        if let Some(c) = self.target.complete {
            score += 4 * complete.abs_diff(c);
        }
        score
    }
}

/// Rounds of pool growth before the targets are declared unreachable.
const POOL_ROUNDS: usize = 4;

/// Draws a candidate pool and picks `target.collections` poses meeting the
/// targets by seeded local search. The pool grows by `pool_size` candidates
/// while the search misses. Deterministic for a fixed config.
pub(crate) fn select_poses(
    cfg: &SceneConfig,
    sensor_poses: &[RigidTransform],
    target: &TargetCounts,
) -> Result<Vec<RigidTransform>, SceneError> {
    if cfg.sensors.len() > 64 {
        return Err(SceneError::Invalid("targeted trajectories support at most 64 sensors".into()));
    }
    if target.collections == 0 {
        return Err(SceneError::Invalid("target collection count must be positive".into()));
    }
    let positions: Vec<Vector3<f64>> = sensor_poses.iter().map(|p| p.translation).collect();
    let full: u64 = if cfg.sensors.len() == 64 { u64::MAX } else { (1u64 << cfg.sensors.len()) - 1 };
    let forbid_complete = target.complete == Some(0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut poses = Vec::new();
    let mut sigs: Vec<Signature> = Vec::new();
    let mut best_score = usize::MAX;
    for round in 1..=POOL_ROUNDS {
        let wanted = round * target.pool_size;
        let mut attempts = 0;
        while poses.len() < wanted && attempts < 20 * target.pool_size {
            attempts += 1;
            if let Some(p) = sample_pose(&mut rng, cfg, &positions) {
                poses.push(p);
            }
        }
        let fresh: Vec<Signature> = poses[sigs.len()..].par_iter().map(|pose| signature(cfg, sensor_poses, pose)).collect();
        sigs.extend(fresh);
        let usable: Vec<usize> = (0..sigs.len())
            .filter(|&i| sigs[i].mask != 0 && !(forbid_complete && sigs[i].mask == full))
            .collect();
        if usable.len() < target.collections {
            if round == POOL_ROUNDS {
                return Err(SceneError::Unreachable(format!(
                    "only {} visible candidate poses for {} collections",
                    usable.len(),
                    target.collections
                )));
            }
            continue;
        }
        let sel = Selection {
            sigs: &sigs,
            target,
            full,
            n_sensors: cfg.sensors.len(),
        };
        let (score, mut chosen) = search(&sel, &usable, target.collections, &mut rng);
        if score == 0 {
            chosen.sort_unstable();
            return Ok(chosen.into_iter().map(|i| poses[i]).collect());
        }
        best_score = best_score.min(score);
    }
    Err(SceneError::Unreachable(format!(
        "best selection still misses the targets (score {best_score}); try a larger pool_size or another seed"
    )))
}

fn signature(cfg: &SceneConfig, sensor_poses: &[RigidTransform], pose: &RigidTransform) -> Signature {
    let sim = simulate_collection(cfg, sensor_poses, pose, SimMode::Visibility);
    let mut sig = Signature { mask: 0, partials: 0 };
    for (k, s) in cfg.sensors.iter().enumerate() {
        if let Some(d) = sim.detections.get(&s.id) {
            sig.mask |= 1 << k;
            if matches!(d, Detection::Rgb(r) if r.partial) {
                sig.partials += 1;
            }
        }
    }
    sig
}

/// Restarted local search over swaps; returns the best score and selection.
fn search(sel: &Selection, usable: &[usize], n: usize, rng: &mut ChaCha8Rng) -> (usize, Vec<usize>) {
    let mut best: Option<(usize, Vec<usize>)> = None;
    for _restart in 0..8 {
        let mut order = usable.to_vec();
        order.shuffle(rng);
        let mut chosen: Vec<usize> = order[..n].to_vec();
        let mut rest: Vec<usize> = order[n..].to_vec();
        let mut score = sel.score(&chosen);
        let mut iter = 0;
        while score > 0 && !rest.is_empty() {
            while score > 0 && iter < 100_000 {
                iter += 1;
                let a = rng.random_range(0..chosen.len());
                let b = rng.random_range(0..rest.len());
                std::mem::swap(&mut chosen[a], &mut rest[b]);
                let s = sel.score(&chosen);
                if s <= score {
                    score = s;
                } else {
                    std::mem::swap(&mut chosen[a], &mut rest[b]);
                }
            }
            // random swaps stalled: take the best single swap, if any improves
            let mut improved = None;
            for a in 0..chosen.len() {
                let keep = chosen[a];
                for (b, &candidate) in rest.iter().enumerate() {
                    chosen[a] = candidate;
                    let s = sel.score(&chosen);
                    if s < improved.map_or(score, |(best, _, _)| best) {
                        improved = Some((s, a, b));
                    }
                }
                chosen[a] = keep;
            }
            let Some((s, a, b)) = improved else { break };
            std::mem::swap(&mut chosen[a], &mut rest[b]);
            score = s;
            iter = 0;
        }
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, chosen));
        }
        if score == 0 {
            break;
        }
    }
    best.expect("at least one restart")
}
