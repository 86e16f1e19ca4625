#![allow(dead_code)]

use std::time::{Duration, Instant};

use sensorcal::calib::{calibrate, CalibrationOptions, CalibrationResult};
use sensorcal::synth::{self, GeneratedScene, NoiseConfig, Perturbation, SceneConfig, TargetCounts, Trajectory};
use sensorcal::tree::TransformTree;

pub fn noiseless(mut cfg: SceneConfig) -> SceneConfig {
    cfg.noise = NoiseConfig::none();
    cfg
}

pub fn perturbed(mut cfg: SceneConfig, translation: f64, rotation: f64, seed: u64) -> SceneConfig {
    cfg.perturbation = Some(Perturbation {
        translation,
        rotation,
        seed,
    });
    cfg
}

/// A cheap scene: `n` collections drawn from a small candidate pool, with no
/// count targets.
pub fn small_scene(seed: u64, n: usize) -> SceneConfig {
    let mut cfg = synth::cell::default_scene(seed);
    cfg.trajectory = Trajectory::Targeted(TargetCounts {
        collections: n,
        rgb_partials: None,
        complete: None,
        min_detections_per_sensor: 0,
        pool_size: 60,
    });
    cfg
}

pub fn generate(cfg: &SceneConfig) -> GeneratedScene {
    synth::generate(cfg).expect("scene generates")
}

/// Largest translation (m) and rotation (rad) error over the edges that
/// calibration is free to move.
pub fn edge_errors(gt: &TransformTree, est: &TransformTree, scene: &GeneratedScene) -> (f64, f64) {
    let free = synth::free_edges(gt, &scene.dataset.sensors);
    assert!(!free.is_empty());
    let mut worst = (0.0f64, 0.0f64);
    for i in free {
        let e = gt.edge(i);
        let j = est.find_edge(&e.parent, &e.child).expect("edge present in estimate");
        let (dt, da) = e.transform.difference(&est.edge(j).transform);
        worst = (worst.0.max(dt), worst.1.max(da));
    }
    worst
}

pub struct Recovery {
    pub result: CalibrationResult,
    pub translation_err: f64,
    pub rotation_err: f64,
    pub elapsed: Duration,
}

/// Calibrates the dataset from its (possibly perturbed) tree with default
/// options and scores the free edges against ground truth.
pub fn recover(scene: &GeneratedScene) -> Recovery {
    let start = Instant::now();
    let result = calibrate(&scene.dataset, &scene.dataset.tree, &CalibrationOptions::default()).expect("calibrates");
    let elapsed = start.elapsed();
    let (translation_err, rotation_err) = edge_errors(&scene.ground_truth.tree, &result.tree, scene);
    Recovery {
        result,
        translation_err,
        rotation_err,
        elapsed,
    }
}

pub fn is_non_increasing(costs: &[f64]) -> bool {
    costs.windows(2).all(|w| w[1] <= w[0])
}

/// Random raster made of a noisy far background, a few tilted planar
/// patches and invalid holes. Returns the raster and a pixel on the first
/// patch.
pub fn random_raster(seed: u64) -> (sensorcal::sidecar::DepthImage, [u32; 2]) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(24..80u32), rng.random_range(16..60u32));
    let mut img = sensorcal::sidecar::DepthImage::new_invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, rng.random_range(4.0..6.0f32));
        }
    }
    let mut first = None;
    for _ in 0..rng.random_range(1..5) {
        let (x0, y0) = (rng.random_range(0..w - 4), rng.random_range(0..h - 4));
        let (x1, y1) = (rng.random_range(x0 + 3..w), rng.random_range(y0 + 3..h));
        let base = rng.random_range(1.0..3.0f64);
        // per-pixel slopes straddle the 0.02 jump threshold
        let (gx, gy) = (rng.random_range(-0.025..0.025f64), rng.random_range(-0.025..0.025f64));
        for y in y0..y1 {
            for x in x0..x1 {
                let d = base + gx * (x - x0) as f64 + gy * (y - y0) as f64;
                img.set(x, y, d as f32);
            }
        }
        first.get_or_insert([x0, y0]);
    }
    let seed_px = first.expect("at least one patch");
    for _ in 0..rng.random_range(0..(w * h / 8)) {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        if [x, y] != seed_px {
            img.set(x, y, f32::NAN);
        }
    }
    (img, seed_px)
}

/// Span-based fill: grows horizontal runs, then seeds the rows above and
/// below. Joins a 4-neighbour when both depths are valid and differ by at
/// most `jump`.
pub fn scanline_fill(img: &sensorcal::sidecar::DepthImage, seed: [u32; 2], jump: f64) -> Vec<bool> {
    let (w, h) = (img.width as i64, img.height as i64);
    let at = |x: i64, y: i64| (y * w + x) as usize;
    let depth = |x: i64, y: i64| img.data[at(x, y)] as f64;
    let joins = |a: (i64, i64), b: (i64, i64)| {
        let (da, db) = (depth(a.0, a.1), depth(b.0, b.1));
        da.is_finite() && db.is_finite() && db > 0.0 && (db - da).abs() <= jump
    };
    let mut filled = vec![false; img.data.len()];
    let s = (seed[0] as i64, seed[1] as i64);
    filled[at(s.0, s.1)] = true;
    let mut stack = vec![s];
    while let Some((x, y)) = stack.pop() {
        let mut l = x;
        while l > 0 && !filled[at(l - 1, y)] && joins((l, y), (l - 1, y)) {
            l -= 1;
            filled[at(l, y)] = true;
        }
        let mut r = x;
        while r + 1 < w && !filled[at(r + 1, y)] && joins((r, y), (r + 1, y)) {
            r += 1;
            filled[at(r, y)] = true;
        }
        for xi in l..=r {
            for ny in [y - 1, y + 1] {
                if ny >= 0 && ny < h && !filled[at(xi, ny)] && joins((xi, y), (xi, ny)) {
                    filled[at(xi, ny)] = true;
                    stack.push((xi, ny));
                }
            }
        }
    }
    filled
}

/// Filled pixels of `mask`, and those with an unfilled in-image neighbour.
pub fn mask_sets(mask: &[bool], w: u32, h: u32) -> (Vec<[u32; 2]>, Vec<[u32; 2]>) {
    let mut all = Vec::new();
    let mut edge = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[(y * w + x) as usize] {
                continue;
            }
            all.push([x, y]);
            let n = [
                (x > 0).then(|| (x - 1, y)),
                (x + 1 < w).then_some((x + 1, y)),
                (y > 0).then(|| (x, y - 1)),
                (y + 1 < h).then_some((x, y + 1)),
            ];
            if n.into_iter().flatten().any(|(a, b)| !mask[(b * w + a) as usize]) {
                edge.push([x, y]);
            }
        }
    }
    (all, edge)
}

/// Points as an order-free, exact set.
pub fn point_set(points: &[nalgebra::Vector3<f64>]) -> std::collections::BTreeSet<[u64; 3]> {
    points.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect()
}
