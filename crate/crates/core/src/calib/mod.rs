//! Joint extrinsic calibration.
//!
//! Unknowns are the calibrated edge of every non-anchored sensor and one
//! root-frame pattern pose per collection, six scalars each (rotation
//! vector, translation). Pattern poses are seeded from single detections
//! ([`init`]), then everything is refined together by Levenberg–Marquardt
//! ([`lm`]) over the residuals of [`crate::residuals`].

pub mod init;
pub mod lm;
pub mod problem;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::io::Provenance;
use crate::residuals::{LongitudinalMode, Weights};
use crate::tree::{EdgeKind, TransformTree};

pub use init::{initialize_pattern_poses, InitReport};
pub use lm::{LmOptions, Status};
pub use problem::{anchored_sensors, Problem, ProblemOptions, SensorRms, TermKind};

pub const RESULT_VERSION: u32 = 1;

/// Bound on re-solves after quarter-turn fixes of range-only collections.
const MAX_QUARTER_TURN_ROUNDS: usize = 3;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("invalid options: {0}")]
    Options(String),
    #[error("anchor `{0}` is not a sensor of the dataset")]
    UnknownAnchor(String),
    #[error("tree: {0}")]
    Tree(String),
    #[error("collection {0} has no pattern pose")]
    MissingPatternPose(u32),
    #[error("no collection could be initialized")]
    NoCollections,
    #[error("result document: {0}")]
    Document(String),
}

/// Which sensor edges stay fixed to remove the global gauge freedom.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "sensor", rename_all = "snake_case")]
pub enum Anchor {
    /// Sensors flagged `anchored` in the dataset, else the first sensor.
    #[default]
    Default,
    Sensor(String),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationOptions {
    #[serde(default)]
    pub anchor: Anchor,
    #[serde(default)]
    pub solver: LmOptions,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub longitudinal: LongitudinalMode,
    /// Refine pattern poses only; every sensor edge stays at its initial value.
    #[serde(default)]
    pub freeze_sensors: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            anchor: Anchor::Default,
            solver: LmOptions::default(),
            weights: Weights::default(),
            longitudinal: LongitudinalMode::default(),
            freeze_sensors: false,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<(), CalibError> {
        self.solver.validate().map_err(CalibError::Options)?;
        self.weights.validate().map_err(CalibError::Options)
    }

    fn problem_options(&self) -> ProblemOptions {
        ProblemOptions {
            anchor: self.anchor.clone(),
            weights: self.weights,
            longitudinal: self.longitudinal,
            freeze_sensors: self.freeze_sensors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationResult {
    pub version: u32,
    pub provenance: Provenance,
    pub status: Status,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost. When
    /// range-only collections are re-oriented the solve restarts from a
    /// lower cost and its sequence is appended.
    pub accepted_costs: Vec<f64>,
    pub anchored: Vec<String>,
    /// Optimized tree, including one pattern edge per calibrated collection.
    pub tree: TransformTree,
    /// Sensor whose detection seeded each pattern pose; absent for poses
    /// taken from the initial tree.
    pub pattern_sources: BTreeMap<u32, String>,
    /// Collections left out because no pose could be initialized.
    pub skipped_collections: Vec<u32>,
    pub rms: Vec<SensorRms>,
    /// RGB corners behind their camera at the solution.
    pub behind_camera: usize,
}

impl CalibrationResult {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<CalibrationResult, CalibError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let r: CalibrationResult = serde_path_to_error::deserialize(de)
            .map_err(|e| CalibError::Document(format!("{}: {}", e.path(), e.inner())))?;
        if r.version != RESULT_VERSION {
            return Err(CalibError::Document(format!("unsupported result version {}", r.version)));
        }
        Ok(r)
    }

    /// The optimized tree without pattern edges.
    pub fn sensor_tree(&self) -> TransformTree {
        self.tree.without_patterns()
    }
}

/// Sensor part of `candidate` must match the dataset's tree edge for edge.
fn check_compatible(dataset: &Dataset, candidate: &TransformTree) -> Result<(), CalibError> {
    let a: Vec<(&str, &str, EdgeKind)> = dataset
        .tree
        .edges()
        .iter()
        .filter(|e| e.kind != EdgeKind::Pattern)
        .map(|e| (e.parent.as_str(), e.child.as_str(), e.kind))
        .collect();
    let b: Vec<(&str, &str, EdgeKind)> = candidate
        .edges()
        .iter()
        .filter(|e| e.kind != EdgeKind::Pattern)
        .map(|e| (e.parent.as_str(), e.child.as_str(), e.kind))
        .collect();
    if a != b || dataset.tree.root() != candidate.root() {
        return Err(CalibError::Tree("initial tree does not have the dataset's frames and edges".into()));
    }
    Ok(())
}

/// Calibrates `dataset` starting from `initial`. Pattern poses present in
/// `initial` are used as they are; the others are initialized from
/// detections.
pub fn calibrate(dataset: &Dataset, initial: &TransformTree, opts: &CalibrationOptions) -> Result<CalibrationResult, CalibError> {
    opts.validate()?;
    check_compatible(dataset, initial)?;
    if let Anchor::Sensor(id) = &opts.anchor {
        if dataset.sensor(id).is_none() {
            return Err(CalibError::UnknownAnchor(id.clone()));
        }
    }
    let mut tree = initial.without_patterns();
    let mut pending = Dataset::new(dataset.pattern, dataset.tree.clone(), dataset.sensors.clone());
    for c in &dataset.collections {
        match initial.pattern_pose(c.id) {
            Ok(p) => tree.set_pattern_pose(c.id, p),
            Err(_) => pending.collections.push(c.clone()),
        }
    }
    let init = initialize_pattern_poses(&pending, &tree, opts.weights)?;
    for (id, pose) in &init.poses {
        tree.set_pattern_pose(*id, *pose);
    }
    let mut used = Dataset::new(dataset.pattern, dataset.tree.clone(), dataset.sensors.clone());
    used.collections = dataset
        .collections
        .iter()
        .filter(|c| !init.skipped.contains(&c.id) && !c.detections.is_empty())
        .cloned()
        .collect();
    if used.collections.is_empty() {
        return Err(CalibError::NoCollections);
    }
    let popts = opts.problem_options();
    let mut problem = Problem::new(&used, &tree, &popts)?;
    let mut report = lm::solve(&problem, &problem.initial_params(), &opts.solver);
    let initial_cost = report.initial_cost;
    let mut accepted_costs = report.accepted_costs.clone();
    let mut iterations = report.iterations;
    for _ in 0..MAX_QUARTER_TURN_ROUNDS {
        let remaining = opts.solver.max_iters.saturating_sub(iterations);
        if report.status == Status::Degenerate || remaining == 0 {
            break;
        }
        let solved = problem.unpack(&report.x);
        let fixes = init::quarter_turn_fixes(&used, &solved, opts.weights)?;
        if fixes.is_empty() {
            break;
        }
        let mut turned = solved;
        for (id, pose) in &fixes {
            turned.set_pattern_pose(*id, *pose);
        }
        let next = Problem::new(&used, &turned, &popts)?;
        let x0 = next.initial_params();
        if next.cost(&x0) >= report.final_cost {
            break;
        }
        log::info!("re-solving with {} collection(s) turned a quarter turn", fixes.len());
        problem = next;
        let budget = LmOptions {
            max_iters: remaining,
            ..opts.solver
        };
        report = lm::solve(&problem, &x0, &budget);
        accepted_costs.extend_from_slice(&report.accepted_costs);
        iterations += report.iterations;
    }
    if report.status == Status::Degenerate {
        log::warn!("solver stopped on a singular system; some parameters are unconstrained");
    }
    let (_, behind_camera) = problem.residuals_counted(&report.x);
    if behind_camera > 0 {
        log::warn!("{behind_camera} RGB corner(s) project behind their camera at the solution");
    }
    let seed = dataset
        .meta
        .get("generator")
        .and_then(|g| g.get("seed"))
        .and_then(|s| s.as_u64());
    Ok(CalibrationResult {
        version: RESULT_VERSION,
        provenance: Provenance::new(opts, seed),
        status: report.status,
        iterations,
        initial_cost,
        final_cost: report.final_cost,
        accepted_costs,
        anchored: problem.anchored().to_vec(),
        tree: problem.unpack(&report.x),
        pattern_sources: init.sources,
        skipped_collections: init.skipped,
        rms: problem.rms_by_sensor(&report.x),
        behind_camera,
    })
}
