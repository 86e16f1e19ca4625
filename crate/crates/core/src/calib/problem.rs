//! Parameter packing and residual evaluation for the joint solve.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Anchor, CalibError};
use crate::camera::CameraIntrinsics;
use crate::dataset::{Dataset, Detection};
use crate::geometry::{PoseParam, RigidTransform};
use crate::pattern::BoardRect;
use crate::residuals::{depth_points, longitudinal_distance, LongitudinalMode, Weights};
use crate::tree::TransformTree;

/// Forward-difference step for every parameter (meters or radians).
pub const JACOBIAN_STEP: f64 = 1e-6;

/// What a 6-scalar parameter slot stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SlotOwner {
    Edge { index: usize, parent: String, child: String },
    Pattern { collection: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub owner: SlotOwner,
    pub offset: usize,
}

/// Row classes of the solver residual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Rgb,
    LidarOrthogonal,
    LidarLongitudinal,
    DepthOrthogonal,
    DepthLongitudinal,
}

impl TermKind {
    pub const ALL: [TermKind; 5] = [
        TermKind::Rgb,
        TermKind::LidarOrthogonal,
        TermKind::LidarLongitudinal,
        TermKind::DepthOrthogonal,
        TermKind::DepthLongitudinal,
    ];
}

#[derive(Debug, Clone)]
pub struct ProblemOptions {
    pub anchor: Anchor,
    pub weights: Weights,
    pub longitudinal: LongitudinalMode,
    /// Optimize pattern poses only.
    pub freeze_sensors: bool,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions {
            anchor: Anchor::Default,
            weights: Weights::default(),
            longitudinal: LongitudinalMode::default(),
            freeze_sensors: false,
        }
    }
}

/// Sensor pose as `pre · E · post`, with `E` either a parameter slot or fixed.
#[derive(Debug, Clone)]
struct SensorModel {
    pre: RigidTransform,
    fixed: RigidTransform,
    post: RigidTransform,
    slot: Option<usize>,
}

impl SensorModel {
    fn pose(&self, edge: Option<&RigidTransform>) -> RigidTransform {
        self.pre.compose(edge.unwrap_or(&self.fixed)).compose(&self.post)
    }
}

#[derive(Debug, Clone)]
enum BlockData {
    Rgb {
        intr: CameraIntrinsics,
        /// (pattern corner, detected pixel)
        corners: Vec<(Vector3<f64>, Vector2<f64>)>,
    },
    Range {
        depth: bool,
        inside: Vec<Vector3<f64>>,
        boundary: Vec<Vector3<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Block {
    collection: u32,
    sensor: usize,
    pattern_slot: usize,
    data: BlockData,
    rows: Range<usize>,
}

impl Block {
    fn len(&self) -> usize {
        self.rows.len()
    }
}

/// The packed least-squares problem for one dataset.
#[derive(Debug, Clone)]
pub struct Problem {
    tree: TransformTree,
    sensor_ids: Vec<String>,
    sensors: Vec<SensorModel>,
    slots: Vec<ParamSlot>,
    blocks: Vec<Block>,
    n_rows: usize,
    weights: Weights,
    longitudinal: LongitudinalMode,
    rect: BoardRect,
    samples: Vec<Vector3<f64>>,
    anchored: Vec<String>,
    x0: Vec<f64>,
}

/// Ids of the sensors whose calibrated edge stays fixed.
pub fn anchored_sensors(dataset: &Dataset, anchor: &Anchor) -> Result<Vec<String>, CalibError> {
    Ok(match anchor {
        Anchor::None => Vec::new(),
        Anchor::Sensor(id) => {
            if dataset.sensor(id).is_none() {
                return Err(CalibError::UnknownAnchor(id.clone()));
            }
            vec![id.clone()]
        }
        Anchor::Default => {
            let flagged: Vec<String> = dataset.sensors.iter().filter(|s| s.anchored).map(|s| s.id.clone()).collect();
            if flagged.is_empty() {
                dataset.sensors.iter().take(1).map(|s| s.id.clone()).collect()
            } else {
                flagged
            }
        }
    })
}

impl Problem {
    /// Packs `tree` (which must hold a pattern pose for every collection)
    /// and the dataset's detections.
    pub fn new(dataset: &Dataset, tree: &TransformTree, opts: &ProblemOptions) -> Result<Problem, CalibError> {
        opts.weights.validate().map_err(CalibError::Options)?;
        let anchored = if opts.freeze_sensors {
            dataset.sensors.iter().map(|s| s.id.clone()).collect()
        } else {
            anchored_sensors(dataset, &opts.anchor)?
        };
        let edge_of = |id: &str| -> Result<usize, CalibError> {
            let s = dataset.sensor(id).expect("known sensor");
            tree.find_edge(&s.calibrated_edge.parent, &s.calibrated_edge.child)
                .ok_or_else(|| CalibError::Tree(format!("calibrated edge of `{id}` is missing from the tree")))
        };
        let fixed_edges: Vec<usize> = anchored.iter().map(|id| edge_of(id)).collect::<Result<_, _>>()?;
        let mut slots = Vec::new();
        let mut x0 = Vec::new();
        let mut push_slot = |owner: SlotOwner, t: &RigidTransform, slots: &mut Vec<ParamSlot>| {
            slots.push(ParamSlot { owner, offset: x0.len() });
            x0.extend_from_slice(&PoseParam::from_transform(t).to_array());
            slots.len() - 1
        };
        let mut edge_slots: Vec<(usize, usize)> = Vec::new();
        let mut sensors = Vec::new();
        for s in &dataset.sensors {
            let e = edge_of(&s.id)?;
            let edge = tree.edge(e);
            let slot = if fixed_edges.contains(&e) {
                None
            } else {
                match edge_slots.iter().find(|(ei, _)| *ei == e) {
                    Some(&(_, k)) => Some(k),
                    None => {
                        let owner = SlotOwner::Edge {
                            index: e,
                            parent: edge.parent.clone(),
                            child: edge.child.clone(),
                        };
                        let k = push_slot(owner, &edge.transform, &mut slots);
                        edge_slots.push((e, k));
                        Some(k)
                    }
                }
            };
            let pre = tree.chain_to(&edge.parent).map_err(|e| CalibError::Tree(e.to_string()))?;
            let post = tree.relative(&edge.child, &s.data_frame).map_err(|e| CalibError::Tree(e.to_string()))?;
            sensors.push(SensorModel {
                pre,
                fixed: edge.transform,
                post,
                slot,
            });
        }
        let mut blocks = Vec::new();
        let mut n_rows = 0;
        for c in &dataset.collections {
            if c.detections.is_empty() {
                continue;
            }
            let pose = tree.pattern_pose(c.id).map_err(|_| CalibError::MissingPatternPose(c.id))?;
            let pattern_slot = push_slot(SlotOwner::Pattern { collection: c.id }, &pose, &mut slots);
            for (sid, det) in &c.detections {
                let si = dataset.sensor_index(sid).expect("validated sensor id");
                let spec = &dataset.sensors[si];
                let data = match det {
                    Detection::Rgb(d) => BlockData::Rgb {
                        intr: spec.intrinsics.expect("validated intrinsics"),
                        corners: d.corners.iter().map(|k| (dataset.pattern.corner(k.id), k.pixel)).collect(),
                    },
                    Detection::Lidar3d(d) => BlockData::Range {
                        depth: false,
                        inside: d.inside.clone(),
                        boundary: d.boundary.clone(),
                    },
                    Detection::Depth(d) => {
                        let intr = spec.intrinsics.as_ref().expect("validated intrinsics");
                        BlockData::Range {
                            depth: true,
                            inside: depth_points(&d.inside, intr),
                            boundary: depth_points(&d.boundary, intr),
                        }
                    }
                };
                let len = match &data {
                    BlockData::Rgb { corners, .. } => 2 * corners.len(),
                    BlockData::Range { inside, boundary, .. } => inside.len() + boundary.len(),
                };
                blocks.push(Block {
                    collection: c.id,
                    sensor: si,
                    pattern_slot,
                    data,
                    rows: n_rows..n_rows + len,
                });
                n_rows += len;
            }
        }
        Ok(Problem {
            tree: tree.clone(),
            sensor_ids: dataset.sensors.iter().map(|s| s.id.clone()).collect(),
            sensors,
            slots,
            blocks,
            n_rows,
            weights: opts.weights,
            longitudinal: opts.longitudinal,
            rect: dataset.pattern.rect(),
            samples: dataset.pattern.boundary_samples(),
            anchored,
            x0,
        })
    }

    pub fn n_params(&self) -> usize {
        6 * self.slots.len()
    }

    pub fn n_residuals(&self) -> usize {
        self.n_rows
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn anchored(&self) -> &[String] {
        &self.anchored
    }

    pub fn initial_params(&self) -> Vec<f64> {
        self.x0.clone()
    }

    /// Term class of every residual row.
    pub fn row_kinds(&self) -> Vec<TermKind> {
        let mut kinds = Vec::with_capacity(self.n_rows);
        for b in &self.blocks {
            match &b.data {
                BlockData::Rgb { corners, .. } => kinds.extend(std::iter::repeat_n(TermKind::Rgb, 2 * corners.len())),
                BlockData::Range { depth, inside, boundary } => {
                    let (o, l) = if *depth {
                        (TermKind::DepthOrthogonal, TermKind::DepthLongitudinal)
                    } else {
                        (TermKind::LidarOrthogonal, TermKind::LidarLongitudinal)
                    };
                    kinds.extend(std::iter::repeat_n(o, inside.len()));
                    kinds.extend(std::iter::repeat_n(l, boundary.len()));
                }
            }
        }
        kinds
    }

    fn slot_pose(&self, x: &[f64], slot: usize) -> RigidTransform {
        let o = self.slots[slot].offset;
        PoseParam::from_slice(&x[o..o + 6]).to_transform()
    }

    /// Weighted entries of one block; returns the count of RGB corners that
    /// fell behind the camera (their entries are zero).
    fn eval_block(&self, b: &Block, sensor_edge: Option<&[f64]>, pattern: &[f64], out: &mut [f64]) -> usize {
        let edge = sensor_edge.map(|p| PoseParam::from_slice(p).to_transform());
        let sensor = self.sensors[b.sensor].pose(edge.as_ref());
        let pattern = PoseParam::from_slice(pattern).to_transform();
        match &b.data {
            BlockData::Rgb { intr, corners } => {
                let t_sp = sensor.inverse().compose(&pattern);
                let w = self.weights.rgb;
                let mut behind = 0;
                for (k, (q, px)) in corners.iter().enumerate() {
                    let p = t_sp.transform_point(q);
                    match intr.project(&p) {
                        Ok(uv) => {
                            out[2 * k] = w * (px.x - uv.x);
                            out[2 * k + 1] = w * (px.y - uv.y);
                        }
                        Err(_) => {
                            out[2 * k] = 0.0;
                            out[2 * k + 1] = 0.0;
                            behind += 1;
                        }
                    }
                }
                behind
            }
            BlockData::Range { inside, boundary, .. } => {
                let t_ps = pattern.inverse().compose(&sensor);
                let w = self.weights.range;
                for (o, p) in out.iter_mut().zip(inside) {
                    *o = w * t_ps.transform_point(p).z;
                }
                for (o, p) in out[inside.len()..].iter_mut().zip(boundary) {
                    let xy = t_ps.transform_point(p).xy();
                    *o = w * longitudinal_distance(&xy, &self.rect, &self.samples, self.longitudinal);
                }
                0
            }
        }
    }

    fn block_params<'a>(&self, b: &Block, x: &'a [f64]) -> (Option<&'a [f64]>, &'a [f64]) {
        let edge = self.sensors[b.sensor].slot.map(|s| {
            let o = self.slots[s].offset;
            &x[o..o + 6]
        });
        let o = self.slots[b.pattern_slot].offset;
        (edge, &x[o..o + 6])
    }

    /// Weighted residual vector and the behind-camera count.
    pub fn residuals_counted(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let parts: Vec<(Vec<f64>, usize)> = self
            .blocks
            .par_iter()
            .map(|b| {
                let mut out = vec![0.0; b.len()];
                let (e, p) = self.block_params(b, x);
                let behind = self.eval_block(b, e, p, &mut out);
                (out, behind)
            })
            .collect();
        let mut r = Vec::with_capacity(self.n_rows);
        let mut behind = 0;
        for (v, k) in parts {
            r.extend(v);
            behind += k;
        }
        (r, behind)
    }

    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.residuals_counted(x).0
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().map(|v| v * v).sum()
    }

    /// Forward-difference Jacobian of one block with respect to its (at most
    /// twelve) parameters, column-major `rows × cols`, plus the global
    /// column offsets.
    fn block_jacobian(&self, b: &Block, x: &[f64], r: &[f64]) -> (Vec<usize>, DMatrix<f64>) {
        let (edge, pattern) = self.block_params(b, x);
        let mut cols = Vec::with_capacity(12);
        if let Some(s) = self.sensors[b.sensor].slot {
            cols.extend(self.slots[s].offset..self.slots[s].offset + 6);
        }
        cols.extend(self.slots[b.pattern_slot].offset..self.slots[b.pattern_slot].offset + 6);
        let base = &r[b.rows.clone()];
        let mut j = DMatrix::zeros(b.len(), cols.len());
        let mut out = vec![0.0; b.len()];
        let mut e = [0.0; 6];
        let mut p = [0.0; 6];
        p.copy_from_slice(pattern);
        if let Some(edge) = edge {
            e.copy_from_slice(edge);
        }
        for k in 0..cols.len() {
            let (mut e2, mut p2) = (e, p);
            if edge.is_some() && k < 6 {
                e2[k] += JACOBIAN_STEP;
            } else {
                p2[k - if edge.is_some() { 6 } else { 0 }] += JACOBIAN_STEP;
            }
            self.eval_block(b, edge.map(|_| &e2[..]), &p2, &mut out);
            for (row, (a, z)) in out.iter().zip(base).enumerate() {
                j[(row, k)] = (a - z) / JACOBIAN_STEP;
            }
        }
        (cols, j)
    }

    /// `JᵀJ` and `Jᵀr` at `x` (with `r = residuals(x)`). Blocks are
    /// differentiated in parallel and summed in block order.
    pub fn normal_equations(&self, x: &[f64], r: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_params();
        let parts: Vec<(Vec<usize>, DMatrix<f64>, DVector<f64>)> = self
            .blocks
            .par_iter()
            .map(|b| {
                let (cols, j) = self.block_jacobian(b, x, r);
                let rb = DVector::from_column_slice(&r[b.rows.clone()]);
                let jt = j.transpose();
                (cols, &jt * &j, jt * rb)
            })
            .collect();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for (cols, jtj, jtr) in parts {
            for (a, &ca) in cols.iter().enumerate() {
                g[ca] += jtr[a];
                for (bb, &cb) in cols.iter().enumerate() {
                    h[(ca, cb)] += jtj[(a, bb)];
                }
            }
        }
        (h, g)
    }

    /// Full forward-difference Jacobian (rows × params); entries outside each
    /// block's dependency columns are exactly zero.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let r = self.residuals(x);
        let mut j = DMatrix::zeros(self.n_rows, self.n_params());
        for b in &self.blocks {
            let (cols, jb) = self.block_jacobian(b, x, &r);
            for (k, &c) in cols.iter().enumerate() {
                for row in 0..b.len() {
                    j[(b.rows.start + row, c)] = jb[(row, k)];
                }
            }
        }
        j
    }

    /// Boolean mask of the entries a block may touch.
    pub fn sparsity(&self) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(self.n_rows, self.n_params(), false);
        for b in &self.blocks {
            let mut cols: Vec<usize> = Vec::new();
            if let Some(s) = self.sensors[b.sensor].slot {
                cols.extend(self.slots[s].offset..self.slots[s].offset + 6);
            }
            cols.extend(self.slots[b.pattern_slot].offset..self.slots[b.pattern_slot].offset + 6);
            for row in b.rows.clone() {
                for &c in &cols {
                    m[(row, c)] = true;
                }
            }
        }
        m
    }

    /// Wraps every rotation vector back below π.
    pub fn canonicalize(&self, x: &mut [f64]) {
        for s in &self.slots {
            let mut p = PoseParam::from_slice(&x[s.offset..s.offset + 6]);
            p.canonicalize();
            p.write_to(&mut x[s.offset..s.offset + 6]);
        }
    }

    /// Tree with the parameter values written back into their edges.
    pub fn unpack(&self, x: &[f64]) -> TransformTree {
        let mut tree = self.tree.clone();
        for (k, s) in self.slots.iter().enumerate() {
            let t = self.slot_pose(x, k);
            match &s.owner {
                SlotOwner::Edge { index, .. } => tree.set_transform(*index, t),
                SlotOwner::Pattern { collection } => tree.set_pattern_pose(*collection, t),
            }
        }
        tree
    }

    /// Re-reads the parameter vector from a tree with the same layout.
    pub fn pack(&self, tree: &TransformTree) -> Result<Vec<f64>, CalibError> {
        let mut x = vec![0.0; self.n_params()];
        for s in &self.slots {
            let t = match &s.owner {
                SlotOwner::Edge { index, .. } => tree.edges().get(*index).map(|e| e.transform),
                SlotOwner::Pattern { collection } => tree.pattern_pose(*collection).ok(),
            }
            .ok_or_else(|| CalibError::Tree("tree does not match the problem layout".into()))?;
            PoseParam::from_transform(&t).write_to(&mut x[s.offset..s.offset + 6]);
        }
        Ok(x)
    }

    /// Root-mean-square of the unweighted residual entries per sensor and
    /// term class.
    pub fn rms_by_sensor(&self, x: &[f64]) -> Vec<SensorRms> {
        let r = self.residuals(x);
        let kinds = self.row_kinds();
        let mut acc: Vec<[(f64, usize); 3]> = vec![[(0.0, 0); 3]; self.sensor_ids.len()];
        for b in &self.blocks {
            for row in b.rows.clone() {
                let (slot, w) = match kinds[row] {
                    TermKind::Rgb => (0, self.weights.rgb),
                    TermKind::LidarOrthogonal | TermKind::DepthOrthogonal => (1, self.weights.range),
                    TermKind::LidarLongitudinal | TermKind::DepthLongitudinal => (2, self.weights.range),
                };
                let v = r[row] / w;
                acc[b.sensor][slot].0 += v * v;
                acc[b.sensor][slot].1 += 1;
            }
        }
        let rms = |(s, n): (f64, usize), pairs: usize| (n > 0).then(|| (s / (n / pairs) as f64).sqrt());
        self.sensor_ids
            .iter()
            .zip(acc)
            .map(|(id, a)| SensorRms {
                sensor: id.clone(),
                // two entries per corner: RMS of the per-corner pixel distance
                rgb_px: rms(a[0], 2),
                orthogonal_m: rms(a[1], 1),
                longitudinal_m: rms(a[2], 1),
            })
            .collect()
    }

    /// Collection ids in parameter order.
    pub fn collections(&self) -> Vec<u32> {
        self.slots
            .iter()
            .filter_map(|s| match s.owner {
                SlotOwner::Pattern { collection } => Some(collection),
                _ => None,
            })
            .collect()
    }

    /// Number of residual blocks (one per detection).
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// (collection, sensor id) of every block, in row order.
    pub fn block_ids(&self) -> Vec<(u32, &str)> {
        self.blocks.iter().map(|b| (b.collection, self.sensor_ids[b.sensor].as_str())).collect()
    }
}

/// RMS residual of one sensor per term class (unweighted units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRms {
    pub sensor: String,
    pub rgb_px: Option<f64>,
    pub orthogonal_m: Option<f64>,
    pub longitudinal_m: Option<f64>,
}
