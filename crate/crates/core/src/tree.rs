//! Transformation tree: named frames linked by parent→child rigid edges.
//!
//! Each edge stores `T_parent_child`. The chain from the root to any frame is
//! unique; one edge per sensor chain is marked `optimized` and each collection
//! owns one `pattern` edge hanging directly off the root.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;

pub const DEFAULT_ROOT: &str = "world";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("frame `{0}` has more than one parent edge")]
    MultipleParents(String),
    #[error("root frame `{0}` cannot be the child of an edge")]
    RootHasParent(String),
    #[error("cycle or disconnected chain through frame `{0}`")]
    Cycle(String),
    #[error("no pattern edge for collection {0}")]
    MissingPattern(u32),
    #[error("pattern edge for collection {collection} must hang off the root, found parent `{parent}`")]
    PatternParent { collection: u32, parent: String },
    #[error("duplicate pattern edge for collection {0}")]
    DuplicatePattern(u32),
    #[error("edge `{parent}` -> `{child}`: {reason}")]
    InvalidEdge {
        parent: String,
        child: String,
        reason: String,
    },
    #[error("no edge `{0}` -> `{1}`")]
    UnknownEdge(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Static,
    Optimized,
    Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub parent: String,
    pub child: String,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<u32>,
    pub transform: RigidTransform,
}

impl Edge {
    pub fn new(parent: &str, child: &str, kind: EdgeKind, transform: RigidTransform) -> Self {
        Edge {
            parent: parent.to_owned(),
            child: child.to_owned(),
            kind,
            collection: None,
            transform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct TransformTree {
    root: String,
    edges: Vec<Edge>,
    #[serde(skip)]
    parent_edge: HashMap<String, usize>,
    #[serde(skip)]
    pattern_edge: BTreeMap<u32, usize>,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    root: String,
    edges: Vec<Edge>,
}

impl TryFrom<TreeRepr> for TransformTree {
    type Error = TreeError;
    fn try_from(r: TreeRepr) -> Result<Self, TreeError> {
        TransformTree::from_edges(&r.root, r.edges)
    }
}

impl From<TransformTree> for TreeRepr {
    fn from(t: TransformTree) -> Self {
        TreeRepr {
            root: t.root,
            edges: t.edges,
        }
    }
}

/// Frame name used for the pattern of a collection when the tree creates it.
pub fn pattern_frame_name(collection: u32) -> String {
    format!("pattern_c{collection}")
}

impl TransformTree {
    pub fn new(root: &str) -> Self {
        TransformTree {
            root: root.to_owned(),
            edges: Vec::new(),
            parent_edge: HashMap::new(),
            pattern_edge: BTreeMap::new(),
        }
    }

    /// Builds and validates a tree from an unordered edge list.
    pub fn from_edges(root: &str, edges: Vec<Edge>) -> Result<Self, TreeError> {
        let mut tree = TransformTree::new(root);
        for (i, e) in edges.iter().enumerate() {
            if e.child == root {
                return Err(TreeError::RootHasParent(root.to_owned()));
            }
            if e.parent == e.child {
                return Err(TreeError::Cycle(e.child.clone()));
            }
            if !e.transform.is_valid(1e-9) {
                return Err(TreeError::InvalidEdge {
                    parent: e.parent.clone(),
                    child: e.child.clone(),
                    reason: "rotation is not orthonormal with det +1 (tolerance 1e-9)".into(),
                });
            }
            match (e.kind, e.collection) {
                (EdgeKind::Pattern, Some(c)) => {
                    if e.parent != root {
                        return Err(TreeError::PatternParent {
                            collection: c,
                            parent: e.parent.clone(),
                        });
                    }
                    if tree.pattern_edge.insert(c, i).is_some() {
                        return Err(TreeError::DuplicatePattern(c));
                    }
                }
                (EdgeKind::Pattern, None) => {
                    return Err(TreeError::InvalidEdge {
                        parent: e.parent.clone(),
                        child: e.child.clone(),
                        reason: "pattern edge without a collection id".into(),
                    })
                }
                (_, Some(_)) => {
                    return Err(TreeError::InvalidEdge {
                        parent: e.parent.clone(),
                        child: e.child.clone(),
                        reason: "only pattern edges carry a collection id".into(),
                    })
                }
                _ => {}
            }
            if tree.parent_edge.insert(e.child.clone(), i).is_some() {
                return Err(TreeError::MultipleParents(e.child.clone()));
            }
        }
        tree.edges = edges;
        // every chain must terminate at the root
        for e in &tree.edges {
            tree.path_edges(&e.child)?;
        }
        Ok(tree)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> &Edge {
        &self.edges[index]
    }

    pub fn contains_frame(&self, frame: &str) -> bool {
        frame == self.root || self.parent_edge.contains_key(frame)
    }

    pub fn frames(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.root.as_str()).chain(self.edges.iter().map(|e| e.child.as_str()))
    }

    /// Appends an edge whose parent already exists, so the tree stays acyclic.
    pub fn add_edge(&mut self, edge: Edge) -> Result<usize, TreeError> {
        if !self.contains_frame(&edge.parent) {
            return Err(TreeError::UnknownFrame(edge.parent));
        }
        if edge.child == self.root {
            return Err(TreeError::RootHasParent(edge.child));
        }
        if self.parent_edge.contains_key(&edge.child) {
            return Err(TreeError::MultipleParents(edge.child));
        }
        let idx = self.edges.len();
        if edge.kind == EdgeKind::Pattern {
            let c = edge.collection.ok_or_else(|| TreeError::InvalidEdge {
                parent: edge.parent.clone(),
                child: edge.child.clone(),
                reason: "pattern edge without a collection id".into(),
            })?;
            if edge.parent != self.root {
                return Err(TreeError::PatternParent {
                    collection: c,
                    parent: edge.parent,
                });
            }
            if self.pattern_edge.contains_key(&c) {
                return Err(TreeError::DuplicatePattern(c));
            }
            self.pattern_edge.insert(c, idx);
        }
        self.parent_edge.insert(edge.child.clone(), idx);
        self.edges.push(edge);
        Ok(idx)
    }

    pub fn find_edge(&self, parent: &str, child: &str) -> Option<usize> {
        self.parent_edge
            .get(child)
            .copied()
            .filter(|&i| self.edges[i].parent == parent)
    }

    pub fn set_transform(&mut self, index: usize, t: RigidTransform) {
        self.edges[index].transform = t;
    }

    /// Edge indices from the root down to `frame`.
    pub fn path_edges(&self, frame: &str) -> Result<Vec<usize>, TreeError> {
        let mut path = Vec::new();
        let mut cur = frame;
        while cur != self.root {
            let &idx = self
                .parent_edge
                .get(cur)
                .ok_or_else(|| TreeError::UnknownFrame(cur.to_owned()))?;
            path.push(idx);
            if path.len() > self.edges.len() {
                return Err(TreeError::Cycle(frame.to_owned()));
            }
            cur = &self.edges[idx].parent;
        }
        path.reverse();
        Ok(path)
    }

    /// `T_root_frame`, the product of the edges along the unique path.
    pub fn chain_to(&self, frame: &str) -> Result<RigidTransform, TreeError> {
        Ok(self
            .path_edges(frame)?
            .into_iter()
            .fold(RigidTransform::identity(), |acc, i| {
                acc.compose(&self.edges[i].transform)
            }))
    }

    /// `T_from_to`: maps coordinates of `to` into `from`.
    pub fn relative(&self, from: &str, to: &str) -> Result<RigidTransform, TreeError> {
        Ok(self.chain_to(from)?.inverse().compose(&self.chain_to(to)?))
    }

    pub fn pattern_edge(&self, collection: u32) -> Option<usize> {
        self.pattern_edge.get(&collection).copied()
    }

    pub fn pattern_collections(&self) -> impl Iterator<Item = u32> + '_ {
        self.pattern_edge.keys().copied()
    }

    pub fn pattern_pose(&self, collection: u32) -> Result<RigidTransform, TreeError> {
        self.pattern_edge(collection)
            .map(|i| self.edges[i].transform)
            .ok_or(TreeError::MissingPattern(collection))
    }

    /// Inserts or updates the pattern edge of `collection`.
    pub fn set_pattern_pose(&mut self, collection: u32, pose: RigidTransform) {
        match self.pattern_edge(collection) {
            Some(i) => self.edges[i].transform = pose,
            None => {
                let mut edge = Edge::new(
                    &self.root.clone(),
                    &pattern_frame_name(collection),
                    EdgeKind::Pattern,
                    pose,
                );
                edge.collection = Some(collection);
                // the root always exists and pattern frames are unique per collection
                self.add_edge(edge).expect("pattern edge insertion");
            }
        }
    }

    /// `ˢTᵖ` for one collection: maps pattern coordinates into the sensor frame.
    pub fn sensor_to_pattern(
        &self,
        sensor_frame: &str,
        collection: u32,
    ) -> Result<RigidTransform, TreeError> {
        let pattern = self.pattern_pose(collection)?;
        Ok(self.chain_to(sensor_frame)?.inverse().compose(&pattern))
    }

    /// Copy of the tree with every pattern edge removed.
    pub fn without_patterns(&self) -> TransformTree {
        let edges = self
            .edges
            .iter()
            .filter(|e| e.kind != EdgeKind::Pattern)
            .cloned()
            .collect();
        TransformTree::from_edges(&self.root, edges).expect("subtree of a valid tree")
    }

    /// Optimized edges along the root→frame chain.
    pub fn optimized_on_chain(&self, frame: &str) -> Result<Vec<usize>, TreeError> {
        Ok(self
            .path_edges(frame)?
            .into_iter()
            .filter(|&i| self.edges[i].kind == EdgeKind::Optimized)
            .collect())
    }

    /// Applies `g · T` to every edge leaving the root. Used to express the
    /// whole tree in a different global gauge.
    pub fn apply_global(&mut self, g: &RigidTransform) {
        let root = self.root.clone();
        for e in self.edges.iter_mut().filter(|e| e.parent == root) {
            e.transform = g.compose(&e.transform);
        }
    }
}
