use super::SkeletonError;

/// Joint names plus a rooted tree of (parent, child) bone edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonLayout {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    root: usize,
    parents: Vec<Option<usize>>,
}

const NTU_JOINTS: [&str; 25] = [
    "spine_base",
    "spine_mid",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_foot",
    "spine_shoulder",
    "left_hand_tip",
    "left_thumb",
    "right_hand_tip",
    "right_thumb",
];

const NTU_EDGES: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (20, 2),
    (2, 3),
    (20, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 21),
    (7, 22),
    (20, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (11, 23),
    (11, 24),
    (0, 12),
    (12, 13),
    (13, 14),
    (14, 15),
    (0, 16),
    (16, 17),
    (17, 18),
    (18, 19),
];

impl SkeletonLayout {
    /// Validates that `edges` form a tree over all joints, directed away
    /// from `root`.
    pub fn new(
        names: Vec<String>,
        edges: Vec<(usize, usize)>,
        root: usize,
    ) -> Result<Self, SkeletonError> {
        let v = names.len();
        if v == 0 || root >= v {
            return Err(SkeletonError::InvalidLayout(format!(
                "root {root} invalid for {v} joints"
            )));
        }
        if edges.len() != v - 1 {
            return Err(SkeletonError::InvalidLayout(format!(
                "{} edges cannot span {v} joints as a tree",
                edges.len()
            )));
        }
        let mut parents = vec![None; v];
        for &(p, c) in &edges {
            if p >= v || c >= v {
                return Err(SkeletonError::InvalidLayout(format!(
                    "edge ({p}, {c}) out of range"
                )));
            }
            if c == root || parents[c].is_some() || p == c {
                return Err(SkeletonError::InvalidLayout(format!(
                    "joint {c} has more than one parent"
                )));
            }
            parents[c] = Some(p);
        }
        // Every joint must reach the root without revisiting a joint.
        for start in 0..v {
            let mut j = start;
            let mut steps = 0;
            while let Some(p) = parents[j] {
                j = p;
                steps += 1;
                if steps > v {
                    return Err(SkeletonError::InvalidLayout("cycle in edges".into()));
                }
            }
            if j != root {
                return Err(SkeletonError::InvalidLayout(format!(
                    "joint {start} is not connected to the root"
                )));
            }
        }
        Ok(Self {
            names,
            edges,
            root,
            parents,
        })
    }

    /// The 25-joint Kinect v2 layout used by NTU RGB+D, rooted at the spine base.
    pub fn ntu25() -> Self {
        Self::new(
            NTU_JOINTS.iter().map(|s| s.to_string()).collect(),
            NTU_EDGES.to_vec(),
            0,
        )
        .expect("built-in layout is a tree")
    }

    /// A simple chain `0 -> 1 -> ... -> v-1`.
    pub fn chain(v: usize) -> Result<Self, SkeletonError> {
        Self::new(
            (0..v).map(|i| format!("j{i}")).collect(),
            (1..v).map(|i| (i - 1, i)).collect(),
            0,
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents.get(joint).copied().flatten()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Joints ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            let p = order[i];
            order.extend(self.edges.iter().filter(|e| e.0 == p).map(|e| e.1));
            i += 1;
        }
        order
    }
}
