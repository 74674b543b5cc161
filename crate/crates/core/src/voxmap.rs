//! Semantic voxel map: accumulates detection logits and caption references
//! per voxel, clusters voxels into object instances by pseudo-label and
//! 26-connectivity, and derives the 2D disagreement / explored state that
//! drives the disagreement-seeking policy.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::num::argmax;
use crate::perceive::{CaptionRecord, Detection};
use crate::scene::{pixel_ray, AgentState, CameraConfig, CameraPose, Observation, NUM_CLASSES};
use crate::Scalar;

pub const MAP_VERSION: &str = "map/1";

/// Canonical policy grid edge.
pub const POLICY_GRID_K: usize = 128;

pub type CaptionId = u64;

/// Per-voxel accumulated evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelCell {
    pub logit_sum: Vec<Scalar>,
    pub hit_count: u32,
    pub caption_refs: Vec<CaptionId>,
}

impl VoxelCell {
    pub fn pseudo_label(&self) -> usize {
        argmax(&self.logit_sum)
    }
}

/// Sparse voxel map plus the caption records it references.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticVoxelMap {
    pub resolution: f64,
    cells: BTreeMap<[i32; 3], VoxelCell>,
    captions: BTreeMap<CaptionId, CaptionRecord>,
    next_caption_id: CaptionId,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    version: String,
    resolution: f64,
    cells: Vec<([i32; 3], VoxelCell)>,
    captions: Vec<(CaptionId, CaptionRecord)>,
    next_caption_id: CaptionId,
}

impl SemanticVoxelMap {
    pub fn new(resolution: f64) -> Self {
        Self { resolution, ..Default::default() }
    }

    /// Build a map directly from cells; used by labeled-grid tests and tools.
    pub fn from_cells(
        resolution: f64,
        cells: impl IntoIterator<Item = ([i32; 3], VoxelCell)>,
    ) -> Self {
        Self { resolution, cells: cells.into_iter().collect(), ..Default::default() }
    }

    /// Number of stored voxels (the map's V).
    pub fn voxel_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, v: [i32; 3]) -> Option<&VoxelCell> {
        self.cells.get(&v)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[i32; 3], &VoxelCell)> {
        self.cells.iter()
    }

    pub fn caption(&self, id: CaptionId) -> Option<&CaptionRecord> {
        self.captions.get(&id)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(MapFile {
            version: MAP_VERSION.into(),
            resolution: self.resolution,
            cells: self.cells.iter().map(|(k, v)| (*k, v.clone())).collect(),
            captions: self.captions.iter().map(|(k, v)| (*k, v.clone())).collect(),
            next_caption_id: self.next_caption_id,
        })
        .expect("map serializable")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: MapFile = serde_json::from_value(value)?;
        if file.version != MAP_VERSION {
            return Err(Error::Version { expected: MAP_VERSION.into(), found: file.version });
        }
        Ok(Self {
            resolution: file.resolution,
            cells: file.cells.into_iter().collect(),
            captions: file.captions.into_iter().collect(),
            next_caption_id: file.next_caption_id,
        })
    }

    /// Fuse one filtered view into the map. Each masked pixel with finite
    /// depth back-projects along its camera ray to a voxel; that voxel
    /// accumulates the detection's logits and a hit, and records the caption
    /// id once per (voxel, detection).
    pub fn integrate(
        &mut self,
        obs: &Observation,
        dets: &[Detection],
        caps: &[CaptionRecord],
        pose: CameraPose,
    ) -> Result<()> {
        if dets.len() != caps.len() {
            return Err(Error::Contract(format!(
                "detections ({}) and captions ({}) must align 1:1",
                dets.len(),
                caps.len()
            )));
        }
        let camera = CameraConfig {
            width: obs.width,
            height: obs.height,
            fov: obs.fov,
            max_range: obs.max_range,
        };
        // nudge hit points off the entry face into the cell interior
        let push = self.resolution * 1e-6;

        for (det, cap) in dets.iter().zip(caps) {
            let caption_id = self.next_caption_id;
            self.next_caption_id += 1;
            self.captions.insert(caption_id, cap.clone());
            let mut touched: BTreeSet<[i32; 3]> = BTreeSet::new();

            for &p in &det.mask.pixels {
                let x = p as usize % obs.width;
                let y = p as usize / obs.width;
                let depth = obs.depth[p as usize];
                if !depth.is_finite() {
                    continue;
                }
                let dir = pixel_ray(&camera, pose.yaw, x, y);
                let t = depth + push;
                let world = [
                    pose.position[0] + dir[0] * t,
                    pose.position[1] + dir[1] * t,
                    pose.position[2] + dir[2] * t,
                ];
                let voxel = [
                    (world[0] / self.resolution).floor() as i32,
                    (world[1] / self.resolution).floor() as i32,
                    (world[2] / self.resolution).floor() as i32,
                ];
                let cell = self.cells.entry(voxel).or_insert_with(|| VoxelCell {
                    logit_sum: vec![0.0; NUM_CLASSES],
                    hit_count: 0,
                    caption_refs: Vec::new(),
                });
                for (s, l) in cell.logit_sum.iter_mut().zip(&det.logits) {
                    *s += *l;
                }
                cell.hit_count += 1;
                if touched.insert(voxel) {
                    cell.caption_refs.push(caption_id);
                }
            }
        }
        Ok(())
    }
}

/// A clustered object instance: one 26-connected component of voxels sharing
/// a pseudo-label, with the captions of its member voxels pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub instance_id: u32,
    pub pseudo_label: usize,
    pub voxels: Vec<[i32; 3]>,
    pub caption_ids: Vec<CaptionId>,
    pub captions: Vec<CaptionRecord>,
}

impl ObjectInstance {
    pub fn caption_texts(&self) -> Vec<&str> {
        self.captions.iter().map(|c| c.text.as_str()).collect()
    }

    /// Ground-truth object id held by the majority of this instance's
    /// captions; evaluation-only linkage.
    pub fn majority_gt_id(&self) -> Option<u32> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for c in &self.captions {
            *counts.entry(c.object_id_gt).or_insert(0) += 1;
        }
        counts.into_iter().max_by_key(|(_, n)| *n).map(|(id, _)| id)
    }
}

const NEIGHBORS26: [[i32; 3]; 26] = {
    let mut out = [[0i32; 3]; 26];
    let mut i = 0;
    let mut dx = -1;
    while dx <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dz = -1;
            while dz <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[i] = [dx, dy, dz];
                    i += 1;
                }
                dz += 1;
            }
            dy += 1;
        }
        dx += 1;
    }
    out
};

/// Cluster the map into instances: per-voxel pseudo-label is the argmax of
/// summed logits; voxels sharing a label that touch through faces, edges, or
/// corners form one instance. Instance ids increase in discovery order over
/// the sorted voxel set. An empty map yields an empty list.
pub fn cluster_objects(map: &SemanticVoxelMap) -> Vec<ObjectInstance> {
    let labels: BTreeMap<[i32; 3], usize> =
        map.cells().map(|(v, c)| (*v, c.pseudo_label())).collect();

    let mut visited: BTreeSet<[i32; 3]> = BTreeSet::new();
    let mut instances = Vec::new();

    for (&start, &label) in &labels {
        if visited.contains(&start) {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited.insert(start);
        while let Some(v) = queue.pop_front() {
            component.push(v);
            for d in NEIGHBORS26 {
                let n = [v[0] + d[0], v[1] + d[1], v[2] + d[2]];
                if visited.contains(&n) {
                    continue;
                }
                if labels.get(&n) == Some(&label) {
                    visited.insert(n);
                    queue.push_back(n);
                }
            }
        }
        component.sort_unstable();

        let mut caption_ids: Vec<CaptionId> = component
            .iter()
            .flat_map(|v| map.cell(*v).unwrap().caption_refs.iter().copied())
            .collect();
        caption_ids.sort_unstable();
        caption_ids.dedup();
        let captions =
            caption_ids.iter().map(|id| map.caption(*id).expect("caption ref").clone()).collect();

        instances.push(ObjectInstance {
            instance_id: instances.len() as u32,
            pseudo_label: label,
            voxels: component,
            caption_ids,
            captions,
        });
    }
    instances
}

/// Inconsistency of an instance's captions in [0, 1]: the mean over
/// unordered pairs of distinct caption texts of (1 - cosine)/2. Operating on
/// distinct texts makes the score invariant under duplication of the whole
/// caption multiset; fewer than two distinct texts score 0.
pub fn object_disagreement(instance: &ObjectInstance, embedder: &dyn Embedder) -> Scalar {
    let mut texts: Vec<&str> = instance.caption_texts();
    texts.sort_unstable();
    texts.dedup();
    if texts.len() < 2 {
        return 0.0;
    }
    let embeddings: Vec<_> = texts.iter().map(|t| embedder.embed(t)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            total += (1.0 - cosine(&embeddings[i], &embeddings[j])) / 2.0;
            pairs += 1;
        }
    }
    (total / pairs as f64).clamp(0.0, 1.0)
}

/// World-to-policy-grid scaling: the scene's (x, y) cell extents map onto a
/// K x K canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub k: usize,
    /// Scene extent in cells along x and y.
    pub world_cells: [usize; 2],
    /// Meters per scene cell.
    pub cell_size: f64,
}

impl MapGeometry {
    pub fn new(world_cells: [usize; 2], cell_size: f64) -> Self {
        Self { k: POLICY_GRID_K, world_cells, cell_size }
    }

    /// Half-open policy-grid column range covered by scene cell x.
    pub fn col_span(&self, x: i32) -> (usize, usize) {
        span(x, self.world_cells[0], self.k)
    }

    pub fn row_span(&self, y: i32) -> (usize, usize) {
        span(y, self.world_cells[1], self.k)
    }

    /// Policy-grid cell (row, col) containing a world position.
    pub fn cell_of_position(&self, p: [f64; 3]) -> (usize, usize) {
        let x = (p[0] / self.cell_size).floor() as i32;
        let y = (p[1] / self.cell_size).floor() as i32;
        (self.row_span(y).0, self.col_span(x).0)
    }

    /// World-space center of a policy-grid cell, at ground level.
    pub fn position_of_cell(&self, row: usize, col: usize) -> [f64; 2] {
        let x = (col as f64 + 0.5) / self.k as f64 * self.world_cells[0] as f64 * self.cell_size;
        let y = (row as f64 + 0.5) / self.k as f64 * self.world_cells[1] as f64 * self.cell_size;
        [x, y]
    }
}

fn span(coord: i32, world: usize, k: usize) -> (usize, usize) {
    let c = coord.clamp(0, world as i32 - 1) as usize;
    let lo = c * k / world;
    let hi = (((c + 1) * k).div_ceil(world)).min(k).max(lo + 1);
    (lo, hi)
}

/// Policy input state: disagreement and explored channels on the canonical
/// K x K grid, the agent cell flag, and the agent's global orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub k: usize,
    /// Row-major K*K values in [0, 1].
    pub disagreement: Vec<Scalar>,
    /// Row-major K*K; 1 where observed, 0 where unknown.
    pub explored: Vec<Scalar>,
    pub agent_cell: (usize, usize),
    pub orientation: f64,
}

impl PolicyState {
    pub fn at(values: &[Scalar], k: usize, row: usize, col: usize) -> Scalar {
        values[row * k + col]
    }
}

/// Paint per-instance disagreement values onto the grid; overlapping
/// footprints keep the maximum.
pub fn paint_disagreement(
    entries: &[(&[[i32; 3]], Scalar)],
    geom: &MapGeometry,
) -> Vec<Scalar> {
    let mut canvas = vec![0.0; geom.k * geom.k];
    for (voxels, value) in entries {
        for v in voxels.iter() {
            let (c0, c1) = geom.col_span(v[0]);
            let (r0, r1) = geom.row_span(v[1]);
            for row in r0..r1 {
                for col in c0..c1 {
                    let cell = &mut canvas[row * geom.k + col];
                    if *value > *cell {
                        *cell = *value;
                    }
                }
            }
        }
    }
    canvas
}

/// Assemble the policy state: instance disagreements down-projected onto the
/// (x, y) plane with max-reduce, the explored mask with the agent cell
/// flagged, and the agent's yaw.
pub fn disagreement_map(
    _map: &SemanticVoxelMap,
    instances: &[ObjectInstance],
    agent: &AgentState,
    observed: &[bool],
    geom: &MapGeometry,
    embedder: &dyn Embedder,
) -> PolicyState {
    debug_assert_eq!(observed.len(), geom.k * geom.k);
    let entries: Vec<(&[[i32; 3]], Scalar)> = instances
        .iter()
        .map(|inst| (inst.voxels.as_slice(), object_disagreement(inst, embedder)))
        .collect();
    let disagreement = paint_disagreement(&entries, geom);

    let mut explored: Vec<Scalar> =
        observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let agent_cell = geom.cell_of_position(agent.position);
    explored[agent_cell.0 * geom.k + agent_cell.1] = 1.0;

    PolicyState { k: geom.k, disagreement, explored, agent_cell, orientation: agent.yaw }
}
