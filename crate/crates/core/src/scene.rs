//! Deterministic synthetic 3D scenes and agent observations.
//!
//! Scenes are room-grid layouts of axis-aligned box objects inside a walled
//! voxel volume. Observations are produced by per-pixel ray marching against
//! the occupancy grid; instead of RGB, each observation carries symbolic
//! fragments (object id, hit pixels, visible fraction) so view-dependent
//! occlusion can drive the caption noise model downstream.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

pub const SCENE_VERSION: &str = "scene/1";
pub const SCENE_SPEC_VERSION: &str = "scene-spec/1";

/// Number of detectable object classes.
pub const NUM_CLASSES: usize = 6;

/// The six indoor object categories the mock detector knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Couch,
    PottedPlant,
    Bed,
    Toilet,
    Tv,
    Table,
}

pub const ALL_CATEGORIES: [Category; NUM_CLASSES] = [
    Category::Couch,
    Category::PottedPlant,
    Category::Bed,
    Category::Toilet,
    Category::Tv,
    Category::Table,
];

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Couch => "couch",
            Category::PottedPlant => "potted plant",
            Category::Bed => "bed",
            Category::Toilet => "toilet",
            Category::Tv => "tv",
            Category::Table => "table",
        }
    }

    pub fn index(self) -> usize {
        ALL_CATEGORIES.iter().position(|c| *c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Category {
        ALL_CATEGORIES[i % NUM_CLASSES]
    }

    /// Box extent in cells (x, y, z).
    fn extent(self) -> [usize; 3] {
        match self {
            Category::Couch => [4, 2, 2],
            Category::PottedPlant => [1, 1, 2],
            Category::Bed => [4, 3, 1],
            Category::Toilet => [1, 1, 2],
            Category::Tv => [3, 1, 2],
            Category::Table => [3, 2, 1],
        }
    }
}

/// Attribute word pools used to compose ground-truth captions; shared with
/// the noise model and the toy captioner vocabulary.
pub const COLORS: [&str; 8] = ["red", "blue", "green", "white", "black", "brown", "gray", "yellow"];
pub const MATERIALS: [&str; 6] = ["wooden", "leather", "metal", "plastic", "fabric", "ceramic"];
pub const CONTEXTS: [&str; 6] = ["window", "door", "wall", "corner", "shelf", "rug"];

/// Ground-truth object: category, attribute words, annotation caption, voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGT {
    pub id: u32,
    pub category: Category,
    pub attribute_tokens: Vec<String>,
    pub gt_caption: String,
    pub voxels: Vec<[i32; 3]>,
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Grid extent in cells per axis; each must be >= 8.
    pub bounds: [usize; 3],
    pub n_objects: usize,
    /// Edge length of one cell in meters.
    pub cell_size: f64,
    /// Interior room partition counts along x and y.
    pub rooms: [usize; 2],
    pub max_place_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            bounds: [24, 24, 8],
            n_objects: 6,
            cell_size: 0.25,
            rooms: [2, 2],
            max_place_attempts: 200,
        }
    }
}

/// Immutable synthetic environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bounds: [usize; 3],
    pub cell_size: f64,
    pub seed: u64,
    pub objects: Vec<ObjectGT>,
    occupancy: Vec<bool>,
    voxel_owner: BTreeMap<[i32; 3], u32>,
    surface_counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    version: String,
    seed: u64,
    cell_size: f64,
    bounds: [usize; 3],
    occupied: Vec<[i32; 3]>,
    objects: Vec<ObjectGT>,
}

impl Scene {
    fn index(&self, v: [i32; 3]) -> Option<usize> {
        let [w, d, h] = self.bounds;
        if v[0] < 0 || v[1] < 0 || v[2] < 0 {
            return None;
        }
        let (x, y, z) = (v[0] as usize, v[1] as usize, v[2] as usize);
        if x >= w || y >= d || z >= h {
            return None;
        }
        Some((z * d + y) * w + x)
    }

    /// Whether the cell is occupied. Cells outside the bounds are free.
    pub fn occupied(&self, v: [i32; 3]) -> bool {
        self.index(v).map(|i| self.occupancy[i]).unwrap_or(false)
    }

    /// Cell containing a world position.
    pub fn voxel_of(&self, p: [f64; 3]) -> [i32; 3] {
        [
            (p[0] / self.cell_size).floor() as i32,
            (p[1] / self.cell_size).floor() as i32,
            (p[2] / self.cell_size).floor() as i32,
        ]
    }

    pub fn object_at(&self, v: [i32; 3]) -> Option<u32> {
        self.voxel_owner.get(&v).copied()
    }

    /// Number of surface voxels (>= 1 free face-neighbor) of an object.
    pub fn surface_voxels(&self, object_id: u32) -> usize {
        self.surface_counts[object_id as usize]
    }

    /// Rebuild derived lookups; called after construction or deserialization.
    fn finish(mut self) -> Self {
        self.voxel_owner = BTreeMap::new();
        for obj in &self.objects {
            for &v in &obj.voxels {
                self.voxel_owner.insert(v, obj.id);
            }
        }
        self.surface_counts = self
            .objects
            .iter()
            .map(|obj| {
                obj.voxels
                    .iter()
                    .filter(|&&v| NEIGHBORS6.iter().any(|d| !self.occupied(add(v, *d))))
                    .count()
            })
            .collect();
        self
    }

    /// Build a scene from explicit parts (used by tests and loaders).
    pub fn from_parts(
        bounds: [usize; 3],
        cell_size: f64,
        seed: u64,
        occupied: &[[i32; 3]],
        objects: Vec<ObjectGT>,
    ) -> Scene {
        let mut scene = Scene {
            bounds,
            cell_size,
            seed,
            objects,
            occupancy: vec![false; bounds[0] * bounds[1] * bounds[2]],
            voxel_owner: BTreeMap::new(),
            surface_counts: Vec::new(),
        };
        for &v in occupied {
            if let Some(i) = scene.index(v) {
                scene.occupancy[i] = true;
            }
        }
        scene.finish()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let occupied: Vec<[i32; 3]> = self
            .all_occupied()
            .into_iter()
            .collect();
        serde_json::to_value(SceneFile {
            version: SCENE_VERSION.into(),
            seed: self.seed,
            cell_size: self.cell_size,
            bounds: self.bounds,
            occupied,
            objects: self.objects.clone(),
        })
        .expect("scene serializable")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Scene> {
        let file: SceneFile = serde_json::from_value(value)?;
        if file.version != SCENE_VERSION {
            return Err(Error::Version { expected: SCENE_VERSION.into(), found: file.version });
        }
        Ok(Scene::from_parts(file.bounds, file.cell_size, file.seed, &file.occupied, file.objects))
    }

    fn all_occupied(&self) -> Vec<[i32; 3]> {
        let [w, d, h] = self.bounds;
        let mut out = Vec::new();
        for z in 0..h {
            for y in 0..d {
                for x in 0..w {
                    let v = [x as i32, y as i32, z as i32];
                    if self.occupancy[self.index(v).unwrap()] {
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    /// A uniformly random free cell center at agent height, with free xy
    /// clearance so the camera never starts flush against a wall.
    pub fn random_free_position(&self, rng: &mut Stream) -> Result<[f64; 3]> {
        let [w, d, _] = self.bounds;
        let z = AGENT_Z_CELL;
        let mut candidates = Vec::new();
        for y in 1..d.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let v = [x as i32, y as i32, z];
                let clear = (-1..=1).all(|dx| {
                    (-1..=1).all(|dy| !self.occupied([v[0] + dx, v[1] + dy, v[2]]))
                });
                if clear {
                    candidates.push(v);
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::SceneGeneration("no free spawn cell".into()));
        }
        let v = candidates[rng.gen_range(0..candidates.len())];
        Ok([
            (v[0] as f64 + 0.5) * self.cell_size,
            (v[1] as f64 + 0.5) * self.cell_size,
            (v[2] as f64 + 0.5) * self.cell_size,
        ])
    }
}

/// Agent z cell: camera height is fixed at cell 1.
const AGENT_Z_CELL: i32 = 1;

const NEIGHBORS6: [[i32; 3]; 6] =
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn add(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Generate a deterministic scene from a seed and spec.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    let [w, d, h] = spec.bounds;
    if w < 8 || d < 8 || h < 8 {
        return Err(Error::SceneGeneration(format!(
            "bounds must be at least 8 cells per axis, got {:?}",
            spec.bounds
        )));
    }
    if spec.n_objects == 0 {
        return Err(Error::SceneGeneration("need at least one object".into()));
    }
    if spec.cell_size <= 0.0 {
        return Err(Error::SceneGeneration("cell_size must be positive".into()));
    }

    let mut rng = stream(seed, "scene-gen");
    let mut occupied: BTreeSet<[i32; 3]> = BTreeSet::new();

    // outer walls, full height
    for z in 0..h as i32 {
        for x in 0..w as i32 {
            occupied.insert([x, 0, z]);
            occupied.insert([x, d as i32 - 1, z]);
        }
        for y in 0..d as i32 {
            occupied.insert([0, y, z]);
            occupied.insert([w as i32 - 1, y, z]);
        }
    }

    // interior room partitions; every wall gets one 2-cell door gap per room
    // segment it borders, so no room can be sealed off
    let [rx, ry] = spec.rooms;
    for i in 1..rx {
        let x = (w * i / rx) as i32;
        let mut gaps = Vec::new();
        for j in 0..ry {
            let lo = ((d * j / ry) as i32 + 1).min(d as i32 - 4).max(1);
            let hi = ((d * (j + 1) / ry) as i32 - 2).max(lo + 1);
            gaps.push(rng.gen_range(lo..hi));
        }
        for z in 0..h as i32 {
            for y in 1..d as i32 - 1 {
                if !gaps.iter().any(|&g| y >= g && y < g + 2) {
                    occupied.insert([x, y, z]);
                }
            }
        }
    }
    for j in 1..ry {
        let y = (d * j / ry) as i32;
        let mut gaps = Vec::new();
        for i in 0..rx {
            let lo = ((w * i / rx) as i32 + 1).min(w as i32 - 4).max(1);
            let hi = ((w * (i + 1) / rx) as i32 - 2).max(lo + 1);
            gaps.push(rng.gen_range(lo..hi));
        }
        for z in 0..h as i32 {
            for x in 1..w as i32 - 1 {
                if !gaps.iter().any(|&g| x >= g && x < g + 2) {
                    occupied.insert([x, y, z]);
                }
            }
        }
    }

    // feasibility: object volume cannot exceed half the free interior
    let free_volume = w * d * h - occupied.len();
    let object_volume: usize = (0..spec.n_objects)
        .map(|i| Category::from_index(i).extent().iter().product::<usize>())
        .sum();
    if object_volume * 2 > free_volume {
        return Err(Error::SceneGeneration(format!(
            "infeasible spec: object volume {object_volume} exceeds half of free volume {free_volume}"
        )));
    }

    let mut objects = Vec::new();
    for i in 0..spec.n_objects {
        let category = Category::from_index(i);
        let ext = category.extent();
        let mut placed = false;
        for _ in 0..spec.max_place_attempts {
            if ext[0] + 3 > w || ext[1] + 3 > d || ext[2] > h {
                break;
            }
            let x0 = rng.gen_range(2..(w - ext[0] - 1)) as i32;
            let y0 = rng.gen_range(2..(d - ext[1] - 1)) as i32;
            let z0 = 0i32;
            // require 1-cell xy clearance around the box
            let mut clear = true;
            'scan: for z in z0..z0 + ext[2] as i32 {
                for y in y0 - 1..=y0 + ext[1] as i32 {
                    for x in x0 - 1..=x0 + ext[0] as i32 {
                        if occupied.contains(&[x, y, z]) {
                            clear = false;
                            break 'scan;
                        }
                    }
                }
            }
            if !clear {
                continue;
            }
            let mut voxels = Vec::new();
            for z in z0..z0 + ext[2] as i32 {
                for y in y0..y0 + ext[1] as i32 {
                    for x in x0..x0 + ext[0] as i32 {
                        occupied.insert([x, y, z]);
                        voxels.push([x, y, z]);
                    }
                }
            }
            let color = COLORS[rng.gen_range(0..COLORS.len())];
            let material = MATERIALS[rng.gen_range(0..MATERIALS.len())];
            let context = CONTEXTS[rng.gen_range(0..CONTEXTS.len())];
            objects.push(ObjectGT {
                id: i as u32,
                category,
                attribute_tokens: vec![color.into(), material.into(), context.into()],
                gt_caption: format!("a {color} {material} {} near the {context}", category.name()),
                voxels,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::SceneGeneration(format!(
                "could not place object {i} ({}) after {} attempts",
                category.name(),
                spec.max_place_attempts
            )));
        }
    }

    let occupied: Vec<[i32; 3]> = occupied.into_iter().collect();
    Ok(Scene::from_parts(spec.bounds, spec.cell_size, seed, &occupied, objects))
}

/// Agent pose: planar position at fixed camera height, plus yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: [f64; 3],
    pub yaw: f64,
    pub step_index: u64,
}

impl AgentState {
    pub fn new(position: [f64; 3], yaw: f64) -> AgentState {
        AgentState { position, yaw: normalize_yaw(yaw), step_index: 0 }
    }
}

pub fn normalize_yaw(yaw: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut y = yaw % two_pi;
    if y < 0.0 {
        y += two_pi;
    }
    y
}

/// Motion primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Forward(f64),
    Rotate(f64),
}

/// Pinhole camera parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub max_range: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, fov: std::f64::consts::FRAC_PI_2, max_range: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
}

/// One object's hit pixels in a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub object_id: u32,
    /// Flattened pixel indices (y * width + x).
    pub pixels: Vec<u32>,
    pub visible_fraction: f64,
}

/// Depth image plus symbolic object fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    pub max_range: f64,
    pub camera: CameraPose,
    /// Ray distance per pixel; +infinity on miss.
    pub depth: Vec<f64>,
    pub visible_fragments: Vec<Fragment>,
}

impl Observation {
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[self.pixel_index(x, y)]
    }
}

/// Direction of the ray through pixel (u, v).
pub fn pixel_ray(camera: &CameraConfig, yaw: f64, u: usize, v: usize) -> [f64; 3] {
    let f_px = (camera.width as f64 / 2.0) / (camera.fov / 2.0).tan();
    let x = (u as f64 + 0.5) - camera.width as f64 / 2.0;
    let y = (v as f64 + 0.5) - camera.height as f64 / 2.0;
    let fwd = [yaw.cos(), yaw.sin(), 0.0];
    let right = [yaw.sin(), -yaw.cos(), 0.0];
    let dir = [
        fwd[0] + right[0] * (x / f_px),
        fwd[1] + right[1] * (x / f_px),
        -y / f_px,
    ];
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    [dir[0] / n, dir[1] / n, dir[2] / n]
}

/// March a ray through the occupancy grid; returns the first occupied cell
/// and the distance to its entry face, if within range.
pub fn ray_march(scene: &Scene, origin: [f64; 3], dir: [f64; 3], max_range: f64) -> Option<([i32; 3], f64)> {
    let cs = scene.cell_size;
    let mut cell = scene.voxel_of(origin);
    if scene.occupied(cell) {
        return Some((cell, 0.0));
    }
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let mut step = [0i32; 3];
    for a in 0..3 {
        if dir[a] > 1e-12 {
            step[a] = 1;
            t_max[a] = ((cell[a] + 1) as f64 * cs - origin[a]) / dir[a];
            t_delta[a] = cs / dir[a];
        } else if dir[a] < -1e-12 {
            step[a] = -1;
            t_max[a] = (cell[a] as f64 * cs - origin[a]) / dir[a];
            t_delta[a] = -cs / dir[a];
        }
    }
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t = t_max[axis];
        if !t.is_finite() || t > max_range {
            return None;
        }
        cell[axis] += step[axis];
        if scene.occupied(cell) {
            return Some((cell, t));
        }
        t_max[axis] += t_delta[axis];
    }
}

/// Render an observation from the agent's pose.
pub fn observe(scene: &Scene, agent: &AgentState, camera: &CameraConfig) -> Result<Observation> {
    let agent_cell = scene.voxel_of(agent.position);
    if scene.occupied(agent_cell) {
        return Err(Error::InvalidPose(format!(
            "agent position {:?} is inside an occupied voxel",
            agent.position
        )));
    }

    let mut depth = vec![f64::INFINITY; camera.width * camera.height];
    let mut frag_pixels: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut frag_voxels: BTreeMap<u32, BTreeSet<[i32; 3]>> = BTreeMap::new();

    for v in 0..camera.height {
        for u in 0..camera.width {
            let dir = pixel_ray(camera, agent.yaw, u, v);
            if let Some((cell, t)) = ray_march(scene, agent.position, dir, camera.max_range) {
                depth[v * camera.width + u] = t;
                if let Some(obj) = scene.object_at(cell) {
                    frag_pixels.entry(obj).or_default().push((v * camera.width + u) as u32);
                    frag_voxels.entry(obj).or_default().insert(cell);
                }
            }
        }
    }

    let visible_fragments = frag_pixels
        .into_iter()
        .map(|(object_id, pixels)| {
            let surface = scene.surface_voxels(object_id).max(1);
            let hit = frag_voxels[&object_id].len();
            Fragment {
                object_id,
                pixels,
                visible_fraction: (hit as f64 / surface as f64).min(1.0),
            }
        })
        .collect();

    Ok(Observation {
        width: camera.width,
        height: camera.height,
        fov: camera.fov,
        max_range: camera.max_range,
        camera: CameraPose { position: agent.position, yaw: agent.yaw },
        depth,
        visible_fragments,
    })
}

/// Apply a motion primitive. Forward motion clips at obstacle contact; the
/// step index always advances.
pub fn step_agent(scene: &Scene, agent: &AgentState, action: Action) -> AgentState {
    let mut next = *agent;
    match action {
        Action::Rotate(theta) => {
            next.yaw = normalize_yaw(agent.yaw + theta);
        }
        Action::Forward(dist) => {
            let dir = [agent.yaw.cos(), agent.yaw.sin(), 0.0];
            let sub = scene.cell_size / 8.0;
            let mut travelled = 0.0;
            let mut pos = agent.position;
            while travelled < dist {
                let step_len = sub.min(dist - travelled);
                let cand = [pos[0] + dir[0] * step_len, pos[1] + dir[1] * step_len, pos[2]];
                if scene.occupied(scene.voxel_of(cand)) {
                    break;
                }
                pos = cand;
                travelled += step_len;
            }
            next.position = pos;
        }
    }
    next.step_index = agent.step_index.wrapping_add(1);
    next
}
