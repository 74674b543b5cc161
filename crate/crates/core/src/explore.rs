//! Exploration policies and the episode runner.
//!
//! The agent keeps a K x K grid of {unknown, free, occupied} knowledge built
//! from depth sweeps. Goals come from one of three policies: uniformly
//! random reachable cells, classical frontier selection, or a greedy
//! disagreement-mass maximizer standing in for the learned look-around
//! policy. A grid planner (Dijkstra, unknown traversable at a penalty)
//! turns goals into paths; the runner produces a replayable episode log.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::perceive::{
    caption, detect, filter_detections, BBox, CaptionRecord, Detection, DetectorConfig,
    FilterConfig, Mask, NoiseConfig,
};
use crate::rng::{stream, Rng, Stream};
use crate::scene::{
    observe, step_agent, Action, AgentState, CameraConfig, CameraPose, Observation, Scene,
};
use crate::voxmap::{
    cluster_objects, disagreement_map, MapGeometry, PolicyState, SemanticVoxelMap,
};
use crate::Scalar;

pub const EPISODE_VERSION: &str = "episode/1";

pub type Cell = (usize, usize); // (row, col)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// The agent's internal map knowledge on the policy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationGrid {
    pub k: usize,
    cells: Vec<CellState>,
    pub agent_cell: Cell,
}

impl ExplorationGrid {
    pub fn new(k: usize, agent_cell: Cell) -> Self {
        let mut grid = Self { k, cells: vec![CellState::Unknown; k * k], agent_cell };
        grid.set(agent_cell, CellState::Free);
        grid
    }

    pub fn get(&self, cell: Cell) -> CellState {
        self.cells[cell.0 * self.k + cell.1]
    }

    pub fn set(&mut self, cell: Cell, state: CellState) {
        self.cells[cell.0 * self.k + cell.1] = state;
    }

    /// Mark free only if still unknown; occupied always wins.
    pub fn observe_cell(&mut self, cell: Cell, occupied: bool) {
        if occupied {
            self.set(cell, CellState::Occupied);
        } else if self.get(cell) == CellState::Unknown {
            self.set(cell, CellState::Free);
        }
    }

    pub fn observed_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|c| *c != CellState::Unknown).collect()
    }

    pub fn unknown_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == CellState::Unknown).count()
    }

    fn neighbors4(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const D: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        D.iter().filter_map(move |(dr, dc)| {
            let r = cell.0 as i32 + dr;
            let c = cell.1 as i32 + dc;
            (r >= 0 && c >= 0 && (r as usize) < self.k && (c as usize) < self.k)
                .then_some((r as usize, c as usize))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Cost of entering an unknown cell; free cells cost 1.
    pub unknown_cost: u32,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { unknown_cost: 3 }
    }
}

fn enter_cost(state: CellState, cfg: &PlannerConfig) -> Option<u32> {
    match state {
        CellState::Free => Some(1),
        CellState::Unknown => Some(cfg.unknown_cost),
        CellState::Occupied => None,
    }
}

/// Shortest 4-connected path from start to goal; unknown cells are
/// traversable at a penalty, occupied cells are not. Returns the cell
/// sequence including both endpoints.
pub fn plan_path(
    grid: &ExplorationGrid,
    start: Cell,
    goal: Cell,
    cfg: &PlannerConfig,
) -> Result<Vec<Cell>> {
    if grid.get(start) != CellState::Free {
        return Err(Error::Contract(format!("start {start:?} is not free")));
    }
    if enter_cost(grid.get(goal), cfg).is_none() {
        return Err(Error::NoPath { start, goal });
    }
    if start == goal {
        return Ok(vec![start]);
    }

    let k = grid.k;
    let idx = |c: Cell| c.0 * k + c.1;
    let mut dist = vec![u32::MAX; k * k];
    let mut parent: Vec<Option<Cell>> = vec![None; k * k];
    let mut heap = BinaryHeap::new();
    dist[idx(start)] = 0;
    heap.push(Reverse((0u32, start)));

    while let Some(Reverse((d, cell))) = heap.pop() {
        if d > dist[idx(cell)] {
            continue;
        }
        if cell == goal {
            break;
        }
        for n in grid.neighbors4(cell) {
            if let Some(cost) = enter_cost(grid.get(n), cfg) {
                let nd = d + cost;
                if nd < dist[idx(n)] {
                    dist[idx(n)] = nd;
                    parent[idx(n)] = Some(cell);
                    heap.push(Reverse((nd, n)));
                }
            }
        }
    }

    if dist[idx(goal)] == u32::MAX {
        return Err(Error::NoPath { start, goal });
    }
    let mut path = vec![goal];
    let mut cur = goal;
    while let Some(p) = parent[idx(cur)] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}

/// Cost of a planned path under the same cost model (entering-cell costs).
pub fn path_cost(grid: &ExplorationGrid, path: &[Cell], cfg: &PlannerConfig) -> u32 {
    path.iter().skip(1).map(|c| enter_cost(grid.get(*c), cfg).unwrap_or(u32::MAX)).sum()
}

/// Cells reachable from `from` through non-occupied cells (4-connected).
pub fn reachable_cells(grid: &ExplorationGrid, from: Cell) -> Vec<bool> {
    let k = grid.k;
    let mut seen = vec![false; k * k];
    if grid.get(from) == CellState::Occupied {
        return seen;
    }
    let mut queue = VecDeque::from([from]);
    seen[from.0 * k + from.1] = true;
    while let Some(cell) = queue.pop_front() {
        for n in grid.neighbors4(cell) {
            if !seen[n.0 * k + n.1] && grid.get(n) != CellState::Occupied {
                seen[n.0 * k + n.1] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

/// A uniformly random reachable free cell other than the agent's own.
pub fn random_goal_policy(grid: &ExplorationGrid, rng: &mut Stream) -> Result<Cell> {
    random_goal_policy_filtered(grid, &[], rng)
}

/// Runner variant of [`random_goal_policy`] that skips blacklisted cells.
pub fn random_goal_policy_filtered(
    grid: &ExplorationGrid,
    blocked: &[bool],
    rng: &mut Stream,
) -> Result<Cell> {
    let reach = reachable_cells(grid, grid.agent_cell);
    let mut candidates = Vec::new();
    for row in 0..grid.k {
        for col in 0..grid.k {
            let cell = (row, col);
            if blocked.get(row * grid.k + col).copied().unwrap_or(false) {
                continue;
            }
            if cell != grid.agent_cell
                && reach[row * grid.k + col]
                && grid.get(cell) == CellState::Free
            {
                candidates.push(cell);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoGoal);
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

fn unknown_in_8_neighborhood(grid: &ExplorationGrid, cell: Cell) -> usize {
    let mut count = 0;
    for dr in -1i32..=1 {
        for dc in -1i32..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let r = cell.0 as i32 + dr;
            let c = cell.1 as i32 + dc;
            if r >= 0 && c >= 0 && (r as usize) < grid.k && (c as usize) < grid.k
                && grid.get((r as usize, c as usize)) == CellState::Unknown {
                    count += 1;
                }
        }
    }
    count
}

/// Classical frontier selection: among free cells with at least one unknown
/// 4-neighbor, pick the one with the most unknown cells in its
/// 8-neighborhood; ties break toward the lowest (row, col). When the map has
/// no frontier left, exploration is complete.
pub fn frontier_policy(grid: &ExplorationGrid) -> Result<Cell> {
    frontier_policy_filtered(grid, &[])
}

/// Runner variant of [`frontier_policy`] that skips blacklisted goal cells
/// (goals that went stale or turned out unreachable).
pub fn frontier_policy_filtered(grid: &ExplorationGrid, blocked: &[bool]) -> Result<Cell> {
    let mut best: Option<(usize, Cell)> = None;
    for row in 0..grid.k {
        for col in 0..grid.k {
            let cell = (row, col);
            if blocked.get(row * grid.k + col).copied().unwrap_or(false) {
                continue;
            }
            if grid.get(cell) != CellState::Free {
                continue;
            }
            if !grid.neighbors4(cell).any(|n| grid.get(n) == CellState::Unknown) {
                continue;
            }
            let score = unknown_in_8_neighborhood(grid, cell);
            if best.map(|(s, _)| score > s).unwrap_or(true) {
                best = Some((score, cell));
            }
        }
    }
    best.map(|(_, c)| c).ok_or(Error::ExplorationComplete)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaConfig {
    /// Window radius for the local disagreement mass.
    pub window_radius: usize,
}

impl Default for ClaConfig {
    fn default() -> Self {
        Self { window_radius: 3 }
    }
}

fn window_mass(state: &PolicyState, cell: Cell, radius: usize) -> Scalar {
    let k = state.k;
    let r = radius as i32;
    let mut mass = 0.0;
    for dr in -r..=r {
        for dc in -r..=r {
            let row = cell.0 as i32 + dr;
            let col = cell.1 as i32 + dc;
            if row >= 0 && col >= 0 && (row as usize) < k && (col as usize) < k {
                mass += state.disagreement[row as usize * k + col as usize];
            }
        }
    }
    mass
}

/// Greedy surrogate for the learned disagreement-seeking policy: the
/// reachable known-free cell maximizing summed disagreement in a window of
/// the configured radius; ties break toward the lowest (row, col). With an
/// all-zero disagreement channel it falls back to frontier selection.
pub fn cla_greedy_policy(
    state: &PolicyState,
    grid: &ExplorationGrid,
    cfg: &ClaConfig,
) -> Result<Cell> {
    cla_greedy_policy_filtered(state, grid, cfg, &[])
}

/// Runner variant of [`cla_greedy_policy`] that skips blacklisted goal cells.
pub fn cla_greedy_policy_filtered(
    state: &PolicyState,
    grid: &ExplorationGrid,
    cfg: &ClaConfig,
    blocked: &[bool],
) -> Result<Cell> {
    if state.disagreement.iter().all(|v| *v == 0.0) {
        return frontier_policy_filtered(grid, blocked);
    }
    let reach = reachable_cells(grid, grid.agent_cell);
    let mut best: Option<(Scalar, Cell)> = None;
    for row in 0..grid.k {
        for col in 0..grid.k {
            let cell = (row, col);
            if blocked.get(row * grid.k + col).copied().unwrap_or(false) {
                continue;
            }
            if !reach[row * grid.k + col] || grid.get(cell) != CellState::Free {
                continue;
            }
            let mass = window_mass(state, cell, cfg.window_radius);
            if best.map(|(m, _)| mass > m).unwrap_or(true) {
                best = Some((mass, cell));
            }
        }
    }
    match best {
        Some((mass, cell)) if mass > 0.0 => Ok(cell),
        _ => frontier_policy_filtered(grid, blocked),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Frontier,
    Cla,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Frontier => "frontier",
            PolicyKind::Cla => "cla",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "frontier" => Ok(PolicyKind::Frontier),
            "cla" => Ok(PolicyKind::Cla),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub n_steps: usize,
    pub camera: CameraConfig,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub noise: NoiseConfig,
    pub planner: PlannerConfig,
    pub cla: ClaConfig,
    pub forward_step: f64,
    pub rotate_step: f64,
    /// Steps without reaching the goal before it is refreshed.
    pub goal_timeout: usize,
    /// Full in-place rotation after arriving at a goal.
    pub arrival_scan: bool,
    pub map_resolution: Option<f64>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_steps: 300,
            camera: CameraConfig::default(),
            detector: DetectorConfig::default(),
            filter: FilterConfig::default(),
            noise: NoiseConfig::default(),
            planner: PlannerConfig::default(),
            cla: ClaConfig::default(),
            forward_step: 0.25,
            rotate_step: std::f64::consts::FRAC_PI_8,
            goal_timeout: 25,
            arrival_scan: true,
            map_resolution: None,
        }
    }
}

/// Detection payload with enough per-pixel depth to rebuild the map offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDetection {
    pub object_view_id: u64,
    pub logits: Vec<Scalar>,
    pub bbox: BBox,
    pub confidence: f64,
    pub pixels: Vec<u32>,
    pub depths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalEvent {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub agent: AgentState,
    pub n_fragments: usize,
    pub detections: Vec<LoggedDetection>,
    pub captions: Vec<CaptionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goal_events: Vec<GoalEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub version: String,
    pub policy: String,
    pub seed: u64,
    pub n_steps: usize,
    pub scene_sha256: String,
    pub camera: CameraConfig,
    pub map_resolution: f64,
    pub grid_k: usize,
    pub world_cells: [usize; 2],
    pub cell_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub records: Vec<StepRecord>,
}

impl EpisodeLog {
    /// Line-delimited JSON: header line, then one line per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializable");
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EpisodeLog> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line =
            lines.next().ok_or_else(|| Error::Contract("empty episode log".into()))?;
        let header: EpisodeHeader = serde_json::from_str(header_line)?;
        if header.version != EPISODE_VERSION {
            return Err(Error::Version {
                expected: EPISODE_VERSION.into(),
                found: header.version,
            });
        }
        let records: Vec<StepRecord> =
            lines.map(serde_json::from_str).collect::<Result<Vec<_>, _>>()?;
        if records.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Contract("episode records are not strictly ordered by step".into()));
        }
        Ok(EpisodeLog { header, records })
    }

    pub fn geometry(&self) -> MapGeometry {
        MapGeometry {
            k: self.header.grid_k,
            world_cells: self.header.world_cells,
            cell_size: self.header.cell_size,
        }
    }
}

/// Content hash of a serialized scene, recorded in episode headers.
pub fn scene_hash(scene: &Scene) -> String {
    let bytes = serde_json::to_vec(&scene.to_json()).expect("scene serializable");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("{:x}", hasher.finalize())
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % std::f64::consts::TAU;
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    if x < -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    }
    x
}

/// Mark grid knowledge along the central scanline rays of an observation.
fn sweep_grid(
    grid: &mut ExplorationGrid,
    obs: &Observation,
    geom: &MapGeometry,
    camera: &CameraConfig,
) {
    let row = obs.height / 2;
    for u in 0..obs.width {
        let dir = crate::scene::pixel_ray(camera, obs.camera.yaw, u, row);
        let t_hit = obs.depth[row * obs.width + u];
        let reach = t_hit.min(camera.max_range);
        let step = geom.cell_size / 2.0;
        let mut t = 0.0;
        while t < reach {
            let p = [
                obs.camera.position[0] + dir[0] * t,
                obs.camera.position[1] + dir[1] * t,
                obs.camera.position[2] + dir[2] * t,
            ];
            grid.observe_cell(geom.cell_of_position(p), false);
            t += step;
        }
        if t_hit.is_finite() {
            let p = [
                obs.camera.position[0] + dir[0] * (t_hit + geom.cell_size * 0.01),
                obs.camera.position[1] + dir[1] * (t_hit + geom.cell_size * 0.01),
                obs.camera.position[2] + dir[2] * (t_hit + geom.cell_size * 0.01),
            ];
            grid.observe_cell(geom.cell_of_position(p), true);
        }
    }
}

/// Run one exploration episode: per step observe, detect, filter (twice,
/// around map association), caption, and integrate; goals refresh on
/// arrival or staleness. Returns the log plus the map it built; replaying
/// the log rebuilds the identical map.
pub fn run_episode(
    scene: &Scene,
    policy: PolicyKind,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<(EpisodeLog, SemanticVoxelMap)> {
    let resolution = cfg.map_resolution.unwrap_or(scene.cell_size);
    let geom = MapGeometry::new([scene.bounds[0], scene.bounds[1]], scene.cell_size);
    let embedder = crate::embedding::HashedEmbedder::default();

    let mut rng_spawn = stream(seed, "spawn");
    let mut rng_detect = stream(seed, "detect");
    let mut rng_noise = stream(seed, "noise");
    let mut rng_policy = stream(seed, "policy");

    let start = scene.random_free_position(&mut rng_spawn)?;
    let yaw = rng_spawn.gen_range(0.0..std::f64::consts::TAU);
    let mut agent = AgentState::new(start, yaw);

    let mut grid = ExplorationGrid::new(geom.k, geom.cell_of_position(agent.position));
    let mut map = SemanticVoxelMap::new(resolution);
    let mut records = Vec::new();

    let mut goal: Option<Cell> = None;
    let mut path: Vec<Cell> = Vec::new();
    let mut goal_age = 0usize;
    let mut scan_left = 0usize;
    let mut complete = false;
    // discount already-visited disagreement peaks so the greedy policy
    // cycles between inconsistent objects instead of camping on one
    let mut visit_penalty: Vec<Scalar> = vec![1.0; geom.k * geom.k];
    // goals that went stale or turned out unreachable
    let mut blocked: Vec<bool> = vec![false; geom.k * geom.k];

    for step in 0..cfg.n_steps {
        let obs = observe(scene, &agent, &cfg.camera)?;
        grid.agent_cell = geom.cell_of_position(agent.position);
        sweep_grid(&mut grid, &obs, &geom, &cfg.camera);
        // the agent stands here, so the cell is free regardless of coarse
        // sweep hits that land in it
        grid.set(grid.agent_cell, CellState::Free);

        let dets = detect(&obs, scene, &cfg.detector, &mut rng_detect);
        let dets = filter_detections(dets, &cfg.filter);
        // boxes are re-associated against the map before integration; the
        // IoU filter runs again afterwards
        let dets = filter_detections(dets, &cfg.filter);

        let mut caps = Vec::with_capacity(dets.len());
        for det in &dets {
            let frag = obs
                .visible_fragments
                .iter()
                .find(|f| u64::from(f.object_id) == det.object_view_id)
                .expect("detection stems from a fragment");
            let object = &scene.objects[frag.object_id as usize];
            caps.push(caption(object, frag.visible_fraction, obs.camera, &cfg.noise, &mut rng_noise));
        }
        map.integrate(&obs, &dets, &caps, obs.camera)?;

        let mut goal_events = Vec::new();

        // goal bookkeeping
        if let Some(g) = goal {
            if cell_distance(grid.agent_cell, g) <= 1 {
                goal_events.push(GoalEvent { kind: "arrived".into(), goal });
                decay_visits(&mut visit_penalty, geom.k, g, cfg.cla.window_radius + 8);
                goal = None;
                if cfg.arrival_scan {
                    scan_left = (std::f64::consts::TAU / cfg.rotate_step).ceil() as usize;
                }
            } else if goal_age >= cfg.goal_timeout {
                goal_events.push(GoalEvent { kind: "stale".into(), goal });
                decay_visits(&mut visit_penalty, geom.k, g, cfg.cla.window_radius + 8);
                blocked[g.0 * geom.k + g.1] = true;
                goal = None;
            }
        }

        if goal.is_none() && scan_left == 0 {
            match choose_goal(
                policy,
                &grid,
                &map,
                &agent,
                &geom,
                &embedder,
                cfg,
                &visit_penalty,
                &blocked,
                &mut rng_policy,
            ) {
                Ok(g) => {
                    goal = Some(g);
                    goal_age = 0;
                    goal_events.push(GoalEvent { kind: "new_goal".into(), goal });
                }
                Err(Error::ExplorationComplete) => {
                    goal_events.push(GoalEvent { kind: "exploration_complete".into(), goal: None });
                    complete = true;
                }
                Err(Error::NoGoal) => {
                    goal_events.push(GoalEvent { kind: "no_goal".into(), goal: None });
                }
                Err(e) => return Err(e),
            }
        }

        // replan toward the goal with this step's knowledge
        if let Some(g) = goal {
            match plan_path(&grid, grid.agent_cell, g, &cfg.planner) {
                Ok(p) => path = p,
                Err(Error::NoPath { .. }) => {
                    goal_events.push(GoalEvent { kind: "no_path".into(), goal: Some(g) });
                    blocked[g.0 * geom.k + g.1] = true;
                    decay_visits(&mut visit_penalty, geom.k, g, cfg.cla.window_radius + 8);
                    goal = None;
                    path.clear();
                }
                Err(e) => return Err(e),
            }
        }

        records.push(StepRecord {
            step: step as u64,
            agent,
            n_fragments: obs.visible_fragments.len(),
            detections: dets
                .iter()
                .map(|d| LoggedDetection {
                    object_view_id: d.object_view_id,
                    logits: d.logits.clone(),
                    bbox: d.bbox,
                    confidence: d.confidence,
                    pixels: d.mask.pixels.clone(),
                    depths: d.mask.pixels.iter().map(|&p| obs.depth[p as usize]).collect(),
                })
                .collect(),
            captions: caps,
            goal_events,
        });

        if complete {
            break;
        }

        // one action per step
        let action = if scan_left > 0 {
            scan_left -= 1;
            Action::Rotate(cfg.rotate_step)
        } else if goal.is_some() && !path.is_empty() {
            goal_age += 1;
            // the path starts at the agent cell; aim at the first waypoint
            // that is not already underfoot
            let mut target = *path.last().unwrap();
            for wp in path.iter().skip(1) {
                let p = geom.position_of_cell(wp.0, wp.1);
                let d = ((p[0] - agent.position[0]).powi(2)
                    + (p[1] - agent.position[1]).powi(2))
                .sqrt();
                if d >= cfg.forward_step {
                    target = *wp;
                    break;
                }
            }
            let wp = geom.position_of_cell(target.0, target.1);
            let dy = wp[1] - agent.position[1];
            let dx = wp[0] - agent.position[0];
            let desired = dy.atan2(dx);
            let err = wrap_angle(desired - agent.yaw);
            if err.abs() > cfg.rotate_step / 2.0 {
                Action::Rotate(err.clamp(-cfg.rotate_step, cfg.rotate_step))
            } else {
                let dist = (dx * dx + dy * dy).sqrt();
                Action::Forward(cfg.forward_step.min(dist.max(geom.cell_size / 4.0)))
            }
        } else {
            // no goal this step: scan in place
            Action::Rotate(cfg.rotate_step)
        };
        agent = step_agent(scene, &agent, action);
    }

    let header = EpisodeHeader {
        version: EPISODE_VERSION.into(),
        policy: policy.name().into(),
        seed,
        n_steps: cfg.n_steps,
        scene_sha256: scene_hash(scene),
        camera: cfg.camera,
        map_resolution: resolution,
        grid_k: geom.k,
        world_cells: geom.world_cells,
        cell_size: geom.cell_size,
    };
    Ok((EpisodeLog { header, records }, map))
}

fn cell_distance(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

fn decay_visits(penalty: &mut [Scalar], k: usize, center: Cell, radius: usize) {
    for dr in -(radius as i32)..=radius as i32 {
        for dc in -(radius as i32)..=radius as i32 {
            let r = center.0 as i32 + dr;
            let c = center.1 as i32 + dc;
            if r >= 0 && c >= 0 && (r as usize) < k && (c as usize) < k {
                penalty[r as usize * k + c as usize] *= 0.5;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn choose_goal(
    policy: PolicyKind,
    grid: &ExplorationGrid,
    map: &SemanticVoxelMap,
    agent: &AgentState,
    geom: &MapGeometry,
    embedder: &crate::embedding::HashedEmbedder,
    cfg: &EpisodeConfig,
    visit_penalty: &[Scalar],
    blocked: &[bool],
    rng: &mut Stream,
) -> Result<Cell> {
    match policy {
        PolicyKind::Random => random_goal_policy_filtered(grid, blocked, rng),
        PolicyKind::Frontier => frontier_policy_filtered(grid, blocked),
        PolicyKind::Cla => {
            let instances = cluster_objects(map);
            let mut state =
                disagreement_map(map, &instances, agent, &grid.observed_mask(), geom, embedder);
            for (v, p) in state.disagreement.iter_mut().zip(visit_penalty) {
                *v *= *p;
            }
            cla_greedy_policy_filtered(&state, grid, &cfg.cla, blocked)
        }
    }
}

/// Rebuild the semantic map from a logged episode; bit-identical to the map
/// built online.
pub fn rebuild_map(log: &EpisodeLog) -> Result<SemanticVoxelMap> {
    let mut map = SemanticVoxelMap::new(log.header.map_resolution);
    let camera = log.header.camera;
    for rec in &log.records {
        let mut depth = vec![f64::INFINITY; camera.width * camera.height];
        for det in &rec.detections {
            for (&p, &d) in det.pixels.iter().zip(&det.depths) {
                depth[p as usize] = d;
            }
        }
        let pose = CameraPose { position: rec.agent.position, yaw: rec.agent.yaw };
        let obs = Observation {
            width: camera.width,
            height: camera.height,
            fov: camera.fov,
            max_range: camera.max_range,
            camera: pose,
            depth,
            visible_fragments: vec![],
        };
        let dets: Vec<Detection> = rec
            .detections
            .iter()
            .map(|d| Detection {
                object_view_id: d.object_view_id,
                logits: d.logits.clone(),
                bbox: d.bbox,
                mask: Mask { width: camera.width, height: camera.height, pixels: d.pixels.clone() },
                confidence: d.confidence,
            })
            .collect();
        map.integrate(&obs, &dets, &rec.captions, pose)?;
    }
    Ok(map)
}
