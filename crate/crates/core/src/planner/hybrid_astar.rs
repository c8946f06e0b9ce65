use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{event_radius, speed_profile, PlannerConfig, SpeedProfileConfig, Trajectory};
use crate::geometry::{wrap_angle, Pose, Vec2};
use crate::ldm::{EventStatus, LdmState};
use crate::vehicle::VehicleParams;
use crate::world::{cell_range, OccupancyGrid};

/// A disk the planner must keep the ego's reference point out of. The
/// radius already includes the ego footprint and margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanFailure {
    StartOutsideMap,
    GoalOutsideMap,
    GoalOccupied,
    Unreachable,
    ExpansionLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanStats {
    pub expansions: usize,
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub result: Result<Trajectory, PlanFailure>,
    pub stats: PlanStats,
}

/// Plans from `start` to `goal` on the LDM's active map, treating confident
/// tracks (at their mean predicted position over `prefix_horizon`) and
/// accepted events as disks.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    start: Pose,
    goal: Pose,
    ldm: &LdmState,
    cfg: &PlannerConfig,
    vehicle: &VehicleParams,
    speed: &SpeedProfileConfig,
    prefix_horizon: f64,
    now: f64,
) -> PlanOutcome {
    let clearance = vehicle.collision_radius + cfg.obstacle_margin;
    let mut obstacles: Vec<Obstacle> = ldm
        .objects
        .iter()
        .filter(|t| t.existence_belief >= cfg.b_obstacle)
        .map(|t| Obstacle {
            center: t.position + t.velocity * (prefix_horizon / 2.0),
            radius: cfg.object_radius + clearance,
        })
        .collect();
    let accepted: Vec<_> = ldm.events.iter().filter(|e| e.status == EventStatus::Accepted).collect();
    obstacles.extend(accepted.iter().map(|e| Obstacle {
        center: e.position,
        radius: event_radius(e.hazard_kind) + clearance,
    }));

    let (result, stats) = plan_on_grid(start, goal, &ldm.active_map.occupancy, &obstacles, cfg, vehicle.max_steer, vehicle.wheelbase);
    let result = result.map(|(poses, arc)| {
        let pts: Vec<Vec2> = poses.iter().map(|p| p.position()).collect();
        let hazard_arcs: Vec<f64> = accepted
            .iter()
            .filter_map(|e| {
                let reach = event_radius(e.hazard_kind) + speed.hazard_influence;
                closest_arc(&pts, &arc, e.position).filter(|(_, d)| *d <= reach).map(|(s, _)| s)
            })
            .collect();
        let target_speeds = speed_profile(&arc, &hazard_arcs, speed);
        Trajectory {
            poses,
            target_speeds,
            cumulative_arc_length: arc,
            planned_on_version: ldm.active_map.version_id,
            planned_at: now,
            known_events: accepted.iter().map(|e| e.event_id).collect(),
        }
    });
    PlanOutcome { result, stats }
}

fn closest_arc(pts: &[Vec2], arc: &[f64], p: Vec2) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return pts.first().map(|q| (0.0, q.distance(p)));
    }
    crate::geometry::project_onto_polyline(pts, arc, p).map(|pr| (pr.arc_length, pr.distance))
}

#[derive(Debug, Clone, Copy)]
struct Node {
    pose: Pose,
    g: f64,
    steer: f64,
    parent: usize,
    arc: f64,
    samples: usize,
    kappa: f64,
    escaped: bool,
    escape_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    order: u64,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, then h, then insertion order.
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NO_PARENT: usize = usize::MAX;

/// Exact pose after driving `s` meters on a circle of curvature `kappa`.
pub(crate) fn arc_pose(p: Pose, kappa: f64, s: f64) -> Pose {
    if kappa.abs() < 1e-12 {
        let (sn, cs) = p.heading.sin_cos();
        Pose::new(p.x + s * cs, p.y + s * sn, p.heading)
    } else {
        let h = p.heading + kappa * s;
        Pose::new(
            p.x + (h.sin() - p.heading.sin()) / kappa,
            p.y - (h.cos() - p.heading.cos()) / kappa,
            h,
        )
    }
}

struct Occupancy {
    grid: OccupancyGrid,
}

impl Occupancy {
    fn new(base: &OccupancyGrid, obstacles: &[Obstacle]) -> Self {
        let mut grid = base.clone();
        let spec = *grid.spec();
        for ob in obstacles {
            let r = Vec2::new(ob.radius, ob.radius);
            let (x0, y0, x1, y1) = cell_range(&spec, ob.center - r, ob.center + r);
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    if spec.center_of(ix, iy).distance(ob.center) <= ob.radius {
                        grid.set(ix, iy, true);
                    }
                }
            }
        }
        Self { grid }
    }

    fn blocked(&self, p: Vec2) -> bool {
        self.grid.is_occupied(p)
    }
}

/// Poses and their cumulative arc lengths.
pub type PosePath = (Vec<Pose>, Vec<f64>);

/// Hybrid-A* on a fixed occupancy grid plus disk obstacles. Returns the
/// pose sequence with exact arc lengths.
pub fn plan_on_grid(
    start: Pose,
    goal: Pose,
    grid: &OccupancyGrid,
    obstacles: &[Obstacle],
    cfg: &PlannerConfig,
    max_steer: f64,
    wheelbase: f64,
) -> (Result<PosePath, PlanFailure>, PlanStats) {
    let mut stats = PlanStats::default();
    let spec = *grid.spec();
    if !spec.contains(start.position()) {
        return (Err(PlanFailure::StartOutsideMap), stats);
    }
    if !spec.contains(goal.position()) {
        return (Err(PlanFailure::GoalOutsideMap), stats);
    }
    let occ = Occupancy::new(grid, obstacles);
    if occ.blocked(goal.position()) {
        return (Err(PlanFailure::GoalOccupied), stats);
    }
    if !reachable(&occ.grid, start.position(), goal.position(), cfg.start_escape) {
        return (Err(PlanFailure::Unreachable), stats);
    }

    let n_steer = cfg.steering_samples.max(2);
    let steers: Vec<f64> = (0..n_steer)
        .map(|i| -max_steer + 2.0 * max_steer * i as f64 / (n_steer - 1) as f64)
        .collect();
    let kappas: Vec<f64> = steers.iter().map(|d| d.tan() / wheelbase).collect();

    let lo = spec.origin;
    let hi = spec.max_corner();
    let nx = ((hi.x - lo.x) / cfg.xy_resolution).ceil() as usize;
    let ny = ((hi.y - lo.y) / cfg.xy_resolution).ceil() as usize;
    let bins = cfg.heading_bins;
    let bin_width = 2.0 * std::f64::consts::PI / bins as f64;
    let key = |p: &Pose| -> usize {
        let ix = (((p.x - lo.x) / cfg.xy_resolution).floor().max(0.0) as usize).min(nx - 1);
        let iy = (((p.y - lo.y) / cfg.xy_resolution).floor().max(0.0) as usize).min(ny - 1);
        let ih = (((wrap_angle(p.heading) + std::f64::consts::PI) / bin_width).floor() as usize) % bins;
        (iy * nx + ix) * bins + ih
    };
    let n_keys = nx * ny * bins;
    let mut closed = vec![false; n_keys];
    let mut best_g = vec![f64::INFINITY; n_keys];

    let heuristic = |p: &Pose| (p.position().distance(goal.position()) - cfg.goal_xy_tol).max(0.0);
    let at_goal = |p: &Pose| {
        p.position().distance(goal.position()) <= cfg.goal_xy_tol
            && wrap_angle(p.heading - goal.heading).abs() <= cfg.goal_heading_tol
    };

    let mut nodes = vec![Node {
        pose: start,
        g: 0.0,
        steer: 0.0,
        parent: NO_PARENT,
        arc: 0.0,
        samples: 0,
        kappa: 0.0,
        escaped: !occ.blocked(start.position()),
        escape_used: 0.0,
    }];
    if at_goal(&start) {
        return (Ok((vec![start], vec![0.0])), stats);
    }
    let mut open = BinaryHeap::new();
    let mut order = 0u64;
    open.push(Open { f: heuristic(&start), h: heuristic(&start), order, node: 0 });
    best_g[key(&start)] = 0.0;

    let n_samples = (cfg.primitive_arc_length / cfg.sample_step).ceil().max(1.0) as usize;
    let step = cfg.primitive_arc_length / n_samples as f64;

    while let Some(Open { node: ni, .. }) = open.pop() {
        let node = nodes[ni];
        let k = key(&node.pose);
        if closed[k] {
            continue;
        }
        closed[k] = true;
        stats.expansions += 1;
        if stats.expansions > cfg.max_expansions {
            return (Err(PlanFailure::ExpansionLimit), stats);
        }
        'succ: for (si, &kappa) in kappas.iter().enumerate() {
            let mut escaped = node.escaped;
            let mut escape_used = node.escape_used;
            let mut last = node.pose;
            for j in 1..=n_samples {
                let s = step * j as f64;
                let p = arc_pose(node.pose, kappa, s);
                if !spec.contains(p.position()) {
                    continue 'succ;
                }
                if !occ.grid.segment_is_free(last.position(), p.position()) {
                    if escaped || escape_used + step > cfg.start_escape {
                        continue 'succ;
                    }
                    escape_used += step;
                } else {
                    escaped = true;
                }
                last = p;
                if escaped && at_goal(&p) {
                    let g = node.g + s + cfg.steering_change_weight * (steers[si] - node.steer).abs();
                    nodes.push(Node { pose: p, g, steer: steers[si], parent: ni, arc: s, samples: j, kappa, escaped, escape_used });
                    let path = reconstruct(&nodes, nodes.len() - 1);
                    stats.path_length = *path.1.last().unwrap_or(&0.0);
                    return (Ok(path), stats);
                }
            }
            let sk = key(&last);
            if closed[sk] {
                continue;
            }
            let g = node.g + cfg.primitive_arc_length + cfg.steering_change_weight * (steers[si] - node.steer).abs();
            if g >= best_g[sk] {
                continue;
            }
            best_g[sk] = g;
            nodes.push(Node {
                pose: last,
                g,
                steer: steers[si],
                parent: ni,
                arc: cfg.primitive_arc_length,
                samples: n_samples,
                kappa,
                escaped,
                escape_used,
            });
            order += 1;
            let h = heuristic(&last);
            open.push(Open { f: g + h, h, order, node: nodes.len() - 1 });
        }
    }
    (Err(PlanFailure::Unreachable), stats)
}

fn reconstruct(nodes: &[Node], goal: usize) -> (Vec<Pose>, Vec<f64>) {
    let mut chain = Vec::new();
    let mut i = goal;
    while i != NO_PARENT {
        chain.push(i);
        i = nodes[i].parent;
    }
    chain.reverse();
    let mut poses = vec![nodes[chain[0]].pose];
    let mut arc = vec![0.0];
    for w in chain.windows(2) {
        let parent = nodes[w[0]];
        let child = nodes[w[1]];
        let base = *arc.last().unwrap();
        for j in 1..=child.samples {
            let s = child.arc * j as f64 / child.samples as f64;
            poses.push(arc_pose(parent.pose, child.kappa, s));
            arc.push(base + s);
        }
    }
    (poses, arc)
}

/// 8-connected flood fill over free cells; cells within `escape` of the
/// start are passable so an ego standing in occupied space can leave it.
fn reachable(grid: &OccupancyGrid, start: Vec2, goal: Vec2, escape: f64) -> bool {
    let spec = *grid.spec();
    let (Some(s), Some(g)) = (spec.cell_of(start), spec.cell_of(goal)) else {
        return false;
    };
    let passable = |ix: usize, iy: usize| !grid.is_occupied_cell(ix, iy) || spec.center_of(ix, iy).distance(start) <= escape;
    let mut seen = vec![false; spec.width * spec.height];
    let mut queue = VecDeque::new();
    seen[s.1 * spec.width + s.0] = true;
    queue.push_back(s);
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == g {
            return true;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= spec.width as i64 || ny >= spec.height as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let idx = ny * spec.width + nx;
                if !seen[idx] && passable(nx, ny) {
                    seen[idx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    false
}

/// Whether the polyline through `poses` stays on free cells of `grid` and
/// every pose is outside all obstacles.
pub fn path_is_free(poses: &[Pose], grid: &OccupancyGrid, obstacles: &[Obstacle]) -> bool {
    let clear = |q: Vec2| obstacles.iter().all(|o| q.distance(o.center) > o.radius);
    match poses {
        [] => true,
        [p] => !grid.is_occupied(p.position()) && clear(p.position()),
        _ => poses.windows(2).all(|w| grid.segment_is_free(w[0].position(), w[1].position()) && clear(w[1].position()))
            && clear(poses[0].position()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{GridSpec, LaneSegment, MapVersion};

    fn open_grid() -> OccupancyGrid {
        OccupancyGrid::new_free(GridSpec::default())
    }

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn run(start: Pose, goal: Pose, grid: &OccupancyGrid, obstacles: &[Obstacle]) -> (Result<PosePath, PlanFailure>, PlanStats) {
        let p = params();
        plan_on_grid(start, goal, grid, obstacles, &PlannerConfig::default(), p.max_steer, p.wheelbase)
    }

    #[test]
    fn straight_goal_near_euclidean() {
        let start = Pose::new(5.0, 0.0, 0.0);
        let goal = Pose::new(85.0, 0.0, 0.0);
        let (res, stats) = run(start, goal, &open_grid(), &[]);
        let (_, arc) = res.unwrap();
        let len = *arc.last().unwrap();
        assert!((80.0 - 1.0..=80.0 * 1.05).contains(&len), "length {len}");
        assert!(stats.expansions > 0);
    }

    #[test]
    fn wall_makes_goal_unreachable() {
        let mut grid = open_grid();
        let spec = *grid.spec();
        let (ix, _) = spec.cell_of(Vec2::new(50.0, 0.0)).unwrap();
        for iy in 0..spec.height {
            grid.set(ix, iy, true);
        }
        let (res, _) = run(Pose::new(10.0, 0.0, 0.0), Pose::new(90.0, 0.0, 0.0), &grid, &[]);
        assert_eq!(res.unwrap_err(), PlanFailure::Unreachable);
    }

    #[test]
    fn expansion_limit_reported() {
        let cfg = PlannerConfig { max_expansions: 5, ..PlannerConfig::default() };
        let p = params();
        let (res, stats) = plan_on_grid(Pose::new(5.0, 0.0, 0.0), Pose::new(90.0, 30.0, 0.0), &open_grid(), &[], &cfg, p.max_steer, p.wheelbase);
        assert_eq!(res.unwrap_err(), PlanFailure::ExpansionLimit);
        assert_eq!(stats.expansions, 6);
    }

    #[test]
    fn goes_around_disk_within_curvature_bound() {
        let lanes = vec![
            LaneSegment { id: 1, polyline: vec![Vec2::new(2.0, 0.0), Vec2::new(98.0, 0.0)], open: true },
            LaneSegment { id: 2, polyline: vec![Vec2::new(2.0, 4.0), Vec2::new(98.0, 4.0)], open: true },
        ];
        let map = MapVersion::build(1, lanes, GridSpec::default(), 2.5, 1.0, 0.0).unwrap();
        let obstacles = [Obstacle { center: Vec2::new(50.0, 0.0), radius: 2.7 }];
        let (res, _) = run(Pose::new(5.0, 0.0, 0.0), Pose::new(90.0, 0.0, 0.0), &map.occupancy, &obstacles);
        let (poses, arc) = res.unwrap();
        assert!(path_is_free(&poses, &map.occupancy, &obstacles));
        let t = Trajectory { poses, target_speeds: vec![0.0; arc.len()], cumulative_arc_length: arc, planned_on_version: 1, planned_at: 0.0, known_events: vec![] };
        assert!(t.max_abs_curvature() <= params().max_curvature() + 1e-9);
    }

    #[test]
    fn arc_pose_matches_circle() {
        let k = 0.2;
        let p = arc_pose(Pose::default(), k, std::f64::consts::PI / k);
        assert!((p.x).abs() < 1e-9);
        assert!((p.y - 2.0 / k).abs() < 1e-9);
    }
}
