//! Versioned static map, routes, ground-truth hazards and the simulated
//! map-update server.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cumulative_lengths, distance_to_segment, project_onto_polyline, Pose, Vec2};

pub type SegmentId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSegment {
    pub id: SegmentId,
    pub polyline: Vec<Vec2>,
    #[serde(default = "default_true")]
    pub open: bool,
}

fn default_true() -> bool {
    true
}

/// Placement and resolution of the occupancy grid. Fixed per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// World coordinates of the lower-left corner of cell (0, 0).
    pub origin: Vec2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            origin: Vec2::new(0.0, -50.0),
            cell_size: 0.5,
            width: 200,
            height: 200,
        }
    }
}

impl GridSpec {
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            None
        } else {
            Some((fx as usize, fy as usize))
        }
    }

    pub fn center_of(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some()
    }

    pub fn max_corner(&self) -> Vec2 {
        Vec2::new(
            self.origin.x + self.width as f64 * self.cell_size,
            self.origin.y + self.height as f64 * self.cell_size,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("grid needs positive cell size and dimensions".into()));
        }
        Ok(())
    }
}

/// Boolean occupancy in configuration space: a cell is free when a point
/// robot standing at its center keeps the vehicle footprint on the road.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new_free(spec: GridSpec) -> Self {
        Self {
            spec,
            occupied: vec![false; spec.width * spec.height],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.spec.width + ix
    }

    pub fn is_occupied_cell(&self, ix: usize, iy: usize) -> bool {
        self.occupied[self.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, occupied: bool) {
        let i = self.index(ix, iy);
        self.occupied[i] = occupied;
    }

    /// Points outside the grid count as occupied.
    pub fn is_occupied(&self, p: Vec2) -> bool {
        match self.spec.cell_of(p) {
            Some((ix, iy)) => self.is_occupied_cell(ix, iy),
            None => true,
        }
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    /// Whether every cell the segment `a`-`b` passes through is inside the
    /// grid and free. Cells are walked in order along the segment.
    pub fn segment_is_free(&self, a: Vec2, b: Vec2) -> bool {
        let spec = self.spec;
        let (Some((mut ix, mut iy)), Some((tx, ty))) = (spec.cell_of(a), spec.cell_of(b)) else {
            return false;
        };
        if self.is_occupied_cell(ix, iy) {
            return false;
        }
        let ax = (a.x - spec.origin.x) / spec.cell_size;
        let ay = (a.y - spec.origin.y) / spec.cell_size;
        let dx = (b.x - a.x) / spec.cell_size;
        let dy = (b.y - a.y) / spec.cell_size;
        let first_crossing = |i: usize, from: f64, d: f64| {
            if d > 0.0 {
                ((i + 1) as f64 - from) / d
            } else if d < 0.0 {
                (i as f64 - from) / d
            } else {
                f64::INFINITY
            }
        };
        let mut t_x = first_crossing(ix, ax, dx);
        let mut t_y = first_crossing(iy, ay, dy);
        let step_x = 1.0 / dx.abs();
        let step_y = 1.0 / dy.abs();
        let steps = ix.abs_diff(tx) + iy.abs_diff(ty);
        for _ in 0..steps {
            if t_x < t_y {
                ix = if dx > 0.0 { ix + 1 } else { ix.wrapping_sub(1) };
                t_x += step_x;
            } else {
                iy = if dy > 0.0 { iy + 1 } else { iy.wrapping_sub(1) };
                t_y += step_y;
            }
            if ix >= spec.width || iy >= spec.height || self.is_occupied_cell(ix, iy) {
                return false;
            }
        }
        true
    }

    /// Rasterizes the drivable area (cells whose center lies within
    /// `lane_half_width` of an open segment) and then grows the off-road
    /// region by `inflation` so the planner can treat the ego as a point.
    pub fn rasterize(spec: GridSpec, lanes: &[LaneSegment], lane_half_width: f64, inflation: f64) -> Self {
        let mut drivable = vec![false; spec.width * spec.height];
        for lane in lanes.iter().filter(|l| l.open) {
            for w in lane.polyline.windows(2) {
                let (a, b) = (w[0], w[1]);
                let lo = Vec2::new(a.x.min(b.x) - lane_half_width, a.y.min(b.y) - lane_half_width);
                let hi = Vec2::new(a.x.max(b.x) + lane_half_width, a.y.max(b.y) + lane_half_width);
                let (x0, y0, x1, y1) = cell_range(&spec, lo, hi);
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        let c = spec.center_of(ix, iy);
                        if distance_to_segment(c, a, b) <= lane_half_width {
                            drivable[iy * spec.width + ix] = true;
                        }
                    }
                }
            }
        }
        let mut grid = OccupancyGrid {
            spec,
            occupied: drivable.iter().map(|d| !d).collect(),
        };
        if inflation > 0.0 {
            grid = grid.inflated(inflation, true);
        }
        grid
    }

    /// Marks every cell within `radius` of an occupied cell (or of the grid
    /// border when `border_occupied`) as occupied.
    pub fn inflated(&self, radius: f64, border_occupied: bool) -> Self {
        let spec = self.spec;
        let r_cells = (radius / spec.cell_size).ceil() as i64;
        let mut offsets = Vec::new();
        for dy in -r_cells..=r_cells {
            for dx in -r_cells..=r_cells {
                let d = ((dx * dx + dy * dy) as f64).sqrt() * spec.cell_size;
                if d <= radius + 1e-9 {
                    offsets.push((dx, dy));
                }
            }
        }
        let mut out = self.occupied.clone();
        for iy in 0..spec.height as i64 {
            for ix in 0..spec.width as i64 {
                let idx = (iy as usize) * spec.width + ix as usize;
                if self.occupied[idx] {
                    continue;
                }
                let hit = offsets.iter().any(|&(dx, dy)| {
                    let nx = ix + dx;
                    let ny = iy + dy;
                    if nx < 0 || ny < 0 || nx >= spec.width as i64 || ny >= spec.height as i64 {
                        border_occupied
                    } else {
                        self.occupied[(ny as usize) * spec.width + nx as usize]
                    }
                });
                if hit {
                    out[idx] = true;
                }
            }
        }
        OccupancyGrid { spec, occupied: out }
    }
}

pub(crate) fn cell_range(spec: &GridSpec, lo: Vec2, hi: Vec2) -> (usize, usize, usize, usize) {
    let clampx = |v: f64| (((v - spec.origin.x) / spec.cell_size).floor().max(0.0) as usize).min(spec.width - 1);
    let clampy = |v: f64| (((v - spec.origin.y) / spec.cell_size).floor().max(0.0) as usize).min(spec.height - 1);
    (clampx(lo.x), clampy(lo.y), clampx(hi.x), clampy(hi.y))
}

/// An immutable map snapshot. Versions are full values, never diffs.
#[derive(Debug, Clone, PartialEq)]
pub struct MapVersion {
    pub version_id: u64,
    pub lane_graph: Vec<LaneSegment>,
    pub occupancy: OccupancyGrid,
    pub created_at: f64,
}

impl MapVersion {
    pub fn build(
        version_id: u64,
        lane_graph: Vec<LaneSegment>,
        spec: GridSpec,
        lane_half_width: f64,
        inflation: f64,
        created_at: f64,
    ) -> Result<Self> {
        spec.validate()?;
        for lane in &lane_graph {
            if lane.polyline.len() < 2 {
                return Err(Error::DegeneratePath(lane.polyline.len()));
            }
        }
        let occupancy = OccupancyGrid::rasterize(spec, &lane_graph, lane_half_width, inflation);
        Ok(Self {
            version_id,
            lane_graph,
            occupancy,
            created_at,
        })
    }

    pub fn segment(&self, id: SegmentId) -> Option<&LaneSegment> {
        self.lane_graph.iter().find(|l| l.id == id)
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        let spec = self.occupancy.spec();
        (spec.origin, spec.max_corner())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub goal_pose: Pose,
    pub reference_path: Vec<Vec2>,
    pub segment_ids: Vec<SegmentId>,
}

impl Route {
    /// Chains the polylines of `segment_ids` in order, dropping repeated joints.
    pub fn from_segments(map: &MapVersion, segment_ids: &[SegmentId], goal_pose: Pose) -> Result<Self> {
        let mut path: Vec<Vec2> = Vec::new();
        for id in segment_ids {
            let seg = map
                .segment(*id)
                .ok_or_else(|| Error::Scenario(format!("route references unknown segment {id}")))?;
            if !seg.open {
                return Err(Error::Scenario(format!("route uses closed segment {id}")));
            }
            for p in &seg.polyline {
                if path.last().is_none_or(|q| q.distance(*p) > 1e-9) {
                    path.push(*p);
                }
            }
        }
        if path.len() < 2 {
            return Err(Error::DegeneratePath(path.len()));
        }
        Ok(Self {
            goal_pose,
            reference_path: path,
            segment_ids: segment_ids.to_vec(),
        })
    }

    pub fn length(&self) -> f64 {
        *cumulative_lengths(&self.reference_path).last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    StationaryVehicle,
    RoadClosure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthHazard {
    pub id: u32,
    pub position: Vec2,
    pub kind: HazardKind,
    pub spawn_time: f64,
    pub observable_by_sensing: bool,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublishedVersion {
    pub version: Arc<MapVersion>,
    pub at: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateServerState {
    pub published_versions: Vec<PublishedVersion>,
}

impl UpdateServerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latest_version_id(&self) -> Option<u64> {
        self.published_versions.last().map(|p| p.version.version_id)
    }
}

pub fn publish_version(mut server: UpdateServerState, v: Arc<MapVersion>, at: f64) -> Result<UpdateServerState> {
    if let Some(last) = server.published_versions.last() {
        if v.version_id <= last.version.version_id {
            return Err(Error::NonMonotoneVersion {
                new: v.version_id,
                latest: last.version.version_id,
            });
        }
        if at <= last.at {
            return Err(Error::NonMonotonePublishTime { at, previous: last.at });
        }
    }
    server.published_versions.push(PublishedVersion { version: v, at });
    Ok(server)
}

/// Newest version published by `client_time` that the client has not seen,
/// with the time its download completes.
pub fn poll_update(
    client_time: f64,
    last_seen: u64,
    server: &UpdateServerState,
    download_latency: f64,
) -> Option<(Arc<MapVersion>, f64)> {
    debug_assert!(download_latency >= 0.0);
    server
        .published_versions
        .iter()
        .rev()
        .find(|p| p.at <= client_time && p.version.version_id > last_seen)
        .map(|p| (Arc::clone(&p.version), client_time + download_latency))
}

/// Signed perpendicular distance from `position` to the nearest segment of
/// `path`; positive to the left of the path direction.
pub fn cross_track_error(position: Vec2, path: &[Vec2]) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::DegeneratePath(path.len()));
    }
    let cum = cumulative_lengths(path);
    let proj = project_onto_polyline(path, &cum, position).expect("path has two points");
    Ok(proj.signed_offset)
}

/// Whether `position` projects onto `path` inside the window
/// `[ego progress, ego progress + lookahead]` and within `corridor` laterally.
pub fn is_on_route(position: Vec2, ego: Vec2, path: &[Vec2], lateral_corridor: f64, lookahead: f64) -> bool {
    if path.len() < 2 {
        return false;
    }
    let cum = cumulative_lengths(path);
    let (Some(ego_proj), Some(p)) = (
        project_onto_polyline(path, &cum, ego),
        project_onto_polyline(path, &cum, position),
    ) else {
        return false;
    };
    p.arc_length >= ego_proj.arc_length
        && p.arc_length <= ego_proj.arc_length + lookahead
        && p.signed_offset.abs() <= lateral_corridor
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Slab test of the segment against the closed box of a cell.
    fn segment_meets_cell(a: Vec2, b: Vec2, lo: Vec2, hi: Vec2) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (p, d, l, h) in [(a.x, b.x - a.x, lo.x, hi.x), (a.y, b.y - a.y, lo.y, hi.y)] {
            if d == 0.0 {
                if p < l || p > h {
                    return false;
                }
            } else {
                let (u, v) = ((l - p) / d, (h - p) / d);
                t0 = t0.max(u.min(v));
                t1 = t1.min(u.max(v));
            }
        }
        t0 <= t1
    }

    proptest! {
        #[test]
        fn segment_check_matches_cell_oracle(
            cells in proptest::collection::vec(any::<bool>(), 64),
            ax in 0.01f64..3.99, ay in 0.01f64..3.99, bx in 0.01f64..3.99, by in 0.01f64..3.99,
        ) {
            let spec = GridSpec { origin: Vec2::ZERO, cell_size: 0.5, width: 8, height: 8 };
            let mut grid = OccupancyGrid::new_free(spec);
            for (i, occ) in cells.iter().enumerate() {
                grid.set(i % 8, i / 8, *occ);
            }
            let (a, b) = (Vec2::new(ax, ay), Vec2::new(bx, by));
            let hit = (0..64).filter(|i| cells[*i]).any(|i| {
                let lo = Vec2::new((i % 8) as f64 * 0.5, (i / 8) as f64 * 0.5);
                segment_meets_cell(a, b, lo, lo + Vec2::new(0.5, 0.5))
            });
            prop_assert_eq!(grid.segment_is_free(a, b), !hit);
        }
    }

    #[test]
    fn segment_check_catches_clipped_corner() {
        let spec = GridSpec { origin: Vec2::ZERO, cell_size: 1.0, width: 4, height: 4 };
        let mut grid = OccupancyGrid::new_free(spec);
        grid.set(1, 1, true);
        let (a, b) = (Vec2::new(0.5, 1.2), Vec2::new(1.5, 2.5));
        assert!(!grid.is_occupied(a) && !grid.is_occupied(b));
        assert!(!grid.segment_is_free(a, b));
        assert!(grid.segment_is_free(Vec2::new(0.5, 0.5), Vec2::new(3.5, 0.5)));
        assert!(!grid.segment_is_free(Vec2::new(0.5, 0.5), Vec2::new(4.5, 0.5)));
    }

    fn straight_lane(id: SegmentId, x0: f64, x1: f64, open: bool) -> LaneSegment {
        LaneSegment {
            id,
            polyline: vec![Vec2::new(x0, 0.0), Vec2::new(x1, 0.0)],
            open,
        }
    }

    fn version(id: u64, second_open: bool) -> Arc<MapVersion> {
        Arc::new(
            MapVersion::build(
                id,
                vec![straight_lane(1, 2.0, 50.0, true), straight_lane(2, 50.0, 98.0, second_open)],
                GridSpec::default(),
                2.5,
                1.0,
                0.0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn publish_then_poll() {
        let server = publish_version(UpdateServerState::new(), version(1, true), 0.0).unwrap();
        let server = publish_version(server, version(2, false), 10.0).unwrap();
        assert!(poll_update(9.9, 1, &server, 0.0).is_none());
        let (v, at) = poll_update(10.0, 1, &server, 0.0).unwrap();
        assert_eq!(v.version_id, 2);
        assert_eq!(at, 10.0);
        let (v, at) = poll_update(12.0, 1, &server, 1.1).unwrap();
        assert_eq!(v.version_id, 2);
        assert!((at - 13.1).abs() < 1e-12);
        assert!(poll_update(12.0, 2, &server, 1.1).is_none());
    }

    #[test]
    fn poll_without_new_version_is_none() {
        let server = publish_version(UpdateServerState::new(), version(1, true), 0.0).unwrap();
        assert!(poll_update(5.0, 1, &server, 0.3).is_none());
    }

    #[test]
    fn poll_is_idempotent_between_publishes() {
        let server = publish_version(UpdateServerState::new(), version(1, true), 0.0).unwrap();
        let server = publish_version(server, version(2, false), 3.0).unwrap();
        let a = poll_update(4.0, 1, &server, 0.5).map(|(v, t)| (v.version_id, t));
        let b = poll_update(4.0, 1, &server, 0.5).map(|(v, t)| (v.version_id, t));
        assert_eq!(a, b);
    }

    #[test]
    fn republishing_same_version_is_rejected() {
        let server = publish_version(UpdateServerState::new(), version(1, true), 0.0).unwrap();
        let err = publish_version(server, version(1, true), 5.0).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneVersion { new: 1, latest: 1 }));
    }

    #[test]
    fn publish_times_must_increase() {
        let server = publish_version(UpdateServerState::new(), version(1, true), 5.0).unwrap();
        assert!(matches!(
            publish_version(server, version(2, true), 5.0),
            Err(Error::NonMonotonePublishTime { .. })
        ));
    }

    #[test]
    fn closed_segment_becomes_occupied() {
        let open = version(1, true);
        let closed = version(2, false);
        let p = Vec2::new(75.0, 0.0);
        assert!(!open.occupancy.is_occupied(p));
        assert!(closed.occupancy.is_occupied(p));
        // The open part is untouched.
        assert!(!closed.occupancy.is_occupied(Vec2::new(25.0, 0.0)));
    }

    #[test]
    fn inflation_shrinks_free_band() {
        let v = version(1, true);
        // lane half-width 2.5, inflation 1.0: free band is |y| <= ~1.5
        assert!(!v.occupancy.is_occupied(Vec2::new(25.0, 1.2)));
        assert!(v.occupancy.is_occupied(Vec2::new(25.0, 2.0)));
        assert!(v.occupancy.is_occupied(Vec2::new(25.0, -2.0)));
    }

    #[test]
    fn lane_needs_two_points() {
        let lanes = vec![LaneSegment { id: 1, polyline: vec![Vec2::ZERO], open: true }];
        assert!(MapVersion::build(1, lanes, GridSpec::default(), 2.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn cross_track_examples() {
        let path = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
        assert_eq!(cross_track_error(Vec2::new(3.0, 0.0), &path).unwrap(), 0.0);
        assert!((cross_track_error(Vec2::new(3.0, 0.5), &path).unwrap() - 0.5).abs() < 1e-12);
        assert!((cross_track_error(Vec2::new(3.0, -0.5), &path).unwrap() + 0.5).abs() < 1e-12);
        assert!(matches!(cross_track_error(Vec2::ZERO, &[]), Err(Error::DegeneratePath(0))));
    }

    #[test]
    fn on_route_examples() {
        let path = vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
        let ego = Vec2::new(10.0, 0.0);
        assert!(is_on_route(Vec2::new(40.0, 0.0), ego, &path, 2.0, 50.0));
        assert!(!is_on_route(Vec2::new(5.0, 0.0), ego, &path, 2.0, 50.0));
        assert!(!is_on_route(Vec2::new(40.0, 2.1), ego, &path, 2.0, 50.0));
        assert!(is_on_route(Vec2::new(40.0, 2.0), ego, &path, 2.0, 50.0));
        assert!(!is_on_route(Vec2::new(70.0, 0.0), ego, &path, 2.0, 50.0));
    }

    #[test]
    fn route_chains_segments() {
        let v = version(1, true);
        let route = Route::from_segments(&v, &[1, 2], Pose::new(98.0, 0.0, 0.0)).unwrap();
        assert_eq!(route.reference_path.len(), 3);
        assert!((route.length() - 96.0).abs() < 1e-12);
        let closed = version(2, false);
        assert!(Route::from_segments(&closed, &[1, 2], Pose::default()).is_err());
    }
}
