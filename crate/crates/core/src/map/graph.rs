use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;

use super::geometry::{connector, heading_gap, Curve, Piece, Pose};
use super::spec::{arc_sweep, incidence, MapSpec, SegmentGeometry, SegmentSpec, SignKind, SpeedLimitChange};
use super::MapError;
use crate::traffic::LightPhaseSchedule;

/// Continuity tolerance between a lane's end and its successor's start.
pub const CONTINUITY_TOL: f64 = 1e-6;
/// Heading mismatch weight in `locate`, metres per radian.
pub const HEADING_PENALTY: f64 = 0.1;
/// Scores closer than this are treated as tied and broken by lane id.
const TIE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LaneKind {
    Road {
        segment_id: String,
        direction: Direction,
        index: u32,
    },
    Connector {
        node_id: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub kind: LaneKind,
    pub centerline: Curve,
    pub length: f64,
    pub lane_width: f64,
    /// Limit in force from the start of the lane.
    pub speed_limit: f64,
    /// Limit changes in lane arc length, sorted by `s`.
    pub limit_changes: Vec<SpeedLimitChange>,
    pub successors: Vec<String>,
}

impl Lane {
    pub fn segment_id(&self) -> Option<&str> {
        match &self.kind {
            LaneKind::Road { segment_id, .. } => Some(segment_id),
            LaneKind::Connector { .. } => None,
        }
    }

    pub fn is_connector(&self) -> bool {
        matches!(self.kind, LaneKind::Connector { .. })
    }

    /// Limit in force at arc length `s`.
    pub fn limit_at(&self, s: f64) -> f64 {
        self.limit_changes
            .iter().rfind(|c| c.s <= s)
            .map_or(self.speed_limit, |c| c.new_limit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightBinding {
    pub light_id: String,
    pub lane_id: String,
    pub stop_line_s: f64,
    pub schedule: LightPhaseSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedSign {
    pub kind: SignKind,
    pub lane_id: String,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAssignment {
    pub lane_id: String,
    pub s: f64,
    pub lateral_offset: f64,
}

/// Immutable lane-level road network.
#[derive(Debug, Clone)]
pub struct MapGraph {
    pub name: String,
    pub lanes: Vec<Lane>,
    pub lights: Vec<LightBinding>,
    pub signs: Vec<PlacedSign>,
    pub digest: String,
    index: BTreeMap<String, usize>,
}

struct SegmentFrame {
    reference: Piece,
    reference_length: f64,
    /// Radius of the reference arc, or `None` for straight segments.
    radius: Option<f64>,
}

impl SegmentFrame {
    fn new(spec: &MapSpec, seg: &SegmentSpec) -> Result<Self, MapError> {
        let (a, b) = spec.segment_nodes(seg)?;
        Ok(match &seg.geometry {
            SegmentGeometry::Straight => {
                let heading = (b.y - a.y).atan2(b.x - a.x);
                let length = (b.x - a.x).hypot(b.y - a.y);
                SegmentFrame {
                    reference: Piece::Line {
                        start: Pose::new(a.x, a.y, heading),
                        length,
                    },
                    reference_length: length,
                    radius: None,
                }
            }
            SegmentGeometry::Arc {
                center_x,
                center_y,
                clockwise,
            } => {
                let radius = (a.x - center_x).hypot(a.y - center_y);
                let sweep = arc_sweep(a, b, (*center_x, *center_y), *clockwise);
                let dir = if *clockwise { -1.0 } else { 1.0 };
                SegmentFrame {
                    reference: Piece::Arc {
                        center: (*center_x, *center_y),
                        radius,
                        start_angle: (a.y - center_y).atan2(a.x - center_x),
                        sweep: dir * sweep,
                    },
                    reference_length: radius * sweep,
                    radius: Some(radius),
                }
            }
        })
    }

    /// Heading pointing away from the node at the given end.
    fn outward_heading(&self, at_end: bool) -> f64 {
        if at_end {
            self.reference.pose_at(self.reference_length).heading + PI
        } else {
            self.reference.pose_at(0.0).heading
        }
    }

    /// Lane curve for a given travel direction and right-hand offset,
    /// trimmed by `trim_from`/`trim_to` metres at the from/to node ends.
    fn lane_curve(&self, direction: Direction, offset: f64, trim_from: f64, trim_to: f64) -> Result<Curve, MapError> {
        let (trim_start, trim_end) = match direction {
            Direction::Forward => (trim_from, trim_to),
            Direction::Backward => (trim_to, trim_from),
        };
        if trim_start + trim_end >= self.reference_length {
            return Err(MapError::GeometryError {
                reason: format!(
                    "segment of length {:.6} m is shorter than its intersection setbacks ({:.6} m)",
                    self.reference_length,
                    trim_start + trim_end
                ),
            });
        }
        match &self.reference {
            Piece::Line { start, length } => {
                let (start, heading) = match direction {
                    Direction::Forward => ((start.x, start.y), start.heading),
                    Direction::Backward => {
                        let end = self.reference.pose_at(*length);
                        ((end.x, end.y), start.heading + PI)
                    }
                };
                let p = Pose::new(start.0, start.1, super::geometry::wrap_angle(heading));
                let (lx, ly) = p.left();
                let (tx, ty) = p.tangent();
                let origin = Pose::new(
                    p.x - lx * offset + tx * trim_start,
                    p.y - ly * offset + ty * trim_start,
                    p.heading,
                );
                Ok(Curve::line(origin, length - trim_start - trim_end))
            }
            Piece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let (start_angle, sweep) = match direction {
                    Direction::Forward => (*start_angle, *sweep),
                    Direction::Backward => (start_angle + sweep, -sweep),
                };
                let dir = sweep.signum();
                // right of a left-turning arc is outward
                let lane_radius = radius + dir * offset;
                if lane_radius <= 0.0 {
                    return Err(MapError::GeometryError {
                        reason: format!("arc radius {radius:.6} m too tight for lane offset {offset:.6} m"),
                    });
                }
                let a0 = start_angle + dir * trim_start / radius;
                let total = sweep.abs() - (trim_start + trim_end) / radius;
                Ok(Curve::new(vec![Piece::Arc {
                    center: *center,
                    radius: lane_radius,
                    start_angle: a0,
                    sweep: dir * total,
                }]))
            }
        }
    }

    /// Map a forward-direction segment arc length onto a forward lane.
    fn forward_lane_s(&self, seg_s: f64, trim_from: f64, lane: &Curve, offset: f64) -> f64 {
        let s = match self.radius {
            None => seg_s - trim_from,
            Some(r) => {
                let dir = match self.reference {
                    Piece::Arc { sweep, .. } => sweep.signum(),
                    _ => 1.0,
                };
                (seg_s - trim_from) / r * (r + dir * offset)
            }
        };
        s.clamp(0.0, lane.length())
    }
}

fn road_lane_id(segment: &str, direction: Direction, index: u32) -> String {
    let tag = match direction {
        Direction::Forward => 'f',
        Direction::Backward => 'b',
    };
    format!("{segment}:{tag}{index}")
}

/// Build the lane graph from a validated spec.
pub fn build_graph(spec: &MapSpec) -> Result<MapGraph, MapError> {
    spec.validate()?;
    let frames: BTreeMap<&str, SegmentFrame> = spec
        .segments
        .iter()
        .map(|s| SegmentFrame::new(spec, s).map(|f| (s.id.as_str(), f)))
        .collect::<Result<_, _>>()?;
    let seg_by_id: BTreeMap<&str, &SegmentSpec> = spec.segments.iter().map(|s| (s.id.as_str(), s)).collect();
    let incident = incidence(spec);

    // Classify nodes and assign setbacks.
    let mut setback: BTreeMap<(String, bool), f64> = BTreeMap::new(); // (segment, at_to_end)
    let mut junctions: BTreeSet<String> = BTreeSet::new();
    let mut smooth_pairs: Vec<(String, (String, bool), (String, bool))> = Vec::new();
    for (node, inc) in &incident {
        let smooth = inc.len() == 2 && {
            let (s0, e0) = &inc[0];
            let (s1, e1) = &inc[1];
            let (g0, g1) = (seg_by_id[s0.as_str()], seg_by_id[s1.as_str()]);
            let h0 = frames[s0.as_str()].outward_heading(*e0);
            let h1 = frames[s1.as_str()].outward_heading(*e1);
            heading_gap(h0, h1 + PI) <= 1e-9
                && g0.lanes_per_direction == g1.lanes_per_direction
                && (g0.lane_width - g1.lane_width).abs() <= 1e-12
        };
        if inc.len() >= 2 && !smooth {
            junctions.insert(node.clone());
            let max_lanes = inc
                .iter()
                .map(|(s, _)| seg_by_id[s.as_str()].lanes_per_direction)
                .max()
                .unwrap_or(1) as f64;
            let max_width = inc
                .iter()
                .map(|(s, _)| seg_by_id[s.as_str()].lane_width)
                .fold(0.0, f64::max);
            let d = max_lanes * max_width + max_width / 2.0;
            for (s, at_end) in inc {
                setback.insert((s.clone(), *at_end), d);
            }
        } else if smooth {
            smooth_pairs.push((node.clone(), inc[0].clone(), inc[1].clone()));
        }
    }

    let mut lanes: BTreeMap<String, Lane> = BTreeMap::new();
    let mut lights = Vec::new();
    let mut signs = Vec::new();
    for seg in &spec.segments {
        let frame = &frames[seg.id.as_str()];
        let trim_from = setback.get(&(seg.id.clone(), false)).copied().unwrap_or(0.0);
        let trim_to = setback.get(&(seg.id.clone(), true)).copied().unwrap_or(0.0);
        for direction in [Direction::Forward, Direction::Backward] {
            for k in 0..seg.lanes_per_direction {
                let offset = (k as f64 + 0.5) * seg.lane_width;
                let curve = frame.lane_curve(direction, offset, trim_from, trim_to)?;
                let mut limit_changes = Vec::new();
                if direction == Direction::Forward {
                    for ch in &seg.speed_limit_changes {
                        limit_changes.push(SpeedLimitChange {
                            s: frame.forward_lane_s(ch.s, trim_from, &curve, offset),
                            new_limit: ch.new_limit,
                        });
                    }
                    limit_changes.sort_by(|a, b| a.s.total_cmp(&b.s));
                }
                let id = road_lane_id(&seg.id, direction, k);
                if direction == Direction::Forward {
                    for sign in spec.signs.iter().filter(|s| s.segment_id == seg.id) {
                        signs.push(PlacedSign {
                            kind: sign.kind,
                            lane_id: id.clone(),
                            s: frame.forward_lane_s(sign.s, trim_from, &curve, offset),
                        });
                    }
                }
                lanes.insert(
                    id.clone(),
                    Lane {
                        id,
                        kind: LaneKind::Road {
                            segment_id: seg.id.clone(),
                            direction,
                            index: k,
                        },
                        length: curve.length(),
                        centerline: curve,
                        lane_width: seg.lane_width,
                        speed_limit: seg.speed_limit,
                        limit_changes,
                        successors: Vec::new(),
                    },
                );
            }
        }
    }

    // Lanes arriving at / departing from a node along a segment.
    let arriving = |seg: &SegmentSpec, at_end: bool| -> Vec<String> {
        let dir = if at_end { Direction::Forward } else { Direction::Backward };
        (0..seg.lanes_per_direction).map(|k| road_lane_id(&seg.id, dir, k)).collect()
    };
    let departing = |seg: &SegmentSpec, at_end: bool| -> Vec<String> {
        let dir = if at_end { Direction::Backward } else { Direction::Forward };
        (0..seg.lanes_per_direction).map(|k| road_lane_id(&seg.id, dir, k)).collect()
    };

    let mut links: Vec<(String, String)> = Vec::new();
    for (_node, (s0, e0), (s1, e1)) in &smooth_pairs {
        let (g0, g1) = (seg_by_id[s0.as_str()], seg_by_id[s1.as_str()]);
        for (a, b) in arriving(g0, *e0).into_iter().zip(departing(g1, *e1)) {
            links.push((a, b));
        }
        for (a, b) in arriving(g1, *e1).into_iter().zip(departing(g0, *e0)) {
            links.push((a, b));
        }
    }

    let mut connectors = Vec::new();
    for node in &junctions {
        let inc = &incident[node];
        for (xs, xe) in inc {
            let x = seg_by_id[xs.as_str()];
            for (ys, ye) in inc {
                let y = seg_by_id[ys.as_str()];
                let same = xs == ys && xe == ye;
                if same && inc.len() != 2 {
                    continue;
                }
                let outs = departing(y, *ye);
                for (k, in_id) in arriving(x, *xe).into_iter().enumerate() {
                    let out_id = outs[k.min(outs.len() - 1)].clone();
                    let from = lanes[&in_id].centerline.end_pose();
                    let to = lanes[&out_id].centerline.start_pose();
                    let curve = connector(from, to, 1e-9).ok_or_else(|| MapError::GeometryError {
                        reason: format!("no smooth connector from {in_id} to {out_id} at node {node}"),
                    })?;
                    let id = format!("{node}:{in_id}>{out_id}");
                    let limit = lanes[&in_id]
                        .limit_at(lanes[&in_id].length)
                        .min(lanes[&out_id].speed_limit);
                    connectors.push(Lane {
                        id: id.clone(),
                        kind: LaneKind::Connector { node_id: node.clone() },
                        length: curve.length(),
                        centerline: curve,
                        lane_width: lanes[&in_id].lane_width.min(lanes[&out_id].lane_width),
                        speed_limit: limit,
                        limit_changes: Vec::new(),
                        successors: vec![out_id.clone()],
                    });
                    links.push((in_id, id));
                }
            }
        }
    }
    for c in connectors {
        lanes.insert(c.id.clone(), c);
    }
    for (a, b) in links {
        let lane = lanes.get_mut(&a).expect("link source exists");
        if !lane.successors.contains(&b) {
            lane.successors.push(b);
        }
    }
    for lane in lanes.values_mut() {
        lane.successors.sort();
    }

    for sig in &spec.signals {
        let seg = seg_by_id[sig.approach_segment_id.as_str()];
        let at_end = seg.to_node == sig.node_id;
        let schedule = spec
            .schedules
            .iter()
            .find(|s| s.id == sig.schedule_id)
            .expect("validated")
            .schedule();
        for lane_id in arriving(seg, at_end) {
            lights.push(LightBinding {
                light_id: sig.id.clone(),
                stop_line_s: lanes[&lane_id].length,
                lane_id,
                schedule,
            });
        }
    }
    lights.sort_by(|a, b| (&a.lane_id, &a.light_id).cmp(&(&b.lane_id, &b.light_id)));

    let lanes: Vec<Lane> = lanes.into_values().collect();
    let index = lanes.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
    let graph = MapGraph {
        name: spec.name.clone(),
        lanes,
        lights,
        signs,
        digest: spec.digest(),
        index,
    };
    graph.check_continuity()?;
    Ok(graph)
}

impl MapGraph {
    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.index.get(id).map(|&i| &self.lanes[i])
    }

    pub fn lane_or_err(&self, id: &str) -> Result<&Lane, MapError> {
        self.lane(id).ok_or_else(|| MapError::UnknownLane { id: id.to_string() })
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn check_continuity(&self) -> Result<(), MapError> {
        for lane in &self.lanes {
            let end = lane.centerline.end_pose();
            for succ in &lane.successors {
                let next = self.lane_or_err(succ)?;
                let start = next.centerline.start_pose();
                if end.distance_to(&start) > CONTINUITY_TOL || heading_gap(end.heading, start.heading) > CONTINUITY_TOL {
                    return Err(MapError::GeometryError {
                        reason: format!("lane {} does not meet successor {}", lane.id, succ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Road lanes on the same segment and direction whose index differs by one.
    pub fn are_codirectional_neighbors(&self, a: &str, b: &str) -> bool {
        match (self.lane(a).map(|l| &l.kind), self.lane(b).map(|l| &l.kind)) {
            (
                Some(LaneKind::Road {
                    segment_id: sa,
                    direction: da,
                    index: ia,
                }),
                Some(LaneKind::Road {
                    segment_id: sb,
                    direction: db,
                    index: ib,
                }),
            ) => sa == sb && da == db && ia.abs_diff(*ib) == 1,
            _ => false,
        }
    }

    /// Lanes a vehicle on `lane` can plausibly be found on one tick later.
    fn neighbourhood(&self, lane: &Lane) -> Vec<usize> {
        let mut out = vec![self.index[&lane.id]];
        for s in &lane.successors {
            out.push(self.index[s]);
        }
        if let LaneKind::Road { .. } = lane.kind {
            for (i, other) in self.lanes.iter().enumerate() {
                if self.are_codirectional_neighbors(&lane.id, &other.id) {
                    out.push(i);
                }
            }
        }
        out
    }

    fn best_of(&self, candidates: impl Iterator<Item = usize>, x: f64, y: f64, heading: f64) -> Option<(usize, f64, f64)> {
        // (lane index, score, distance)
        let mut best: Option<(usize, f64, f64)> = None;
        for i in candidates {
            let lane = &self.lanes[i];
            let p = lane.centerline.project(x, y);
            let score = p.distance + HEADING_PENALTY * heading_gap(heading, p.heading);
            best = match best {
                None => Some((i, score, p.distance)),
                Some((bi, bs, bd)) => {
                    if score < bs - TIE_EPS || ((score - bs).abs() <= TIE_EPS && lane.id < self.lanes[bi].id) {
                        Some((i, score, p.distance))
                    } else {
                        Some((bi, bs, bd))
                    }
                }
            };
        }
        best
    }

    fn assignment(&self, i: usize, x: f64, y: f64) -> LaneAssignment {
        let lane = &self.lanes[i];
        let p = lane.centerline.project(x, y);
        LaneAssignment {
            lane_id: lane.id.clone(),
            s: p.s,
            lateral_offset: p.lateral,
        }
    }

    /// Lane minimizing lateral distance plus a heading-mismatch penalty.
    pub fn locate(&self, x: f64, y: f64, heading: f64) -> Result<LaneAssignment, MapError> {
        let nearest = self
            .lanes
            .iter()
            .enumerate()
            .map(|(i, l)| (i, l.centerline.project(x, y).distance))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((ni, nd)) = nearest else {
            return Err(MapError::OffMap { distance: f64::INFINITY });
        };
        if nd > 3.0 * self.lanes[ni].lane_width {
            return Err(MapError::OffMap { distance: nd });
        }
        let (i, _, _) = self.best_of(0..self.lanes.len(), x, y, heading).expect("non-empty");
        Ok(self.assignment(i, x, y))
    }

    /// `locate` with a continuity prior: stay on the previous lane, a
    /// successor, or a co-directional neighbour while within one lane
    /// width, otherwise fall back to the global search.
    pub fn locate_near(&self, previous: Option<&str>, x: f64, y: f64, heading: f64) -> Result<LaneAssignment, MapError> {
        if let Some(lane) = previous.and_then(|id| self.lane(id)) {
            let cands = self.neighbourhood(lane);
            if let Some((i, _, d)) = self.best_of(cands.into_iter(), x, y, heading) {
                let p = self.lanes[i].centerline.project(x, y);
                let aligned = heading_gap(heading, p.heading) < PI / 2.0;
                if d <= self.lanes[i].lane_width && aligned {
                    return Ok(self.assignment(i, x, y));
                }
            }
        }
        self.locate(x, y, heading)
    }

    /// Lane ids reachable from `start` through successor links.
    pub fn reachable_from(&self, start: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start.to_string()]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(lane) = self.lane(&id) {
                for s in &lane.successors {
                    if !seen.contains(s) {
                        queue.push_back(s.clone());
                    }
                }
            }
        }
        seen
    }

    pub fn is_strongly_connected(&self) -> bool {
        let Some(first) = self.lanes.first() else {
            return true;
        };
        if self.reachable_from(&first.id).len() != self.lanes.len() {
            return false;
        }
        // reverse reachability
        let mut preds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for l in &self.lanes {
            for s in &l.successors {
                preds.entry(s.as_str()).or_default().push(l.id.as_str());
            }
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([first.id.as_str()]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            for p in preds.get(id).into_iter().flatten() {
                queue.push_back(p);
            }
        }
        seen.len() == self.lanes.len()
    }

    pub fn max_lane_width(&self) -> f64 {
        self.lanes.iter().map(|l| l.lane_width).fold(0.0, f64::max)
    }
}
