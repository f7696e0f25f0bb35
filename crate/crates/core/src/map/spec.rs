use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use super::MapError;
use crate::canon;
use crate::traffic::LightPhaseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentGeometry {
    Straight,
    Arc {
        center_x: f64,
        center_y: f64,
        clockwise: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedLimitChange {
    pub s: f64,
    pub new_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub geometry: SegmentGeometry,
    pub lanes_per_direction: u32,
    pub lane_width: f64,
    pub speed_limit: f64,
    #[serde(default)]
    pub speed_limit_changes: Vec<SpeedLimitChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub id: String,
    pub green_s: f64,
    pub amber_s: f64,
    pub red_s: f64,
    pub offset_s: f64,
}

impl ScheduleSpec {
    pub fn schedule(&self) -> LightPhaseSchedule {
        LightPhaseSchedule {
            green_s: self.green_s,
            amber_s: self.amber_s,
            red_s: self.red_s,
            offset_s: self.offset_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub id: String,
    pub node_id: String,
    pub approach_segment_id: String,
    pub schedule_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignKind {
    Stop,
    Yield,
}

/// A sign at arc length `s` along its segment (measured from `from_node`).
/// Signs and speed-limit changes apply to the forward-direction lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignSpec {
    pub kind: SignKind,
    pub segment_id: String,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub name: String,
    pub scale_denominator: u32,
    pub nodes: Vec<NodeSpec>,
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub schedules: Vec<ScheduleSpec>,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub signs: Vec<SignSpec>,
}

/// Default signal timing used by the grid generator.
pub const DEFAULT_GREEN_S: f64 = 8.0;
pub const DEFAULT_AMBER_S: f64 = 2.0;
pub const DEFAULT_RED_S: f64 = 10.0;

/// Defaults for the miniature testbed layout.
pub const TESTBED_ROWS: usize = 4;
pub const TESTBED_COLS: usize = 3;
pub const TESTBED_BLOCK_LENGTH: f64 = 1.2;
pub const TESTBED_LANE_WIDTH: f64 = 0.15;
pub const TESTBED_SPEED_LIMIT: f64 = 0.6;

impl MapSpec {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn segment(&self, id: &str) -> Option<&SegmentSpec> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Canonical on-disk text: key-sorted, six-decimal reals.
    pub fn to_canonical(&self) -> String {
        canon::to_pretty(self).expect("map spec serializes")
    }

    /// Content digest over the canonical text.
    pub fn digest(&self) -> String {
        canon::digest64(self.to_canonical().as_bytes())
    }

    /// Length of a segment's reference line (between node centres).
    pub fn segment_length(&self, seg: &SegmentSpec) -> Result<f64, MapError> {
        let (a, b) = self.segment_nodes(seg)?;
        Ok(match &seg.geometry {
            SegmentGeometry::Straight => (b.x - a.x).hypot(b.y - a.y),
            SegmentGeometry::Arc {
                center_x,
                center_y,
                clockwise,
            } => {
                let r = (a.x - center_x).hypot(a.y - center_y);
                r * arc_sweep(a, b, (*center_x, *center_y), *clockwise)
            }
        })
    }

    pub(crate) fn segment_nodes(&self, seg: &SegmentSpec) -> Result<(&NodeSpec, &NodeSpec), MapError> {
        let a = self
            .node(&seg.from_node)
            .ok_or_else(|| MapError::UnresolvedReference { id: seg.from_node.clone() })?;
        let b = self
            .node(&seg.to_node)
            .ok_or_else(|| MapError::UnresolvedReference { id: seg.to_node.clone() })?;
        Ok((a, b))
    }

    /// Check every structural invariant of the format.
    pub fn validate(&self) -> Result<(), MapError> {
        if self.scale_denominator == 0 {
            return Err(invalid("scale_denominator", "must be positive"));
        }
        unique(self.nodes.iter().map(|n| n.id.as_str()), "nodes")?;
        unique(self.segments.iter().map(|s| s.id.as_str()), "segments")?;
        unique(self.schedules.iter().map(|s| s.id.as_str()), "schedules")?;
        unique(self.signals.iter().map(|s| s.id.as_str()), "signals")?;
        for n in &self.nodes {
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(invalid("nodes", format!("node {} has non-finite coordinates", n.id)));
            }
        }
        for seg in &self.segments {
            let (a, b) = self.segment_nodes(seg)?;
            if seg.lanes_per_direction == 0 {
                return Err(invalid("lanes_per_direction", format!("segment {} needs at least one lane", seg.id)));
            }
            if !(seg.lane_width > 0.0) || !seg.lane_width.is_finite() {
                return Err(invalid("lane_width", format!("segment {} lane width must be positive", seg.id)));
            }
            if !(seg.speed_limit > 0.0) || !seg.speed_limit.is_finite() {
                return Err(invalid("speed_limit", format!("segment {} speed limit must be positive", seg.id)));
            }
            if a.id == b.id {
                return Err(invalid("segments", format!("segment {} starts and ends at the same node", seg.id)));
            }
            if let SegmentGeometry::Arc { center_x, center_y, .. } = seg.geometry {
                if !center_x.is_finite() || !center_y.is_finite() {
                    return Err(invalid("geometry", format!("segment {} arc centre not finite", seg.id)));
                }
                let ra = (a.x - center_x).hypot(a.y - center_y);
                let rb = (b.x - center_x).hypot(b.y - center_y);
                if ra <= 0.0 || (ra - rb).abs() > 1e-6 {
                    return Err(invalid(
                        "geometry",
                        format!("segment {} endpoints are not equidistant from the arc centre", seg.id),
                    ));
                }
            }
            let len = self.segment_length(seg)?;
            if !(len > 0.0) {
                return Err(invalid("segments", format!("segment {} has zero length", seg.id)));
            }
            for ch in &seg.speed_limit_changes {
                if !(0.0..=len).contains(&ch.s) {
                    return Err(invalid("speed_limit_changes", format!("s = {} outside segment {}", ch.s, seg.id)));
                }
                if !(ch.new_limit > 0.0) || !ch.new_limit.is_finite() {
                    return Err(invalid("speed_limit_changes", format!("non-positive limit on segment {}", seg.id)));
                }
            }
        }
        for sch in &self.schedules {
            let parts = [sch.green_s, sch.amber_s, sch.red_s, sch.offset_s];
            if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid("schedules", format!("schedule {} has a negative duration", sch.id)));
            }
            if !(sch.green_s + sch.amber_s + sch.red_s > 0.0) {
                return Err(invalid("schedules", format!("schedule {} has an empty cycle", sch.id)));
            }
        }
        for sig in &self.signals {
            if self.node(&sig.node_id).is_none() {
                return Err(MapError::UnresolvedReference { id: sig.node_id.clone() });
            }
            let seg = self
                .segment(&sig.approach_segment_id)
                .ok_or_else(|| MapError::UnresolvedReference { id: sig.approach_segment_id.clone() })?;
            if !self.schedules.iter().any(|s| s.id == sig.schedule_id) {
                return Err(MapError::UnresolvedReference { id: sig.schedule_id.clone() });
            }
            if seg.from_node != sig.node_id && seg.to_node != sig.node_id {
                return Err(invalid(
                    "signals",
                    format!("signal {} approach segment does not touch node {}", sig.id, sig.node_id),
                ));
            }
        }
        for sign in &self.signs {
            let seg = self
                .segment(&sign.segment_id)
                .ok_or_else(|| MapError::UnresolvedReference { id: sign.segment_id.clone() })?;
            let len = self.segment_length(seg)?;
            if !(0.0..=len).contains(&sign.s) {
                return Err(invalid("signs", format!("sign at s = {} outside segment {}", sign.s, seg.id)));
            }
        }
        Ok(())
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> MapError {
    MapError::InvalidValue {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn unique<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<(), MapError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(what, format!("duplicate id {id}")));
        }
    }
    Ok(())
}

/// Swept angle (0, 2pi) travelling from `a` to `b` around `center`.
pub(crate) fn arc_sweep(a: &NodeSpec, b: &NodeSpec, center: (f64, f64), clockwise: bool) -> f64 {
    let sa = (a.y - center.1).atan2(a.x - center.0);
    let sb = (b.y - center.1).atan2(b.x - center.0);
    let dir = if clockwise { -1.0 } else { 1.0 };
    let sweep = (dir * (sb - sa)).rem_euclid(2.0 * PI);
    if sweep == 0.0 {
        2.0 * PI
    } else {
        sweep
    }
}

/// Parse and validate a map file.
pub fn parse_map(text: &str) -> Result<MapSpec, MapError> {
    let spec: MapSpec = serde_json::from_str(text).map_err(|e| MapError::MalformedMap {
        line: e.line(),
        reason: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Lay out a rows x cols intersection grid with bidirectional single-lane
/// roads and signals on every approach of every interior intersection.
/// East-west approaches share one schedule; north-south approaches use the
/// same timing shifted by green + amber so crossing axes never overlap.
pub fn generate_grid(
    rows: usize,
    cols: usize,
    block_length: f64,
    lane_width: f64,
    default_limit: f64,
) -> Result<MapSpec, MapError> {
    if rows < 2 || cols < 2 {
        return Err(invalid("rows/cols", "grid needs at least 2 rows and 2 columns"));
    }
    if !(lane_width > 0.0) {
        return Err(invalid("lane_width", "must be positive"));
    }
    if !(block_length > 2.0 * lane_width) {
        return Err(invalid("block_length", "must exceed twice the lane width"));
    }
    if !(default_limit > 0.0) {
        return Err(invalid("speed_limit", "must be positive"));
    }
    let node_id = |r: usize, c: usize| format!("n{r:02}_{c:02}");
    let mut nodes = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(NodeSpec {
                id: node_id(r, c),
                x: c as f64 * block_length,
                y: r as f64 * block_length,
            });
        }
    }
    let seg = |id: String, from: String, to: String| SegmentSpec {
        id,
        from_node: from,
        to_node: to,
        geometry: SegmentGeometry::Straight,
        lanes_per_direction: 1,
        lane_width,
        speed_limit: default_limit,
        speed_limit_changes: Vec::new(),
    };
    let h_id = |r: usize, c: usize| format!("h{r:02}_{c:02}");
    let v_id = |r: usize, c: usize| format!("v{r:02}_{c:02}");
    let mut segments = Vec::new();
    for r in 0..rows {
        for c in 0..cols - 1 {
            segments.push(seg(h_id(r, c), node_id(r, c), node_id(r, c + 1)));
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols {
            segments.push(seg(v_id(r, c), node_id(r, c), node_id(r + 1, c)));
        }
    }
    let mut schedules = Vec::new();
    let mut signals = Vec::new();
    let interior: Vec<(usize, usize)> = (1..rows - 1)
        .flat_map(|r| (1..cols - 1).map(move |c| (r, c)))
        .collect();
    if !interior.is_empty() {
        schedules.push(ScheduleSpec {
            id: "axis_ew".into(),
            green_s: DEFAULT_GREEN_S,
            amber_s: DEFAULT_AMBER_S,
            red_s: DEFAULT_RED_S,
            offset_s: 0.0,
        });
        schedules.push(ScheduleSpec {
            id: "axis_ns".into(),
            green_s: DEFAULT_GREEN_S,
            amber_s: DEFAULT_AMBER_S,
            red_s: DEFAULT_RED_S,
            offset_s: DEFAULT_GREEN_S + DEFAULT_AMBER_S,
        });
    }
    for (r, c) in interior {
        let n = node_id(r, c);
        let approaches = [
            (h_id(r, c - 1), "axis_ew"),
            (h_id(r, c), "axis_ew"),
            (v_id(r - 1, c), "axis_ns"),
            (v_id(r, c), "axis_ns"),
        ];
        for (segment, schedule) in approaches {
            signals.push(SignalSpec {
                id: format!("sig_{n}_{segment}"),
                node_id: n.clone(),
                approach_segment_id: segment,
                schedule_id: schedule.to_string(),
            });
        }
    }
    let spec = MapSpec {
        name: format!("grid_{rows}x{cols}"),
        scale_denominator: 10,
        nodes,
        segments,
        schedules,
        signals,
        signs: Vec::new(),
    };
    spec.validate()?;
    Ok(spec)
}

/// The default miniature testbed layout.
pub fn testbed_grid() -> MapSpec {
    generate_grid(
        TESTBED_ROWS,
        TESTBED_COLS,
        TESTBED_BLOCK_LENGTH,
        TESTBED_LANE_WIDTH,
        TESTBED_SPEED_LIMIT,
    )
    .expect("testbed defaults are valid")
}

/// Group segments by incident node: node id -> (segment id, arrives_here).
pub(crate) fn incidence(spec: &MapSpec) -> BTreeMap<String, Vec<(String, bool)>> {
    let mut map: BTreeMap<String, Vec<(String, bool)>> = BTreeMap::new();
    for n in &spec.nodes {
        map.entry(n.id.clone()).or_default();
    }
    for s in &spec.segments {
        map.entry(s.from_node.clone()).or_default().push((s.id.clone(), false));
        map.entry(s.to_node.clone()).or_default().push((s.id.clone(), true));
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
  "name": "minimal",
  "scale_denominator": 10,
  "nodes": [{"id": "A", "x": 0.0, "y": 0.0}, {"id": "B", "x": 2.0, "y": 0.0}],
  "segments": [{
    "id": "s1", "from_node": "A", "to_node": "B",
    "geometry": {"kind": "straight"},
    "lanes_per_direction": 1, "lane_width": 0.15, "speed_limit": 0.5
  }]
}"#;

    #[test]
    fn minimal_map_parses() {
        let spec = parse_map(MINIMAL).unwrap();
        assert_eq!(spec.segments.len(), 1);
        assert_eq!(spec.signals.len(), 0);
    }

    #[test]
    fn negative_lane_width_rejected() {
        let text = MINIMAL.replace("\"lane_width\": 0.15", "\"lane_width\": -0.1");
        match parse_map(&text) {
            Err(MapError::InvalidValue { field, .. }) => assert_eq!(field, "lane_width"),
            other => panic!("expected InvalidValue, got {other:?}"),
        }
    }

    #[test]
    fn dangling_node_reference() {
        let text = MINIMAL.replace("\"to_node\": \"B\"", "\"to_node\": \"Z9\"");
        assert_eq!(parse_map(&text), Err(MapError::UnresolvedReference { id: "Z9".into() }));
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        let text = MINIMAL.replacen("\"name\"", "\"buildings\": [], \"name\"", 1);
        assert!(matches!(parse_map(&text), Err(MapError::MalformedMap { .. })));
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = MINIMAL.replace("\"B\", \"x\": 2.0", "\"B\", \"x\" 2.0");
        match parse_map(&text) {
            Err(MapError::MalformedMap { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected MalformedMap, got {other:?}"),
        }
    }

    #[test]
    fn grid_counts() {
        let g = generate_grid(3, 3, 1.0, 0.15, 0.5).unwrap();
        assert_eq!(g.nodes.len(), 9);
        assert_eq!(g.segments.len(), 12);
        assert_eq!(g.signals.len(), 4);

        let g = generate_grid(2, 2, 1.0, 0.15, 0.5).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.segments.len(), 4);
        assert_eq!(g.signals.len(), 0);
    }

    #[test]
    fn grid_rejects_short_blocks() {
        assert!(matches!(
            generate_grid(3, 3, 0.2, 0.15, 0.5),
            Err(MapError::InvalidValue { .. })
        ));
    }

    #[test]
    fn canonical_text_reparses_to_same_digest() {
        let spec = parse_map(MINIMAL).unwrap();
        let again = parse_map(&spec.to_canonical()).unwrap();
        assert_eq!(spec.digest(), again.digest());
        assert_eq!(spec.to_canonical(), again.to_canonical());
    }

    #[test]
    fn arc_segment_length() {
        let text = MINIMAL
            .replace("\"x\": 2.0, \"y\": 0.0", "\"x\": 1.0, \"y\": 1.0")
            .replace(
                "{\"kind\": \"straight\"}",
                "{\"kind\": \"arc\", \"center_x\": 0.0, \"center_y\": 1.0, \"clockwise\": false}",
            );
        let spec = parse_map(&text).unwrap();
        let len = spec.segment_length(&spec.segments[0]).unwrap();
        assert!((len - PI / 2.0).abs() < 1e-12);
    }
}
