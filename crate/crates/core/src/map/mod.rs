//! Lane-level road network of the miniature city: file format, grid
//! generator, lane graph construction and point-to-lane queries.

pub mod geometry;
mod graph;
mod spec;

pub use graph::{
    build_graph, Direction, Lane, LaneAssignment, LaneKind, LightBinding, MapGraph, PlacedSign, CONTINUITY_TOL,
    HEADING_PENALTY,
};
pub use spec::{
    generate_grid, parse_map, testbed_grid, MapSpec, NodeSpec, ScheduleSpec, SegmentGeometry, SegmentSpec, SignKind,
    SignSpec, SignalSpec, SpeedLimitChange, DEFAULT_AMBER_S, DEFAULT_GREEN_S, DEFAULT_RED_S, TESTBED_BLOCK_LENGTH,
    TESTBED_COLS, TESTBED_LANE_WIDTH, TESTBED_ROWS, TESTBED_SPEED_LIMIT,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("malformed map at line {line}: {reason}")]
    MalformedMap { line: usize, reason: String },
    #[error("unresolved reference {id:?}")]
    UnresolvedReference { id: String },
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("geometry error: {reason}")]
    GeometryError { reason: String },
    #[error("position is off the map ({distance:.3} m from the nearest lane)")]
    OffMap { distance: f64 },
    #[error("unknown lane {id:?}")]
    UnknownLane { id: String },
}

#[cfg(test)]
mod tests {
    use super::geometry::heading_gap;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn two_node(length: f64) -> MapSpec {
        parse_map(&format!(
            r#"{{"name":"line","scale_denominator":10,
                "nodes":[{{"id":"A","x":0.0,"y":0.0}},{{"id":"B","x":{length},"y":0.0}}],
                "segments":[{{"id":"s1","from_node":"A","to_node":"B","geometry":{{"kind":"straight"}},
                  "lanes_per_direction":1,"lane_width":0.15,"speed_limit":0.5}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_segment_gives_two_full_length_lanes() {
        let g = build_graph(&two_node(2.0)).unwrap();
        assert_eq!(g.lanes.len(), 2);
        for l in &g.lanes {
            assert!((l.length - 2.0).abs() < 1e-12);
            assert!(l.successors.is_empty());
        }
        let f = g.lane("s1:f0").unwrap().centerline.start_pose();
        assert!((f.y + 0.075).abs() < 1e-12, "forward lane sits right of the reference line");
    }

    #[test]
    fn grid_lanes_have_successors_and_connectivity() {
        let g = build_graph(&generate_grid(3, 3, 1.0, 0.15, 0.5).unwrap()).unwrap();
        assert!(g.lanes.iter().all(|l| !l.successors.is_empty()));
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn small_grids_are_strongly_connected() {
        for (r, c) in [(2, 2), (2, 3), (3, 2), (4, 3), (3, 5)] {
            let g = build_graph(&generate_grid(r, c, 1.2, 0.15, 0.6).unwrap()).unwrap();
            assert!(g.is_strongly_connected(), "{r}x{c}");
        }
    }

    #[test]
    fn right_turn_connectors_have_lane_width_radius() {
        let g = build_graph(&generate_grid(3, 3, 1.0, 0.15, 0.5).unwrap()).unwrap();
        // eastbound on h01_00 turning south onto v00_01 (travelling backward)
        let c = g.lane("n01_01:h01_00:f0>v00_01:b0").unwrap();
        match &c.centerline.pieces()[0] {
            geometry::Piece::Arc { radius, sweep, .. } => {
                assert!((radius - 0.15).abs() < 1e-12);
                assert!((sweep + PI / 2.0).abs() < 1e-12);
            }
            other => panic!("expected arc, got {other:?}"),
        }
    }

    #[test]
    fn identical_text_gives_identical_digest() {
        let text = generate_grid(3, 3, 1.0, 0.15, 0.5).unwrap().to_canonical();
        let a = build_graph(&parse_map(&text).unwrap()).unwrap();
        let b = build_graph(&parse_map(&text).unwrap()).unwrap();
        assert_eq!(a.digest, b.digest);
    }

    #[test]
    fn setback_too_long_is_geometry_error() {
        let spec = generate_grid(3, 3, 0.4, 0.15, 0.5).unwrap();
        assert!(matches!(build_graph(&spec), Err(MapError::GeometryError { .. })));
    }

    #[test]
    fn locate_on_centerline_and_offsets() {
        let g = build_graph(&two_node(2.0)).unwrap();
        let a = g.locate(1.0, -0.075, 0.0).unwrap();
        assert_eq!(a.lane_id, "s1:f0");
        assert!(a.lateral_offset.abs() < 1e-12);
        assert!((a.s - 1.0).abs() < 1e-12);

        let left = g.locate(1.0, -0.075 + 0.05, 0.0).unwrap();
        assert_eq!(left.lane_id, "s1:f0");
        assert!((left.lateral_offset - 0.05).abs() < 1e-12);
    }

    #[test]
    fn locate_tie_broken_by_heading() {
        // on the reference line both lanes are 0.075 m away; the
        // heading-aligned lane scores 0.075, the other 0.075 + 0.1*pi
        let g = build_graph(&two_node(2.0)).unwrap();
        let east = g.locate(1.0, 0.0, 0.0).unwrap();
        assert_eq!(east.lane_id, "s1:f0");
        let west = g.locate(1.0, 0.0, PI).unwrap();
        assert_eq!(west.lane_id, "s1:b0");
        // perpendicular heading: equal scores, lexicographic winner
        let tie = g.locate(1.0, 0.0, PI / 2.0).unwrap();
        assert_eq!(tie.lane_id, "s1:b0");
    }

    #[test]
    fn locate_off_map() {
        let g = build_graph(&two_node(2.0)).unwrap();
        assert!(matches!(g.locate(1.0, 1.0, 0.0), Err(MapError::OffMap { .. })));
    }

    #[test]
    fn round_trip_digest_through_canonical_text() {
        let spec = generate_grid(4, 3, 1.2, 0.15, 0.6).unwrap();
        let direct = build_graph(&spec).unwrap();
        let reparsed = build_graph(&parse_map(&spec.to_canonical()).unwrap()).unwrap();
        assert_eq!(direct.digest, reparsed.digest);
    }

    #[test]
    fn arc_segment_lanes_are_concentric() {
        let spec = parse_map(
            r#"{"name":"bend","scale_denominator":10,
                "nodes":[{"id":"A","x":0.0,"y":0.0},{"id":"B","x":1.0,"y":1.0}],
                "segments":[{"id":"s1","from_node":"A","to_node":"B",
                  "geometry":{"kind":"arc","center_x":0.0,"center_y":1.0,"clockwise":false},
                  "lanes_per_direction":1,"lane_width":0.2,"speed_limit":0.5}]}"#,
        )
        .unwrap();
        let g = build_graph(&spec).unwrap();
        let f = g.lane("s1:f0").unwrap();
        let b = g.lane("s1:b0").unwrap();
        assert!((f.length - 1.1 * PI / 2.0).abs() < 1e-12);
        assert!((b.length - 0.9 * PI / 2.0).abs() < 1e-12);
    }

    fn grid_graph() -> MapGraph {
        build_graph(&generate_grid(3, 3, 1.0, 0.15, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn successor_poses_are_continuous() {
        let g = grid_graph();
        for l in &g.lanes {
            let end = l.centerline.end_pose();
            for s in &l.successors {
                let start = g.lane(s).unwrap().centerline.start_pose();
                assert!(end.distance_to(&start) <= 1e-6);
                assert!(heading_gap(end.heading, start.heading) <= 1e-6);
            }
        }
    }

    #[test]
    fn chord_approaches_arc_length() {
        let g = grid_graph();
        let ds = 1e-4;
        for l in &g.lanes {
            let mut s = 0.0;
            while s + ds <= l.length {
                let a = l.centerline.pose_at(s);
                let b = l.centerline.pose_at(s + ds);
                let chord = a.distance_to(&b);
                assert!(chord <= ds * (1.0 + 1e-9));
                assert!((chord - ds).abs() / ds <= 1e-6, "lane {} at s={s}", l.id);
                s += l.length / 7.0;
            }
        }
    }

    proptest! {
        #[test]
        fn chord_never_exceeds_arc_length(i in 0usize..200, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
            let g = grid_graph();
            let lane = &g.lanes[i % g.lanes.len()];
            let (a, b) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let pa = lane.centerline.pose_at(a * lane.length);
            let pb = lane.centerline.pose_at(b * lane.length);
            prop_assert!(pa.distance_to(&pb) <= (b - a) * lane.length + 1e-12);
        }

        #[test]
        fn locate_stable_under_tiny_perturbation(x in 0.0f64..2.0, y in 0.0f64..2.0, h in -3.1f64..3.1, dx in -1e-10f64..1e-10) {
            let g = grid_graph();
            if let Ok(a) = g.locate(x, y, h) {
                let b = g.locate(x + dx, y - dx, h).unwrap();
                prop_assert_eq!(a.lane_id, b.lane_id);
            }
        }
    }
}
