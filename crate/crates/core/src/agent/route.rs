use crate::map::geometry::heading_gap;
use crate::map::{Lane, MapGraph};

/// Successor to take after `lane`.
///
/// With a route (a cyclic list of lane ids), the successor that is the next
/// route lane wins, or failing that a connector leading into it. Otherwise
/// the straightest successor is taken, ties to the lowest id.
pub fn next_lane<'g>(graph: &'g MapGraph, lane: &Lane, route: Option<&[String]>) -> Option<&'g Lane> {
    if lane.successors.is_empty() {
        return None;
    }
    if let Some(route) = route {
        if let Some(i) = route.iter().position(|r| *r == lane.id) {
            let want = &route[(i + 1) % route.len()];
            if let Some(id) = lane.successors.iter().find(|s| *s == want) {
                return graph.lane(id);
            }
            for id in &lane.successors {
                let succ = graph.lane(id)?;
                if succ.is_connector() && succ.successors.iter().any(|s| s == want) {
                    return Some(succ);
                }
            }
        }
    }
    lane.successors
        .iter()
        .filter_map(|id| graph.lane(id))
        .min_by(|a, b| {
            turning(a)
                .total_cmp(&turning(b))
                .then_with(|| a.id.cmp(&b.id))
        })
}

fn turning(lane: &Lane) -> f64 {
    heading_gap(lane.centerline.start_pose().heading, lane.centerline.end_pose().heading)
}

/// Lanes starting with `lane_id` that cover at least `horizon` metres
/// beyond arc length `s`, stopping early at dead ends.
pub fn plan_path(graph: &MapGraph, lane_id: &str, s: f64, horizon: f64, route: Option<&[String]>) -> Vec<String> {
    let mut out = vec![lane_id.to_string()];
    let Some(mut lane) = graph.lane(lane_id) else {
        return out;
    };
    let mut covered = lane.length - s;
    while covered < horizon && out.len() < 64 {
        match next_lane(graph, lane, route) {
            Some(next) => {
                covered += next.length;
                out.push(next.id.clone());
                lane = next;
            }
            None => break,
        }
    }
    out
}
