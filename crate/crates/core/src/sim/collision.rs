use serde::{Deserialize, Serialize};

use crate::plant::{VehicleParams, VehicleState};

/// Oriented rectangle: centre, heading of the long axis, full length and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub id: String,
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn of_vehicle(id: &str, state: &VehicleState, params: &VehicleParams) -> Self {
        let off = params.centre_offset();
        Self {
            id: id.to_string(),
            cx: state.x + off * state.theta.cos(),
            cy: state.y + off * state.theta.sin(),
            heading: state.theta,
            length: params.body_length,
            width: params.track_width,
        }
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let at = |a: f64, b: f64| (self.cx + a * c - b * s, self.cy + a * s + b * c);
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        [(c, s), (-s, c)]
    }
}

/// Relative tolerance under which projections that merely touch count as
/// separated.
const TOUCH_EPS: f64 = 1e-9;

/// Strict overlap by the separating-axis test over both rectangles' axes.
pub fn overlaps(a: &Footprint, b: &Footprint) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let scale = a.length.max(a.width).max(b.length).max(b.width);
    for (ax, ay) in a.axes().into_iter().chain(b.axes()) {
        let project = |pts: &[(f64, f64); 4]| {
            pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| {
                let p = x * ax + y * ay;
                (lo.min(p), hi.max(p))
            })
        };
        let (alo, ahi) = project(&ca);
        let (blo, bhi) = project(&cb);
        if ahi <= blo + TOUCH_EPS * scale || bhi <= alo + TOUCH_EPS * scale {
            return false;
        }
    }
    true
}

/// All strictly overlapping pairs, each as (lower id, higher id), sorted.
pub fn detect_collision_pairs(footprints: &[Footprint]) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for i in 0..footprints.len() {
        for j in i + 1..footprints.len() {
            let (a, b) = (&footprints[i], &footprints[j]);
            // cheap reject on circumscribed circles
            let r = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
            if (a.cx - b.cx).hypot(a.cy - b.cy) >= r {
                continue;
            }
            if overlaps(a, b) {
                let (x, y) = if a.id <= b.id { (&a.id, &b.id) } else { (&b.id, &a.id) };
                pairs.push((x.clone(), y.clone()));
            }
        }
    }
    pairs.sort();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn rect(id: &str, cx: f64, cy: f64, heading: f64) -> Footprint {
        Footprint {
            id: id.into(),
            cx,
            cy,
            heading,
            length: 0.23,
            width: 0.12,
        }
    }

    #[test]
    fn disjoint_is_empty() {
        assert!(detect_collision_pairs(&[rect("a", 0.0, 0.0, 0.0), rect("b", 1.0, 0.0, 0.0)]).is_empty());
    }

    #[test]
    fn identical_is_one_pair() {
        let pairs = detect_collision_pairs(&[rect("b", 0.0, 0.0, 0.3), rect("a", 0.0, 0.0, 0.3)]);
        assert_eq!(pairs, vec![("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn nose_to_tail_overlap() {
        // centres 0.20 m apart along the heading; bodies are 0.23 m long
        let pairs = detect_collision_pairs(&[rect("a", 0.0, 0.0, 0.0), rect("b", 0.20, 0.0, 0.0)]);
        assert_eq!(pairs.len(), 1);
        assert!(detect_collision_pairs(&[rect("a", 0.0, 0.0, 0.0), rect("b", 0.24, 0.0, 0.0)]).is_empty());
    }

    /// Independent vertex oracle: some corner of one lies strictly inside the other.
    fn vertex_inside(a: &Footprint, b: &Footprint) -> bool {
        let inside = |r: &Footprint, (x, y): (f64, f64)| {
            let (c, s) = (r.heading.cos(), r.heading.sin());
            let (dx, dy) = (x - r.cx, y - r.cy);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            u.abs() < r.length / 2.0 - 1e-9 && v.abs() < r.width / 2.0 - 1e-9
        };
        a.corners().into_iter().any(|p| inside(b, p)) || b.corners().into_iter().any(|p| inside(a, p))
    }

    #[test]
    fn corner_touch_at_45_degrees_is_not_collision() {
        let a = Footprint {
            id: "a".into(),
            cx: 0.0,
            cy: 0.0,
            heading: 0.0,
            length: 0.2,
            width: 0.2,
        };
        // rotated square whose left corner sits exactly on a's right edge midpoint
        let half_diag = 0.1 * 2f64.sqrt();
        let b = Footprint {
            id: "b".into(),
            cx: 0.1 + half_diag,
            cy: 0.0,
            heading: FRAC_PI_4,
            length: 0.2,
            width: 0.2,
        };
        assert!(detect_collision_pairs(&[a.clone(), b.clone()]).is_empty());
        // nudged inward it overlaps
        let c = Footprint { cx: b.cx - 1e-4, ..b };
        assert_eq!(detect_collision_pairs(&[a, c]).len(), 1);
    }

    proptest! {
        // A vertex strictly inside the other rectangle always implies SAT overlap.
        #[test]
        fn sat_agrees_with_vertex_oracle(
            x in -0.4f64..0.4, y in -0.4f64..0.4, h1 in -3.1f64..3.1, h2 in -3.1f64..3.1
        ) {
            let a = rect("a", 0.0, 0.0, h1);
            let b = rect("b", x, y, h2);
            if vertex_inside(&a, &b) {
                prop_assert!(overlaps(&a, &b));
            }
            prop_assert_eq!(overlaps(&a, &b), overlaps(&b, &a));
        }
    }
}
