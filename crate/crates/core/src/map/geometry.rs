//! Arc-length parameterized planar curves built from line and circular-arc
//! pieces. Every piece is exactly arc-length parameterized, so a composite
//! curve is too.

use std::f64::consts::PI;

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Absolute heading difference wrapped to [0, pi].
pub fn heading_gap(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn tangent(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    /// Unit vector pointing to the left of the heading.
    pub fn left(&self) -> (f64, f64) {
        (-self.heading.sin(), self.heading.cos())
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closest-point query result against a curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point, clamped to [0, length].
    pub s: f64,
    /// Signed offset, left of the travel direction positive.
    pub lateral: f64,
    /// Euclidean distance to the closest point.
    pub distance: f64,
    /// Curve heading at the closest point.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Line {
        start: Pose,
        length: f64,
    },
    /// Circular arc. `sweep` is signed: positive turns left (counter-clockwise).
    Arc {
        center: (f64, f64),
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Piece {
    pub fn length(&self) -> f64 {
        match self {
            Piece::Line { length, .. } => *length,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        match self {
            Piece::Line { start, .. } => {
                let (c, sn) = start.tangent();
                Pose::new(start.x + c * s, start.y + sn * s, start.heading)
            }
            Piece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let ang = start_angle + dir * s / radius;
                let x = center.0 + radius * ang.cos();
                let y = center.1 + radius * ang.sin();
                Pose::new(x, y, wrap_angle(ang + dir * PI / 2.0))
            }
        }
    }

    pub fn project(&self, x: f64, y: f64) -> Projection {
        match self {
            Piece::Line { start, length } => {
                let (c, sn) = start.tangent();
                let dx = x - start.x;
                let dy = y - start.y;
                let along = dx * c + dy * sn;
                let s = along.clamp(0.0, *length);
                let px = start.x + c * s;
                let py = start.y + sn * s;
                let lateral = -sn * (x - px) + c * (y - py);
                Projection {
                    s,
                    lateral,
                    distance: (x - px).hypot(y - py),
                    heading: start.heading,
                }
            }
            Piece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let ang = (y - center.1).atan2(x - center.0);
                // angular progress from the start in the travel direction
                let mut prog = (dir * (ang - start_angle)).rem_euclid(2.0 * PI);
                let total = sweep.abs();
                if prog > total {
                    // outside the swept range: snap to the nearer endpoint
                    let past_end = prog - total;
                    let before_start = 2.0 * PI - prog;
                    prog = if past_end <= before_start { total } else { 0.0 };
                }
                let s = prog * radius;
                let p = self.pose_at(s);
                let (lx, ly) = p.left();
                let lateral = lx * (x - p.x) + ly * (y - p.y);
                Projection {
                    s,
                    lateral,
                    distance: (x - p.x).hypot(y - p.y),
                    heading: p.heading,
                }
            }
        }
    }
}

/// A tangent-continuous chain of pieces with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pieces: Vec<Piece>,
    cumulative: Vec<f64>,
    length: f64,
}

impl Curve {
    pub fn new(pieces: Vec<Piece>) -> Self {
        let mut cumulative = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            cumulative.push(acc);
            acc += p.length();
        }
        Self {
            pieces,
            cumulative,
            length: acc,
        }
    }

    pub fn line(start: Pose, length: f64) -> Self {
        Self::new(vec![Piece::Line { start, length }])
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length);
        let mut idx = 0;
        for (i, c) in self.cumulative.iter().enumerate() {
            if s >= *c {
                idx = i;
            }
        }
        self.pieces[idx].pose_at(s - self.cumulative[idx])
    }

    pub fn start_pose(&self) -> Pose {
        self.pose_at(0.0)
    }

    pub fn end_pose(&self) -> Pose {
        let last = self.pieces.len() - 1;
        self.pieces[last].pose_at(self.pieces[last].length())
    }

    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best: Option<Projection> = None;
        for (piece, offset) in self.pieces.iter().zip(&self.cumulative) {
            let mut p = piece.project(x, y);
            p.s += offset;
            if best.is_none_or(|b| p.distance < b.distance) {
                best = Some(p);
            }
        }
        let mut best = best.expect("curve has at least one piece");
        best.s = best.s.min(self.length);
        best
    }
}

/// Circular arc (or line) leaving `from` tangentially and passing through
/// `(tx, ty)`. Returns `None` when the target coincides with the start.
pub fn arc_through(from: Pose, tx: f64, ty: f64) -> Option<Piece> {
    let dx = tx - from.x;
    let dy = ty - from.y;
    let chord2 = dx * dx + dy * dy;
    if chord2 < 1e-18 {
        return None;
    }
    let (lx, ly) = from.left();
    let (cx, cy) = from.tangent();
    let normal_component = dx * lx + dy * ly;
    let along = dx * cx + dy * cy;
    if normal_component.abs() <= 1e-12 * chord2.sqrt() {
        if along <= 0.0 {
            return None;
        }
        return Some(Piece::Line {
            start: from,
            length: along,
        });
    }
    // signed radius: positive centre to the left
    let r = chord2 / (2.0 * normal_component);
    let center = (from.x + lx * r, from.y + ly * r);
    let radius = r.abs();
    let start_angle = (from.y - center.1).atan2(from.x - center.0);
    let end_angle = (ty - center.1).atan2(tx - center.0);
    let dir = r.signum();
    let mut sweep = (dir * (end_angle - start_angle)).rem_euclid(2.0 * PI);
    if sweep < 1e-15 {
        sweep = 2.0 * PI;
    }
    Some(Piece::Arc {
        center,
        radius,
        start_angle,
        sweep: dir * sweep,
    })
}

/// Smooth connector between two poses: a single line or arc when one fits
/// within `tol`, otherwise an equal-tangent biarc. `None` if no
/// tangent-continuous connector exists.
pub fn connector(from: Pose, to: Pose, tol: f64) -> Option<Curve> {
    if let Some(piece) = arc_through(from, to.x, to.y) {
        let end = piece.pose_at(piece.length());
        if heading_gap(end.heading, to.heading) <= tol && end.distance_to(&to) <= tol {
            return Some(Curve::new(vec![piece]));
        }
    }
    biarc(from, to, tol)
}

fn biarc(from: Pose, to: Pose, tol: f64) -> Option<Curve> {
    let (t0x, t0y) = from.tangent();
    let (t1x, t1y) = to.tangent();
    let vx = to.x - from.x;
    let vy = to.y - from.y;
    let tx = t0x + t1x;
    let ty = t0y + t1y;
    let vv = vx * vx + vy * vy;
    let vt = vx * tx + vy * ty;
    let a = 2.0 * (t0x * t1x + t0y * t1y - 1.0);
    let d = if a.abs() < 1e-12 {
        if vt <= 0.0 {
            return None;
        }
        vv / (2.0 * vt)
    } else {
        let disc = 4.0 * vt * vt - 4.0 * a * vv;
        if disc < 0.0 {
            return None;
        }
        let r1 = (2.0 * vt + disc.sqrt()) / (2.0 * a);
        let r2 = (2.0 * vt - disc.sqrt()) / (2.0 * a);
        match (r1 > 0.0, r2 > 0.0) {
            (true, true) => r1.min(r2),
            (true, false) => r1,
            (false, true) => r2,
            (false, false) => return None,
        }
    };
    let q0 = (from.x + d * t0x, from.y + d * t0y);
    let q1 = (to.x - d * t1x, to.y - d * t1y);
    let joint = ((q0.0 + q1.0) / 2.0, (q0.1 + q1.1) / 2.0);
    let first = arc_through(from, joint.0, joint.1)?;
    let mid = first.pose_at(first.length());
    let second = arc_through(mid, to.x, to.y)?;
    let end = second.pose_at(second.length());
    if heading_gap(end.heading, to.heading) > tol.max(1e-9) * 10.0 || end.distance_to(&to) > tol {
        return None;
    }
    Some(Curve::new(vec![first, second]))
}
