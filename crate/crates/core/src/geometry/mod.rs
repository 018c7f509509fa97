//! Exact 2-D segment types, floor plans, and canonicalization.

mod canon;
mod plan_json;

pub use canon::{
    canonicalize, canonicalize_segments, canonicalize_segments_with_offset, merge_collinear, split_at_intersections, subdivide,
};
pub use plan_json::{plan_from_json, plan_to_json, PlanDocument};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A location in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }

    /// Lexicographic comparison on `(x, y)`.
    pub fn lex_cmp(&self, o: &Point) -> std::cmp::Ordering {
        self.x.total_cmp(&o.x).then(self.y.total_cmp(&o.y))
    }
}

/// A straight line segment between two points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub const fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn from_coords(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(Point::new(x0, y0), Point::new(x1, y1))
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn direction(&self) -> Point {
        self.b.sub(self.a)
    }

    pub fn is_degenerate(&self) -> bool {
        self.a == self.b
    }

    /// True if endpoints are in canonical order: left-to-right, or
    /// bottom-to-top for vertical segments.
    pub fn is_oriented(&self) -> bool {
        self.a.x < self.b.x || (self.a.x == self.b.x && self.a.y < self.b.y)
    }

    pub fn translate(&self, d: Point) -> Segment {
        Segment::new(self.a.add(d), self.b.add(d))
    }

    /// Lexicographic order on `(a.x, a.y, b.x, b.y)`; the tie-break for any
    /// sort of segments.
    pub fn lex_cmp(&self, o: &Segment) -> std::cmp::Ordering {
        self.a.lex_cmp(&o.a).then_with(|| self.b.lex_cmp(&o.b))
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.a.x, self.a.y, self.b.x, self.b.y]
    }
}

/// Boundary segment type as stored in a floor plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Wall,
    Window,
    Portal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub kind: SegmentKind,
    pub segment: Segment,
}

/// A space (room, corridor, ...) bounded by one closed polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Space {
    pub boundary: Vec<BoundarySegment>,
}

/// Endpoint matching tolerance for boundary closure, in meters.
const CLOSURE_TOL: f64 = 1e-6;

impl Space {
    pub fn new(boundary: Vec<BoundarySegment>) -> Result<Self> {
        let space = Self { boundary };
        space.validate()?;
        Ok(space)
    }

    /// Checks that the boundary is one closed polygon with nonzero area.
    pub fn validate(&self) -> Result<()> {
        let n = self.boundary.len();
        if n < 3 {
            return Err(Error::InvalidPlan(format!(
                "boundary has {n} segments, need at least 3"
            )));
        }
        for (i, bs) in self.boundary.iter().enumerate() {
            let s = bs.segment;
            if !s.a.is_finite() || !s.b.is_finite() {
                return Err(Error::InvalidPlan(format!("segment {i} has non-finite coordinates")));
            }
            let next = self.boundary[(i + 1) % n].segment;
            if s.b.dist(next.a) > CLOSURE_TOL {
                return Err(Error::InvalidPlan(format!(
                    "boundary not closed between segments {i} and {}",
                    (i + 1) % n
                )));
            }
        }
        if self.signed_area().abs() <= f64::EPSILON {
            return Err(Error::InvalidPlan("boundary polygon has zero area".into()));
        }
        Ok(())
    }

    /// Polygon vertices: the start point of each boundary segment.
    pub fn polygon(&self) -> impl Iterator<Item = Point> + '_ {
        self.boundary.iter().map(|b| b.segment.a)
    }

    pub fn signed_area(&self) -> f64 {
        let pts: Vec<Point> = self.polygon().collect();
        let n = pts.len();
        (0..n).map(|i| pts[i].cross(pts[(i + 1) % n])).sum::<f64>() / 2.0
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Point) -> bool {
        let pts: Vec<Point> = self.polygon().collect();
        let n = pts.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (pi, pj) = (pts[i], pts[j]);
            if (pi.y > p.y) != (pj.y > p.y) {
                let x = pj.x + (p.y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Distance from `p` to the nearest boundary segment.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.boundary
            .iter()
            .map(|b| segment_distance(p, &b.segment))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A floor of a building: a set of spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub building_id: String,
    pub floor_id: String,
    pub spaces: Vec<Space>,
}

/// Axis-aligned bounding box `(min, max)`.
pub type BBox = (Point, Point);

impl FloorPlan {
    pub fn validate(&self) -> Result<()> {
        if self.spaces.is_empty() {
            return Err(Error::InvalidPlan(format!(
                "{}/{}: plan has no spaces",
                self.building_id, self.floor_id
            )));
        }
        for (i, space) in self.spaces.iter().enumerate() {
            space.validate().map_err(|e| {
                Error::InvalidPlan(format!("{}/{}: space {i}: {e}", self.building_id, self.floor_id))
            })?;
        }
        let (lo, hi) = self.bbox();
        if !(hi.x > lo.x && hi.y > lo.y) {
            return Err(Error::InvalidPlan("bounding box has zero area".into()));
        }
        Ok(())
    }

    pub fn bbox(&self) -> BBox {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for bs in self.spaces.iter().flat_map(|s| &s.boundary) {
            for p in [bs.segment.a, bs.segment.b] {
                lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }

    /// The plan with every coordinate scaled by `scale` then shifted by `offset`.
    pub fn transformed(&self, scale: f64, offset: Point) -> FloorPlan {
        let mut out = self.clone();
        for bs in out.spaces.iter_mut().flat_map(|s| s.boundary.iter_mut()) {
            let s = bs.segment;
            bs.segment = Segment::new(s.a.scale(scale).add(offset), s.b.scale(scale).add(offset));
        }
        out
    }

    /// Index of a space containing `p`, if any.
    pub fn space_at(&self, p: Point) -> Option<usize> {
        self.spaces.iter().position(|s| s.contains(p))
    }
}

/// Wall and window segments of every space; portals are dropped.
///
/// Shared walls appear once per space; duplicates are removed later by
/// [`merge_collinear`]. Returns an error when nothing but portals remain.
pub fn flatten_plan(plan: &FloorPlan) -> Result<Vec<Segment>> {
    let segs: Vec<Segment> = plan
        .spaces
        .iter()
        .flat_map(|s| &s.boundary)
        .filter(|b| b.kind != SegmentKind::Portal)
        .map(|b| b.segment)
        .collect();
    if segs.is_empty() {
        return Err(Error::Degenerate(format!(
            "{}/{}: plan contains only portals",
            plan.building_id, plan.floor_id
        )));
    }
    Ok(segs)
}

/// Swaps endpoints if needed so that `a.x < b.x`, or `a.y < b.y` when
/// vertical.
pub fn orient_segment(s: Segment) -> Result<Segment> {
    if s.is_degenerate() {
        return Err(Error::Degenerate(format!("zero-length segment at ({}, {})", s.a.x, s.a.y)));
    }
    Ok(if s.is_oriented() { s } else { Segment::new(s.b, s.a) })
}

/// Parameter of the point on `s` closest to `p`, clamped to `[0, 1]`.
pub(crate) fn closest_param(p: Point, s: &Segment) -> f64 {
    let d = s.direction();
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return 0.0;
    }
    (p.sub(s.a).dot(d) / len2).clamp(0.0, 1.0)
}

/// Euclidean distance from `p` to the closed segment `s`.
pub fn segment_distance(p: Point, s: &Segment) -> f64 {
    let t = closest_param(p, s);
    p.dist(s.a.add(s.direction().scale(t)))
}

/// Sorts segments by the lexicographic tie-break order.
pub fn sort_segments(segs: &mut [Segment]) {
    segs.sort_by(Segment::lex_cmp);
}

/// Set equality for oriented segment lists with per-coordinate tolerance.
pub fn segment_sets_equal(a: &[Segment], b: &[Segment], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    // Sorting alone is not enough: coordinates within `tol` can still sort
    // differently, so match greedily within a window on the first coordinate.
    let mut b: Vec<(Segment, bool)> = b.iter().map(|s| (*s, false)).collect();
    b.sort_by(|x, y| x.0.lex_cmp(&y.0));
    let close = |s: &Segment, t: &Segment| s.coords().iter().zip(t.coords()).all(|(u, v)| (u - v).abs() <= tol);
    a.iter().all(|s| {
        let lo = b.partition_point(|(t, _)| t.a.x < s.a.x - tol);
        let hit = b[lo..].iter().take_while(|(t, _)| t.a.x <= s.a.x + tol).position(|(t, used)| !used && close(s, t));
        match hit {
            Some(k) => {
                b[lo + k].1 = true;
                true
            }
            None => false,
        }
    })
}

/// Parameters of the canonicalization pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanonParams {
    /// Collinearity and intersection tolerance, meters.
    pub collinear_tol: f64,
    /// Upper bound on output segment length, meters.
    pub max_seg_len: f64,
    pub global_scale: f64,
}

impl Default for CanonParams {
    fn default() -> Self {
        Self { collinear_tol: 1e-6, max_seg_len: 2.5, global_scale: 1.0 }
    }
}

impl CanonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.collinear_tol > 0.0 && self.max_seg_len > 0.0 && self.global_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid canonicalization params {self:?}")));
        }
        Ok(())
    }
}
