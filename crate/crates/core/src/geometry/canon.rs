//! Canonicalization: orientation, collinear merging, intersection splitting,
//! and length-bounded subdivision.

use super::{closest_param, flatten_plan, orient_segment, segment_distance, sort_segments};
use super::{CanonParams, FloorPlan, Point, Segment};
use crate::{Error, Result};

/// True if `c` and `d` both lie within `tol` of the line through `s`.
fn collinear(s: &Segment, c: Point, d: Point, tol: f64) -> bool {
    let dir = s.direction();
    let bound = tol * dir.norm();
    dir.cross(c.sub(s.a)).abs() < bound && dir.cross(d.sub(s.a)).abs() < bound
}

/// Joins `s` and `t` if they are collinear and their closed projection
/// intervals overlap (touching endpoints count). The result spans the two
/// furthest endpoints.
fn try_merge(s: &Segment, t: &Segment, tol: f64) -> Option<Segment> {
    // Test against the longer segment so the tolerance is scale-aware.
    let (long, short) = if s.length() >= t.length() { (s, t) } else { (t, s) };
    if !collinear(long, short.a, short.b, tol) {
        return None;
    }
    let dir = long.direction();
    let len = dir.norm();
    let u = dir.scale(1.0 / len);
    let proj = |p: Point| p.sub(long.a).dot(u);
    let (p0, p1) = (proj(short.a), proj(short.b));
    let (lo, hi) = (p0.min(p1), p0.max(p1));
    if lo > len + tol || hi < -tol {
        return None;
    }
    let mut pts = [(0.0, long.a), (len, long.b), (p0, short.a), (p1, short.b)];
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    orient_segment(Segment::new(pts[0].1, pts[3].1)).ok()
}

/// Merges overlapping collinear segments until no such pair remains.
///
/// Input segments must be oriented. The output is sorted lexicographically.
pub fn merge_collinear(segs: &[Segment], tol: f64) -> Vec<Segment> {
    let mut segs = segs.to_vec();
    sort_segments(&mut segs);
    loop {
        let mut merged_any = false;
        let mut alive = vec![true; segs.len()];
        for i in 0..segs.len() {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..segs.len() {
                if !alive[j] {
                    continue;
                }
                if let Some(m) = try_merge(&segs[i], &segs[j], tol) {
                    segs[i] = m;
                    alive[j] = false;
                    merged_any = true;
                }
            }
        }
        segs = segs.into_iter().zip(alive).filter_map(|(s, a)| a.then_some(s)).collect();
        if !merged_any {
            break;
        }
    }
    sort_segments(&mut segs);
    segs
}

/// Split locations found on one segment: `(parameter along segment, point)`.
type Splits = Vec<(f64, Point)>;

/// Records a split of `s` at the projection of `p` if it lies strictly
/// inside `s` (further than `tol` from both endpoints). Projecting keeps
/// axis-parallel pieces exactly axis-parallel.
fn push_interior(splits: &mut Splits, s: &Segment, p: Point, tol: f64) {
    if p.dist(s.a) > tol && p.dist(s.b) > tol {
        let t = closest_param(p, s);
        splits.push((t, s.a.add(s.direction().scale(t))));
    }
}

/// Makes segments within `tol` of vertical (horizontal) exactly so by
/// moving both endpoints to their mean x (y), then orients them.
fn snap_and_orient(s: Segment, tol: f64) -> Option<Segment> {
    let (dx, dy) = ((s.b.x - s.a.x).abs(), (s.b.y - s.a.y).abs());
    let mut s = s;
    if dx <= tol && dy > tol {
        let x = 0.5 * (s.a.x + s.b.x);
        s = Segment::from_coords(x, s.a.y, x, s.b.y);
    } else if dy <= tol && dx > tol {
        let y = 0.5 * (s.a.y + s.b.y);
        s = Segment::from_coords(s.a.x, y, s.b.x, y);
    }
    orient_segment(s).ok()
}

/// Breaks segments at every mutual intersection so that no two output
/// segments cross in their interiors.
///
/// All pairwise intersection points are collected in one pass, sorted along
/// each segment, and deduplicated within `tol`, so the result does not depend
/// on input order. Input segments must be oriented and merged.
pub fn split_at_intersections(segs: &[Segment], tol: f64) -> Vec<Segment> {
    let n = segs.len();
    let mut splits: Vec<Splits> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (s, t) = (&segs[i], &segs[j]);
            let mut touched = false;
            // Endpoint of one lying on the other (T-junctions).
            for e in [t.a, t.b] {
                if segment_distance(e, s) < tol {
                    touched = true;
                    push_interior(&mut splits[i], s, e, tol);
                }
            }
            for e in [s.a, s.b] {
                if segment_distance(e, t) < tol {
                    touched = true;
                    push_interior(&mut splits[j], t, e, tol);
                }
            }
            if touched {
                continue;
            }
            // Proper crossing: solve a + u·r = c + v·w.
            let r = s.direction();
            let w = t.direction();
            let denom = r.cross(w);
            if denom.abs() <= f64::EPSILON * r.norm() * w.norm() {
                continue;
            }
            let qp = t.a.sub(s.a);
            let u = qp.cross(w) / denom;
            let v = qp.cross(r) / denom;
            if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                let p = s.a.add(r.scale(u));
                // Near-parallel pairs give unreliable parameters; keep only
                // points that lie on both segments.
                if segment_distance(p, s) >= tol || segment_distance(p, t) >= tol {
                    continue;
                }
                push_interior(&mut splits[i], s, p, tol);
                push_interior(&mut splits[j], t, p, tol);
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for (s, mut sp) in segs.iter().zip(splits) {
        sp.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.lex_cmp(&y.1)));
        let mut prev = s.a;
        for (_, p) in sp {
            if p.dist(prev) <= tol || p.dist(s.b) <= tol {
                continue;
            }
            out.push(Segment::new(prev, p));
            prev = p;
        }
        out.push(Segment::new(prev, s.b));
    }
    sort_segments(&mut out);
    out
}

/// Splits each segment into `⌈len / max_len⌉` equal pieces.
pub fn subdivide(segs: &[Segment], max_len: f64) -> Vec<Segment> {
    let mut out = Vec::with_capacity(segs.len());
    for s in segs {
        let len = s.length();
        // Lengths within rounding of an exact multiple do not get an extra piece.
        let pieces = ((len / max_len) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let d = s.direction();
        let mut prev = s.a;
        for k in 1..=pieces {
            let next = if k == pieces { s.b } else { s.a.add(d.scale(k as f64 / pieces as f64)) };
            out.push(Segment::new(prev, next));
            prev = next;
        }
    }
    out
}

/// Runs the canonicalization pipeline on a raw segment soup.
///
/// Steps: scale, snap and orient (dropping zero-length input), merge
/// collinear, split at intersections, subdivide, snap and orient, then
/// translate so the centroid of all output endpoints is the origin. The
/// result is sorted
/// lexicographically. Centering last makes the pipeline idempotent: a second
/// pass sees a centroid of (numerically) zero.
pub fn canonicalize_segments(segs: &[Segment], params: &CanonParams) -> Result<Vec<Segment>> {
    canonicalize_segments_with_offset(segs, params).map(|(s, _)| s)
}

/// Like [`canonicalize_segments`], also returning the translation applied
/// after scaling, so other geometry can be moved into the same frame.
pub fn canonicalize_segments_with_offset(segs: &[Segment], params: &CanonParams) -> Result<(Vec<Segment>, Point)> {
    params.validate()?;
    let tol = params.collinear_tol;
    let scaled: Vec<Segment> = segs
        .iter()
        .map(|s| Segment::new(s.a.scale(params.global_scale), s.b.scale(params.global_scale)))
        .filter(|s| s.length() > tol)
        .filter_map(|s| snap_and_orient(s, tol))
        .collect();
    if scaled.is_empty() {
        return Err(Error::Degenerate("all segments have zero length".into()));
    }
    let merged = merge_collinear(&scaled, tol);
    let split = split_at_intersections(&merged, tol);
    let mut out: Vec<Segment> = subdivide(&split, params.max_seg_len)
        .into_iter()
        .filter_map(|s| snap_and_orient(s, tol))
        .collect();

    let count = (2 * out.len()) as f64;
    let sum = out.iter().fold(Point::ORIGIN, |acc, s| acc.add(s.a).add(s.b));
    let centroid = sum.scale(1.0 / count);
    let shift = centroid.scale(-1.0);
    for s in &mut out {
        *s = s.translate(shift);
    }
    sort_segments(&mut out);
    Ok((out, shift))
}

/// Flattens a plan and canonicalizes its wall and window segments.
pub fn canonicalize(plan: &FloorPlan, params: &CanonParams) -> Result<Vec<Segment>> {
    canonicalize_segments(&flatten_plan(plan)?, params)
}
