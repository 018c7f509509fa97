//! Viewpoint selection and viewpoint-centered partial views.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::{segment_distance, FloorPlan, Point, Segment};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewParams {
    /// Maximum number of segments kept per view.
    pub n_segs: usize,
    /// Segments closer than this to the viewpoint are excluded, meters.
    pub d_near: f64,
    /// Segments further than this from the viewpoint are excluded, meters.
    pub d_far: f64,
}

impl Default for ViewParams {
    fn default() -> Self {
        Self { n_segs: 100, d_near: 0.40, d_far: 7.5 }
    }
}

impl ViewParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_segs >= 1 && self.d_near >= 0.0 && self.d_near < self.d_far) {
            return Err(Error::InvalidArgument(format!("invalid view params {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleParams {
    /// Number of valid candidate locations to draw.
    pub n_p: usize,
    /// Minimum distance from a candidate to its space's boundary, meters.
    pub clearance: f64,
    /// Selection stops once the best achievable spacing drops below this.
    pub d_pmin: f64,
    pub rng_seed: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self { n_p: 1000, clearance: 0.40, d_pmin: 1.0, rng_seed: 0 }
    }
}

impl SampleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_p >= 1 && self.clearance >= 0.0 && self.d_pmin > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid sample params {self:?}")));
        }
        Ok(())
    }
}

/// True if `p` is inside some space and at least `clearance` from that
/// space's boundary.
pub fn is_valid_location(plan: &FloorPlan, p: Point, clearance: f64) -> bool {
    plan.spaces.iter().any(|s| s.contains(p) && s.boundary_distance(p) >= clearance)
}

/// Rejection-samples up to `n_p` valid locations uniformly over the plan's
/// bounding box, giving up after `10 * n_p` draws.
pub fn sample_candidates(plan: &FloorPlan, params: &SampleParams, rng: &mut Rng) -> Vec<Point> {
    let (lo, hi) = plan.bbox();
    let mut out = Vec::with_capacity(params.n_p);
    for _ in 0..params.n_p * 10 {
        if out.len() == params.n_p {
            break;
        }
        let p = Point::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if is_valid_location(plan, p, params.clearance) {
            out.push(p);
        }
    }
    out
}

/// Greedy max-min selection over `candidates`, starting from the first.
///
/// Each round picks the remaining candidate whose distance to the nearest
/// selected point is largest (earliest index on ties); selection stops when
/// that distance falls below `d_pmin`. Returns indices in selection order.
pub fn farthest_point_selection(candidates: &[Point], d_pmin: f64) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut selected = vec![0];
    let mut min_dist: Vec<f64> = candidates.iter().map(|p| p.dist(candidates[0])).collect();
    let mut taken = vec![false; candidates.len()];
    taken[0] = true;
    loop {
        let best = min_dist
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .fold(None::<(usize, f64)>, |acc, (i, &d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((i, d)),
            });
        let Some((i, d)) = best else { break };
        if d < d_pmin {
            break;
        }
        taken[i] = true;
        selected.push(i);
        let p = candidates[i];
        for (m, c) in min_dist.iter_mut().zip(candidates) {
            *m = m.min(c.dist(p));
        }
    }
    selected
}

/// Samples well-spread viewpoints inside a plan.
pub fn sample_viewpoints(plan: &FloorPlan, params: &SampleParams) -> Result<Vec<Point>> {
    params.validate()?;
    let mut rng = crate::rng::substream(params.rng_seed, "viewpoints", 0);
    let candidates = sample_candidates(plan, params, &mut rng);
    if candidates.is_empty() {
        return Err(Error::InvalidPlan(format!(
            "{}/{}: no valid viewpoint after {} attempts",
            plan.building_id,
            plan.floor_id,
            params.n_p * 10
        )));
    }
    Ok(farthest_point_selection(&candidates, params.d_pmin).into_iter().map(|i| candidates[i]).collect())
}

/// Nearest segments around `vp`, translated so that `vp` is the origin.
///
/// Segments at distance in `[d_near, d_far]` are kept, ordered by distance
/// (lexicographic tie-break) and truncated to `n_segs`.
pub fn extract_view(segs: &[Segment], vp: Point, params: &ViewParams) -> Vec<Segment> {
    let mut kept: Vec<(f64, Segment)> = segs
        .iter()
        .map(|s| (segment_distance(vp, s), *s))
        .filter(|(d, _)| *d >= params.d_near && *d <= params.d_far)
        .collect();
    kept.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.lex_cmp(&y.1)));
    kept.truncate(params.n_segs);
    let shift = vp.scale(-1.0);
    kept.into_iter().map(|(_, s)| s.translate(shift)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_selection_examples() {
        let c = [Point::new(0., 0.), Point::new(5., 0.), Point::new(10., 0.)];
        assert_eq!(farthest_point_selection(&c, 1.0), vec![0, 2, 1]);
        assert_eq!(farthest_point_selection(&c, 6.0), vec![0, 2]);
        assert_eq!(farthest_point_selection(&c, 11.0), vec![0]);
    }

    #[test]
    fn greedy_matches_brute_force_argmax_min() {
        let mut rng = crate::rng::substream(3, "t", 0);
        let pts: Vec<Point> =
            (0..60).map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        let sel = farthest_point_selection(&pts, 0.5);
        for k in 1..sel.len() {
            let chosen = &sel[..k];
            let score = |i: usize| chosen.iter().map(|&j| pts[i].dist(pts[j])).fold(f64::INFINITY, f64::min);
            let best = (0..pts.len()).filter(|i| !chosen.contains(i)).map(score).fold(0.0, f64::max);
            assert_eq!(score(sel[k]), best);
        }
    }

    #[test]
    fn view_filters_sorts_truncates_translates() {
        let p = ViewParams::default();
        let near = Segment::from_coords(0.3, -1.0, 0.3, 1.0);
        assert!(extract_view(&[near], Point::ORIGIN, &p).is_empty());

        let s = Segment::from_coords(3., 3., 4., 3.);
        assert_eq!(extract_view(&[s], Point::new(2., 3.), &p), vec![Segment::from_coords(1., 0., 2., 0.)]);

        let many: Vec<Segment> =
            (0..150).map(|i| Segment::from_coords(1.0 + 0.04 * i as f64, 0.0, 1.0 + 0.04 * i as f64, 1.0)).collect();
        let v = extract_view(&many, Point::ORIGIN, &p);
        assert_eq!(v.len(), 100);
        assert_eq!(v[0], many[0]);
        assert_eq!(v[99], many[99]);
    }
}
