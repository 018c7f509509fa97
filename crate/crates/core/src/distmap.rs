//! Shortest-path distance prediction on occupancy grids.
//!
//! Grids cover 40 x 40 m around the viewpoint at 256 x 256 cells. Obstacles
//! are inflated by Chebyshev dilation, and distances come from an
//! 8-connected Dijkstra search with Euclidean step costs that never cuts
//! a corner between two cells when either side neighbor is occupied.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{decode, encode, Quantizer, TokenSequence};
use crate::geometry::{Point, Segment};
use crate::infer::{sample_sequence, SamplerConfig};
use crate::model::Model;
use crate::raster::{draw_segments, rasterize, BinaryGrid, GridSpec};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// 256 x 256 cells over 40 x 40 m.
pub const DISTMAP_GRID: GridSpec = GridSpec { width_px: 256, height_px: 256, extent: 20.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistmapConfig {
    pub grid: GridSpec,
    pub inflate_cells: usize,
    pub k_completions: usize,
    /// Observed segments the completions are conditioned on.
    pub n_observed: usize,
}

impl Default for DistmapConfig {
    fn default() -> Self {
        Self { grid: DISTMAP_GRID, inflate_cells: 4, k_completions: 8, n_observed: 25 }
    }
}

/// Occupancy grid with every segment drawn.
pub fn occupancy(segs: &[Segment], spec: GridSpec) -> BinaryGrid {
    let mut g = BinaryGrid::new(spec);
    draw_segments(&mut g, segs);
    g
}

/// Chebyshev dilation by `cells`.
pub fn inflate(g: &BinaryGrid, cells: usize) -> BinaryGrid {
    if cells == 0 {
        return g.clone();
    }
    let (h, w) = (g.height(), g.width());
    let mut rows = BinaryGrid::new(g.spec());
    for r in 0..h {
        for c in 0..w {
            if g.get(r, c) {
                for cc in c.saturating_sub(cells)..=(c + cells).min(w - 1) {
                    rows.set(r, cc, true);
                }
            }
        }
    }
    let mut out = BinaryGrid::new(g.spec());
    for r in 0..h {
        for c in 0..w {
            if rows.get(r, c) {
                for rr in r.saturating_sub(cells)..=(r + cells).min(h - 1) {
                    out.set(rr, c, true);
                }
            }
        }
    }
    out
}

/// Per-cell path length in meters; `f64::INFINITY` marks unreachable cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DistanceGrid {
    pub fn unreachable(spec: GridSpec) -> Self {
        Self { spec, values: vec![f64::INFINITY; spec.len()] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.width_px + col]
    }

    /// Comma-separated rows, top row first; unreachable cells read `inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 8);
        for row in self.values.chunks(self.spec.width_px) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                if v.is_finite() {
                    write!(s, "{v}").expect("string write");
                } else {
                    s.push_str("inf");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Plain PGM heatmap: 0 for unreachable, 1..=255 scaled to the largest
    /// finite distance.
    pub fn to_pgm(&self) -> String {
        let max = self.values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        let mut s = format!("P2\n{} {}\n255\n", self.spec.width_px, self.spec.height_px);
        for row in self.values.chunks(self.spec.width_px) {
            let line: Vec<String> = row
                .iter()
                .map(|&v| {
                    if !v.is_finite() {
                        0
                    } else if max == 0.0 {
                        1
                    } else {
                        1 + (254.0 * v / max).round() as u32
                    }
                })
                .map(|v| v.to_string())
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.dist.total_cmp(&self.dist).then(o.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Grid cell holding `origin`.
pub fn origin_cell(spec: GridSpec, origin: Point) -> Result<(usize, usize)> {
    let (r, c) = spec.cell_of(origin);
    if !spec.contains_cell(r, c) {
        return Err(Error::InvalidArgument(format!("origin {origin:?} outside the grid")));
    }
    Ok((r as usize, c as usize))
}

/// 8-connected moves `(dr, dc, diagonal)`.
pub(crate) const MOVES: [(i64, i64, bool); 8] =
    [(-1, 0, false), (1, 0, false), (0, -1, false), (0, 1, false), (-1, -1, true), (-1, 1, true), (1, -1, true), (1, 1, true)];

/// Calls `f(neighbor, cost)` for every legal move out of free cell `(r, c)`.
pub(crate) fn for_each_move(g: &BinaryGrid, r: usize, c: usize, mut f: impl FnMut(usize, usize, f64)) {
    let side = g.spec().cell_width();
    let diag = side * std::f64::consts::SQRT_2;
    let (h, w) = (g.height() as i64, g.width() as i64);
    let free = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && !g.get(r as usize, c as usize);
    let (ri, ci) = (r as i64, c as i64);
    for (dr, dc, d) in MOVES {
        let (nr, nc) = (ri + dr, ci + dc);
        if !free(nr, nc) || (d && (!free(ri + dr, ci) || !free(ri, ci + dc))) {
            continue;
        }
        f(nr as usize, nc as usize, if d { diag } else { side });
    }
}

/// Single-source shortest paths from the cell containing `origin`.
pub fn shortest_dist(g: &BinaryGrid, origin: Point) -> Result<DistanceGrid> {
    let spec = g.spec();
    if (spec.cell_width() - spec.cell_height()).abs() > 1e-12 {
        return Err(Error::InvalidArgument("search needs square cells".into()));
    }
    let (r0, c0) = origin_cell(spec, origin)?;
    if g.get(r0, c0) {
        return Err(Error::OriginBlocked { row: r0, col: c0 });
    }
    let w = g.width();
    let mut out = DistanceGrid::unreachable(spec);
    let mut done = vec![false; spec.len()];
    let mut heap = BinaryHeap::new();
    out.values[r0 * w + c0] = 0.0;
    heap.push(Entry { dist: 0.0, cell: r0 * w + c0 });
    while let Some(Entry { dist, cell }) = heap.pop() {
        if done[cell] {
            continue;
        }
        done[cell] = true;
        for_each_move(g, cell / w, cell % w, |nr, nc, cost| {
            let n = nr * w + nc;
            let nd = dist + cost;
            if nd < out.values[n] {
                out.values[n] = nd;
                heap.push(Entry { dist: nd, cell: n });
            }
        });
    }
    Ok(out)
}

/// Distances on the inflated occupancy of `segs`. A blocked origin gives
/// an all-unreachable grid with 0 at the origin.
pub fn distance_for_segments(segs: &[Segment], cfg: &DistmapConfig) -> Result<DistanceGrid> {
    let g = inflate(&occupancy(segs, cfg.grid), cfg.inflate_cells);
    match shortest_dist(&g, Point::ORIGIN) {
        Err(Error::OriginBlocked { row, col }) => {
            let mut d = DistanceGrid::unreachable(cfg.grid);
            d.values[row * cfg.grid.width_px + col] = 0.0;
            Ok(d)
        }
        other => other,
    }
}

/// Per-cell lower median; infinity sorts last.
pub fn median_grid(grids: &[DistanceGrid]) -> Result<DistanceGrid> {
    let first = grids.first().ok_or_else(|| Error::InvalidArgument("no distance grids".into()))?;
    if grids.iter().any(|g| g.spec != first.spec) {
        return Err(Error::InvalidArgument("distance grids differ in spec".into()));
    }
    let k = grids.len();
    let mut buf = vec![0.0; k];
    let values = (0..first.values.len())
        .map(|i| {
            for (b, g) in buf.iter_mut().zip(grids) {
                *b = g.values[i];
            }
            buf.sort_by(f64::total_cmp);
            buf[(k - 1) / 2]
        })
        .collect();
    Ok(DistanceGrid { spec: first.spec, values })
}

/// Sampled completions and the resulting median distance grid.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub completions: Vec<TokenSequence>,
    pub grids: Vec<DistanceGrid>,
    pub median: DistanceGrid,
}

/// Draws `k_completions` continuations of the observed segments, searches
/// each completed map, and takes the per-cell lower median. Completion `i`
/// uses a seed derived from `sampler.rng_seed` and `i`.
pub fn predict_distance(
    model: &Model,
    observation: &[Segment],
    q: &Quantizer,
    cfg: &DistmapConfig,
    sampler: &SamplerConfig,
) -> Result<Prediction> {
    if cfg.k_completions == 0 {
        return Err(Error::InvalidArgument("need at least one completion".into()));
    }
    let observed = &observation[..observation.len().min(cfg.n_observed)];
    let mut prefix = encode(observed, q);
    prefix.tokens.pop();
    let image = model
        .config
        .has_context()
        .then(|| rasterize(&decode(&prefix, q).expect("encoded prefix"), model.config.grid, model.config.n_raster));
    let runs: Vec<Result<(TokenSequence, DistanceGrid)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.k_completions)
            .map(|i| {
                let prefix = &prefix;
                let image = image.as_ref();
                s.spawn(move || {
                    let sc = SamplerConfig { rng_seed: derive_seed(sampler.rng_seed, "completion", i as u64), ..sampler.clone() };
                    let seq = sample_sequence(model, prefix, image, &sc)?;
                    let grid = distance_for_segments(&decode(&seq, q)?, cfg)?;
                    Ok((seq, grid))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("completion worker panicked")).collect()
    });
    let (completions, grids): (Vec<_>, Vec<_>) = runs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let median = median_grid(&grids)?;
    Ok(Prediction { completions, grids, median })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge, meters.
    pub lo: f64,
    pub count: usize,
}

/// Signed distance errors `d - d_true` of one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_error: Option<f64>,
    pub mean_abs_error: Option<f64>,
    pub bin_width: f64,
    pub histogram: Vec<HistogramBin>,
    pub evaluated_cells: usize,
    pub trivial_cells: usize,
    /// Cells reachable in the true grid but not under this hypothesis.
    pub unreachable_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub prediction: ErrorStats,
    pub null: ErrorStats,
    pub true_unreachable_cells: usize,
}

/// Errors of the prediction `d_p` and the observed-only map `d_0` against
/// the true map `d_true`, skipping trivial cells (all three equal) and
/// cells unreachable in the true map. Histogram bins are eight cell sides.
pub fn error_stats(d_p: &DistanceGrid, d_0: &DistanceGrid, d_true: &DistanceGrid) -> Result<ErrorReport> {
    if d_p.spec != d_true.spec || d_0.spec != d_true.spec {
        return Err(Error::InvalidArgument("distance grids differ in spec".into()));
    }
    let bin_width = 8.0 * d_true.spec.cell_width();
    let mut trivial = 0;
    let mut true_unreachable = 0;
    let mut errs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut unreachable = [0usize; 2];
    for i in 0..d_true.values.len() {
        let t = d_true.values[i];
        let (p, z) = (d_p.values[i], d_0.values[i]);
        if p == t && z == t {
            trivial += 1;
            continue;
        }
        if !t.is_finite() {
            true_unreachable += 1;
            continue;
        }
        for (k, d) in [p, z].into_iter().enumerate() {
            if d.is_finite() {
                errs[k].push(d - t);
            } else {
                unreachable[k] += 1;
            }
        }
    }
    let stats = |e: &[f64], unreachable: usize| {
        let n = e.len();
        let mean = |f: &dyn Fn(f64) -> f64| (n > 0).then(|| e.iter().map(|&v| f(v)).sum::<f64>() / n as f64);
        let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
        for &v in e {
            *hist.entry((v / bin_width).floor() as i64).or_default() += 1;
        }
        ErrorStats {
            mean_error: mean(&|v| v),
            mean_abs_error: mean(&f64::abs),
            bin_width,
            histogram: hist.into_iter().map(|(b, count)| HistogramBin { lo: b as f64 * bin_width, count }).collect(),
            evaluated_cells: n,
            trivial_cells: trivial,
            unreachable_cells: unreachable,
        }
    };
    Ok(ErrorReport {
        prediction: stats(&errs[0], unreachable[0]),
        null: stats(&errs[1], unreachable[1]),
        true_unreachable_cells: true_unreachable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng as _;

    fn grid(n: usize) -> BinaryGrid {
        BinaryGrid::new(GridSpec::new(n, n, n as f64 / 2.0).unwrap())
    }

    fn center_of(g: &BinaryGrid, r: usize, c: usize) -> Point {
        g.spec().cell_center(r, c)
    }

    #[test]
    fn grid_geometry() {
        assert_eq!(DISTMAP_GRID.cell_width(), 0.15625);
        assert_eq!(origin_cell(DISTMAP_GRID, Point::ORIGIN).unwrap(), (128, 128));
    }

    #[test]
    fn inflate_examples() {
        let mut g = grid(12);
        g.set(6, 6, true);
        let big = inflate(&g, 4);
        assert_eq!(big.count_ones(), 81);
        assert!(big.get(2, 2) && big.get(10, 10) && !big.get(1, 6));
        assert_eq!(inflate(&g, 0), g);
        let mut corner = grid(12);
        corner.set(0, 0, true);
        assert_eq!(inflate(&corner, 4).count_ones(), 25);
    }

    #[test]
    fn shortest_examples() {
        let g = grid(3);
        let d = shortest_dist(&g, center_of(&g, 0, 0)).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(2, 2), 2.0 * std::f64::consts::SQRT_2);
        let mut walled = grid(5);
        for (r, c) in [(1, 1), (1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2), (3, 3)] {
            walled.set(r, c, true);
        }
        let d = shortest_dist(&walled, center_of(&walled, 0, 0)).unwrap();
        assert_eq!(d.get(2, 2), f64::INFINITY);
        assert!(matches!(shortest_dist(&walled, center_of(&walled, 1, 1)), Err(Error::OriginBlocked { row: 1, col: 1 })));
    }

    #[test]
    fn no_corner_cutting() {
        let mut g = grid(2);
        g.set(0, 1, true);
        let d = shortest_dist(&g, center_of(&g, 0, 0)).unwrap();
        assert_eq!(d.get(1, 1), 2.0);
        g.set(1, 0, true);
        let d = shortest_dist(&g, center_of(&g, 0, 0)).unwrap();
        assert_eq!(d.get(1, 1), f64::INFINITY);
    }

    #[test]
    fn local_consistency() {
        let mut rng = substream(4, "grid", 0);
        let mut g = grid(10);
        for r in 0..10 {
            for c in 0..10 {
                g.set(r, c, rng.random::<f64>() < 0.25);
            }
        }
        g.set(0, 0, false);
        let d = shortest_dist(&g, center_of(&g, 0, 0)).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                if g.get(r, c) || !d.get(r, c).is_finite() || (r, c) == (0, 0) {
                    continue;
                }
                let mut best = f64::INFINITY;
                for_each_move(&g, r, c, |nr, nc, cost| {
                    assert!(d.get(r, c) <= d.get(nr, nc) + cost);
                    best = best.min(d.get(nr, nc) + cost);
                });
                assert_eq!(best, d.get(r, c));
            }
        }
    }

    #[test]
    fn lower_median_with_infinity() {
        let spec = GridSpec::new(1, 1, 1.0).unwrap();
        let grids: Vec<DistanceGrid> = [2.0, 3.0, f64::INFINITY, f64::INFINITY, 4.0, 5.0, 3.0, 3.0]
            .iter()
            .map(|&v| DistanceGrid { spec, values: vec![v] })
            .collect();
        assert_eq!(median_grid(&grids).unwrap().values, vec![3.0]);
        assert_eq!(median_grid(&grids[..1]).unwrap(), grids[0]);
    }

    #[test]
    fn error_stats_examples() {
        let spec = GridSpec::new(2, 2, 1.0).unwrap();
        let g = |v: [f64; 4]| DistanceGrid { spec, values: v.to_vec() };
        let truth = g([0.0, 1.0, 2.0, f64::INFINITY]);
        let all_trivial = error_stats(&truth, &truth, &truth).unwrap();
        assert_eq!(all_trivial.prediction.trivial_cells, 4);
        assert_eq!(all_trivial.prediction.evaluated_cells, 0);
        assert_eq!(all_trivial.prediction.mean_abs_error, None);

        let r = error_stats(&truth, &g([0.0, 0.5, 1.0, 1.0]), &truth).unwrap();
        assert_eq!(r.prediction.mean_abs_error, Some(0.0));
        assert_eq!(r.null.mean_error, Some(-0.75));
        assert_eq!(r.null.evaluated_cells, 2);
        assert_eq!(r.true_unreachable_cells, 1);
        assert_eq!(r.null.histogram.iter().map(|b| b.count).sum::<usize>(), 2);
        assert_eq!(r.null.bin_width, 8.0);

        let p = g([0.0, f64::INFINITY, 3.0, f64::INFINITY]);
        let r = error_stats(&p, &truth, &truth).unwrap();
        assert_eq!((r.prediction.evaluated_cells, r.prediction.unreachable_cells), (1, 1));
        assert!(error_stats(&p, &truth, &DistanceGrid::unreachable(GridSpec::new(3, 3, 1.0).unwrap())).is_err());
    }

    #[test]
    fn exports() {
        let spec = GridSpec::new(2, 1, 1.0).unwrap();
        let d = DistanceGrid { spec, values: vec![0.0, f64::INFINITY] };
        assert_eq!(d.to_csv(), "0,inf\n");
        assert_eq!(d.to_pgm(), "P2\n2 1\n255\n1 0\n");
    }

    #[test]
    fn blocked_origin_gives_unreachable_grid() {
        let cfg = DistmapConfig { grid: GridSpec::new(16, 16, 2.0).unwrap(), ..Default::default() };
        let d = distance_for_segments(&[Segment::from_coords(-1.0, 0.1, 1.0, 0.1)], &cfg).unwrap();
        assert_eq!(d.values.iter().filter(|v| v.is_finite()).count(), 1);
        assert_eq!(d.get(8, 8), 0.0);
    }

    #[test]
    fn prediction_is_deterministic_and_k1_is_identity() {
        use crate::model::ModelConfig;
        let m = Model::new(ModelConfig { n_segs: 8, embed_dim: 8, layers: 1, heads: 2, ..ModelConfig::default() }, 5).unwrap();
        let obs = [Segment::from_coords(1.0, -2.0, 1.0, 2.0), Segment::from_coords(-3.0, 1.0, -1.0, 1.0)];
        let q = Quantizer::default();
        let cfg = DistmapConfig { grid: GridSpec::new(64, 64, 10.0).unwrap(), inflate_cells: 1, k_completions: 3, ..Default::default() };
        let sampler = SamplerConfig { rng_seed: 9, ..Default::default() };
        let a = predict_distance(&m, &obs, &q, &cfg, &sampler).unwrap();
        let b = predict_distance(&m, &obs, &q, &cfg, &sampler).unwrap();
        assert_eq!(a.median, b.median);
        assert_eq!(a.completions, b.completions);
        for c in &a.completions {
            assert_eq!(&c.tokens[..12], &encode(&obs, &q).tokens[..12]);
        }
        let one = predict_distance(&m, &obs, &q, &DistmapConfig { k_completions: 1, ..cfg }, &sampler).unwrap();
        assert_eq!(one.median, one.grids[0]);
    }
}
