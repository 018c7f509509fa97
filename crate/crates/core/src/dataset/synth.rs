//! Deterministic synthetic floor plans: a grid of rectangular rooms with
//! doorways between neighbors.

use rand::Rng as _;

use crate::geometry::{BoundarySegment, FloorPlan, Point, Segment, SegmentKind, Space};
use crate::rng::substream;
use crate::{Error, Result};

/// Generates a `rooms_x` by `rooms_y` grid of rooms.
///
/// Column widths and row heights are drawn from `[1.0, 1.3] * room_size`.
/// Every pair of adjacent rooms shares a wall with one door gap of
/// `door_width` (a portal in both rooms' boundaries) at a seeded offset.
/// Exterior sides are walls or, one time in four, windows.
pub fn synth_plan(
    rng_seed: u64,
    rooms_x: usize,
    rooms_y: usize,
    room_size: f64,
    door_width: f64,
) -> Result<FloorPlan> {
    if rooms_x == 0 || rooms_y == 0 || !(room_size > 0.0) || !(door_width >= 0.0 && door_width < room_size) {
        return Err(Error::InvalidArgument(format!(
            "synth_plan needs counts >= 1 and 0 <= door_width < room_size (got {rooms_x}x{rooms_y}, {room_size}, {door_width})"
        )));
    }
    let mut rng = substream(rng_seed, "synth_plan", 0);
    let widths: Vec<f64> = (0..rooms_x).map(|_| room_size * rng.random_range(1.0..1.3)).collect();
    let heights: Vec<f64> = (0..rooms_y).map(|_| room_size * rng.random_range(1.0..1.3)).collect();
    let xs: Vec<f64> = std::iter::once(0.0).chain(widths.iter().scan(0.0, |a, w| { *a += w; Some(*a) })).collect();
    let ys: Vec<f64> = std::iter::once(0.0).chain(heights.iter().scan(0.0, |a, h| { *a += h; Some(*a) })).collect();

    // Door offsets (fraction of the free length) for interior walls.
    // Vertical walls between columns i and i+1 in row j; horizontal walls
    // between rows j and j+1 in column i.
    let mut vdoor = vec![vec![0.0; rooms_y]; rooms_x.saturating_sub(1)];
    for row in vdoor.iter_mut() {
        for d in row.iter_mut() {
            *d = rng.random_range(0.2..0.8);
        }
    }
    let mut hdoor = vec![vec![0.0; rooms_y.saturating_sub(1)]; rooms_x];
    for col in hdoor.iter_mut() {
        for d in col.iter_mut() {
            *d = rng.random_range(0.2..0.8);
        }
    }
    // Exterior side kinds, indexed by (room, side).
    let mut exterior = vec![[SegmentKind::Wall; 4]; rooms_x * rooms_y];
    for kinds in exterior.iter_mut() {
        for k in kinds.iter_mut() {
            if rng.random_range(0..4) == 0 {
                *k = SegmentKind::Window;
            }
        }
    }

    let mut spaces = Vec::with_capacity(rooms_x * rooms_y);
    for j in 0..rooms_y {
        for i in 0..rooms_x {
            let (x0, x1, y0, y1) = (xs[i], xs[i + 1], ys[j], ys[j + 1]);
            let corners = [Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)];
            // Counterclockwise sides: bottom, right, top, left.
            let doors = [
                (j > 0).then(|| hdoor[i][j - 1]),
                (i + 1 < rooms_x).then(|| vdoor[i][j]),
                (j + 1 < rooms_y).then(|| hdoor[i][j]),
                (i > 0).then(|| vdoor[i - 1][j]),
            ];
            let mut boundary = Vec::new();
            for side in 0..4 {
                let (a, b) = (corners[side], corners[(side + 1) % 4]);
                match doors[side] {
                    None => boundary.push(BoundarySegment {
                        kind: exterior[j * rooms_x + i][side],
                        segment: Segment::new(a, b),
                    }),
                    Some(frac) => push_door_side(&mut boundary, a, b, frac, door_width),
                }
            }
            spaces.push(Space::new(boundary)?);
        }
    }
    let plan = FloorPlan { building_id: format!("synth-{rng_seed}"), floor_id: "0".into(), spaces };
    plan.validate()?;
    Ok(plan)
}

/// Emits wall, portal, wall along `a -> b`. The door position is measured
/// from the lower-left end of the side so both rooms sharing it agree.
fn push_door_side(boundary: &mut Vec<BoundarySegment>, a: Point, b: Point, frac: f64, door_width: f64) {
    let len = a.dist(b);
    let (lo, hi) = if a.lex_cmp(&b).is_lt() { (a, b) } else { (b, a) };
    let u = hi.sub(lo).scale(1.0 / len);
    let start = (len - door_width) * frac;
    let mut d0 = lo.add(u.scale(start));
    let mut d1 = lo.add(u.scale(start + door_width));
    if a != lo {
        std::mem::swap(&mut d0, &mut d1);
    }
    let wall = |p: Point, q: Point| BoundarySegment { kind: SegmentKind::Wall, segment: Segment::new(p, q) };
    boundary.push(wall(a, d0));
    if door_width > 0.0 {
        boundary.push(BoundarySegment { kind: SegmentKind::Portal, segment: Segment::new(d0, d1) });
    }
    boundary.push(wall(d1, b));
}
