//! Signed-permutation augmentation: the eight axis mirrors and swaps.

use crate::geometry::{orient_segment, Point, Segment};
use crate::{Error, Result};

pub const NUM_SIGNED_PERMUTATIONS: usize = 8;

/// A 2x2 signed permutation matrix, row-major.
pub type SignedPermutation = [[i8; 2]; 2];

/// The `index`-th signed permutation.
///
/// Bit 0 mirrors X, bit 1 mirrors Y, bit 2 swaps X and Y. The swap is
/// applied first, then the mirrors, so index 0 is the identity and
/// index 5 maps `(x, y)` to `(-y, x)`.
pub fn signed_permutation(index: usize) -> Result<SignedPermutation> {
    if index >= NUM_SIGNED_PERMUTATIONS {
        return Err(Error::InvalidArgument(format!("permutation index {index} outside 0..8")));
    }
    let sx = if index & 1 != 0 { -1 } else { 1 };
    let sy = if index & 2 != 0 { -1 } else { 1 };
    Ok(if index & 4 != 0 { [[0, sx], [sy, 0]] } else { [[sx, 0], [0, sy]] })
}

fn apply(m: &SignedPermutation, p: Point) -> Point {
    let f = |r: [i8; 2]| f64::from(r[0]) * p.x + f64::from(r[1]) * p.y;
    Point::new(f(m[0]), f(m[1]))
}

/// Index of the inverse permutation.
pub fn inverse_index(index: usize) -> Result<usize> {
    let m = signed_permutation(index)?;
    let mt = [[m[0][0], m[1][0]], [m[0][1], m[1][1]]];
    Ok((0..NUM_SIGNED_PERMUTATIONS).find(|&k| signed_permutation(k).unwrap() == mt).expect("group is closed"))
}

/// Applies a signed permutation to local segments and re-orients each.
/// Segment order is preserved.
pub fn augment(segs: &[Segment], perm_index: usize) -> Result<Vec<Segment>> {
    let m = signed_permutation(perm_index)?;
    segs.iter().map(|s| orient_segment(Segment::new(apply(&m, s.a), apply(&m, s.b)))).collect()
}
