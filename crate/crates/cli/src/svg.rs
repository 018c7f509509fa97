//! SVG figures: observed segments in red, generated segments in blue.

use std::fmt::Write as _;

use planseq_core::Segment;

/// Half-width of the drawn square, meters.
const EXTENT: f64 = 10.5;

fn polyline(out: &mut String, s: &Segment) {
    // SVG y grows downward.
    writeln!(out, r#"    <polyline points="{:.4},{:.4} {:.4},{:.4}"/>"#, s.a.x, -s.a.y, s.b.x, -s.b.y)
        .expect("string write");
}

/// Renders two layers of segments in local coordinates. The output
/// depends only on the inputs.
pub fn render_svg(observed: &[Segment], generated: &[Segment]) -> String {
    let size = 2.0 * EXTENT;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.1} {:.1} {size:.1} {size:.1}" width="512" height="512">"#,
        -EXTENT, -EXTENT
    )
    .expect("string write");
    writeln!(s, r#"  <rect x="{:.1}" y="{:.1}" width="{size:.1}" height="{size:.1}" fill="white"/>"#, -EXTENT, -EXTENT)
        .expect("string write");
    for (id, color, segs) in [("observed", "red", observed), ("generated", "blue", generated)] {
        writeln!(s, r#"  <g id="{id}" stroke="{color}" stroke-width="0.06" fill="none">"#).expect("string write");
        for seg in segs {
            polyline(&mut s, seg);
        }
        s.push_str("  </g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single_segment() {
        let empty = render_svg(&[], &[]);
        assert!(empty.starts_with("<svg") && empty.ends_with("</svg>\n"));
        assert_eq!(empty.matches("<polyline").count(), 0);
        let one = render_svg(&[], &[Segment::from_coords(0.0, 0.0, 1.0, 2.0)]);
        assert_eq!(one.matches("<polyline").count(), 1);
        assert!(one.contains(r#"points="0.0000,-0.0000 1.0000,-2.0000""#));
        assert_eq!(one, render_svg(&[], &[Segment::from_coords(0.0, 0.0, 1.0, 2.0)]));
    }
}
