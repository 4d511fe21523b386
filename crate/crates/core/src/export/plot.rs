use std::fmt::Write;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::selection::rank_order;
use crate::tensor::Tensor;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;

/// SVG scatter of every landmark at its reference `(x, y)` with the `top_k`
/// highest-scoring ones circled. `reference` is `2×L` in normalized units,
/// drawn with image orientation (y grows downward).
pub fn render_landmark_plot(scores: &[f64], reference: &Tensor, top_k: usize) -> Result<String> {
    let l = scores.len();
    if reference.shape() != [2, l] {
        return Err(Error::shape("landmark plot", reference.shape(), &[2, l]));
    }
    if top_k > l {
        return Err(Error::Argument(format!(
            "top-k {top_k} exceeds {l} landmarks"
        )));
    }
    let mut circled = vec![false; l];
    for &n in rank_order(scores).iter().take(top_k) {
        circled[n] = true;
    }
    let px = |v: f64| MARGIN + v.clamp(0.0, 1.0) * (SIZE - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g fill="black">"#);
    for n in 0..l {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.8"><title>{n}</title></circle>"#,
            px(reference.at(&[0, n])),
            px(reference.at(&[1, n]))
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g fill="none" stroke="blue" stroke-width="1.5">"#);
    for n in (0..l).filter(|&n| circled[n]) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="6"/>"#,
            px(reference.at(&[0, n])),
            px(reference.at(&[1, n]))
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="12">top {top_k} of {l} landmarks</text>"#
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export_landmark_plot(
    scores: &[f64],
    reference: &Tensor,
    top_k: usize,
    path: &Path,
) -> Result<()> {
    write_atomic(
        path,
        render_landmark_plot(scores, reference, top_k)?.as_bytes(),
    )
}
