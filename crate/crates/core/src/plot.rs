//! Static SVG plots of ground-truth versus predicted density curves.

use std::fmt::Write as _;

use crate::model::{Prediction, PreparedVideo};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 260.0;
const MARGIN: f64 = 40.0;

/// Concatenates the non-masked positions of every view, giving one value
/// per downsampled frame.
pub fn density_curves(video: &PreparedVideo, pred: &Prediction) -> (Vec<f64>, Vec<f64>) {
    let mut gt = Vec::new();
    let mut out = Vec::new();
    for (view, map) in video.views.iter().zip(&pred.view_densities) {
        for (i, &keep) in view.mask.iter().enumerate() {
            if keep {
                gt.push(f64::from(view.target[[i, 0]]));
                out.push(map.values[i]);
            }
        }
    }
    (gt, out)
}

fn polyline(values: &[f64], lo: f64, hi: f64, colour: &str) -> String {
    let n = values.len().max(2) - 1;
    let span = (hi - lo).max(1e-9);
    let mut pts = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / n as f64;
        let y = HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / span;
        let _ = write!(pts, "{x:.1},{y:.1} ");
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.trim_end()
    )
}

/// One SVG with both curves, the counts in the title and a zero line.
pub fn render_density_svg(id: &str, gt: &[f64], pred: &[f64]) -> String {
    let lo = gt.iter().chain(pred).copied().fold(0.0, f64::min);
    let hi = gt.iter().chain(pred).copied().fold(0.0, f64::max);
    let zero_y = HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (0.0 - lo) / (hi - lo).max(1e-9);
    let gt_sum: f64 = gt.iter().sum();
    let pred_sum: f64 = pred.iter().sum();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{MARGIN}\" y=\"20\">{} | ground truth {gt_sum:.2} | predicted {pred_sum:.2}</text>",
        escape(id)
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{zero_y:.1}\" x2=\"{:.1}\" y2=\"{zero_y:.1}\" stroke=\"#999\"/>",
        WIDTH - MARGIN
    );
    svg.push_str(&polyline(gt, lo, hi, "#1b7837"));
    svg.push_str(&polyline(pred, lo, hi, "#c51b7d"));
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#1b7837\">ground truth</text>",
        WIDTH - 200.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#c51b7d\">predicted</text>",
        WIDTH - 100.0,
        HEIGHT - 12.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
