//! Static SVG renderings of the embedding and the Mapper graph.

use std::fmt::Write;

use topocf::embedding::Embedding2D;
use topocf::model::ClassLabel;
use topocf::topology::TopologyGraph;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;
const NORMAL_COLOR: &str = "#3b6fb6";
const ABNORMAL_COLOR: &str = "#c8392b";

/// Affine map of a point set into the drawing square, preserving aspect.
struct Frame {
    min: [f64; 2],
    scale: f64,
    offset: [f64; 2],
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        if !min[0].is_finite() {
            return Self {
                min: [0.0; 2],
                scale: 1.0,
                offset: [SIZE / 2.0; 2],
            };
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]);
        let inner = SIZE - 2.0 * MARGIN;
        let scale = if span > 0.0 { inner / span } else { 1.0 };
        let offset = [
            MARGIN + (inner - (max[0] - min[0]) * scale) / 2.0,
            MARGIN + (inner - (max[1] - min[1]) * scale) / 2.0,
        ];
        Self { min, scale, offset }
    }

    /// Screen coordinates; y grows upwards in data space.
    fn place(&self, p: &[f64; 2]) -> (f64, f64) {
        let x = self.offset[0] + (p[0] - self.min[0]) * self.scale;
        let y = SIZE - (self.offset[1] + (p[1] - self.min[1]) * self.scale);
        (x, y)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <title>{title}</title>\n\
         <rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Blend from the normal to the abnormal colour.
fn ratio_color(r: f64) -> String {
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * r.clamp(0.0, 1.0)).round() as u8;
    let (n, a) = ((0x3b, 0x6f, 0xb6), (0xc8, 0x39, 0x2b));
    format!("#{:02x}{:02x}{:02x}", lerp(n.0, a.0), lerp(n.1, a.1), lerp(n.2, a.2))
}

/// Scatter of the 2-D embedding, one dot per record, coloured by class.
pub fn embedding_svg(ids: &[String], emb: &Embedding2D, labels: &[ClassLabel]) -> String {
    let frame = Frame::fit(emb.coords.iter());
    let mut s = header("class-style embedding");
    for ((id, p), label) in ids.iter().zip(&emb.coords).zip(labels) {
        let (x, y) = frame.place(p);
        let color = match label {
            ClassLabel::Normal => NORMAL_COLOR,
            ClassLabel::Abnormal => ABNORMAL_COLOR,
        };
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.8\"><title>{} ({label})</title></circle>",
            escape(id)
        );
    }
    let _ = writeln!(
        s,
        "<g font-family=\"sans-serif\" font-size=\"13\">\
         <circle cx=\"20\" cy=\"20\" r=\"5\" fill=\"{NORMAL_COLOR}\"/><text x=\"30\" y=\"24\">normal</text>\
         <circle cx=\"100\" cy=\"20\" r=\"5\" fill=\"{ABNORMAL_COLOR}\"/><text x=\"110\" y=\"24\">abnormal</text></g>"
    );
    s.push_str("</svg>\n");
    s
}

/// Node-edge diagram at the stored node centroids, each node labelled with
/// its abnormal ratio.
pub fn graph_svg(g: &TopologyGraph) -> String {
    let frame = Frame::fit(g.nodes.iter().map(|n| &n.centroid2d));
    let mut s = header("topology graph");
    s.push_str("<g stroke=\"#888888\" stroke-opacity=\"0.7\">\n");
    for e in &g.edges {
        let (x1, y1) = frame.place(&g.nodes[e.a].centroid2d);
        let (x2, y2) = frame.place(&g.nodes[e.b].centroid2d);
        let width = 1.0 + (e.weight.max(0.0)).sqrt().min(4.0);
        let _ = writeln!(
            s,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke-width=\"{width:.2}\"/>"
        );
    }
    s.push_str("</g>\n<g font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">\n");
    for n in &g.nodes {
        let (x, y) = frame.place(&n.centroid2d);
        let r = 12.0 + 2.0 * (n.member_ids.len() as f64).sqrt();
        let _ = writeln!(
            s,
            "<g class=\"node\" id=\"node-{}\"><circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" fill=\"{}\" stroke=\"#222222\"/>\
             <text x=\"{x:.2}\" y=\"{:.2}\" fill=\"white\">{:.2}</text></g>",
            n.id,
            ratio_color(n.abnormal_ratio),
            y + 3.5,
            n.abnormal_ratio
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}
