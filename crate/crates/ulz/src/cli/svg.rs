//! Hand-emitted SVG convergence plots: one polyline per trace CSV,
//! x = iteration, y = NMSE in dB.
//!
//! Layout rules: the y axis spans [min - 5, max + 5] dB over the finite
//! inputs; negative-infinity entries are clipped to the axis minimum and
//! marked with a small circle; the legend lists the input file stems.

use crate::error::{Error, Result};

pub struct TraceCurve {
    pub label: String,
    /// (iteration, nmse_db); nmse may be -inf.
    pub points: Vec<(usize, f64)>,
}

const W: f64 = 760.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 190.0;
const MT: f64 = 30.0;
const MB: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

pub fn render(curves: &[TraceCurve]) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|c| c.points.is_empty()) {
        return Err(Error::Empty("no plottable rows".into()));
    }
    let finite: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .collect();
    let (ymin_raw, ymax_raw) = if finite.is_empty() {
        (-60.0, 0.0)
    } else {
        (
            finite.iter().cloned().fold(f64::INFINITY, f64::min),
            finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let ymin = ymin_raw - 5.0;
    let ymax = ymax_raw + 5.0;
    let xmax = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    let px = |x: f64| ML + (W - ML - MR) * x / xmax;
    let py = |y: f64| MT + (H - MT - MB) * (ymax - y) / (ymax - ymin);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        ML,
        py(ymin),
        W - MR,
        py(ymin)
    ));
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        py(ymax),
        py(ymin)
    ));
    // y ticks: five evenly spaced labels
    for i in 0..=4 {
        let y = ymin + (ymax - ymin) * i as f64 / 4.0;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{:.1}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            ML - 5.0,
            py(y),
            py(y)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>\n",
            ML - 9.0,
            py(y) + 4.0,
            y
        ));
    }
    // x ticks
    for i in 0..=4 {
        let x = xmax * i as f64 / 4.0;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{}\" x2=\"{:.1}\" y2=\"{}\" stroke=\"black\"/>\n",
            px(x),
            py(ymin),
            px(x),
            py(ymin) + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{:.0}</text>\n",
            px(x),
            py(ymin) + 20.0,
            x
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">iteration</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" transform=\"rotate(-90 16 {:.1})\" \
         text-anchor=\"middle\">NMSE (dB)</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));

    for (ci, curve) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let mut path = String::new();
        let mut markers = String::new();
        for (i, (n, v)) in curve.points.iter().enumerate() {
            let clipped = !v.is_finite();
            let y = if clipped { ymin } else { *v };
            path.push_str(&format!(
                "{}{:.2},{:.2}",
                if i == 0 { "" } else { " " },
                px(*n as f64),
                py(y)
            ));
            if clipped {
                markers.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"none\" \
                     stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    px(*n as f64),
                    py(y)
                ));
            }
        }
        s.push_str(&format!(
            "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.8\"/>\n"
        ));
        s.push_str(&markers);
        let ly = MT + 18.0 * ci as f64 + 10.0;
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            W - MR + 10.0,
            W - MR + 34.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            W - MR + 40.0,
            ly + 4.0,
            xml_escape(&curve.label)
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polylines_and_clip_markers() {
        let curves = vec![
            TraceCurve {
                label: "a".into(),
                points: (0..17).map(|n| (n, -(n as f64))).collect(),
            },
            TraceCurve {
                label: "b".into(),
                points: (0..17)
                    .map(|n| (n, if n == 16 { f64::NEG_INFINITY } else { -2.0 * n as f64 }))
                    .collect(),
            },
        ];
        let svg = render(&curves).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        // 17 points per polyline
        let first = svg.split("points=\"").nth(1).unwrap();
        let pts = first.split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 17);
        // one clipped marker for the -inf row
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(render(&[]).is_err());
    }

    #[test]
    fn axis_range_rule() {
        let curves = vec![TraceCurve {
            label: "x".into(),
            points: vec![(0, -10.0), (1, -30.0)],
        }];
        let svg = render(&curves).unwrap();
        // labels for min-5 and max+5 appear on the axis
        assert!(svg.contains(">-35.0<"), "{svg}");
        assert!(svg.contains(">-5.0<"));
    }
}
