//! Minimal line plots: one polyline per series, axes with min/max labels.
//! Figures are conveniences; the CSVs are the ground truth.

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub label: String,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
}

/// SVG text; with `log_y`, non-positive values are dropped.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let keep = |y: f64| y.is_finite() && (!log_y || y > 0.0);
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.xs.iter().zip(s.ys).filter(|(x, y)| x.is_finite() && keep(**y)).map(|(x, y)| (*x, tf(*y))).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let ylab = |y: f64| if log_y { format!("1e{y:.1}") } else { format!("{y:.3e}") };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}{}</text>\n\
         <text x=\"{MARGIN}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
        W / 2.0,
        escape(title),
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
        if log_y { " (log)" } else { "" },
        H - MARGIN + 16.0,
        x0,
        W - MARGIN,
        H - MARGIN + 16.0,
        x1,
        MARGIN - 4.0,
        H - MARGIN,
        ylab(y0),
        MARGIN - 4.0,
        MARGIN + 4.0,
        ylab(y1),
    );
    for (i, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = p.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", coords.join(" ")));
        let ly = MARGIN + 16.0 * i as f64;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" text-anchor=\"end\">{}</text>\n",
            W - MARGIN - 4.0,
            escape(&ser.label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_has_one_polyline_per_series_and_drops_nonpositive_on_log() {
        let xs = [0.0, 1.0, 2.0];
        let a = [1.0, 0.1, 0.0];
        let b = [2.0, 3.0, 4.0];
        let svg = line_plot("t<1", "t", "loss", &[Series { label: "a".into(), xs: &xs, ys: &a }, Series { label: "b".into(), xs: &xs, ys: &b }], true);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t&lt;1"));
        let first = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(first.matches(',').count(), 2);
    }
}
