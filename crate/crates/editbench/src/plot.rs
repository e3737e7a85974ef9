//! Label-distribution plot data and a bar-chart rendering.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    /// One probability per label, renormalised over the label set.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub case_id: String,
    pub subject: String,
    pub relation: String,
    pub labels: Vec<String>,
    pub label_ids: Vec<usize>,
    pub target: String,
    pub intermediate: String,
    pub series: Vec<Series>,
}

const COLOURS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bars: one group per label, one bar per series, y in [0, 1].
pub fn render_svg(plot: &PlotData) -> String {
    let bar = 18.0;
    let gap = 24.0;
    let group = bar * plot.series.len() as f64 + gap;
    let (left, top, plot_h) = (50.0, 40.0, 220.0);
    let width = left + group * plot.labels.len() as f64 + 20.0;
    let height = top + plot_h + 80.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s.push_str(&format!(
        "<text x=\"{left}\" y=\"18\" font-size=\"13\">{} {} (case {})</text>\n",
        escape(&plot.subject),
        escape(&plot.relation),
        escape(&plot.case_id)
    ));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        s.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>\n",
            width - 20.0,
            left - 4.0,
            y + 4.0
        ));
    }
    for (i, label) in plot.labels.iter().enumerate() {
        let x0 = left + gap / 2.0 + group * i as f64;
        for (j, series) in plot.series.iter().enumerate() {
            let v = series.values[i].clamp(0.0, 1.0);
            let h = plot_h * v;
            s.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{h:.1}\" fill=\"{}\"><title>{}: {v:.4}</title></rect>\n",
                x0 + bar * j as f64,
                top + plot_h - h,
                COLOURS[j % COLOURS.len()],
                escape(&series.name)
            ));
        }
        let mark = if *label == plot.target { " *" } else { "" };
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}{mark}</text>\n",
            x0 + bar * plot.series.len() as f64 / 2.0,
            top + plot_h + 16.0,
            escape(label)
        ));
    }
    for (j, series) in plot.series.iter().enumerate() {
        let y = top + plot_h + 40.0 + 14.0 * j as f64;
        s.push_str(&format!(
            "<rect x=\"{left}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{:.1}\" y=\"{y:.1}\">{}</text>\n",
            y - 9.0,
            COLOURS[j % COLOURS.len()],
            left + 14.0,
            escape(&series.name)
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PlotData {
        PlotData {
            case_id: "easy-0000".into(),
            subject: "E1".into(),
            relation: "EducatedAt".into(),
            labels: vec!["E2".into(), "E3".into(), "E<4>".into()],
            label_ids: vec![2, 3, 4],
            target: "E2".into(),
            intermediate: "E9".into(),
            series: vec![
                Series { name: "pre".into(), values: vec![0.2, 0.3, 0.5] },
                Series { name: "rome".into(), values: vec![0.9, 0.05, 0.05] },
            ],
        }
    }

    #[test]
    fn one_bar_per_label_and_series() {
        let svg = render_svg(&sample());
        assert_eq!(svg.matches("<rect").count(), 3 * 2 + 2);
        assert!(svg.contains("E&lt;4&gt;"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg, render_svg(&sample()));
    }
}
