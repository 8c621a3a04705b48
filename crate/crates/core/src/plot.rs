//! Read-only SVG chart emission over the CSV reports: per-objective GAUC
//! bars for a single eval report, grouped bars for an ablation table, and a
//! loss-distribution histogram for a training trace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("report is empty")]
    Empty,
    #[error("report line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unrecognized report header `{0}`")]
    UnknownFormat(String),
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_BOTTOM: f64 = 60.0;
const MARGIN_TOP: f64 = 40.0;

const PALETTE: [&str; 6] = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"];

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    )
}

fn axis_lines(out: &mut String) {
    let x0 = MARGIN_LEFT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{MARGIN_TOP}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        WIDTH - 20.0
    ))
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Vertical bar chart with one bar per label; values scaled to [0, max].
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> Result<String, PlotError> {
    if labels.is_empty() || labels.len() != values.len() {
        return Err(PlotError::Empty);
    }
    let vmax = values.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let plot_w = WIDTH - MARGIN_LEFT - 20.0;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let slot = plot_w / labels.len() as f64;
    let bar_w = slot * 0.6;
    let mut out = svg_open(title);
    axis_lines(&mut out);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let h = plot_h * (v / vmax).clamp(0.0, 1.0);
        let x = MARGIN_LEFT + slot * i as f64 + (slot - bar_w) / 2.0;
        let y = HEIGHT - MARGIN_BOTTOM - h;
        out.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>\n",
            PALETTE[0]
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            y - 4.0,
            fmt3(v)
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            x + bar_w / 2.0,
            HEIGHT - MARGIN_BOTTOM + 16.0
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grouped bar chart: one group per row label, one colored bar per series.
pub fn grouped_bar_chart(
    title: &str,
    row_labels: &[String],
    series: &[(String, Vec<f64>)],
) -> Result<String, PlotError> {
    if row_labels.is_empty() || series.is_empty() {
        return Err(PlotError::Empty);
    }
    let vmax = series
        .iter()
        .flat_map(|(_, vs)| vs.iter().cloned())
        .fold(0.0, f64::max)
        .max(1e-12);
    let plot_w = WIDTH - MARGIN_LEFT - 20.0;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let slot = plot_w / row_labels.len() as f64;
    let bar_w = slot * 0.8 / series.len() as f64;
    let mut out = svg_open(title);
    axis_lines(&mut out);
    for (s, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{name}</text>\n",
            MARGIN_LEFT + 120.0 * s as f64,
            HEIGHT - 14.0,
            MARGIN_LEFT + 120.0 * s as f64 + 14.0,
            HEIGHT - 5.0
        ));
        for (i, &v) in values.iter().enumerate() {
            let h = plot_h * (v / vmax).clamp(0.0, 1.0);
            let x = MARGIN_LEFT + slot * i as f64 + slot * 0.1 + bar_w * s as f64;
            let y = HEIGHT - MARGIN_BOTTOM - h;
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{color}\"/>\n"
            ));
        }
    }
    for (i, label) in row_labels.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            MARGIN_LEFT + slot * (i as f64 + 0.5),
            HEIGHT - MARGIN_BOTTOM + 16.0
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Histogram of pooled loss values, 20 equal-width bins.
pub fn histogram(title: &str, values: &[f64]) -> Result<String, PlotError> {
    if values.is_empty() {
        return Err(PlotError::Empty);
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = 20usize;
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let labels: Vec<String> = (0..bins)
        .map(|b| if b % 4 == 0 { format!("{:.2}", lo + width * b as f64) } else { String::new() })
        .collect();
    bar_chart(title, &labels, &counts.iter().map(|&c| c as f64).collect::<Vec<f64>>())
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|f| f.trim().to_string()).collect())
        .collect()
}

/// Renders the right chart for a CSV report, detected by header:
/// an eval report (`objective,metric,value`) becomes a GAUC bar chart, an
/// ablation table (`metric,<variants>`) becomes grouped bars per variant,
/// and a training trace (`step,total,...`) becomes a loss histogram over
/// the final 500 steps.
pub fn render(text: &str) -> Result<String, PlotError> {
    let rows = parse_csv(text);
    let header = rows.first().ok_or(PlotError::Empty)?;
    match header.first().map(String::as_str) {
        Some("objective") => render_eval_report(&rows),
        Some("metric") => render_ablation_table(&rows),
        Some("step") => render_trace(&rows),
        _ => Err(PlotError::UnknownFormat(header.join(","))),
    }
}

fn parse_value(row: &[String], col: usize, line: usize) -> Result<f64, PlotError> {
    row.get(col)
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| PlotError::Malformed { line, message: format!("bad numeric field {col}") })
}

fn render_eval_report(rows: &[Vec<String>]) -> Result<String, PlotError> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (idx, row) in rows.iter().enumerate().skip(1) {
        if row.len() < 3 {
            return Err(PlotError::Malformed { line: idx + 1, message: "expected 3 fields".into() });
        }
        match row[1].as_str() {
            "gauc" => {
                labels.push(row[0].clone());
                values.push(parse_value(row, 2, idx + 1)?);
            }
            "gauc_iput" => {
                labels.push(format!("{}_iput", row[0]));
                values.push(parse_value(row, 2, idx + 1)?);
            }
            _ => {}
        }
    }
    bar_chart("Per-objective GAUC", &labels, &values)
}

fn render_ablation_table(rows: &[Vec<String>]) -> Result<String, PlotError> {
    let header = &rows[0];
    let variants = &header[1..];
    let mut row_labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    for (idx, row) in rows.iter().enumerate().skip(1) {
        if row.len() != header.len() {
            return Err(PlotError::Malformed {
                line: idx + 1,
                message: format!("expected {} fields, got {}", header.len(), row.len()),
            });
        }
        row_labels.push(row[0].clone());
        for (v, col) in columns.iter_mut().enumerate() {
            col.push(parse_value(row, v + 1, idx + 1)?);
        }
    }
    let series: Vec<(String, Vec<f64>)> =
        variants.iter().cloned().zip(columns).collect();
    grouped_bar_chart("GAUC by variant", &row_labels, &series)
}

fn render_trace(rows: &[Vec<String>]) -> Result<String, PlotError> {
    let header = &rows[0];
    let loss_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, name)| name.starts_with("l_"))
        .map(|(i, _)| i)
        .collect();
    if loss_cols.is_empty() {
        return Err(PlotError::UnknownFormat(header.join(",")));
    }
    let body = &rows[1..];
    let window = body.len().saturating_sub(500);
    let mut values = Vec::new();
    for (idx, row) in body.iter().enumerate().skip(window) {
        for &c in &loss_cols {
            values.push(parse_value(row, c, idx + 2)?);
        }
    }
    histogram("Per-objective loss distribution (final steps)", &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_report_renders_bars() {
        let csv = "objective,metric,value\npvtr,gauc,0.8\npctr,gauc,0.7\npltr,gauc_iput,0.65\n-,mean_gauc,0.72\n";
        let svg = render(csv).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("pltr_iput"));
        assert!(svg.contains("0.800"));
        assert_eq!(svg.matches("<rect").count(), 1 + 3); // background + 3 bars
    }

    #[test]
    fn ablation_table_renders_grouped_bars() {
        let csv = "metric,full,noiput\npvtr,0.8,0.75\npctr,0.7,0.72\n";
        let svg = render(csv).unwrap();
        assert!(svg.contains("full") && svg.contains("noiput"));
        // background + 2 legend swatches + 4 bars
        assert_eq!(svg.matches("<rect").count(), 7);
    }

    #[test]
    fn trace_renders_histogram() {
        let mut csv = String::from("step,total,posterior,l_pvtr,l_pctr,w_pvtr,w_pctr\n");
        for s in 0..50 {
            csv.push_str(&format!("{s},0.5,0.2,{},{},1,1\n", 0.1 + s as f64 * 0.01, 0.3));
        }
        let svg = render(&csv).unwrap();
        assert!(svg.contains("loss distribution"));
    }

    #[test]
    fn rendering_is_deterministic_and_read_only() {
        let csv = "objective,metric,value\npvtr,gauc,0.8\n";
        assert_eq!(render(csv).unwrap(), render(csv).unwrap());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(render(""), Err(PlotError::Empty)));
        assert!(matches!(render("foo,bar\n1,2\n"), Err(PlotError::UnknownFormat(_))));
        assert!(matches!(
            render("objective,metric,value\npvtr,gauc,notanumber\n"),
            Err(PlotError::Malformed { line: 2, .. })
        ));
    }
}
