//! Audit report cards plus CSV and SVG dumps of curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{AuditError, Result};
use crate::extraction::NpPoint;
use crate::extreal;
use crate::guess::SweepRow;
use crate::roc::RatePoint;

/// Bumped whenever the report layout changes incompatibly.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// JSON schema of [`AuditReport`], shipped alongside the crate.
pub const REPORT_SCHEMA: &str = include_str!("../schema/audit_report.schema.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Results of one analysis together with the configuration that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub analysis: String,
    pub config: Value,
    pub results: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub analysis: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: String,
    pub tool: ToolInfo,
    pub command: String,
    pub config: Value,
    pub sections: Vec<Section>,
    pub warnings: Vec<Warning>,
}

impl AuditReport {
    pub fn new(command: impl Into<String>, config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            tool: ToolInfo::default(),
            command: command.into(),
            config,
            sections: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn add_section<C: Serialize, R: Serialize>(&mut self, analysis: &str, config: &C, results: &R) -> Result<()> {
        let to_value = |v: serde_json::Result<Value>| v.map_err(|e| AuditError::Analysis(format!("cannot serialize {analysis}: {e}")));
        self.sections.push(Section {
            analysis: analysis.to_string(),
            config: to_value(serde_json::to_value(config))?,
            results: to_value(serde_json::to_value(results))?,
        });
        Ok(())
    }

    pub fn warn(&mut self, analysis: &str, message: impl Into<String>) {
        self.warnings.push(Warning {
            analysis: analysis.to_string(),
            message: message.into(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn render(report: &AuditReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report values are plain JSON");
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Markdown => render_markdown(report).into_bytes(),
    }
}

pub fn parse_json(bytes: &[u8]) -> Result<AuditReport> {
    serde_json::from_slice(bytes).map_err(|e| AuditError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "null".to_string(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

fn escape_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Flattens nested objects into dotted paths. Arrays of objects are returned
/// separately so they can be drawn as tables.
fn flatten<'a>(prefix: &str, v: &'a Value, rows: &mut Vec<(String, String)>, tables: &mut Vec<(String, &'a [Value])>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&path, child, rows, tables);
            }
        }
        Value::Array(items) if !items.is_empty() && items.iter().all(Value::is_object) => {
            tables.push((prefix.to_string(), items));
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect();
            rows.push((prefix.to_string(), format!("[{}]", parts.join(", "))));
        }
        other => rows.push((prefix.to_string(), scalar(other))),
    }
}

fn kv_table(out: &mut String, rows: &[(String, String)]) {
    if rows.is_empty() {
        return;
    }
    out.push_str("| field | value |\n|---|---|\n");
    for (k, v) in rows {
        let _ = writeln!(out, "| {} | {} |", escape_cell(k), escape_cell(v));
    }
    out.push('\n');
}

fn object_table(out: &mut String, items: &[Value]) {
    let mut cols: Vec<String> = Vec::new();
    for item in items {
        if let Value::Object(map) = item {
            for k in map.keys() {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
    }
    let _ = writeln!(out, "| {} |", cols.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(cols.len()));
    for item in items {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| item.get(c).map(|v| escape_cell(&scalar(v))).unwrap_or_default())
            .collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out.push('\n');
}

fn render_value(out: &mut String, v: &Value) {
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    flatten("", v, &mut rows, &mut tables);
    kv_table(out, &rows);
    for (name, items) in tables {
        let _ = writeln!(out, "**{}**\n", if name.is_empty() { "rows" } else { &name });
        object_table(out, items);
    }
}

fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Audit report\n");
    let _ = writeln!(
        out,
        "- tool: {} {}\n- command: {}\n- schema: {}\n",
        report.tool.name, report.tool.version, report.command, report.schema_version
    );
    out.push_str("## Configuration\n\n");
    render_value(&mut out, &report.config);
    out.push_str("## Results\n\n");
    for section in &report.sections {
        let _ = writeln!(out, "### {}\n", section.analysis);
        out.push_str("Configuration:\n\n");
        render_value(&mut out, &section.config);
        out.push_str("Results:\n\n");
        render_value(&mut out, &section.results);
    }
    out.push_str("## Warnings\n\n");
    for w in &report.warnings {
        let _ = writeln!(out, "- [{}] {}", w.analysis, w.message);
    }
    if !report.warnings.is_empty() {
        out.push('\n');
    }
    out
}

pub fn roc_csv(points: &[RatePoint]) -> String {
    let mut out = String::from("threshold,tpr,fpr,tnr,fnr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", extreal::format(p.threshold), p.tpr, p.fpr, p.tnr, p.fnr);
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("strategy,c_hat,c,epsilon\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.strategy, r.c_hat, r.c, extreal::format(r.epsilon));
    }
    out
}

pub fn np_curve_csv(points: &[NpPoint]) -> String {
    let mut out = String::from("n,p,fraction\n");
    for q in points {
        let _ = writeln!(out, "{},{},{}", q.n, q.p, q.fraction);
    }
    out
}

/// One named polyline of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG line chart. Non-finite points are dropped; `log_x`
/// plots `log10(x)` and drops non-positive x.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 60.0, 20.0, 40.0, 50.0);
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0))
                .map(|&(x, y)| (tx(x), y))
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{ml},{mt} V{} H{}" fill="none" stroke="black"/>"#,
        h - mb,
        w - mr
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let xl = if log_x { format!("{:.3}", 10f64.powf(xv)) } else { format!("{xv:.3}") };
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{xl}</text>"#, px(xv), h - mb + 16.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, ml - 4.0, py(yv) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, xml_escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        xml_escape(y_label)
    );
    for (i, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !p.is_empty() {
            let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        let ly = mt + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            w - mr - 4.0,
            xml_escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> AuditReport {
        let mut r = AuditReport::new("audit", json!({"k": 10}));
        r.add_section("bootstrap", &json!({"k": 10}), &json!({"auc": {"point": 0.9}, "rows": [{"a": 1, "b": "+inf"}]}))
            .unwrap();
        r.warn("bootstrap", "3 degenerate rounds");
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        let bytes = render(&r, ReportFormat::Json);
        assert_eq!(parse_json(&bytes).unwrap(), r);
    }

    #[test]
    fn markdown_lists_warnings() {
        let md = String::from_utf8(render(&sample(), ReportFormat::Markdown)).unwrap();
        assert!(md.contains("3 degenerate rounds"));
        assert!(md.contains("| auc.point | 0.9 |"));
        assert!(md.contains("| a | b |"));
    }

    #[test]
    fn empty_report_is_headers_only() {
        let r = AuditReport::new("audit", json!({}));
        let md = String::from_utf8(render(&r, ReportFormat::Markdown)).unwrap();
        let content: Vec<&str> = md.lines().filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("- ")).collect();
        assert!(content.is_empty(), "{content:?}");
    }

    #[test]
    fn csv_headers() {
        assert_eq!(np_curve_csv(&[]), "n,p,fraction\n");
        assert!(sweep_csv(&[]).starts_with("strategy,c_hat,c,epsilon"));
        let roc = roc_csv(&[RatePoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0, tnr: 1.0, fnr: 1.0 }]);
        assert!(roc.contains("+inf,0,0,1,1"));
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_line_chart(
            "ROC",
            "fpr",
            "tpr",
            &[Series { name: "a<b".into(), points: vec![(0.0, 0.0), (0.5, f64::NAN), (1.0, 1.0)] }],
            false,
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
