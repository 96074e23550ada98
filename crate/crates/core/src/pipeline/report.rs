//! Persisted metrics and the tables and charts rendered from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{fairness_table_csv, FairnessReport};
use crate::probes::{diff_metric, AblationCurve};

/// Accuracy of one blinded representation on one task, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedCell {
    pub method: String,
    pub accuracy: f64,
    /// Drop relative to chance; `None` when the raw accuracy is not above chance.
    pub diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub task: String,
    pub chance: f64,
    pub raw: f64,
    pub blinded: Vec<BlindedCell>,
}

impl AccuracyRow {
    pub fn new(task: impl Into<String>, chance: f64, raw: f64) -> Self {
        AccuracyRow {
            task: task.into(),
            chance,
            raw,
            blinded: Vec::new(),
        }
    }

    pub fn push(&mut self, method: impl Into<String>, accuracy: f64) {
        self.blinded.push(BlindedCell {
            method: method.into(),
            accuracy,
            diff: diff_metric(self.raw, accuracy, self.chance).ok(),
        });
    }

    pub fn cell(&self, method: &str) -> Option<&BlindedCell> {
        self.blinded.iter().find(|c| c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub method: String,
    /// Total variance of the blinded test embeddings over that of the raw ones.
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment_id: String,
    pub seed: u64,
    pub accuracy: Vec<AccuracyRow>,
    pub variance: Vec<VarianceRow>,
    pub ablation: Option<AblationCurve>,
    pub fairness: Vec<FairnessReport>,
}

impl MetricsReport {
    pub fn row(&self, task: &str) -> Option<&AccuracyRow> {
        self.accuracy.iter().find(|r| r.task == task)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Wall-clock seconds per stage, kept apart from the metrics so those stay
/// reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: BTreeMap<String, f64>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, seconds: f64) {
        *self.seconds.entry(stage.to_string()).or_default() += seconds;
    }

    pub fn get(&self, stage: &str) -> f64 {
        self.seconds.get(stage).copied().unwrap_or(0.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("timings serialize") + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Accuracy,
    Ablation,
    Fairness,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Accuracy, Section::Ablation, Section::Fairness];

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "accuracy" => Some(Section::Accuracy),
            "ablation" => Some(Section::Ablation),
            "fairness" => Some(Section::Fairness),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Section::Accuracy => "accuracy",
            Section::Ablation => "ablation",
            Section::Fairness => "fairness",
        }
    }

    fn present(self, m: &MetricsReport) -> bool {
        match self {
            Section::Accuracy => !m.accuracy.is_empty(),
            Section::Ablation => m.ablation.is_some(),
            Section::Fairness => !m.fairness.is_empty(),
        }
    }
}

/// Writes the requested sections under `out_dir`; `None` means every
/// section that holds data. Returns the written paths.
pub fn emit_report(metrics: &MetricsReport, out_dir: &Path, sections: Option<&[Section]>) -> Result<Vec<PathBuf>> {
    let wanted: Vec<Section> = match sections {
        Some(s) => {
            if let Some(missing) = s.iter().find(|s| !s.present(metrics)) {
                return Err(Error::Config(format!(
                    "report section '{}' was requested but the metrics hold none",
                    missing.name()
                )));
            }
            s.to_vec()
        }
        None => Section::ALL.into_iter().filter(|s| s.present(metrics)).collect(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for section in wanted {
        match section {
            Section::Accuracy => write("accuracy_table.csv", accuracy_table_csv(metrics))?,
            Section::Fairness => write("fairness_table.csv", fairness_table_csv(&metrics.fairness))?,
            Section::Ablation => {
                let curve = metrics.ablation.as_ref().expect("checked present");
                write("ablation.csv", ablation_csv(curve))?;
                write("ablation.svg", ablation_svg(curve))?;
            }
        }
    }
    Ok(written)
}

/// One row per task: raw accuracy, then accuracy and Diff per blinded method.
pub fn accuracy_table_csv(m: &MetricsReport) -> String {
    let methods: Vec<&str> = m
        .accuracy
        .first()
        .map(|r| r.blinded.iter().map(|c| c.method.as_str()).collect())
        .unwrap_or_default();
    let mut out = String::from("task,chance,x");
    for method in &methods {
        let _ = write!(out, ",{method},diff_{method}");
    }
    out.push('\n');
    for row in &m.accuracy {
        let _ = write!(out, "{},{:.2},{:.2}", row.task, row.chance, row.raw);
        for method in &methods {
            match row.cell(method) {
                Some(c) => {
                    let _ = write!(out, ",{:.2},", c.accuracy);
                    if let Some(d) = c.diff {
                        let _ = write!(out, "{d:.2}");
                    }
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn ablation_csv(curve: &AblationCurve) -> String {
    let mut out = String::from("fraction,zeroed,mean,std\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{:.2},{},{:.2},{:.2}",
            100.0 * p.fraction,
            p.zeroed,
            100.0 * p.mean,
            100.0 * p.std
        );
    }
    out
}

/// Mean accuracy against suppressed fraction, with ±1 std whiskers.
pub fn ablation_svg(curve: &AblationCurve) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let px = |f: f64| pad + f * (w - 2.0 * pad);
    let py = |a: f64| h - pad - a * (h - 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{:.2} {:.2} V{:.2} H{:.2}" stroke="black" fill="none"/>"#,
        px(0.0),
        py(1.0),
        py(0.0),
        px(1.0)
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{:.0}</text>"#,
            px(t),
            py(0.0) + 16.0,
            100.0 * t
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{:.0}</text>"#,
            px(0.0) - 6.0,
            py(t) + 4.0,
            100.0 * t
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">suppressed features (%)</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">{} accuracy (%)</text>"#,
        h / 2.0,
        h / 2.0,
        curve.task
    );
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.fraction), py(p.mean)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#,
        points.join(" ")
    );
    for p in &curve.points {
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="steelblue"/>"#,
            py((p.mean - p.std).max(0.0)),
            py((p.mean + p.std).min(1.0)),
            x = px(p.fraction)
        );
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            px(p.fraction),
            py(p.mean)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::AblationPoint;

    fn sample() -> MetricsReport {
        let mut row = AccuracyRow::new("emotion-nn", 100.0 / 6.0, 88.1);
        row.push("phi_sn(x)", 16.7);
        let mut gender = AccuracyRow::new("gender", 50.0, 96.8);
        gender.push("phi_sn(x)", 96.3);
        MetricsReport {
            experiment_id: "t".into(),
            seed: 0,
            accuracy: vec![gender, row],
            ..MetricsReport::default()
        }
    }

    #[test]
    fn diff_cells_print_two_decimals() {
        let csv = accuracy_table_csv(&sample());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "task,chance,x,phi_sn(x),diff_phi_sn(x)");
        assert_eq!(lines[1], "gender,50.00,96.80,96.30,1.07");
        assert_eq!(lines[2], "emotion-nn,16.67,88.10,16.70,99.95");
    }

    #[test]
    fn undefined_diff_is_blank() {
        let mut row = AccuracyRow::new("gender", 50.0, 40.0);
        row.push("phi_sn(x)", 30.0);
        assert_eq!(row.blinded[0].diff, None);
    }

    #[test]
    fn missing_section_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(&sample(), dir.path(), Some(&[Section::Ablation])).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("ablation")));
        let written = emit_report(&sample(), dir.path(), None).unwrap();
        assert_eq!(written.len(), 1);
    }

    #[test]
    fn json_round_trip_reemits_identically() {
        let mut m = sample();
        m.ablation = Some(AblationCurve {
            task: "emotion".into(),
            repeats: 2,
            points: vec![
                AblationPoint { fraction: 0.0, zeroed: 0, mean: 0.9, std: 0.01, accuracies: vec![0.89, 0.91] },
                AblationPoint { fraction: 0.9, zeroed: 9, mean: 0.8, std: 0.02, accuracies: vec![0.78, 0.82] },
            ],
        });
        let back = MetricsReport::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = emit_report(&m, a.path(), None).unwrap();
        let fb = emit_report(&back, b.path(), None).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        assert!(std::fs::read_to_string(a.path().join("ablation.svg")).unwrap().starts_with("<svg"));
    }
}
