//! Dataset text format: a header line `N=<int> tasks=<list>` followed by one
//! sample per line (six integer labels, then N reals, single-space separated).

use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Emotion, LabeledSample, Provenance};
use crate::error::{Error, Result};

pub const DATASET_TASKS: &str = "identity,emotion,gender,ethnicity,attractive,smiling";

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let n = ds.dim();
    let mut out = String::with_capacity(ds.len() * (n * 20 + 16) + 64);
    let _ = writeln!(out, "N={n} tasks={DATASET_TASKS}");
    for s in &ds.samples {
        if s.embedding.len() != n {
            return Err(Error::Shape(format!(
                "sample {} has dimension {}, dataset has {n}",
                s.id,
                s.embedding.len()
            )));
        }
        s.validate().map_err(Error::Data)?;
        let _ = write!(
            out,
            "{} {} {} {} {} {}",
            s.identity,
            s.emotion.index(),
            s.gender,
            s.ethnicity,
            s.attractive,
            s.smiling
        );
        for v in &s.embedding {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ds = dataset_from_str(&text)?;
    ds.provenance = Provenance::File(path.to_path_buf());
    Ok(ds)
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
    let mut dim = None;
    let mut tasks_ok = false;
    for tok in header.split_ascii_whitespace() {
        if let Some(v) = tok.strip_prefix("N=") {
            dim = Some(v.parse::<usize>().map_err(|_| perr(1, format!("invalid N '{v}'")))?);
        } else if let Some(v) = tok.strip_prefix("tasks=") {
            if v != DATASET_TASKS {
                return Err(perr(1, format!("unsupported task list '{v}'")));
            }
            tasks_ok = true;
        } else {
            return Err(perr(1, format!("unexpected header token '{tok}'")));
        }
    }
    let n = dim.ok_or_else(|| perr(1, "header is missing N=<int>"))?;
    if n == 0 {
        return Err(perr(1, "N must be positive"));
    }
    if !tasks_ok {
        return Err(perr(1, "header is missing tasks=..."));
    }

    let mut samples = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(' ').collect();
        if toks.len() != 6 + n {
            return Err(perr(
                line_no,
                format!("expected 6 labels and {n} values, found {} fields", toks.len()),
            ));
        }
        let mut labels = [0usize; 6];
        for (k, t) in toks[..6].iter().enumerate() {
            labels[k] = t
                .parse()
                .map_err(|_| perr(line_no, format!("invalid label '{t}'")))?;
        }
        let embedding = toks[6..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| perr(line_no, format!("invalid value '{t}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let emotion = Emotion::from_index(labels[1])
            .ok_or_else(|| perr(line_no, format!("emotion label {} outside 0..6", labels[1])))?;
        let sample = LabeledSample {
            id: samples.len(),
            embedding,
            identity: labels[0],
            emotion,
            gender: labels[2],
            ethnicity: labels[3],
            attractive: labels[4],
            smiling: labels[5],
        };
        sample.validate().map_err(|m| perr(line_no, m))?;
        samples.push(sample);
    }
    Ok(Dataset {
        samples,
        provenance: Provenance::Derived("text".into()),
        mixing_seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenConfig};

    #[test]
    fn round_trip_default_dataset() {
        let ds = generate_dataset(&GenConfig::default()).unwrap();
        let back = dataset_from_str(&dataset_to_string(&ds).unwrap()).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!((a.identity, a.emotion, a.gender, a.ethnicity, a.attractive, a.smiling),
                       (b.identity, b.emotion, b.gender, b.ethnicity, b.attractive, b.smiling));
            assert!(a.embedding.iter().zip(&b.embedding).all(|(x, y)| (x - y).abs() <= 1e-9));
        }
    }

    #[test]
    fn wrong_arity_names_the_line() {
        let ds = generate_dataset(&GenConfig {
            num_identities: 3,
            dim: 80,
            identity_dim: 60,
            ..GenConfig::default()
        })
        .unwrap();
        let text = dataset_to_string(&ds).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[6].push_str(" 0.5");
        let err = dataset_from_str(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
        assert!(err.to_string().contains("line 7"));
    }

    #[test]
    fn external_backbone_width_is_inferred() {
        let n = 2048;
        let mut text = format!("N={n} tasks={DATASET_TASKS}\n");
        for row in 0..4 {
            let vals: Vec<String> = (0..n).map(|j| format!("{}", ((row * n + j) % 97) as f64 / 97.0)).collect();
            text.push_str(&format!("{} {} 1 2 0 1 {}\n", row / 2, row % 6, vals.join(" ")));
        }
        let ds = dataset_from_str(&text).unwrap();
        assert_eq!(ds.dim(), 2048);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.samples[3].ethnicity, 2);
    }

    #[test]
    fn bad_header_and_labels() {
        assert!(matches!(dataset_from_str("M=3\n"), Err(Error::Parse { line: 1, .. })));
        let text = format!("N=1 tasks={DATASET_TASKS}\n0 9 0 0 0 0 1.0\n");
        assert!(matches!(dataset_from_str(&text), Err(Error::Parse { line: 2, .. })));
    }
}
