//! Plain-text formats shared by the library and the CLI: mobility matrices,
//! threshold vectors, remap tables, and trace files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::mdp::ThresholdPolicy;
use crate::mobility::{MobilityError, MobilityModel, TraceRecord, XyRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Mobility(#[from] MobilityError),
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// Splits a record line on commas and/or whitespace.
fn fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Data lines with 1-based line numbers; blanks and `#` comments skipped.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Mobility model as text: a one-line location-count header, then the
/// transition matrix row-major, one row per line.
pub fn render_model(model: &MobilityModel) -> String {
    let l = model.num_locations();
    let mut out = format!("{l}\n");
    for i in 0..l {
        let row: Vec<String> = (0..l).map(|j| model.transition(i, j).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_model(text: &str) -> Result<MobilityModel, IoError> {
    let mut lines = data_lines(text);
    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty model file"))?;
    let l: usize = header
        .parse()
        .map_err(|_| parse_err(ln, format!("bad location count {header:?}")))?;
    let mut m = DMatrix::<f64>::zeros(l, l);
    for i in 0..l {
        let (ln, row) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("expected {l} matrix rows, got {i}")))?;
        let entries = fields(row);
        if entries.len() != l {
            return Err(parse_err(
                ln,
                format!("expected {l} entries, got {}", entries.len()),
            ));
        }
        for (j, e) in entries.iter().enumerate() {
            m[(i, j)] = e
                .parse()
                .map_err(|_| parse_err(ln, format!("bad matrix entry {e:?}")))?;
        }
    }
    Ok(MobilityModel::from_transitions(m)?)
}

pub fn write_model(path: &Path, model: &MobilityModel) -> Result<(), IoError> {
    Ok(fs::write(path, render_model(model))?)
}

pub fn read_model(path: &Path) -> Result<MobilityModel, IoError> {
    parse_model(&fs::read_to_string(path)?)
}

/// Threshold vector as one integer per line, location order.
pub fn render_thresholds(policy: &ThresholdPolicy) -> String {
    let mut out = String::new();
    for &t in policy.thresholds() {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_thresholds(text: &str) -> Result<ThresholdPolicy, IoError> {
    let mut taus = Vec::new();
    for (ln, line) in data_lines(text) {
        for e in fields(line) {
            taus.push(
                e.parse()
                    .map_err(|_| parse_err(ln, format!("bad threshold {e:?}")))?,
            );
        }
    }
    if taus.is_empty() {
        return Err(parse_err(0, "empty thresholds file"));
    }
    Ok(ThresholdPolicy::new(taus))
}

pub fn write_thresholds(path: &Path, policy: &ThresholdPolicy) -> Result<(), IoError> {
    Ok(fs::write(path, render_thresholds(policy))?)
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdPolicy, IoError> {
    parse_thresholds(&fs::read_to_string(path)?)
}

/// Index-to-label remap table, `index<TAB>label` per line.
pub fn render_remap(remap: &[String]) -> String {
    remap
        .iter()
        .enumerate()
        .map(|(i, label)| format!("{i}\t{label}\n"))
        .collect()
}

pub fn parse_remap(text: &str) -> Result<Vec<String>, IoError> {
    let mut entries = Vec::new();
    for (ln, line) in data_lines(text) {
        let f = fields(line);
        if f.len() != 2 {
            return Err(parse_err(ln, "expected `index label`"));
        }
        let idx: usize = f[0]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad index {:?}", f[0])))?;
        if idx != entries.len() {
            return Err(parse_err(ln, format!("out-of-order index {idx}")));
        }
        entries.push(f[1].to_string());
    }
    Ok(entries)
}

/// Trace records `timestamp_seconds device_id cell_id`, comma or whitespace
/// delimited.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, IoError> {
    let mut records = Vec::new();
    for (ln, line) in data_lines(text) {
        let f = fields(line);
        if f.len() != 3 {
            return Err(parse_err(ln, "expected `timestamp device cell`"));
        }
        records.push(TraceRecord {
            time: f[0]
                .parse()
                .map_err(|_| parse_err(ln, format!("bad timestamp {:?}", f[0])))?,
            device: f[1].to_string(),
            cell: f[2].to_string(),
        });
    }
    Ok(records)
}

/// Raw coordinate records `timestamp_seconds device_id x y`.
pub fn parse_xy_trace(text: &str) -> Result<Vec<XyRecord>, IoError> {
    let mut records = Vec::new();
    for (ln, line) in data_lines(text) {
        let f = fields(line);
        if f.len() != 4 {
            return Err(parse_err(ln, "expected `timestamp device x y`"));
        }
        let num = |s: &str| -> Result<f64, IoError> {
            s.parse()
                .map_err(|_| parse_err(ln, format!("bad number {s:?}")))
        };
        records.push(XyRecord {
            time: num(f[0])?,
            device: f[1].to_string(),
            x: num(f[2])?,
            y: num(f[3])?,
        });
    }
    Ok(records)
}

/// Cell centers `cell_id x y`, one per line.
pub fn parse_centers(text: &str) -> Result<Vec<(String, f64, f64)>, IoError> {
    let mut centers = Vec::new();
    for (ln, line) in data_lines(text) {
        let f = fields(line);
        if f.len() != 3 {
            return Err(parse_err(ln, "expected `cell x y`"));
        }
        let num = |s: &str| -> Result<f64, IoError> {
            s.parse()
                .map_err(|_| parse_err(ln, format!("bad number {s:?}")))
        };
        centers.push((f[0].to_string(), num(f[1])?, num(f[2])?));
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(157);
        let model = random_model(4, &mut rng);
        let text = render_model(&model);
        assert!(text.starts_with("4\n"));
        let back = parse_model(&text).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((back.transition(i, j) - model.transition(i, j)).abs() < 1e-15);
            }
        }
        // Rendering is deterministic.
        assert_eq!(text, render_model(&back));
    }

    #[test]
    fn model_parse_errors_carry_line_numbers() {
        assert!(matches!(
            parse_model("2\n0.5 0.5\n0.5"),
            Err(IoError::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_model(""), Err(IoError::Parse { .. })));
        assert!(matches!(
            parse_model("2\n0.5 x\n0.5 0.5"),
            Err(IoError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn thresholds_round_trip() {
        let policy = ThresholdPolicy::new(vec![0, 3, 1]);
        let text = render_thresholds(&policy);
        assert_eq!(text, "0\n3\n1\n");
        assert_eq!(parse_thresholds(&text).unwrap(), policy);
        assert!(parse_thresholds("# nothing\n").is_err());
    }

    #[test]
    fn remap_round_trips_and_rejects_gaps() {
        let remap = vec!["cell-a".to_string(), "cell-b".to_string()];
        let text = render_remap(&remap);
        assert_eq!(parse_remap(&text).unwrap(), remap);
        assert!(parse_remap("1\tcell-b\n").is_err());
    }

    #[test]
    fn traces_parse_with_mixed_delimiters() {
        let records = parse_trace("# header\n0, dev1, a\n2.0 dev1 b\n").unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].cell, "b");
        assert!((records[1].time - 2.0).abs() < 1e-15);
        assert!(parse_trace("1 dev1\n").is_err());

        let xy = parse_xy_trace("0 dev1 1.5 -2.0\n").unwrap();
        assert_eq!(xy.len(), 1);
        assert!((xy[0].y + 2.0).abs() < 1e-15);

        let centers = parse_centers("a 0 0\nb 1 0\n").unwrap();
        assert_eq!(centers[1].0, "b");
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(163);
        let model = random_model(3, &mut rng);
        let mp = dir.path().join("model.txt");
        write_model(&mp, &model).unwrap();
        assert_eq!(read_model(&mp).unwrap().num_locations(), 3);
        let tp = dir.path().join("thresholds.txt");
        write_thresholds(&tp, &ThresholdPolicy::new(vec![1, 0, 2])).unwrap();
        assert_eq!(read_thresholds(&tp).unwrap().thresholds(), &[1, 0, 2]);
    }
}
