//! Plain-text dataset directories and numeric matrix files.
//!
//! A dataset directory holds
//!
//! - `edges.txt`: one `u<TAB>v` pair per line, 0-based ids;
//! - `features.txt`: `n` lines of `d` space-separated reals;
//! - `labels.txt`: `n` lines with one integer label each;
//! - `meta.json`: `{"n": .., "d": .., "u": .., "name": ..}`.
//!
//! Reals are written in Rust's shortest round-trip form, so a write followed
//! by a read reproduces every value exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub u: usize,
    pub name: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub graph: Graph,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with their 1-based numbers. Blank lines are only
/// tolerated at the end of a file.
fn content_lines<'a>(path: &Path, text: &'a str) -> Result<Vec<(usize, &'a str)>> {
    let lines: Vec<&str> = text.lines().collect();
    let end = lines.iter().rposition(|l| !l.trim().is_empty()).map_or(0, |i| i + 1);
    let mut out = Vec::with_capacity(end);
    for (i, l) in lines[..end].iter().enumerate() {
        if l.trim().is_empty() {
            return Err(parse_err(path, i + 1, "blank line"));
        }
        out.push((i + 1, *l));
    }
    Ok(out)
}

fn parse_token<T: std::str::FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("expected {what}, found `{tok}`")))
}

/// Reads a whitespace-separated real matrix. `cols` pins the width when
/// known; otherwise the first line decides it.
pub fn read_matrix(path: &Path, rows: Option<usize>, cols: Option<usize>) -> Result<Matrix> {
    let text = read(path)?;
    let lines = content_lines(path, &text)?;
    if let Some(r) = rows {
        if lines.len() != r {
            return Err(parse_err(path, lines.len() + 1, format!("expected {r} rows, found {}", lines.len())));
        }
    }
    let mut width = cols;
    let mut data = Vec::new();
    for &(no, l) in &lines {
        let before = data.len();
        for tok in l.split_whitespace() {
            data.push(parse_token::<f64>(path, no, tok, "a real number")?);
        }
        let got = data.len() - before;
        match width {
            Some(w) if w != got => {
                return Err(parse_err(path, no, format!("expected {w} values, found {got}")));
            }
            None => width = Some(got),
            _ => {}
        }
    }
    Matrix::from_vec(lines.len(), width.unwrap_or(0), data)
}

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 8);
    for row in m.row_iter() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write(path, &format_matrix(m))
}

fn dataset_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| dataset_err(&meta_path, e.to_string()))?;
    if meta.u == 0 {
        return Err(dataset_err(&meta_path, "u must be at least 1"));
    }

    let labels_path = dir.join("labels.txt");
    let text = read(&labels_path)?;
    let lines = content_lines(&labels_path, &text)?;
    if lines.len() != meta.n {
        return Err(parse_err(
            &labels_path,
            lines.len().min(meta.n) + 1,
            format!("meta.json declares n = {} but the file has {} labels", meta.n, lines.len()),
        ));
    }
    let mut labels = Vec::with_capacity(meta.n);
    for (no, l) in lines {
        let y: usize = parse_token(&labels_path, no, l.trim(), "a nonnegative integer label")?;
        if y >= meta.u {
            return Err(parse_err(&labels_path, no, format!("label {y} is not below u = {}", meta.u)));
        }
        labels.push(y);
    }

    let features_path = dir.join("features.txt");
    let features = read_matrix(&features_path, Some(meta.n), Some(meta.d))?;

    let edges_path = dir.join("edges.txt");
    let text = read(&edges_path)?;
    let mut edges = Vec::new();
    for (no, l) in content_lines(&edges_path, &text)? {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(&edges_path, no, format!("expected 2 node ids, found {}", toks.len())));
        }
        let u: usize = parse_token(&edges_path, no, toks[0], "a node id")?;
        let v: usize = parse_token(&edges_path, no, toks[1], "a node id")?;
        if u >= meta.n || v >= meta.n {
            return Err(parse_err(&edges_path, no, format!("node id out of range for n = {}", meta.n)));
        }
        edges.push((u, v));
    }
    let graph = Graph::new(meta.n, edges, features, labels, meta.u)?;
    Ok(Dataset { meta, graph })
}

pub fn write_dataset(dir: &Path, g: &Graph, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        n: g.num_nodes(),
        d: g.feature_dim(),
        u: g.num_classes(),
        name: name.to_string(),
    };
    write(&dir.join("meta.json"), &serde_json::to_string_pretty(&meta)?)?;
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    write(&dir.join("edges.txt"), &edges)?;
    write_matrix(&dir.join("features.txt"), g.features())?;
    let mut labels = String::new();
    for y in g.labels() {
        writeln!(labels, "{y}").unwrap();
    }
    write(&dir.join("labels.txt"), &labels)
}

/// Files read by [`load_dataset`], for hashing.
pub fn dataset_files(dir: &Path) -> [PathBuf; 4] {
    ["meta.json", "edges.txt", "features.txt", "labels.txt"].map(|f| dir.join(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, edges: &str, features: &str, labels: &str, meta: &str) {
        std::fs::write(dir.join("edges.txt"), edges).unwrap();
        std::fs::write(dir.join("features.txt"), features).unwrap();
        std::fs::write(dir.join("labels.txt"), labels).unwrap();
        std::fs::write(dir.join("meta.json"), meta).unwrap();
    }

    const META3: &str = r#"{"n": 3, "d": 2, "u": 2, "name": "toy"}"#;

    #[test]
    fn cleans_duplicates_and_loops() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "0\t1\n1\t0\n2\t2\n", "1 0\n0 1\n1 1\n", "0\n1\n1\n", META3);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.graph.num_edges(), 1);
        write_files(dir.path(), "0\t1\n1\t2\n0\t1\n", "1 0\n0 1\n1 1\n", "0\n1\n1\n", META3);
        assert_eq!(load_dataset(dir.path()).unwrap().graph.num_edges(), 2);
    }

    #[test]
    fn label_count_mismatch_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let meta = r#"{"n": 5, "d": 2, "u": 2, "name": "toy"}"#;
        write_files(dir.path(), "0\t1\n", "1 0\n0 1\n1 1\n1 1\n1 1\n", "0\n1\n1\n0\n", meta);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Parse { path, .. } if path.ends_with("labels.txt")), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn bad_tokens_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "0\t1\n1\tx\n", "1 0\n0 1\n1 1\n", "0\n1\n1\n", META3);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 2, path, .. } if path.ends_with("edges.txt")));

        write_files(dir.path(), "0\t7\n", "1 0\n0 1\n1 1\n", "0\n1\n1\n", META3);
        assert!(matches!(load_dataset(dir.path()).unwrap_err(), Error::Parse { line: 1, .. }));

        write_files(dir.path(), "", "1 0\n0 1 3\n1 1\n", "0\n1\n1\n", META3);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Parse { line: 2, path, .. } if path.ends_with("features.txt")));

        write_files(dir.path(), "", "1 0\n0 1\n1 1\n", "0\n2\n1\n", META3);
        assert!(matches!(load_dataset(dir.path()).unwrap_err(), Error::Parse { line: 2, .. }));
    }

    #[test]
    fn matrix_text_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_rows(&[[0.1 + 0.2, 1e-300, -5.0], [f64::MAX, 1.0 / 3.0, f64::MIN_POSITIVE]]).unwrap();
        let path = dir.path().join("m.txt");
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path, None, None).unwrap(), m);
    }
}
