//! Plain-text dataset and condensed-graph directories.
//!
//! Dataset directory: `edges.tsv`, `features.csv`, `labels.txt`,
//! `masks.txt`, `meta.toml`. Condensed directory: `x_prime.csv`,
//! `a_prime.csv`, `y_prime.txt`, `meta.toml`. Floats are written with 17
//! significant digits so every finite value survives a round trip.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::condense::{CondensedGraph, CondensedMeta};
use crate::error::{Error, Result};
use crate::graph::{Dataset, SparseGraph, Split};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-blank lines with their 1-based line numbers; `#` starts a comment line.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| parse_err(path, 0, e.to_string()))
}

fn parse_matrix(path: &Path, text: &str, cols: Option<usize>) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut width = cols;
    let mut rows = 0;
    for (line, content) in content_lines(text) {
        let values = content
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, line, format!("`{}`: {e}", t.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            Some(w) if w != values.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {w} values, found {}", values.len()),
                ));
            }
            None => width = Some(values.len()),
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let w = width.unwrap_or(0);
    Array2::from_shape_vec((rows, w), data).map_err(|e| Error::shape(e.to_string()))
}

fn parse_usizes(path: &Path, text: &str) -> Result<Vec<usize>> {
    content_lines(text)
        .map(|(line, t)| {
            t.parse::<usize>()
                .map_err(|e| parse_err(path, line, format!("`{t}`: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
}

fn parse_split(path: &Path, line: usize, token: &str) -> Result<Split> {
    let parts: Vec<&str> = token.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    let roles: Vec<&str> = parts.iter().copied().filter(|&p| p != "none").collect();
    if roles.len() > 1 {
        return Err(parse_err(
            path,
            line,
            format!("mask overlap: node is in {}", roles.join(" and ")),
        ));
    }
    match roles.first().copied().unwrap_or("none") {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        "none" => Ok(Split::Unused),
        other => Err(parse_err(path, line, format!("unknown mask token `{other}`"))),
    }
}

/// Loads a dataset directory. Duplicate edges are merged; `meta.toml`'s `M`
/// must equal the number of edge lines.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.toml");
    let meta: DatasetMeta = toml::from_str(&read(&meta_path)?).map_err(|e| parse_err(&meta_path, 0, e.to_string()))?;

    let edge_path = dir.join("edges.tsv");
    let edge_text = read(&edge_path)?;
    let mut edges = Vec::new();
    for (line, content) in content_lines(&edge_text) {
        let ids: Vec<&str> = content.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(parse_err(
                &edge_path,
                line,
                format!("expected 2 node ids, found {}", ids.len()),
            ));
        }
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|e| parse_err(&edge_path, line, format!("`{t}`: {e}")))
        };
        let (i, j) = (parse(ids[0])?, parse(ids[1])?);
        if i >= meta.n || j >= meta.n {
            return Err(parse_err(
                &edge_path,
                line,
                format!("node id out of range for N = {}", meta.n),
            ));
        }
        if i == j {
            return Err(parse_err(&edge_path, line, format!("self-loop at node {i}")));
        }
        edges.push((i, j));
    }
    if edges.len() != meta.m {
        return Err(parse_err(
            &meta_path,
            0,
            format!("M = {} but edges.tsv has {} edge lines", meta.m, edges.len()),
        ));
    }
    let graph = SparseGraph::from_edges(meta.n, &edges)?;

    let feat_path = dir.join("features.csv");
    let features = parse_matrix(&feat_path, &read(&feat_path)?, Some(meta.d))?;
    if features.nrows() != meta.n {
        return Err(parse_err(
            &feat_path,
            0,
            format!("{} rows for N = {}", features.nrows(), meta.n),
        ));
    }

    let label_path = dir.join("labels.txt");
    let labels = parse_usizes(&label_path, &read(&label_path)?)?;
    if labels.len() != meta.n {
        return Err(parse_err(
            &label_path,
            0,
            format!("{} labels for N = {}", labels.len(), meta.n),
        ));
    }
    if let Some(pos) = labels.iter().position(|&y| y >= meta.k) {
        return Err(parse_err(
            &label_path,
            pos + 1,
            format!("label {} ≥ K = {}", labels[pos], meta.k),
        ));
    }

    let mask_path = dir.join("masks.txt");
    let split = content_lines(&read(&mask_path)?)
        .map(|(line, t)| parse_split(&mask_path, line, t))
        .collect::<Result<Vec<_>>>()?;
    if split.len() != meta.n {
        return Err(parse_err(
            &mask_path,
            0,
            format!("{} mask tokens for N = {}", split.len(), meta.n),
        ));
    }

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::new(name, graph, features, labels, split, meta.k)
}

fn write_matrix(x: &ArrayView2<f64>) -> String {
    let mut out = String::new();
    for row in x.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

fn write_usizes(values: &[usize]) -> String {
    values.iter().map(|v| format!("{v}\n")).collect()
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        n: dataset.num_nodes(),
        m: dataset.graph.num_edges(),
        d: dataset.features.ncols(),
        k: dataset.num_classes,
    };
    fs::write(
        dir.join("meta.toml"),
        toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    let edges: String = dataset.graph.edges().map(|(i, j, _)| format!("{i}\t{j}\n")).collect();
    fs::write(dir.join("edges.tsv"), edges)?;
    fs::write(dir.join("features.csv"), write_matrix(&dataset.features.view()))?;
    fs::write(dir.join("labels.txt"), write_usizes(&dataset.labels))?;
    let masks: String = dataset
        .split
        .iter()
        .map(|s| match s {
            Split::Train => "train\n",
            Split::Val => "val\n",
            Split::Test => "test\n",
            Split::Unused => "none\n",
        })
        .collect();
    fs::write(dir.join("masks.txt"), masks)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CondensedFileMeta {
    n: usize,
    d: usize,
    num_classes: usize,
    source: String,
    ratio: f64,
    seed: u64,
    config_hash: String,
    #[serde(default)]
    metrics: BTreeMap<String, f64>,
}

/// Writes the condensed triple plus deterministic metrics.
pub fn save_condensed(condensed: &CondensedGraph, metrics: &BTreeMap<String, f64>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("x_prime.csv"), write_matrix(&condensed.x_prime.view()))?;
    fs::write(dir.join("a_prime.csv"), write_matrix(&condensed.a_prime.view()))?;
    fs::write(dir.join("y_prime.txt"), write_usizes(&condensed.labels))?;
    let meta = CondensedFileMeta {
        n: condensed.n(),
        d: condensed.x_prime.ncols(),
        num_classes: condensed.num_classes,
        source: condensed.meta.source.clone(),
        ratio: condensed.meta.ratio,
        seed: condensed.meta.seed,
        config_hash: condensed.meta.config_hash.clone(),
        metrics: metrics
            .iter()
            .filter(|(_, v)| v.is_finite())
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
    };
    fs::write(
        dir.join("meta.toml"),
        toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_condensed(dir: &Path) -> Result<(CondensedGraph, BTreeMap<String, f64>)> {
    let meta_path: PathBuf = dir.join("meta.toml");
    let meta: CondensedFileMeta =
        toml::from_str(&read(&meta_path)?).map_err(|e| parse_err(&meta_path, 0, e.to_string()))?;
    let x_path = dir.join("x_prime.csv");
    let x_prime = parse_matrix(&x_path, &read(&x_path)?, Some(meta.d))?;
    let a_path = dir.join("a_prime.csv");
    let a_prime = parse_matrix(&a_path, &read(&a_path)?, Some(meta.n))?;
    let y_path = dir.join("y_prime.txt");
    let labels = parse_usizes(&y_path, &read(&y_path)?)?;
    if x_prime.nrows() != meta.n {
        return Err(parse_err(
            &x_path,
            0,
            format!("{} rows for n = {}", x_prime.nrows(), meta.n),
        ));
    }
    let condensed = CondensedGraph::new(
        x_prime,
        a_prime,
        labels,
        meta.num_classes,
        CondensedMeta {
            source: meta.source,
            ratio: meta.ratio,
            seed: meta.seed,
            config_hash: meta.config_hash,
        },
    )?;
    Ok((condensed, meta.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_dir(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in files {
            fs::write(dir.path().join(name), body).unwrap();
        }
        dir
    }

    fn single_edge_files(masks: &str) -> Vec<(&'static str, &str)> {
        vec![
            ("meta.toml", "N = 2\nM = 1\nd = 2\nK = 2\n"),
            ("edges.tsv", "0 1\n"),
            ("features.csv", "1.0,0.0\n0.0,1.0\n"),
            ("labels.txt", "0\n1\n"),
            ("masks.txt", masks),
        ]
    }

    #[test]
    fn single_edge_dataset() {
        let dir = write_dir(&single_edge_files("train\ntest\n"));
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.num_nodes(), 2);
        assert_eq!(d.graph.num_edges(), 1);
        assert_eq!(d.split, vec![Split::Train, Split::Test]);
    }

    #[test]
    fn mask_overlap_rejected() {
        let dir = write_dir(&single_edge_files("train,test\nnone\n"));
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_feature_reports_line() {
        let mut files = single_edge_files("train\ntest\n");
        files[2] = ("features.csv", "1.0,0.0\n0.0,oops\n");
        let dir = write_dir(&files);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn condensed_round_trip() {
        let c = CondensedGraph::new(
            array![[0.1, -1.0 / 3.0], [1e-300, 2.5e17]],
            array![[0.2, 1.0 / 7.0], [1.0 / 7.0, 0.0]],
            vec![1, 0],
            2,
            CondensedMeta {
                source: "toy".into(),
                ratio: 0.04,
                seed: 3,
                config_hash: "abc".into(),
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let metrics = BTreeMap::from([("fid".to_string(), 0.125)]);
        save_condensed(&c, &metrics, dir.path()).unwrap();
        let (back, m) = load_condensed(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(m, metrics);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = write_dir(&single_edge_files("val\nnone\n"));
        let d = load_dataset(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_dataset(&d, out.path()).unwrap();
        let back = load_dataset(out.path()).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.split, d.split);
        assert_eq!(back.labels, d.labels);
    }
}
