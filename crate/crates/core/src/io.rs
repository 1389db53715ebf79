//! Text file formats: graphs (`n m W` header, then `u v w` lines), parts
//! files (one part per line), and whitespace-separated vectors.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::{GraphError, Partition, WeightedGraph};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

/// Lines that are neither blank nor `#` comments, with 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T, IoError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| parse_err(line, format!("bad {what} `{tok}`")))
}

pub fn parse_graph(text: &str) -> Result<WeightedGraph, IoError> {
    let mut lines = content_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty graph file"))?;
    let mut it = header.split_whitespace();
    let n: usize = field(hl, it.next(), "node count")?;
    let m: usize = field(hl, it.next(), "edge count")?;
    let cap: Option<f64> = it.next().map(|t| t.parse().map_err(|_| parse_err(hl, format!("bad weight bound `{t}`")))).transpose()?;
    let mut g = WeightedGraph::new(n);
    for (ln, l) in lines {
        let mut it = l.split_whitespace();
        let u: usize = field(ln, it.next(), "endpoint")?;
        let v: usize = field(ln, it.next(), "endpoint")?;
        let w: f64 = match it.next() {
            Some(t) => t.parse().map_err(|_| parse_err(ln, format!("bad weight `{t}`")))?,
            None => 1.0,
        };
        if let Some(cap) = cap {
            if w > cap {
                return Err(parse_err(ln, format!("weight {w} exceeds header bound {cap}")));
            }
        }
        g.add_edge(u, v, w).map_err(|e| parse_err(ln, e.to_string()))?;
    }
    if g.m() != m {
        return Err(parse_err(hl, format!("header declares {m} edges, file has {}", g.m())));
    }
    Ok(g)
}

pub fn format_graph(g: &WeightedGraph) -> String {
    let wmax = g.edges().iter().map(|e| e.weight).fold(0.0, f64::max);
    let mut out = format!("{} {} {}\n", g.n(), g.m(), wmax);
    for e in g.edges() {
        out.push_str(&format!("{} {} {}\n", e.u, e.v, e.weight));
    }
    out
}

pub fn parse_parts(text: &str) -> Result<Partition, IoError> {
    let mut parts = Vec::new();
    for (ln, l) in content_lines(text) {
        let part = l.split_whitespace().map(|t| field(ln, Some(t), "node id")).collect::<Result<Vec<usize>, _>>()?;
        parts.push(part);
    }
    Ok(Partition::new(parts))
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>, IoError> {
    let mut out = Vec::new();
    for (ln, l) in content_lines(text) {
        for t in l.split_whitespace() {
            out.push(field(ln, Some(t), "value")?);
        }
    }
    Ok(out)
}

pub fn format_vector(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.17e}\n")).collect()
}

pub fn parse_nodes(text: &str) -> Result<Vec<usize>, IoError> {
    let mut out = Vec::new();
    for (ln, l) in content_lines(text) {
        for t in l.split_whitespace() {
            out.push(field(ln, Some(t), "node id")?);
        }
    }
    Ok(out)
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

pub fn write_string(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Write { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn read_graph(path: &Path) -> Result<WeightedGraph, IoError> {
    parse_graph(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_round_trip() {
        let g = WeightedGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 2.5), (2, 3, 7.0)]).unwrap();
        let text = format_graph(&g);
        assert!(text.starts_with("4 3 7\n"));
        assert_eq!(parse_graph(&text).unwrap(), g);
    }

    #[test]
    fn graph_errors_carry_line_numbers() {
        let e = parse_graph("3 2 1\n0 1 1\n# note\n1 x 1\n").unwrap_err();
        assert!(e.to_string().starts_with("line 4"), "{e}");
        assert!(parse_graph("3 2 1\n0 1 1\n").is_err());
        assert!(parse_graph("2 1 1\n0 1 5\n").is_err());
        assert!(parse_graph("2 1 1\n0 1 -1\n").is_err());
    }

    #[test]
    fn parts_and_vectors() {
        let p = parse_parts("0 1 2\n\n3 4\n").unwrap();
        assert_eq!(p.parts, vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(parse_vector("1 -2\n3.5\n").unwrap(), vec![1.0, -2.0, 3.5]);
        let x = vec![0.1, -1.0 / 3.0];
        assert_eq!(parse_vector(&format_vector(&x)).unwrap(), x);
    }
}
