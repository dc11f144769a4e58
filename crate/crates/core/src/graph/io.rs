//! Adjacency file formats.
//!
//! Edge list: header `K=<num_areas>`, then one `j,k` pair per line with
//! 1-based area indices; each line is an unordered pair.
//!
//! Matrix: `K` lines of `K` comma-separated `0`/`1` values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{validate_graph, RawAdjacency, SpatialGraph, ValidationReport};
use crate::error::{Error, Result};

pub fn read_edge_list(text: &str) -> Result<RawAdjacency> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty edge list"))?;
    let num_areas: usize = header
        .strip_prefix("K=")
        .ok_or_else(|| Error::parse(hline, "edge list must start with `K=<num_areas>`"))?
        .trim()
        .parse()
        .map_err(|e| Error::parse(hline, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(lineno, format!("expected `j,k`, got `{line}`")))?;
        let a: usize = a.trim().parse().map_err(|e| Error::parse(lineno, e))?;
        let b: usize = b.trim().parse().map_err(|e| Error::parse(lineno, e))?;
        if a == 0 || b == 0 {
            return Err(Error::parse(lineno, "area indices are 1-based"));
        }
        entries.push((a - 1, b - 1, 1.0));
        if a != b {
            entries.push((b - 1, a - 1, 1.0));
        }
    }
    Ok(RawAdjacency { num_areas, entries })
}

pub fn read_matrix_csv(text: &str) -> Result<RawAdjacency> {
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let k = rows.len();
    let mut entries = Vec::new();
    for (r, (lineno, line)) in rows.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != k {
            return Err(Error::parse(
                *lineno,
                format!("expected {k} columns in a square matrix, got {}", cells.len()),
            ));
        }
        for (c, cell) in cells.iter().enumerate() {
            let w: f64 = cell.trim().parse().map_err(|e| Error::parse(*lineno, e))?;
            if w != 0.0 {
                entries.push((r, c, w));
            }
        }
    }
    Ok(RawAdjacency {
        num_areas: k,
        entries,
    })
}

/// Parses either format, choosing by the `K=` header.
pub fn parse_adjacency(text: &str) -> Result<RawAdjacency> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    match first {
        Some(l) if l.starts_with("K=") => read_edge_list(text),
        _ => read_matrix_csv(text),
    }
}

/// Reads, validates and returns the graph with the validation report.
pub fn read_adjacency(path: &Path) -> Result<(SpatialGraph, ValidationReport)> {
    let raw = parse_adjacency(&fs::read_to_string(path)?)?;
    let report = validate_graph(&raw);
    let graph = report.clone().into_graph()?;
    Ok((graph, report))
}

pub fn write_edge_list(graph: &SpatialGraph) -> String {
    let mut out = format!("K={}\n", graph.num_areas());
    for (j, k) in graph.edges() {
        writeln!(out, "{},{}", j + 1, k + 1).unwrap();
    }
    out
}

pub fn write_matrix_csv(graph: &SpatialGraph) -> String {
    let k = graph.num_areas();
    let mut out = String::with_capacity(k * k * 2);
    for j in 0..k {
        let row: Vec<&str> = (0..k)
            .map(|c| if graph.has_edge(j, c) { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edge_list_parses_one_based_pairs() {
        let raw = read_edge_list("K=3\n1,2\n2,3\n").unwrap();
        let g = validate_graph(&raw).into_graph().unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn missing_header_and_zero_index_rejected() {
        assert!(read_edge_list("1,2\n").is_err());
        assert!(read_edge_list("K=2\n0,1\n").is_err());
    }

    #[test]
    fn self_loop_in_edge_list_fails_validation() {
        let raw = read_edge_list("K=2\n1,1\n").unwrap();
        assert!(validate_graph(&raw).errors[0].contains("self-loop"));
    }

    #[test]
    fn matrix_must_be_square_symmetric_binary() {
        assert!(read_matrix_csv("0,1\n1,0,0\n").is_err());
        let asym = read_matrix_csv("0,1\n0,0\n").unwrap();
        assert!(!validate_graph(&asym).is_valid());
        let weighted = read_matrix_csv("0,2\n2,0\n").unwrap();
        assert!(!validate_graph(&weighted).is_valid());
    }

    proptest! {
        #[test]
        fn both_formats_round_trip(k in 1usize..9, bits in proptest::collection::vec(any::<bool>(), 36)) {
            let mut edges = Vec::new();
            let mut bit = 0;
            for a in 0..k { for b in (a + 1)..k { if bits[bit] { edges.push((a, b)); } bit += 1; } }
            let g = SpatialGraph::from_edges(k, &edges).unwrap();
            let via_list = validate_graph(&parse_adjacency(&write_edge_list(&g)).unwrap()).into_graph().unwrap();
            let via_matrix = validate_graph(&parse_adjacency(&write_matrix_csv(&g)).unwrap()).into_graph().unwrap();
            prop_assert_eq!(&via_list, &g);
            prop_assert_eq!(&via_matrix, &g);
        }
    }
}
