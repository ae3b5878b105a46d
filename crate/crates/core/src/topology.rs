//! Network topologies as binary path/link incidence matrices.
//!
//! A topology is the set of links, the set of measured paths, and the M x N
//! matrix whose (i, j) entry says whether link j lies on path i. The matrix
//! drives factor-graph construction. This module also owns the logical
//! reduction (merging series links that belong to exactly the same paths),
//! the row-corruption error model used for robustness studies, and the
//! Jaccard similarity between two incidence matrices.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate link id '{0}'")]
    DuplicateLink(String),
    #[error("duplicate path id '{0}'")]
    DuplicatePath(String),
    #[error("path '{path}' references undeclared link '{link}'")]
    UnknownLink { path: String, link: String },
    #[error("path '{0}' has no links")]
    EmptyPath(String),
    #[error("matrix has {rows} rows and {cols} columns, expected {want_rows} x {want_cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("topologies are not comparable: {0}")]
    Incomparable(String),
    #[error("io error reading topology: {0}")]
    Io(#[from] std::io::Error),
}

/// Identity of one measured path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathMeta {
    pub id: String,
    pub src: String,
    pub dst: String,
}

/// Links, paths and their binary incidence matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    links: Vec<String>,
    paths: Vec<PathMeta>,
    matrix: Vec<Vec<bool>>,
}

/// Row-corruption model: each path row is corrupted with probability `te`,
/// and every entry of a corrupted row flips independently with probability
/// `q_flip`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub te: f64,
    pub q_flip: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn new(te: f64, q_flip: f64, seed: u64) -> Result<Self, TopologyError> {
        for (name, v) in [("te", te), ("q_flip", q_flip)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TopologyError::Incomparable(format!(
                    "{name} = {v} is outside [0, 1]"
                )));
            }
        }
        Ok(Self { te, q_flip, seed })
    }
}

impl Topology {
    /// Builds and validates a topology from explicit parts.
    pub fn new(
        links: Vec<String>,
        paths: Vec<PathMeta>,
        matrix: Vec<Vec<bool>>,
    ) -> Result<Self, TopologyError> {
        let mut seen = HashMap::new();
        for l in &links {
            if seen.insert(l.clone(), ()).is_some() {
                return Err(TopologyError::DuplicateLink(l.clone()));
            }
        }
        let mut seen = HashMap::new();
        for p in &paths {
            if seen.insert(p.id.clone(), ()).is_some() {
                return Err(TopologyError::DuplicatePath(p.id.clone()));
            }
        }
        if matrix.len() != paths.len() || matrix.iter().any(|row| row.len() != links.len()) {
            return Err(TopologyError::DimensionMismatch {
                rows: matrix.len(),
                cols: matrix.first().map_or(0, |r| r.len()),
                want_rows: paths.len(),
                want_cols: links.len(),
            });
        }
        for (i, row) in matrix.iter().enumerate() {
            if !row.iter().any(|&x| x) {
                return Err(TopologyError::EmptyPath(paths[i].id.clone()));
            }
        }
        Ok(Self {
            links,
            paths,
            matrix,
        })
    }

    /// Parses the topology file format.
    ///
    /// ```text
    /// links: l1 l2 l3
    /// paths:
    /// p1 n1 n4 : l1 l2
    /// p2 n2 n4 : l2 l3
    /// ```
    ///
    /// Alternatively a `matrix:` section may follow `paths:` lines written
    /// without link lists; rows are whitespace-separated 0/1 entries. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Paths,
            Matrix,
        }
        let mut section = Section::None;
        let mut links: Vec<String> = Vec::new();
        let mut paths: Vec<PathMeta> = Vec::new();
        let mut link_lists: Vec<Option<Vec<String>>> = Vec::new();
        let mut matrix_rows: Vec<(usize, Vec<bool>)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix("links:") {
                links.extend(rest.split_whitespace().map(str::to_owned));
                section = Section::None;
                continue;
            }
            if content == "paths:" {
                section = Section::Paths;
                continue;
            }
            if content == "matrix:" {
                section = Section::Matrix;
                continue;
            }
            match section {
                Section::Paths => {
                    let (head, list) = match content.split_once(':') {
                        Some((h, l)) => (h.trim(), Some(l.trim())),
                        None => (content, None),
                    };
                    let fields: Vec<&str> = head.split_whitespace().collect();
                    if fields.len() != 3 {
                        return Err(TopologyError::Parse {
                            line,
                            message: format!(
                                "expected 'path_id src dst [: link ...]', got '{content}'"
                            ),
                        });
                    }
                    paths.push(PathMeta {
                        id: fields[0].to_owned(),
                        src: fields[1].to_owned(),
                        dst: fields[2].to_owned(),
                    });
                    link_lists
                        .push(list.map(|l| l.split_whitespace().map(str::to_owned).collect()));
                }
                Section::Matrix => {
                    let mut row = Vec::new();
                    for tok in content.split_whitespace() {
                        match tok {
                            "0" => row.push(false),
                            "1" => row.push(true),
                            other => {
                                return Err(TopologyError::Parse {
                                    line,
                                    message: format!("matrix entry '{other}' is not 0 or 1"),
                                })
                            }
                        }
                    }
                    matrix_rows.push((line, row));
                }
                Section::None => {
                    return Err(TopologyError::Parse {
                        line,
                        message: format!("unexpected content outside any section: '{content}'"),
                    });
                }
            }
        }

        if links.is_empty() {
            return Err(TopologyError::Parse {
                line: 0,
                message: "no links declared".into(),
            });
        }
        let index: HashMap<&str, usize> = links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();

        let matrix = if !matrix_rows.is_empty() {
            if matrix_rows.len() != paths.len() {
                return Err(TopologyError::DimensionMismatch {
                    rows: matrix_rows.len(),
                    cols: matrix_rows.first().map_or(0, |(_, r)| r.len()),
                    want_rows: paths.len(),
                    want_cols: links.len(),
                });
            }
            for (line, row) in &matrix_rows {
                if row.len() != links.len() {
                    return Err(TopologyError::Parse {
                        line: *line,
                        message: format!(
                            "matrix row has {} entries, expected {}",
                            row.len(),
                            links.len()
                        ),
                    });
                }
            }
            matrix_rows.into_iter().map(|(_, r)| r).collect()
        } else {
            let mut matrix = Vec::with_capacity(paths.len());
            for (meta, list) in paths.iter().zip(&link_lists) {
                let list = list.as_ref().ok_or_else(|| TopologyError::EmptyPath(
                    meta.id.clone(),
                ))?;
                let mut row = vec![false; links.len()];
                for l in list {
                    let j = *index.get(l.as_str()).ok_or_else(|| TopologyError::UnknownLink {
                        path: meta.id.clone(),
                        link: l.clone(),
                    })?;
                    row[j] = true;
                }
                matrix.push(row);
            }
            matrix
        };

        Self::new(links, paths, matrix)
    }

    /// Reads and parses a topology file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the topology back into the file format.
    pub fn to_file_format(&self) -> String {
        let mut out = String::new();
        out.push_str("links:");
        for l in &self.links {
            let _ = write!(out, " {l}");
        }
        out.push_str("\npaths:\n");
        for (i, p) in self.paths.iter().enumerate() {
            let _ = write!(out, "{} {} {} :", p.id, p.src, p.dst);
            for j in self.path_links(i) {
                let _ = write!(out, " {}", self.links[j]);
            }
            out.push('\n');
        }
        out
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn links(&self) -> &[String] {
        &self.links
    }

    pub fn paths(&self) -> &[PathMeta] {
        &self.paths
    }

    pub fn matrix(&self) -> &[Vec<bool>] {
        &self.matrix
    }

    pub fn on_path(&self, path: usize, link: usize) -> bool {
        self.matrix[path][link]
    }

    /// Column indices of the links on `path`.
    pub fn path_links(&self, path: usize) -> impl Iterator<Item = usize> + '_ {
        self.matrix[path]
            .iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
    }

    pub fn path_index(&self, id: &str) -> Option<usize> {
        self.paths.iter().position(|p| p.id == id)
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.links.iter().position(|l| l == id)
    }

    /// Merges every maximal group of links traversed by exactly the same set
    /// of paths into one logical link, and drops links used by no path. Row
    /// count and column order of first occurrence are preserved.
    pub fn reduce_to_logical(&self) -> Topology {
        let mut groups: Vec<(Vec<bool>, Vec<usize>)> = Vec::new();
        let mut by_column: HashMap<Vec<bool>, usize> = HashMap::new();
        for j in 0..self.links.len() {
            let column: Vec<bool> = self.matrix.iter().map(|row| row[j]).collect();
            if !column.iter().any(|&x| x) {
                continue;
            }
            match by_column.get(&column) {
                Some(&g) => groups[g].1.push(j),
                None => {
                    by_column.insert(column.clone(), groups.len());
                    groups.push((column, vec![j]));
                }
            }
        }
        let links: Vec<String> = groups
            .iter()
            .map(|(_, members)| {
                members
                    .iter()
                    .map(|&j| self.links[j].as_str())
                    .collect::<Vec<_>>()
                    .join("+")
            })
            .collect();
        let matrix: Vec<Vec<bool>> = (0..self.paths.len())
            .map(|i| groups.iter().map(|(col, _)| col[i]).collect())
            .collect();
        Topology {
            links,
            paths: self.paths.clone(),
            matrix,
        }
    }

    /// Gives every path a private copy of its links, removing all sharing.
    ///
    /// Used to reproduce independent per-path estimation (the SEQ baseline)
    /// inside the same factor-graph machinery: with no shared links there is
    /// no cross-path message flow.
    pub fn isolate_paths(&self) -> Topology {
        let mut links = Vec::new();
        let mut matrix = Vec::with_capacity(self.paths.len());
        for i in 0..self.paths.len() {
            let mine: Vec<usize> = self.path_links(i).collect();
            let offset = links.len();
            for &j in &mine {
                links.push(format!("{}@{}", self.links[j], self.paths[i].id));
            }
            matrix.push((i, offset, mine.len()));
        }
        let total = links.len();
        let matrix = matrix
            .into_iter()
            .map(|(_, offset, count)| {
                let mut row = vec![false; total];
                for j in 0..count {
                    row[offset + j] = true;
                }
                row
            })
            .collect();
        Topology {
            links,
            paths: self.paths.clone(),
            matrix,
        }
    }

    /// Applies the row-corruption model. Corrupted rows that end up all-zero
    /// get one uniformly random entry set, since downstream min-relation
    /// factors require at least one link per path.
    pub fn perturb(&self, cfg: &PerturbationConfig) -> Topology {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut matrix = self.matrix.clone();
        for row in matrix.iter_mut() {
            if rng.random::<f64>() >= cfg.te {
                continue;
            }
            for entry in row.iter_mut() {
                if rng.random::<f64>() < cfg.q_flip {
                    *entry = !*entry;
                }
            }
            if !row.iter().any(|&x| x) {
                let j = rng.random_range(0..row.len());
                row[j] = true;
            }
        }
        Topology {
            links: self.links.clone(),
            paths: self.paths.clone(),
            matrix,
        }
    }

    /// `q_flip` scaled to the matrix density: a corrupted row then sees about
    /// `correction` times the mean path length in entry flips, keeping
    /// corrupted rows comparable in weight to intact ones.
    pub fn density_preserving_q_flip(&self, correction: f64) -> f64 {
        let ones: usize = self
            .matrix
            .iter()
            .map(|row| row.iter().filter(|&&x| x).count())
            .sum();
        let total = self.paths.len() * self.links.len();
        (ones as f64 / total as f64 * correction).clamp(0.0, 1.0)
    }

    /// Jaccard similarity of the (path, link) incidence sets of two
    /// topologies over the same paths and link universe.
    pub fn jaccard_similarity(&self, other: &Topology) -> Result<f64, TopologyError> {
        if self.links != other.links {
            return Err(TopologyError::Incomparable("link sets differ".into()));
        }
        if self.paths.len() != other.paths.len()
            || self.paths.iter().zip(&other.paths).any(|(a, b)| a.id != b.id)
        {
            return Err(TopologyError::Incomparable("path sets differ".into()));
        }
        let mut intersection = 0usize;
        let mut union = 0usize;
        for (ra, rb) in self.matrix.iter().zip(&other.matrix) {
            for (&a, &b) in ra.iter().zip(rb) {
                intersection += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        if union == 0 {
            return Ok(1.0);
        }
        Ok(intersection as f64 / union as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "\
links: l1 l2 l3
paths:
p1 n1 n4 : l1 l2
p2 n2 n4 : l2 l3
";

    fn example() -> Topology {
        Topology::parse(EXAMPLE).unwrap()
    }

    fn from_matrix(matrix: Vec<Vec<bool>>) -> Topology {
        let links = (0..matrix[0].len()).map(|j| format!("l{j}")).collect();
        let paths = (0..matrix.len())
            .map(|i| PathMeta {
                id: format!("p{i}"),
                src: format!("s{i}"),
                dst: format!("d{i}"),
            })
            .collect();
        Topology::new(links, paths, matrix).unwrap()
    }

    #[test]
    fn parses_link_list_form() {
        let t = example();
        assert_eq!(t.n_links(), 3);
        assert_eq!(t.n_paths(), 2);
        assert_eq!(
            t.matrix(),
            &[vec![true, true, false], vec![false, true, true]]
        );
        assert_eq!(t.paths()[0].src, "n1");
    }

    #[test]
    fn parses_matrix_form() {
        let text = "\
links: a b c
paths:
p1 n1 n2
p2 n2 n3
matrix:
1 1 0
0 1 1
";
        let t = Topology::parse(text).unwrap();
        assert_eq!(t.matrix(), example().matrix());
    }

    #[test]
    fn single_link_single_path() {
        let t = Topology::parse("links: l\npaths:\np a b : l\n").unwrap();
        assert_eq!(t.matrix(), &[vec![true]]);
    }

    #[test]
    fn rejects_undeclared_link() {
        let err = Topology::parse("links: l1\npaths:\np a b : l9\n").unwrap_err();
        assert!(matches!(err, TopologyError::UnknownLink { .. }));
    }

    #[test]
    fn rejects_duplicates_and_empty_paths() {
        assert!(matches!(
            Topology::parse("links: l l\npaths:\np a b : l\n"),
            Err(TopologyError::DuplicateLink(_))
        ));
        assert!(matches!(
            Topology::parse("links: l m\npaths:\np a b : l\np c d : m\n# dup\npaths:\np a b : l\n"),
            Err(TopologyError::DuplicatePath(_))
        ));
        assert!(matches!(
            Topology::parse("links: l\npaths:\np a b :\n"),
            Err(TopologyError::EmptyPath(_))
        ));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = Topology::parse("links: l\npaths:\nbogus line\n").unwrap_err();
        match err {
            TopologyError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reduce_keeps_distinct_columns() {
        let t = example();
        let r = t.reduce_to_logical();
        assert_eq!(r.matrix(), t.matrix());
    }

    #[test]
    fn reduce_merges_series_links() {
        let t = from_matrix(vec![vec![true, true], vec![true, true]]);
        let r = t.reduce_to_logical();
        assert_eq!(r.matrix(), &[vec![true], vec![true]]);
        assert_eq!(r.links()[0], "l0+l1");
    }

    #[test]
    fn reduce_drops_unused_links() {
        let t = from_matrix(vec![vec![true, false, true], vec![true, false, false]]);
        let r = t.reduce_to_logical();
        assert_eq!(r.n_links(), 2);
        assert_eq!(r.matrix(), &[vec![true, true], vec![true, false]]);
    }

    #[test]
    fn reduce_is_idempotent() {
        let t = from_matrix(vec![
            vec![true, true, false, true],
            vec![false, true, true, true],
            vec![true, true, true, false],
        ]);
        let once = t.reduce_to_logical();
        let twice = once.reduce_to_logical();
        assert_eq!(once.matrix(), twice.matrix());
    }

    #[test]
    fn perturb_with_te_zero_is_identity() {
        let t = example();
        for seed in 0..5 {
            let cfg = PerturbationConfig::new(0.0, 1.0, seed).unwrap();
            assert_eq!(t.perturb(&cfg).matrix(), t.matrix());
        }
    }

    #[test]
    fn perturb_full_flip() {
        let t = from_matrix(vec![vec![true, true, false]]);
        let cfg = PerturbationConfig::new(1.0, 1.0, 3).unwrap();
        assert_eq!(t.perturb(&cfg).matrix(), &[vec![false, false, true]]);
    }

    #[test]
    fn perturb_repairs_all_zero_rows() {
        let t = from_matrix(vec![vec![true, false, false]]);
        for seed in 0..20 {
            let cfg = PerturbationConfig::new(1.0, 1.0, seed).unwrap();
            let p = t.perturb(&cfg);
            assert!(p.matrix()[0].iter().any(|&x| x));
        }
    }

    #[test]
    fn perturb_is_deterministic_given_seed() {
        let t = from_matrix(vec![vec![true, false, true, false, true]; 8]);
        let cfg = PerturbationConfig::new(0.5, 0.5, 99).unwrap();
        assert_eq!(t.perturb(&cfg).matrix(), t.perturb(&cfg).matrix());
    }

    #[test]
    fn perturb_flip_rate_matches_te_q_flip() {
        // Monte-Carlo flip counter over 1e5 rows: the fraction of flipped
        // entries converges to te * q_flip (the all-zero repair is rare for
        // this row shape).
        let rows = 100_000;
        let t = from_matrix(vec![vec![true, true, false, false, false, false]; rows]);
        let (te, q) = (0.9, 0.1);
        let p = t.perturb(&PerturbationConfig::new(te, q, 7).unwrap());
        let flipped: usize = t
            .matrix()
            .iter()
            .zip(p.matrix())
            .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
            .sum();
        let frac = flipped as f64 / (rows * 6) as f64;
        assert!((frac - te * q).abs() < 0.01, "flip fraction {frac}");
    }

    #[test]
    fn jaccard_identity_and_disjoint() {
        let t = example();
        assert_eq!(t.jaccard_similarity(&t).unwrap(), 1.0);
        let a = from_matrix(vec![vec![true, false]]);
        let b = from_matrix(vec![vec![false, true]]);
        assert_eq!(a.jaccard_similarity(&b).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_hand_countable() {
        let a = from_matrix(vec![vec![true, true, false]]);
        let b = from_matrix(vec![vec![true, false, true]]);
        let j = a.jaccard_similarity(&b).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn jaccard_is_symmetric_and_detects_mismatch() {
        let a = from_matrix(vec![vec![true, true, false], vec![false, true, true]]);
        let cfg = PerturbationConfig::new(1.0, 0.4, 5).unwrap();
        let b = a.perturb(&cfg);
        assert_eq!(
            a.jaccard_similarity(&b).unwrap(),
            b.jaccard_similarity(&a).unwrap()
        );
        let c = from_matrix(vec![vec![true, true]]);
        assert!(a.jaccard_similarity(&c).is_err());
    }

    #[test]
    fn isolate_paths_removes_sharing() {
        let t = example();
        let iso = t.isolate_paths();
        assert_eq!(iso.n_links(), 4);
        assert_eq!(iso.n_paths(), 2);
        for j in 0..iso.n_links() {
            let users = (0..iso.n_paths()).filter(|&i| iso.on_path(i, j)).count();
            assert_eq!(users, 1);
        }
    }

    #[test]
    fn file_format_round_trips() {
        let t = example();
        let back = Topology::parse(&t.to_file_format()).unwrap();
        assert_eq!(back, t);
    }
}
