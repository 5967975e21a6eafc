//! Areal adjacency structure and intrinsic CAR precision algebra.
//!
//! The precision matrix `Q = D - W` is never materialized on the hot path.
//! Quadratic forms use the pairwise-difference identity
//! `xᵀQx = Σ_{(i,j) ∈ edges} (x_i - x_j)²`.

use std::collections::BTreeSet;
use std::io::BufRead;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: self-loop on unit {unit}")]
    SelfLoop { line: usize, unit: usize },
    #[error("line {line}: unit index {index} out of range for n = {n}")]
    OutOfRange { line: usize, index: usize, n: usize },
    #[error("line {line}: expected `i,j` with non-negative integer indices, got {text:?}")]
    Parse { line: usize, text: String },
    #[error("unit {unit} has no neighbors")]
    Isolated { unit: usize },
    #[error("graph must contain at least one unit")]
    Empty,
    #[error("vector length {got} does not match graph size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unit index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("failed to read adjacency input: {0}")]
    Io(String),
}

/// Undirected areal neighbor structure.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl AdjacencyGraph {
    /// Builds a graph from undirected pairs. Duplicate and reversed pairs are
    /// collapsed. Pairs are tagged with 1-based positions for error messages.
    pub fn from_edges<I>(n: usize, pairs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let tagged = pairs.into_iter().enumerate().map(|(k, (i, j))| (k + 1, i, j));
        Self::from_tagged(n, tagged)
    }

    fn from_tagged<I>(n: usize, pairs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize, usize)>,
    {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for (line, i, j) in pairs {
            for index in [i, j] {
                if index >= n {
                    return Err(GraphError::OutOfRange { line, index, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop { line, unit: i });
            }
            set.insert((i.min(j), i.max(j)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        if let Some(unit) = neighbors.iter().position(Vec::is_empty) {
            return Err(GraphError::Isolated { unit });
        }
        Ok(Self {
            neighbors,
            edges: set.into_iter().collect(),
        })
    }

    /// Reads an edge list of `i,j` rows with 0-based indices. A leading
    /// `from,to` header and blank lines are skipped.
    pub fn load_adjacency<R: BufRead>(reader: R, n: usize) -> Result<Self, GraphError> {
        let mut pairs = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line_no = k + 1;
            let line = line.map_err(|e| GraphError::Io(e.to_string()))?;
            let text = line.trim();
            if text.is_empty() || (line_no == 1 && text.replace(' ', "") == "from,to") {
                continue;
            }
            let parse_err = || GraphError::Parse {
                line: line_no,
                text: text.to_string(),
            };
            let mut fields = text.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err());
            };
            let i = a.parse::<usize>().map_err(|_| parse_err())?;
            let j = b.parse::<usize>().map_err(|_| parse_err())?;
            pairs.push((line_no, i, j));
        }
        Self::from_tagged(n, pairs)
    }

    /// Rook-contiguity lattice with `rows * cols` units in row-major order.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self, GraphError> {
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    pairs.push((i, i + 1));
                }
                if r + 1 < rows {
                    pairs.push((i, i + cols));
                }
            }
        }
        Self::from_edges(rows * cols, pairs)
    }

    /// Path graph 0 - 1 - ... - (n-1).
    pub fn path(n: usize) -> Result<Self, GraphError> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for &j in &self.neighbors[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    /// Rank of `Q`: n minus the number of connected components.
    pub fn precision_rank(&self) -> usize {
        self.n() - self.components()
    }

    pub fn require_connected(&self) -> Result<(), GraphError> {
        match self.components() {
            1 => Ok(()),
            components => Err(GraphError::Disconnected { components }),
        }
    }

    fn check_len(&self, len: usize) -> Result<(), GraphError> {
        if len != self.n() {
            return Err(GraphError::LengthMismatch {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }

    /// `(u - m)ᵀ Q (u - m)` via the pairwise-difference identity.
    pub fn precision_quadform(&self, u: &[f64], m: &[f64]) -> Result<f64, GraphError> {
        self.check_len(u.len())?;
        self.check_len(m.len())?;
        Ok(self
            .edges
            .iter()
            .map(|&(i, j)| {
                let d = (u[i] - m[i]) - (u[j] - m[j]);
                d * d
            })
            .sum())
    }

    /// `rᵀ Q r` for a residual vector already formed by the caller.
    pub fn residual_quadform(&self, r: &[f64]) -> f64 {
        debug_assert_eq!(r.len(), self.n());
        self.edges
            .iter()
            .map(|&(i, j)| {
                let d = r[i] - r[j];
                d * d
            })
            .sum()
    }

    /// ICAR conditional mean of unit `i`:
    /// `means_i + (1 / w_i+) Σ_{j ~ i} (values_j - means_j)`.
    /// The paired conditional variance is `τ² / w_i+`.
    pub fn conditional_mean(
        &self,
        i: usize,
        values: &[f64],
        means: &[f64],
    ) -> Result<f64, GraphError> {
        if i >= self.n() {
            return Err(GraphError::IndexOutOfRange { index: i, n: self.n() });
        }
        self.check_len(values.len())?;
        self.check_len(means.len())?;
        let nbrs = &self.neighbors[i];
        let sum: f64 = nbrs.iter().map(|&j| values[j] - means[j]).sum();
        Ok(means[i] + sum / nbrs.len() as f64)
    }

    /// `Xᵀ Q Y` for column-major matrices sharing the unit dimension.
    pub fn cross_precision(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.ncols(), y.ncols());
        for &(i, j) in &self.edges {
            let dx = x.row(i) - x.row(j);
            let dy = y.row(i) - y.row(j);
            out += dx.transpose() * dy;
        }
        out
    }

    /// Dense `D - W`. Only for simulation-scale graphs and test oracles.
    pub fn dense_precision(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut q = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            q[(i, j)] -= 1.0;
            q[(j, i)] -= 1.0;
            q[(i, i)] += 1.0;
            q[(j, j)] += 1.0;
        }
        q
    }

    /// Writes the edge list in the `from,to` CSV format.
    pub fn to_edge_csv(&self) -> String {
        let mut out = String::from("from,to\n");
        for &(i, j) in &self.edges {
            out.push_str(&format!("{i},{j}\n"));
        }
        out
    }
}
