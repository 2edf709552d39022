//! Per-season win/loss digraph and eigenvector-centrality team skill.
//!
//! Edges point from winner to loser. A team's score is proportional to the
//! sum of the scores of the teams it beat, weighted by how often it beat
//! them, so wins over strong opponents count for more.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SeasonDataset;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has {0} team(s); centrality needs at least 2")]
    DegenerateNetwork(usize),
    #[error("power iteration did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<CentralityVector>),
    #[error("centrality does not cover team `{0}`")]
    MissingScore(String),
    #[error("i/o failure writing {path}: {message}")]
    IoFailure { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeData {
    pub weight: u32,
    /// Winning margins, kept sorted ascending.
    pub margins: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeasonNetwork {
    teams: Vec<String>,
    edges: BTreeMap<(usize, usize), EdgeData>,
}

impl SeasonNetwork {
    /// Builds a network from explicit parts. Node ids index into `teams`.
    pub fn from_parts(teams: Vec<String>, edges: BTreeMap<(usize, usize), EdgeData>) -> Self {
        Self { teams, edges }
    }

    pub fn teams(&self) -> &[String] {
        &self.teams
    }

    pub fn len(&self) -> usize {
        self.teams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teams.is_empty()
    }

    pub fn index_of(&self, team: &str) -> Option<usize> {
        self.teams.binary_search_by(|t| t.as_str().cmp(team)).ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), &EdgeData)> {
        self.edges.iter().map(|(k, v)| (*k, v))
    }

    pub fn edge(&self, winner: &str, loser: &str) -> Option<&EdgeData> {
        let w = self.index_of(winner)?;
        let l = self.index_of(loser)?;
        self.edges.get(&(w, l))
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().map(|e| u64::from(e.weight)).sum()
    }
}

pub fn build_network(dataset: &SeasonDataset) -> SeasonNetwork {
    let teams = dataset.teams();
    let index: BTreeMap<&str, usize> = teams
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut edges: BTreeMap<(usize, usize), EdgeData> = BTreeMap::new();
    for game in &dataset.games {
        let key = (index[game.winner()], index[game.loser()]);
        let edge = edges.entry(key).or_insert(EdgeData {
            weight: 0,
            margins: Vec::new(),
        });
        edge.weight += 1;
        edge.margins.push(game.margin());
    }
    for edge in edges.values_mut() {
        edge.margins.sort_unstable();
    }
    SeasonNetwork { teams, edges }
}

/// Row-major dense adjacency matrix; entry `[n][t]` is the number of wins of
/// `n` over `t`.
pub fn adjacency_matrix(network: &SeasonNetwork) -> Vec<Vec<f64>> {
    let n = network.len();
    let mut a = vec![vec![0.0; n]; n];
    for ((w, l), edge) in network.edges() {
        a[w][l] = f64::from(edge.weight);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityVector {
    pub teams: Vec<String>,
    pub scores: Vec<f64>,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CentralityVector {
    pub fn score(&self, team: &str) -> Option<f64> {
        self.teams
            .iter()
            .position(|t| t == team)
            .map(|i| self.scores[i])
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.teams
            .iter()
            .cloned()
            .zip(self.scores.iter().copied())
            .collect()
    }

    /// Teams ordered by descending score, ties by id.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = self
            .teams
            .iter()
            .map(String::as_str)
            .zip(self.scores.iter().copied())
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        out
    }

    /// `team,centrality` CSV, one row per team in node order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("team,centrality\n");
        for (team, score) in self.teams.iter().zip(&self.scores) {
            let _ = writeln!(out, "{},{}", csv_field(team), score);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Power-iteration knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralityConfig {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Principal eigenvector of `A + epsilon * ones` by power iteration.
///
/// Iterates on the shifted matrix `A' + s I`, where `s` is the mean row sum
/// of `A'`. The shift leaves eigenvectors unchanged but separates the Perron
/// root from the other eigenvalues of equal modulus that appear in
/// near-periodic or near-acyclic seasons.
pub fn eigenvector_centrality(
    network: &SeasonNetwork,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CentralityVector, NetworkError> {
    let n = network.len();
    if n < 2 {
        return Err(NetworkError::DegenerateNetwork(n));
    }
    let a = adjacency_matrix(network);
    let (scores, eigenvalue, iterations, converged) = power_iterate(&a, epsilon, tol, max_iter);
    let result = CentralityVector {
        teams: network.teams().to_vec(),
        scores,
        eigenvalue,
        iterations,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(NetworkError::NotConverged(Box::new(result)))
    }
}

/// Matrix-vector product with the damped matrix: `(A + eps J) x`.
fn damped_mul(a: &[Vec<f64>], epsilon: f64, x: &[f64], out: &mut [f64]) {
    let total: f64 = x.iter().sum();
    for (row, o) in a.iter().zip(out.iter_mut()) {
        *o = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() + epsilon * total;
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn power_iterate(
    a: &[Vec<f64>],
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize, bool) {
    let n = a.len();
    let shift =
        a.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / n as f64 + epsilon * n as f64;
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut ax = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut prev_diff = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        damped_mul(a, epsilon, &x, &mut ax);
        let next: Vec<f64> = ax.iter().zip(&x).map(|(v, xi)| v + shift * xi).collect();
        let norm = norm2(&next);
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let next: Vec<f64> = next.iter().map(|v| v / norm).collect();
        let diff = next
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        x = next;
        // Remaining error is about diff * rho / (1 - rho) for contraction rate rho.
        let rho = diff / prev_diff;
        prev_diff = diff;
        if diff < tol && (rho < 1.0 && diff * rho / (1.0 - rho) < tol || diff < tol * 1e-3) {
            converged = true;
            break;
        }
    }
    damped_mul(a, epsilon, &x, &mut ax);
    let eigenvalue = ax.iter().sum::<f64>() / x.iter().sum::<f64>();
    // A vanishing entry means the iterate has not reached a Perron vector.
    let positive = x.iter().all(|&v| v > 0.0);
    (x, eigenvalue, iterations, converged && positive)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn check_coverage(
    network: &SeasonNetwork,
    centrality: &CentralityVector,
) -> Result<Vec<f64>, NetworkError> {
    network
        .teams()
        .iter()
        .map(|t| {
            centrality
                .score(t)
                .ok_or_else(|| NetworkError::MissingScore(t.clone()))
        })
        .collect()
}

fn join_margins(margins: &[u32]) -> String {
    margins
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Renders the network as GraphML. Output depends only on the inputs.
pub fn graphml_string(
    network: &SeasonNetwork,
    centrality: &CentralityVector,
) -> Result<String, NetworkError> {
    let scores = check_coverage(network, centrality)?;
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    out.push_str("  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n");
    out.push_str(
        "  <key id=\"centrality\" for=\"node\" attr.name=\"centrality\" attr.type=\"double\"/>\n",
    );
    out.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"int\"/>\n");
    out.push_str(
        "  <key id=\"margins\" for=\"edge\" attr.name=\"margins\" attr.type=\"string\"/>\n",
    );
    out.push_str("  <graph id=\"season\" edgedefault=\"directed\">\n");
    for (i, (team, score)) in network.teams().iter().zip(&scores).enumerate() {
        let _ = writeln!(
            out,
            "    <node id=\"n{i}\">\n      <data key=\"label\">{}</data>\n      <data key=\"centrality\">{score}</data>\n    </node>",
            xml_escape(team)
        );
    }
    for (k, ((w, l), edge)) in network.edges().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"e{k}\" source=\"n{w}\" target=\"n{l}\">\n      <data key=\"weight\">{}</data>\n      <data key=\"margins\">{}</data>\n    </edge>",
            edge.weight,
            join_margins(&edge.margins)
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    Ok(out)
}

pub fn export_graphml(
    network: &SeasonNetwork,
    centrality: &CentralityVector,
    path: &Path,
) -> Result<(), NetworkError> {
    let body = graphml_string(network, centrality)?;
    fs::write(path, body).map_err(|e| NetworkError::IoFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Renders the network in Graphviz DOT. Node `width` is proportional to
/// centrality relative to the season maximum.
pub fn dot_string(
    network: &SeasonNetwork,
    centrality: &CentralityVector,
) -> Result<String, NetworkError> {
    let scores = check_coverage(network, centrality)?;
    let max = scores.iter().copied().fold(0.0, f64::max);
    let mut out = String::from("digraph season {\n");
    for (team, score) in network.teams().iter().zip(&scores) {
        let width = if max > 0.0 {
            0.5 + 1.5 * score / max
        } else {
            0.5
        };
        let _ = writeln!(
            out,
            "  \"{}\" [centrality={score}, width={width:.6}];",
            team.replace('"', "\\\"")
        );
    }
    for ((w, l), edge) in network.edges() {
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [weight={}, margins=\"{}\"];",
            network.teams()[w].replace('"', "\\\""),
            network.teams()[l].replace('"', "\\\""),
            edge.weight,
            join_margins(&edge.margins)
        );
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_dot(
    network: &SeasonNetwork,
    centrality: &CentralityVector,
    path: &Path,
) -> Result<(), NetworkError> {
    let body = dot_string(network, centrality)?;
    fs::write(path, body).map_err(|e| NetworkError::IoFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
