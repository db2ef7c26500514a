//! Symbolic graphs of models and the Weisfeiler-Lehman subtree kernel used
//! for similarity, diversity and complexity.
//!
//! Each term gets its own root node (`drift`, `diffusion`, `jump`) whose
//! single child is the expression tree. Operators are labelled by name,
//! leaves by `S`, `t`, `const` or the parameter letter.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dsl::{Expr, SdeModel};
use crate::seed::fnv1a64;

pub const DEFAULT_WL_ROUNDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub label: String,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SymbolicGraph {
    pub nodes: Vec<Node>,
    /// One root per term, in drift, diffusion, jump order.
    pub roots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("diversity needs at least two models, got {0}")]
    TooFewModels(usize),
}

impl SymbolicGraph {
    fn push(&mut self, label: String, children: Vec<usize>) -> usize {
        self.nodes.push(Node { label, children });
        self.nodes.len() - 1
    }

    fn add_expr(&mut self, e: &Expr) -> usize {
        match e {
            Expr::Const(_) => self.push("const".into(), vec![]),
            Expr::Param(c) => self.push(c.to_string(), vec![]),
            Expr::State => self.push("S".into(), vec![]),
            Expr::Time => self.push("t".into(), vec![]),
            Expr::Unary(f, x) => {
                let c = self.add_expr(x);
                self.push(f.name().into(), vec![c])
            }
            Expr::Binary(op, l, r) => {
                let a = self.add_expr(l);
                let b = self.add_expr(r);
                self.push(op.label().into(), vec![a, b])
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn to_symbolic_graph(model: &SdeModel) -> SymbolicGraph {
    let mut g = SymbolicGraph { nodes: Vec::new(), roots: Vec::new() };
    for (name, expr) in model.terms() {
        let child = g.add_expr(expr);
        let root = g.push(name.into(), vec![child]);
        g.roots.push(root);
    }
    g
}

/// Counts of `(round, label)` pairs over rounds `0..=rounds`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WlHistogram(pub BTreeMap<(usize, u64), u64>);

impl WlHistogram {
    // Integer sums keep self-similarity at exactly 1.
    fn dot(&self, other: &WlHistogram) -> u128 {
        self.0.iter().filter_map(|(k, &a)| other.0.get(k).map(|&b| u128::from(a) * u128::from(b))).sum()
    }
}

fn hash_relabel(own: u64, children: &mut [u64]) -> u64 {
    children.sort_unstable();
    let mut bytes = Vec::with_capacity(8 * (children.len() + 1));
    bytes.extend_from_slice(&own.to_le_bytes());
    for c in children.iter() {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    fnv1a64(&bytes)
}

pub fn wl_histogram(g: &SymbolicGraph, rounds: usize) -> WlHistogram {
    let mut labels: Vec<u64> = g.nodes.iter().map(|n| fnv1a64(n.label.as_bytes())).collect();
    let mut hist = BTreeMap::new();
    for round in 0..=rounds {
        for &l in &labels {
            *hist.entry((round, l)).or_insert(0) += 1;
        }
        if round == rounds {
            break;
        }
        labels = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut ch: Vec<u64> = n.children.iter().map(|&c| labels[c]).collect();
                hash_relabel(labels[i], &mut ch)
            })
            .collect();
    }
    WlHistogram(hist)
}

/// Cosine similarity of WL histograms, in `[0, 1]`.
pub fn similarity(g1: &SymbolicGraph, g2: &SymbolicGraph, rounds: usize) -> f64 {
    cosine(&wl_histogram(g1, rounds), &wl_histogram(g2, rounds))
}

fn cosine(h1: &WlHistogram, h2: &WlHistogram) -> f64 {
    let (n1, n2) = (h1.dot(h1), h2.dot(h2));
    if n1 == 0 || n2 == 0 {
        return 0.0;
    }
    let dot = h1.dot(h2);
    if n1 == n2 && dot == n1 {
        return 1.0;
    }
    (dot as f64 / ((n1 as f64).sqrt() * (n2 as f64).sqrt())).clamp(0.0, 1.0)
}

pub fn model_similarity(a: &SdeModel, b: &SdeModel) -> f64 {
    similarity(&to_symbolic_graph(a), &to_symbolic_graph(b), DEFAULT_WL_ROUNDS)
}

/// One minus the mean pairwise similarity.
pub fn diversity(graphs: &[SymbolicGraph], rounds: usize) -> Result<f64, GraphError> {
    if graphs.len() < 2 {
        return Err(GraphError::TooFewModels(graphs.len()));
    }
    let hists: Vec<WlHistogram> = graphs.iter().map(|g| wl_histogram(g, rounds)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            total += cosine(&hists[i], &hists[j]);
            pairs += 1;
        }
    }
    Ok(1.0 - total / pairs as f64)
}

/// Mean number of nodes along root-to-leaf paths.
pub fn complexity(g: &SymbolicGraph) -> f64 {
    fn walk(g: &SymbolicGraph, n: usize, depth: usize, acc: &mut (usize, usize)) {
        let node = &g.nodes[n];
        if node.children.is_empty() {
            acc.0 += depth;
            acc.1 += 1;
        }
        for &c in &node.children {
            walk(g, c, depth + 1, acc);
        }
    }
    let mut acc = (0, 0);
    for &r in &g.roots {
        walk(g, r, 1, &mut acc);
    }
    if acc.1 == 0 {
        0.0
    } else {
        acc.0 as f64 / acc.1 as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;

    fn g(s: &str) -> SymbolicGraph {
        to_symbolic_graph(&parse_model(s).unwrap())
    }

    #[test]
    fn complexity_values() {
        assert_eq!(complexity(&g("dS = a dt")), 2.0);
        assert!((complexity(&g("dS = a*S dt + b*S^c dW")) - 3.4).abs() < 1e-12);
    }

    #[test]
    fn identical_models_are_fully_similar() {
        let a = g("dS = a*(b - S) dt + c*sqrt(S) dW");
        assert_eq!(similarity(&a, &a, 3), 1.0);
        let cev = g("dS = a*S dt + b*S^c dW");
        assert_eq!(similarity(&cev, &cev, 3), 1.0);
        assert_eq!(diversity(&[cev.clone(), cev.clone(), cev], 3), Ok(0.0));
        let b = g("dS = a*S dt + b*S dW");
        let s = similarity(&a, &b, 3);
        assert!(s > 0.0 && s < 1.0, "{s}");
        assert_eq!(s, similarity(&b, &a, 3));
    }

    #[test]
    fn diversity_needs_two() {
        assert_eq!(diversity(&[g("dS = a dt")], 3), Err(GraphError::TooFewModels(1)));
        let d = diversity(&[g("dS = a dt"), g("dS = a dt")], 3).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn term_roots_distinguish_terms() {
        // the same expression as drift vs diffusion is not the same model
        let a = g("dS = a*S dt + b dW");
        let b = g("dS = b dt + a*S dW");
        assert!(similarity(&a, &b, 3) < 1.0);
    }
}
