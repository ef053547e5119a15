//! Hypergraph and heatmap renderings of a spectrum report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::search::SpectrumReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperEdge {
    pub members: Vec<usize>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundantNode {
    pub variable: usize,
    /// Witness variables joined by commas; empty for constants.
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<HyperEdge>,
    pub redundant: Vec<RedundantNode>,
}

fn join(ids: impl IntoIterator<Item = usize>) -> String {
    ids.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

pub fn export_hypergraph(report: &SpectrumReport) -> Hypergraph {
    let mut nodes = BTreeSet::new();
    let edges = report
        .accepted
        .iter()
        .map(|a| {
            let members = a.mask.indices();
            nodes.extend(members.iter().copied());
            HyperEdge { members, coefficient: a.coefficient }
        })
        .collect();
    let redundant = report
        .redundancy
        .iter()
        .map(|e| {
            nodes.insert(e.variable);
            nodes.extend(e.witness_mask.iter());
            RedundantNode { variable: e.variable, witness: join(e.witness_mask.iter()) }
        })
        .collect();
    Hypergraph { nodes: nodes.into_iter().collect(), edges, redundant }
}

const PALETTE: [&str; 8] =
    ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];

impl Hypergraph {
    /// Undirected DOT: each hyperedge is drawn as a clique in its own color,
    /// redundant nodes are orange and carry their witness.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph actspec {\n  node [shape=circle, style=filled, fillcolor=white];\n");
        for &v in &self.nodes {
            match self.redundant.iter().find(|r| r.variable == v) {
                Some(r) => writeln!(
                    out,
                    "  {v} [fillcolor=orange, redundant=true, witness=\"{}\"];",
                    r.witness
                ),
                None => writeln!(out, "  {v};"),
            }
            .expect("writing to a String");
        }
        for (k, e) in self.edges.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            if e.members.len() == 1 {
                let v = e.members[0];
                writeln!(out, "  {v} [color=\"{color}\", penwidth=3, coefficient={}];", e.coefficient)
                    .expect("writing to a String");
            }
            for (i, a) in e.members.iter().enumerate() {
                for b in &e.members[i + 1..] {
                    writeln!(out, "  {a} -- {b} [color=\"{color}\", edge_set={k}, coefficient={}];", e.coefficient)
                        .expect("writing to a String");
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Per-variable status for an image-shaped layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `Σ c(S)²` over accepted subsets containing the variable.
    pub importance: Vec<f64>,
    pub accepted: Vec<bool>,
    pub redundant: Vec<bool>,
}

pub fn heatmap(report: &SpectrumReport) -> Heatmap {
    let n = report.n;
    let mut h = Heatmap { importance: vec![0.0; n], accepted: vec![false; n], redundant: vec![false; n] };
    for a in &report.accepted {
        for i in a.mask.iter() {
            h.importance[i] += a.coefficient * a.coefficient;
            h.accepted[i] = true;
        }
    }
    for e in &report.redundancy {
        h.redundant[e.variable] = true;
    }
    h
}

impl Heatmap {
    /// Keeps the accepted mark only on the `k` most important variables, ties
    /// broken by index.
    pub fn restrict_to_top_k(&mut self, k: usize) {
        let mut ranked: Vec<usize> = (0..self.importance.len()).filter(|&i| self.accepted[i]).collect();
        ranked.sort_by(|&a, &b| self.importance[b].total_cmp(&self.importance[a]).then(a.cmp(&b)));
        for &i in ranked.iter().skip(k) {
            self.accepted[i] = false;
        }
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "variable,importance,accepted,redundant")?;
        for i in 0..self.importance.len() {
            writeln!(sink, "{i},{},{},{}", self.importance[i], self.accepted[i] as u8, self.redundant[i] as u8)?;
        }
        Ok(())
    }

    /// Plain PGM: accepted members 255, redundant variables 128, others 0.
    pub fn write_pgm<W: Write>(&self, width: usize, mut sink: W) -> Result<()> {
        let n = self.importance.len();
        if width == 0 || n % width != 0 {
            return Err(invalid(format!("{n} variables do not fill rows of width {width}")));
        }
        writeln!(sink, "P2\n{width} {}\n255", n / width)?;
        for row in 0..n / width {
            let line: Vec<String> = (row * width..(row + 1) * width)
                .map(|i| {
                    let v = if self.accepted[i] {
                        255
                    } else if self.redundant[i] {
                        128
                    } else {
                        0
                    };
                    v.to_string()
                })
                .collect();
            writeln!(sink, "{}", line.join(" "))?;
        }
        Ok(())
    }
}
