//! Graphviz export.

use std::fmt::Write;

use saferecur::{ClosedLoopChain, ControlledChain, StateSet};

use crate::chain_file::ChainFile;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn nodes(out: &mut String, file: &ChainFile, chain: &ControlledChain) {
    for x in 0..chain.n() {
        let name = quote(&file.state_name(x));
        if chain.is_forbidden(x) {
            let _ = writeln!(
                out,
                "  {} [label={name}, shape=doublecircle, style=filled, fillcolor=lightgray];",
                x + 1
            );
        } else {
            let _ = writeln!(out, "  {} [label={name}];", x + 1);
        }
    }
}

/// One edge per positive `Q(y | x, u)`. With two actions, action 1 is solid
/// and action 2 dashed; otherwise edges carry the action name.
pub fn open_loop(file: &ChainFile, chain: &ControlledChain) -> String {
    let mut out = String::from("digraph chain {\n  node [shape=circle];\n");
    nodes(&mut out, file, chain);
    let m = chain.m();
    for u in 0..m {
        let attrs = if m == 2 {
            if u == 0 {
                "style=solid".to_string()
            } else {
                "style=dashed".to_string()
            }
        } else {
            format!("label={}", quote(&file.action_name(u)))
        };
        for x in 0..chain.n() {
            for (y, &p) in chain.row(x, u).iter().enumerate() {
                if p > 0.0 {
                    let _ = writeln!(out, "  {} -> {} [{attrs}];", x + 1, y + 1);
                }
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Closed-loop edges leaving states of `support`, labelled with their
/// probability. Without a closed loop only the nodes are drawn.
pub fn closed_loop_edges(
    file: &ChainFile,
    chain: &ControlledChain,
    closed: Option<&ClosedLoopChain>,
    support: &StateSet,
) -> String {
    let mut out = String::from("digraph closed_loop {\n  node [shape=circle];\n");
    nodes(&mut out, file, chain);
    if let Some(closed) = closed {
        for &x in support {
            for y in 0..closed.n() {
                if closed.has_edge(x, y) {
                    let _ = writeln!(
                        out,
                        "  {} -> {} [label=\"{:.2}\"];",
                        x + 1,
                        y + 1,
                        closed.prob(x, y)
                    );
                }
            }
        }
    }
    out.push_str("}\n");
    out
}
