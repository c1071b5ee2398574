//! Text and DOT renderings of a tree.

use std::fmt::Write;

use crate::schema::ProbabilityDistribution;
use crate::tree::{DecisionTree, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderStyle {
    Text,
    Dot,
}

pub fn render(tree: &DecisionTree, style: RenderStyle) -> String {
    match style {
        RenderStyle::Text => render_text(tree),
        RenderStyle::Dot => render_dot(tree),
    }
}

fn format_probs(probs: &ProbabilityDistribution) -> String {
    probs
        .iter()
        .map(|(label, p)| format!("{label}: {p:.2}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn text_node(node: &TreeNode, indent: usize, prefix: &str, out: &mut String) {
    let pad = "  ".repeat(indent);
    match node {
        TreeNode::Leaf { label, probs } => {
            let _ = writeln!(out, "{pad}{prefix}{label} ({})", format_probs(probs));
        }
        TreeNode::Internal {
            feature,
            split,
            left,
            right,
            ..
        } => {
            let _ = writeln!(out, "{pad}{prefix}{}", split.left_condition(feature));
            text_node(left, indent + 1, "yes: ", out);
            text_node(right, indent + 1, "no: ", out);
        }
    }
}

/// Indented ASCII: one line per node. Internal lines carry the left-branch
/// condition; `yes` follows it, `no` takes the complement.
fn render_text(tree: &DecisionTree) -> String {
    let mut out = String::new();
    text_node(&tree.root, 0, "", &mut out);
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn dot_node(node: &TreeNode, id: &mut usize, out: &mut String) -> usize {
    let this = *id;
    *id += 1;
    match node {
        TreeNode::Leaf { label, probs } => {
            let _ = writeln!(
                out,
                "  n{this} [label=\"{}\\n({})\", shape=box];",
                dot_escape(label),
                dot_escape(&format_probs(probs))
            );
        }
        TreeNode::Internal {
            feature,
            split,
            left,
            right,
            ..
        } => {
            let _ = writeln!(
                out,
                "  n{this} [label=\"{}\", shape=ellipse];",
                dot_escape(&split.left_condition(feature))
            );
            let l = dot_node(left, id, out);
            let _ = writeln!(out, "  n{this} -> n{l} [label=\"yes\"];");
            let r = dot_node(right, id, out);
            let _ = writeln!(out, "  n{this} -> n{r} [label=\"no\"];");
        }
    }
    this
}

fn render_dot(tree: &DecisionTree) -> String {
    let mut out = String::from("digraph decision_tree {\n");
    let mut id = 0;
    dot_node(&tree.root, &mut id, &mut out);
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::BuildConfig;
    use crate::schema::{FeatureSpec, NumericDtype, TaskSpec};
    use crate::tree::{BuildMeta, Split};

    fn one_split_tree() -> DecisionTree {
        let task = TaskSpec::new(
            "diabetes",
            "patient",
            "diabetes",
            &["no", "yes"],
            vec![
                FeatureSpec::numeric("glucose", NumericDtype::Real, Some(0.0), Some(400.0))
                    .unwrap(),
            ],
        )
        .unwrap();
        let d =
            |ws: &[f64]| ProbabilityDistribution::from_weights(&task.target_labels, ws).unwrap();
        DecisionTree {
            root: TreeNode::Internal {
                feature: "glucose".into(),
                split: Split::Threshold { value: 140.0 },
                left: Box::new(TreeNode::Leaf {
                    label: "no".into(),
                    probs: d(&[0.7, 0.3]),
                }),
                right: Box::new(TreeNode::Leaf {
                    label: "yes".into(),
                    probs: d(&[0.2, 0.8]),
                }),
                node_probs: d(&[0.5, 0.5]),
                score: 0.4,
            },
            task,
            config: BuildConfig {
                max_depth: 1,
                ..BuildConfig::default()
            },
            meta: BuildMeta::default(),
        }
    }

    #[test]
    fn text_has_three_lines_for_one_split() {
        let text = render(&one_split_tree(), RenderStyle::Text);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "glucose <= 140");
        assert_eq!(lines[1], "  yes: no (no: 0.70, yes: 0.30)");
        assert_eq!(lines[2], "  no: yes (no: 0.20, yes: 0.80)");
    }

    #[test]
    fn dot_starts_with_digraph_and_balances() {
        let dot = render(&one_split_tree(), RenderStyle::Dot);
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches('{').count(), dot.matches('}').count());
        assert!(dot.contains("n0 -> n1 [label=\"yes\"];"));
        assert!(dot.contains("n0 -> n2 [label=\"no\"];"));
    }

    /// Minimal DOT grammar check: every statement is a node definition or
    /// an edge between defined nodes, quotes are balanced, and the graph
    /// body is well delimited.
    #[test]
    fn dot_statements_are_well_formed() {
        let dot = render(&one_split_tree(), RenderStyle::Dot);
        let mut lines = dot.lines();
        assert_eq!(lines.next(), Some("digraph decision_tree {"));
        let mut defined = std::collections::HashSet::new();
        for line in lines {
            if line == "}" {
                continue;
            }
            let line = line.trim();
            assert!(line.ends_with("];"), "statement not terminated: {line}");
            assert_eq!(
                line.matches('"').count() % 2,
                0,
                "unbalanced quotes: {line}"
            );
            let name = line.split_whitespace().next().unwrap();
            assert!(name.starts_with('n'), "bad node id in {line}");
            if line.contains("->") {
                let target =
                    line.split("->").nth(1).unwrap().split_whitespace().next().unwrap();
                assert!(defined.contains(name), "edge from undefined {name}");
                assert!(defined.contains(target), "edge to undefined {target}");
            } else {
                defined.insert(name.to_string());
            }
        }
        assert!(dot.trim_end().ends_with('}'));
    }
}
