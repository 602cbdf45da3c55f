//! Graph export formats.
//!
//! Three interchange shapes: a `source,target` edge list for spreadsheet
//! tools, GEXF 1.2 for graph viewers, and an indented ASCII tree for the
//! terminal. All three are deterministic for a given graph.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::event::NodeKey;
use crate::graph::{CausalGraph, GraphError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    EdgeListCsv,
    Gexf,
    AsciiTree,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge-list-csv" => Ok(Self::EdgeListCsv),
            "gexf" => Ok(Self::Gexf),
            "ascii-tree" => Ok(Self::AsciiTree),
            other => Err(format!(
                "unknown export format {other:?} (expected edge-list-csv, gexf or ascii-tree)"
            )),
        }
    }
}

/// Renders the graph in the requested format.
pub fn export_graph(graph: &CausalGraph, format: ExportFormat) -> Result<String, GraphError> {
    if graph.node_count() == 0 {
        return Err(GraphError::EmptyGraph);
    }
    Ok(match format {
        ExportFormat::EdgeListCsv => edge_list_csv(graph),
        ExportFormat::Gexf => gexf(graph),
        ExportFormat::AsciiTree => ascii_tree(graph),
    })
}

/// `source,target` rows, one per edge, source being the cause.
fn edge_list_csv(graph: &CausalGraph) -> String {
    let mut out = String::from("source,target\n");
    for (cause, effect) in graph.edges() {
        let _ = writeln!(out, "{},{}", csv_field(&cause.to_string()), csv_field(&effect.to_string()));
    }
    out
}

fn csv_field(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            other => out.push(other),
        }
    }
    out
}

/// GEXF 1.2, nodes carrying signal/cycle/value attributes.
fn gexf(graph: &CausalGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<gexf xmlns=\"http://www.gexf.net/1.2draft\" version=\"1.2\">\n");
    out.push_str("  <graph mode=\"static\" defaultedgetype=\"directed\">\n");
    out.push_str("    <attributes class=\"node\">\n");
    out.push_str("      <attribute id=\"0\" title=\"signal\" type=\"string\"/>\n");
    out.push_str("      <attribute id=\"1\" title=\"cycle\" type=\"long\"/>\n");
    out.push_str("      <attribute id=\"2\" title=\"value\" type=\"string\"/>\n");
    out.push_str("    </attributes>\n");
    out.push_str("    <nodes>\n");
    for key in graph.keys() {
        let id = xml_escape(&key.to_string());
        let value = xml_escape(graph.value_of(key).unwrap_or_default());
        let _ = writeln!(out, "      <node id=\"{id}\" label=\"{id}\">");
        out.push_str("        <attvalues>\n");
        let _ = writeln!(out, "          <attvalue for=\"0\" value=\"{}\"/>", xml_escape(&key.signal));
        let _ = writeln!(out, "          <attvalue for=\"1\" value=\"{}\"/>", key.cycle);
        let _ = writeln!(out, "          <attvalue for=\"2\" value=\"{value}\"/>");
        out.push_str("        </attvalues>\n");
        out.push_str("      </node>\n");
    }
    out.push_str("    </nodes>\n");
    out.push_str("    <edges>\n");
    for (idx, (cause, effect)) in graph.edges().enumerate() {
        let _ = writeln!(
            out,
            "      <edge id=\"{idx}\" source=\"{}\" target=\"{}\"/>",
            xml_escape(&cause.to_string()),
            xml_escape(&effect.to_string())
        );
    }
    out.push_str("    </edges>\n");
    out.push_str("  </graph>\n");
    out.push_str("</gexf>\n");
    out
}

/// Indented tree from the root down through its causes.
///
/// Shared nodes are expanded once; later visits render the node line with a
/// `[dup]` suffix and stop, so reconvergent graphs stay readable.
fn ascii_tree(graph: &CausalGraph) -> String {
    let mut out = String::new();
    let mut seen: std::collections::BTreeSet<NodeKey> = std::collections::BTreeSet::new();
    render_node(graph, graph.root(), "", true, true, &mut seen, &mut out);
    out
}

fn render_node(
    graph: &CausalGraph,
    key: &NodeKey,
    prefix: &str,
    is_last: bool,
    is_root: bool,
    seen: &mut std::collections::BTreeSet<NodeKey>,
    out: &mut String,
) {
    let event = graph.event_of(key).expect("rendered keys are graph nodes");
    let marker = if is_root {
        String::new()
    } else {
        format!("{prefix}{}", if is_last { "`-- " } else { "|-- " })
    };
    let first_visit = seen.insert(key.clone());
    let dup = if first_visit { "" } else { " [dup]" };
    let _ = writeln!(out, "{marker}{} (C:{}, V:{}){dup}", event.signal, event.cycle, event.value);
    if !first_visit {
        return;
    }
    let causes = graph.causes_of(key);
    let child_prefix = if is_root {
        String::new()
    } else {
        format!("{prefix}{}", if is_last { "    " } else { "|   " })
    };
    for (idx, cause) in causes.iter().enumerate() {
        let last = idx + 1 == causes.len();
        render_node(graph, cause, &child_prefix, last, false, seen, out);
    }
}
