//! Connection-diagram export: entities, ports and signals as nodes, structural
//! drivers as edges, rendered as DOT or JSON.
//!
//! Node ids are hierarchy paths. Entities use their instance path (`tb/cnt`),
//! ports append `.name` (`tb/cnt.Dout`), signals append `/name` (`tb/cnt/counter`).

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::design::{BundleId, BundleKind, Connection, Design, EntityId, NodeKind, Port};
use crate::error::Result;
use crate::signals::{NodeId, Storage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    Entity,
    Port,
    Signal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeClass,
    pub label: String,
    /// Entity type for entities, VHDL-facing type or interface name otherwise.
    #[serde(rename = "type")]
    pub type_name: String,
    /// Id of the enclosing entity; `None` for the top.
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    /// `"bundle"` for interface connections, `"scalar"` for single nodes.
    pub kind: String,
    /// Member name when a scalar edge touches one interface member.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub top: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Dot,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dot" => Ok(Format::Dot),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown graph format {other} (expected dot or json)")),
        }
    }
}

struct Builder<'d> {
    d: &'d Design,
    nodes: Vec<GraphNode>,
    seen: BTreeSet<String>,
    edges: Vec<GraphEdge>,
}

impl<'d> Builder<'d> {
    fn add(&mut self, node: GraphNode) {
        if self.seen.insert(node.id.clone()) {
            self.nodes.push(node);
        }
    }

    fn bundle_id(&mut self, b: BundleId) -> String {
        let bundle = self.d.bundle(b);
        let owner = self.d.entity_path(bundle.owner);
        match bundle.kind {
            BundleKind::Port { .. } => format!("{owner}.{}", bundle.name),
            BundleKind::HandlerMember { .. } => {
                let id = format!("{owner}/{}", bundle.name);
                let iface = self.d.classes.interface(bundle.iface).name.clone();
                self.add(GraphNode {
                    id: id.clone(),
                    kind: NodeClass::Signal,
                    label: bundle.name.clone(),
                    type_name: iface,
                    parent: Some(owner),
                });
                id
            }
        }
    }

    /// Endpoint id for a scalar node, plus the interface member it stands for.
    fn node_id(&mut self, n: NodeId) -> (String, Option<String>) {
        let meta = &self.d.meta[n.index()];
        match &meta.kind {
            NodeKind::BundleMember { bundle, member } => {
                let iface = self.d.bundle(*bundle).iface;
                let name = self.d.classes.interface(iface).members[*member].name.clone();
                (self.bundle_id(*bundle), Some(name))
            }
            NodeKind::Port => {
                let owner = self.d.entity_path(meta.owner);
                (format!("{owner}.{}", self.d.node_name(n)), None)
            }
            _ => {
                let node = self.signal_node(n);
                let id = node.id.clone();
                self.add(node);
                (id, None)
            }
        }
    }

    fn signal_node(&self, n: NodeId) -> GraphNode {
        let owner = self.d.meta[n.index()].owner;
        GraphNode {
            id: self.d.node_path(n),
            kind: NodeClass::Signal,
            label: self.d.node_name(n),
            type_name: self.d.node(n).ty.mangle(),
            parent: Some(self.d.entity_path(owner)),
        }
    }

    fn entity(&mut self, e: EntityId) {
        let d = self.d;
        let inst = d.entity(e);
        let path = d.entity_path(e);
        self.add(GraphNode {
            id: path.clone(),
            kind: NodeClass::Entity,
            label: if inst.hdl_name.is_empty() {
                inst.hint.clone()
            } else {
                inst.hdl_name.clone()
            },
            type_name: inst.type_name.clone(),
            parent: inst.parent.map(|p| d.entity_path(p)),
        });
        for port in &inst.ports {
            let type_name = match port {
                Port::Scalar { node, .. } => d.node(*node).ty.mangle(),
                Port::Interface { bundle, .. } => d.classes.interface(d.bundle(*bundle).iface).name.clone(),
            };
            self.add(GraphNode {
                id: format!("{path}.{}", port.name()),
                kind: NodeClass::Port,
                label: port.name().to_string(),
                type_name,
                parent: Some(path.clone()),
            });
        }
        for &n in &inst.locals {
            if d.node(n).storage == Storage::Variable || d.meta[n.index()].kind != NodeKind::Local {
                continue;
            }
            let node = self.signal_node(n);
            self.add(node);
        }
        for c in &inst.connections {
            let edge = match c {
                Connection::Bundle { source, sink } => GraphEdge {
                    from: self.bundle_id(*source),
                    to: self.bundle_id(*sink),
                    kind: "bundle".into(),
                    member: None,
                },
                Connection::Scalar { from, to } => {
                    let (from, m1) = self.node_id(*from);
                    let (to, m2) = self.node_id(*to);
                    GraphEdge {
                        from,
                        to,
                        kind: "scalar".into(),
                        member: m1.or(m2),
                    }
                }
            };
            self.edges.push(edge);
        }
        for &child in &inst.children {
            self.entity(child);
        }
    }
}

/// Builds the connection graph of an elaborated design.
pub fn graph(d: &Design) -> Result<Graph> {
    let top = d.top()?;
    let mut b = Builder {
        d,
        nodes: Vec::new(),
        seen: BTreeSet::new(),
        edges: Vec::new(),
    };
    b.entity(top);
    Ok(Graph {
        top: d.entity_path(top),
        nodes: b.nodes,
        edges: b.edges,
    })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl Graph {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serializes");
        s.push('\n');
        s
    }

    /// DOT text with one cluster per entity instance.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", quote(&self.top));
        out.push_str("    rankdir=LR;\n    node [shape=box, fontsize=10];\n");
        self.cluster(&mut out, &self.top, 1);
        for e in &self.edges {
            let mut attrs = Vec::new();
            if e.kind == "bundle" {
                attrs.push("penwidth=2".to_string());
            }
            if let Some(m) = &e.member {
                attrs.push(format!("label={}", quote(m)));
            }
            let attrs = if attrs.is_empty() {
                String::new()
            } else {
                format!(" [{}]", attrs.join(", "))
            };
            let _ = writeln!(out, "    {} -> {}{attrs};", quote(&e.from), quote(&e.to));
        }
        out.push_str("}\n");
        out
    }

    fn cluster(&self, out: &mut String, entity: &str, depth: usize) {
        let pad = "    ".repeat(depth);
        let Some(node) = self.nodes.iter().find(|n| n.id == entity) else {
            return;
        };
        let _ = writeln!(out, "{pad}subgraph {} {{", quote(&format!("cluster_{entity}")));
        let _ = writeln!(
            out,
            "{pad}    label={};",
            quote(&format!("{} : {}", node.label, node.type_name))
        );
        for n in self.nodes.iter().filter(|n| n.parent.as_deref() == Some(entity)) {
            match n.kind {
                NodeClass::Entity => self.cluster(out, &n.id, depth + 1),
                NodeClass::Port => {
                    let _ = writeln!(out, "{pad}    {} [label={}, shape=cds];", quote(&n.id), quote(&n.label));
                }
                NodeClass::Signal => {
                    let _ = writeln!(
                        out,
                        "{pad}    {} [label={}, shape=ellipse];",
                        quote(&n.id),
                        quote(&n.label)
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "{pad}    {} [label={}, shape=point, style=invis];",
            quote(entity),
            quote(&node.label)
        );
        let _ = writeln!(out, "{pad}}}");
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Dot => self.to_dot(),
            Format::Json => self.to_json(),
        }
    }
}
