//! Value-change-dump recording and writing.

use std::io::{self, Write};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::exec::Kernel;
use crate::signals::{NodeId, Storage, TypeDesc, Value};

/// A scalar slice of a node value that gets its own VCD identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub root: NodeId,
    pub path: Vec<usize>,
    pub ty: TypeDesc,
}

#[derive(Clone, Debug, Default)]
pub struct VcdScope {
    pub name: String,
    pub items: Vec<ScopeItem>,
}

#[derive(Clone, Debug)]
pub enum ScopeItem {
    Var { name: String, leaf: usize },
    Scope(VcdScope),
}

impl VcdScope {
    fn insert(&mut self, segments: &[String], leaf: usize) {
        match segments {
            [] => {}
            [name] => self.items.push(ScopeItem::Var {
                name: name.clone(),
                leaf,
            }),
            [head, rest @ ..] => {
                let pos = self
                    .items
                    .iter()
                    .position(|i| matches!(i, ScopeItem::Scope(s) if &s.name == head));
                let idx = match pos {
                    Some(i) => i,
                    None => {
                        self.items.push(ScopeItem::Scope(VcdScope {
                            name: head.clone(),
                            items: Vec::new(),
                        }));
                        self.items.len() - 1
                    }
                };
                if let ScopeItem::Scope(s) = &mut self.items[idx] {
                    s.insert(rest, leaf);
                }
            }
        }
    }
}

/// Per-tick record of traced values.
#[derive(Clone, Debug)]
pub struct Trace {
    pub leaves: Vec<Leaf>,
    pub scope: VcdScope,
    pub initial: Option<Vec<Value>>,
    pub changes: Vec<(u64, Vec<(usize, Value)>)>,
    last: Vec<Value>,
}

fn leaves_of(ty: &TypeDesc, prefix: Vec<String>, path: Vec<usize>, out: &mut Vec<(Vec<String>, Vec<usize>, TypeDesc)>) {
    match ty {
        TypeDesc::Record(r) => {
            for (i, (name, t)) in r.fields.iter().enumerate() {
                let mut p = prefix.clone();
                p.push(name.clone());
                let mut q = path.clone();
                q.push(i);
                leaves_of(t, p, q, out);
            }
        }
        TypeDesc::Array { elem, len } => {
            for i in 0..*len as usize {
                let mut p = prefix.clone();
                p.push(format!("e{i}"));
                let mut q = path.clone();
                q.push(i);
                leaves_of(elem, p, q, out);
            }
        }
        t => out.push((prefix, path, t.clone())),
    }
}

impl Trace {
    pub fn new(d: &Design, k: &Kernel, trace_variables: bool) -> Result<Trace> {
        let top = d.top()?;
        let mut leaves: Vec<Leaf> = Vec::new();
        let scope = Self::entity_scope(d, k, top, trace_variables, &mut leaves)?;
        let n = leaves.len();
        Ok(Trace {
            leaves,
            scope,
            initial: None,
            changes: Vec::new(),
            last: Vec::with_capacity(n),
        })
    }

    fn entity_scope(
        d: &Design,
        k: &Kernel,
        e: crate::design::EntityId,
        trace_variables: bool,
        leaves: &mut Vec<Leaf>,
    ) -> Result<VcdScope> {
        let inst = d.entity(e);
        let mut scope = VcdScope {
            name: inst.hdl_name.clone(),
            items: Vec::new(),
        };
        for (i, node) in d.nodes.iter().enumerate() {
            let meta = &d.meta[i];
            if meta.owner != e {
                continue;
            }
            let traced = meta.trace || (trace_variables && node.storage == Storage::Variable);
            if !traced {
                continue;
            }
            let name = node
                .hdl_name
                .clone()
                .ok_or_else(|| Error::Naming(format!("traced node {} has no name", d.node_path(NodeId(i as u32)))))?;
            let root = k.root_of(NodeId(i as u32));
            let mut found = Vec::new();
            leaves_of(
                &node.ty,
                name.split('.').map(str::to_string).collect(),
                Vec::new(),
                &mut found,
            );
            for (segments, path, ty) in found {
                let idx = match leaves.iter().position(|l| l.root == root && l.path == path) {
                    Some(x) => x,
                    None => {
                        leaves.push(Leaf { root, path, ty });
                        leaves.len() - 1
                    }
                };
                scope.insert(&segments, idx);
            }
        }
        for c in &inst.children {
            let child = Self::entity_scope(d, k, *c, trace_variables, leaves)?;
            scope.items.push(ScopeItem::Scope(child));
        }
        Ok(scope)
    }

    pub(crate) fn sample(&mut self, tick: u64, k: &Kernel) {
        let now: Vec<Value> = self
            .leaves
            .iter()
            .map(|l| k.read(l.root, &l.path).unwrap_or(Value::Integer(0)))
            .collect();
        if self.initial.is_none() {
            self.initial = Some(now.clone());
        } else {
            let diffs: Vec<(usize, Value)> = now
                .iter()
                .enumerate()
                .filter(|(i, v)| self.last[*i] != **v)
                .map(|(i, v)| (i, v.clone()))
                .collect();
            if !diffs.is_empty() {
                self.changes.push((tick, diffs));
            }
        }
        self.last = now;
    }

    /// Number of value changes recorded after time zero.
    pub fn change_count(&self) -> u64 {
        self.changes.iter().map(|(_, c)| c.len() as u64).sum()
    }

    pub fn write(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "$date")?;
        writeln!(w, "    hdlkit simulation")?;
        writeln!(w, "$end")?;
        writeln!(w, "$version")?;
        writeln!(w, "    hdlkit {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(w, "$end")?;
        writeln!(w, "$timescale 1ns $end")?;
        self.write_scope(w, &self.scope)?;
        writeln!(w, "$enddefinitions $end")?;
        if let Some(init) = &self.initial {
            writeln!(w, "#0")?;
            writeln!(w, "$dumpvars")?;
            for (i, v) in init.iter().enumerate() {
                writeln!(w, "{}", self.change_line(i, v))?;
            }
            writeln!(w, "$end")?;
        }
        for (t, diffs) in &self.changes {
            writeln!(w, "#{t}")?;
            for (i, v) in diffs {
                writeln!(w, "{}", self.change_line(*i, v))?;
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    fn write_scope(&self, w: &mut dyn Write, s: &VcdScope) -> io::Result<()> {
        writeln!(w, "$scope module {} $end", s.name)?;
        for item in &s.items {
            match item {
                ScopeItem::Var { name, leaf } => {
                    let (kind, width) = match &self.leaves[*leaf].ty {
                        TypeDesc::Vector(wd) => ("wire", *wd),
                        TypeDesc::Integer => ("integer", 32),
                        _ => ("wire", 1),
                    };
                    writeln!(w, "$var {kind} {width} {} {name} $end", id_code(*leaf))?;
                }
                ScopeItem::Scope(child) => self.write_scope(w, child)?,
            }
        }
        writeln!(w, "$upscope $end")
    }

    fn change_line(&self, leaf: usize, v: &Value) -> String {
        let id = id_code(leaf);
        match v {
            Value::Logic(l) => format!("{}{id}", l.vcd_char()),
            Value::Boolean(b) => format!("{}{id}", *b as u8),
            Value::Vector { bits, .. } => format!("b{bits:b} {id}"),
            Value::Integer(i) => format!("b{:b} {id}", *i as u32),
            _ => format!("bx {id}"),
        }
    }
}

/// Short printable identifier: base-94 over `!`..`~`.
pub fn id_code(mut i: usize) -> String {
    let mut s = String::new();
    loop {
        s.push((b'!' + (i % 94) as u8) as char);
        i /= 94;
        if i == 0 {
            break;
        }
        i -= 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_codes_are_unique_and_printable() {
        let ids: Vec<String> = (0..20000).map(id_code).collect();
        let set: std::collections::BTreeSet<_> = ids.iter().collect();
        assert_eq!(set.len(), ids.len());
        assert_eq!(ids[0], "!");
        assert!(ids.iter().all(|s| s.bytes().all(|b| (33..=126).contains(&b))));
    }
}
