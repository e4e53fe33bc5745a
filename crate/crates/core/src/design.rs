//! Elaborated design graph: entities, ports, processes, handlers and the
//! builder used inside architecture bodies.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::classes::{
    protocols, ClassId, ClassRef, ClassRegistry, Flow, HandlerClass, HandlerClassId, HandlerRole, MemberShape,
    ViewSource,
};
use crate::error::{Error, Result};
use crate::signals::{
    Direction, NodeId, PortBinding, PortSpec, ProcessId, SignalNode, Storage, StreamRole, TypeDesc, Value,
};
use crate::stmt::{Expr, Path, Root, Stmt};
use crate::typeck::{self, PlaceKind, TypeEnv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct HandlerId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BundleId(pub u32);

/// Which end of an interface a port bundle represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    Primary,
    Secondary,
}

impl Side {
    /// Direction of a member with the given flow, seen from inside the owner.
    pub fn direction(self, flow: Flow) -> Direction {
        match (self, flow) {
            (Side::Primary, Flow::M2S) | (Side::Secondary, Flow::S2M) => Direction::Out,
            _ => Direction::In,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Local,
    Port,
    BundleMember { bundle: BundleId, member: usize },
    HandlerVar { handler: HandlerId, member: usize },
}

#[derive(Clone, Debug)]
pub struct NodeMeta {
    pub owner: EntityId,
    pub hint: String,
    pub kind: NodeKind,
    /// Port direction from the owner's point of view.
    pub dir: Option<Direction>,
    pub trace: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BundleKind {
    Port { side: Side, stream: StreamRole },
    HandlerMember { handler: HandlerId, member: usize },
}

/// One node per interface member.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub id: BundleId,
    pub iface: ClassId,
    pub nodes: Vec<NodeId>,
    pub owner: EntityId,
    pub name: String,
    pub kind: BundleKind,
}

impl Bundle {
    pub fn side(&self) -> Option<Side> {
        match self.kind {
            BundleKind::Port { side, .. } => Some(side),
            BundleKind::HandlerMember { .. } => None,
        }
    }

    pub fn stream(&self) -> StreamRole {
        match self.kind {
            BundleKind::Port { stream, .. } => stream,
            BundleKind::HandlerMember { .. } => StreamRole::None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Port {
    Scalar {
        name: String,
        node: NodeId,
        direction: Direction,
    },
    Interface {
        name: String,
        bundle: BundleId,
    },
}

impl Port {
    pub fn name(&self) -> &str {
        match self {
            Port::Scalar { name, .. } | Port::Interface { name, .. } => name,
        }
    }
}

/// A port or signal handle usable in `connect`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortRef {
    Node(NodeId),
    Bundle(BundleId),
}

impl From<NodeId> for PortRef {
    fn from(n: NodeId) -> Self {
        PortRef::Node(n)
    }
}

impl From<BundleId> for PortRef {
    fn from(b: BundleId) -> Self {
        PortRef::Bundle(b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Connection {
    Scalar { from: NodeId, to: NodeId },
    Bundle { source: BundleId, sink: BundleId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProcKind {
    RisingEdge(NodeId),
    Combinational,
}

#[derive(Clone, Debug)]
pub enum Body {
    Tree(Vec<Stmt>),
    /// Index into the design's native closures; simulation only.
    Native(usize),
}

pub type NativeFn = Box<dyn FnMut(&mut crate::exec::ProcCtx<'_>) -> Result<()> + Send>;

/// What a native process touches; needed for scheduling and driver checks.
#[derive(Clone, Debug, Default)]
pub struct NativeDecl {
    pub reads: Vec<NodeId>,
    pub drives: Vec<NodeId>,
    pub handlers: Vec<HandlerId>,
}

#[derive(Clone, Debug)]
pub struct Process {
    pub id: ProcessId,
    pub hint: String,
    pub hdl_name: String,
    pub owner: EntityId,
    pub kind: ProcKind,
    pub body: Body,
    pub captured: BTreeSet<NodeId>,
    pub handlers: Vec<HandlerId>,
    pub self_handler: Option<HandlerId>,
    pub declared_drives: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Node(NodeId),
    Bundle(BundleId),
}

#[derive(Clone, Debug)]
pub struct HandlerInst {
    pub id: HandlerId,
    pub class: HandlerClassId,
    pub owner: EntityId,
    pub hint: String,
    pub hdl_name: String,
    pub port: BundleId,
    pub slots: Vec<Slot>,
    pub process: Option<ProcessId>,
    pub comb: Vec<ProcessId>,
}

pub struct EntityInst {
    pub id: EntityId,
    pub type_name: String,
    pub hint: String,
    pub hdl_name: String,
    pub parent: Option<EntityId>,
    pub ports: Vec<Port>,
    pub children: Vec<EntityId>,
    pub processes: Vec<ProcessId>,
    pub handlers: Vec<HandlerId>,
    pub locals: Vec<NodeId>,
    pub bundles: Vec<BundleId>,
    pub clk: Option<NodeId>,
    pub connections: Vec<Connection>,
    pub elaborated: bool,
    pub ended: bool,
    /// Set for clock generators: ticks per full period of the `clk` port.
    pub clock_period: Option<u64>,
    pending_arch: Option<Box<dyn Entity>>,
}

impl EntityInst {
    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name() == name)
    }
}

/// Entry of the session-wide, ordered object register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RegEntry {
    Node(NodeId),
    Bundle(BundleId),
    Handler(HandlerId),
    Entity(EntityId),
    Class(ClassRef),
}

/// A user-defined hardware module.
pub trait Entity: Send + 'static {
    fn type_name(&self) -> String;

    fn ports(&self, p: &mut Scope<'_>) -> Result<()>;

    fn architecture(&self, a: &mut Scope<'_>) -> Result<()>;
}

/// Resolution of a statement-tree path.
#[derive(Clone, Debug, PartialEq)]
pub enum Resolved {
    Node { node: NodeId, fields: Vec<usize> },
    Handler(HandlerId),
    Param { index: usize, fields: Vec<String> },
}

#[derive(Default)]
pub struct Design {
    pub nodes: Vec<SignalNode>,
    pub meta: Vec<NodeMeta>,
    pub entities: Vec<EntityInst>,
    pub processes: Vec<Process>,
    pub handlers: Vec<HandlerInst>,
    pub bundles: Vec<Bundle>,
    pub classes: ClassRegistry,
    pub register: Vec<RegEntry>,
    pub natives: Vec<Option<NativeFn>>,
    pub top: Option<EntityId>,
    gen_counter: u32,
}

const VHDL_RESERVED: &[&str] = &[
    "abs",
    "access",
    "after",
    "alias",
    "all",
    "and",
    "architecture",
    "array",
    "assert",
    "attribute",
    "begin",
    "block",
    "body",
    "buffer",
    "bus",
    "case",
    "component",
    "configuration",
    "constant",
    "disconnect",
    "downto",
    "else",
    "elsif",
    "end",
    "entity",
    "exit",
    "file",
    "for",
    "function",
    "generate",
    "generic",
    "group",
    "guarded",
    "if",
    "impure",
    "in",
    "inertial",
    "inout",
    "is",
    "label",
    "library",
    "linkage",
    "literal",
    "loop",
    "map",
    "mod",
    "nand",
    "new",
    "next",
    "nor",
    "not",
    "null",
    "of",
    "on",
    "open",
    "or",
    "others",
    "out",
    "package",
    "port",
    "postponed",
    "procedure",
    "process",
    "pure",
    "range",
    "record",
    "register",
    "reject",
    "rem",
    "report",
    "return",
    "rol",
    "ror",
    "select",
    "severity",
    "signal",
    "shared",
    "sla",
    "sll",
    "sra",
    "srl",
    "subtype",
    "then",
    "to",
    "transport",
    "type",
    "unaffected",
    "units",
    "until",
    "use",
    "variable",
    "wait",
    "when",
    "while",
    "with",
    "xnor",
    "xor",
];

/// Turns an arbitrary hint into a legal VHDL basic identifier.
pub fn legal_identifier(hint: &str) -> String {
    let mut s = String::new();
    for c in hint.chars() {
        let c = if c.is_ascii_alphanumeric() { c } else { '_' };
        if c == '_' && (s.is_empty() || s.ends_with('_')) {
            continue;
        }
        s.push(c);
    }
    while s.ends_with('_') {
        s.pop();
    }
    if s.is_empty() {
        s.push_str("gen");
    }
    if s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert_str(0, "n_");
    }
    if VHDL_RESERVED.contains(&s.to_ascii_lowercase().as_str()) {
        s.push_str("_r");
    }
    s
}

impl Design {
    /// Elaborates `top` as the root of a fresh design.
    pub fn elaborate(top: impl Entity) -> Result<Design> {
        let mut d = Design::default();
        let name = legal_identifier(&top.type_name());
        let id = d.new_entity(&name, None, Box::new(top))?;
        d.top = Some(id);
        d.run_architecture(id)?;
        Ok(d)
    }

    /// Like [`Design::elaborate`] but only declares the top's ports; the
    /// architecture runs on [`Design::elaborate_entity`].
    pub fn declare(top: impl Entity) -> Result<Design> {
        let mut d = Design::default();
        let name = legal_identifier(&top.type_name());
        let id = d.new_entity(&name, None, Box::new(top))?;
        d.top = Some(id);
        Ok(d)
    }

    pub fn top(&self) -> Result<EntityId> {
        self.top
            .ok_or_else(|| Error::Elaboration("design has no top entity".into()))
    }

    fn new_entity(&mut self, hint: &str, parent: Option<EntityId>, ent: Box<dyn Entity>) -> Result<EntityId> {
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(EntityInst {
            id,
            type_name: legal_identifier(&ent.type_name()),
            hint: hint.to_string(),
            hdl_name: if parent.is_none() {
                hint.to_string()
            } else {
                String::new()
            },
            parent,
            ports: Vec::new(),
            children: Vec::new(),
            processes: Vec::new(),
            handlers: Vec::new(),
            locals: Vec::new(),
            bundles: Vec::new(),
            clk: None,
            connections: Vec::new(),
            elaborated: false,
            ended: false,
            clock_period: None,
            pending_arch: None,
        });
        if let Some(p) = parent {
            self.entities[p.0 as usize].children.push(id);
        }
        let mut scope = Scope { d: self, e: id };
        ent.ports(&mut scope)
            .map_err(|err| err.in_context(&self.entity_path(id)))?;
        self.entities[id.0 as usize].pending_arch = Some(ent);
        Ok(id)
    }

    fn run_architecture(&mut self, id: EntityId) -> Result<()> {
        let ent = self.entities[id.0 as usize]
            .pending_arch
            .take()
            .ok_or_else(|| Error::Elaboration(format!("{}: architecture already executed", self.entity_path(id))))?;
        let mut scope = Scope { d: self, e: id };
        let r = ent.architecture(&mut scope);
        r.map_err(|err| err.in_context(&self.entity_path(id)))?;
        self.entities[id.0 as usize].elaborated = true;
        Ok(())
    }

    /// Runs a lazily instantiated entity's architecture.
    pub fn elaborate_entity(&mut self, id: EntityId) -> Result<()> {
        self.run_architecture(id)
    }

    pub fn entity(&self, id: EntityId) -> &EntityInst {
        &self.entities[id.0 as usize]
    }

    pub fn node(&self, id: NodeId) -> &SignalNode {
        &self.nodes[id.index()]
    }

    pub fn bundle(&self, id: BundleId) -> &Bundle {
        &self.bundles[id.0 as usize]
    }

    pub fn handler(&self, id: HandlerId) -> &HandlerInst {
        &self.handlers[id.0 as usize]
    }

    pub fn handler_class(&self, id: HandlerId) -> &HandlerClass {
        self.classes.handler(self.handler(id).class)
    }

    pub fn process(&self, id: ProcessId) -> &Process {
        &self.processes[id.index()]
    }

    pub fn entity_path(&self, id: EntityId) -> String {
        let e = self.entity(id);
        let name = if e.hdl_name.is_empty() { &e.hint } else { &e.hdl_name };
        match e.parent {
            Some(p) => format!("{}/{}", self.entity_path(p), name),
            None => name.clone(),
        }
    }

    /// Hierarchical path such as `tb/cnt/counter` or `tb/cnt/Dout.valid`.
    pub fn node_path(&self, id: NodeId) -> String {
        let m = &self.meta[id.index()];
        format!("{}/{}", self.entity_path(m.owner), self.node_name(id))
    }

    /// Name of a node inside its owning entity.
    pub fn node_name(&self, id: NodeId) -> String {
        let n = &self.nodes[id.index()];
        n.hdl_name.clone().unwrap_or_else(|| self.meta[id.index()].hint.clone())
    }

    pub fn process_path(&self, id: ProcessId) -> String {
        let p = self.process(id);
        let name = if p.hdl_name.is_empty() { &p.hint } else { &p.hdl_name };
        format!("{}/{}", self.entity_path(p.owner), name)
    }

    pub fn find_entity(&self, path: &str) -> Option<EntityId> {
        (0..self.entities.len() as u32)
            .map(EntityId)
            .find(|e| self.entity_path(*e) == path)
    }

    pub fn find_node(&self, path: &str) -> Option<NodeId> {
        (0..self.nodes.len() as u32)
            .map(NodeId)
            .find(|n| self.node_path(*n) == path)
    }

    pub fn port(&self, e: EntityId, name: &str) -> Result<PortRef> {
        match self.entity(e).port(name) {
            Some(Port::Scalar { node, .. }) => Ok(PortRef::Node(*node)),
            Some(Port::Interface { bundle, .. }) => Ok(PortRef::Bundle(*bundle)),
            None => Err(Error::Elaboration(format!(
                "{} has no port {name}",
                self.entity_path(e)
            ))),
        }
    }

    pub fn port_node(&self, e: EntityId, name: &str) -> Result<NodeId> {
        match self.port(e, name)? {
            PortRef::Node(n) => Ok(n),
            PortRef::Bundle(_) => Err(Error::Elaboration(format!("port {name} is an interface"))),
        }
    }

    pub fn port_bundle(&self, e: EntityId, name: &str) -> Result<BundleId> {
        match self.port(e, name)? {
            PortRef::Bundle(b) => Ok(b),
            PortRef::Node(_) => Err(Error::Elaboration(format!("port {name} is not an interface"))),
        }
    }

    /// Node of one member of an interface bundle.
    pub fn bundle_member(&self, b: BundleId, member: &str) -> Result<NodeId> {
        let bundle = self.bundle(b);
        let ic = self.classes.interface(bundle.iface);
        let i = ic
            .members
            .iter()
            .position(|m| m.name == member)
            .ok_or_else(|| Error::Elaboration(format!("{} has no member {member}", ic.name)))?;
        Ok(bundle.nodes[i])
    }

    fn push_node(&mut self, mut node: SignalNode, meta: NodeMeta) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        node.id = id;
        self.nodes.push(node);
        self.meta.push(meta);
        self.register.push(RegEntry::Node(id));
        id
    }

    fn drain_classes(&mut self) {
        for c in std::mem::take(&mut self.classes.created) {
            self.register.push(RegEntry::Class(c));
        }
    }

    /// Verifies every reachable entity finished elaboration; required before
    /// simulation or conversion.
    pub fn check_ready(&self) -> Result<()> {
        let top = self.top()?;
        let mut stack = vec![top];
        while let Some(e) = stack.pop() {
            let inst = self.entity(e);
            if !inst.elaborated || !inst.ended {
                return Err(Error::Elaboration(format!(
                    "{} is not elaborated (missing end_architecture)",
                    self.entity_path(e)
                )));
            }
            stack.extend(inst.children.iter().copied());
        }
        Ok(())
    }

    /// Resolves a path in the context of an optional handler (`self`).
    pub fn resolve(&self, path: &Path, this: Option<HandlerId>) -> Result<Resolved> {
        let (node, rest): (NodeId, &[String]) = match &path.root {
            Root::Node(n) => (*n, &path.members[..]),
            Root::Handler(h) if path.members.is_empty() => return Ok(Resolved::Handler(*h)),
            Root::Handler(h) => self.handler_member(*h, &path.members)?,
            Root::SelfObj => {
                let h = this.ok_or_else(|| Error::Grammar("self outside a handler".into()))?;
                self.handler_member(h, &path.members)?
            }
            Root::Param(i) => {
                return Ok(Resolved::Param {
                    index: *i,
                    fields: path.members.clone(),
                })
            }
        };
        let fields = self.nodes[node.index()].ty.resolve_path(rest)?;
        Ok(Resolved::Node { node, fields })
    }

    fn handler_member<'a>(&self, h: HandlerId, members: &'a [String]) -> Result<(NodeId, &'a [String])> {
        let hc = self.handler_class(h);
        let first = members
            .first()
            .ok_or_else(|| Error::Grammar("empty handler path".into()))?;
        let i = hc
            .members
            .iter()
            .position(|m| &m.name == first)
            .ok_or_else(|| Error::Grammar(format!("{} has no member {first}", hc.name)))?;
        match self.handler(h).slots[i] {
            Slot::Node(n) => Ok((n, &members[1..])),
            Slot::Bundle(b) => {
                let m = members
                    .get(1)
                    .ok_or_else(|| Error::Grammar(format!("bundle {first} used as a whole")))?;
                Ok((self.bundle_member(b, m)?, &members[2..]))
            }
        }
    }

    /// Signal nodes a process writes (including handler copy-out targets).
    pub fn process_drives(&self, pid: ProcessId) -> Result<BTreeSet<NodeId>> {
        let p = self.process(pid);
        let mut out = BTreeSet::new();
        match &p.body {
            Body::Native(_) => out.extend(p.declared_drives.iter().copied()),
            Body::Tree(stmts) => {
                let mut err = None;
                for s in stmts {
                    s.walk(&mut |s| {
                        let target = match s {
                            Stmt::Drive(t, _) => Some(t),
                            Stmt::Call { object, member, .. } if member == "reset" => Some(object),
                            _ => None,
                        };
                        if let Some(t) = target {
                            match self.resolve(t, p.self_handler) {
                                Ok(Resolved::Node { node, .. }) => {
                                    out.insert(node);
                                }
                                Ok(_) => {}
                                Err(e) => err = Some(e),
                            }
                        }
                    });
                }
                if let Some(e) = err {
                    return Err(e);
                }
            }
        }
        for h in &p.handlers {
            out.extend(self.view_outgoing(*h).into_iter().map(|(_, n)| n));
        }
        Ok(out
            .into_iter()
            .filter(|n| self.node(*n).storage == Storage::Signal)
            .collect())
    }

    /// The bundle a handler's variable view copies from/to.
    pub fn view_bundle(&self, h: HandlerId) -> Option<(usize, BundleId)> {
        let hc = self.handler_class(h);
        let (i, m) = hc.members.iter().enumerate().find(|(_, m)| m.view.is_some())?;
        let b = match m.view.as_ref()? {
            ViewSource::Port => self.handler(h).port,
            ViewSource::Member(name) => {
                let j = hc.members.iter().position(|x| &x.name == name)?;
                match self.handler(h).slots[j] {
                    Slot::Bundle(b) => b,
                    Slot::Node(_) => return None,
                }
            }
        };
        Some((i, b))
    }

    /// Flow of members the handler receives through its view.
    pub fn incoming_flow(&self, h: HandlerId) -> Flow {
        match self.handler_class(h).role {
            HandlerRole::Primary => Flow::S2M,
            _ => Flow::M2S,
        }
    }

    /// (member index, bundle node) pairs copied into the view at pull.
    pub fn view_incoming(&self, h: HandlerId) -> Vec<(usize, NodeId)> {
        self.view_members(h, self.incoming_flow(h))
    }

    /// (member index, bundle node) pairs copied out of the view at push.
    pub fn view_outgoing(&self, h: HandlerId) -> Vec<(usize, NodeId)> {
        let flow = match self.incoming_flow(h) {
            Flow::M2S => Flow::S2M,
            Flow::S2M => Flow::M2S,
        };
        self.view_members(h, flow)
    }

    fn view_members(&self, h: HandlerId, flow: Flow) -> Vec<(usize, NodeId)> {
        let Some((_, b)) = self.view_bundle(h) else {
            return Vec::new();
        };
        let bundle = self.bundle(b);
        let ic = self.classes.interface(bundle.iface);
        ic.members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.flow == flow)
            .map(|(i, _)| (i, bundle.nodes[i]))
            .collect()
    }

    /// The view variable node of a handler.
    pub fn view_node(&self, h: HandlerId) -> Option<NodeId> {
        let (i, _) = self.view_bundle(h)?;
        match self.handler(h).slots[i] {
            Slot::Node(n) => Some(n),
            Slot::Bundle(_) => None,
        }
    }

    /// Follows structural drivers to the node that actually holds the value.
    pub fn alias_root(&self, mut n: NodeId) -> NodeId {
        while let Some(d) = self.nodes[n.index()].structural_driver {
            n = d;
        }
        n
    }

    fn env(&self, this: Option<HandlerId>) -> ProcessEnv<'_> {
        ProcessEnv { d: self, this }
    }
}

/// Type environment of a process body.
pub struct ProcessEnv<'a> {
    d: &'a Design,
    this: Option<HandlerId>,
}

impl TypeEnv for ProcessEnv<'_> {
    fn root(&self, root: &Root, members: &[String]) -> Result<(PlaceKind, usize)> {
        match root {
            Root::Node(n) => {
                let node = self
                    .d
                    .nodes
                    .get(n.index())
                    .ok_or_else(|| Error::Grammar(format!("unknown node {n:?}")))?;
                Ok((PlaceKind::Data(node.ty.clone(), node.storage), 0))
            }
            Root::Handler(h) => {
                if !members.is_empty() {
                    return Err(Error::Grammar("handler members are private".into()));
                }
                let inst = self
                    .d
                    .handlers
                    .get(h.0 as usize)
                    .ok_or_else(|| Error::Grammar(format!("unknown handler {h:?}")))?;
                Ok((PlaceKind::Handler(inst.class), 0))
            }
            Root::SelfObj => {
                let h = self
                    .this
                    .ok_or_else(|| Error::Grammar("self outside a handler".into()))?;
                let hc = self.d.handler_class(h);
                let first = members.first().ok_or_else(|| Error::Grammar("bare self".into()))?;
                let m = hc
                    .member(first)
                    .ok_or_else(|| Error::Grammar(format!("{} has no member {first}", hc.name)))?;
                let ic = self.d.classes.interface(hc.interface);
                Ok((PlaceKind::Data(m.ty(ic), m.storage), 1))
            }
            Root::Param(_) => Err(Error::Grammar("parameters only exist in member functions".into())),
        }
    }

    fn handler_class(&self, h: HandlerId) -> Result<&HandlerClass> {
        Ok(self.d.handler_class(h))
    }

    fn registry(&self) -> &ClassRegistry {
        &self.d.classes
    }
}

/// Upstream/downstream ends of a (partial) pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Entity(EntityId),
    Bundle(BundleId),
    Chain { head: StageEnd, tail: StageEnd },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageEnd {
    Entity(EntityId),
    Bundle(BundleId),
}

impl Stage {
    fn head(self) -> StageEnd {
        match self {
            Stage::Entity(e) => StageEnd::Entity(e),
            Stage::Bundle(b) => StageEnd::Bundle(b),
            Stage::Chain { head, .. } => head,
        }
    }

    fn tail(self) -> StageEnd {
        match self {
            Stage::Entity(e) => StageEnd::Entity(e),
            Stage::Bundle(b) => StageEnd::Bundle(b),
            Stage::Chain { tail, .. } => tail,
        }
    }
}

impl From<EntityId> for Stage {
    fn from(e: EntityId) -> Self {
        Stage::Entity(e)
    }
}

impl From<BundleId> for Stage {
    fn from(b: BundleId) -> Self {
        Stage::Bundle(b)
    }
}

/// Builder handed to `Entity::ports` and `Entity::architecture`.
pub struct Scope<'d> {
    pub d: &'d mut Design,
    pub e: EntityId,
}

impl Scope<'_> {
    pub fn design(&self) -> &Design {
        self.d
    }

    pub fn classes(&mut self) -> &mut ClassRegistry {
        &mut self.d.classes
    }

    fn inst(&mut self) -> &mut EntityInst {
        &mut self.d.entities[self.e.0 as usize]
    }

    fn check_open(&self) -> Result<()> {
        if self.d.entity(self.e).ended {
            return Err(Error::Elaboration("architecture already ended".into()));
        }
        Ok(())
    }

    fn add_port(&mut self, name: &str, ty: TypeDesc, init: Option<Value>, direction: Direction) -> Result<NodeId> {
        self.check_open()?;
        if self.d.entity(self.e).port(name).is_some() {
            return Err(Error::Naming(format!("duplicate port {name}")));
        }
        let mut node = match init {
            Some(v) => SignalNode::new(Storage::Signal, ty.clone(), v)?,
            None => SignalNode::of_type(Storage::Signal, ty.clone()),
        };
        self.d.classes.register_record_types(&ty)?;
        self.d.drain_classes();
        node.port_spec = Some(PortSpec {
            direction,
            binding: PortBinding::SignalPort,
            stream_role: StreamRole::None,
        });
        node.hdl_name = Some(legal_identifier(name));
        let id = self.d.push_node(
            node,
            NodeMeta {
                owner: self.e,
                hint: name.into(),
                kind: NodeKind::Port,
                dir: Some(direction),
                trace: true,
            },
        );
        self.inst().ports.push(Port::Scalar {
            name: legal_identifier(name),
            node: id,
            direction,
        });
        Ok(id)
    }

    pub fn port_in(&mut self, name: &str, ty: TypeDesc) -> Result<NodeId> {
        self.add_port(name, ty, None, Direction::In)
    }

    pub fn port_out(&mut self, name: &str, ty: TypeDesc, init: Option<Value>) -> Result<NodeId> {
        self.add_port(name, ty, init, Direction::Out)
    }

    /// The `clk` input of a clocked entity.
    pub fn clock_in(&mut self) -> Result<NodeId> {
        let n = self.port_in("clk", TypeDesc::Logic)?;
        self.inst().clk = Some(n);
        Ok(n)
    }

    pub fn clk(&self) -> Result<NodeId> {
        self.d
            .entity(self.e)
            .clk
            .ok_or_else(|| Error::Elaboration("entity has no clock input".into()))
    }

    fn new_bundle(&mut self, name: &str, iface: ClassId, kind: BundleKind, storage: Storage) -> Result<BundleId> {
        let id = BundleId(self.d.bundles.len() as u32);
        let ic = self.d.classes.interface(iface).clone();
        let side = match &kind {
            BundleKind::Port { side, .. } => Some(*side),
            BundleKind::HandlerMember { .. } => None,
        };
        let mut nodes = Vec::new();
        for (i, m) in ic.members.iter().enumerate() {
            let mut node = SignalNode::new(storage, m.ty.clone(), m.init.clone())?;
            let dir = side.map(|s| s.direction(m.flow));
            if let Some(direction) = dir {
                node.port_spec = Some(PortSpec {
                    direction,
                    binding: PortBinding::SignalPort,
                    stream_role: match &kind {
                        BundleKind::Port { stream, .. } => *stream,
                        _ => StreamRole::None,
                    },
                });
            } else {
                node.port_spec = Some(PortSpec {
                    direction: Direction::Out,
                    binding: PortBinding::FreeType,
                    stream_role: StreamRole::None,
                });
            }
            nodes.push(self.d.push_node(
                node,
                NodeMeta {
                    owner: self.e,
                    hint: format!("{name}.{}", m.name),
                    kind: NodeKind::BundleMember { bundle: id, member: i },
                    dir,
                    trace: true,
                },
            ));
        }
        self.d.bundles.push(Bundle {
            id,
            iface,
            nodes,
            owner: self.e,
            name: name.into(),
            kind,
        });
        self.d.register.push(RegEntry::Bundle(id));
        Ok(id)
    }

    fn add_interface_port(&mut self, name: &str, iface: ClassId, side: Side, stream: StreamRole) -> Result<BundleId> {
        self.check_open()?;
        let name = legal_identifier(name);
        if self.d.entity(self.e).port(&name).is_some() {
            return Err(Error::Naming(format!("duplicate port {name}")));
        }
        if stream != StreamRole::None {
            let taken = self.d.entity(self.e).ports.iter().any(|p| match p {
                Port::Interface { bundle, .. } => self.d.bundle(*bundle).stream() == stream,
                _ => false,
            });
            if taken {
                return Err(Error::PipelineShape(format!(
                    "entity already has a {} port",
                    if stream == StreamRole::PipelineIn {
                        "pipeline_in"
                    } else {
                        "pipeline_out"
                    }
                )));
            }
        }
        let b = self.new_bundle(&name, iface, BundleKind::Port { side, stream }, Storage::Signal)?;
        for (i, n) in self.d.bundle(b).nodes.clone().into_iter().enumerate() {
            let m = &self.d.classes.interface(iface).members[i].name;
            self.d.nodes[n.index()].hdl_name = Some(format!("{name}.{m}"));
        }
        self.inst().ports.push(Port::Interface { name, bundle: b });
        Ok(b)
    }

    /// Interface port on the sending (primary) side.
    pub fn port_primary(&mut self, name: &str, iface: ClassId) -> Result<BundleId> {
        self.add_interface_port(name, iface, Side::Primary, StreamRole::None)
    }

    /// Interface port on the receiving (secondary) side.
    pub fn port_secondary(&mut self, name: &str, iface: ClassId) -> Result<BundleId> {
        self.add_interface_port(name, iface, Side::Secondary, StreamRole::None)
    }

    pub fn pipeline_in(&mut self, name: &str, iface: ClassId) -> Result<BundleId> {
        self.add_interface_port(name, iface, Side::Secondary, StreamRole::PipelineIn)
    }

    pub fn pipeline_out(&mut self, name: &str, iface: ClassId) -> Result<BundleId> {
        self.add_interface_port(name, iface, Side::Primary, StreamRole::PipelineOut)
    }

    fn local(&mut self, hint: &str, node: SignalNode) -> Result<NodeId> {
        self.check_open()?;
        self.d.classes.register_record_types(&node.ty)?;
        self.d.drain_classes();
        let id = self.d.push_node(
            node,
            NodeMeta {
                owner: self.e,
                hint: hint.into(),
                kind: NodeKind::Local,
                dir: None,
                trace: true,
            },
        );
        self.inst().locals.push(id);
        Ok(id)
    }

    /// A local signal initialized to `init` (or the type default).
    pub fn signal(&mut self, hint: &str, ty: TypeDesc, init: Option<Value>) -> Result<NodeId> {
        let node = match init {
            Some(v) => SignalNode::new(Storage::Signal, ty, v)?,
            None => SignalNode::of_type(Storage::Signal, ty),
        };
        self.local(hint, node)
    }

    /// `v_slv(width, init)` as a signal.
    pub fn vector(&mut self, hint: &str, width: u32, init: u128) -> Result<NodeId> {
        let node = crate::signals::make_vector(width, init, Storage::Signal)?;
        self.local(hint, node)
    }

    pub fn constant(&mut self, hint: &str, ty: TypeDesc, value: Value) -> Result<NodeId> {
        let node = SignalNode::new(Storage::Constant, ty, value)?;
        self.local(hint, node)
    }

    /// A process-local variable. Variables are not traced unless asked.
    pub fn variable(&mut self, hint: &str, ty: TypeDesc, init: Option<Value>) -> Result<NodeId> {
        let node = match init {
            Some(v) => SignalNode::new(Storage::Variable, ty, v)?,
            None => SignalNode::new(Storage::Variable, ty.clone(), Value::zero_for(&ty))?,
        };
        let id = self.local(hint, node)?;
        self.d.meta[id.index()].trace = false;
        Ok(id)
    }

    pub fn trace(&mut self, node: NodeId) {
        self.d.meta[node.index()].trace = true;
    }

    /// Instantiates a child and runs its architecture immediately.
    pub fn instantiate(&mut self, hint: &str, ent: impl Entity) -> Result<EntityId> {
        let c = self.instantiate_lazy(hint, ent)?;
        self.d.run_architecture(c)?;
        Ok(c)
    }

    /// Instantiates a child, deferring its architecture to [`Scope::elaborate`].
    pub fn instantiate_lazy(&mut self, hint: &str, ent: impl Entity) -> Result<EntityId> {
        self.check_open()?;
        self.d.new_entity(hint, Some(self.e), Box::new(ent))
    }

    pub fn elaborate(&mut self, child: EntityId) -> Result<()> {
        self.d.run_architecture(child)
    }

    /// Instantiates a clocked child and wires its `clk` input to `clk`.
    pub fn instantiate_clocked(&mut self, hint: &str, ent: impl Entity, clk: NodeId) -> Result<EntityId> {
        let c = self.instantiate(hint, ent)?;
        let child_clk = self
            .d
            .entity(c)
            .clk
            .ok_or_else(|| Error::Elaboration(format!("{hint} has no clock input")))?;
        self.connect(clk, child_clk)?;
        Ok(c)
    }

    /// One of this entity's own interface ports.
    pub fn own_bundle(&self, name: &str) -> Result<BundleId> {
        self.d.port_bundle(self.e, name)
    }

    /// One of this entity's own scalar ports.
    pub fn own_node(&self, name: &str) -> Result<NodeId> {
        self.d.port_node(self.e, name)
    }

    pub fn port(&self, child: EntityId, name: &str) -> Result<PortRef> {
        self.d.port(child, name)
    }

    pub fn port_node(&self, child: EntityId, name: &str) -> Result<NodeId> {
        self.d.port_node(child, name)
    }

    pub fn port_bundle(&self, child: EntityId, name: &str) -> Result<BundleId> {
        self.d.port_bundle(child, name)
    }

    pub fn member(&self, b: BundleId, name: &str) -> Result<NodeId> {
        self.d.bundle_member(b, name)
    }

    /// Whether data leaves `b` towards this scope's other objects (an own
    /// secondary port or a child's primary port).
    fn is_m2s_source(&self, b: BundleId) -> Result<bool> {
        let bundle = self.d.bundle(b);
        let side = bundle
            .side()
            .ok_or_else(|| Error::Connection(format!("{} is not a port", bundle.name)))?;
        if bundle.owner == self.e {
            Ok(side == Side::Secondary)
        } else if self.d.entity(bundle.owner).parent == Some(self.e) {
            Ok(side == Side::Primary)
        } else {
            Err(Error::Connection(format!(
                "{} is not visible from {}",
                self.d
                    .node_path(bundle.nodes[0])
                    .rsplit_once('.')
                    .map(|x| x.0)
                    .unwrap_or(""),
                self.d.entity_path(self.e)
            )))
        }
    }

    /// Whether a scalar node is a value source in this scope.
    fn is_scalar_source(&self, n: NodeId) -> Result<bool> {
        let m = &self.d.meta[n.index()];
        if m.owner == self.e {
            return Ok(match m.dir {
                Some(Direction::In) => true,
                Some(Direction::Out) => false,
                None => true,
            });
        }
        if self.d.entity(m.owner).parent == Some(self.e) && m.kind == NodeKind::Port {
            return Ok(m.dir == Some(Direction::Out));
        }
        Err(Error::Connection(format!(
            "{} is not visible from {}",
            self.d.node_path(n),
            self.d.entity_path(self.e)
        )))
    }

    /// Structural connection; the data direction is resolved from the ports.
    pub fn connect(&mut self, a: impl Into<PortRef>, b: impl Into<PortRef>) -> Result<()> {
        self.check_open()?;
        match (a.into(), b.into()) {
            (PortRef::Node(x), PortRef::Node(y)) => self.connect_nodes(x, y),
            (PortRef::Bundle(x), PortRef::Bundle(y)) => self.connect_bundles(x, y),
            _ => Err(Error::Type("cannot connect an interface to a scalar".into())),
        }
    }

    fn connect_nodes(&mut self, a: NodeId, b: NodeId) -> Result<()> {
        if a == b {
            return Err(Error::Connection(format!(
                "{} connected to itself",
                self.d.node_path(a)
            )));
        }
        let (ta, tb) = (&self.d.node(a).ty, &self.d.node(b).ty);
        if ta != tb {
            return Err(Error::Type(format!("cannot connect {ta} to {tb}")));
        }
        let (sa, sb) = (self.is_scalar_source(a)?, self.is_scalar_source(b)?);
        let (from, to) = match (sa, sb) {
            (true, false) => (a, b),
            (false, true) => (b, a),
            _ => {
                return Err(Error::Connection(format!(
                    "direction conflict between {} and {}",
                    self.d.node_path(a),
                    self.d.node_path(b)
                )))
            }
        };
        self.set_driver(from, to)?;
        self.inst().connections.push(Connection::Scalar { from, to });
        Ok(())
    }

    fn set_driver(&mut self, from: NodeId, to: NodeId) -> Result<()> {
        if let Some(prev) = self.d.node(to).structural_driver {
            return Err(Error::SingleDriver(format!(
                "{} is already driven by {}",
                self.d.node_path(to),
                self.d.node_path(prev)
            )));
        }
        if self.d.node(to).storage != Storage::Signal || self.d.node(from).storage == Storage::Variable {
            return Err(Error::Storage(format!(
                "structural connection {} -> {} requires signals",
                self.d.node_path(from),
                self.d.node_path(to)
            )));
        }
        if self.d.alias_root(from) == to {
            return Err(Error::Connection(format!(
                "connection loop at {}",
                self.d.node_path(to)
            )));
        }
        self.d.nodes[to.index()].structural_driver = Some(from);
        Ok(())
    }

    fn connect_bundles(&mut self, a: BundleId, b: BundleId) -> Result<()> {
        if a == b {
            return Err(Error::Connection(format!(
                "{} connected to itself",
                self.d.bundle(a).name
            )));
        }
        let (ia, ib) = (self.d.bundle(a).iface, self.d.bundle(b).iface);
        if ia != ib {
            return Err(Error::Type(format!(
                "cannot connect {} to {}",
                self.d.classes.interface(ia).name,
                self.d.classes.interface(ib).name
            )));
        }
        let (sa, sb) = (self.is_m2s_source(a)?, self.is_m2s_source(b)?);
        let (source, sink) = match (sa, sb) {
            (true, false) => (a, b),
            (false, true) => (b, a),
            _ => {
                return Err(Error::Connection(format!(
                    "direction conflict between {} and {}",
                    self.d.bundle(a).name,
                    self.d.bundle(b).name
                )))
            }
        };
        let members = self.d.classes.interface(ia).members.clone();
        let (src_nodes, sink_nodes) = (self.d.bundle(source).nodes.clone(), self.d.bundle(sink).nodes.clone());
        for (i, m) in members.iter().enumerate() {
            match m.flow {
                Flow::M2S => self.set_driver(src_nodes[i], sink_nodes[i])?,
                Flow::S2M => self.set_driver(sink_nodes[i], src_nodes[i])?,
            }
        }
        self.inst().connections.push(Connection::Bundle { source, sink });
        Ok(())
    }

    fn stream_port(&self, end: StageEnd, role: StreamRole) -> Result<BundleId> {
        match end {
            StageEnd::Bundle(b) => Ok(b),
            StageEnd::Entity(e) => {
                let found: Vec<BundleId> = self
                    .d
                    .entity(e)
                    .ports
                    .iter()
                    .filter_map(|p| match p {
                        Port::Interface { bundle, .. } if self.d.bundle(*bundle).stream() == role => Some(*bundle),
                        _ => None,
                    })
                    .collect();
                match found.as_slice() {
                    [b] => Ok(*b),
                    [] => Err(Error::PipelineShape(format!(
                        "{} has no {} port",
                        self.d.entity_path(e),
                        if role == StreamRole::PipelineIn {
                            "pipeline_in"
                        } else {
                            "pipeline_out"
                        }
                    ))),
                    _ => Err(Error::PipelineShape(format!(
                        "{} has several stream ports",
                        self.d.entity_path(e)
                    ))),
                }
            }
        }
    }

    /// `upstream | downstream`: connects the stream output of `upstream` to
    /// the stream input of `downstream` and returns the combined stage.
    pub fn pipe(&mut self, upstream: impl Into<Stage>, downstream: impl Into<Stage>) -> Result<Stage> {
        let (u, w) = (upstream.into(), downstream.into());
        let out = self.stream_port(u.tail(), StreamRole::PipelineOut)?;
        let inp = self.stream_port(w.head(), StreamRole::PipelineIn)?;
        self.connect_bundles(out, inp)?;
        Ok(Stage::Chain {
            head: u.head(),
            tail: w.tail(),
        })
    }

    /// Handler object for an interface bundle. A bundle that delivers data
    /// into this scope gets the secondary handler, otherwise the primary.
    pub fn get_handle(&mut self, hint: &str, b: BundleId) -> Result<HandlerId> {
        self.check_open()?;
        let receives = self.is_m2s_source(b)?;
        let iface = self.d.bundle(b).iface;
        let ic = self.d.classes.interface(iface).clone();
        let template = if receives {
            &ic.secondary_handler
        } else {
            &ic.primary_handler
        };
        let template = template.clone().ok_or_else(|| {
            Error::Template(format!(
                "{} has no {} handler",
                ic.name,
                if receives { "secondary" } else { "primary" }
            ))
        })?;
        let class = self.d.classes.monomorphize_handler(&template, iface)?;
        self.d.drain_classes();
        let hc = self.d.classes.handler(class).clone();
        let id = HandlerId(self.d.handlers.len() as u32);
        self.d.handlers.push(HandlerInst {
            id,
            class,
            owner: self.e,
            hint: hint.into(),
            hdl_name: String::new(),
            port: b,
            slots: Vec::new(),
            process: None,
            comb: Vec::new(),
        });
        let mut slots = Vec::new();
        for (i, m) in hc.members.iter().enumerate() {
            let slot = match (&m.shape, m.follows_port) {
                (MemberShape::Interface, true) => Slot::Bundle(b),
                (MemberShape::Interface, false) if m.storage == Storage::Signal => Slot::Bundle(self.new_bundle(
                    &format!("{hint}_{}", m.name),
                    iface,
                    BundleKind::HandlerMember { handler: id, member: i },
                    Storage::Signal,
                )?),
                _ => {
                    let ty = m.ty(&ic);
                    let init = match (&m.shape, &m.init) {
                        (MemberShape::Interface, _) => ic.full_init(),
                        (_, Some(v)) => v.clone(),
                        (_, None) => Value::zero_for(&ty),
                    };
                    let mut node = SignalNode::new(m.storage, ty, init)?;
                    node.port_spec = Some(PortSpec {
                        direction: Direction::Out,
                        binding: m.binding,
                        stream_role: StreamRole::None,
                    });
                    Slot::Node(self.d.push_node(
                        node,
                        NodeMeta {
                            owner: self.e,
                            hint: format!("{hint}.{}", m.name),
                            kind: NodeKind::HandlerVar { handler: id, member: i },
                            dir: None,
                            trace: m.storage == Storage::Signal,
                        },
                    ))
                }
            };
            slots.push(slot);
        }
        self.d.handlers[id.0 as usize].slots = slots;
        self.d.register.push(RegEntry::Handler(id));
        self.inst().handlers.push(id);
        for c in &hc.combinational {
            let pid = self.add_process(
                &format!("{hint}_{}", c.name),
                ProcKind::Combinational,
                Body::Tree(c.body.clone()),
                Some(id),
            )?;
            self.d.handlers[id.0 as usize].comb.push(pid);
        }
        Ok(id)
    }

    fn add_process(&mut self, hint: &str, kind: ProcKind, body: Body, this: Option<HandlerId>) -> Result<ProcessId> {
        self.check_open()?;
        let id = ProcessId(self.d.processes.len() as u32);
        let mut captured = BTreeSet::new();
        let mut handlers = Vec::new();
        if let Body::Tree(stmts) = &body {
            let env = self.d.env(this);
            typeck::check_block(&env, stmts)?;
            collect_refs(self.d, stmts, this, &mut captured, &mut handlers)?;
            if kind == ProcKind::Combinational && !handlers.is_empty() {
                return Err(Error::Grammar("handlers can only be used in clocked processes".into()));
            }
        }
        self.d.processes.push(Process {
            id,
            hint: hint.into(),
            hdl_name: String::new(),
            owner: self.e,
            kind,
            body,
            captured,
            handlers: Vec::new(),
            self_handler: this,
            declared_drives: Vec::new(),
        });
        for h in handlers {
            self.bind_handler(id, h)?;
        }
        self.inst().processes.push(id);
        Ok(id)
    }

    fn bind_handler(&mut self, pid: ProcessId, h: HandlerId) -> Result<()> {
        let inst = &self.d.handlers[h.0 as usize];
        if inst.owner != self.e {
            return Err(Error::Elaboration(format!(
                "handler {} belongs to another entity",
                inst.hint
            )));
        }
        match inst.process {
            Some(p) if p != pid => {
                return Err(Error::Elaboration(format!(
                    "handler {} is used by processes {} and {}",
                    inst.hint,
                    self.d.process(p).hint,
                    self.d.process(pid).hint
                )))
            }
            _ => {}
        }
        self.d.handlers[h.0 as usize].process = Some(pid);
        let p = &mut self.d.processes[pid.index()];
        if !p.handlers.contains(&h) {
            p.handlers.push(h);
        }
        Ok(())
    }

    /// Process executed on every 0→1 transition of `clk`.
    pub fn on_rising_edge(&mut self, hint: &str, clk: NodeId, body: Vec<Stmt>) -> Result<ProcessId> {
        if self.d.node(clk).ty != TypeDesc::Logic {
            return Err(Error::Type(format!(
                "clock {} is not a logic signal",
                self.d.node_path(clk)
            )));
        }
        self.add_process(hint, ProcKind::RisingEdge(clk), Body::Tree(body), None)
    }

    /// Process re-evaluated whenever a node it reads changes.
    pub fn combinational(&mut self, hint: &str, body: Vec<Stmt>) -> Result<ProcessId> {
        let pid = self.add_process(hint, ProcKind::Combinational, Body::Tree(body), None)?;
        if self.d.process(pid).captured.is_empty() {
            return Err(Error::Elaboration(format!(
                "combinational block {hint} reads no signals"
            )));
        }
        Ok(pid)
    }

    /// A clocked process implemented by a host closure. Simulation only.
    pub fn on_rising_edge_native(
        &mut self,
        hint: &str,
        clk: NodeId,
        decl: NativeDecl,
        f: NativeFn,
    ) -> Result<ProcessId> {
        if self.d.node(clk).ty != TypeDesc::Logic {
            return Err(Error::Type(format!(
                "clock {} is not a logic signal",
                self.d.node_path(clk)
            )));
        }
        let idx = self.d.natives.len();
        self.d.natives.push(Some(f));
        let pid = self.add_process(hint, ProcKind::RisingEdge(clk), Body::Native(idx), None)?;
        self.d.processes[pid.index()].captured = decl.reads.iter().copied().collect();
        self.d.processes[pid.index()].declared_drives = decl.drives.clone();
        for h in decl.handlers {
            self.bind_handler(pid, h)?;
        }
        Ok(pid)
    }

    /// Marks this entity as a clock source with the given period in ticks.
    pub fn clock_source(&mut self, period: u64) -> Result<()> {
        if period < 2 || !period.is_multiple_of(2) {
            return Err(Error::Elaboration(format!(
                "clock period {period} must be even and at least 2"
            )));
        }
        self.inst().clock_period = Some(period);
        Ok(())
    }

    /// Assigns names to everything created in this architecture and runs
    /// the single-driver check.
    pub fn end_architecture(&mut self) -> Result<()> {
        if self.d.entity(self.e).ended {
            return Err(Error::Elaboration("end_architecture called twice".into()));
        }
        self.assign_names();
        self.check_drivers()?;
        self.inst().ended = true;
        self.d.register.push(RegEntry::Entity(self.e));
        Ok(())
    }

    fn assign_names(&mut self) {
        let e = self.e;
        let mut taken: BTreeSet<String> = self.d.entity(e).ports.iter().map(|p| p.name().to_string()).collect();
        let mut unique = |hint: &str, d: &mut Design| -> String {
            let base = if hint.is_empty() {
                d.gen_counter += 1;
                format!("gen_{}", d.gen_counter - 1)
            } else {
                legal_identifier(hint)
            };
            let mut name = base.clone();
            let mut k = 1;
            while taken.contains(&name) {
                name = format!("{base}_{k}");
                k += 1;
            }
            taken.insert(name.clone());
            name
        };
        let inst = self.d.entity(e);
        let children = inst.children.clone();
        let locals = inst.locals.clone();
        let handlers = inst.handlers.clone();
        let processes = inst.processes.clone();
        for c in children {
            let hint = self.d.entity(c).hint.clone();
            let name = unique(&hint, self.d);
            self.d.entities[c.0 as usize].hdl_name = name;
        }
        for n in locals {
            let hint = self.d.meta[n.index()].hint.clone();
            let name = unique(&hint, self.d);
            self.d.nodes[n.index()].hdl_name = Some(name);
        }
        for h in handlers {
            let hint = self.d.handler(h).hint.clone();
            let name = unique(&hint, self.d);
            self.d.handlers[h.0 as usize].hdl_name = name.clone();
            let hc = self.d.handler_class(h).clone();
            let slots = self.d.handler(h).slots.clone();
            for (m, slot) in hc.members.iter().zip(slots) {
                match slot {
                    Slot::Node(n) => self.d.nodes[n.index()].hdl_name = Some(format!("{name}.{}", m.name)),
                    Slot::Bundle(b)
                        if self.d.bundle(b).owner == e
                            && matches!(self.d.bundle(b).kind, BundleKind::HandlerMember { .. }) =>
                    {
                        let bname = unique(&format!("{name}_{}", m.name), self.d);
                        self.d.bundles[b.0 as usize].name = bname.clone();
                        let ic = self.d.classes.interface(self.d.bundle(b).iface).clone();
                        for (i, node) in self.d.bundle(b).nodes.clone().into_iter().enumerate() {
                            self.d.nodes[node.index()].hdl_name = Some(format!("{bname}.{}", ic.members[i].name));
                        }
                    }
                    Slot::Bundle(_) => {}
                }
            }
        }
        for p in processes {
            let hint = self.d.process(p).hint.clone();
            let name = unique(&hint, self.d);
            self.d.processes[p.index()].hdl_name = name;
        }
    }

    fn check_drivers(&self) -> Result<()> {
        let mut writers: BTreeMap<NodeId, ProcessId> = BTreeMap::new();
        for &pid in &self.d.entity(self.e).processes {
            for n in self.d.process_drives(pid)? {
                let meta = &self.d.meta[n.index()];
                if meta.owner == self.e && meta.dir == Some(Direction::In) {
                    return Err(Error::Storage(format!(
                        "process {} writes input port {}",
                        self.d.process_path(pid),
                        self.d.node_path(n)
                    )));
                }
                if self.d.node(n).structural_driver.is_some() {
                    return Err(Error::SingleDriver(format!(
                        "{} is driven structurally and by process {}",
                        self.d.node_path(n),
                        self.d.process_path(pid)
                    )));
                }
                if let Some(prev) = writers.insert(n, pid) {
                    if prev != pid {
                        return Err(Error::SingleDriver(format!(
                            "{} is driven by processes {} and {}",
                            self.d.node_path(n),
                            self.d.process_path(prev),
                            self.d.process_path(pid)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn collect_refs(
    d: &Design,
    stmts: &[Stmt],
    this: Option<HandlerId>,
    captured: &mut BTreeSet<NodeId>,
    handlers: &mut Vec<HandlerId>,
) -> Result<()> {
    let mut err = None;
    let mut visit_path = |p: &Path, read: bool, captured: &mut BTreeSet<NodeId>, handlers: &mut Vec<HandlerId>| {
        if let Root::Handler(h) = p.root {
            if !handlers.contains(&h) {
                handlers.push(h);
            }
            return;
        }
        if !read {
            return;
        }
        match d.resolve(p, this) {
            Ok(Resolved::Node { node, .. }) => {
                if d.node(node).storage == Storage::Signal {
                    captured.insert(node);
                }
            }
            Ok(_) => {}
            Err(e) => err = Some(e),
        }
    };
    for s in stmts {
        s.walk(&mut |s| {
            match s {
                Stmt::Drive(t, _) => visit_path(t, false, captured, handlers),
                Stmt::Call { object, .. } => visit_path(object, false, captured, handlers),
                Stmt::If { .. } => {}
            }
            for e in s.exprs() {
                e.walk(&mut |e: &Expr| match e {
                    Expr::Ref(p) | Expr::Truthiness(p) => visit_path(p, true, captured, handlers),
                    _ => {}
                });
            }
        });
    }
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Built-in clock source: one `clk` output toggling every `period / 2` ticks,
/// starting low.
pub struct ClockGenerator {
    pub period: u64,
}

impl Default for ClockGenerator {
    fn default() -> Self {
        ClockGenerator { period: 2 }
    }
}

impl Entity for ClockGenerator {
    fn type_name(&self) -> String {
        "clk_generator".into()
    }

    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.port_out("clk", TypeDesc::Logic, Some(Value::zero_bit()))?;
        Ok(())
    }

    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        a.clock_source(self.period)?;
        a.end_architecture()
    }
}

/// Convenience: `axiStream(vector(width))`.
pub fn axi_stream_of(a: &mut Scope<'_>, data: TypeDesc) -> Result<ClassId> {
    let id = protocols::axi_stream(&mut a.d.classes, data)?;
    a.d.drain_classes();
    Ok(id)
}

pub fn native_fifo_of(a: &mut Scope<'_>, data: TypeDesc) -> Result<ClassId> {
    let id = protocols::native_fifo(&mut a.d.classes, data)?;
    a.d.drain_classes();
    Ok(id)
}
