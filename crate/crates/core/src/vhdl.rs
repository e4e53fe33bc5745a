//! VHDL-93 backend. Objects are converted through a work queue: an entity
//! whose body needs a member-function specialization that has not been
//! emitted yet is requeued, pending specializations are materialized at the
//! end of every pass, and conversion stops once the queue drains or a pass
//! makes no progress.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path as FsPath;

use serde::Serialize;

use crate::classes::{
    flow_suffix, ClassId, ClassRef, ClassRegistry, Flow, HandlerClass, HandlerClassId, HandlerFlavor, Lookup,
    MethodDef, ParamMode, SpecId,
};
use crate::design::{
    legal_identifier, Body, BundleId, BundleKind, Connection, Design, EntityId, HandlerId, NodeKind, Port, ProcKind,
    RegEntry, Resolved,
};
use crate::error::{Error, Result};
use crate::signals::{BinOp, Direction, Logic, NodeId, ProcessId, ResetRule, Storage, TypeDesc, Value};
use crate::stmt::{Expr, Path, Root, Stmt};

/// Placeholder emitted where a specialization is not available yet.
pub const MISSING_TEMPLATE: &str = "$$missing_template$$";

const IND: &str = "    ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Block {
    Libraries,
    PackageDeclaration,
    PackageBody,
    EntityDeclaration,
    ArchitectureDeclarations,
    ArchitectureBody,
}

pub const BLOCKS: [Block; 6] = [
    Block::Libraries,
    Block::PackageDeclaration,
    Block::PackageBody,
    Block::EntityDeclaration,
    Block::ArchitectureDeclarations,
    Block::ArchitectureBody,
];

/// One design unit file, kept as separate blocks until rendering.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VhdlDocument {
    pub unit: String,
    pub is_package: bool,
    pub ports: Vec<String>,
    blocks: BTreeMap<Block, Vec<String>>,
}

impl VhdlDocument {
    fn new(unit: &str, is_package: bool) -> VhdlDocument {
        VhdlDocument {
            unit: unit.to_string(),
            is_package,
            ports: Vec::new(),
            blocks: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, b: Block, line: impl Into<String>) {
        self.blocks.entry(b).or_default().push(line.into());
    }

    pub fn extend(&mut self, b: Block, lines: impl IntoIterator<Item = String>) {
        self.blocks.entry(b).or_default().extend(lines);
    }

    pub fn lines(&self, b: Block) -> &[String] {
        self.blocks.get(&b).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn render(&self) -> String {
        let mut out: Vec<String> = self.lines(Block::Libraries).to_vec();
        out.push(String::new());
        let u = &self.unit;
        if self.is_package {
            out.push(format!("package {u} is"));
            out.extend(self.lines(Block::PackageDeclaration).iter().cloned());
            out.push(format!("end package {u};"));
            let body = self.lines(Block::PackageBody);
            if !body.is_empty() {
                out.push(String::new());
                out.push(format!("package body {u} is"));
                out.extend(body.iter().cloned());
                out.push(format!("end package body {u};"));
            }
        } else {
            out.push(format!("entity {u} is"));
            if !self.ports.is_empty() {
                out.push(format!("{IND}port ("));
                let n = self.ports.len();
                for (i, p) in self.ports.iter().enumerate() {
                    let sep = if i + 1 < n { ";" } else { "" };
                    out.push(format!("{IND}{IND}{p}{sep}"));
                }
                out.push(format!("{IND});"));
            }
            out.extend(self.lines(Block::EntityDeclaration).iter().cloned());
            out.push(format!("end entity {u};"));
            out.push(String::new());
            out.push(format!("architecture rtl of {u} is"));
            out.extend(self.lines(Block::ArchitectureDeclarations).iter().cloned());
            out.push("begin".into());
            out.extend(self.lines(Block::ArchitectureBody).iter().cloned());
            out.push("end architecture rtl;".into());
        }
        let mut s = out.join("\n");
        s.push('\n');
        s
    }
}

/// Items of the conversion queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueueItem {
    Entity(EntityId),
    Interface(ClassId),
    Handler(HandlerClassId),
    Record(u32),
}

impl QueueItem {
    pub fn name(&self, d: &Design) -> String {
        match *self {
            QueueItem::Entity(e) => d.entity(e).type_name.clone(),
            QueueItem::Interface(c) => d.classes.interface(c).name.clone(),
            QueueItem::Handler(h) => d.classes.handler(h).name.clone(),
            QueueItem::Record(r) => d.classes.records[r as usize].name.clone(),
        }
    }
}

/// Convertible objects in registration order, one per entity type.
pub fn collect(d: &Design) -> Vec<QueueItem> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in &d.register {
        let item = match r {
            RegEntry::Entity(e) => {
                if !seen.insert(d.entity(*e).type_name.clone()) {
                    continue;
                }
                QueueItem::Entity(*e)
            }
            RegEntry::Class(ClassRef::Interface(c)) => QueueItem::Interface(*c),
            RegEntry::Class(ClassRef::Handler(h)) => QueueItem::Handler(*h),
            RegEntry::Class(ClassRef::Record(i)) => QueueItem::Record(*i),
            _ => continue,
        };
        out.push(item);
    }
    out
}

/// An assignment operand as seen by the conversion hooks.
#[derive(Clone, Debug)]
pub enum Operand {
    Place {
        text: String,
        ty: TypeDesc,
        storage: Storage,
    },
    Handler(HandlerId),
    Expr(Expr),
}

/// A lowered right-hand side.
#[derive(Clone, Debug)]
pub enum Rendered {
    Text {
        text: String,
        ty: TypeDesc,
    },
    Switch {
        cases: Vec<(String, String)>,
        default: String,
        ty: TypeDesc,
    },
}

impl Rendered {
    pub fn ty(&self) -> &TypeDesc {
        match self {
            Rendered::Text { ty, .. } | Rendered::Switch { ty, .. } => ty,
        }
    }
}

/// Per-object conversion hooks. Default methods give plain data semantics;
/// handler flavors override the parts they need.
pub trait Converter: Send + Sync {
    fn get_assignment_op(&self, storage: Storage) -> &'static str {
        match storage {
            Storage::Signal => "<=",
            _ => ":=",
        }
    }

    fn reassign_type(&self, _cx: &LowerCx<'_>, lhs: Operand) -> Operand {
        lhs
    }

    fn get_value(&self, cx: &mut LowerCx<'_>, rhs: &Operand, lhs: &Operand) -> Result<Rendered> {
        default_get_value(cx, rhs, lhs)
    }

    fn reassign(&self, cx: &mut LowerCx<'_>, lhs: &Operand, rhs: Rendered) -> Result<Vec<String>> {
        default_reassign(cx, self.get_assignment_op(storage_of(lhs)), lhs, rhs)
    }

    fn inject(&self, _block: Block) -> Vec<String> {
        Vec::new()
    }
}

fn storage_of(op: &Operand) -> Storage {
    match op {
        Operand::Place { storage, .. } => *storage,
        _ => Storage::Variable,
    }
}

pub struct DataConverter;
impl Converter for DataConverter {}

/// `handler << value` becomes a `send_data` call.
pub struct SenderConverter;
impl Converter for SenderConverter {
    fn reassign(&self, cx: &mut LowerCx<'_>, lhs: &Operand, rhs: Rendered) -> Result<Vec<String>> {
        let Operand::Handler(h) = lhs else {
            return default_reassign(cx, self.get_assignment_op(storage_of(lhs)), lhs, rhs);
        };
        let Rendered::Text { text, ty } = rhs else {
            return Err(Error::Grammar("v_switch cannot be sent through a handler".into()));
        };
        let class = cx.d.handler(*h).class;
        match cx.request(class, "send_data", &[ty]) {
            Some(spec) => {
                let mut args = cx.handler_args(*h);
                args.push(text);
                Ok(vec![format!("{}({});", cx.proc_name(spec), args.join(", "))])
            }
            None => Ok(vec![format!("{MISSING_TEMPLATE};")]),
        }
    }
}

/// A receiver read through a buffer filled by `read_data`.
pub struct ReceiverConverter;
impl Converter for ReceiverConverter {
    fn get_value(&self, cx: &mut LowerCx<'_>, rhs: &Operand, lhs: &Operand) -> Result<Rendered> {
        let Operand::Handler(h) = rhs else {
            return default_get_value(cx, rhs, lhs);
        };
        let ty = match lhs {
            Operand::Place { ty, .. } => ty.clone(),
            Operand::Handler(t) => cx.handler_data_type(*t)?,
            Operand::Expr(_) => return Err(Error::Grammar("receiver read into an expression".into())),
        };
        let buf = cx.buffer(*h, &ty)?;
        let class = cx.d.handler(*h).class;
        let line = match cx.request(class, "read_data", std::slice::from_ref(&ty)) {
            Some(spec) => {
                let mut args = cx.handler_args(*h);
                args.push(buf.clone());
                format!("{}({});", cx.proc_name(spec), args.join(", "))
            }
            None => format!("{MISSING_TEMPLATE};"),
        };
        cx.before.push(line);
        Ok(Rendered::Text { text: buf, ty })
    }
}

pub fn default_get_value(cx: &mut LowerCx<'_>, rhs: &Operand, lhs: &Operand) -> Result<Rendered> {
    let expected = match lhs {
        Operand::Place { ty, .. } => Some(ty.clone()),
        Operand::Handler(h) => Some(cx.handler_data_type(*h)?),
        Operand::Expr(_) => None,
    };
    match rhs {
        Operand::Expr(e) => cx.value(e, expected.as_ref()),
        Operand::Place { text, ty, .. } => Ok(Rendered::Text {
            text: text.clone(),
            ty: ty.clone(),
        }),
        Operand::Handler(h) => Err(Error::Grammar(format!(
            "handler {} cannot be read as a value",
            cx.d.handler(*h).hdl_name
        ))),
    }
}

pub fn default_reassign(cx: &mut LowerCx<'_>, op: &str, lhs: &Operand, rhs: Rendered) -> Result<Vec<String>> {
    let (target, ty) = match lhs {
        Operand::Place { text, ty, storage } => {
            if *storage == Storage::Constant {
                return Err(Error::Storage(format!("assignment to constant {text}")));
            }
            (text.clone(), ty.clone())
        }
        Operand::Handler(h) => {
            return Err(Error::Grammar(format!(
                "handler {} cannot be assigned",
                cx.d.handler(*h).hdl_name
            )))
        }
        Operand::Expr(_) => return Err(Error::Grammar("assignment to an expression".into())),
    };
    let concurrent = cx.is_concurrent();
    let op = if concurrent { "<=" } else { op };
    match rhs {
        Rendered::Text { text, ty: rty } => Ok(assign_lines(&target, &ty, op, &text, &rty)),
        Rendered::Switch {
            cases,
            default,
            ty: rty,
        } => {
            if concurrent {
                if accept_split(&ty, &rty).is_some() {
                    return Err(Error::Grammar(format!("v_switch into {ty} outside a process")));
                }
                let mut s = format!("{target} <= ");
                for (c, v) in &cases {
                    s.push_str(&format!("{v} when {c} else "));
                }
                s.push_str(&format!("{default};"));
                return Ok(vec![s]);
            }
            let mut out = Vec::new();
            for (i, (c, v)) in cases.iter().enumerate() {
                out.push(format!("{} {c} then", if i == 0 { "if" } else { "elsif" }));
                out.extend(
                    assign_lines(&target, &ty, op, v, &rty)
                        .into_iter()
                        .map(|l| format!("{IND}{l}")),
                );
            }
            if cases.is_empty() {
                return Ok(assign_lines(&target, &ty, op, &default, &rty));
            }
            out.push("else".into());
            out.extend(
                assign_lines(&target, &ty, op, &default, &rty)
                    .into_iter()
                    .map(|l| format!("{IND}{l}")),
            );
            out.push("end if;".into());
            Ok(out)
        }
    }
}

/// Data and flag field names when `src` lands in an accepting record `dst`.
fn accept_split(dst: &TypeDesc, src: &TypeDesc) -> Option<(String, Option<String>)> {
    if dst == src {
        return None;
    }
    match dst {
        TypeDesc::Record(r) => r.accepts.as_ref().map(|a| (a.data_field.clone(), a.flag_field.clone())),
        _ => None,
    }
}

fn assign_lines(target: &str, ty: &TypeDesc, op: &str, value: &str, vty: &TypeDesc) -> Vec<String> {
    match accept_split(ty, vty) {
        Some((data, flag)) => {
            let mut v = vec![format!("{target}.{data} {op} {value};")];
            if let Some(f) = flag {
                v.push(format!("{target}.{f} {op} '1';"));
            }
            v
        }
        None => vec![format!("{target} {op} {value};")],
    }
}

/// Net names an entity uses for its children's ports.
#[derive(Default)]
struct Nets {
    node_net: HashMap<NodeId, String>,
    bundle_net: HashMap<BundleId, String>,
    decls: Vec<String>,
    assigns: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    N(u32),
    B(u32),
}

fn find(parent: &mut BTreeMap<Key, Key>, k: Key) -> Key {
    let p = *parent.entry(k).or_insert(k);
    if p == k {
        return k;
    }
    let r = find(parent, p);
    parent.insert(k, r);
    r
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Concurrent(EntityId),
    Sequential(EntityId),
    Method,
}

struct MethodScope {
    class: HandlerClassId,
    params: Vec<(String, TypeDesc)>,
}

/// Conversion state of one process, comb block or member function.
pub struct LowerCx<'a> {
    pub d: &'a Design,
    reg: &'a mut ClassRegistry,
    backend: &'a Backend,
    mode: Mode,
    this: Option<HandlerId>,
    method: Option<MethodScope>,
    nets: Option<&'a Nets>,
    /// Statements to emit before the one being lowered.
    pub before: Vec<String>,
    locals: Vec<(String, TypeDesc)>,
    used_vars: BTreeSet<NodeId>,
    missing: Vec<String>,
    uses: BTreeSet<String>,
    arrays: BTreeMap<String, TypeDesc>,
}

impl<'a> LowerCx<'a> {
    fn new(d: &'a Design, reg: &'a mut ClassRegistry, backend: &'a Backend, mode: Mode) -> LowerCx<'a> {
        LowerCx {
            d,
            reg,
            backend,
            mode,
            this: None,
            method: None,
            nets: None,
            before: Vec::new(),
            locals: Vec::new(),
            used_vars: BTreeSet::new(),
            missing: Vec::new(),
            uses: BTreeSet::new(),
            arrays: BTreeMap::new(),
        }
    }

    pub fn is_concurrent(&self) -> bool {
        matches!(self.mode, Mode::Concurrent(_))
    }

    /// Ready specialization, or `None` after recording why it is missing.
    pub fn request(&mut self, class: HandlerClassId, method: &str, args: &[TypeDesc]) -> Option<SpecId> {
        match self.reg.request(class, method, args) {
            Lookup::Ready(id) => Some(id),
            Lookup::Missing => {
                let msg = match self.reg.monomorphize_member(class, method, args) {
                    Ok(id) => self.reg.spec(id).signature(self.reg),
                    Err(e) => e.to_string(),
                };
                self.missing.push(msg);
                None
            }
        }
    }

    pub fn proc_name(&self, spec: SpecId) -> String {
        proc_name(self.reg, spec)
    }

    fn class_of(&self, h: HandlerId) -> &HandlerClass {
        self.reg.handler(self.d.handler(h).class)
    }

    pub fn handler_data_type(&self, h: HandlerId) -> Result<TypeDesc> {
        let hc = self.class_of(h);
        self.reg
            .interface(hc.interface)
            .data_type()
            .cloned()
            .ok_or_else(|| Error::Conversion(format!("{} has no data member", hc.name)))
    }

    /// Actual parameters carrying a handler's state records.
    pub fn handler_args(&self, h: HandlerId) -> Vec<String> {
        let hc = self.class_of(h);
        let name = &self.d.handler(h).hdl_name;
        let mut v = Vec::new();
        if !sig_members(hc).is_empty() {
            v.push(format!("{name}_sig"));
        }
        if !var_members(hc).is_empty() {
            v.push(name.clone());
        }
        v
    }

    /// Process-local buffer a receiver is read into.
    pub fn buffer(&mut self, h: HandlerId, ty: &TypeDesc) -> Result<String> {
        if self.mode != Mode::Sequential(self.entity()?) {
            return Err(Error::Grammar("receiver read outside a clocked process".into()));
        }
        let base = format!("{}_buff", self.d.handler(h).hdl_name);
        let mut k = 0;
        loop {
            let name = if k == 0 { base.clone() } else { format!("{base}_{k}") };
            match self.locals.iter().find(|(n, _)| *n == name) {
                Some((_, t)) if t == ty => return Ok(name),
                Some(_) => k += 1,
                None => {
                    self.locals.push((name.clone(), ty.clone()));
                    return Ok(name);
                }
            }
        }
    }

    fn entity(&self) -> Result<EntityId> {
        match self.mode {
            Mode::Concurrent(e) | Mode::Sequential(e) => Ok(e),
            Mode::Method => Err(Error::Grammar("no entity context inside a member function".into())),
        }
    }

    pub fn type_name(&mut self, t: &TypeDesc) -> String {
        type_name(self.reg, t, &mut self.uses, &mut self.arrays)
    }

    fn node_ref(&self, e: EntityId, n: NodeId) -> Result<String> {
        node_ref(self.d, self.nets, e, n)
    }

    fn place(&mut self, p: &Path) -> Result<Operand> {
        if self.mode == Mode::Method {
            return self.method_place(p);
        }
        let e = self.entity()?;
        match self.d.resolve(p, self.this)? {
            Resolved::Handler(h) => Ok(Operand::Handler(h)),
            Resolved::Param { .. } => Err(Error::Grammar("parameter outside a member function".into())),
            Resolved::Node { node, fields } => {
                let sn = self.d.node(node);
                if sn.storage == Storage::Variable {
                    if self.is_concurrent() {
                        return Err(Error::Grammar(format!(
                            "variable {} read outside a clocked process",
                            self.d.node_path(node)
                        )));
                    }
                    if matches!(self.d.meta[node.index()].kind, NodeKind::Local) {
                        self.used_vars.insert(node);
                    }
                }
                let mut text = self.node_ref(e, node)?;
                let ty = field_suffix(&sn.ty, &fields, &mut text)?;
                Ok(Operand::Place {
                    text,
                    ty,
                    storage: sn.storage,
                })
            }
        }
    }

    fn method_place(&mut self, p: &Path) -> Result<Operand> {
        let scope = self
            .method
            .as_ref()
            .ok_or_else(|| Error::Grammar("no member function".into()))?;
        let (mut text, base_ty, storage, rest) = match &p.root {
            Root::SelfObj => {
                let hc = self.reg.handler(scope.class);
                let first = p.members.first().ok_or_else(|| Error::Grammar("bare self".into()))?;
                let m = hc
                    .member(first)
                    .ok_or_else(|| Error::Grammar(format!("{} has no member {first}", hc.name)))?;
                if m.is_free_type() {
                    return Err(Error::Grammar(format!(
                        "{}.{first} is not part of the handler records",
                        hc.name
                    )));
                }
                let text = match m.storage {
                    Storage::Signal => format!("self_sig.{first}"),
                    _ => format!("self.{first}"),
                };
                (text, m.ty(self.reg.interface(hc.interface)), m.storage, &p.members[1..])
            }
            Root::Param(i) => {
                let (n, t) = scope
                    .params
                    .get(*i)
                    .ok_or_else(|| Error::Grammar(format!("parameter {i} out of range")))?;
                (n.clone(), t.clone(), Storage::Variable, &p.members[..])
            }
            other => {
                return Err(Error::Grammar(format!(
                    "{other:?} is not reachable from a member function"
                )))
            }
        };
        let fields = base_ty.resolve_path(rest)?;
        let ty = field_suffix(&base_ty, &fields, &mut text)?;
        Ok(Operand::Place { text, ty, storage })
    }

    /// Value of `e` for a slot of type `expected`.
    pub fn value(&mut self, e: &Expr, expected: Option<&TypeDesc>) -> Result<Rendered> {
        if let Expr::Switch { default, cases } = e {
            let mut rc = Vec::new();
            for (c, v) in cases {
                let c = self.cond(c)?;
                rc.push((c, self.value_text(v, expected)?.0));
            }
            let (d, ty) = self.value_text(default, expected)?;
            return Ok(Rendered::Switch {
                cases: rc,
                default: d,
                ty,
            });
        }
        let (text, ty) = self.value_text(e, expected)?;
        Ok(Rendered::Text { text, ty })
    }

    fn value_text(&mut self, e: &Expr, expected: Option<&TypeDesc>) -> Result<(String, TypeDesc)> {
        let expected = expected.cloned();
        if let Expr::Const(v) = e {
            if let Some(t) = &expected {
                let target = match t {
                    TypeDesc::Record(r) if !matches!(v, Value::Record(_)) => r
                        .accepts
                        .as_ref()
                        .and_then(|a| t.field(&a.data_field))
                        .map(|(_, f)| f.clone())
                        .unwrap_or_else(|| t.clone()),
                    _ => t.clone(),
                };
                return Ok((self.literal(v, &target, true)?, target));
            }
        }
        if let Expr::Switch { .. } = e {
            return Err(Error::Grammar("nested v_switch".into()));
        }
        let (text, ty) = self.expr(e, expected.as_ref())?;
        match (&ty, &expected) {
            (TypeDesc::Integer, Some(TypeDesc::Vector(w))) => Ok((
                format!("std_logic_vector(to_unsigned({text}, {w}))"),
                TypeDesc::Vector(*w),
            )),
            _ => Ok((text, ty)),
        }
    }

    fn literal(&mut self, v: &Value, ty: &TypeDesc, assign: bool) -> Result<String> {
        literal(self.reg, v, ty, assign, &mut self.uses, &mut self.arrays)
    }

    /// Expression text and type; `hint` types bare literals.
    fn expr(&mut self, e: &Expr, hint: Option<&TypeDesc>) -> Result<(String, TypeDesc)> {
        match e {
            Expr::Const(v) => {
                let ty = match hint {
                    Some(t) if t.is_scalar() => t.clone(),
                    _ => v
                        .scalar_type()
                        .ok_or_else(|| Error::Grammar(format!("aggregate literal {v}")))?,
                };
                Ok((self.literal(v, &ty, false)?, ty))
            }
            Expr::Ref(p) => match self.place(p)? {
                Operand::Place { text, ty, .. } => Ok((text, ty)),
                Operand::Handler(h) => Err(Error::Grammar(format!(
                    "handler {} used inside an expression",
                    self.d.handler(h).hdl_name
                ))),
                Operand::Expr(_) => unreachable!("places never resolve to expressions"),
            },
            Expr::Truthiness(p) => match self.place(p)? {
                Operand::Handler(h) => {
                    if self.class_of(h).method("truthiness").is_none() {
                        return Err(Error::Truthiness(format!(
                            "{} defines no truth predicate",
                            self.class_of(h).name
                        )));
                    }
                    Ok((
                        format!("truthiness({})", self.handler_args(h).join(", ")),
                        TypeDesc::Boolean,
                    ))
                }
                _ => Err(Error::Truthiness("truthiness of a non-handler".into())),
            },
            Expr::Not(x) => {
                let (t, ty) = self.expr(x, hint)?;
                Ok((format!("not {}", paren(x, t)), ty))
            }
            Expr::Bin(op, l, r) => {
                let (lt, ltype, rt, rtype) = if matches!(**l, Expr::Const(_)) && !matches!(**r, Expr::Const(_)) {
                    let (rt, rtype) = self.expr(r, None)?;
                    let (lt, ltype) = self.expr(l, Some(&rtype))?;
                    (lt, ltype, rt, rtype)
                } else {
                    let (lt, ltype) = self.expr(l, if matches!(**l, Expr::Const(_)) { hint } else { None })?;
                    let (rt, rtype) = self.expr(r, Some(&ltype))?;
                    (lt, ltype, rt, rtype)
                };
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::And => "and",
                    BinOp::Or => "or",
                    BinOp::Xor => "xor",
                    BinOp::Eq => "=",
                    BinOp::Ne => "/=",
                    BinOp::Lt => "<",
                    BinOp::Le => "<=",
                    BinOp::Gt => ">",
                    BinOp::Ge => ">=",
                };
                let ty = if op.is_relation() {
                    TypeDesc::Boolean
                } else if matches!(op, BinOp::Add | BinOp::Sub) {
                    match (&ltype, &rtype) {
                        (TypeDesc::Vector(a), TypeDesc::Vector(b)) => TypeDesc::Vector(*a.max(b)),
                        (TypeDesc::Vector(a), _) | (_, TypeDesc::Vector(a)) => TypeDesc::Vector(*a),
                        _ => ltype.clone(),
                    }
                } else {
                    ltype.clone()
                };
                Ok((format!("{} {sym} {}", paren(l, lt), paren(r, rt)), ty))
            }
            Expr::Switch { .. } => Err(Error::Grammar(
                "v_switch is only allowed as a whole assignment source".into(),
            )),
        }
    }

    fn cond(&mut self, e: &Expr) -> Result<String> {
        let (t, ty) = self.expr(e, None)?;
        match ty {
            TypeDesc::Boolean => Ok(t),
            TypeDesc::Logic => Ok(format!("{} = '1'", paren(e, t))),
            other => Err(Error::Type(format!("condition of type {other}"))),
        }
    }

    fn assignment(&mut self, target: &Path, value: &Expr) -> Result<Vec<String>> {
        let backend = self.backend;
        let lhs = self.place(target)?;
        let lhs = backend.converter_for(self, &lhs).reassign_type(self, lhs);
        let rhs_op = match value {
            Expr::Ref(p) => match self.place(p)? {
                h @ Operand::Handler(_) => h,
                _ => Operand::Expr(value.clone()),
            },
            _ => Operand::Expr(value.clone()),
        };
        let rhs = backend.converter_for(self, &rhs_op).get_value(self, &rhs_op, &lhs)?;
        let mut lines = backend.converter_for(self, &lhs).reassign(self, &lhs, rhs)?;
        let mut out = std::mem::take(&mut self.before);
        out.append(&mut lines);
        Ok(out)
    }

    fn reset_lines(&mut self, target: &str, ty: &TypeDesc, op: &str) -> Result<Vec<String>> {
        match ty {
            TypeDesc::Record(r) => match &r.reset {
                ResetRule::AllFields => {
                    let z = self.literal(&Value::zero_for(ty), ty, true)?;
                    Ok(vec![format!("{target} {op} {z};")])
                }
                ResetRule::Only(names) => {
                    let mut out = Vec::new();
                    for (n, t) in &r.fields {
                        if names.contains(n) {
                            out.extend(self.reset_lines(&format!("{target}.{n}"), t, op)?);
                        }
                    }
                    Ok(out)
                }
            },
            _ => {
                let z = self.literal(&Value::zero_for(ty), ty, true)?;
                Ok(vec![format!("{target} {op} {z};")])
            }
        }
    }

    fn seq_block(&mut self, stmts: &[Stmt]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for s in stmts {
            out.extend(self.seq(s)?);
        }
        Ok(out)
    }

    fn seq(&mut self, s: &Stmt) -> Result<Vec<String>> {
        match s {
            Stmt::Drive(t, v) => self.assignment(t, v),
            Stmt::If { cond, then, elifs, els } => {
                let mut out = Vec::new();
                let c = self.cond(cond)?;
                out.push(format!("if {c} then"));
                out.extend(indent(self.seq_block(then)?));
                for (c, b) in elifs {
                    let c = self.cond(c)?;
                    out.push(format!("elsif {c} then"));
                    out.extend(indent(self.seq_block(b)?));
                }
                if !els.is_empty() {
                    out.push("else".into());
                    out.extend(indent(self.seq_block(els)?));
                }
                out.push("end if;".into());
                let mut pre = std::mem::take(&mut self.before);
                pre.extend(out);
                Ok(pre)
            }
            Stmt::Call { object, member, args } => {
                let target = self.place(object)?;
                if member == "reset" {
                    let Operand::Place { text, ty, storage } = target else {
                        return Err(Error::Grammar("reset of a handler".into()));
                    };
                    let op = if self.is_concurrent() {
                        "<="
                    } else {
                        DataConverter.get_assignment_op(storage)
                    };
                    return self.reset_lines(&text, &ty, op);
                }
                let Operand::Handler(h) = target else {
                    return Err(Error::Grammar(format!("{member} called on a non-handler")));
                };
                if self.is_concurrent() {
                    return Err(Error::Grammar("member function call outside a clocked process".into()));
                }
                let class = self.d.handler(h).class;
                let m = self.reg.handler(class).method(member).cloned().ok_or_else(|| {
                    Error::Template(format!("{} has no member function {member}", self.class_of(h).name))
                })?;
                if m.params.len() != args.len() {
                    return Err(Error::Template(format!(
                        "{member} takes {} argument(s)",
                        m.params.len()
                    )));
                }
                let mut texts = self.handler_args(h);
                let mut types = Vec::new();
                for (p, a) in m.params.iter().zip(args) {
                    let (t, ty) = match p.mode {
                        ParamMode::In => self.expr(a, None)?,
                        ParamMode::InOut => match a {
                            Expr::Ref(path) => match self.place(path)? {
                                Operand::Place {
                                    text,
                                    ty,
                                    storage: Storage::Variable,
                                } => (text, ty),
                                _ => {
                                    return Err(Error::Conversion(format!(
                                        "inout argument of {member} must be a variable"
                                    )))
                                }
                            },
                            _ => return Err(Error::Grammar(format!("inout argument of {member} must be a place"))),
                        },
                    };
                    texts.push(t);
                    types.push(ty);
                }
                let line = if m.params.is_empty() {
                    format!("{}({});", legal_identifier(member), texts.join(", "))
                } else {
                    match self.request(class, member, &types) {
                        Some(spec) => format!("{}({});", self.proc_name(spec), texts.join(", ")),
                        None => format!("{MISSING_TEMPLATE};"),
                    }
                };
                let mut pre = std::mem::take(&mut self.before);
                pre.push(line);
                Ok(pre)
            }
        }
    }
}

fn paren(e: &Expr, text: String) -> String {
    match e {
        Expr::Bin(..) | Expr::Not(_) => format!("({text})"),
        _ => text,
    }
}

fn indent(lines: Vec<String>) -> Vec<String> {
    lines.into_iter().map(|l| format!("{IND}{l}")).collect()
}

fn indent_by(lines: Vec<String>, levels: usize) -> Vec<String> {
    let pre = IND.repeat(levels);
    lines.into_iter().map(|l| format!("{pre}{l}")).collect()
}

fn field_suffix(ty: &TypeDesc, fields: &[usize], text: &mut String) -> Result<TypeDesc> {
    let mut t = ty;
    for &i in fields {
        t = match t {
            TypeDesc::Record(r) => {
                text.push('.');
                text.push_str(&r.fields[i].0);
                &r.fields[i].1
            }
            TypeDesc::Array { elem, .. } => {
                text.push_str(&format!("({i})"));
                elem
            }
            other => return Err(Error::Grammar(format!("{other} has no members"))),
        };
    }
    Ok(t.clone())
}

fn var_members(hc: &HandlerClass) -> Vec<usize> {
    hc.members
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_free_type() && m.storage == Storage::Variable)
        .map(|(i, _)| i)
        .collect()
}

fn sig_members(hc: &HandlerClass) -> Vec<usize> {
    hc.members
        .iter()
        .enumerate()
        .filter(|(_, m)| !m.is_free_type() && m.storage == Storage::Signal)
        .map(|(i, _)| i)
        .collect()
}

/// Procedure name of a specialization. Arguments whose VHDL base type would
/// collide with another overload get the mangled type suffix.
pub fn proc_name(reg: &ClassRegistry, spec: SpecId) -> String {
    let s = reg.spec(spec);
    let hc = reg.handler(s.class);
    let data = reg.interface(hc.interface).data_type().cloned();
    let plain = s
        .arg_types
        .iter()
        .all(|t| matches!(t, TypeDesc::Record(_) | TypeDesc::Array { .. }) || Some(t) == data.as_ref());
    let base = legal_identifier(&s.method);
    if plain {
        base
    } else {
        let m: String = s.arg_types.iter().map(|t| t.mangle()).collect();
        format!("{base}{m}")
    }
}

fn array_name(t: &TypeDesc) -> String {
    format!("arr{}", t.mangle())
}

fn type_name(
    reg: &ClassRegistry,
    t: &TypeDesc,
    uses: &mut BTreeSet<String>,
    arrays: &mut BTreeMap<String, TypeDesc>,
) -> String {
    match t {
        TypeDesc::Logic => "std_logic".into(),
        TypeDesc::Vector(w) => format!("std_logic_vector({} downto 0)", w - 1),
        TypeDesc::Integer => "integer".into(),
        TypeDesc::Boolean => "boolean".into(),
        TypeDesc::Record(r) => {
            let iface = [
                &r.name[..],
                r.name.strip_suffix("_m2s").unwrap_or(""),
                r.name.strip_suffix("_s2m").unwrap_or(""),
            ]
            .into_iter()
            .find(|n| !n.is_empty() && reg.find_interface(n).is_some());
            uses.insert(format!("{}_pkg", iface.unwrap_or(&r.name)));
            if iface.is_none() {
                for (_, f) in &r.fields {
                    let mut inner = BTreeSet::new();
                    type_name(reg, f, &mut inner, arrays);
                }
            }
            r.name.clone()
        }
        TypeDesc::Array { elem, .. } => {
            let name = array_name(t);
            let mut inner = BTreeSet::new();
            type_name(reg, elem, &mut inner, arrays);
            arrays.insert(name.clone(), t.clone());
            uses.insert(format!("{name}_pkg"));
            name
        }
    }
}

fn bit_string(bits: u128, width: u32) -> String {
    format!("\"{:0w$b}\"", bits, w = width as usize)
}

fn literal(
    reg: &ClassRegistry,
    v: &Value,
    ty: &TypeDesc,
    assign: bool,
    uses: &mut BTreeSet<String>,
    arrays: &mut BTreeMap<String, TypeDesc>,
) -> Result<String> {
    match ty {
        TypeDesc::Record(r) => {
            let Value::Record(vs) = v else {
                return Err(Error::Type(format!("cannot assign {v} to {ty}")));
            };
            type_name(reg, ty, uses, arrays);
            let parts: Result<Vec<String>> = r
                .fields
                .iter()
                .zip(vs)
                .map(|((n, t), v)| Ok(format!("{n} => {}", literal(reg, v, t, true, uses, arrays)?)))
                .collect();
            Ok(format!("({})", parts?.join(", ")))
        }
        TypeDesc::Array { elem, .. } => {
            let Value::Array(vs) = v else {
                return Err(Error::Type(format!("cannot assign {v} to {ty}")));
            };
            type_name(reg, ty, uses, arrays);
            let parts: Result<Vec<String>> = vs
                .iter()
                .enumerate()
                .map(|(i, v)| Ok(format!("{i} => {}", literal(reg, v, elem, true, uses, arrays)?)))
                .collect();
            Ok(format!("({})", parts?.join(", ")))
        }
        TypeDesc::Boolean => match v {
            Value::Boolean(b) => Ok(b.to_string()),
            Value::Integer(i) => Ok((*i != 0).to_string()),
            _ => Err(Error::Type(format!("cannot assign {v} to boolean"))),
        },
        TypeDesc::Integer => match v {
            Value::Integer(i) => Ok(i.to_string()),
            Value::Vector { bits, .. } => Ok(bits.to_string()),
            _ => Err(Error::Type(format!("cannot assign {v} to integer"))),
        },
        _ => match v.clone().coerce(ty)? {
            Value::Logic(l) => Ok(match l {
                Logic::Zero => "'0'",
                Logic::One => "'1'",
                Logic::U => "'U'",
            }
            .into()),
            Value::Vector { width, bits } => Ok(if assign && bits == 0 {
                "(others => '0')".into()
            } else if bits < (1u128 << 31) {
                if assign {
                    format!("std_logic_vector(to_unsigned({bits}, {width}))")
                } else {
                    bits.to_string()
                }
            } else {
                bit_string(bits, width)
            }),
            other => Err(Error::Type(format!("cannot render {other} as {ty}"))),
        },
    }
}

fn node_ref(d: &Design, nets: Option<&Nets>, e: EntityId, n: NodeId) -> Result<String> {
    let meta = &d.meta[n.index()];
    let name = || {
        d.node(n)
            .hdl_name
            .clone()
            .ok_or_else(|| Error::Naming(format!("{} has no name", d.node_path(n))))
    };
    if meta.owner == e {
        return match &meta.kind {
            NodeKind::Local | NodeKind::Port => name(),
            NodeKind::BundleMember { bundle, member } => {
                Ok(bundle_member_ref(d, d.bundle(*bundle).name.clone(), *bundle, *member))
            }
            NodeKind::HandlerVar { handler, member } => {
                let hc = d.handler_class(*handler);
                let h = &d.handler(*handler).hdl_name;
                match hc.members[*member].storage {
                    Storage::Signal => Ok(format!("{h}_sig.{}", hc.members[*member].name)),
                    _ => Ok(format!("{h}.{}", hc.members[*member].name)),
                }
            }
        };
    }
    let nets = nets.ok_or_else(|| Error::Naming(format!("{} is not visible", d.node_path(n))))?;
    if d.entity(meta.owner).parent == Some(e) {
        match &meta.kind {
            NodeKind::Port => {
                if let Some(net) = nets.node_net.get(&n) {
                    return Ok(net.clone());
                }
            }
            NodeKind::BundleMember { bundle, member } => {
                if let Some(net) = nets.bundle_net.get(bundle) {
                    return Ok(bundle_member_ref(d, net.clone(), *bundle, *member));
                }
            }
            _ => {}
        }
    }
    Err(Error::Naming(format!(
        "{} is not visible from {}",
        d.node_path(n),
        d.entity_path(e)
    )))
}

fn bundle_member_ref(d: &Design, base: String, b: BundleId, member: usize) -> String {
    let bundle = d.bundle(b);
    let ic = d.classes.interface(bundle.iface);
    let m = &ic.members[member];
    match bundle.kind {
        BundleKind::Port { .. } => format!("{base}_{}.{}", flow_suffix(m.flow), m.name),
        BundleKind::HandlerMember { .. } => format!("{base}.{}", m.name),
    }
}

fn node_key(n: NodeId) -> Key {
    Key::N(n.0)
}

fn bundle_key(b: BundleId) -> Key {
    Key::B(b.0)
}

fn build_nets(
    d: &Design,
    reg: &ClassRegistry,
    e: EntityId,
    taken: &mut BTreeSet<String>,
    uses: &mut BTreeSet<String>,
    arrays: &mut BTreeMap<String, TypeDesc>,
) -> Result<Nets> {
    let inst = d.entity(e);
    let mut nets = Nets::default();
    let mut parent: BTreeMap<Key, Key> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for c in &inst.children {
        for p in &d.entity(*c).ports {
            let k = match p {
                Port::Scalar { node, .. } => node_key(*node),
                Port::Interface { bundle, .. } => bundle_key(*bundle),
            };
            parent.insert(k, k);
            order.push(k);
        }
    }
    let own_node = |n: NodeId| d.meta[n.index()].owner == e;
    let own_bundle = |b: BundleId| d.bundle(b).owner == e;
    let mut own_members: BTreeMap<Key, Key> = BTreeMap::new();
    for conn in &inst.connections {
        match conn {
            Connection::Scalar { from, to } => {
                if own_node(*from) && own_node(*to) {
                    let (f, t) = (node_ref(d, None, e, *from)?, node_ref(d, None, e, *to)?);
                    nets.assigns.push(format!("{t} <= {f};"));
                    continue;
                }
                let (a, b) = (node_key(*from), node_key(*to));
                for (k, n) in [(a, *from), (b, *to)] {
                    if own_node(n) {
                        own_members.insert(k, k);
                    }
                }
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent.insert(ra, rb);
            }
            Connection::Bundle { source, sink } => {
                if own_bundle(*source) && own_bundle(*sink) {
                    let ic = d.classes.interface(d.bundle(*source).iface);
                    let (s, k) = (&d.bundle(*source).name, &d.bundle(*sink).name);
                    if ic.flow_type(Flow::M2S).is_some() {
                        nets.assigns.push(format!("{k}_m2s <= {s}_m2s;"));
                    }
                    if ic.flow_type(Flow::S2M).is_some() {
                        nets.assigns.push(format!("{s}_s2m <= {k}_s2m;"));
                    }
                    continue;
                }
                let (a, b) = (bundle_key(*source), bundle_key(*sink));
                for (k, x) in [(a, *source), (b, *sink)] {
                    if own_bundle(x) {
                        own_members.insert(k, k);
                    }
                }
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent.insert(ra, rb);
            }
        }
    }
    let mut groups: BTreeMap<Key, Vec<Key>> = BTreeMap::new();
    let mut group_order: Vec<Key> = Vec::new();
    let all: Vec<Key> = order.iter().copied().chain(own_members.keys().copied()).collect();
    for k in all {
        let r = find(&mut parent, k);
        let g = groups.entry(r).or_default();
        if g.is_empty() {
            group_order.push(r);
        }
        if !g.contains(&k) {
            g.push(k);
        }
    }
    let child_name = |owner: EntityId, port: &str| format!("{}_{}", d.entity(owner).hdl_name, port);
    for r in group_order {
        let members = &groups[&r];
        let own = members.iter().find(|k| own_members.contains_key(k));
        let name = match own {
            Some(Key::N(n)) => node_ref(d, None, e, NodeId(*n))?,
            Some(Key::B(b)) => d.bundle(BundleId(*b)).name.clone(),
            None => {
                let source = match members[0] {
                    Key::N(_) => members
                        .iter()
                        .find(|k| matches!(k, Key::N(n) if d.meta[*n as usize].dir == Some(Direction::Out)))
                        .unwrap_or(&members[0]),
                    Key::B(_) => members
                        .iter()
                        .find(|k| matches!(k, Key::B(b) if d.bundle(BundleId(*b)).side() == Some(crate::design::Side::Primary)))
                        .unwrap_or(&members[0]),
                };
                let (base, ty_init): (String, Vec<(String, String, String)>) = match *source {
                    Key::N(n) => {
                        let node = d.node(NodeId(n));
                        let port = d.meta[n as usize].hint.clone();
                        let base = child_name(d.meta[n as usize].owner, &legal_identifier(&port));
                        let base = unique(taken, &base);
                        let t = type_name(reg, &node.ty, uses, arrays);
                        let i = literal(reg, &node.init, &node.ty, true, uses, arrays)?;
                        (base.clone(), vec![(base, t, i)])
                    }
                    Key::B(b) => {
                        let bundle = d.bundle(BundleId(b));
                        let base = unique(taken, &child_name(bundle.owner, &bundle.name));
                        let ic = reg.interface(bundle.iface);
                        uses.insert(format!("{}_pkg", ic.name));
                        let mut v = Vec::new();
                        for flow in [Flow::M2S, Flow::S2M] {
                            if let Some(ft) = ic.flow_type(flow) {
                                let init: Vec<Value> = ic
                                    .members
                                    .iter()
                                    .zip(&bundle.nodes)
                                    .filter(|(m, _)| m.flow == flow)
                                    .map(|(_, n)| d.node(*n).init.clone())
                                    .collect();
                                let i = literal(reg, &Value::Record(init), &ft, true, uses, arrays)?;
                                let sfx = flow_suffix(flow);
                                v.push((format!("{base}_{sfx}"), format!("{}_{sfx}", ic.name), i));
                            }
                        }
                        (base, v)
                    }
                };
                for (n, t, i) in ty_init {
                    nets.decls.push(format!("{IND}signal {n} : {t} := {i};"));
                }
                base
            }
        };
        for k in members {
            match *k {
                Key::N(n) if !own_members.contains_key(k) => {
                    nets.node_net.insert(NodeId(n), name.clone());
                }
                Key::B(b) if !own_members.contains_key(k) => {
                    nets.bundle_net.insert(BundleId(b), name.clone());
                }
                _ => {}
            }
        }
    }
    Ok(nets)
}

fn unique(taken: &mut BTreeSet<String>, base: &str) -> String {
    let mut name = base.to_string();
    let mut k = 1;
    while taken.contains(&name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    taken.insert(name.clone());
    name
}

fn libraries(uses: &BTreeSet<String>, own: Option<&str>) -> Vec<String> {
    let mut v = vec![
        "library ieee;".to_string(),
        "use ieee.std_logic_1164.all;".into(),
        "use ieee.numeric_std.all;".into(),
        "use ieee.std_logic_unsigned.all;".into(),
    ];
    let work: Vec<&String> = uses.iter().filter(|u| Some(u.as_str()) != own).collect();
    if !work.is_empty() {
        v.push(String::new());
        v.push("library work;".into());
        for u in work {
            v.push(format!("use work.{u}.all;"));
        }
    }
    v
}

/// A generated file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VhdlFile {
    pub file: String,
    pub kind: &'static str,
    pub unit: String,
    /// Design objects this file was generated from.
    pub sources: Vec<String>,
    #[serde(skip)]
    pub text: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub top: String,
    pub passes: usize,
    pub queue: Vec<String>,
    pub files: Vec<VhdlFile>,
    pub specializations: Vec<String>,
}

/// Result of a conversion run.
#[derive(Clone, Debug)]
pub struct Conversion {
    pub files: Vec<VhdlFile>,
    pub passes: usize,
    pub queue: Vec<String>,
    pub manifest: Manifest,
}

impl Conversion {
    pub fn file(&self, name: &str) -> Option<&VhdlFile> {
        self.files.iter().find(|f| f.file == name)
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes every file plus `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &FsPath) -> Result<()> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
        for f in &self.files {
            let p = dir.join(&f.file);
            fs::write(&p, &f.text)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
        }
        let p = dir.join("manifest.json");
        fs::write(&p, self.manifest_json())
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
        Ok(())
    }
}

enum Outcome<T> {
    Done(T),
    Missing(Vec<String>),
}

#[derive(Default)]
struct RunState {
    arrays: BTreeMap<String, TypeDesc>,
    spec_text: BTreeMap<SpecId, (String, Vec<String>)>,
}

/// Conversion driver with its hook tables.
#[derive(Default)]
pub struct Backend {
    converters: BTreeMap<String, Box<dyn Converter>>,
    injections: Vec<(String, Block, String)>,
}

impl Backend {
    pub fn new() -> Backend {
        Backend::default()
    }

    /// Overrides the hooks for every handler class built from `template`.
    pub fn register_converter(&mut self, template: &str, c: Box<dyn Converter>) {
        self.converters.insert(template.to_string(), c);
    }

    /// Appends a line to one block of the file generated for `object`
    /// (an entity type or class name).
    pub fn inject(&mut self, object: &str, block: Block, line: &str) {
        self.injections.push((object.to_string(), block, line.to_string()));
    }

    fn converter_for(&self, cx: &LowerCx<'_>, op: &Operand) -> &dyn Converter {
        match op {
            Operand::Handler(h) => {
                let hc = cx.class_of(*h);
                if let Some(c) = self.converters.get(&hc.template) {
                    return c.as_ref();
                }
                match hc.flavor {
                    HandlerFlavor::Sender => &SenderConverter,
                    HandlerFlavor::Receiver => &ReceiverConverter,
                }
            }
            _ => &DataConverter,
        }
    }

    fn apply_injections(&self, objects: &[&str], doc: &mut VhdlDocument) {
        for (o, b, l) in &self.injections {
            if objects.contains(&o.as_str()) {
                doc.push(*b, l.clone());
            }
        }
    }

    pub fn convert(&self, d: &mut Design) -> Result<Conversion> {
        let items = collect(d);
        if !items.is_empty() {
            d.check_ready()?;
        }
        let mut reg = d.classes.clone();
        let result = self.run(d, &mut reg, &items);
        d.classes = reg;
        result
    }

    fn run(&self, d: &Design, reg: &mut ClassRegistry, items: &[QueueItem]) -> Result<Conversion> {
        let mut st = RunState::default();
        let mut entity_docs: BTreeMap<String, VhdlDocument> = BTreeMap::new();
        let mut queue: Vec<QueueItem> = items.to_vec();
        let mut passes = 0;
        if !items.is_empty() {
            loop {
                passes += 1;
                let mut requeue = Vec::new();
                let mut missing = Vec::new();
                for item in &queue {
                    if let QueueItem::Entity(e) = item {
                        match self.lower_entity_type(d, reg, *e, &mut st)? {
                            Outcome::Done(doc) => {
                                entity_docs.insert(d.entity(*e).type_name.clone(), doc);
                            }
                            Outcome::Missing(m) => {
                                requeue.push(*item);
                                missing.extend(m);
                            }
                        }
                    }
                }
                let progressed = self.materialize_pending(d, reg, &mut st)?;
                if requeue.is_empty() {
                    break;
                }
                if progressed == 0 {
                    let mut seen = BTreeSet::new();
                    missing.retain(|m| seen.insert(m.clone()));
                    return Err(Error::NoProgress(missing));
                }
                queue = requeue;
            }
        }
        self.assemble(d, reg, items, entity_docs, st, passes)
    }

    fn materialize_pending(&self, d: &Design, reg: &mut ClassRegistry, st: &mut RunState) -> Result<usize> {
        let mut n = 0;
        for id in reg.pending_specializations() {
            let s = reg.spec(id).clone();
            let m = reg
                .handler(s.class)
                .method(&s.method)
                .cloned()
                .ok_or_else(|| Error::Template(format!("missing member function {}", s.method)))?;
            let name = proc_name(reg, id);
            let (text, missing) = self.lower_method(d, reg, s.class, &m, &s.arg_types, &name, &mut st.arrays)?;
            if missing.is_empty() {
                st.spec_text.insert(id, text);
                reg.materialize(id);
                n += 1;
            }
        }
        Ok(n)
    }

    #[allow(clippy::too_many_arguments)]
    fn lower_method(
        &self,
        d: &Design,
        reg: &mut ClassRegistry,
        class: HandlerClassId,
        m: &MethodDef,
        arg_types: &[TypeDesc],
        name: &str,
        arrays: &mut BTreeMap<String, TypeDesc>,
    ) -> Result<((String, Vec<String>), Vec<String>)> {
        let hc = reg.handler(class).clone();
        let has_sig = !sig_members(&hc).is_empty();
        let has_var = !var_members(&hc).is_empty();
        let params: Vec<(String, TypeDesc)> = m
            .params
            .iter()
            .zip(arg_types)
            .map(|(p, t)| (legal_identifier(&p.name), t.clone()))
            .collect();
        let mut cx = LowerCx::new(d, reg, self, Mode::Method);
        cx.method = Some(MethodScope {
            class,
            params: params.clone(),
        });
        let mut formals = Vec::new();
        let function = m.is_function();
        if has_sig {
            formals.push(if function {
                format!("signal self_sig : {}_sig", hc.name)
            } else {
                format!("signal self_sig : inout {}_sig", hc.name)
            });
        }
        if has_var {
            formals.push(if function {
                format!("self : {}_var", hc.name)
            } else {
                format!("self : inout {}_var", hc.name)
            });
        }
        for ((n, t), p) in params.iter().zip(&m.params) {
            let tn = cx.type_name(t);
            let mode = match p.mode {
                ParamMode::In => "in",
                ParamMode::InOut => "inout",
            };
            formals.push(format!("{n} : {mode} {tn}"));
        }
        let formals = if formals.is_empty() {
            String::new()
        } else {
            format!("({})", formals.join("; "))
        };
        let (header, body, end) = if let Some(ret) = &m.returns {
            if !m.body.is_empty() {
                return Err(Error::Grammar(format!("function {} has statements", m.name)));
            }
            let (t, ty) = cx.expr(ret, None)?;
            let rt = cx.type_name(&ty);
            (
                format!("function {name}{formals} return {rt}"),
                vec![format!("return {t};")],
                "end function;",
            )
        } else {
            let body = cx.seq_block(&m.body)?;
            (format!("procedure {name}{formals}"), body, "end procedure;")
        };
        let missing = std::mem::take(&mut cx.missing);
        arrays.append(&mut cx.arrays);
        let mut lines = vec![format!("{IND}{header} is"), format!("{IND}begin")];
        lines.extend(indent_by(body, 2));
        lines.push(format!("{IND}{end}"));
        Ok(((header, lines), missing))
    }

    fn lower_entity_type(
        &self,
        d: &Design,
        reg: &mut ClassRegistry,
        e: EntityId,
        st: &mut RunState,
    ) -> Result<Outcome<VhdlDocument>> {
        let ty = &d.entity(e).type_name;
        let mut result: Option<VhdlDocument> = None;
        for (i, inst) in d.entities.iter().enumerate() {
            if &inst.type_name != ty || !inst.ended {
                continue;
            }
            match self.lower_entity(d, reg, EntityId(i as u32), st)? {
                Outcome::Missing(m) => return Ok(Outcome::Missing(m)),
                Outcome::Done(doc) => match &result {
                    None => result = Some(doc),
                    Some(prev) if *prev == doc => {}
                    Some(_) => {
                        return Err(Error::Conversion(format!(
                            "instances of entity type {ty} generate different VHDL (first differing: {})",
                            d.entity_path(EntityId(i as u32))
                        )))
                    }
                },
            }
        }
        Ok(Outcome::Done(result.expect("the queued instance converts")))
    }

    fn lower_entity(
        &self,
        d: &Design,
        reg: &mut ClassRegistry,
        e: EntityId,
        st: &mut RunState,
    ) -> Result<Outcome<VhdlDocument>> {
        let inst = d.entity(e);
        let unit = legal_identifier(&inst.type_name);
        let mut doc = VhdlDocument::new(&unit, false);
        let mut uses = BTreeSet::new();
        let mut taken: BTreeSet<String> = BTreeSet::new();
        for p in &inst.ports {
            taken.insert(p.name().to_string());
        }
        for c in &inst.children {
            taken.insert(d.entity(*c).hdl_name.clone());
        }
        for n in &inst.locals {
            if let Some(x) = &d.node(*n).hdl_name {
                taken.insert(x.clone());
            }
        }
        for h in &inst.handlers {
            taken.insert(d.handler(*h).hdl_name.clone());
        }
        for b in d.bundles.iter().filter(|b| b.owner == e) {
            taken.insert(b.name.clone());
        }
        for p in &inst.processes {
            taken.insert(d.process(*p).hdl_name.clone());
        }
        let nets = build_nets(d, reg, e, &mut taken, &mut uses, &mut st.arrays)?;

        for p in &inst.ports {
            match p {
                Port::Scalar { name, node, direction } => {
                    let t = type_name(reg, &d.node(*node).ty, &mut uses, &mut st.arrays);
                    doc.ports.push(format!("{name} : {} {t}", dir_kw(*direction)));
                }
                Port::Interface { name, bundle } => {
                    let b = d.bundle(*bundle);
                    let ic = reg.interface(b.iface);
                    uses.insert(format!("{}_pkg", ic.name));
                    let side = b.side().expect("port bundles have a side");
                    for flow in [Flow::M2S, Flow::S2M] {
                        if ic.flow_type(flow).is_some() {
                            let sfx = flow_suffix(flow);
                            doc.ports.push(format!(
                                "{name}_{sfx} : {} {}_{sfx}",
                                dir_kw(side.direction(flow)),
                                ic.name
                            ));
                        }
                    }
                }
            }
        }

        let mut decls = nets.decls.clone();
        for n in &inst.locals {
            let node = d.node(*n);
            let name = node.hdl_name.clone().unwrap_or_default();
            let t = type_name(reg, &node.ty, &mut uses, &mut st.arrays);
            let init = literal(reg, &node.init, &node.ty, true, &mut uses, &mut st.arrays)?;
            match node.storage {
                Storage::Signal => decls.push(format!("{IND}signal {name} : {t} := {init};")),
                Storage::Constant => decls.push(format!("{IND}constant {name} : {t} := {init};")),
                Storage::Variable => {}
            }
        }
        for bundle in &d.bundles {
            if bundle.owner != e || !matches!(bundle.kind, BundleKind::HandlerMember { .. }) {
                continue;
            }
            let ic = reg.interface(bundle.iface);
            uses.insert(format!("{}_pkg", ic.name));
            let init = Value::Record(bundle.nodes.iter().map(|n| d.node(*n).init.clone()).collect());
            let init = literal(reg, &init, &ic.full_type(), true, &mut uses, &mut st.arrays)?;
            decls.push(format!("{IND}signal {} : {} := {init};", bundle.name, ic.name));
        }
        for h in &inst.handlers {
            let hc = d.handler_class(*h);
            let sig = sig_members(hc);
            if sig.is_empty() {
                continue;
            }
            uses.insert(format!("{}_pkg", reg.interface(hc.interface).name));
            let init = self.handler_record_init(d, reg, *h, &sig, &mut uses, &mut st.arrays)?;
            decls.push(format!(
                "{IND}signal {}_sig : {}_sig := {init};",
                d.handler(*h).hdl_name,
                hc.name
            ));
        }

        let mut body = Vec::new();
        if let Some(period) = inst.clock_period {
            let half = (period / 2).max(1);
            decls.push(format!("{IND}signal clk_int : std_logic := '0';"));
            body.push(format!("{IND}clk_int <= not clk_int after {half} ns;"));
            body.push(format!("{IND}clk <= clk_int;"));
        }
        for c in &inst.children {
            let child = d.entity(*c);
            let mut maps = Vec::new();
            for p in &child.ports {
                match p {
                    Port::Scalar { name, node, .. } => {
                        maps.push(format!("{name} => {}", node_ref(d, Some(&nets), e, *node)?));
                    }
                    Port::Interface { name, bundle } => {
                        let net = nets
                            .bundle_net
                            .get(bundle)
                            .cloned()
                            .ok_or_else(|| Error::Naming(format!("no net for {}", d.bundle(*bundle).name)))?;
                        let ic = reg.interface(d.bundle(*bundle).iface);
                        for flow in [Flow::M2S, Flow::S2M] {
                            if ic.flow_type(flow).is_some() {
                                let sfx = flow_suffix(flow);
                                maps.push(format!("{name}_{sfx} => {net}_{sfx}"));
                            }
                        }
                    }
                }
            }
            body.push(format!(
                "{IND}{} : entity work.{}",
                child.hdl_name,
                legal_identifier(&child.type_name)
            ));
            if !maps.is_empty() {
                body.push(format!("{IND}{IND}port map ("));
                let n = maps.len();
                for (i, m) in maps.into_iter().enumerate() {
                    let sep = if i + 1 < n { "," } else { "" };
                    body.push(format!("{IND}{IND}{IND}{m}{sep}"));
                }
                body.push(format!("{IND}{IND});"));
            } else {
                body.push(format!("{IND}{IND};"));
            }
        }
        body.extend(nets.assigns.iter().map(|a| format!("{IND}{a}")));

        let mut var_owner: BTreeMap<NodeId, ProcessId> = BTreeMap::new();
        let mut missing = Vec::new();
        for pid in &inst.processes {
            let (lines, m) = self.lower_process(d, reg, e, *pid, &nets, &mut uses, &mut st.arrays, &mut var_owner)?;
            missing.extend(m);
            body.extend(lines);
        }
        if !missing.is_empty() {
            return Ok(Outcome::Missing(missing));
        }
        doc.extend(Block::Libraries, libraries(&uses, None));
        doc.extend(Block::ArchitectureDeclarations, decls);
        doc.extend(Block::ArchitectureBody, body);
        self.apply_injections(&[inst.type_name.as_str()], &mut doc);
        Ok(Outcome::Done(doc))
    }

    fn handler_record_init(
        &self,
        d: &Design,
        reg: &ClassRegistry,
        h: HandlerId,
        members: &[usize],
        uses: &mut BTreeSet<String>,
        arrays: &mut BTreeMap<String, TypeDesc>,
    ) -> Result<String> {
        let hc = d.handler_class(h);
        let ic = reg.interface(hc.interface);
        let mut parts = Vec::new();
        for &i in members {
            let ty = hc.members[i].ty(ic);
            let init = match d.handler(h).slots[i] {
                crate::design::Slot::Node(n) => d.node(n).init.clone(),
                crate::design::Slot::Bundle(_) => Value::init_for(&ty),
            };
            parts.push(format!(
                "{} => {}",
                hc.members[i].name,
                literal(reg, &init, &ty, true, uses, arrays)?
            ));
        }
        Ok(format!("({})", parts.join(", ")))
    }

    #[allow(clippy::too_many_arguments)]
    fn lower_process(
        &self,
        d: &Design,
        reg: &mut ClassRegistry,
        e: EntityId,
        pid: ProcessId,
        nets: &Nets,
        uses: &mut BTreeSet<String>,
        arrays: &mut BTreeMap<String, TypeDesc>,
        var_owner: &mut BTreeMap<NodeId, ProcessId>,
    ) -> Result<(Vec<String>, Vec<String>)> {
        let p = d.process(pid);
        let Body::Tree(stmts) = &p.body else {
            return Err(Error::Conversion(format!(
                "process {} is a native closure and has no hardware description",
                d.process_path(pid)
            )));
        };
        let name = p.hdl_name.clone();
        let owned: Vec<HandlerId> = p
            .handlers
            .iter()
            .copied()
            .filter(|h| d.handler(*h).process == Some(pid))
            .collect();
        match p.kind {
            ProcKind::Combinational if stmts.iter().all(|s| matches!(s, Stmt::Drive(..))) => {
                let mut cx = LowerCx::new(d, reg, self, Mode::Concurrent(e));
                cx.this = p.self_handler;
                cx.nets = Some(nets);
                let mut lines = Vec::new();
                for s in stmts {
                    lines.extend(cx.seq(s)?);
                }
                uses.append(&mut cx.uses);
                arrays.append(&mut cx.arrays);
                Ok((indent(lines), std::mem::take(&mut cx.missing)))
            }
            kind => {
                let mut cx = LowerCx::new(d, reg, self, Mode::Sequential(e));
                cx.this = p.self_handler;
                cx.nets = Some(nets);
                let mut inner = Vec::new();
                for h in &owned {
                    let hn = d.handler(*h).hdl_name.clone();
                    if let Some(view) = d.view_node(*h) {
                        let vname = d.node(view).hdl_name.clone().unwrap_or_default();
                        let ic = cx
                            .reg
                            .interface(d.bundle(d.view_bundle(*h).expect("view").1).iface)
                            .clone();
                        for (i, n) in d.view_incoming(*h) {
                            inner.push(format!(
                                "{vname}.{} := {};",
                                ic.members[i].name,
                                node_ref(d, Some(nets), e, n)?
                            ));
                        }
                    }
                    if cx.class_of(*h).method("_onPull").is_some() {
                        inner.push(format!("onPull({});", cx.handler_args(*h).join(", ")));
                    }
                    let _ = hn;
                }
                inner.extend(cx.seq_block(stmts)?);
                for h in &owned {
                    if cx.class_of(*h).method("_onPush").is_some() {
                        inner.push(format!("onPush({});", cx.handler_args(*h).join(", ")));
                    }
                    if let Some(view) = d.view_node(*h) {
                        let vname = d.node(view).hdl_name.clone().unwrap_or_default();
                        let ic = cx
                            .reg
                            .interface(d.bundle(d.view_bundle(*h).expect("view").1).iface)
                            .clone();
                        for (i, n) in d.view_outgoing(*h) {
                            inner.push(format!(
                                "{} <= {vname}.{};",
                                node_ref(d, Some(nets), e, n)?,
                                ic.members[i].name
                            ));
                        }
                    }
                }
                let mut vars = Vec::new();
                for h in &owned {
                    let hc = cx.class_of(*h).clone();
                    let var = var_members(&hc);
                    if var.is_empty() {
                        continue;
                    }
                    cx.uses.insert(format!("{}_pkg", cx.reg.interface(hc.interface).name));
                    let init = self.handler_record_init(d, cx.reg, *h, &var, &mut cx.uses, &mut cx.arrays)?;
                    vars.push(format!(
                        "variable {} : {}_var := {init};",
                        d.handler(*h).hdl_name,
                        hc.name
                    ));
                }
                for n in std::mem::take(&mut cx.used_vars) {
                    if let Some(prev) = var_owner.insert(n, pid) {
                        if prev != pid {
                            return Err(Error::Conversion(format!(
                                "variable {} is used by more than one process",
                                d.node_path(n)
                            )));
                        }
                    }
                    let node = d.node(n);
                    let t = cx.type_name(&node.ty);
                    let init = cx.literal(&node.init, &node.ty, true)?;
                    vars.push(format!(
                        "variable {} : {t} := {init};",
                        node.hdl_name.clone().unwrap_or_default()
                    ));
                }
                for (n, t) in cx.locals.clone() {
                    let tn = cx.type_name(&t);
                    let init = cx.literal(&Value::zero_for(&t), &t, true)?;
                    vars.push(format!("variable {n} : {tn} := {init};"));
                }
                let mut lines = Vec::new();
                match kind {
                    ProcKind::RisingEdge(clk) => {
                        let c = node_ref(d, Some(nets), e, clk)?;
                        lines.push(format!("{name} : process ({c})"));
                        lines.extend(indent(vars));
                        lines.push("begin".into());
                        lines.push(format!("{IND}if rising_edge({c}) then"));
                        lines.extend(indent_by(inner, 2));
                        lines.push(format!("{IND}end if;"));
                    }
                    ProcKind::Combinational => {
                        let mut sens: Vec<String> = Vec::new();
                        for n in &p.captured {
                            let r = node_ref(d, Some(nets), e, *n)?;
                            let base = r.split(['.', '(']).next().unwrap_or_default().to_string();
                            if !sens.contains(&base) {
                                sens.push(base);
                            }
                        }
                        if sens.is_empty() {
                            lines.push(format!("{name} : process"));
                        } else {
                            lines.push(format!("{name} : process ({})", sens.join(", ")));
                        }
                        lines.extend(indent(vars));
                        lines.push("begin".into());
                        lines.extend(indent(inner));
                        if sens.is_empty() {
                            lines.push(format!("{IND}wait;"));
                        }
                    }
                }
                lines.push("end process;".into());
                uses.append(&mut cx.uses);
                arrays.append(&mut cx.arrays);
                Ok((indent(lines), std::mem::take(&mut cx.missing)))
            }
        }
    }

    fn record_decl(
        reg: &ClassRegistry,
        name: &str,
        fields: &[(String, TypeDesc)],
        uses: &mut BTreeSet<String>,
        arrays: &mut BTreeMap<String, TypeDesc>,
    ) -> Vec<String> {
        let mut v = vec![format!("{IND}type {name} is record")];
        for (n, t) in fields {
            v.push(format!("{IND}{IND}{n} : {};", type_name(reg, t, uses, arrays)));
        }
        v.push(format!("{IND}end record;"));
        v
    }

    fn interface_package(
        &self,
        d: &Design,
        reg: &mut ClassRegistry,
        c: ClassId,
        st: &mut RunState,
    ) -> Result<(VhdlDocument, Vec<String>)> {
        let ic = reg.interface(c).clone();
        let unit = format!("{}_pkg", ic.name);
        let mut doc = VhdlDocument::new(&unit, true);
        let mut uses = BTreeSet::new();
        let mut decl = Vec::new();
        let mut body = Vec::new();
        let fields: Vec<(String, TypeDesc)> = ic.members.iter().map(|m| (m.name.clone(), m.ty.clone())).collect();
        decl.extend(Self::record_decl(reg, &ic.name, &fields, &mut uses, &mut st.arrays));
        for flow in [Flow::M2S, Flow::S2M] {
            if let Some(TypeDesc::Record(r)) = ic.flow_type(flow) {
                decl.extend(Self::record_decl(reg, &r.name, &r.fields, &mut uses, &mut st.arrays));
            }
        }
        let mut sources = vec![ic.name.clone()];
        let handlers: Vec<HandlerClassId> = d
            .register
            .iter()
            .filter_map(|r| match r {
                RegEntry::Class(ClassRef::Handler(h)) if reg.handler(*h).interface == c => Some(*h),
                _ => None,
            })
            .collect();
        for h in handlers {
            let hc = reg.handler(h).clone();
            sources.push(hc.name.clone());
            for (sfx, members) in [("sig", sig_members(&hc)), ("var", var_members(&hc))] {
                if members.is_empty() {
                    continue;
                }
                let fields: Vec<(String, TypeDesc)> = members
                    .iter()
                    .map(|&i| (hc.members[i].name.clone(), hc.members[i].ty(&ic)))
                    .collect();
                decl.extend(Self::record_decl(
                    reg,
                    &format!("{}_{sfx}", hc.name),
                    &fields,
                    &mut uses,
                    &mut st.arrays,
                ));
            }
            let mut subprograms: Vec<(String, Vec<String>)> = Vec::new();
            for m in hc.methods.iter().filter(|m| m.params.is_empty()) {
                let name = legal_identifier(&m.name);
                let (text, missing) = self.lower_method(d, reg, h, m, &[], &name, &mut st.arrays)?;
                if !missing.is_empty() {
                    return Err(Error::NoProgress(missing));
                }
                subprograms.push(text);
            }
            for s in reg.specs_of(h).filter(|s| s.materialized) {
                let text = st
                    .spec_text
                    .get(&s.id)
                    .cloned()
                    .ok_or_else(|| Error::Conversion(format!("{} was never emitted", s.signature(reg))))?;
                for t in &s.arg_types {
                    type_name(reg, t, &mut uses, &mut st.arrays);
                }
                subprograms.push(text);
            }
            for (header, lines) in subprograms {
                decl.push(format!("{IND}{header};"));
                if !body.is_empty() {
                    body.push(String::new());
                }
                body.extend(lines);
            }
            if let Some(conv) = self.converters.get(&hc.template) {
                for b in BLOCKS {
                    doc.extend(b, conv.inject(b));
                }
            }
        }
        uses.remove(&unit);
        let mut libs = libraries(&uses, Some(&unit));
        libs.extend(doc.lines(Block::Libraries).iter().cloned());
        let injected_decl = doc.lines(Block::PackageDeclaration).to_vec();
        let injected_body = doc.lines(Block::PackageBody).to_vec();
        let mut out = VhdlDocument::new(&unit, true);
        out.extend(Block::Libraries, libs);
        out.extend(Block::PackageDeclaration, decl.into_iter().chain(injected_decl));
        out.extend(Block::PackageBody, body.into_iter().chain(injected_body));
        let names: Vec<&str> = sources.iter().map(|s| s.as_str()).collect();
        self.apply_injections(&names, &mut out);
        Ok((out, sources))
    }

    fn type_package(
        &self,
        reg: &ClassRegistry,
        name: &str,
        ty: &TypeDesc,
        arrays: &mut BTreeMap<String, TypeDesc>,
    ) -> VhdlDocument {
        let unit = format!("{name}_pkg");
        let mut doc = VhdlDocument::new(&unit, true);
        let mut uses = BTreeSet::new();
        let decl = match ty {
            TypeDesc::Record(r) => Self::record_decl(reg, name, &r.fields, &mut uses, arrays),
            TypeDesc::Array { elem, len } => {
                let et = type_name(reg, elem, &mut uses, arrays);
                vec![format!("{IND}type {name} is array (0 to {}) of {et};", len - 1)]
            }
            _ => Vec::new(),
        };
        uses.remove(&unit);
        doc.extend(Block::Libraries, libraries(&uses, Some(&unit)));
        doc.extend(Block::PackageDeclaration, decl);
        self.apply_injections(&[name], &mut doc);
        doc
    }

    fn assemble(
        &self,
        d: &Design,
        reg: &mut ClassRegistry,
        items: &[QueueItem],
        mut entity_docs: BTreeMap<String, VhdlDocument>,
        mut st: RunState,
        passes: usize,
    ) -> Result<Conversion> {
        let mut files = Vec::new();
        let mut queue_names = Vec::new();
        for item in items {
            queue_names.push(match *item {
                QueueItem::Entity(e) => d.entity(e).type_name.clone(),
                QueueItem::Interface(c) => reg.interface(c).name.clone(),
                QueueItem::Handler(h) => reg.handler(h).name.clone(),
                QueueItem::Record(r) => reg.records[r as usize].name.clone(),
            });
            match *item {
                QueueItem::Entity(e) => {
                    let tn = d.entity(e).type_name.clone();
                    let doc = entity_docs
                        .remove(&tn)
                        .ok_or_else(|| Error::Conversion(format!("{tn} was not converted")))?;
                    let sources = d
                        .entities
                        .iter()
                        .enumerate()
                        .filter(|(_, x)| x.type_name == tn)
                        .map(|(i, _)| d.entity_path(EntityId(i as u32)))
                        .collect();
                    files.push(VhdlFile {
                        file: format!("{}.vhd", doc.unit),
                        kind: "entity",
                        unit: doc.unit.clone(),
                        sources,
                        text: doc.render(),
                    });
                }
                QueueItem::Interface(c) => {
                    let (doc, sources) = self.interface_package(d, reg, c, &mut st)?;
                    files.push(VhdlFile {
                        file: format!("{}.vhd", doc.unit),
                        kind: "package",
                        unit: doc.unit.clone(),
                        sources,
                        text: doc.render(),
                    });
                }
                QueueItem::Handler(_) => {}
                QueueItem::Record(r) => {
                    let rt = reg.records[r as usize].clone();
                    if reg.find_interface(&rt.name).is_some() {
                        continue;
                    }
                    let doc = self.type_package(reg, &rt.name, &TypeDesc::Record(rt.clone()), &mut st.arrays);
                    files.push(VhdlFile {
                        file: format!("{}.vhd", doc.unit),
                        kind: "package",
                        unit: doc.unit.clone(),
                        sources: vec![rt.name.clone()],
                        text: doc.render(),
                    });
                }
            }
        }
        let mut done = BTreeSet::new();
        loop {
            let pending: Vec<(String, TypeDesc)> = st
                .arrays
                .iter()
                .filter(|(n, _)| !done.contains(*n))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect();
            if pending.is_empty() {
                break;
            }
            for (n, t) in pending {
                let doc = self.type_package(reg, &n, &t, &mut st.arrays);
                files.push(VhdlFile {
                    file: format!("{}.vhd", doc.unit),
                    kind: "package",
                    unit: doc.unit.clone(),
                    sources: vec![n.clone()],
                    text: doc.render(),
                });
                done.insert(n);
            }
        }
        let specializations = reg
            .specializations
            .iter()
            .filter(|s| s.materialized)
            .map(|s| s.signature(reg))
            .collect();
        let top = match d.top {
            Some(t) => d.entity(t).type_name.clone(),
            None => String::new(),
        };
        let manifest = Manifest {
            top,
            passes,
            queue: queue_names.clone(),
            files: files.clone(),
            specializations,
        };
        Ok(Conversion {
            files,
            passes,
            queue: queue_names,
            manifest,
        })
    }
}

fn dir_kw(d: Direction) -> &'static str {
    match d {
        Direction::In => "in",
        Direction::Out => "out",
    }
}

/// Converts the design with the default hooks.
pub fn convert(d: &mut Design) -> Result<Conversion> {
    Backend::new().convert(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn names(c: &Conversion) -> Vec<&str> {
        c.files.iter().map(|f| f.file.as_str()).collect()
    }

    #[test]
    fn counter_tb_files_and_passes() {
        let mut d = corpus::build("counter_tb").unwrap();
        let c = convert(&mut d).unwrap();
        assert_eq!(c.passes, 2);
        let mut n = names(&c);
        n.sort();
        assert_eq!(
            n,
            ["Counter.vhd", "axiStream_32_pkg.vhd", "clk_generator.vhd", "tb.vhd"]
        );
        let mut q = c.queue.clone();
        q.sort();
        assert_eq!(
            q,
            ["Counter", "axiStream_32", "axisStream_sender_32", "clk_generator", "tb"]
        );
        let counter = &c.file("Counter.vhd").unwrap().text;
        assert!(counter.contains("send_data(data_out, data);"));
        assert!(counter.contains("data <= data + 1;"));
        assert!(counter.contains("Dout_m2s : out axiStream_32_m2s"));
        assert!(counter.contains("Dout_s2m : in axiStream_32_s2m"));
        assert!(c.files.iter().all(|f| !f.text.contains(MISSING_TEMPLATE)));
    }

    #[test]
    fn conversion_is_deterministic() {
        for name in corpus::DESIGNS {
            let a = convert(&mut corpus::build(name).unwrap()).unwrap();
            let b = convert(&mut corpus::build(name).unwrap()).unwrap();
            assert!(a.passes <= 3, "{name}");
            assert_eq!(names(&a), names(&b));
            for (x, y) in a.files.iter().zip(&b.files) {
                assert_eq!(x.text, y.text, "{name}: {}", x.file);
            }
            assert_eq!(a.manifest_json(), b.manifest_json());
        }
    }

    #[test]
    fn empty_session_has_empty_queue() {
        let d = Design::default();
        assert!(collect(&d).is_empty());
    }

    #[test]
    fn receiver_reads_go_through_typed_buffers() {
        let mut d = corpus::build("optional_t").unwrap();
        let c = convert(&mut d).unwrap();
        let tb = &c.file("tb.vhd").unwrap().text;
        assert!(tb.contains("variable cnt_out_buff : std_logic_vector(31 downto 0)"));
        assert!(tb.contains("variable cnt_out_buff_1 : optional_t_32"));
        assert!(tb.contains("read_data(cnt_out, cnt_out_buff_1);"));
        let pkg = &c.file("axiStream_32_pkg.vhd").unwrap().text;
        assert!(pkg.contains("rhs : inout optional_t_32"));
        assert!(pkg.contains("rhs.valid := '0';"));
        assert!(c.file("optional_t_32_pkg.vhd").is_some());
    }

    #[test]
    fn free_type_members_stay_out_of_handler_records() {
        let mut d = corpus::build("native_fifo").unwrap();
        let c = convert(&mut d).unwrap();
        let pkg = &c.file("NativeFifo_32_pkg.vhd").unwrap().text;
        assert!(pkg.contains("type NativeFIFO_in_32_var is record"));
        assert!(!pkg.contains("NativeFIFO_in_32_sig"));
        assert!(!pkg.contains("rx1 :") && !pkg.contains("rx2 :"));
        let reader = &c.file("fifo_reader.vhd").unwrap().text;
        assert!(reader.contains("signal fifo_in_rx1 : NativeFifo_32"));
        assert!(reader.contains("Din_s2m.enable <= fifo_in_rx1.enable when Din_m2s.empty = '0' else '0';"));
    }

    struct NeverReady;
    impl Converter for NeverReady {
        fn reassign(&self, cx: &mut LowerCx<'_>, lhs: &Operand, _rhs: Rendered) -> Result<Vec<String>> {
            let Operand::Handler(h) = lhs else { unreachable!() };
            let class = cx.d.handler(*h).class;
            assert!(cx.request(class, "send_data", &[TypeDesc::Vector(16)]).is_none());
            Ok(vec![format!("{MISSING_TEMPLATE};")])
        }
    }

    #[test]
    fn unsatisfiable_request_reports_no_progress() {
        let mut d = corpus::build("counter_tb").unwrap();
        let mut b = Backend::new();
        b.register_converter(crate::classes::protocols::AXI_SENDER, Box::new(NeverReady));
        match b.convert(&mut d) {
            Err(Error::NoProgress(sigs)) => {
                assert_eq!(sigs.len(), 1);
                assert!(sigs[0].contains("send_data"), "{sigs:?}");
            }
            other => panic!("expected no progress, got {other:?}"),
        }
    }

    #[test]
    fn injections_land_in_their_block() {
        let mut d = corpus::build("counter_tb").unwrap();
        let mut b = Backend::new();
        b.inject(
            "Counter",
            Block::ArchitectureDeclarations,
            "    signal probe : std_logic;",
        );
        let c = b.convert(&mut d).unwrap();
        let t = &c.file("Counter.vhd").unwrap().text;
        let decl = t.find("signal probe").unwrap();
        assert!(decl > t.find("architecture rtl").unwrap() && decl < t.find("begin").unwrap());
    }

    #[test]
    fn literals_follow_width_rules() {
        let reg = ClassRegistry::default();
        let (mut u, mut a) = (BTreeSet::new(), BTreeMap::new());
        let v = TypeDesc::Vector(32);
        assert_eq!(
            literal(&reg, &Value::Integer(0), &v, true, &mut u, &mut a).unwrap(),
            "(others => '0')"
        );
        assert_eq!(
            literal(&reg, &Value::Integer(7), &v, true, &mut u, &mut a).unwrap(),
            "std_logic_vector(to_unsigned(7, 32))"
        );
        assert_eq!(
            literal(&reg, &Value::Integer(7), &v, false, &mut u, &mut a).unwrap(),
            "7"
        );
        let big = literal(&reg, &Value::Integer(1 << 31), &v, false, &mut u, &mut a).unwrap();
        assert_eq!(big, format!("\"1{}\"", "0".repeat(31)));
        assert_eq!(
            literal(&reg, &Value::Integer(1), &TypeDesc::Logic, false, &mut u, &mut a).unwrap(),
            "'1'"
        );
        assert!(literal(&reg, &Value::Integer(2), &TypeDesc::Logic, false, &mut u, &mut a).is_err());
    }
}
