//! Interpreter for statement trees, shared by all processes and handler
//! member functions during simulation.

use std::collections::BTreeSet;

use crate::classes::ParamMode;
use crate::design::{Design, HandlerId, Resolved};
use crate::error::{Error, Result};
use crate::signals::{self, assign_into, reset_value, NodeId, SignalNode, Storage, TypeDesc, Value};
use crate::stmt::{Expr, Path, Stmt};

/// Live node storage. Connected nodes share the value of their alias root.
pub struct Kernel {
    pub nodes: Vec<SignalNode>,
    pub root: Vec<NodeId>,
    pub dirty: BTreeSet<NodeId>,
}

impl Kernel {
    pub fn new(d: &Design) -> Kernel {
        let nodes = d.nodes.clone();
        let root = (0..nodes.len() as u32).map(|i| d.alias_root(NodeId(i))).collect();
        Kernel {
            nodes,
            root,
            dirty: BTreeSet::new(),
        }
    }

    pub fn root_of(&self, n: NodeId) -> NodeId {
        self.root[n.index()]
    }

    pub fn value(&self, n: NodeId) -> &Value {
        &self.nodes[self.root_of(n).index()].current
    }

    pub fn read(&self, n: NodeId, fields: &[usize]) -> Result<Value> {
        self.nodes[self.root_of(n).index()].read_at(fields).cloned()
    }

    pub fn drive(&mut self, n: NodeId, fields: &[usize], v: Value) -> Result<()> {
        let r = self.root_of(n);
        let node = &mut self.nodes[r.index()];
        node.drive_at(fields, v)?;
        if node.storage == Storage::Signal {
            self.dirty.insert(r);
        }
        Ok(())
    }

    pub fn reset(&mut self, n: NodeId, fields: &[usize]) -> Result<()> {
        let r = self.root_of(n);
        let node = &mut self.nodes[r.index()];
        node.reset_at(fields)?;
        if node.storage == Storage::Signal {
            self.dirty.insert(r);
        }
        Ok(())
    }

    fn ty_at(&self, n: NodeId, fields: &[usize]) -> Result<TypeDesc> {
        self.nodes[self.root_of(n).index()]
            .ty
            .at_path(fields)
            .cloned()
            .ok_or_else(|| Error::Type("invalid member path".into()))
    }
}

#[derive(Clone, Debug)]
enum Place {
    Node { node: NodeId, fields: Vec<usize> },
    Temp { slot: usize, fields: Vec<usize> },
}

#[derive(Clone, Debug)]
enum Arg {
    Value(TypeDesc, Value),
    Place(Place),
}

struct Frame {
    this: Option<HandlerId>,
    args: Vec<Arg>,
}

/// Executes statements against a kernel.
pub struct Exec<'a> {
    pub d: &'a Design,
    pub k: &'a mut Kernel,
    temps: Vec<(TypeDesc, Value)>,
}

impl<'a> Exec<'a> {
    pub fn new(d: &'a Design, k: &'a mut Kernel) -> Exec<'a> {
        Exec {
            d,
            k,
            temps: Vec::new(),
        }
    }

    /// Runs a statement list, with `this` bound for handler-owned blocks.
    pub fn run(&mut self, stmts: &[Stmt], this: Option<HandlerId>) -> Result<()> {
        let f = Frame { this, args: Vec::new() };
        self.block(stmts, &f)
    }

    fn block(&mut self, stmts: &[Stmt], f: &Frame) -> Result<()> {
        for s in stmts {
            self.stmt(s, f)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, f: &Frame) -> Result<()> {
        match s {
            Stmt::Drive(target, value) => {
                let src_handler = match value {
                    Expr::Ref(p) => match self.d.resolve(p, f.this)? {
                        Resolved::Handler(h) => Some(h),
                        _ => None,
                    },
                    _ => None,
                };
                match (self.d.resolve(target, f.this)?, src_handler) {
                    (Resolved::Handler(dst), src) => {
                        let v = match src {
                            Some(h) => self.receive_value(h)?,
                            None => self.eval(value, f)?,
                        };
                        self.send(dst, v)
                    }
                    (_, Some(h)) => {
                        let place = self.place(target, f)?;
                        self.call(h, "read_data", vec![Arg::Place(place)]).map(|_| ())
                    }
                    (_, None) => {
                        let v = self.eval(value, f)?;
                        let place = self.place(target, f)?;
                        self.write(&place, v)
                    }
                }
            }
            Stmt::If { cond, then, elifs, els } => {
                if self.eval(cond, f)?.truthy()? {
                    return self.block(then, f);
                }
                for (c, b) in elifs {
                    if self.eval(c, f)?.truthy()? {
                        return self.block(b, f);
                    }
                }
                self.block(els, f)
            }
            Stmt::Call { object, member, args } => match self.d.resolve(object, f.this)? {
                Resolved::Handler(h) => {
                    let m = self
                        .d
                        .handler_class(h)
                        .method(member)
                        .ok_or_else(|| Error::Grammar(format!("no member function {member}")))?;
                    let mut bound = Vec::new();
                    for (p, a) in m.params.iter().zip(args) {
                        bound.push(match (p.mode, a) {
                            (ParamMode::InOut, Expr::Ref(path)) => Arg::Place(self.place(path, f)?),
                            (ParamMode::InOut, _) => {
                                return Err(Error::Grammar(format!("argument {} must be a place", p.name)))
                            }
                            (ParamMode::In, e) => {
                                let v = self.eval(e, f)?;
                                let t = v.scalar_type().unwrap_or(TypeDesc::Integer);
                                Arg::Value(t, v)
                            }
                        });
                    }
                    self.call(h, member, bound).map(|_| ())
                }
                _ if member == "reset" => {
                    let place = self.place(object, f)?;
                    self.reset(&place)
                }
                _ => Err(Error::Grammar(format!("unsupported call {member}"))),
            },
        }
    }

    fn place(&mut self, path: &Path, f: &Frame) -> Result<Place> {
        match self.d.resolve(path, f.this)? {
            Resolved::Node { node, fields } => Ok(Place::Node { node, fields }),
            Resolved::Handler(_) => Err(Error::Grammar("handler used as a data place".into())),
            Resolved::Param { index, fields } => {
                let arg = f
                    .args
                    .get(index)
                    .ok_or_else(|| Error::Grammar(format!("parameter {index} not bound")))?;
                match arg {
                    Arg::Place(p) => {
                        let ty = self.place_type(p)?;
                        let more = ty.resolve_path(&fields)?;
                        Ok(match p.clone() {
                            Place::Node { node, fields: mut fs } => {
                                fs.extend(more);
                                Place::Node { node, fields: fs }
                            }
                            Place::Temp { slot, fields: mut fs } => {
                                fs.extend(more);
                                Place::Temp { slot, fields: fs }
                            }
                        })
                    }
                    Arg::Value(..) => Err(Error::Storage("input parameter is read-only".into())),
                }
            }
        }
    }

    fn place_type(&self, p: &Place) -> Result<TypeDesc> {
        match p {
            Place::Node { node, fields } => self.k.ty_at(*node, fields),
            Place::Temp { slot, fields } => self.temps[*slot]
                .0
                .at_path(fields)
                .cloned()
                .ok_or_else(|| Error::Type("invalid member path".into())),
        }
    }

    fn write(&mut self, p: &Place, v: Value) -> Result<()> {
        match p {
            Place::Node { node, fields } => self.k.drive(*node, fields, v),
            Place::Temp { slot, fields } => {
                let ty = self.place_type(p)?;
                let (_, base) = &mut self.temps[*slot];
                let cur = base
                    .get_mut(fields)
                    .ok_or_else(|| Error::Type("invalid member path".into()))?;
                *cur = assign_into(&ty, cur, v)?;
                Ok(())
            }
        }
    }

    fn reset(&mut self, p: &Place) -> Result<()> {
        match p {
            Place::Node { node, fields } => self.k.reset(*node, fields),
            Place::Temp { slot, fields } => {
                let ty = self.place_type(p)?;
                let (_, base) = &mut self.temps[*slot];
                let cur = base
                    .get_mut(fields)
                    .ok_or_else(|| Error::Type("invalid member path".into()))?;
                *cur = reset_value(&ty, cur);
                Ok(())
            }
        }
    }

    fn read_place(&self, p: &Place) -> Result<Value> {
        match p {
            Place::Node { node, fields } => self.k.read(*node, fields),
            Place::Temp { slot, fields } => self.temps[*slot]
                .1
                .get(fields)
                .cloned()
                .ok_or_else(|| Error::Type("invalid member path".into())),
        }
    }

    fn eval(&mut self, e: &Expr, f: &Frame) -> Result<Value> {
        match e {
            Expr::Ref(p) => match self.d.resolve(p, f.this)? {
                Resolved::Handler(_) => Err(Error::Grammar("handler used as a value".into())),
                Resolved::Param { index, fields } => match f.args.get(index) {
                    Some(Arg::Value(t, v)) => {
                        let idx = t.resolve_path(&fields)?;
                        v.get(&idx)
                            .cloned()
                            .ok_or_else(|| Error::Type("invalid member path".into()))
                    }
                    Some(Arg::Place(_)) => {
                        let place = self.place(p, f)?;
                        self.read_place(&place)
                    }
                    None => Err(Error::Grammar(format!("parameter {index} not bound"))),
                },
                Resolved::Node { node, fields } => self.k.read(node, &fields),
            },
            Expr::Const(v) => Ok(v.clone()),
            Expr::Bin(op, l, r) => {
                let a = self.eval(l, f)?;
                let b = self.eval(r, f)?;
                signals::binop(*op, &a, &b)
            }
            Expr::Not(x) => {
                let v = self.eval(x, f)?;
                signals::not(&v)
            }
            Expr::Switch { default, cases } => {
                let dv = self.eval(default, f)?;
                let mut cs = Vec::with_capacity(cases.len());
                for (c, v) in cases {
                    let cond = self.eval(c, f)?.truthy()?;
                    cs.push((cond, self.eval(v, f)?));
                }
                signals::v_switch(dv, &cs)
            }
            Expr::Truthiness(p) => match self.d.resolve(p, f.this)? {
                Resolved::Handler(h) => Ok(Value::Boolean(self.truthy(h)?)),
                _ => Err(Error::Truthiness("truthiness of a non-handler".into())),
            },
        }
    }

    /// Invokes a member function of a handler; returns the function result.
    fn call(&mut self, h: HandlerId, method: &str, args: Vec<Arg>) -> Result<Option<Value>> {
        let hc = self.d.handler_class(h);
        let m = hc
            .method(method)
            .ok_or_else(|| Error::Grammar(format!("{} has no member function {method}", hc.name)))?;
        let frame = Frame { this: Some(h), args };
        self.block(&m.body, &frame)?;
        match &m.returns {
            Some(r) => Ok(Some(self.eval(r, &frame)?)),
            None => Ok(None),
        }
    }

    pub fn truthy(&mut self, h: HandlerId) -> Result<bool> {
        if self.d.handler_class(h).method("truthiness").is_none() {
            return Err(Error::Truthiness(format!(
                "{} defines no truth predicate",
                self.d.handler_class(h).name
            )));
        }
        self.call(h, "truthiness", Vec::new())?
            .ok_or_else(|| Error::Truthiness("predicate returned nothing".into()))?
            .truthy()
    }

    fn data_type(&self, h: HandlerId) -> Result<TypeDesc> {
        let ic = self.d.classes.interface(self.d.handler_class(h).interface);
        ic.data_type()
            .cloned()
            .ok_or_else(|| Error::Template(format!("{} has no data member", ic.name)))
    }

    /// `handler << value`
    pub fn send(&mut self, h: HandlerId, v: Value) -> Result<()> {
        let v = match v {
            Value::Integer(_) => v.coerce(&self.data_type(h)?)?,
            v => v,
        };
        let t = v.scalar_type().map_or_else(|| self.data_type(h), Ok)?;
        self.call(h, "send_data", vec![Arg::Value(t, v)]).map(|_| ())
    }

    /// `handler >> tmp`, returning the value left in `tmp`.
    pub fn receive_value(&mut self, h: HandlerId) -> Result<Value> {
        let t = self.data_type(h)?;
        let slot = self.temps.len();
        self.temps.push((t.clone(), Value::zero_for(&t)));
        self.call(
            h,
            "read_data",
            vec![Arg::Place(Place::Temp {
                slot,
                fields: Vec::new(),
            })],
        )?;
        let (_, v) = self.temps.pop().expect("temp slot");
        Ok(v)
    }

    /// Copies incoming interface members into the handler view and runs `_onPull`.
    pub fn pull(&mut self, h: HandlerId) -> Result<()> {
        if let Some(view) = self.d.view_node(h) {
            for (i, n) in self.d.view_incoming(h) {
                let v = self.k.value(n).clone();
                self.k.drive(view, &[i], v)?;
            }
        }
        if self.d.handler_class(h).method("_onPull").is_some() {
            self.call(h, "_onPull", Vec::new())?;
        }
        Ok(())
    }

    /// Runs `_onPush` and copies outgoing view members to their signals.
    pub fn push(&mut self, h: HandlerId) -> Result<()> {
        if self.d.handler_class(h).method("_onPush").is_some() {
            self.call(h, "_onPush", Vec::new())?;
        }
        if let Some(view) = self.d.view_node(h) {
            for (i, n) in self.d.view_outgoing(h) {
                let v = self.k.read(view, &[i])?;
                self.k.drive(n, &[], v)?;
            }
        }
        Ok(())
    }
}

/// API available to native (closure) processes.
pub struct ProcCtx<'a> {
    pub(crate) ex: Exec<'a>,
}

impl ProcCtx<'_> {
    pub fn read(&self, n: NodeId) -> Value {
        self.ex.k.value(n).clone()
    }

    pub fn read_u128(&self, n: NodeId) -> Result<u128> {
        let v = self.read(n);
        v.as_u128()
            .ok_or_else(|| Error::Type(format!("{v} has no numeric value")))
    }

    pub fn drive(&mut self, n: NodeId, v: impl Into<Value>) -> Result<()> {
        self.ex.k.drive(n, &[], v.into())
    }

    pub fn truthy(&mut self, h: HandlerId) -> Result<bool> {
        self.ex.truthy(h)
    }

    pub fn send(&mut self, h: HandlerId, v: impl Into<Value>) -> Result<()> {
        self.ex.send(h, v.into())
    }

    /// Reads one word if the handler holds one.
    pub fn receive(&mut self, h: HandlerId) -> Result<Option<Value>> {
        if !self.ex.truthy(h)? {
            return Ok(None);
        }
        self.ex.receive_value(h).map(Some)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Logic(signals::Logic::from_bool(b))
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Value {
        Value::Integer(i)
    }
}
