//! Restricted statement/expression tree in which process bodies and handler
//! member functions are written. The simulator interprets it and the VHDL
//! backend lowers it, so both views of a body always agree.

use std::ops;

use crate::design::HandlerId;
use crate::signals::{BinOp, NodeId, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum Root {
    Node(NodeId),
    Handler(HandlerId),
    /// The handler object inside one of its member functions.
    SelfObj,
    /// Positional parameter of a member function.
    Param(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub root: Root,
    pub members: Vec<String>,
}

impl Path {
    pub fn node(id: NodeId) -> Path {
        Path {
            root: Root::Node(id),
            members: Vec::new(),
        }
    }

    pub fn handler(h: HandlerId) -> Path {
        Path {
            root: Root::Handler(h),
            members: Vec::new(),
        }
    }

    pub fn this(members: &[&str]) -> Path {
        Path {
            root: Root::SelfObj,
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn param(i: usize) -> Path {
        Path {
            root: Root::Param(i),
            members: Vec::new(),
        }
    }

    pub fn member(mut self, name: &str) -> Path {
        self.members.push(name.to_string());
        self
    }

    pub fn is_whole_handler(&self) -> Option<HandlerId> {
        match self.root {
            Root::Handler(h) if self.members.is_empty() => Some(h),
            _ => None,
        }
    }
}

impl From<NodeId> for Path {
    fn from(id: NodeId) -> Path {
        Path::node(id)
    }
}

impl From<HandlerId> for Path {
    fn from(h: HandlerId) -> Path {
        Path::handler(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Ref(Path),
    Const(Value),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Switch {
        default: Box<Expr>,
        cases: Vec<(Expr, Expr)>,
    },
    Truthiness(Path),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Drive(Path, Expr),
    If {
        cond: Expr,
        then: Vec<Stmt>,
        elifs: Vec<(Expr, Vec<Stmt>)>,
        els: Vec<Stmt>,
    },
    Call {
        object: Path,
        member: String,
        args: Vec<Expr>,
    },
}

impl Stmt {
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        if let Stmt::If { then, elifs, els, .. } = self {
            for s in then.iter().chain(elifs.iter().flat_map(|(_, b)| b)).chain(els) {
                s.walk(f);
            }
        }
    }

    /// Every expression that appears directly in this statement.
    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Stmt::Drive(_, e) => vec![e],
            Stmt::If { cond, elifs, .. } => std::iter::once(cond).chain(elifs.iter().map(|(c, _)| c)).collect(),
            Stmt::Call { args, .. } => args.iter().collect(),
        }
    }
}

impl Expr {
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Bin(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            Expr::Not(e) => e.walk(f),
            Expr::Switch { default, cases } => {
                default.walk(f);
                for (c, v) in cases {
                    c.walk(f);
                    v.walk(f);
                }
            }
            _ => {}
        }
    }

    fn bin(self, op: BinOp, rhs: impl Into<Expr>) -> Expr {
        Expr::Bin(op, Box::new(self), Box::new(rhs.into()))
    }

    pub fn eq(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Eq, rhs)
    }
    pub fn ne(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Ne, rhs)
    }
    pub fn lt(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Lt, rhs)
    }
    pub fn le(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Le, rhs)
    }
    pub fn gt(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Gt, rhs)
    }
    pub fn ge(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Ge, rhs)
    }
    pub fn and(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::And, rhs)
    }
    pub fn or(self, rhs: impl Into<Expr>) -> Expr {
        self.bin(BinOp::Or, rhs)
    }
}

impl From<NodeId> for Expr {
    fn from(id: NodeId) -> Expr {
        Expr::Ref(Path::node(id))
    }
}

impl From<HandlerId> for Expr {
    fn from(h: HandlerId) -> Expr {
        Expr::Ref(Path::handler(h))
    }
}

impl From<Path> for Expr {
    fn from(p: Path) -> Expr {
        Expr::Ref(p)
    }
}

impl From<i64> for Expr {
    fn from(i: i64) -> Expr {
        Expr::Const(Value::Integer(i))
    }
}

impl From<Value> for Expr {
    fn from(v: Value) -> Expr {
        Expr::Const(v)
    }
}

impl<R: Into<Expr>> ops::Add<R> for Expr {
    type Output = Expr;
    fn add(self, rhs: R) -> Expr {
        self.bin(BinOp::Add, rhs)
    }
}

impl<R: Into<Expr>> ops::Sub<R> for Expr {
    type Output = Expr;
    fn sub(self, rhs: R) -> Expr {
        self.bin(BinOp::Sub, rhs)
    }
}

impl ops::Not for Expr {
    type Output = Expr;
    fn not(self) -> Expr {
        Expr::Not(Box::new(self))
    }
}

/// `target << value`
pub fn drive(target: impl Into<Path>, value: impl Into<Expr>) -> Stmt {
    Stmt::Drive(target.into(), value.into())
}

/// `handler >> target`: read the handler's data into `target`.
pub fn stream_out(handler: HandlerId, target: impl Into<Path>) -> Stmt {
    Stmt::Drive(target.into(), Expr::Ref(Path::handler(handler)))
}

pub fn reset(target: impl Into<Path>) -> Stmt {
    call(target, "reset", vec![])
}

pub fn call(object: impl Into<Path>, member: &str, args: Vec<Expr>) -> Stmt {
    Stmt::Call {
        object: object.into(),
        member: member.to_string(),
        args,
    }
}

pub fn if_(cond: impl Into<Expr>, then: Vec<Stmt>) -> Stmt {
    Stmt::If {
        cond: cond.into(),
        then,
        elifs: Vec::new(),
        els: Vec::new(),
    }
}

pub fn if_else(cond: impl Into<Expr>, then: Vec<Stmt>, els: Vec<Stmt>) -> Stmt {
    Stmt::If {
        cond: cond.into(),
        then,
        elifs: Vec::new(),
        els,
    }
}

pub fn truthy(handler: HandlerId) -> Expr {
    Expr::Truthiness(Path::handler(handler))
}

pub fn v_case(cond: impl Into<Expr>, value: impl Into<Expr>) -> (Expr, Expr) {
    (cond.into(), value.into())
}

pub fn v_switch(default: impl Into<Expr>, cases: Vec<(Expr, Expr)>) -> Expr {
    Expr::Switch {
        default: Box::new(default.into()),
        cases,
    }
}

pub fn e(x: impl Into<Expr>) -> Expr {
    x.into()
}

pub fn this(members: &[&str]) -> Path {
    Path::this(members)
}

pub fn param(i: usize) -> Path {
    Path::param(i)
}
