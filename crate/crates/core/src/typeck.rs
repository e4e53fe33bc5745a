//! Static typing of statement trees. Used when process bodies are captured
//! and when member functions are specialized for concrete argument types.

use crate::classes::{ClassRegistry, HandlerClass, HandlerClassId, HandlerFlavor, ParamMode};
use crate::design::HandlerId;
use crate::error::{Error, Result};
use crate::signals::{assignable, BinOp, Storage, TypeDesc, Value};
use crate::stmt::{Expr, Path, Root, Stmt};

#[derive(Clone, Debug, PartialEq)]
pub enum PlaceKind {
    Data(TypeDesc, Storage),
    Handler(HandlerClassId),
}

pub trait TypeEnv {
    /// Resolves the root of a path, possibly consuming leading member names.
    /// Returns the place kind reached and how many members were consumed.
    fn root(&self, root: &Root, members: &[String]) -> Result<(PlaceKind, usize)>;

    fn handler_class(&self, h: HandlerId) -> Result<&HandlerClass>;

    fn registry(&self) -> &ClassRegistry;
}

pub fn place_kind(env: &dyn TypeEnv, path: &Path) -> Result<PlaceKind> {
    let (kind, used) = env.root(&path.root, &path.members)?;
    let rest = &path.members[used..];
    match kind {
        PlaceKind::Data(ty, storage) => {
            let mut t = &ty;
            for m in rest {
                t = t
                    .field(m)
                    .map(|(_, t)| t)
                    .ok_or_else(|| Error::Grammar(format!("type {t} has no member {m}")))?;
            }
            Ok(PlaceKind::Data(t.clone(), storage))
        }
        PlaceKind::Handler(h) if rest.is_empty() => Ok(PlaceKind::Handler(h)),
        PlaceKind::Handler(_) => Err(Error::Grammar(format!(
            "handler members are private: {}",
            rest.join(".")
        ))),
    }
}

fn data_type(env: &dyn TypeEnv, path: &Path) -> Result<TypeDesc> {
    match place_kind(env, path)? {
        PlaceKind::Data(t, _) => Ok(t),
        PlaceKind::Handler(_) => Err(Error::Grammar(
            "a handler is only valid as a whole drive source or target".into(),
        )),
    }
}

fn literal(e: &Expr) -> Option<&Value> {
    match e {
        Expr::Const(v @ Value::Integer(_)) => Some(v),
        _ => None,
    }
}

/// Type of an expression. Bare integer literals type as `Integer`.
pub fn expr_type(env: &dyn TypeEnv, e: &Expr) -> Result<TypeDesc> {
    match e {
        Expr::Ref(p) => data_type(env, p),
        Expr::Const(v) => v
            .scalar_type()
            .ok_or_else(|| Error::Grammar(format!("aggregate literal {v} is not supported"))),
        Expr::Truthiness(p) => match place_kind(env, p)? {
            PlaceKind::Handler(h) => {
                let hc = env.registry().handler(h);
                if hc.method("truthiness").is_none() {
                    return Err(Error::Truthiness(format!("{} defines no truth predicate", hc.name)));
                }
                Ok(TypeDesc::Boolean)
            }
            PlaceKind::Data(..) => Err(Error::Truthiness("truthiness of a non-handler".into())),
        },
        Expr::Not(x) => match expr_type(env, x)? {
            t @ (TypeDesc::Logic | TypeDesc::Boolean | TypeDesc::Vector(_)) => Ok(t),
            t => Err(Error::Type(format!("cannot negate {t}"))),
        },
        Expr::Bin(op, l, r) => {
            let lt = expr_type(env, l)?;
            let rt = expr_type(env, r)?;
            bin_type(*op, &lt, &rt, literal(l), literal(r))
        }
        Expr::Switch { default, cases } => {
            let mut types = vec![(expr_type(env, default)?, literal(default))];
            for (c, v) in cases {
                let ct = expr_type(env, c)?;
                if !matches!(ct, TypeDesc::Boolean | TypeDesc::Logic) {
                    return Err(Error::Type(format!("v_case condition has type {ct}")));
                }
                types.push((expr_type(env, v)?, literal(v)));
            }
            let reference = types
                .iter()
                .find(|(_, lit)| lit.is_none())
                .map(|(t, _)| t.clone())
                .unwrap_or(TypeDesc::Integer);
            for (t, lit) in &types {
                let ok = match lit {
                    Some(v) => (*v).clone().coerce(&reference).is_ok(),
                    None => *t == reference,
                };
                if !ok {
                    return Err(Error::Type(format!(
                        "v_switch branch of type {t} differs from {reference}"
                    )));
                }
            }
            Ok(reference)
        }
    }
}

fn bin_type(op: BinOp, lt: &TypeDesc, rt: &TypeDesc, llit: Option<&Value>, rlit: Option<&Value>) -> Result<TypeDesc> {
    use TypeDesc::*;
    let lit_fits = |lit: Option<&Value>, t: &TypeDesc| lit.is_some_and(|v| v.clone().coerce(t).is_ok());
    match op {
        BinOp::Add | BinOp::Sub => match (lt, rt) {
            (Vector(a), Vector(b)) if a == b => Ok(Vector(*a)),
            (Vector(a), Vector(b)) => Err(Error::Width(format!("operand widths differ: {a} vs {b}"))),
            (Vector(w), Integer) if lit_fits(rlit, lt) || rlit.is_none() => Ok(Vector(*w)),
            (Integer, Vector(w)) if lit_fits(llit, rt) || llit.is_none() => Ok(Vector(*w)),
            (Integer, Integer) => Ok(Integer),
            _ => Err(Error::Type(format!("cannot apply {op:?} to {lt} and {rt}"))),
        },
        BinOp::And | BinOp::Or | BinOp::Xor => match (lt, rt) {
            (Logic, Logic) => Ok(Logic),
            (Boolean, Boolean) => Ok(Boolean),
            (Vector(a), Vector(b)) if a == b => Ok(Vector(*a)),
            (Vector(a), Vector(b)) => Err(Error::Width(format!("operand widths differ: {a} vs {b}"))),
            _ => Err(Error::Type(format!("cannot apply {op:?} to {lt} and {rt}"))),
        },
        _ => {
            let ok = match (lt, rt) {
                (Vector(a), Vector(b)) => a == b,
                (Vector(_), Integer) => rlit.is_none() || lit_fits(rlit, lt),
                (Integer, Vector(_)) => llit.is_none() || lit_fits(llit, rt),
                (Integer, Integer) => true,
                (Logic, Logic) | (Boolean, Boolean) => matches!(op, BinOp::Eq | BinOp::Ne),
                (Logic, Integer) => matches!(op, BinOp::Eq | BinOp::Ne) && lit_fits(rlit, lt),
                (Integer, Logic) => matches!(op, BinOp::Eq | BinOp::Ne) && lit_fits(llit, rt),
                _ => false,
            };
            if ok {
                Ok(Boolean)
            } else {
                Err(Error::Comparison(format!("cannot compare {lt} with {rt} using {op:?}")))
            }
        }
    }
}

/// Whether `src` (typed `src_ty`) may be driven into a slot of type `dst`.
pub fn drive_ok(dst: &TypeDesc, src_ty: &TypeDesc, src: &Expr) -> bool {
    if let Expr::Const(v @ Value::Integer(_)) = src {
        return crate::signals::assign_into(dst, &Value::zero_for(dst), v.clone()).is_ok();
    }
    if assignable(dst, src_ty) {
        return true;
    }
    match src {
        Expr::Switch { .. } if *src_ty == TypeDesc::Integer => matches!(dst, TypeDesc::Logic | TypeDesc::Vector(_)),
        _ => false,
    }
}

pub fn check_block(env: &dyn TypeEnv, stmts: &[Stmt]) -> Result<()> {
    stmts.iter().try_for_each(|s| check_stmt(env, s))
}

pub fn check_stmt(env: &dyn TypeEnv, s: &Stmt) -> Result<()> {
    match s {
        Stmt::Drive(target, value) => {
            let tk = place_kind(env, target)?;
            let source_handler = match value {
                Expr::Ref(p) => match place_kind(env, p)? {
                    PlaceKind::Handler(h) => Some(h),
                    _ => None,
                },
                _ => None,
            };
            match (tk, source_handler) {
                (PlaceKind::Handler(t), src) => {
                    let hc = env.registry().handler(t);
                    if hc.flavor != HandlerFlavor::Sender {
                        return Err(Error::Grammar(format!("{} cannot be driven", hc.name)));
                    }
                    if let Some(s) = src {
                        check_receiver(env, s)?;
                    } else {
                        expr_type(env, value)?;
                    }
                    Ok(())
                }
                (PlaceKind::Data(_, Storage::Constant), _) => Err(Error::Storage("cannot drive a constant".into())),
                (PlaceKind::Data(..), Some(h)) => check_receiver(env, h),
                (PlaceKind::Data(t, _), None) => {
                    let vt = expr_type(env, value)?;
                    if drive_ok(&t, &vt, value) {
                        Ok(())
                    } else {
                        Err(Error::Type(format!("cannot assign {vt} to {t}")))
                    }
                }
            }
        }
        Stmt::If { cond, then, elifs, els } => {
            check_cond(env, cond)?;
            check_block(env, then)?;
            for (c, b) in elifs {
                check_cond(env, c)?;
                check_block(env, b)?;
            }
            check_block(env, els)
        }
        Stmt::Call { object, member, args } => match place_kind(env, object)? {
            PlaceKind::Data(_, storage) => {
                if member != "reset" || !args.is_empty() {
                    return Err(Error::Grammar(format!("unsupported call {member} on a data object")));
                }
                if storage == Storage::Constant {
                    return Err(Error::Storage("cannot reset a constant".into()));
                }
                Ok(())
            }
            PlaceKind::Handler(h) => {
                let hc = env.registry().handler(h);
                let m = hc
                    .method(member)
                    .ok_or_else(|| Error::Grammar(format!("{} has no member function {member}", hc.name)))?;
                if m.params.len() != args.len() {
                    return Err(Error::Grammar(format!(
                        "{}.{member} takes {} argument(s)",
                        hc.name,
                        m.params.len()
                    )));
                }
                for (p, a) in m.params.iter().zip(args) {
                    if p.mode == ParamMode::InOut && !matches!(a, Expr::Ref(_)) {
                        return Err(Error::Grammar(format!(
                            "argument {} of {member} must be a place",
                            p.name
                        )));
                    }
                    expr_type(env, a)?;
                }
                Ok(())
            }
        },
    }
}

fn check_receiver(env: &dyn TypeEnv, h: HandlerClassId) -> Result<()> {
    let hc = env.registry().handler(h);
    if hc.flavor != HandlerFlavor::Receiver {
        return Err(Error::Grammar(format!("{} is not a data source", hc.name)));
    }
    Ok(())
}

fn check_cond(env: &dyn TypeEnv, c: &Expr) -> Result<()> {
    match expr_type(env, c)? {
        TypeDesc::Boolean | TypeDesc::Logic => Ok(()),
        t => Err(Error::Type(format!("condition has type {t}"))),
    }
}

pub fn check_method(env: &dyn TypeEnv, m: &crate::classes::MethodDef) -> Result<()> {
    check_block(env, &m.body)?;
    if let Some(r) = &m.returns {
        expr_type(env, r)?;
    }
    Ok(())
}
