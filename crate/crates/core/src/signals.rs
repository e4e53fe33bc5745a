//! Typed value kernel: logic levels, vectors, integers, storage classes and
//! the drive/commit semantics shared by elaboration and simulation.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported vector width. Payloads are stored in a `u128`.
pub const MAX_VECTOR_WIDTH: u32 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ProcessId(pub u32);

impl NodeId {
    pub const UNASSIGNED: NodeId = NodeId(u32::MAX);
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Single-bit logic level. `U` marks a bit that was never driven.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Logic {
    Zero,
    One,
    U,
}

impl Logic {
    pub fn from_bool(b: bool) -> Logic {
        if b {
            Logic::One
        } else {
            Logic::Zero
        }
    }

    pub fn not(self) -> Logic {
        match self {
            Logic::Zero => Logic::One,
            Logic::One => Logic::Zero,
            Logic::U => Logic::U,
        }
    }

    pub fn and(self, o: Logic) -> Logic {
        match (self, o) {
            (Logic::Zero, _) | (_, Logic::Zero) => Logic::Zero,
            (Logic::One, Logic::One) => Logic::One,
            _ => Logic::U,
        }
    }

    pub fn or(self, o: Logic) -> Logic {
        match (self, o) {
            (Logic::One, _) | (_, Logic::One) => Logic::One,
            (Logic::Zero, Logic::Zero) => Logic::Zero,
            _ => Logic::U,
        }
    }

    pub fn xor(self, o: Logic) -> Logic {
        match (self, o) {
            (Logic::U, _) | (_, Logic::U) => Logic::U,
            (a, b) => Logic::from_bool(a != b),
        }
    }

    pub fn vcd_char(self) -> char {
        match self {
            Logic::Zero => '0',
            Logic::One => '1',
            Logic::U => 'x',
        }
    }
}

/// How a record type is reset. Containers such as `optional_t` reset only
/// their flag field and leave the payload alone.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ResetRule {
    AllFields,
    Only(Vec<String>),
}

/// Lets a record accept a value of one of its field types: the value lands in
/// `data_field` and `flag_field` (if any) is raised to `'1'`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AcceptRule {
    pub data_field: String,
    pub flag_field: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecordType {
    pub name: String,
    pub fields: Vec<(String, TypeDesc)>,
    pub reset: ResetRule,
    pub accepts: Option<AcceptRule>,
}

/// Structural type descriptor. Equality is structural and keys
/// monomorphization.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TypeDesc {
    Logic,
    Vector(u32),
    Integer,
    Boolean,
    Record(RecordType),
    Array { elem: Box<TypeDesc>, len: u32 },
}

impl TypeDesc {
    pub fn vector(width: u32) -> Result<TypeDesc> {
        if width == 0 || width > MAX_VECTOR_WIDTH {
            return Err(Error::Width(format!(
                "vector width must be in 1..={MAX_VECTOR_WIDTH}, got {width}"
            )));
        }
        Ok(TypeDesc::Vector(width))
    }

    pub fn record(name: impl Into<String>, fields: Vec<(String, TypeDesc)>) -> Result<TypeDesc> {
        let name = name.into();
        let mut seen = BTreeSet::new();
        for (f, _) in &fields {
            if !seen.insert(f.as_str()) {
                return Err(Error::Type(format!("record {name}: duplicate field {f}")));
            }
        }
        if fields.is_empty() {
            return Err(Error::Type(format!("record {name} has no fields")));
        }
        Ok(TypeDesc::Record(RecordType {
            name,
            fields,
            reset: ResetRule::AllFields,
            accepts: None,
        }))
    }

    pub fn array(elem: TypeDesc, len: u32) -> Result<TypeDesc> {
        if len == 0 {
            return Err(Error::Type("array length must be at least 1".into()));
        }
        Ok(TypeDesc::Array {
            elem: Box::new(elem),
            len,
        })
    }

    /// `optional_t(inner)`: a payload plus a valid bit. Reset clears only the
    /// valid bit; assigning a payload stores it and raises valid.
    pub fn optional(inner: TypeDesc) -> TypeDesc {
        TypeDesc::Record(RecordType {
            name: format!("optional_t{}", inner.mangle()),
            fields: vec![("data".into(), inner), ("valid".into(), TypeDesc::Logic)],
            reset: ResetRule::Only(vec!["valid".into()]),
            accepts: Some(AcceptRule {
                data_field: "data".into(),
                flag_field: Some("valid".into()),
            }),
        })
    }

    /// Name-mangling suffix used for specializations.
    pub fn mangle(&self) -> String {
        format!("_{}", self.mangle_bare())
    }

    fn mangle_bare(&self) -> String {
        match self {
            TypeDesc::Logic => "sl".into(),
            TypeDesc::Vector(w) => w.to_string(),
            TypeDesc::Integer => "int".into(),
            TypeDesc::Boolean => "bool".into(),
            TypeDesc::Record(r) => r.name.clone(),
            TypeDesc::Array { elem, len } => format!("{}_x{len}", elem.mangle_bare()),
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            TypeDesc::Logic | TypeDesc::Boolean => 1,
            TypeDesc::Vector(w) => *w,
            TypeDesc::Integer => 32,
            TypeDesc::Record(r) => r.fields.iter().map(|(_, t)| t.width()).sum(),
            TypeDesc::Array { elem, len } => elem.width() * len,
        }
    }

    pub fn field(&self, name: &str) -> Option<(usize, &TypeDesc)> {
        match self {
            TypeDesc::Record(r) => r
                .fields
                .iter()
                .enumerate()
                .find(|(_, (f, _))| f == name)
                .map(|(i, (_, t))| (i, t)),
            _ => None,
        }
    }

    /// Type found by walking field indices (array steps use the element type).
    pub fn at_path(&self, path: &[usize]) -> Option<&TypeDesc> {
        let mut t = self;
        for &i in path {
            t = match t {
                TypeDesc::Record(r) => &r.fields.get(i)?.1,
                TypeDesc::Array { elem, len } if (i as u32) < *len => elem,
                _ => return None,
            };
        }
        Some(t)
    }

    pub fn resolve_path(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut t = self;
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let (i, next) = t
                .field(n)
                .ok_or_else(|| Error::Conversion(format!("type {t} has no member {n}")))?;
            out.push(i);
            t = next;
        }
        Ok(out)
    }

    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            TypeDesc::Logic | TypeDesc::Vector(_) | TypeDesc::Integer | TypeDesc::Boolean
        )
    }
}

impl fmt::Display for TypeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeDesc::Logic => write!(f, "logic"),
            TypeDesc::Vector(w) => write!(f, "logic_vector({w})"),
            TypeDesc::Integer => write!(f, "integer"),
            TypeDesc::Boolean => write!(f, "boolean"),
            TypeDesc::Record(r) => write!(f, "record {}", r.name),
            TypeDesc::Array { elem, len } => write!(f, "array({elem}, {len})"),
        }
    }
}

/// Immutable value snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Value {
    Logic(Logic),
    Vector { width: u32, bits: u128 },
    Integer(i64),
    Boolean(bool),
    Record(Vec<Value>),
    Array(Vec<Value>),
}

fn mask(width: u32) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

impl Value {
    pub fn vector(width: u32, v: u128) -> Result<Value> {
        TypeDesc::vector(width)?;
        if v & !mask(width) != 0 {
            return Err(Error::Range {
                width,
                value: v as i128,
            });
        }
        Ok(Value::Vector { width, bits: v })
    }

    /// Vector value reduced modulo 2^width.
    pub fn vector_wrapping(width: u32, v: u128) -> Value {
        Value::Vector {
            width,
            bits: v & mask(width),
        }
    }

    pub fn one() -> Value {
        Value::Logic(Logic::One)
    }

    pub fn zero_bit() -> Value {
        Value::Logic(Logic::Zero)
    }

    /// Value a freshly created node of type `ty` holds: single bits are `U`,
    /// everything else starts at zero.
    pub fn init_for(ty: &TypeDesc) -> Value {
        match ty {
            TypeDesc::Logic => Value::Logic(Logic::U),
            TypeDesc::Record(r) => Value::Record(r.fields.iter().map(|(_, t)| Value::init_for(t)).collect()),
            TypeDesc::Array { elem, len } => Value::Array(vec![Value::init_for(elem); *len as usize]),
            other => Value::zero_for(other),
        }
    }

    /// All-zero value of a type.
    pub fn zero_for(ty: &TypeDesc) -> Value {
        match ty {
            TypeDesc::Logic => Value::Logic(Logic::Zero),
            TypeDesc::Vector(w) => Value::Vector { width: *w, bits: 0 },
            TypeDesc::Integer => Value::Integer(0),
            TypeDesc::Boolean => Value::Boolean(false),
            TypeDesc::Record(r) => Value::Record(r.fields.iter().map(|(_, t)| Value::zero_for(t)).collect()),
            TypeDesc::Array { elem, len } => Value::Array(vec![Value::zero_for(elem); *len as usize]),
        }
    }

    pub fn as_u128(&self) -> Option<u128> {
        match self {
            Value::Vector { bits, .. } => Some(*bits),
            Value::Logic(Logic::Zero) => Some(0),
            Value::Logic(Logic::One) => Some(1),
            Value::Integer(i) if *i >= 0 => Some(*i as u128),
            Value::Boolean(b) => Some(*b as u128),
            _ => None,
        }
    }

    pub fn scalar_type(&self) -> Option<TypeDesc> {
        match self {
            Value::Logic(_) => Some(TypeDesc::Logic),
            Value::Vector { width, .. } => Some(TypeDesc::Vector(*width)),
            Value::Integer(_) => Some(TypeDesc::Integer),
            Value::Boolean(_) => Some(TypeDesc::Boolean),
            _ => None,
        }
    }

    pub fn as_logic(&self) -> Option<Logic> {
        match self {
            Value::Logic(l) => Some(*l),
            _ => None,
        }
    }

    /// Condition semantics: booleans as-is, logic `'1'` is true.
    pub fn truthy(&self) -> Result<bool> {
        match self {
            Value::Boolean(b) => Ok(*b),
            Value::Logic(l) => Ok(*l == Logic::One),
            other => Err(Error::Type(format!("{other} is not usable as a condition"))),
        }
    }

    pub fn conforms(&self, ty: &TypeDesc) -> bool {
        match (self, ty) {
            (Value::Logic(_), TypeDesc::Logic) => true,
            (Value::Vector { width, .. }, TypeDesc::Vector(w)) => width == w,
            (Value::Integer(_), TypeDesc::Integer) => true,
            (Value::Boolean(_), TypeDesc::Boolean) => true,
            (Value::Record(vs), TypeDesc::Record(r)) => {
                vs.len() == r.fields.len() && vs.iter().zip(&r.fields).all(|(v, (_, t))| v.conforms(t))
            }
            (Value::Array(vs), TypeDesc::Array { elem, len }) => {
                vs.len() == *len as usize && vs.iter().all(|v| v.conforms(elem))
            }
            _ => false,
        }
    }

    fn same_shape(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Logic(_), Value::Logic(_))
            | (Value::Integer(_), Value::Integer(_))
            | (Value::Boolean(_), Value::Boolean(_)) => true,
            (Value::Vector { width: a, .. }, Value::Vector { width: b, .. }) => a == b,
            (Value::Record(a), Value::Record(b)) | (Value::Array(a), Value::Array(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y))
            }
            _ => false,
        }
    }

    /// Converts `self` into a value of type `ty`, adopting integer literals
    /// into vectors and logic bits. Out-of-range literals are errors.
    pub fn coerce(self, ty: &TypeDesc) -> Result<Value> {
        if self.conforms(ty) {
            return Ok(self);
        }
        match (&self, ty) {
            (Value::Integer(i), TypeDesc::Vector(w)) => {
                if *i < 0 || (*i as u128) & !mask(*w) != 0 {
                    return Err(Error::Range {
                        width: *w,
                        value: *i as i128,
                    });
                }
                Ok(Value::Vector {
                    width: *w,
                    bits: *i as u128,
                })
            }
            (Value::Integer(0), TypeDesc::Logic) => Ok(Value::Logic(Logic::Zero)),
            (Value::Integer(1), TypeDesc::Logic) => Ok(Value::Logic(Logic::One)),
            (Value::Integer(i), TypeDesc::Logic) => Err(Error::Range {
                width: 1,
                value: *i as i128,
            }),
            _ => Err(Error::Type(format!("cannot assign {self} to {ty}"))),
        }
    }

    pub fn get(&self, path: &[usize]) -> Option<&Value> {
        let mut v = self;
        for &i in path {
            v = match v {
                Value::Record(vs) | Value::Array(vs) => vs.get(i)?,
                _ => return None,
            };
        }
        Some(v)
    }

    pub fn get_mut(&mut self, path: &[usize]) -> Option<&mut Value> {
        let mut v = self;
        for &i in path {
            v = match v {
                Value::Record(vs) | Value::Array(vs) => vs.get_mut(i)?,
                _ => return None,
            };
        }
        Some(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Logic(l) => write!(f, "'{}'", l.vcd_char()),
            Value::Vector { width, bits } => write!(f, "{bits}/{width}b"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Record(vs) | Value::Array(vs) => {
                write!(f, "(")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Assigns `value` into a slot of type `ty` whose current content is `base`.
/// Handles the record accept rule (e.g. payload into `optional_t`).
pub fn assign_into(ty: &TypeDesc, base: &Value, value: Value) -> Result<Value> {
    if let TypeDesc::Record(r) = ty {
        if !value.conforms(ty) {
            if let Some(rule) = &r.accepts {
                let (di, dt) = ty
                    .field(&rule.data_field)
                    .ok_or_else(|| Error::Type(format!("{}: accept rule names unknown field", r.name)))?;
                let payload = value.coerce(dt)?;
                let mut out = base.clone();
                if let Value::Record(vs) = &mut out {
                    vs[di] = payload;
                    if let Some(flag) = &rule.flag_field {
                        let (fi, _) = ty
                            .field(flag)
                            .ok_or_else(|| Error::Type(format!("{}: accept rule names unknown flag", r.name)))?;
                        vs[fi] = Value::one();
                    }
                }
                return Ok(out);
            }
        }
    }
    value.coerce(ty)
}

/// Whether values of type `src` may be assigned to a slot of type `dst`.
pub fn assignable(dst: &TypeDesc, src: &TypeDesc) -> bool {
    if dst == src {
        return true;
    }
    match (dst, src) {
        (TypeDesc::Vector(_), TypeDesc::Integer) => true,
        (TypeDesc::Record(r), s) => r
            .accepts
            .as_ref()
            .and_then(|a| dst.field(&a.data_field))
            .is_some_and(|(_, t)| assignable(t, s)),
        _ => false,
    }
}

/// Reset value for a slot, dispatching to the record's reset rule.
pub fn reset_value(ty: &TypeDesc, current: &Value) -> Value {
    match (ty, current) {
        (TypeDesc::Record(r), Value::Record(vs)) => {
            let out = r
                .fields
                .iter()
                .zip(vs)
                .map(|((name, t), v)| match &r.reset {
                    ResetRule::AllFields => reset_value(t, v),
                    ResetRule::Only(names) if names.contains(name) => reset_value(t, v),
                    ResetRule::Only(_) => v.clone(),
                })
                .collect();
            Value::Record(out)
        }
        (TypeDesc::Array { elem, .. }, Value::Array(vs)) => {
            Value::Array(vs.iter().map(|v| reset_value(elem, v)).collect())
        }
        _ => Value::zero_for(ty),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinOp {
    pub fn is_relation(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }
}

fn vector_operands(a: &Value, b: &Value) -> Result<(u32, u128, u128)> {
    match (a, b) {
        (Value::Vector { width: wa, bits: x }, Value::Vector { width: wb, bits: y }) => {
            if wa != wb {
                return Err(Error::Width(format!("operand widths differ: {wa} vs {wb}")));
            }
            Ok((*wa, *x, *y))
        }
        (Value::Vector { width, bits }, lit @ Value::Integer(_)) => {
            let y = lit.clone().coerce(&TypeDesc::Vector(*width))?.as_u128().unwrap_or(0);
            Ok((*width, *bits, y))
        }
        (lit @ Value::Integer(_), Value::Vector { width, bits }) => {
            let x = lit.clone().coerce(&TypeDesc::Vector(*width))?.as_u128().unwrap_or(0);
            Ok((*width, x, *bits))
        }
        _ => Err(Error::Type(format!("{a} and {b} are not vector operands"))),
    }
}

/// Wrapping vector addition; an integer literal adopts the vector's width.
pub fn add(a: &Value, b: &Value) -> Result<Value> {
    if let (Value::Integer(x), Value::Integer(y)) = (a, b) {
        return Ok(Value::Integer(x.wrapping_add(*y)));
    }
    let (w, x, y) = vector_operands(a, b)?;
    Ok(Value::vector_wrapping(w, x.wrapping_add(y)))
}

pub fn sub(a: &Value, b: &Value) -> Result<Value> {
    if let (Value::Integer(x), Value::Integer(y)) = (a, b) {
        return Ok(Value::Integer(x.wrapping_sub(*y)));
    }
    let (w, x, y) = vector_operands(a, b)?;
    Ok(Value::vector_wrapping(w, x.wrapping_sub(y)))
}

fn bitwise(op: BinOp, a: &Value, b: &Value) -> Result<Value> {
    let lf = |x: Logic, y: Logic| match op {
        BinOp::And => x.and(y),
        BinOp::Or => x.or(y),
        _ => x.xor(y),
    };
    match (a, b) {
        (Value::Logic(x), Value::Logic(y)) => Ok(Value::Logic(lf(*x, *y))),
        (Value::Boolean(x), Value::Boolean(y)) => Ok(Value::Boolean(match op {
            BinOp::And => *x && *y,
            BinOp::Or => *x || *y,
            _ => x != y,
        })),
        _ => {
            let (w, x, y) = vector_operands(a, b)?;
            let r = match op {
                BinOp::And => x & y,
                BinOp::Or => x | y,
                _ => x ^ y,
            };
            Ok(Value::vector_wrapping(w, r))
        }
    }
}

/// Relational comparison. Vectors compare unsigned.
pub fn compare(a: &Value, b: &Value, rel: BinOp) -> Result<Value> {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (a, b) {
        (Value::Vector { .. }, Value::Vector { .. })
        | (Value::Vector { .. }, Value::Integer(_))
        | (Value::Integer(_), Value::Vector { .. }) => {
            let (_, x, y) = vector_operands(a, b).map_err(|e| Error::Comparison(e.to_string()))?;
            Some(x.cmp(&y))
        }
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Logic(x), Value::Logic(y)) => {
            if *x == Logic::U || *y == Logic::U {
                None
            } else {
                Some((*x as u8).cmp(&(*y as u8)))
            }
        }
        (Value::Logic(x), Value::Integer(i)) | (Value::Integer(i), Value::Logic(x)) => {
            if !(0..=1).contains(i) {
                return Err(Error::Comparison(format!("logic compared with {i}")));
            }
            let lit = if *i == 1 { Logic::One } else { Logic::Zero };
            if *x == Logic::U {
                None
            } else if *x == lit {
                Some(Ordering::Equal)
            } else {
                Some(Ordering::Less)
            }
        }
        (Value::Boolean(x), Value::Boolean(y)) => Some(x.cmp(y)),
        _ => return Err(Error::Comparison(format!("cannot compare {a} with {b}"))),
    };
    let ordered_kind = !matches!(
        (a, b),
        (Value::Logic(_), _) | (_, Value::Logic(_)) | (Value::Boolean(_), _)
    );
    if !ordered_kind && !matches!(rel, BinOp::Eq | BinOp::Ne) {
        return Err(Error::Comparison(format!(
            "relation {rel:?} is not defined for {a} and {b}"
        )));
    }
    let r = match (rel, ord) {
        // An undriven bit is unequal to everything.
        (BinOp::Eq, None) => false,
        (BinOp::Ne, None) => true,
        (_, None) => false,
        (BinOp::Eq, Some(o)) => o == Ordering::Equal,
        (BinOp::Ne, Some(o)) => o != Ordering::Equal,
        (BinOp::Lt, Some(o)) => o == Ordering::Less,
        (BinOp::Le, Some(o)) => o != Ordering::Greater,
        (BinOp::Gt, Some(o)) => o == Ordering::Greater,
        (BinOp::Ge, Some(o)) => o != Ordering::Less,
        (op, _) => return Err(Error::Comparison(format!("{op:?} is not a relation"))),
    };
    Ok(Value::Boolean(r))
}

pub fn binop(op: BinOp, a: &Value, b: &Value) -> Result<Value> {
    match op {
        BinOp::Add => add(a, b),
        BinOp::Sub => sub(a, b),
        BinOp::And | BinOp::Or | BinOp::Xor => bitwise(op, a, b),
        rel => compare(a, b, rel),
    }
}

pub fn not(a: &Value) -> Result<Value> {
    match a {
        Value::Logic(l) => Ok(Value::Logic(l.not())),
        Value::Boolean(b) => Ok(Value::Boolean(!b)),
        Value::Vector { width, bits } => Ok(Value::vector_wrapping(*width, !bits)),
        other => Err(Error::Type(format!("cannot negate {other}"))),
    }
}

/// Conditional expression: value of the first case whose condition holds,
/// otherwise the default. All branch values must share one shape.
pub fn v_switch(default: Value, cases: &[(bool, Value)]) -> Result<Value> {
    // Integer literals adopt the type of the first typed branch.
    let reference = std::iter::once(&default)
        .chain(cases.iter().map(|(_, v)| v))
        .find(|v| !matches!(v, Value::Integer(_)))
        .and_then(Value::scalar_type);
    let fix = |v: Value| -> Result<Value> {
        match (&reference, &v) {
            (Some(t), Value::Integer(_)) => v.coerce(t),
            _ => Ok(v),
        }
    };
    let default = fix(default)?;
    let mut chosen = None;
    for (cond, v) in cases {
        let v = fix(v.clone())?;
        if !v.same_shape(&default) {
            return Err(Error::Type(format!(
                "v_switch branch {v} differs in type from default {default}"
            )));
        }
        if *cond && chosen.is_none() {
            chosen = Some(v);
        }
    }
    Ok(chosen.unwrap_or(default))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Storage {
    Signal,
    Variable,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::In => Direction::Out,
            Direction::Out => Direction::In,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum PortBinding {
    SignalPort,
    VariablePort,
    FreeType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum StreamRole {
    None,
    PipelineIn,
    PipelineOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PortSpec {
    pub direction: Direction,
    pub binding: PortBinding,
    pub stream_role: StreamRole,
}

/// A typed storage cell. Signals stage writes in `pending` until the next
/// delta boundary; variables write through immediately.
#[derive(Clone, Debug)]
pub struct SignalNode {
    pub id: NodeId,
    pub storage: Storage,
    pub ty: TypeDesc,
    pub current: Value,
    pub pending: Option<Value>,
    pub init: Value,
    pub hdl_name: Option<String>,
    pub subscribers: BTreeSet<ProcessId>,
    pub structural_driver: Option<NodeId>,
    pub port_spec: Option<PortSpec>,
}

impl SignalNode {
    pub fn new(storage: Storage, ty: TypeDesc, init: Value) -> Result<SignalNode> {
        let init = assign_into(&ty, &Value::init_for(&ty), init)?;
        Ok(SignalNode {
            id: NodeId::UNASSIGNED,
            storage,
            ty,
            current: init.clone(),
            pending: None,
            init,
            hdl_name: None,
            subscribers: BTreeSet::new(),
            structural_driver: None,
            port_spec: None,
        })
    }

    /// Node whose initial value is the type's default (U for bits, 0 otherwise).
    pub fn of_type(storage: Storage, ty: TypeDesc) -> SignalNode {
        let init = Value::init_for(&ty);
        SignalNode {
            id: NodeId::UNASSIGNED,
            storage,
            ty,
            current: init.clone(),
            pending: None,
            init,
            hdl_name: None,
            subscribers: BTreeSet::new(),
            structural_driver: None,
            port_spec: None,
        }
    }

    pub fn read(&self) -> &Value {
        &self.current
    }

    pub fn read_at(&self, path: &[usize]) -> Result<&Value> {
        self.current
            .get(path)
            .ok_or_else(|| Error::Type(format!("invalid member path {path:?}")))
    }

    /// Drives `value` into the slot addressed by `path`.
    pub fn drive_at(&mut self, path: &[usize], value: Value) -> Result<()> {
        if self.storage == Storage::Constant {
            return Err(Error::Storage(format!(
                "cannot drive constant {}",
                self.hdl_name.as_deref().unwrap_or("<unnamed>")
            )));
        }
        let slot_ty = self
            .ty
            .at_path(path)
            .ok_or_else(|| Error::Type(format!("invalid member path {path:?}")))?
            .clone();
        let mut next = match self.storage {
            Storage::Signal => self.pending.clone().unwrap_or_else(|| self.current.clone()),
            _ => self.current.clone(),
        };
        let slot = next
            .get_mut(path)
            .ok_or_else(|| Error::Type(format!("invalid member path {path:?}")))?;
        *slot = assign_into(&slot_ty, slot, value)?;
        match self.storage {
            Storage::Signal => self.pending = Some(next),
            _ => self.current = next,
        }
        Ok(())
    }

    pub fn drive(&mut self, value: Value) -> Result<()> {
        self.drive_at(&[], value)
    }

    /// Resets the addressed slot following its type's reset rule.
    pub fn reset_at(&mut self, path: &[usize]) -> Result<()> {
        let slot_ty = self
            .ty
            .at_path(path)
            .ok_or_else(|| Error::Type(format!("invalid member path {path:?}")))?
            .clone();
        let base = match self.storage {
            Storage::Signal => self.pending.as_ref().unwrap_or(&self.current),
            _ => &self.current,
        };
        let cur = base
            .get(path)
            .ok_or_else(|| Error::Type(format!("invalid member path {path:?}")))?;
        let v = reset_value(&slot_ty, cur);
        self.drive_at(path, v)
    }

    /// Moves `pending` into `current`. Returns whether the value changed.
    pub fn commit(&mut self) -> bool {
        match self.pending.take() {
            Some(v) if v != self.current => {
                self.current = v;
                true
            }
            _ => false,
        }
    }
}

/// `v_slv(width, init)`: a vector node.
pub fn make_vector(width: u32, init: u128, storage: Storage) -> Result<SignalNode> {
    let ty = TypeDesc::vector(width)?;
    let v = Value::vector(width, init)?;
    SignalNode::new(storage, ty, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec8(v: u128) -> Value {
        Value::vector(8, v).unwrap()
    }

    #[test]
    fn make_vector_examples() {
        let n = make_vector(32, 300, Storage::Signal).unwrap();
        assert_eq!(n.current, Value::Vector { width: 32, bits: 300 });
        assert_eq!(make_vector(8, 0, Storage::Signal).unwrap().current, vec8(0));
        let err = make_vector(8, 256, Storage::Signal).unwrap_err();
        assert!(matches!(err, Error::Range { width: 8, .. }), "{err}");
        assert!(err.to_string().contains("8 bits"));
    }

    #[test]
    fn signal_commits_at_boundary_variable_immediately() {
        let mut s = make_vector(8, 5, Storage::Signal).unwrap();
        s.drive(Value::Integer(7)).unwrap();
        assert_eq!(s.current, vec8(5));
        assert!(s.commit());
        assert_eq!(s.current, vec8(7));

        let mut v = make_vector(8, 5, Storage::Variable).unwrap();
        v.drive(Value::Integer(7)).unwrap();
        assert_eq!(v.current, vec8(7));
        assert!(v.pending.is_none());
    }

    #[test]
    fn last_drive_wins_within_delta() {
        let mut s = SignalNode::of_type(Storage::Signal, TypeDesc::Logic);
        s.drive(Value::Integer(1)).unwrap();
        s.drive(Value::Integer(0)).unwrap();
        s.commit();
        assert_eq!(s.current, Value::Logic(Logic::Zero));
    }

    #[test]
    fn drive_errors() {
        let mut c = make_vector(8, 1, Storage::Constant).unwrap();
        assert!(matches!(c.drive(Value::Integer(2)), Err(Error::Storage(_))));
        let mut s = make_vector(8, 1, Storage::Signal).unwrap();
        assert!(matches!(s.drive(Value::Logic(Logic::One)), Err(Error::Type(_))));
        assert!(matches!(s.drive(Value::Integer(300)), Err(Error::Range { .. })));
    }

    #[test]
    fn add_examples() {
        let a = Value::vector(32, 299).unwrap();
        assert_eq!(add(&a, &Value::Integer(1)).unwrap(), Value::vector(32, 300).unwrap());
        assert_eq!(add(&vec8(255), &Value::Integer(1)).unwrap(), vec8((255 + 1) % 256));
        assert_eq!(add(&vec8(0), &vec8(0)).unwrap(), vec8(0));
        let w16 = Value::vector(16, 1).unwrap();
        assert!(matches!(add(&vec8(1), &w16), Err(Error::Width(_))));
        assert!(matches!(add(&vec8(1), &Value::Integer(256)), Err(Error::Range { .. })));
    }

    #[test]
    fn compare_examples() {
        let t = Value::Boolean(true);
        let f = Value::Boolean(false);
        let v300 = Value::vector(32, 300).unwrap();
        assert_eq!(compare(&v300, &v300, BinOp::Ge).unwrap(), t);
        assert_eq!(compare(&vec8(0), &vec8(0), BinOp::Ne).unwrap(), f);
        assert_eq!(compare(&vec8(5), &vec8(7), BinOp::Lt).unwrap(), t);
        assert_eq!(
            compare(&Value::Logic(Logic::One), &Value::Integer(1), BinOp::Eq).unwrap(),
            t
        );
        assert!(matches!(
            compare(&vec8(1), &Value::Logic(Logic::One), BinOp::Eq),
            Err(Error::Comparison(_))
        ));
        assert!(matches!(
            compare(&Value::Logic(Logic::One), &Value::Logic(Logic::Zero), BinOp::Lt),
            Err(Error::Comparison(_))
        ));
    }

    #[test]
    fn v_switch_examples() {
        let zero = Value::Logic(Logic::Zero);
        let enable = Value::Logic(Logic::One);
        // empty = 1: condition (empty == 0) false
        assert_eq!(v_switch(zero.clone(), &[(false, enable.clone())]).unwrap(), zero);
        assert_eq!(v_switch(zero.clone(), &[(true, enable.clone())]).unwrap(), enable);
        assert_eq!(v_switch(Value::Integer(42), &[]).unwrap(), Value::Integer(42));
        assert!(matches!(v_switch(zero, &[(true, vec8(1))]), Err(Error::Type(_))));
    }

    #[test]
    fn reset_examples() {
        let mut v = make_vector(8, 0xFF, Storage::Variable).unwrap();
        v.reset_at(&[]).unwrap();
        assert_eq!(v.current, vec8(0));
        v.reset_at(&[]).unwrap();
        assert_eq!(v.current, vec8(0));

        let ty = TypeDesc::optional(TypeDesc::Vector(32));
        let mut o = SignalNode::of_type(Storage::Variable, ty);
        o.drive(Value::vector(32, 77).unwrap()).unwrap();
        assert_eq!(
            o.current,
            Value::Record(vec![Value::vector(32, 77).unwrap(), Value::one()])
        );
        o.reset_at(&[]).unwrap();
        assert_eq!(
            o.current,
            Value::Record(vec![Value::vector(32, 77).unwrap(), Value::zero_bit()])
        );
    }

    #[test]
    fn record_reset_is_recursive() {
        let inner = TypeDesc::record("inner", vec![("a".into(), TypeDesc::Vector(4))]).unwrap();
        let outer = TypeDesc::record("outer", vec![("i".into(), inner), ("b".into(), TypeDesc::Logic)]).unwrap();
        let cur = Value::Record(vec![Value::Record(vec![Value::vector(4, 9).unwrap()]), Value::one()]);
        assert_eq!(reset_value(&outer, &cur), Value::zero_for(&outer));
    }

    #[test]
    fn mangling() {
        assert_eq!(TypeDesc::Vector(32).mangle(), "_32");
        assert_eq!(TypeDesc::Logic.mangle(), "_sl");
        let r = TypeDesc::record("pixel", vec![("a".into(), TypeDesc::Vector(8))]).unwrap();
        assert_eq!(r.mangle(), "_pixel");
        assert_eq!(TypeDesc::array(TypeDesc::Vector(8), 4).unwrap().mangle(), "_8_x4");
        assert_eq!(TypeDesc::optional(TypeDesc::Vector(32)).mangle(), "_optional_t_32");
    }

    #[test]
    fn type_invariants() {
        assert!(TypeDesc::vector(0).is_err());
        assert!(TypeDesc::record("r", vec![("a".into(), TypeDesc::Logic), ("a".into(), TypeDesc::Logic)]).is_err());
        assert!(TypeDesc::array(TypeDesc::Logic, 0).is_err());
        assert_eq!(TypeDesc::Vector(8), TypeDesc::vector(8).unwrap());
    }
}
