//! Interface (transaction) classes, handler classes and the monomorphization
//! registry that turns generic class templates into concrete classes and
//! member-function specializations.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::signals::{PortBinding, RecordType, Storage, TypeDesc, Value};
use crate::stmt::{self, drive, e, if_, param, reset, this, Expr, Stmt};
use crate::typeck::{self, PlaceKind, TypeEnv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ClassId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct HandlerClassId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SpecId(pub u32);

/// Direction of an interface member relative to the data flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Flow {
    /// primary to secondary
    M2S,
    /// secondary to primary
    S2M,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IfaceMember {
    pub name: String,
    pub ty: TypeDesc,
    pub flow: Flow,
    pub init: Value,
}

impl IfaceMember {
    fn new(name: &str, ty: TypeDesc, flow: Flow, init: Option<Value>) -> Result<IfaceMember> {
        let init = match init {
            Some(v) => v.coerce(&ty)?,
            None => Value::zero_for(&ty),
        };
        Ok(IfaceMember {
            name: name.into(),
            ty,
            flow,
            init,
        })
    }
}

pub type InterfaceBuilder = fn(&[TypeDesc]) -> Result<Vec<IfaceMember>>;

#[derive(Clone)]
pub struct InterfaceTemplate {
    pub name: String,
    pub arity: usize,
    pub build: InterfaceBuilder,
    pub primary_handler: Option<String>,
    pub secondary_handler: Option<String>,
}

/// A concrete (monomorphized) interface class.
#[derive(Clone, Debug)]
pub struct InterfaceClass {
    pub id: ClassId,
    pub template: String,
    pub name: String,
    pub type_args: Vec<TypeDesc>,
    pub members: Vec<IfaceMember>,
    pub primary_handler: Option<String>,
    pub secondary_handler: Option<String>,
}

impl InterfaceClass {
    /// Record holding every member; used for handler variable views.
    pub fn full_type(&self) -> TypeDesc {
        TypeDesc::Record(RecordType {
            name: self.name.clone(),
            fields: self.members.iter().map(|m| (m.name.clone(), m.ty.clone())).collect(),
            reset: crate::signals::ResetRule::AllFields,
            accepts: None,
        })
    }

    pub fn full_init(&self) -> Value {
        Value::Record(self.members.iter().map(|m| m.init.clone()).collect())
    }

    /// The `<name>_m2s` / `<name>_s2m` record for one flow, if any member has it.
    pub fn flow_type(&self, flow: Flow) -> Option<TypeDesc> {
        let fields: Vec<_> = self
            .members
            .iter()
            .filter(|m| m.flow == flow)
            .map(|m| (m.name.clone(), m.ty.clone()))
            .collect();
        if fields.is_empty() {
            return None;
        }
        Some(TypeDesc::Record(RecordType {
            name: format!("{}_{}", self.name, flow_suffix(flow)),
            fields,
            reset: crate::signals::ResetRule::AllFields,
            accepts: None,
        }))
    }

    pub fn member(&self, name: &str) -> Option<&IfaceMember> {
        self.members.iter().find(|m| m.name == name)
    }

    pub fn data_type(&self) -> Option<&TypeDesc> {
        self.member("data").map(|m| &m.ty)
    }
}

pub fn flow_suffix(flow: Flow) -> &'static str {
    match flow {
        Flow::M2S => "m2s",
        Flow::S2M => "s2m",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum HandlerRole {
    Primary,
    Secondary,
    Handle,
}

impl HandlerRole {
    /// Whether a handler of this role consumes the data stream.
    pub fn consumes(self) -> bool {
        !matches!(self, HandlerRole::Primary)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MemberShape {
    Data(TypeDesc),
    /// A bundle with one node per member of the handler's interface.
    Interface,
}

/// Where a variable view copies its incoming members from and pushes its
/// outgoing members to.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewSource {
    Port,
    Member(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberDef {
    pub name: String,
    pub shape: MemberShape,
    pub storage: Storage,
    pub binding: PortBinding,
    pub init: Option<Value>,
    pub view: Option<ViewSource>,
    /// Bundle members wired structurally to the bound port.
    pub follows_port: bool,
}

impl MemberDef {
    fn variable(name: &str, ty: TypeDesc, init: Value) -> MemberDef {
        MemberDef {
            name: name.into(),
            shape: MemberShape::Data(ty),
            storage: Storage::Variable,
            binding: PortBinding::VariablePort,
            init: Some(init),
            view: None,
            follows_port: false,
        }
    }

    fn view(name: &str, source: ViewSource) -> MemberDef {
        MemberDef {
            name: name.into(),
            shape: MemberShape::Interface,
            storage: Storage::Variable,
            binding: PortBinding::VariablePort,
            init: None,
            view: Some(source),
            follows_port: false,
        }
    }

    fn free_bundle(name: &str, follows_port: bool) -> MemberDef {
        MemberDef {
            name: name.into(),
            shape: MemberShape::Interface,
            storage: Storage::Signal,
            binding: PortBinding::FreeType,
            init: None,
            view: None,
            follows_port,
        }
    }

    pub fn is_free_type(&self) -> bool {
        self.binding == PortBinding::FreeType
    }

    pub fn ty(&self, iface: &InterfaceClass) -> TypeDesc {
        match &self.shape {
            MemberShape::Data(t) => t.clone(),
            MemberShape::Interface => iface.full_type(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ParamMode {
    In,
    InOut,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub mode: ParamMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodDef {
    pub name: String,
    pub params: Vec<ParamDef>,
    pub body: Vec<Stmt>,
    /// Present for side-effect-free functions.
    pub returns: Option<Expr>,
}

impl MethodDef {
    fn procedure(name: &str, params: &[(&str, ParamMode)], body: Vec<Stmt>) -> MethodDef {
        MethodDef {
            name: name.into(),
            params: params
                .iter()
                .map(|(n, m)| ParamDef {
                    name: n.to_string(),
                    mode: *m,
                })
                .collect(),
            body,
            returns: None,
        }
    }

    fn function(name: &str, returns: Expr) -> MethodDef {
        MethodDef {
            name: name.into(),
            params: Vec::new(),
            body: Vec::new(),
            returns: Some(returns),
        }
    }

    pub fn is_function(&self) -> bool {
        self.returns.is_some()
    }
}

/// Combinational block owned by a handler class, written against `self`.
#[derive(Clone, Debug, PartialEq)]
pub struct CombDef {
    pub name: String,
    pub body: Vec<Stmt>,
}

/// How the backend treats the handler in assignments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum HandlerFlavor {
    /// Target of `handler << data` (lowered through `send_data`).
    Sender,
    /// Source of `handler >> target` (lowered through `read_data`).
    Receiver,
}

pub struct HandlerParts {
    pub members: Vec<MemberDef>,
    pub methods: Vec<MethodDef>,
    pub combinational: Vec<CombDef>,
}

pub type HandlerBuilder = fn(&InterfaceClass) -> Result<HandlerParts>;

#[derive(Clone)]
pub struct HandlerTemplate {
    pub name: String,
    pub role: HandlerRole,
    pub flavor: HandlerFlavor,
    pub build: HandlerBuilder,
}

/// A concrete handler class bound to one interface class.
#[derive(Clone, Debug)]
pub struct HandlerClass {
    pub id: HandlerClassId,
    pub template: String,
    pub name: String,
    pub role: HandlerRole,
    pub flavor: HandlerFlavor,
    pub interface: ClassId,
    pub members: Vec<MemberDef>,
    pub methods: Vec<MethodDef>,
    pub combinational: Vec<CombDef>,
}

impl HandlerClass {
    pub fn method(&self, name: &str) -> Option<&MethodDef> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn member(&self, name: &str) -> Option<&MemberDef> {
        self.members.iter().find(|m| m.name == name)
    }

    pub fn view_member(&self) -> Option<&MemberDef> {
        self.members.iter().find(|m| m.view.is_some())
    }
}

/// Key of a specialization: class identity plus argument types.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MonomorphKey {
    pub class: String,
    pub member: Option<String>,
    pub args: Vec<TypeDescKey>,
}

/// Printable, orderable stand-in for a `TypeDesc` inside keys.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeDescKey(pub String);

impl From<&TypeDesc> for TypeDescKey {
    fn from(t: &TypeDesc) -> Self {
        TypeDescKey(format!("{t:?}"))
    }
}

impl std::fmt::Display for MonomorphKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.class)?;
        if let Some(m) = &self.member {
            write!(f, ".{m}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Specialization {
    pub id: SpecId,
    pub class: HandlerClassId,
    pub method: String,
    pub arg_types: Vec<TypeDesc>,
    /// Set once the backend has emitted the body; only then can callers use it.
    pub materialized: bool,
}

impl Specialization {
    pub fn signature(&self, registry: &ClassRegistry) -> String {
        let args: Vec<String> = self.arg_types.iter().map(|t| t.to_string()).collect();
        format!(
            "{}.{}({})",
            registry.handler(self.class).name,
            self.method,
            args.join(", ")
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ClassRef {
    Interface(ClassId),
    Handler(HandlerClassId),
    Record(u32),
}

pub enum Lookup {
    Ready(SpecId),
    Missing,
}

/// Session-wide template registry.
#[derive(Clone)]
pub struct ClassRegistry {
    interface_templates: BTreeMap<String, InterfaceTemplate>,
    handler_templates: BTreeMap<String, HandlerTemplate>,
    pub interfaces: Vec<InterfaceClass>,
    pub handlers: Vec<HandlerClass>,
    pub records: Vec<RecordType>,
    pub specializations: Vec<Specialization>,
    iface_cache: HashMap<(String, Vec<TypeDesc>), ClassId>,
    handler_cache: HashMap<(String, ClassId), HandlerClassId>,
    spec_cache: HashMap<(HandlerClassId, String, Vec<TypeDesc>), SpecId>,
    names: BTreeMap<String, MonomorphKey>,
    /// Newly created classes, in creation order; drained into the shadow register.
    pub created: Vec<ClassRef>,
}

impl Default for ClassRegistry {
    fn default() -> Self {
        let mut r = ClassRegistry {
            interface_templates: BTreeMap::new(),
            handler_templates: BTreeMap::new(),
            interfaces: Vec::new(),
            handlers: Vec::new(),
            records: Vec::new(),
            specializations: Vec::new(),
            iface_cache: HashMap::new(),
            handler_cache: HashMap::new(),
            spec_cache: HashMap::new(),
            names: BTreeMap::new(),
            created: Vec::new(),
        };
        protocols::install(&mut r);
        r
    }
}

impl ClassRegistry {
    pub fn add_interface_template(&mut self, t: InterfaceTemplate) {
        self.interface_templates.insert(t.name.clone(), t);
    }

    pub fn add_handler_template(&mut self, t: HandlerTemplate) {
        self.handler_templates.insert(t.name.clone(), t);
    }

    fn claim_name(&mut self, name: &str, key: MonomorphKey) -> Result<()> {
        match self.names.get(name) {
            Some(k) if *k != key => Err(Error::Template(format!(
                "emitted name {name} already used by a different specialization ({k})"
            ))),
            _ => {
                self.names.insert(name.to_string(), key);
                Ok(())
            }
        }
    }

    /// Concrete interface class for `template(type_args...)`, created on first use.
    pub fn monomorphize_interface(&mut self, template: &str, type_args: &[TypeDesc]) -> Result<ClassId> {
        let key = (template.to_string(), type_args.to_vec());
        if let Some(id) = self.iface_cache.get(&key) {
            return Ok(*id);
        }
        let t = self
            .interface_templates
            .get(template)
            .ok_or_else(|| Error::Template(format!("unknown interface class {template}")))?
            .clone();
        if type_args.len() != t.arity {
            return Err(Error::Template(format!(
                "{template} expects {} type argument(s), got {}",
                t.arity,
                type_args.len()
            )));
        }
        let members = (t.build)(type_args)?;
        let name = format!("{template}{}", type_args.iter().map(|a| a.mangle()).collect::<String>());
        self.claim_name(
            &name,
            MonomorphKey {
                class: template.into(),
                member: None,
                args: type_args.iter().map(TypeDescKey::from).collect(),
            },
        )?;
        for a in type_args {
            self.register_record_types(a)?;
        }
        let id = ClassId(self.interfaces.len() as u32);
        self.interfaces.push(InterfaceClass {
            id,
            template: template.into(),
            name,
            type_args: type_args.to_vec(),
            members,
            primary_handler: t.primary_handler.clone(),
            secondary_handler: t.secondary_handler.clone(),
        });
        self.iface_cache.insert(key, id);
        self.created.push(ClassRef::Interface(id));
        Ok(id)
    }

    /// Concrete handler class `template` for interface `iface`.
    pub fn monomorphize_handler(&mut self, template: &str, iface: ClassId) -> Result<HandlerClassId> {
        let key = (template.to_string(), iface);
        if let Some(id) = self.handler_cache.get(&key) {
            return Ok(*id);
        }
        let t = self
            .handler_templates
            .get(template)
            .ok_or_else(|| Error::Template(format!("unknown handler class {template}")))?
            .clone();
        let ic = self.interface(iface).clone();
        let parts = (t.build)(&ic)?;
        let name = format!(
            "{template}{}",
            ic.type_args.iter().map(|a| a.mangle()).collect::<String>()
        );
        self.claim_name(
            &name,
            MonomorphKey {
                class: template.into(),
                member: None,
                args: vec![TypeDescKey(ic.name.clone())],
            },
        )?;
        let id = HandlerClassId(self.handlers.len() as u32);
        let class = HandlerClass {
            id,
            template: template.into(),
            name,
            role: t.role,
            flavor: t.flavor,
            interface: iface,
            members: parts.members,
            methods: parts.methods,
            combinational: parts.combinational,
        };
        // Zero-argument members and combinational blocks are checked eagerly.
        let env = MethodEnv {
            registry: self,
            class: &class,
            params: &[],
        };
        for m in class.methods.iter().filter(|m| m.params.is_empty()) {
            typeck::check_method(&env, m).map_err(|e| Error::Template(format!("{}.{}: {e}", class.name, m.name)))?;
        }
        for c in &class.combinational {
            typeck::check_block(&env, &c.body)
                .map_err(|e| Error::Template(format!("{}.{}: {e}", class.name, c.name)))?;
        }
        self.handlers.push(class);
        self.handler_cache.insert(key, id);
        self.created.push(ClassRef::Handler(id));
        Ok(id)
    }

    /// Registers record (data) classes reachable from `ty`.
    pub fn register_record_types(&mut self, ty: &TypeDesc) -> Result<()> {
        match ty {
            TypeDesc::Record(r) => {
                for (_, f) in &r.fields {
                    self.register_record_types(f)?;
                }
                if self.records.iter().any(|x| x == r) {
                    return Ok(());
                }
                self.claim_name(
                    &r.name,
                    MonomorphKey {
                        class: r.name.clone(),
                        member: None,
                        args: vec![TypeDescKey::from(ty)],
                    },
                )?;
                self.records.push(r.clone());
                self.created.push(ClassRef::Record(self.records.len() as u32 - 1));
                Ok(())
            }
            TypeDesc::Array { elem, .. } => self.register_record_types(elem),
            _ => Ok(()),
        }
    }

    pub fn interface(&self, id: ClassId) -> &InterfaceClass {
        &self.interfaces[id.0 as usize]
    }

    pub fn handler(&self, id: HandlerClassId) -> &HandlerClass {
        &self.handlers[id.0 as usize]
    }

    pub fn spec(&self, id: SpecId) -> &Specialization {
        &self.specializations[id.0 as usize]
    }

    pub fn find_interface(&self, name: &str) -> Option<ClassId> {
        self.interfaces.iter().find(|c| c.name == name).map(|c| c.id)
    }

    /// Specialization of `class.method` for `arg_types`, creating it on first
    /// request. Fails when the body does not type-check for these arguments.
    pub fn monomorphize_member(
        &mut self,
        class: HandlerClassId,
        method: &str,
        arg_types: &[TypeDesc],
    ) -> Result<SpecId> {
        let key = (class, method.to_string(), arg_types.to_vec());
        if let Some(id) = self.spec_cache.get(&key) {
            return Ok(*id);
        }
        let hc = self.handler(class);
        let m = hc
            .method(method)
            .ok_or_else(|| Error::Template(format!("{} has no member function {method}", hc.name)))?;
        if m.params.len() != arg_types.len() {
            return Err(Error::Template(format!(
                "{}.{method} takes {} argument(s), got {}",
                hc.name,
                m.params.len(),
                arg_types.len()
            )));
        }
        let env = MethodEnv {
            registry: self,
            class: hc,
            params: arg_types,
        };
        typeck::check_method(&env, m).map_err(|e| {
            Error::Template(format!(
                "{}.{method}({}) cannot be specialized: {e}",
                hc.name,
                arg_types.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
            ))
        })?;
        for t in arg_types {
            self.register_record_types(t)?;
        }
        let id = SpecId(self.specializations.len() as u32);
        self.specializations.push(Specialization {
            id,
            class,
            method: method.into(),
            arg_types: arg_types.to_vec(),
            materialized: false,
        });
        self.spec_cache.insert(key, id);
        Ok(id)
    }

    /// Conversion-time lookup: a ready specialization, or `Missing` after
    /// queueing its creation (or when it can never be created).
    pub fn request(&mut self, class: HandlerClassId, method: &str, arg_types: &[TypeDesc]) -> Lookup {
        match self.monomorphize_member(class, method, arg_types) {
            Ok(id) if self.spec(id).materialized => Lookup::Ready(id),
            _ => Lookup::Missing,
        }
    }

    pub fn pending_specializations(&self) -> Vec<SpecId> {
        self.specializations
            .iter()
            .filter(|s| !s.materialized)
            .map(|s| s.id)
            .collect()
    }

    pub fn materialize(&mut self, id: SpecId) {
        self.specializations[id.0 as usize].materialized = true;
    }

    pub fn specs_of(&self, class: HandlerClassId) -> impl Iterator<Item = &Specialization> {
        self.specializations.iter().filter(move |s| s.class == class)
    }
}

/// Type environment for a handler member function.
pub struct MethodEnv<'a> {
    pub registry: &'a ClassRegistry,
    pub class: &'a HandlerClass,
    pub params: &'a [TypeDesc],
}

impl TypeEnv for MethodEnv<'_> {
    fn root(&self, root: &stmt::Root, members: &[String]) -> Result<(PlaceKind, usize)> {
        match root {
            stmt::Root::SelfObj => {
                let first = members
                    .first()
                    .ok_or_else(|| Error::Grammar("bare self reference".into()))?;
                let m = self
                    .class
                    .member(first)
                    .ok_or_else(|| Error::Grammar(format!("{} has no member {first}", self.class.name)))?;
                let iface = self.registry.interface(self.class.interface);
                Ok((PlaceKind::Data(m.ty(iface), m.storage), 1))
            }
            stmt::Root::Param(i) => {
                let t = self
                    .params
                    .get(*i)
                    .ok_or_else(|| Error::Grammar(format!("parameter {i} out of range")))?;
                Ok((PlaceKind::Data(t.clone(), Storage::Variable), 0))
            }
            other => Err(Error::Grammar(format!(
                "{other:?} is not reachable from a member function"
            ))),
        }
    }

    fn handler_class(&self, _h: crate::design::HandlerId) -> Result<&HandlerClass> {
        Err(Error::Grammar(
            "handler references are not allowed inside member functions".into(),
        ))
    }

    fn registry(&self) -> &ClassRegistry {
        self.registry
    }
}

/// The reference protocol implementations: AXI4-Stream (generic over the
/// data type) and the native FIFO read side.
pub mod protocols {
    use super::*;

    pub const AXI_STREAM: &str = "axiStream";
    pub const AXI_SENDER: &str = "axisStream_sender";
    pub const AXI_RECEIVER: &str = "axisStream_receiver";
    pub const NATIVE_FIFO: &str = "NativeFifo";
    pub const NATIVE_FIFO_IN: &str = "NativeFIFO_in";

    pub(super) fn install(r: &mut ClassRegistry) {
        r.add_interface_template(InterfaceTemplate {
            name: AXI_STREAM.into(),
            arity: 1,
            build: axi_members,
            primary_handler: Some(AXI_SENDER.into()),
            secondary_handler: Some(AXI_RECEIVER.into()),
        });
        r.add_interface_template(InterfaceTemplate {
            name: NATIVE_FIFO.into(),
            arity: 1,
            build: native_fifo_members,
            primary_handler: None,
            secondary_handler: Some(NATIVE_FIFO_IN.into()),
        });
        r.add_handler_template(HandlerTemplate {
            name: AXI_SENDER.into(),
            role: HandlerRole::Primary,
            flavor: HandlerFlavor::Sender,
            build: axi_sender,
        });
        r.add_handler_template(HandlerTemplate {
            name: AXI_RECEIVER.into(),
            role: HandlerRole::Secondary,
            flavor: HandlerFlavor::Receiver,
            build: axi_receiver,
        });
        r.add_handler_template(HandlerTemplate {
            name: NATIVE_FIFO_IN.into(),
            role: HandlerRole::Handle,
            flavor: HandlerFlavor::Receiver,
            build: native_fifo_in,
        });
    }

    fn axi_members(args: &[TypeDesc]) -> Result<Vec<IfaceMember>> {
        Ok(vec![
            IfaceMember::new("valid", TypeDesc::Logic, Flow::M2S, Some(Value::Integer(0)))?,
            IfaceMember::new("last", TypeDesc::Logic, Flow::M2S, Some(Value::Integer(0)))?,
            IfaceMember::new("data", args[0].clone(), Flow::M2S, None)?,
            IfaceMember::new("ready", TypeDesc::Logic, Flow::S2M, Some(Value::Integer(0)))?,
        ])
    }

    /// Read side of a native FIFO (dout/empty/ren), seen from the FIFO.
    fn native_fifo_members(args: &[TypeDesc]) -> Result<Vec<IfaceMember>> {
        Ok(vec![
            IfaceMember::new("data", args[0].clone(), Flow::M2S, None)?,
            IfaceMember::new("empty", TypeDesc::Logic, Flow::M2S, Some(Value::Integer(1)))?,
            IfaceMember::new("enable", TypeDesc::Logic, Flow::S2M, Some(Value::Integer(0)))?,
        ])
    }

    fn axi_sender(_ic: &InterfaceClass) -> Result<HandlerParts> {
        let tx = |m: &str| this(&["tx", m]);
        Ok(HandlerParts {
            members: vec![MemberDef::view("tx", ViewSource::Port)],
            methods: vec![
                MethodDef::procedure(
                    "send_data",
                    &[("dataIn", ParamMode::In)],
                    vec![drive(tx("valid"), 1), drive(tx("data"), param(0))],
                ),
                MethodDef::procedure(
                    "send_data_last",
                    &[("dataIn", ParamMode::In), ("lastIn", ParamMode::In)],
                    vec![
                        drive(tx("valid"), 1),
                        drive(tx("data"), param(0)),
                        drive(tx("last"), param(1)),
                    ],
                ),
                MethodDef::function("ready_to_send", e(tx("valid")).eq(0)),
                MethodDef::function("truthiness", e(tx("valid")).eq(0)),
                MethodDef::procedure(
                    "_onPull",
                    &[],
                    vec![if_(
                        e(tx("ready")).eq(1),
                        vec![drive(tx("valid"), 0), drive(tx("last"), 0)],
                    )],
                ),
            ],
            combinational: Vec::new(),
        })
    }

    fn axi_receiver(ic: &InterfaceClass) -> Result<HandlerParts> {
        let data_ty = ic
            .data_type()
            .ok_or_else(|| Error::Template(format!("{} has no data member", ic.name)))?
            .clone();
        let rx = |m: &str| this(&["rx", m]);
        let buf = || this(&["data_internal2"]);
        let isvalid = || this(&["data_internal_isvalid2"]);
        let was_read = || this(&["data_internal_was_read2"]);
        let last = || this(&["data_internal_last2"]);
        Ok(HandlerParts {
            members: vec![
                MemberDef::view("rx", ViewSource::Port),
                MemberDef::variable("data_internal2", data_ty.clone(), Value::zero_for(&data_ty)),
                MemberDef::variable("data_internal_isvalid2", TypeDesc::Logic, Value::zero_bit()),
                MemberDef::variable("data_internal_was_read2", TypeDesc::Logic, Value::zero_bit()),
                MemberDef::variable("data_internal_last2", TypeDesc::Logic, Value::zero_bit()),
            ],
            methods: vec![
                MethodDef::procedure(
                    "_onPull",
                    &[],
                    vec![
                        drive(was_read(), 0),
                        if_(
                            e(rx("valid")).eq(1).and(e(rx("ready")).eq(1)),
                            vec![drive(buf(), rx("data")), drive(last(), rx("last")), drive(isvalid(), 1)],
                        ),
                    ],
                ),
                MethodDef::procedure(
                    "_onPush",
                    &[],
                    vec![
                        if_(e(was_read()).eq(1), vec![drive(isvalid(), 0)]),
                        drive(rx("ready"), !e(isvalid())),
                    ],
                ),
                MethodDef::function("isReceivingData", e(isvalid()).eq(1)),
                MethodDef::function("truthiness", e(isvalid()).eq(1)),
                MethodDef::function("is_last", e(last()).eq(1)),
                MethodDef::procedure(
                    "read_data",
                    &[("rhs", ParamMode::InOut)],
                    vec![
                        reset(param(0)),
                        if_(e(isvalid()).eq(1), vec![drive(param(0), buf()), drive(was_read(), 1)]),
                    ],
                ),
            ],
            combinational: Vec::new(),
        })
    }

    fn native_fifo_in(_ic: &InterfaceClass) -> Result<HandlerParts> {
        let rx = |m: &str| this(&["rx", m]);
        let rx1 = |m: &str| this(&["rx1", m]);
        let rx2 = |m: &str| this(&["rx2", m]);
        let enable1 = || this(&["enable1"]);
        let empty1 = || this(&["empty1"]);
        let enable_gate: Stmt = drive(
            rx2("enable"),
            stmt::v_switch(0, vec![stmt::v_case(e(rx2("empty")).eq(0), rx1("enable"))]),
        );
        Ok(HandlerParts {
            members: vec![
                MemberDef::free_bundle("rx2", true),
                MemberDef::free_bundle("rx1", false),
                MemberDef::view("rx", ViewSource::Member("rx1".into())),
                MemberDef::variable("enable1", TypeDesc::Logic, Value::zero_bit()),
                MemberDef::variable("empty1", TypeDesc::Logic, Value::one()),
            ],
            methods: vec![
                // A word popped on the previous edge is still visible on the
                // sampled outputs; treat the FIFO as empty for one cycle.
                MethodDef::procedure(
                    "_onPull",
                    &[],
                    vec![
                        drive(enable1(), rx("enable")),
                        drive(rx("enable"), 0),
                        stmt::if_else(
                            e(enable1()).eq(1),
                            vec![drive(empty1(), 1)],
                            vec![drive(empty1(), rx("empty"))],
                        ),
                    ],
                ),
                MethodDef::function("isReceivingData", e(empty1()).eq(0)),
                MethodDef::function("truthiness", e(empty1()).eq(0)),
                MethodDef::procedure(
                    "read_data",
                    &[("rhs", ParamMode::InOut)],
                    vec![
                        reset(param(0)),
                        if_(
                            e(empty1()).eq(0),
                            vec![drive(param(0), rx("data")), drive(rx("enable"), 1), drive(empty1(), 1)],
                        ),
                    ],
                ),
            ],
            combinational: vec![CombDef {
                name: "p2".into(),
                body: vec![
                    enable_gate,
                    drive(rx1("empty"), rx2("empty")),
                    drive(rx1("data"), rx2("data")),
                ],
            }],
        })
    }

    /// `axiStream(data_type)`
    pub fn axi_stream(r: &mut ClassRegistry, data: TypeDesc) -> Result<ClassId> {
        r.monomorphize_interface(AXI_STREAM, &[data])
    }

    pub fn native_fifo(r: &mut ClassRegistry, data: TypeDesc) -> Result<ClassId> {
        r.monomorphize_interface(NATIVE_FIFO, &[data])
    }
}

#[cfg(test)]
mod tests {
    use super::protocols::*;
    use super::*;

    #[test]
    fn interface_monomorphization_is_cached_and_named() {
        let mut r = ClassRegistry::default();
        let a = axi_stream(&mut r, TypeDesc::Vector(32)).unwrap();
        let b = axi_stream(&mut r, TypeDesc::Vector(32)).unwrap();
        assert_eq!(a, b);
        assert_eq!(r.interface(a).name, "axiStream_32");
        assert_eq!(r.interfaces.len(), 1);
        let rec = TypeDesc::record(
            "pixel",
            vec![("a".into(), TypeDesc::Vector(8)), ("b".into(), TypeDesc::Logic)],
        )
        .unwrap();
        let c = axi_stream(&mut r, rec).unwrap();
        assert_ne!(a, c);
        assert_eq!(r.interface(c).name, "axiStream_pixel");
        assert_eq!(r.records.len(), 1);
    }

    #[test]
    fn arity_mismatch_is_template_error() {
        let mut r = ClassRegistry::default();
        let err = r.monomorphize_interface(AXI_STREAM, &[]).unwrap_err();
        assert!(matches!(err, Error::Template(_)), "{err}");
    }

    #[test]
    fn name_collision_with_different_key_is_rejected() {
        let mut r = ClassRegistry::default();
        let p1 = TypeDesc::record("pixel", vec![("a".into(), TypeDesc::Vector(8))]).unwrap();
        let p2 = TypeDesc::record("pixel", vec![("a".into(), TypeDesc::Vector(9))]).unwrap();
        axi_stream(&mut r, p1).unwrap();
        assert!(matches!(axi_stream(&mut r, p2), Err(Error::Template(_))));
    }

    #[test]
    fn member_specialization() {
        let mut r = ClassRegistry::default();
        let i = axi_stream(&mut r, TypeDesc::Vector(32)).unwrap();
        let s = r.monomorphize_handler(AXI_SENDER, i).unwrap();
        assert_eq!(r.handler(s).name, "axisStream_sender_32");
        let a = r.monomorphize_member(s, "send_data", &[TypeDesc::Vector(32)]).unwrap();
        let b = r.monomorphize_member(s, "send_data", &[TypeDesc::Vector(32)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(r.specializations.len(), 1);
        // integer literals are assignable, a 16-bit vector is not
        assert!(r.monomorphize_member(s, "send_data", &[TypeDesc::Vector(16)]).is_err());

        let rcv = r.monomorphize_handler(AXI_RECEIVER, i).unwrap();
        let opt = TypeDesc::optional(TypeDesc::Vector(32));
        r.monomorphize_member(rcv, "read_data", &[opt]).unwrap();
        r.monomorphize_member(rcv, "read_data", &[TypeDesc::Vector(32)])
            .unwrap();
        let err = r
            .monomorphize_member(rcv, "read_data", &[TypeDesc::Integer])
            .unwrap_err();
        assert!(matches!(err, Error::Template(_)), "{err}");
    }

    #[test]
    fn request_reports_missing_until_materialized() {
        let mut r = ClassRegistry::default();
        let i = axi_stream(&mut r, TypeDesc::Vector(32)).unwrap();
        let s = r.monomorphize_handler(AXI_SENDER, i).unwrap();
        assert!(matches!(
            r.request(s, "send_data", &[TypeDesc::Vector(32)]),
            Lookup::Missing
        ));
        let pending = r.pending_specializations();
        assert_eq!(pending.len(), 1);
        r.materialize(pending[0]);
        assert!(matches!(
            r.request(s, "send_data", &[TypeDesc::Vector(32)]),
            Lookup::Ready(_)
        ));
    }

    #[test]
    fn handler_free_type_members() {
        let mut r = ClassRegistry::default();
        let i = native_fifo(&mut r, TypeDesc::Vector(16)).unwrap();
        let h = r.monomorphize_handler(NATIVE_FIFO_IN, i).unwrap();
        let hc = r.handler(h);
        let free: Vec<_> = hc
            .members
            .iter()
            .filter(|m| m.is_free_type())
            .map(|m| m.name.as_str())
            .collect();
        assert_eq!(free, ["rx2", "rx1"]);
        assert_eq!(hc.combinational.len(), 1);
    }
}
