//! Client request validation and structural checking of values against
//! declared types.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{is_identifier, Adt, ClientRequest, Param, Signature, TypeRef};
use crate::value::Value;

/// Names exposed to authored code by the persistence API. Functions may not
/// shadow them.
pub const RESERVED_NAMES: [&str; 5] = ["save", "get", "update", "remove", "list"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Dotted location of the offending item, e.g. `endpoints.createTodo.params.todo`.
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unresolved type reference `{0}`")]
pub struct UnresolvedType(pub String);

/// ADTs by name.
#[derive(Debug, Clone, Default)]
pub struct AdtRegistry {
    adts: BTreeMap<String, Adt>,
}

impl AdtRegistry {
    pub fn new(adts: &[Adt]) -> Self {
        AdtRegistry { adts: adts.iter().map(|a| (a.name.clone(), a.clone())).collect() }
    }

    pub fn get(&self, name: &str) -> Option<&Adt> {
        self.adts.get(name)
    }

    pub fn resolves(&self, ty: &TypeRef) -> bool {
        match ty {
            TypeRef::String | TypeRef::Number | TypeRef::Boolean => true,
            TypeRef::Adt(name) => self.adts.contains_key(name),
            TypeRef::List(inner) => self.resolves(inner),
        }
    }

    fn first_unresolved(&self, ty: &TypeRef) -> Option<String> {
        match ty {
            TypeRef::Adt(name) if !self.adts.contains_key(name) => Some(name.clone()),
            TypeRef::List(inner) => self.first_unresolved(inner),
            _ => None,
        }
    }
}

/// Checks every client request invariant. An empty list means the request is
/// valid.
pub fn validate_client_request(request: &ClientRequest) -> Vec<Violation> {
    let mut out = Vec::new();
    if request.project_name.trim().is_empty() {
        out.push(Violation::new("projectName", "project name must be nonempty"));
    }
    if request.endpoints.is_empty() {
        out.push(Violation::new("endpoints", "at least one endpoint required"));
    }

    let registry = AdtRegistry::new(&request.adts);
    let mut adt_names = HashSet::new();
    for (i, adt) in request.adts.iter().enumerate() {
        let path = format!("adts.{}", label(&adt.name, i));
        if !is_identifier(&adt.name) {
            out.push(Violation::new(&path, format!("ADT name `{}` is not an identifier", adt.name)));
        } else if TypeRef::is_primitive_name(&adt.name) {
            out.push(Violation::new(&path, format!("ADT name `{}` shadows a primitive type", adt.name)));
        }
        if !adt_names.insert(adt.name.as_str()) {
            out.push(Violation::new(&path, format!("duplicate ADT name `{}`", adt.name)));
        }
        let mut field_names = HashSet::new();
        for (j, field) in adt.fields.iter().enumerate() {
            let fpath = format!("{path}.fields.{}", label(&field.name, j));
            if !is_identifier(&field.name) {
                out.push(Violation::new(&fpath, format!("field name `{}` is not an identifier", field.name)));
            }
            if !field_names.insert(field.name.as_str()) {
                out.push(Violation::new(&fpath, format!("duplicate field name `{}`", field.name)));
            }
            if let Some(name) = registry.first_unresolved(&field.ty) {
                out.push(Violation::new(&fpath, format!("unresolved type reference `{name}`")));
            }
        }
    }
    out.extend(value_cycles(&request.adts));

    let mut fn_names = HashSet::new();
    for (i, ep) in request.endpoints.iter().enumerate() {
        let path = format!("endpoints.{}", label(&ep.function_name, i));
        if !is_identifier(&ep.function_name) {
            out.push(Violation::new(
                &path,
                format!("function name `{}` is not an identifier", ep.function_name),
            ));
        } else if RESERVED_NAMES.contains(&ep.function_name.as_str()) {
            out.push(Violation::new(
                &path,
                format!("function name `{}` is reserved by the persistence API", ep.function_name),
            ));
        }
        if !fn_names.insert(ep.function_name.as_str()) {
            out.push(Violation::new(&path, format!("duplicate function name `{}`", ep.function_name)));
        }
        if ep.description.trim().is_empty() {
            out.push(Violation::new(&path, "description must be nonempty"));
        }
        out.extend(check_signature(&path, &ep.params, ep.return_type.as_ref(), &registry));
    }
    out
}

/// Validates a signature proposed for a crowd-created function or an issue
/// resolution against a registry.
pub fn validate_signature(path: &str, signature: &Signature, registry: &AdtRegistry) -> Vec<Violation> {
    check_signature(path, &signature.params, signature.return_type.as_ref(), registry)
}

fn check_signature(
    path: &str,
    params: &[Param],
    return_type: Option<&TypeRef>,
    registry: &AdtRegistry,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for (k, param) in params.iter().enumerate() {
        let ppath = format!("{path}.params.{}", label(&param.name, k));
        if param.name.trim().is_empty() {
            out.push(Violation::new(&ppath, "parameter name must be nonempty"));
        } else if !is_identifier(&param.name) {
            out.push(Violation::new(&ppath, format!("parameter name `{}` is not an identifier", param.name)));
        }
        if !names.insert(param.name.as_str()) {
            out.push(Violation::new(&ppath, format!("duplicate parameter name `{}`", param.name)));
        }
        if let Some(name) = registry.first_unresolved(&param.ty) {
            out.push(Violation::new(&ppath, format!("unresolved type reference `{name}`")));
        }
    }
    if let Some(ty) = return_type {
        if let Some(name) = registry.first_unresolved(ty) {
            out.push(Violation::new(format!("{path}.returnType"), format!("unresolved type reference `{name}`")));
        }
    }
    out
}

fn label(name: &str, index: usize) -> String {
    if name.is_empty() {
        format!("#{index}")
    } else {
        name.to_string()
    }
}

/// ADTs that contain themselves by value, directly or through other ADTs.
/// List fields break the chain.
fn value_cycles(adts: &[Adt]) -> Vec<Violation> {
    let edges: HashMap<&str, Vec<&str>> = adts
        .iter()
        .map(|a| {
            let deps = a.fields.iter().filter_map(|f| f.ty.direct_adt()).collect();
            (a.name.as_str(), deps)
        })
        .collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }

    fn visit<'a>(
        node: &'a str,
        edges: &HashMap<&'a str, Vec<&'a str>>,
        marks: &mut HashMap<&'a str, Mark>,
        cyclic: &mut HashSet<&'a str>,
    ) {
        match marks.get(node) {
            Some(Mark::Done) => return,
            Some(Mark::Visiting) => {
                cyclic.insert(node);
                return;
            }
            None => {}
        }
        marks.insert(node, Mark::Visiting);
        for &next in edges.get(node).into_iter().flatten() {
            if edges.contains_key(next) {
                visit(next, edges, marks, cyclic);
            }
        }
        marks.insert(node, Mark::Done);
    }

    let mut marks = HashMap::new();
    let mut cyclic = HashSet::new();
    for adt in adts {
        visit(&adt.name, &edges, &mut marks, &mut cyclic);
    }
    let mut names: Vec<_> = cyclic.into_iter().collect();
    names.sort_unstable();
    names
        .into_iter()
        .map(|n| {
            Violation::new(
                format!("adts.{n}"),
                format!("ADT `{n}` contains itself by value; use a list field to break the cycle"),
            )
        })
        .collect()
}

/// Structural match of a value against a type. Primitives match by tag, ADTs
/// need exactly their declared fields, lists check every element.
pub fn validate_value(
    value: &Value,
    ty: &TypeRef,
    registry: &AdtRegistry,
) -> Result<Vec<Violation>, UnresolvedType> {
    if let Some(name) = registry.first_unresolved(ty) {
        return Err(UnresolvedType(name));
    }
    let mut out = Vec::new();
    check_value(value, ty, registry, "", &mut out);
    Ok(out)
}

fn check_value(value: &Value, ty: &TypeRef, registry: &AdtRegistry, path: &str, out: &mut Vec<Violation>) {
    let mismatch = |out: &mut Vec<Violation>| {
        out.push(Violation::new(path, format!("expected {ty}, found {}", value.type_tag())));
    };
    match (ty, value) {
        (TypeRef::String, Value::String(_))
        | (TypeRef::Number, Value::Number(_))
        | (TypeRef::Boolean, Value::Bool(_)) => {}
        (TypeRef::List(inner), Value::List(items)) => {
            for (i, item) in items.iter().enumerate() {
                check_value(item, inner, registry, &join(path, &i.to_string()), out);
            }
        }
        (TypeRef::Adt(name), Value::Object(fields)) => {
            // Resolution was checked up front.
            let Some(adt) = registry.get(name) else { return };
            for field in &adt.fields {
                match fields.get(&field.name) {
                    Some(v) => check_value(v, &field.ty, registry, &join(path, &field.name), out),
                    None => out.push(Violation::new(path, format!("missing field {}", field.name))),
                }
            }
            for key in fields.keys() {
                if !adt.fields.iter().any(|f| &f.name == key) {
                    out.push(Violation::new(path, format!("unexpected field {key}")));
                }
            }
        }
        _ => mismatch(out),
    }
}

fn join(path: &str, segment: &str) -> String {
    if path.is_empty() {
        segment.to_string()
    } else {
        format!("{path}.{segment}")
    }
}
