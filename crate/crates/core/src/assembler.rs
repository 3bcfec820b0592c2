//! Turns a completed project into a runnable Node.js source tree and hands
//! it to a deploy target.
//!
//! Function bodies are copied verbatim; only the wrappers, the route table,
//! the persistence adapter and the entry point are generated.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Adt, ClientId, EndpointSpec, FunctionArtifact, FunctionState, LogicalTime, Param, TypeRef};
use crate::state::{ProjectState, Publication};
use crate::validate::RESERVED_NAMES;
use crate::value::to_canonical_string;
use crate::workflow::{CommandError, Project};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    #[default]
    Get,
    Post,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssemblyOptions {
    /// Method used for every route. Parameters are read from the body either way.
    #[serde(default)]
    pub method: HttpMethod,
    /// Assemble even if some functions are not completed.
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Route {
    pub method: HttpMethod,
    pub path: String,
    pub function_name: String,
    pub params: Vec<Param>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProjectArtifactTree {
    pub files: BTreeMap<String, Vec<u8>>,
    pub route_manifest: Vec<Route>,
}

impl ProjectArtifactTree {
    /// SHA-256 over every (path, content) pair in path order, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (path, bytes) in &self.files {
            hasher.update((path.len() as u64).to_be_bytes());
            hasher.update(path.as_bytes());
            hasher.update((bytes.len() as u64).to_be_bytes());
            hasher.update(bytes);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn file_text(&self, path: &str) -> Option<&str> {
        self.files.get(path).and_then(|b| std::str::from_utf8(b).ok())
    }

    /// Paths under `functions/`.
    pub fn function_files(&self) -> Vec<&str> {
        self.files.keys().filter(|p| p.starts_with("functions/")).map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssembleError {
    #[error("project has no client request")]
    NoRequest,
    #[error("project is not complete: {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("endpoint {0} has no function")]
    MissingEndpointFunction(String),
}

#[derive(Debug, thiserror::Error)]
pub enum PublishError {
    #[error("deploy target failed: {0}")]
    Target(String),
    #[error(transparent)]
    Command(#[from] CommandError),
}

/// Route plus the route-table entry that binds it. The table entry is a
/// JavaScript object literal spliced into `handlers/routes.js`.
pub fn generate_handler(endpoint: &EndpointSpec, method: HttpMethod) -> (String, Route) {
    let route = Route {
        method,
        path: format!("/{}", endpoint.function_name),
        function_name: endpoint.function_name.clone(),
        params: endpoint.params.clone(),
    };
    let params: Vec<String> =
        endpoint.params.iter().map(|p| format!("{{ name: {}, type: {} }}", js_str(&p.name), js_str(&p.ty.to_string()))).collect();
    let source = format!(
        "  {{\n    method: {},\n    path: {},\n    fn: require(\"../functions/{}.js\"),\n    params: [{}],\n  }},\n",
        js_str(method.as_str()),
        js_str(&route.path),
        endpoint.function_name,
        params.join(", "),
    );
    (source, route)
}

/// Functions that are not yet completed, as `name (State)`.
pub fn incomplete_functions(state: &ProjectState) -> Vec<String> {
    state
        .functions
        .values()
        .filter(|f| f.state != FunctionState::Completed)
        .map(|f| {
            let label = match f.state {
                FunctionState::AwaitingWork => "AwaitingWork",
                FunctionState::Halted { .. } => "Halted",
                FunctionState::Completed => "Completed",
            };
            format!("{} ({label})", f.name)
        })
        .collect()
}

pub fn assemble_project(state: &ProjectState, options: &AssemblyOptions) -> Result<ProjectArtifactTree, AssembleError> {
    let request = state.request.as_ref().ok_or(AssembleError::NoRequest)?;
    let incomplete = incomplete_functions(state);
    if !incomplete.is_empty() && !options.force {
        return Err(AssembleError::Incomplete(incomplete));
    }
    let names: BTreeSet<&str> = state.functions.values().map(|f| f.name.as_str()).collect();

    let mut tree = ProjectArtifactTree::default();
    for f in state.functions.values() {
        tree.files.insert(format!("functions/{}.js", f.name), function_file(f, &names).into_bytes());
    }

    let mut table = String::new();
    for endpoint in &request.endpoints {
        if !names.contains(endpoint.function_name.as_str()) {
            return Err(AssembleError::MissingEndpointFunction(endpoint.function_name.clone()));
        }
        let (source, route) = generate_handler(endpoint, options.method);
        table.push_str(&source);
        tree.route_manifest.push(route);
    }
    tree.files.insert("handlers/routes.js".into(), routes_file(&table, &request.adts).into_bytes());
    tree.files.insert("persistence/adapter.js".into(), ADAPTER.as_bytes().to_vec());
    tree.files.insert("main.js".into(), MAIN.as_bytes().to_vec());

    let manifest = Manifest {
        project_name: request.project_name.clone(),
        routes: tree.route_manifest.clone(),
        functions: names.iter().map(|n| n.to_string()).collect(),
    };
    let text = to_canonical_string(&manifest).expect("manifest holds only strings");
    tree.files.insert("manifest.json".into(), text.into_bytes());
    Ok(tree)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Manifest {
    project_name: String,
    routes: Vec<Route>,
    functions: Vec<String>,
}

fn js_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Identifiers appearing in `body`, ignoring string literals and comments.
fn identifiers(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let chars: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' || c == '\'' || c == '`' {
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i += 2;
        } else if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            // Property accesses such as `todo.save` are not calls to siblings.
            if start == 0 || chars[start - 1] != '.' {
                out.insert(chars[start..i].iter().collect());
            }
        } else if c.is_ascii_digit() {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

fn function_file(f: &FunctionArtifact, names: &BTreeSet<&str>) -> String {
    let used = identifiers(&f.code);
    let mut out = String::from("\"use strict\";\n\n");
    let persistence: Vec<&str> = RESERVED_NAMES.iter().copied().filter(|n| used.contains(*n)).collect();
    let mut imports = String::new();
    if !persistence.is_empty() {
        imports.push_str(&format!("const {{ {} }} = require(\"../persistence/adapter.js\");\n", persistence.join(", ")));
    }
    for sibling in names.iter().filter(|n| **n != f.name && used.contains(**n)) {
        imports.push_str(&format!("const {sibling} = (...args) => require(\"./{sibling}.js\")(...args);\n"));
    }
    if !imports.is_empty() {
        out.push_str(&imports);
        out.push('\n');
    }
    let params = f.signature.param_names().join(", ");
    out.push_str(&format!("function {}({params}) {{\n", f.name));
    out.push_str(&f.code);
    if !f.code.is_empty() && !f.code.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&format!("}}\n\nmodule.exports = {};\n", f.name));
    out
}

fn type_js(t: &TypeRef) -> String {
    js_str(&t.to_string())
}

fn routes_file(table: &str, adts: &[Adt]) -> String {
    let mut adt_src = String::new();
    for adt in adts {
        let fields: Vec<String> =
            adt.fields.iter().map(|f| format!("{}: {}", js_str(&f.name), type_js(&f.ty))).collect();
        adt_src.push_str(&format!("  {}: {{ {} }},\n", js_str(&adt.name), fields.join(", ")));
    }
    ROUTES_TEMPLATE.replace("/*ADTS*/\n", &adt_src).replace("/*ROUTES*/\n", table)
}

const ROUTES_TEMPLATE: &str = r#""use strict";

const ADTS = {
/*ADTS*/
};

const ROUTES = [
/*ROUTES*/
];

function check(type, value, path, out) {
  if (type.endsWith("[]")) {
    if (!Array.isArray(value)) {
      out.push({ path, message: "expected " + type });
      return;
    }
    value.forEach((v, i) => check(type.slice(0, -2), v, path + "." + i, out));
    return;
  }
  if (type === "string" || type === "number" || type === "boolean") {
    if (typeof value !== type || (type === "number" && !Number.isFinite(value))) {
      out.push({ path, message: "expected " + type });
    }
    return;
  }
  const adt = ADTS[type];
  if (value === null || typeof value !== "object" || Array.isArray(value)) {
    out.push({ path, message: "expected " + type });
    return;
  }
  for (const field of Object.keys(adt)) {
    if (!(field in value) || value[field] === null) {
      out.push({ path: path + "." + field, message: "missing field" });
    } else {
      check(adt[field], value[field], path + "." + field, out);
    }
  }
}

function canonical(value) {
  if (value === undefined) {
    return "null";
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonical).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const keys = Object.keys(value).sort();
    return "{" + keys.map((k) => JSON.stringify(k) + ":" + canonical(value[k])).join(",") + "}";
  }
  return JSON.stringify(value);
}

function handle(method, path, body) {
  const route = ROUTES.find((r) => r.path === path);
  if (!route) {
    return { status: 404, body: canonical({ code: "notFound", message: "no route " + path, violations: [] }) };
  }
  if (route.method !== method) {
    return { status: 405, body: canonical({ code: "methodNotAllowed", message: route.method + " only", violations: [] }) };
  }
  const args = body !== null && typeof body === "object" && !Array.isArray(body) ? body : {};
  const violations = [];
  for (const p of route.params) {
    if (!(p.name in args)) {
      violations.push({ path: p.name, message: "missing parameter" });
    } else {
      check(p.type, args[p.name], p.name, violations);
    }
  }
  if (violations.length > 0) {
    return { status: 400, body: canonical({ code: "invalid", message: "invalid parameters", violations }) };
  }
  try {
    const result = route.fn(...route.params.map((p) => args[p.name]));
    return { status: 200, body: canonical(result) };
  } catch (e) {
    const message = e && e.message ? e.message : String(e);
    return { status: 500, body: canonical({ code: "functionError", message, violations: [] }) };
  }
}

module.exports = { ROUTES, handle, canonical };
"#;

const ADAPTER: &str = r#""use strict";

// Binds the five persistence calls to a backend. Set PERSISTENCE_BACKEND to
// a module path exporting save/get/update/remove/list to use a real store;
// the default keeps documents in memory for the life of the process.

function memory() {
  const collections = new Map();
  const docs = (c) => {
    if (!collections.has(c)) {
      collections.set(c, new Map());
    }
    return collections.get(c);
  };
  const copy = (v) => (v === undefined ? null : JSON.parse(JSON.stringify(v)));
  return {
    save(collection, id, value) {
      docs(collection).set(id, copy(value));
      return copy(value);
    },
    get(collection, id) {
      return docs(collection).has(id) ? copy(docs(collection).get(id)) : null;
    },
    update(collection, id, value) {
      if (!docs(collection).has(id)) {
        throw new Error("no document " + id + " in " + collection);
      }
      docs(collection).set(id, copy(value));
      return copy(value);
    },
    remove(collection, id) {
      return docs(collection).delete(id);
    },
    list(collection) {
      return Array.from(docs(collection).values(), copy);
    },
  };
}

const backend = process.env.PERSISTENCE_BACKEND ? require(process.env.PERSISTENCE_BACKEND) : memory();

module.exports = {
  save: (collection, id, value) => backend.save(collection, id, value),
  get: (collection, id) => backend.get(collection, id),
  update: (collection, id, value) => backend.update(collection, id, value),
  remove: (collection, id) => backend.remove(collection, id),
  list: (collection) => backend.list(collection),
};
"#;

const MAIN: &str = r#""use strict";

const http = require("http");
const { handle } = require("./handlers/routes.js");

const server = http.createServer((req, res) => {
  let text = "";
  req.on("data", (chunk) => {
    text += chunk;
  });
  req.on("end", () => {
    let body = {};
    if (text.trim() !== "") {
      try {
        body = JSON.parse(text);
      } catch (e) {
        res.writeHead(400, { "content-type": "application/json" });
        res.end(JSON.stringify({ code: "invalid", message: "body is not JSON", violations: [] }));
        return;
      }
    }
    const url = new URL(req.url, "http://localhost");
    const out = handle(req.method, url.pathname, body);
    res.writeHead(out.status, { "content-type": "application/json" });
    res.end(out.body);
  });
});

const port = Number(process.env.PORT || 3000);
server.listen(port, () => console.log("listening on " + port));
"#;

/// Where a published tree goes. Returns a location on success.
pub trait DeployTarget {
    fn deploy(&self, tree: &ProjectArtifactTree) -> Result<String, String>;
}

/// Writes the tree under a directory, replacing files of the same name.
#[derive(Debug, Clone)]
pub struct LocalDirectory(pub PathBuf);

impl DeployTarget for LocalDirectory {
    fn deploy(&self, tree: &ProjectArtifactTree) -> Result<String, String> {
        for (path, bytes) in &tree.files {
            let target = self.0.join(path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
            }
            fs::write(&target, bytes).map_err(|e| format!("{}: {e}", target.display()))?;
        }
        Ok(self.0.display().to_string())
    }
}

/// Deploys `tree` and records the publication. Nothing is recorded if the
/// caller is not the client or the target fails.
pub fn publish(
    project: &mut Project,
    caller: &ClientId,
    tree: &ProjectArtifactTree,
    target: &dyn DeployTarget,
    now: LogicalTime,
) -> Result<Publication, PublishError> {
    if project.state().client.as_ref() != Some(caller) {
        return Err(CommandError::Unauthorized("only the project client may publish".into()).into());
    }
    let location = target.deploy(tree).map_err(PublishError::Target)?;
    project.record_publication(caller, location, tree.content_hash(), now)?;
    Ok(project.state().publications.last().cloned().expect("publication just recorded"))
}
