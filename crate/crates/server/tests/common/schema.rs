//! Checker for the JSON Schema keywords used under `docs/api/`.
//!
//! Covers `$ref` (same-file and cross-file), `type`, `enum`, `const`,
//! `required`, `properties`, `additionalProperties`, `items`, `anyOf`,
//! `minimum`, `maximum`, `minLength` and `pattern`. Unknown keywords fail loudly
//! so a schema cannot silently outgrow the checker.

use std::collections::HashMap;
use std::path::PathBuf;

use regex::Regex;
use serde_json::Value;

const ANNOTATIONS: [&str; 5] = ["$schema", "$id", "title", "description", "$defs"];

pub struct Schemas {
    docs: HashMap<String, Value>,
}

impl Schemas {
    pub fn load() -> Self {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/api");
        let mut docs = HashMap::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                docs.insert(name, serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap());
            }
        }
        Schemas { docs }
    }

    pub fn names(&self) -> Vec<&str> {
        self.docs.keys().map(String::as_str).collect()
    }

    /// Validates `value` against the named schema file, returning every violation.
    pub fn check(&self, file: &str, value: &Value) -> Vec<String> {
        let mut errors = Vec::new();
        let root = self.docs.get(file).unwrap_or_else(|| panic!("no schema {file}"));
        self.walk(file, root, value, "$", &mut errors);
        errors
    }

    pub fn assert_valid(&self, file: &str, value: &Value) {
        let errors = self.check(file, value);
        assert!(errors.is_empty(), "{file}:\n{}\n{value:#}", errors.join("\n"));
    }

    fn resolve<'a>(&'a self, file: &'a str, reference: &str) -> (&'a str, &'a Value) {
        let (target, pointer) = reference.split_once('#').unwrap_or((reference, ""));
        let file = if target.is_empty() {
            file
        } else {
            self.docs.get_key_value(target).unwrap_or_else(|| panic!("no schema {target}")).0.as_str()
        };
        let node = self.docs[file].pointer(pointer).unwrap_or_else(|| panic!("bad $ref {reference}"));
        (file, node)
    }

    fn walk(&self, file: &str, schema: &Value, value: &Value, at: &str, errors: &mut Vec<String>) {
        let obj = schema.as_object().expect("schema must be an object");
        for (key, rule) in obj {
            match key.as_str() {
                k if ANNOTATIONS.contains(&k) => {}
                "$ref" => {
                    let (f, node) = self.resolve(file, rule.as_str().unwrap());
                    self.walk(f, node, value, at, errors);
                }
                "type" => {
                    let allowed: Vec<&str> = match rule {
                        Value::String(s) => vec![s.as_str()],
                        Value::Array(a) => a.iter().map(|t| t.as_str().unwrap()).collect(),
                        _ => panic!("bad type keyword"),
                    };
                    if !allowed.iter().any(|t| type_matches(t, value)) {
                        errors.push(format!("{at}: expected {allowed:?}, got {value}"));
                    }
                }
                "enum" => {
                    if !rule.as_array().unwrap().contains(value) {
                        errors.push(format!("{at}: {value} not in {rule}"));
                    }
                }
                "const" => {
                    if rule != value {
                        errors.push(format!("{at}: expected {rule}, got {value}"));
                    }
                }
                "required" => {
                    if let Some(o) = value.as_object() {
                        for name in rule.as_array().unwrap() {
                            if !o.contains_key(name.as_str().unwrap()) {
                                errors.push(format!("{at}: missing {name}"));
                            }
                        }
                    }
                }
                "properties" => {
                    if let Some(o) = value.as_object() {
                        for (name, sub) in rule.as_object().unwrap() {
                            if let Some(v) = o.get(name) {
                                self.walk(file, sub, v, &format!("{at}.{name}"), errors);
                            }
                        }
                    }
                }
                "additionalProperties" => {
                    if let Some(o) = value.as_object() {
                        let declared = obj.get("properties").and_then(Value::as_object);
                        for (name, v) in o {
                            if declared.is_some_and(|d| d.contains_key(name)) {
                                continue;
                            }
                            match rule {
                                Value::Bool(false) => errors.push(format!("{at}: unexpected property {name}")),
                                Value::Bool(true) => {}
                                sub => self.walk(file, sub, v, &format!("{at}.{name}"), errors),
                            }
                        }
                    }
                }
                "items" => {
                    if let Some(a) = value.as_array() {
                        for (i, v) in a.iter().enumerate() {
                            self.walk(file, rule, v, &format!("{at}[{i}]"), errors);
                        }
                    }
                }
                "anyOf" => {
                    let ok = rule.as_array().unwrap().iter().any(|sub| {
                        let mut e = Vec::new();
                        self.walk(file, sub, value, at, &mut e);
                        e.is_empty()
                    });
                    if !ok {
                        errors.push(format!("{at}: no anyOf branch matches {value}"));
                    }
                }
                "minimum" | "maximum" => {
                    if let Some(x) = value.as_f64() {
                        let bound = rule.as_f64().unwrap();
                        if (key == "minimum" && x < bound) || (key == "maximum" && x > bound) {
                            errors.push(format!("{at}: {x} violates {key} {bound}"));
                        }
                    }
                }
                "minLength" => {
                    if let Some(s) = value.as_str() {
                        if (s.chars().count() as u64) < rule.as_u64().unwrap() {
                            errors.push(format!("{at}: shorter than {rule}"));
                        }
                    }
                }
                "pattern" => {
                    if let Some(s) = value.as_str() {
                        if !Regex::new(rule.as_str().unwrap()).unwrap().is_match(s) {
                            errors.push(format!("{at}: {s:?} does not match {rule}"));
                        }
                    }
                }
                other => panic!("schema keyword {other} is not supported by the checker"),
            }
        }
    }
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "null" => v.is_null(),
        "boolean" => v.is_boolean(),
        "string" => v.is_string(),
        "array" => v.is_array(),
        "object" => v.is_object(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64(),
        other => panic!("unknown type {other}"),
    }
}
