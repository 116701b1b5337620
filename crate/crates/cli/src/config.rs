//! Flat dotted-key run configuration.
//!
//! A config file is TOML; nested tables flatten to dotted keys, so
//! `[regressor.x]\nkind = "kernel_ridge"` and `regressor.x.kind = "kernel_ridge"`
//! are the same key. Command-line values override file values. Every key is
//! checked against the subcommand's table before anything runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use toml::Value;
use tqs::data::{ColumnRole, Schema};
use tqs::regress::{
    Backend, Bandwidth, KernelParams, Penalty, RegressorConfig, RegressorKind, SplineParams, TreeParams,
};

/// A configuration problem; reported as a usage error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Float,
    Bool,
    Str,
    /// A number, or one of the listed words.
    FloatOr(&'static [&'static str]),
    /// A non-negative integer, or one of the listed words.
    IntOr(&'static [&'static str]),
    IntList,
    FloatList,
    /// An array of strings or one comma-separated string.
    StrList,
}

impl Ty {
    fn check(self, key: &str, v: &Value) -> Result<(), ConfigError> {
        let word = |words: &[&str]| match v {
            Value::String(s) => words.contains(&s.as_str()),
            _ => false,
        };
        let ok = match self {
            Ty::Int => matches!(v, Value::Integer(i) if *i >= 0),
            Ty::Float => matches!(v, Value::Integer(_) | Value::Float(_)),
            Ty::Bool => matches!(v, Value::Boolean(_)),
            Ty::Str => matches!(v, Value::String(_)),
            Ty::FloatOr(words) => matches!(v, Value::Integer(_) | Value::Float(_)) || word(words),
            Ty::IntOr(words) => matches!(v, Value::Integer(i) if *i >= 0) || word(words),
            Ty::IntList => match v {
                Value::Array(a) => a.iter().all(|x| matches!(x, Value::Integer(i) if *i >= 0)),
                _ => false,
            },
            Ty::FloatList => match v {
                Value::Array(a) => a.iter().all(|x| matches!(x, Value::Integer(_) | Value::Float(_))),
                _ => false,
            },
            Ty::StrList => match v {
                Value::String(_) => true,
                Value::Array(a) => a.iter().all(|x| matches!(x, Value::String(_))),
                _ => false,
            },
        };
        if ok {
            Ok(())
        } else {
            err(format!("key {key}: expected {}, got {v}", self.describe()))
        }
    }

    fn describe(self) -> String {
        match self {
            Ty::Int => "a non-negative integer".into(),
            Ty::Float => "a number".into(),
            Ty::Bool => "true or false".into(),
            Ty::Str => "a string".into(),
            Ty::FloatOr(w) => format!("a number or one of {w:?}"),
            Ty::IntOr(w) => format!("a non-negative integer or one of {w:?}"),
            Ty::IntList => "an array of non-negative integers".into(),
            Ty::FloatList => "an array of numbers".into(),
            Ty::StrList => "a comma-separated string or an array of strings".into(),
        }
    }
}

/// One configuration key. `default` is a TOML literal; `None` means required.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub ty: Ty,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, ty: Ty, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        ty,
        default: Some(default),
        help,
    }
}

pub const fn required(name: &'static str, ty: Ty, help: &'static str) -> Key {
    Key {
        name,
        ty,
        default: None,
        help,
    }
}

/// A regressor configured under `regressor.<name>.*`.
#[derive(Debug, Clone, Copy)]
pub struct Slot {
    pub name: &'static str,
    pub default_kind: RegressorKind,
    pub help: &'static str,
}

const KINDS: &[&str] = &["spline_gam", "boosted_trees", "kernel_ridge"];

fn kind_params(kind: RegressorKind) -> &'static [Key] {
    const SPLINE: &[Key] = &[
        key("knots", Ty::Int, "20", "interior knots, equally spaced over the training range"),
        key("penalty", Ty::FloatOr(&["gcv"]), "\"gcv\"", "roughness penalty, or \"gcv\" to choose it"),
    ];
    const TREES: &[Key] = &[
        key("stages", Ty::Int, "100", "boosting stages"),
        key("learning_rate", Ty::Float, "0.1", "shrinkage per stage"),
        key("depth", Ty::Int, "3", "maximum tree depth"),
        key("min_leaf", Ty::Int, "1", "minimum rows per leaf"),
        key("subsample", Ty::Float, "1.0", "fraction of rows drawn per stage"),
    ];
    const KERNEL: &[Key] = &[
        key("lambda", Ty::Float, "1.0", "ridge penalty"),
        key("bandwidth", Ty::FloatOr(&["median"]), "\"median\"", "RBF bandwidth, or \"median\" pairwise distance"),
    ];
    match kind {
        RegressorKind::SplineGam => SPLINE,
        RegressorKind::BoostedTrees => TREES,
        RegressorKind::KernelRidge => KERNEL,
    }
}

const ALL_KINDS: [RegressorKind; 3] = [
    RegressorKind::SplineGam,
    RegressorKind::BoostedTrees,
    RegressorKind::KernelRidge,
];

/// Keys accepted by one subcommand.
#[derive(Debug, Clone, Copy)]
pub struct CommandSpec {
    pub name: &'static str,
    pub keys: &'static [Key],
    pub slots: &'static [Slot],
    /// Accept `schema.<column> = "<role>"`.
    pub schema: bool,
}

fn literal(s: &str) -> Value {
    parse_value(s).expect("built-in defaults are valid TOML")
}

impl CommandSpec {
    fn find(&self, name: &str) -> Option<&Key> {
        self.keys.iter().find(|k| k.name == name)
    }

    /// Key listing for `--help`.
    pub fn help_text(&self) -> String {
        let mut lines: Vec<(String, String)> = Vec::new();
        for k in self.keys {
            let left = match k.default {
                Some(d) => format!("{} = {d}", k.name),
                None => format!("{} (required)", k.name),
            };
            lines.push((left, k.help.to_string()));
        }
        if self.schema {
            lines.push((
                "schema.<column> = \"<role>\"".into(),
                "column role: covariate, count, group, diagnostic or ignore".into(),
            ));
        }
        for slot in self.slots {
            lines.push((
                format!("regressor.{}.kind = \"{}\"", slot.name, slot.default_kind.as_str()),
                format!("{}: {}", slot.help, KINDS.join(", ")),
            ));
            for kind in ALL_KINDS {
                for p in kind_params(kind) {
                    lines.push((
                        format!("regressor.{}.{} = {}", slot.name, p.name, p.default.unwrap_or("")),
                        format!("[{}] {}", kind.as_str(), p.help),
                    ));
                }
            }
        }
        let width = lines.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
        let mut out = String::from("Configuration keys (config file, or --set KEY=VALUE):\n");
        for (l, r) in lines {
            let pad = width - l.chars().count();
            let _ = writeln!(out, "  {l}{}  {r}", " ".repeat(pad));
        }
        out
    }
}

/// Parses a TOML value literal; bare words become strings.
pub fn parse_value(text: &str) -> Result<Value, ConfigError> {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("key present")),
        Err(_) if !text.is_empty() && !text.contains(['"', '\'', '[', ']', '{', '}', '\n']) => {
            Ok(Value::String(text.to_string()))
        }
        Err(e) => err(format!("cannot parse value {text:?}: {e}")),
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let name = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&name, t, out),
            other => {
                out.insert(name, other);
            }
        }
    }
}

/// Resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    values: BTreeMap<String, Value>,
    from_file: BTreeSet<String>,
    base_dir: PathBuf,
    regressors: BTreeMap<&'static str, RegressorConfig>,
}

impl RunConfig {
    /// Merges the config file (if any) and `overrides`, checks every key and
    /// fills in defaults.
    pub fn resolve(
        spec: &CommandSpec,
        file: Option<&Path>,
        overrides: Vec<(String, Value)>,
    ) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        let mut base_dir = PathBuf::from(".");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
            flatten("", table, &mut values);
            if let Some(dir) = path.parent() {
                base_dir = dir.to_path_buf();
            }
        }
        let from_file: BTreeSet<String> = values.keys().cloned().collect();
        let mut from_file = from_file;
        for (k, v) in overrides {
            from_file.remove(&k);
            values.insert(k, v);
        }

        for (name, v) in &values {
            if let Some(k) = spec.find(name) {
                k.ty.check(name, v)?;
            } else if let Some(col) = name.strip_prefix("schema.").filter(|_| spec.schema) {
                match v {
                    Value::String(s) => {
                        s.parse::<ColumnRole>()
                            .map_err(|e| ConfigError(format!("key {name}: {e}")))?;
                    }
                    _ => return err(format!("key {name}: column role for {col:?} must be a string")),
                }
            } else if !spec.slots.iter().any(|s| name.starts_with(&format!("regressor.{}.", s.name))) {
                return err(format!("unknown config key {name:?} for `{}` (see --help)", spec.name));
            }
        }

        for k in spec.keys {
            if !values.contains_key(k.name) {
                match k.default {
                    Some(d) => {
                        values.insert(k.name.to_string(), literal(d));
                    }
                    None => return err(format!("missing required config key {:?}", k.name)),
                }
            }
        }

        let mut regressors = BTreeMap::new();
        for slot in spec.slots {
            let cfg = resolve_slot(slot, &mut values)?;
            regressors.insert(slot.name, cfg);
        }

        Ok(Self {
            command: spec.name,
            values,
            from_file,
            base_dir,
            regressors,
        })
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    fn raw(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} is not part of this command's table"))
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key).as_str().expect("validated as string")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.raw(key).as_bool().expect("validated as bool")
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.raw(key).as_integer().expect("validated as integer") as u64
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        as_f64(self.raw(key)).expect("validated as number")
    }

    /// `None` when the key holds one of its words instead of a number.
    pub fn usize_or_word(&self, key: &str) -> Option<usize> {
        self.raw(key).as_integer().map(|i| i as usize)
    }

    pub fn usize_list(&self, key: &str) -> Vec<usize> {
        let a = self.raw(key).as_array().expect("validated as array");
        a.iter().map(|v| v.as_integer().expect("integer") as usize).collect()
    }

    pub fn f64_list(&self, key: &str) -> Vec<f64> {
        let a = self.raw(key).as_array().expect("validated as array");
        a.iter().map(|v| as_f64(v).expect("number")).collect()
    }

    pub fn str_list(&self, key: &str) -> Vec<String> {
        match self.raw(key) {
            Value::String(s) => s
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(str::to_string)
                .collect(),
            Value::Array(a) => a.iter().map(|v| v.as_str().expect("string").to_string()).collect(),
            _ => unreachable!("validated as string list"),
        }
    }

    /// A path value; relative paths given in the config file are taken
    /// relative to the file's directory.
    pub fn path(&self, key: &str) -> PathBuf {
        let p = PathBuf::from(self.str(key));
        if p.is_relative() && self.from_file.contains(key) {
            self.base_dir.join(p)
        } else {
            p
        }
    }

    pub fn regressor(&self, slot: &str) -> RegressorConfig {
        self.regressors[slot].clone()
    }

    pub fn schema(&self) -> Schema {
        let mut schema = Schema::new();
        for (k, v) in &self.values {
            if let Some(col) = k.strip_prefix("schema.") {
                let role = v.as_str().and_then(|s| s.parse().ok()).expect("validated role");
                schema.insert(col, role);
            }
        }
        schema
    }

    /// Resolved keys as `key = value` lines; itself a valid config file.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{} = {v}", quote_key(k));
        }
        s
    }

    pub fn values(&self) -> &BTreeMap<String, Value> {
        &self.values
    }
}

/// Dotted key with any segment that is not a bare TOML key quoted.
fn quote_key(k: &str) -> String {
    // schema.<column>: everything after the first dot is one column name.
    let parts: Vec<&str> = match k.split_once('.') {
        Some(("schema", col)) => vec!["schema", col],
        _ => k.split('.').collect(),
    };
    parts
        .iter()
        .map(|p| {
            if !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                p.to_string()
            } else {
                Value::String(p.to_string()).to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(".")
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn resolve_slot(slot: &Slot, values: &mut BTreeMap<String, Value>) -> Result<RegressorConfig, ConfigError> {
    let prefix = format!("regressor.{}.", slot.name);
    let kind_key = format!("{prefix}kind");
    let kind = match values.get(&kind_key) {
        None => slot.default_kind,
        Some(Value::String(s)) => s
            .parse::<RegressorKind>()
            .map_err(|e| ConfigError(format!("key {kind_key}: {e}")))?,
        Some(v) => return err(format!("key {kind_key}: expected one of {KINDS:?}, got {v}")),
    };
    values.insert(kind_key.clone(), Value::String(kind.as_str().into()));
    let params = kind_params(kind);

    let given: Vec<String> = values
        .keys()
        .filter(|k| k.starts_with(&prefix) && **k != kind_key)
        .cloned()
        .collect();
    for name in &given {
        let p = &name[prefix.len()..];
        match params.iter().find(|k| k.name == p) {
            Some(k) => k.ty.check(name, &values[name])?,
            None => {
                let owner = ALL_KINDS.iter().find(|&&other| kind_params(other).iter().any(|k| k.name == p));
                return match owner {
                    Some(o) => err(format!(
                        "key {name} applies to {} but regressor.{}.kind is {}",
                        o.as_str(),
                        slot.name,
                        kind.as_str()
                    )),
                    None => err(format!("unknown config key {name:?} (see --help)")),
                };
            }
        }
    }
    for p in params {
        values
            .entry(format!("{prefix}{}", p.name))
            .or_insert_with(|| literal(p.default.expect("params have defaults")));
    }

    let get = |p: &str| &values[&format!("{prefix}{p}")];
    let int = |p: &str| get(p).as_integer().expect("validated") as usize;
    let num = |p: &str| as_f64(get(p));
    let backend = match kind {
        RegressorKind::SplineGam => Backend::SplineGam(SplineParams {
            interior_knots: int("knots"),
            penalty: match num("penalty") {
                Some(l) => Penalty::Fixed(l),
                None => Penalty::Gcv(Penalty::default_grid()),
            },
        }),
        RegressorKind::BoostedTrees => Backend::BoostedTrees(TreeParams {
            n_stages: int("stages"),
            learning_rate: num("learning_rate").expect("validated"),
            max_depth: int("depth"),
            min_samples_leaf: int("min_leaf"),
            subsample: num("subsample").expect("validated"),
        }),
        RegressorKind::KernelRidge => Backend::KernelRidge(KernelParams {
            lambda: num("lambda").expect("validated"),
            bandwidth: match num("bandwidth") {
                Some(b) => Bandwidth::Fixed(b),
                None => Bandwidth::Median,
            },
        }),
    };
    let cfg = RegressorConfig::from_backend(backend);
    cfg.validate()
        .map_err(|e| ConfigError(format!("regressor.{}: {e}", slot.name)))?;
    Ok(cfg)
}
