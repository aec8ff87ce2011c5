//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [system]
//! name = "random-expanding(2,3,0.5)"
//!
//! [grid]
//! epsilon_max = 0.25
//! epsilon_min = 0.03125
//! n = [1, 2, 4, 8, 16]
//!
//! [measures]
//! candidates = ["lebesgue"]
//!
//! [budget]
//! num_omega = 32
//! ```
//!
//! A bare `system = "doubling"` at the top level is accepted as shorthand.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::harness::SweepConfig;
use crate::system::SystemSpec;
use crate::topological::geometric_grid;

const TOP_KEYS: &[&str] = &["seed", "system", "grid", "measures", "budget"];
const SYSTEM_KEYS: &[&str] = &["name", "base", "fiber", "maps", "two_sided", "scale"];
const GRID_KEYS: &[&str] = &[
    "epsilon",
    "epsilon_max",
    "epsilon_min",
    "epsilon_ratio",
    "n",
    "n_max",
    "n_measure",
    "delta",
    "mdim_window",
];
const MEASURE_KEYS: &[&str] = &[
    "candidates",
    "num_pairs",
    "empirical_steps",
    "empirical_condition",
    "empirical_burn_in",
    "surrogate_atoms",
];
const BUDGET_KEYS: &[&str] = &[
    "num_omega",
    "max_cloud_points",
    "saturation",
    "closed_forms",
    "max_symbol_depth",
];

fn config_error(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn check_keys(table: &Table, allowed: &[&str], path: &str) -> Result<()> {
    for key in table.keys() {
        if allowed.contains(&key.as_str()) {
            continue;
        }
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let best = allowed
            .iter()
            .map(|a| (strsim::jaro_winkler(key, a), *a))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        return Err(match best {
            Some((score, name)) if score > 0.8 => {
                config_error(format!("unknown key '{full}'; did you mean '{name}'?"))
            }
            _ => config_error(format!("unknown key '{full}'")),
        });
    }
    Ok(())
}

fn section<'a>(root: &'a Table, name: &str) -> Result<Option<&'a Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(config_error(format!("'{name}' must be a section"))),
    }
}

fn float(v: &Value, path: &str) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(config_error(format!("{path} must be a number"))),
    }
}

fn uint(v: &Value, path: &str) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(config_error(format!("{path} must be a non-negative integer"))),
    }
}

fn boolean(v: &Value, path: &str) -> Result<bool> {
    v.as_bool().ok_or_else(|| config_error(format!("{path} must be true or false")))
}

fn string(v: &Value, path: &str) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| config_error(format!("{path} must be a string")))
}

fn list<T>(v: &Value, path: &str, item: impl Fn(&Value, &str) -> Result<T>) -> Result<Vec<T>> {
    let arr = v.as_array().ok_or_else(|| config_error(format!("{path} must be a list")))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| item(x, &format!("{path}[{i}]")))
        .collect()
}

fn get<'a>(t: Option<&'a Table>, key: &str) -> Option<&'a Value> {
    t.and_then(|t| t.get(key))
}

/// Parse and validate a configuration; defaults fill every missing key.
pub fn parse_config(text: &str) -> Result<SweepConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_error(format!("syntax error: {e}")))?;
    check_keys(&root, TOP_KEYS, "")?;
    let mut cfg = SweepConfig::default();
    if let Some(v) = root.get("seed") {
        cfg.seed = uint(v, "seed")?;
    }

    cfg.system = match root.get("system") {
        None => return Err(config_error("missing 'system'")),
        Some(Value::String(name)) => SystemSpec::catalog(name),
        Some(Value::Table(t)) => {
            check_keys(t, SYSTEM_KEYS, "system")?;
            let mut spec = SystemSpec::default();
            if let Some(v) = t.get("name") {
                spec.name = Some(string(v, "system.name")?);
            }
            if let Some(v) = t.get("base") {
                spec.base = Some(string(v, "system.base")?);
            }
            if let Some(v) = t.get("fiber") {
                spec.fiber = Some(string(v, "system.fiber")?);
            }
            if let Some(v) = t.get("maps") {
                spec.maps = list(v, "system.maps", string)?;
            }
            if let Some(v) = t.get("two_sided") {
                spec.two_sided = boolean(v, "system.two_sided")?;
            }
            if let Some(v) = t.get("scale") {
                spec.scale = float(v, "system.scale")?;
            }
            if spec.name.is_some() && (spec.base.is_some() || spec.fiber.is_some() || !spec.maps.is_empty()) {
                return Err(config_error(
                    "system.name cannot be combined with system.base, system.fiber or system.maps",
                ));
            }
            spec
        }
        Some(_) => return Err(config_error("'system' must be a name or a section")),
    };

    let grid = section(&root, "grid")?;
    if let Some(g) = grid {
        check_keys(g, GRID_KEYS, "grid")?;
    }
    let explicit = get(grid, "epsilon").map(|v| list(v, "grid.epsilon", float)).transpose()?;
    let eps_max = get(grid, "epsilon_max").map(|v| float(v, "grid.epsilon_max")).transpose()?;
    let eps_min = get(grid, "epsilon_min").map(|v| float(v, "grid.epsilon_min")).transpose()?;
    let ratio = get(grid, "epsilon_ratio")
        .map(|v| float(v, "grid.epsilon_ratio"))
        .transpose()?
        .unwrap_or(0.5);
    if let (Some(hi), Some(lo)) = (eps_max, eps_min) {
        if lo > hi {
            return Err(config_error(format!(
                "grid.epsilon_min = {lo} exceeds grid.epsilon_max = {hi}"
            )));
        }
    }
    cfg.eps_grid = match (explicit, eps_max) {
        (Some(e), None) if eps_min.is_none() => e,
        (Some(_), _) => {
            return Err(config_error(
                "grid.epsilon cannot be combined with grid.epsilon_max or grid.epsilon_min",
            ))
        }
        (None, Some(hi)) => {
            let lo = eps_min.unwrap_or(hi / 8.0);
            geometric_grid(hi, lo, ratio).map_err(|e| config_error(format!("grid: {e}")))?
        }
        (None, None) if eps_min.is_some() => {
            return Err(config_error("grid.epsilon_min needs grid.epsilon_max"))
        }
        (None, None) => Vec::new(),
    };
    let to_usize = |v: &Value, p: &str| uint(v, p).map(|x| x as usize);
    match (get(grid, "n"), get(grid, "n_max")) {
        (Some(_), Some(_)) => return Err(config_error("grid.n cannot be combined with grid.n_max")),
        (Some(v), None) => cfg.n_schedule = list(v, "grid.n", to_usize)?,
        (None, Some(v)) => cfg.n_schedule = (1..=to_usize(v, "grid.n_max")?).collect(),
        (None, None) => {}
    }
    if let Some(v) = get(grid, "n_measure") {
        cfg.n_measure = Some(list(v, "grid.n_measure", to_usize)?);
    }
    if let Some(v) = get(grid, "delta") {
        cfg.deltas = list(v, "grid.delta", float)?;
    }
    if let Some(v) = get(grid, "mdim_window") {
        cfg.mdim_window = to_usize(v, "grid.mdim_window")?;
        if cfg.mdim_window < 3 {
            return Err(config_error("grid.mdim_window must be at least 3"));
        }
    }

    let measures = section(&root, "measures")?;
    if let Some(m) = measures {
        check_keys(m, MEASURE_KEYS, "measures")?;
    }
    if let Some(v) = get(measures, "candidates") {
        cfg.measures = list(v, "measures.candidates", string)?;
    }
    if let Some(v) = get(measures, "num_pairs") {
        cfg.num_pairs = Some(to_usize(v, "measures.num_pairs")?);
    }
    let opts = &mut cfg.measure_options;
    if let Some(v) = get(measures, "empirical_steps") {
        opts.empirical_steps = to_usize(v, "measures.empirical_steps")?;
    }
    if let Some(v) = get(measures, "empirical_condition") {
        opts.empirical_condition = to_usize(v, "measures.empirical_condition")?;
    }
    if let Some(v) = get(measures, "empirical_burn_in") {
        opts.empirical_burn_in = to_usize(v, "measures.empirical_burn_in")?;
    }
    if let Some(v) = get(measures, "surrogate_atoms") {
        opts.surrogate_atoms = to_usize(v, "measures.surrogate_atoms")?;
    }

    let budget = section(&root, "budget")?;
    if let Some(b) = budget {
        check_keys(b, BUDGET_KEYS, "budget")?;
    }
    if let Some(v) = get(budget, "num_omega") {
        cfg.num_omega = to_usize(v, "budget.num_omega")?;
    }
    if let Some(v) = get(budget, "max_cloud_points") {
        cfg.max_cloud_points = uint(v, "budget.max_cloud_points")?;
    }
    if let Some(v) = get(budget, "saturation") {
        cfg.saturation = float(v, "budget.saturation")?;
    }
    if let Some(v) = get(budget, "closed_forms") {
        cfg.closed_forms = boolean(v, "budget.closed_forms")?;
    }
    if let Some(v) = get(budget, "max_symbol_depth") {
        cfg.measure_options.max_symbol_depth = to_usize(v, "budget.max_symbol_depth")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn canonical(v: &Value) -> serde_json::Value {
    match v {
        Value::String(s) => serde_json::Value::String(s.clone()),
        Value::Integer(i) => serde_json::Value::from(*i),
        Value::Float(f) => serde_json::Value::String(format!("{f:e}")),
        Value::Boolean(b) => serde_json::Value::Bool(*b),
        Value::Datetime(d) => serde_json::Value::String(d.to_string()),
        Value::Array(a) => serde_json::Value::Array(a.iter().map(canonical).collect()),
        Value::Table(t) => {
            let sorted: BTreeMap<&String, serde_json::Value> = t.iter().map(|(k, v)| (k, canonical(v))).collect();
            serde_json::Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
        }
    }
}

/// SHA-256 of the configuration with keys sorted, so key order and
/// formatting do not change the hash.
pub fn config_hash(text: &str) -> Result<String> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_error(format!("syntax error: {e}")))?;
    let json = serde_json::to_string(&canonical(&Value::Table(root))).expect("serializable");
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config("system = \"doubling\"").unwrap();
        assert_eq!(c.system.name.as_deref(), Some("doubling"));
        assert_eq!(c.num_omega, 32);
        assert_eq!(c.deltas, vec![0.25, 0.1, 0.05]);
        assert!(c.eps_grid.is_empty());
    }

    #[test]
    fn range_grid() {
        let c = parse_config("system = \"doubling\"\n[grid]\nepsilon_max = 0.5\nepsilon_min = 0.0625\n").unwrap();
        assert_eq!(c.eps_grid, vec![0.5, 0.25, 0.125, 0.0625]);
    }

    #[test]
    fn inverted_range_names_both_keys() {
        let e = parse_config("system = \"doubling\"\n[grid]\nepsilon_max = 0.1\nepsilon_min = 0.2\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("grid.epsilon_min") && e.contains("grid.epsilon_max"), "{e}");
    }

    #[test]
    fn unknown_key_suggestion() {
        let e = parse_config("system = \"doubling\"\n[grid]\nepsilonn = [0.1]\n").unwrap_err().to_string();
        assert!(e.contains("grid.epsilonn") && e.contains("did you mean 'epsilon'"), "{e}");
        let e = parse_config("system = \"doubling\"\n[budjet]\n").unwrap_err().to_string();
        assert!(e.contains("'budget'"), "{e}");
    }

    #[test]
    fn syntax_error_has_line() {
        let e = parse_config("system = \"doubling\"\n[grid]\nn = [1, 2\n").unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = "seed = 1\nsystem = \"doubling\"\n[grid]\nn = [1,2]\ndelta = [0.2]\n";
        let b = "system = \"doubling\"\nseed = 1\n[grid]\ndelta = [0.2]\nn = [1, 2]\n";
        assert_eq!(config_hash(a).unwrap(), config_hash(b).unwrap());
        assert_ne!(config_hash(a).unwrap(), config_hash("system = \"doubling\"").unwrap());
    }

    #[test]
    fn custom_system_section() {
        let c = parse_config(
            "[system]\nbase = \"bernoulli(0.5,0.5)\"\nfiber = \"circle\"\nmaps = [\"times(2)\", \"times(3)\"]\n",
        )
        .unwrap();
        assert!(c.build_system().is_ok());
        assert!(parse_config("[system]\nname = \"doubling\"\nbase = \"bernoulli(1)\"\n").is_err());
    }
}
