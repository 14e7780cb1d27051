//! Experiment grid documents.
//!
//! A grid is one JSON object holding every [`RunConfig`] field at top level
//! plus the sweep axes `p_list`, `T_list`, `method_list`, `seeds` and an
//! optional `output_dir`. Unknown keys are rejected.

use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::error::{invalid_config, Result};
use crate::protocol::{MethodVariant, RunConfig};

/// Switching intervals swept when `T_list` is omitted (those dividing `R` are kept).
pub const DEFAULT_T_LIST: [u64; 6] = [1, 2, 3, 5, 10, 15];

/// Environment variable that supplies the root seed when the document has none.
pub const SEED_ENV: &str = "TADLORA_SEED";

const GRID_KEYS: [&str; 5] = ["p_list", "T_list", "method_list", "seeds", "output_dir"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub base: RunConfig,
    pub p_list: Vec<f64>,
    pub t_list: Vec<u64>,
    pub method_list: Vec<MethodVariant>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentGrid {
    /// Grid with a single cell equal to `base`.
    pub fn single(base: RunConfig) -> Self {
        Self {
            p_list: vec![base.topology.p],
            t_list: vec![base.t_interval],
            method_list: vec![base.method],
            seeds: vec![base.root_seed],
            output_dir: None,
            base,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.p_list.len() * self.t_list.len() * self.method_list.len() * self.seeds.len()
    }

    /// `base` with one cell's axes substituted.
    pub fn cell_config(&self, method: MethodVariant, p: f64, t: u64, seed: u64) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.method = method;
        cfg.topology.p = p;
        cfg.t_interval = t;
        cfg.root_seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("p_list", self.p_list.is_empty()),
            ("T_list", self.t_list.is_empty()),
            ("method_list", self.method_list.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(invalid_config(format!("{name} must not be empty")));
            }
        }
        for &p in &self.p_list {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid_config(format!("p_list entry {p} must lie in [0, 1]")));
            }
        }
        // Validating every (method, p, T) combination once covers all constraints;
        // seeds never affect validity.
        for &method in &self.method_list {
            for &p in &self.p_list {
                for &t in &self.t_list {
                    self.cell_config(method, p, t, self.base.root_seed).validate()?;
                }
            }
        }
        Ok(())
    }

    /// The fully resolved document; `parse_config(&grid.to_json())` returns `grid`.
    pub fn to_json(&self) -> String {
        let mut map = match serde_json::to_value(&self.base) {
            Ok(Value::Object(map)) => map,
            _ => unreachable!("RunConfig serializes to an object"),
        };
        map.insert("p_list".into(), serde_json::json!(self.p_list));
        map.insert("T_list".into(), serde_json::json!(self.t_list));
        map.insert("method_list".into(), serde_json::json!(self.method_list));
        map.insert("seeds".into(), serde_json::json!(self.seeds));
        if let Some(dir) = &self.output_dir {
            map.insert("output_dir".into(), Value::String(dir.display().to_string()));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("grid serializes")
    }
}

fn take<T: serde::de::DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>> {
    map.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| invalid_config(format!("{key}: {e}"))))
        .transpose()
}

/// Parses and validates a grid document. `env_seed` is the value of
/// [`SEED_ENV`], if set; it is an error to combine it with `root_seed` or `seeds`.
pub fn parse_config(text: &str, env_seed: Option<u64>) -> Result<ExperimentGrid> {
    let value: Value = serde_json::from_str(text).map_err(|e| invalid_config(format!("not valid JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(invalid_config("config must be a JSON object"));
    };
    let p_list: Option<Vec<f64>> = take(&mut map, "p_list")?;
    let t_list: Option<Vec<u64>> = take(&mut map, "T_list")?;
    let method_list: Option<Vec<MethodVariant>> = take(&mut map, "method_list")?;
    let seeds: Option<Vec<u64>> = take(&mut map, "seeds")?;
    let output_dir: Option<PathBuf> = take(&mut map, "output_dir")?;
    debug_assert!(GRID_KEYS.iter().all(|k| !map.contains_key(*k)));

    if let Some(seed) = env_seed {
        if map.contains_key("root_seed") || seeds.is_some() {
            return Err(invalid_config(format!(
                "{SEED_ENV} is set but the config also fixes root_seed/seeds; remove one of them"
            )));
        }
        map.insert("root_seed".into(), Value::from(seed));
    }
    let base: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| invalid_config(e.to_string()))?;
    base.validate()?;

    let t_list = match t_list {
        Some(list) => {
            if !base.allow_ragged {
                if let Some(bad) = list.iter().find(|&&t| t == 0 || !base.rounds.is_multiple_of(t)) {
                    return Err(invalid_config(format!(
                        "T_list: T={bad} does not divide R={}; switching intervals must divide the horizon",
                        base.rounds
                    )));
                }
            }
            list
        }
        None => DEFAULT_T_LIST
            .into_iter()
            .filter(|t| base.allow_ragged || base.rounds.is_multiple_of(*t))
            .collect(),
    };
    let grid = ExperimentGrid {
        p_list: p_list.unwrap_or_else(|| vec![base.topology.p]),
        t_list,
        method_list: method_list.unwrap_or_else(|| vec![base.method]),
        seeds: seeds.unwrap_or_else(|| vec![base.root_seed]),
        output_dir,
        base,
    };
    grid.validate()?;
    Ok(grid)
}
