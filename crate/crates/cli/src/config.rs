//! Layered run configuration: defaults, then a TOML file, then `--set`
//! overrides.

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

/// Keys kept at the top level of an echoed config that are not part of the
/// experiment's own settings.
const RUN_KEYS: [&str; 2] = ["seed", "experiment"];

#[derive(Debug, Clone)]
pub struct Layered {
    table: Table,
}

impl Layered {
    pub fn new(file: Option<&str>) -> Result<Self, CliError> {
        let table = match file {
            Some(text) => text
                .parse::<Table>()
                .map_err(|e| CliError::Config(format!("config file: {e}")))?,
            None => Table::new(),
        };
        Ok(Self { table })
    }

    /// Applies one `section.key=value` override. Values are read as TOML
    /// literals, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{assignment}'")))?;
        let path = path.trim();
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(CliError::Config(format!("bad key '{path}' in --set")));
        }
        let value = parse_value(raw.trim());
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().expect("non-empty path");
        let mut table = &mut self.table;
        for k in keys {
            let entry = table.entry(k).or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("'{k}' in '{path}' is not a section")))?;
        }
        table.insert(last.to_string(), value);
        Ok(())
    }

    /// Removes and returns a top-level run key such as `seed`.
    pub fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    /// Lays the collected values over the experiment's own defaults, so a
    /// partial section keeps the experiment's settings for the keys it omits.
    pub fn resolve<C: DeserializeOwned + Serialize + Default>(mut self) -> Result<C, CliError> {
        for k in RUN_KEYS {
            self.table.remove(k);
        }
        let mut base = match Value::try_from(C::default()) {
            Ok(Value::Table(t)) => t,
            Ok(_) => Table::new(),
            Err(e) => return Err(CliError::Config(e.to_string())),
        };
        merge(&mut base, self.table);
        C::deserialize(Value::Table(base)).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("single key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// The effective config as TOML, with the run keys on top.
pub fn echo<C: Serialize>(experiment: &str, seed: u64, config: &C) -> Result<String, CliError> {
    let body = Value::try_from(config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut table = Table::new();
    table.insert("experiment".into(), Value::String(experiment.into()));
    table.insert("seed".into(), Value::Integer(seed as i64));
    if let Value::Table(t) = body {
        table.extend(t);
    }
    toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))
}

/// Parses a run seed, which TOML stores as a signed integer.
pub fn seed_value(v: &Value) -> Result<u64, CliError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(CliError::Config(format!("seed must be a non-negative integer, got {v}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use onbflow_core::experiments::PcaConfig;

    #[test]
    fn overrides_win_over_file() {
        let mut l = Layered::new(Some("[train]\nsteps = 10\nlr = 0.5\n")).unwrap();
        l.set("train.steps=3").unwrap();
        l.set("flow.method = euler-fwd").unwrap();
        let c: PcaConfig = l.resolve().unwrap();
        assert_eq!(c.train.steps, 3);
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.flow.method.name(), "euler-fwd");
        assert_eq!(c.model.rank, PcaConfig::default().model.rank);
        let mut l = Layered::new(None).unwrap();
        l.set("model.width=8").unwrap();
        let c: PcaConfig = l.resolve().unwrap();
        assert_eq!((c.model.width, c.model.rank), (8, 30));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut l = Layered::new(None).unwrap();
        l.set("train.stepz=3").unwrap();
        assert!(matches!(l.resolve::<PcaConfig>(), Err(CliError::Config(_))));
        assert!(Layered::new(None).unwrap().set("novalue").is_err());
        assert!(Layered::new(Some("[train\n")).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = PcaConfig::default();
        c.train.steps = 17;
        let text = echo("pca", 9, &c).unwrap();
        let mut l = Layered::new(Some(&text)).unwrap();
        assert_eq!(seed_value(&l.take("seed").unwrap()).unwrap(), 9);
        let back: PcaConfig = l.resolve().unwrap();
        assert_eq!(back, c);
        assert_eq!(echo("pca", 9, &back).unwrap(), text);
    }
}
