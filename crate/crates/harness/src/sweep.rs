//! Cartesian expansion of `[[sweep]]` axes into child configs.

use crate::config::RunConfig;
use crate::error::HarnessError;

/// One grid point: its index, the overrides applied and the resulting config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub overrides: Vec<(String, toml::Value)>,
    pub config: RunConfig,
}

impl SweepPoint {
    /// `key=value` pairs joined by `;`.
    pub fn label(&self) -> String {
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), HarnessError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (leaf, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in parents {
        table = match table.get_mut(*p) {
            Some(toml::Value::Table(t)) => t,
            _ => {
                return Err(HarnessError::Config(format!(
                    "sweep key `{key}`: `{p}` is not a table"
                )))
            }
        };
    }
    table.insert((*leaf).to_string(), value);
    Ok(())
}

/// All grid points, first axis varying slowest. Each child keeps the master
/// seed, drops the sweep list and writes under `out_dir/sweep_NNN`.
pub fn expand(cfg: &RunConfig) -> Result<Vec<SweepPoint>, HarnessError> {
    if cfg.sweep.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs at least one [[sweep]] axis".into(),
        ));
    }
    cfg.validate()?;
    let mut base = cfg.clone();
    base.sweep.clear();
    let base_table = match toml::Value::try_from(&base) {
        Ok(toml::Value::Table(t)) => t,
        other => panic!("config serializes to a table, got {other:?}"),
    };

    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in &cfg.sweep {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((axis.key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }

    combos
        .into_iter()
        .enumerate()
        .map(|(index, overrides)| {
            let mut table = base_table.clone();
            for (k, v) in &overrides {
                set_path(&mut table, k, v.clone())?;
            }
            table.insert(
                "out_dir".into(),
                toml::Value::String(
                    cfg.out_dir
                        .join(format!("sweep_{index:03}"))
                        .display()
                        .to_string(),
                ),
            );
            let config: RunConfig =
                toml::Value::Table(table)
                    .try_into()
                    .map_err(|e: toml::de::Error| {
                        HarnessError::Config(format!("sweep point {index}: {e}"))
                    })?;
            config.validate()?;
            Ok(SweepPoint {
                index,
                overrides,
                config,
            })
        })
        .collect()
}
