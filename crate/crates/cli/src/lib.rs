//! Command-line front end for the simulator: validate scenario files, run one
//! experiment, or run the controller-only / MAPE / MAPE+ML comparison.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use tempfile::NamedTempFile;
use thiserror::Error;

use hiersim_core::config::from_value;
use hiersim_core::trace::{write_csv, write_jsonl, RunSummary};
use hiersim_core::{parse_config, run_scenario, RunOutput, ScenarioConfig, SimError};

/// Environment variable that replaces the scenario's seed.
pub const SEED_ENV: &str = "HIERSIM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Validate,
    Run,
    Compare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub verb: Verb,
    pub scenario_path: PathBuf,
    pub output_dir: Option<PathBuf>,
    /// `dotted.path=value` assignments applied onto the scenario.
    pub overrides: Vec<String>,
    /// Seed taken from the environment, if any; wins over the file and overrides.
    pub seed_override: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Config(SimError),

    #[error("bad override `{assignment}`: {reason}")]
    Override { assignment: String, reason: String },

    #[error("{SEED_ENV}={value} is not an unsigned 64-bit integer")]
    Seed { value: String },

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },

    #[error("{0}")]
    Runtime(SimError),

    #[error("{verb} needs an output directory")]
    MissingOutput { verb: &'static str },
}

impl CliError {
    /// 1 for anything wrong with the inputs or the output location, 2 for faults during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 2,
            _ => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        if err.is_config_fault() {
            CliError::Config(err)
        } else {
            CliError::Runtime(err)
        }
    }
}

/// Per-variant summaries of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variants {
    pub baseline_ct_only: RunSummary,
    pub mape: RunSummary,
    pub mape_ml: RunSummary,
}

/// Differences against the controller-only baseline (variant minus baseline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Delta {
    pub sla_compliance_fraction: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deltas {
    pub mape: Delta,
    pub mape_ml: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub seed: u64,
    pub variants: Variants,
    pub deltas: Deltas,
}

impl CompareReport {
    pub fn new(seed: u64, variants: Variants) -> Self {
        let delta = |s: &RunSummary| Delta {
            sla_compliance_fraction: s.sla_compliance_fraction
                - variants.baseline_ct_only.sla_compliance_fraction,
            total_cost: s.total_cost - variants.baseline_ct_only.total_cost,
        };
        let deltas = Deltas {
            mape: delta(&variants.mape),
            mape_ml: delta(&variants.mape_ml),
        };
        CompareReport {
            seed,
            variants,
            deltas,
        }
    }
}

/// Variant names with their (mape_enabled, ml_enabled) flags.
pub const VARIANTS: [(&str, bool, bool); 3] = [
    ("baseline_ct_only", false, false),
    ("mape", true, false),
    ("mape_ml", true, true),
];

/// Runs a command and returns what should be printed on success.
pub fn execute_command(cmd: &Command) -> Result<String, CliError> {
    let config = load_scenario(cmd)?;
    match cmd.verb {
        Verb::Validate => Ok("ok".to_string()),
        Verb::Run => {
            let dir = output_dir(cmd, "run")?;
            prepare_dir(dir)?;
            let out = run_scenario(&config)?;
            write_run(dir, &config, &out)?;
            Ok(format!(
                "wrote {} records to {}",
                out.trace.len(),
                dir.display()
            ))
        }
        Verb::Compare => {
            let dir = output_dir(cmd, "compare")?;
            prepare_dir(dir)?;
            let report = compare(dir, &config)?;
            Ok(format!(
                "sla: baseline {:.3}, mape {:.3}, mape_ml {:.3}; wrote {}",
                report.variants.baseline_ct_only.sla_compliance_fraction,
                report.variants.mape.sla_compliance_fraction,
                report.variants.mape_ml.sla_compliance_fraction,
                dir.join("compare.json").display()
            ))
        }
    }
}

fn output_dir<'a>(cmd: &'a Command, verb: &'static str) -> Result<&'a Path, CliError> {
    cmd.output_dir
        .as_deref()
        .ok_or(CliError::MissingOutput { verb })
}

/// Reads the scenario, applies overrides and the seed from the environment.
pub fn load_scenario(cmd: &Command) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(&cmd.scenario_path).map_err(|source| CliError::Read {
        path: cmd.scenario_path.clone(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    if !cmd.overrides.is_empty() {
        let mut raw: Value = serde_json::from_str(&text).expect("already parsed once");
        let resolved = serde_json::to_value(&config).expect("config serializes");
        for assignment in &cmd.overrides {
            apply_override(&mut raw, &resolved, assignment)?;
        }
        config = from_value(raw)?;
    }
    if let Some(value) = &cmd.seed_override {
        config.seed = value.trim().parse().map_err(|_| CliError::Seed {
            value: value.clone(),
        })?;
    }
    Ok(config)
}

/// Applies `a.b.c=value` onto the raw scenario document.
///
/// The right-hand side is read as JSON when it parses, otherwise as a string.
/// Keys the file leaves out are first copied from `resolved`, so a path such
/// as `tiers.1.cu_max` works even when the file relies on default tiers.
pub fn apply_override(raw: &mut Value, resolved: &Value, assignment: &str) -> Result<(), CliError> {
    let bad = |reason: String| CliError::Override {
        assignment: assignment.to_string(),
        reason,
    };
    let (path, rhs) = assignment
        .split_once('=')
        .ok_or_else(|| bad("expected key=value".into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad("empty path segment".into()));
    }
    let value =
        serde_json::from_str(rhs.trim()).unwrap_or_else(|_| Value::String(rhs.trim().to_string()));

    let mut node = raw;
    let mut shadow = Some(resolved);
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        let default = shadow.and_then(|s| child(s, key));
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| {
                    default
                        .cloned()
                        .unwrap_or_else(|| Value::Object(Default::default()))
                })
            }
            Value::Array(items) => {
                let index: usize = key
                    .parse()
                    .map_err(|_| bad(format!("`{key}` is not an index into a list")))?;
                let len = items.len();
                let slot = items.get_mut(index).ok_or_else(|| {
                    bad(format!("index {index} out of range for a list of {len}"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(bad(format!(
                    "`{}` is not an object or list",
                    keys[..depth].join(".")
                )))
            }
        };
        shadow = default;
    }
    unreachable!("loop returns on the last key")
}

fn child<'a>(value: &'a Value, key: &str) -> Option<&'a Value> {
    match value {
        Value::Object(map) => map.get(key),
        Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), SimError>,
{
    let output_err = |source: io::Error| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(output_err)?;
    fill(tmp.as_file_mut()).map_err(|e| output_err(io::Error::other(e.to_string())))?;
    tmp.as_file().sync_all().map_err(output_err)?;
    tmp.persist(path).map_err(|e| output_err(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| SimError::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn write_run(dir: &Path, config: &ScenarioConfig, out: &RunOutput) -> Result<(), CliError> {
    write_atomic(&dir.join("trace.csv"), |w| {
        write_csv(w, config.n_tiers, &out.trace)
    })?;
    write_atomic(&dir.join("trace.jsonl"), |w| write_jsonl(w, &out.trace))?;
    write_json(&dir.join("summary.json"), &out.summary)
}

/// Runs the three variants concurrently on one seed and writes each under `dir/<variant>`.
pub fn compare(dir: &Path, config: &ScenarioConfig) -> Result<CompareReport, CliError> {
    let configs: Vec<ScenarioConfig> = VARIANTS
        .iter()
        .map(|&(_, mape, ml)| ScenarioConfig {
            mape_enabled: mape,
            ml_enabled: ml,
            ..config.clone()
        })
        .collect();
    let outputs: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| s.spawn(move || run_scenario(cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant thread panicked"))
            .collect()
    });

    let mut summaries = Vec::with_capacity(3);
    for ((name, _, _), (cfg, out)) in VARIANTS.iter().zip(configs.iter().zip(outputs)) {
        let out = out?;
        let sub = dir.join(name);
        prepare_dir(&sub)?;
        write_run(&sub, cfg, &out)?;
        summaries.push(out.summary);
    }
    let mape_ml = summaries.pop().expect("three variants");
    let mape = summaries.pop().expect("three variants");
    let baseline_ct_only = summaries.pop().expect("three variants");
    let report = CompareReport::new(
        config.seed,
        Variants {
            baseline_ct_only,
            mape,
            mape_ml,
        },
    );
    write_json(&dir.join("compare.json"), &report)?;
    Ok(report)
}
