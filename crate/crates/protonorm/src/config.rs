//! Flat key=value experiment configuration and the run manifest.
//!
//! A config file is a sequence of `key=value` lines; `#` starts a
//! comment. Every key has a documented default, unknown keys are
//! rejected, and the resolved configuration is recorded in a manifest
//! whose body is itself a valid config file, so re-running from a
//! manifest reproduces the run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::align::AlignerConfig;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::proto::WeightedForm;
use crate::sim::{FederationConfig, Mode, PartitionKind};

/// The materialized configuration of one run, plus bookkeeping that
/// lives outside the config keys (tool version, timestamps, unused-key
/// notes). Timestamps are recorded only here, never in metric files.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub resolved: BTreeMap<String, String>,
    pub user_set: BTreeSet<String>,
    /// User-set keys that the selected mode ignores.
    pub unused_keys: Vec<String>,
    pub tool_version: String,
    pub started_unix: Option<u64>,
    pub finished_unix: Option<u64>,
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("key `{key}` expects a number, got `{value}`")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("key `{key}` expects an integer, got `{value}`")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("key `{key}` expects an integer, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}` expects true or false, got `{value}`"
        ))),
    }
}

/// Apply one key=value pair onto a configuration.
pub fn apply_key(config: &mut FederationConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "mode" => {
            config.mode = match value {
                "protonorm" => Mode::ProtoNorm,
                "fedproto" => Mode::FedProto,
                _ => {
                    return Err(Error::Config(format!(
                        "key `mode` expects protonorm or fedproto, got `{value}`"
                    )))
                }
            }
        }
        "clients" => config.num_clients = parse_usize(key, value)?,
        "rounds" => config.rounds = parse_usize(key, value)?,
        "participation_fraction" => config.participation_fraction = parse_f64(key, value)?,
        "lambda" => config.lambda = parse_f64(key, value)?,
        "gamma" => config.gamma = parse_f64(key, value)?,
        "local_epochs" => config.local_epochs = parse_usize(key, value)?,
        "batch_size" => config.batch_size = parse_usize(key, value)?,
        "client_lr" => config.client_lr = parse_f64(key, value)?,
        "train_fraction" => config.train_fraction = parse_f64(key, value)?,
        "master_seed" => config.master_seed = parse_u64(key, value)?,
        "weighted_form" => {
            config.weighted_form = match value {
                "literal" => WeightedForm::Literal,
                "convex" => WeightedForm::Convex,
                _ => {
                    return Err(Error::Config(format!(
                        "key `weighted_form` expects literal or convex, got `{value}`"
                    )))
                }
            }
        }
        "report_participants_only" => {
            config.report_participants_only = parse_bool(key, value)?
        }
        "dump_prototypes" => config.dump_prototypes = parse_bool(key, value)?,
        "dataset.points_per_class" => config.points_per_class = parse_usize(key, value)?,
        "dataset.num_classes" => config.num_classes = parse_usize(key, value)?,
        "partition.mode" => {
            config.partition_kind = match value {
                "iid" => PartitionKind::Iid,
                "dirichlet" => PartitionKind::Dirichlet,
                "pathological" => PartitionKind::Pathological,
                _ => {
                    return Err(Error::Config(format!(
                        "key `partition.mode` expects iid, dirichlet, or pathological, got `{value}`"
                    )))
                }
            }
        }
        "partition.alpha" => config.alpha = parse_f64(key, value)?,
        "partition.classes_per_client" => {
            config.classes_per_client = parse_usize(key, value)?
        }
        "network.widths" => {
            let widths: Result<Vec<usize>> = value
                .split(',')
                .map(|w| parse_usize(key, w.trim()))
                .collect();
            config.network.widths = widths?;
        }
        "network.decision_activation" => {
            config.network.decision_activation = match value {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                _ => {
                    return Err(Error::Config(format!(
                        "key `network.decision_activation` expects relu or identity, got `{value}`"
                    )))
                }
            }
        }
        "aligner.mu" => config.aligner.mu = parse_f64(key, value)?,
        "aligner.eta0" => config.aligner.eta0 = parse_f64(key, value)?,
        "aligner.decay_factor" => config.aligner.decay_factor = parse_f64(key, value)?,
        "aligner.decay_every" => config.aligner.decay_every = parse_usize(key, value)?,
        "aligner.epsilon" => config.aligner.epsilon = parse_f64(key, value)?,
        "aligner.patience" => config.aligner.patience = parse_usize(key, value)?,
        "aligner.max_iters" => config.aligner.max_iters = parse_usize(key, value)?,
        "aligner.min_pair_distance_floor" => {
            config.aligner.min_pair_distance_floor = parse_f64(key, value)?
        }
        _ => {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
    }
    Ok(())
}

/// Serialize a configuration to its canonical key=value entries.
pub fn to_entries(config: &FederationConfig) -> BTreeMap<String, String> {
    let widths: Vec<String> = config.network.widths.iter().map(|w| w.to_string()).collect();
    let mut map = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        map.insert(k.to_string(), v);
    };
    put("mode", config.mode.as_str().to_string());
    put("clients", config.num_clients.to_string());
    put("rounds", config.rounds.to_string());
    put(
        "participation_fraction",
        config.participation_fraction.to_string(),
    );
    put("lambda", config.lambda.to_string());
    put("gamma", config.gamma.to_string());
    put("local_epochs", config.local_epochs.to_string());
    put("batch_size", config.batch_size.to_string());
    put("client_lr", config.client_lr.to_string());
    put("train_fraction", config.train_fraction.to_string());
    put("master_seed", config.master_seed.to_string());
    put(
        "weighted_form",
        match config.weighted_form {
            WeightedForm::Literal => "literal".to_string(),
            WeightedForm::Convex => "convex".to_string(),
        },
    );
    put(
        "report_participants_only",
        config.report_participants_only.to_string(),
    );
    put("dump_prototypes", config.dump_prototypes.to_string());
    put(
        "dataset.points_per_class",
        config.points_per_class.to_string(),
    );
    put("dataset.num_classes", config.num_classes.to_string());
    put("partition.mode", config.partition_kind.as_str().to_string());
    put("partition.alpha", config.alpha.to_string());
    put(
        "partition.classes_per_client",
        config.classes_per_client.to_string(),
    );
    put("network.widths", widths.join(","));
    put(
        "network.decision_activation",
        match config.network.decision_activation {
            Activation::Relu => "relu".to_string(),
            Activation::Identity => "identity".to_string(),
        },
    );
    put("aligner.mu", config.aligner.mu.to_string());
    put("aligner.eta0", config.aligner.eta0.to_string());
    put("aligner.decay_factor", config.aligner.decay_factor.to_string());
    put("aligner.decay_every", config.aligner.decay_every.to_string());
    put("aligner.epsilon", config.aligner.epsilon.to_string());
    put("aligner.patience", config.aligner.patience.to_string());
    put("aligner.max_iters", config.aligner.max_iters.to_string());
    put(
        "aligner.min_pair_distance_floor",
        config.aligner.min_pair_distance_floor.to_string(),
    );
    map
}

fn build_manifest(config: &FederationConfig, user_set: BTreeSet<String>) -> RunManifest {
    let mut unused_keys = Vec::new();
    if config.mode == Mode::FedProto {
        for key in &user_set {
            if key.starts_with("aligner.") || key == "gamma" {
                unused_keys.push(key.clone());
            }
        }
    }
    if config.mode == Mode::ProtoNorm && user_set.contains("weighted_form") {
        unused_keys.push("weighted_form".to_string());
    }
    RunManifest {
        resolved: to_entries(config),
        user_set,
        unused_keys,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: None,
        finished_unix: None,
    }
}

/// Parse a config from key=value text, starting from the documented
/// defaults. Validates the result.
pub fn parse_config_str(text: &str) -> Result<(FederationConfig, RunManifest)> {
    let mut config = FederationConfig::default();
    let mut user_set = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut config, key, value)?;
        user_set.insert(key.to_string());
    }
    config.validate()?;
    let manifest = build_manifest(&config, user_set);
    Ok((config, manifest))
}

/// Parse a config file, then apply command-line overrides on top.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<(FederationConfig, RunManifest)> {
    let mut config = FederationConfig::default();
    let mut user_set = BTreeSet::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        let (parsed, manifest) = parse_config_str(&text)?;
        config = parsed;
        user_set = manifest.user_set;
    }
    for (key, value) in overrides {
        apply_key(&mut config, key, value)?;
        user_set.insert(key.clone());
    }
    config.validate()?;
    Ok((config.clone(), build_manifest(&config, user_set)))
}

/// Default aligner configuration with `aligner.*` overrides applied;
/// used by the standalone alignment subcommand.
pub fn aligner_overrides(overrides: &[(String, String)]) -> Result<AlignerConfig> {
    let mut config = FederationConfig::default();
    for (key, value) in overrides {
        if !key.starts_with("aligner.") {
            return Err(Error::Config(format!(
                "only aligner.* keys apply here, got `{key}`"
            )));
        }
        apply_key(&mut config, key, value)?;
    }
    config.aligner.validate()?;
    Ok(config.aligner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_documented_defaults() {
        let (config, manifest) = parse_config_str("").unwrap();
        assert_eq!(config.aligner.mu, 0.9);
        assert_eq!(config.aligner.eta0, 0.1);
        assert_eq!(config.lambda, 1.0);
        assert_eq!(config.client_lr, 0.01);
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.gamma, 10.0);
        assert_eq!(config.rounds, 200);
        assert_eq!(config.num_clients, 10);
        assert_eq!(config.alpha, 0.1);
        assert_eq!(config.local_epochs, 1);
        assert_eq!(config.network.widths, vec![2, 64, 64, 64, 2, 6]);
        assert!(manifest.user_set.is_empty());
        assert!(manifest.unused_keys.is_empty());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config_str("no_such_key=1").unwrap_err();
        assert!(err.to_string().contains("no_such_key"), "{err}");
    }

    #[test]
    fn constraint_violations_are_rejected() {
        assert!(parse_config_str("gamma=0").is_err());
        assert!(parse_config_str("aligner.mu=1.0").is_err());
        assert!(parse_config_str("participation_fraction=0").is_err());
        assert!(parse_config_str("train_fraction=1.5").is_err());
    }

    #[test]
    fn fedproto_flags_aligner_overrides_as_unused() {
        let (_, manifest) =
            parse_config_str("mode=fedproto\naligner.mu=0.5\nlambda=2").unwrap();
        assert_eq!(manifest.unused_keys, vec!["aligner.mu".to_string()]);
    }

    #[test]
    fn entries_roundtrip_through_parser() {
        let (config, _) = parse_config_str("mode=fedproto\nrounds=17\nclient_lr=0.025").unwrap();
        let entries = to_entries(&config);
        let text: String = entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let (back, _) = parse_config_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let (config, _) =
            parse_config_str("# a comment\n\nrounds = 5\n  # another\n").unwrap();
        assert_eq!(config.rounds, 5);
    }

    #[test]
    fn cli_overrides_apply_on_top_of_defaults() {
        let overrides = vec![
            ("mode".to_string(), "fedproto".to_string()),
            ("master_seed".to_string(), "9".to_string()),
        ];
        let (config, manifest) = load_config(None, &overrides).unwrap();
        assert_eq!(config.mode, Mode::FedProto);
        assert_eq!(config.master_seed, 9);
        assert!(manifest.user_set.contains("mode"));
    }
}
