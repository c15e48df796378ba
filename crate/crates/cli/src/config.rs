//! Run configuration: defaults, then a flat `key = value` file, then flags.

use std::fmt::Write as _;

use clap::Args;
use pulmo_core::separation::{MaskBase, MaskMode, SeparationConfig};
use pulmo_core::spectral::HighBandPolicy;

use crate::CliError;

pub const SEED_ENV: &str = "PULMO_SEED";
pub const DEFAULT_SEED: u64 = 17;

/// Settings shared by `separate` and `inspect`. Every flag overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Flat `key = value` file; `#` starts a comment.
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    /// pc-dae-c (default), pc-dae-f, dc-dae, pc-nmf or dc-nmf.
    #[arg(long)]
    pub method: Option<String>,
    /// mask (default) or direct.
    #[arg(long)]
    pub mask_mode: Option<String>,
    /// What the masks are applied to: mixture (default) or reconstruction.
    #[arg(long)]
    pub mask_base: Option<String>,
    /// Bins above the feature band in the output: zero (default) or mixture.
    #[arg(long)]
    pub high_band: Option<String>,
    #[arg(long)]
    pub frame_len: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    /// Highest STFT bin kept as a feature.
    #[arg(long)]
    pub band_hi: Option<usize>,
    /// Autoencoder training epochs (default 300).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Components of the NMF baselines (default 20).
    #[arg(long)]
    pub nmf_rank: Option<usize>,
    #[arg(long)]
    pub nmf_iters: Option<usize>,
    #[arg(long)]
    pub cluster_iters: Option<usize>,
    /// Sparsity weight of the clustering factorization (default 0.1).
    #[arg(long = "lambda")]
    pub lambda_sparsity: Option<f64>,
    /// Falls back to the config file, then $PULMO_SEED, then 17.
    #[arg(long)]
    pub seed: Option<u64>,
}

const KEYS: [&str; 16] = [
    "method",
    "mask_mode",
    "mask_base",
    "high_band",
    "frame_len",
    "hop",
    "band_hi",
    "epochs",
    "lr",
    "batch",
    "patience",
    "nmf_rank",
    "nmf_iters",
    "cluster_iters",
    "lambda_sparsity",
    "seed",
];

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", lineno + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Usage(format!("invalid value `{value}` for {key}: {e}")))
}

impl RunFlags {
    /// Resolves the effective separation settings and validates them.
    pub fn resolve(&self) -> Result<SeparationConfig, CliError> {
        let mut cfg = SeparationConfig::default();
        let mut seed = None;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (key, value) in parse_config_text(&text)? {
                apply(&mut cfg, &mut seed, &key, &value)?;
            }
        }
        let flags: [(&str, Option<String>); 16] = [
            ("method", self.method.clone()),
            ("mask_mode", self.mask_mode.clone()),
            ("mask_base", self.mask_base.clone()),
            ("high_band", self.high_band.clone()),
            ("frame_len", self.frame_len.map(|v| v.to_string())),
            ("hop", self.hop.map(|v| v.to_string())),
            ("band_hi", self.band_hi.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("patience", self.patience.map(|v| v.to_string())),
            ("nmf_rank", self.nmf_rank.map(|v| v.to_string())),
            ("nmf_iters", self.nmf_iters.map(|v| v.to_string())),
            ("cluster_iters", self.cluster_iters.map(|v| v.to_string())),
            ("lambda_sparsity", self.lambda_sparsity.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                apply(&mut cfg, &mut seed, key, &value)?;
            }
        }
        cfg.seed = match seed {
            Some(s) => s,
            None => env_seed()?,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Seed from `$PULMO_SEED`, or the default.
pub fn env_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => parse(SEED_ENV, v.trim()),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn apply(cfg: &mut SeparationConfig, seed: &mut Option<u64>, key: &str, value: &str) -> Result<(), CliError> {
    match key {
        "method" => cfg.method = parse(key, value)?,
        "mask_mode" => cfg.mask_mode = parse::<MaskMode>(key, value)?,
        "mask_base" => cfg.mask_base = parse::<MaskBase>(key, value)?,
        "high_band" => cfg.high_band = parse::<HighBandPolicy>(key, value)?,
        "frame_len" => cfg.frame_len = parse(key, value)?,
        "hop" => cfg.hop = parse(key, value)?,
        "band_hi" => cfg.band_bins = parse::<usize>(key, value)? + 1,
        "epochs" => cfg.train.epochs = parse(key, value)?,
        "lr" => cfg.train.learning_rate = parse(key, value)?,
        "batch" => cfg.train.batch_size = parse(key, value)?,
        "patience" => cfg.train.patience = parse(key, value)?,
        "nmf_rank" => cfg.nmf_rank = parse(key, value)?,
        "nmf_iters" => cfg.nmf_iters = parse(key, value)?,
        "cluster_iters" => cfg.cluster_iters = parse(key, value)?,
        "lambda_sparsity" => cfg.lambda = parse(key, value)?,
        "seed" => *seed = Some(parse(key, value)?),
        _ => return Err(CliError::Usage(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// The effective settings as `key = value` lines, in the config-file format.
pub fn render(cfg: &SeparationConfig) -> String {
    let mut out = String::new();
    let pairs: [(&str, String); 16] = [
        ("method", cfg.method.to_string()),
        ("mask_mode", cfg.mask_mode.to_string()),
        ("mask_base", cfg.mask_base.to_string()),
        ("high_band", cfg.high_band.to_string()),
        ("frame_len", cfg.frame_len.to_string()),
        ("hop", cfg.hop.to_string()),
        ("band_hi", (cfg.band_bins - 1).to_string()),
        ("epochs", cfg.train.epochs.to_string()),
        ("lr", cfg.train.learning_rate.to_string()),
        ("batch", cfg.train.batch_size.to_string()),
        ("patience", cfg.train.patience.to_string()),
        ("nmf_rank", cfg.nmf_rank.to_string()),
        ("nmf_iters", cfg.nmf_iters.to_string()),
        ("cluster_iters", cfg.cluster_iters.to_string()),
        ("lambda_sparsity", cfg.lambda.to_string()),
        ("seed", cfg.seed.to_string()),
    ];
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pulmo_core::separation::Method;
    use std::path::Path;

    fn load(path: &Path) -> Result<SeparationConfig, CliError> {
        RunFlags { config: Some(path.to_path_buf()), ..RunFlags::default() }.resolve()
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let kv = parse_config_text("# header\n\nmethod = dc-nmf  # inline\n seed=4\n").unwrap();
        assert_eq!(kv, vec![("method".into(), "dc-nmf".into()), ("seed".into(), "4".into())]);
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_usage_errors() {
        assert!(matches!(parse_config_text("colour = red"), Err(CliError::Usage(_))));
        assert!(matches!(parse_config_text("method dc-nmf"), Err(CliError::Usage(_))));
    }

    #[test]
    fn rendered_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let flags = RunFlags {
            method: Some("pc-nmf".into()),
            band_hi: Some(200),
            lambda_sparsity: Some(0.25),
            seed: Some(9),
            ..RunFlags::default()
        };
        let cfg = flags.resolve().unwrap();
        std::fs::write(&path, render(&cfg)).unwrap();
        assert_eq!(load(&path).unwrap(), cfg);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "method = dc-nmf\nseed = 3\nnmf_rank = 8\n").unwrap();
        let flags = RunFlags { config: Some(path), seed: Some(5), ..RunFlags::default() };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.method, Method::DcNmf);
        assert_eq!(cfg.nmf_rank, 8);
        assert_eq!(cfg.seed, 5);
    }

    #[test]
    fn invalid_values_are_rejected_up_front() {
        let bad = RunFlags { hop: Some(3000), ..RunFlags::default() };
        assert!(matches!(bad.resolve(), Err(CliError::Usage(_))));
        let bad = RunFlags { method: Some("kmeans".into()), ..RunFlags::default() };
        assert!(matches!(bad.resolve(), Err(CliError::Usage(_))));
    }
}
