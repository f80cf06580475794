//! Runtime settings: defaults, overridden by a `key = value` config file
//! (UTF-8, `#` comments), then by the `GSE_SEED` environment variable, then
//! by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gse_core::loss::LossConfig;
use gse_core::model::{ArchitectureConfig, FreqPadding, Gating};
use gse_core::train::AdamConfig;

#[derive(Clone, Debug)]
pub struct Settings {
    pub rho: usize,
    pub gating: Gating,
    pub temporal_hidden: usize,
    pub temporal_sigmoid: bool,
    pub freq_padding: FreqPadding,

    pub lambda: f64,
    pub theta: f64,
    pub bin_floor: f64,
    pub min_active: usize,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sample_len: usize,
    pub overlap: f64,
    pub validate: bool,

    pub manifest: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            rho: 4,
            gating: Gating::None,
            temporal_hidden: 128,
            temporal_sigmoid: false,
            freq_padding: FreqPadding::Valid,
            lambda: 1.0 / 3.0,
            theta: 0.01,
            bin_floor: 1e-3,
            min_active: 10,
            lr: 1e-4,
            batch_size: 16,
            epochs: 2,
            seed: 1,
            sample_len: 40,
            overlap: 0.5,
            validate: true,
            manifest: None,
            stats: None,
            features_dir: None,
            checkpoint_dir: None,
            log: None,
        }
    }
}

impl Settings {
    pub fn architecture(&self) -> ArchitectureConfig {
        ArchitectureConfig {
            rho: self.rho,
            gating: self.gating,
            temporal_hidden: self.temporal_hidden,
            temporal_sigmoid: self.temporal_sigmoid,
            freq_padding: self.freq_padding,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            theta: self.theta,
            bin_floor: self.bin_floor,
            min_active: self.min_active,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "rho" => self.rho = v.parse().context("rho")?,
            "gating" => self.gating = v.parse().map_err(|e| anyhow::anyhow!("{e}"))?,
            "temporal_hidden" => self.temporal_hidden = v.parse().context("temporal_hidden")?,
            "temporal_sigmoid" => self.temporal_sigmoid = parse_bool(v)?,
            "freq_padding" => {
                self.freq_padding = match v {
                    "valid" => FreqPadding::Valid,
                    "same" => FreqPadding::Same,
                    other => bail!("freq_padding must be valid|same, got '{other}'"),
                }
            }
            "lambda" => self.lambda = v.parse().context("lambda")?,
            "theta" => self.theta = v.parse().context("theta")?,
            "bin_floor" => self.bin_floor = v.parse().context("bin_floor")?,
            "min_active" => self.min_active = v.parse().context("min_active")?,
            "lr" => self.lr = v.parse().context("lr")?,
            "batch_size" => self.batch_size = v.parse().context("batch_size")?,
            "epochs" => self.epochs = v.parse().context("epochs")?,
            "seed" => self.seed = v.parse().context("seed")?,
            "sample_len" => self.sample_len = v.parse().context("sample_len")?,
            "overlap" => self.overlap = v.parse().context("overlap")?,
            "validate" => self.validate = parse_bool(v)?,
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "stats" => self.stats = Some(PathBuf::from(v)),
            "features_dir" => self.features_dir = Some(PathBuf::from(v)),
            "checkpoint_dir" => self.checkpoint_dir = Some(PathBuf::from(v)),
            "log" => self.log = Some(PathBuf::from(v)),
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), ln + 1))?;
            self.set(key, value)
                .with_context(|| format!("{}:{}", path.display(), ln + 1))?;
        }
        Ok(())
    }

    /// GSE_SEED overrides the config-file seed (flags still win over both).
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("GSE_SEED") {
            self.seed = v.parse().context("GSE_SEED")?;
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("expected a boolean, got '{other}'"),
    }
}

pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let snrs: Result<Vec<f64>> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad SNR '{p}'")))
        .collect();
    let snrs = snrs?;
    if snrs.is_empty() {
        bail!("empty SNR list");
    }
    Ok(snrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_then_env_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment line").unwrap();
        writeln!(f, "rho = 7").unwrap();
        writeln!(f, "gating = local").unwrap();
        writeln!(f, "lr = 0.002").unwrap();
        writeln!(f, "seed = 42").unwrap();
        drop(f);

        let mut s = Settings::default();
        s.load_file(&path).unwrap();
        assert_eq!(s.rho, 7);
        assert_eq!(s.gating, Gating::Local);
        assert!((s.lr - 0.002).abs() < 1e-15);
        assert_eq!(s.seed, 42);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut s = Settings::default();
        assert!(s.set("rh0", "3").is_err());
        assert!(s.set("gating", "sideways").is_err());
        assert!(s.set("epochs", "two").is_err());
    }

    #[test]
    fn snr_list_parsing() {
        assert_eq!(parse_snr_list("-5, 0,5").unwrap(), vec![-5.0, 0.0, 5.0]);
        assert!(parse_snr_list("a,b").is_err());
    }
}
