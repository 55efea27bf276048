//! Run configuration: `[section]` headers with `key = value` lines, overlaid
//! by `--set section.key=value` flags and subcommand flags. Every value is
//! resolved and validated before a pipeline starts, and the resolved map is
//! copied verbatim into reports.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use fgnet::baselines::SvmConfig;
use fgnet::digitizer::AxisCalibration;
use fgnet::evaluation::{CnnLearner, CvConfig};
use fgnet::neuralnet::{default_architecture, format_architecture, parse_architecture, LayerSpec, Optimizer, TrainConfig};
use fgnet::preprocess::PreprocessConfig;
use fgnet::synthgen::{OverlapMode, SynthConfig, TemplateSet};
use fgnet::RngSeed;

/// Every accepted key with its default value.
fn defaults() -> Vec<(&'static str, String)> {
    let pre = PreprocessConfig::default();
    let cal = AxisCalibration::default();
    let train = TrainConfig::default();
    let synth = SynthConfig::default();
    vec![
        ("run.seed", "0".into()),
        ("run.jobs", "1".into()),
        ("preprocess.window_start", pre.window_start.to_string()),
        ("preprocess.window_end", pre.window_end.to_string()),
        ("preprocess.n_points", pre.n_points.to_string()),
        ("digitize.x_left_wavenumber", cal.x_left_wavenumber.to_string()),
        ("digitize.x_right_wavenumber", cal.x_right_wavenumber.to_string()),
        ("digitize.y_top_transmittance", cal.y_top_transmittance.to_string()),
        ("digitize.y_bottom_transmittance", cal.y_bottom_transmittance.to_string()),
        ("digitize.ink_threshold", cal.ink_threshold.to_string()),
        ("model.kind", "cnn".into()),
        ("model.architecture", format_architecture(&default_architecture())),
        ("train.epochs", train.epochs.to_string()),
        ("train.batch_size", train.batch_size.to_string()),
        ("train.learning_rate", train.learning_rate.to_string()),
        ("train.optimizer", "adam".into()),
        ("train.momentum", "0.9".into()),
        ("train.beta1", "0.9".into()),
        ("train.beta2", "0.999".into()),
        ("train.epsilon", "1e-8".into()),
        ("svm.c", SvmConfig::default().c.to_string()),
        ("svm.epochs", SvmConfig::default().epochs.to_string()),
        ("evaluation.n_folds", "10".into()),
        ("evaluation.n_repeats", "10".into()),
        ("evaluation.seeds", String::new()),
        ("evaluation.top_k", "1,2,3".into()),
        ("evaluation.undersample_per_class", "200".into()),
        ("synth.per_class", synth.per_class.to_string()),
        ("synth.noise_sd", synth.noise_sd.to_string()),
        ("synth.band_jitter_sd", synth.band_jitter_sd.to_string()),
        ("synth.overlap_mode", "separable".into()),
        ("synth.templates", String::new()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
            if section.is_empty() {
                bail!("config line {}: `{}` is outside any [section]", n + 1, key.trim());
            }
            cfg.set(&format!("{section}.{}", key.trim()), value.trim())
                .with_context(|| format!("config line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!(
                "unknown config key `{key}`; known keys: {}",
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        }
    }

    /// Applies a `section.key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{pair}` is not `section.key=value`"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| anyhow!("config `{key}` = `{}`: {e}", self.raw(key)))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("config `{key}` item `{s}`: {e}")))
            .collect()
    }

    pub fn seed(&self) -> Result<RngSeed> {
        Ok(RngSeed(self.get("run.seed")?))
    }

    pub fn jobs(&self) -> Result<usize> {
        self.get("run.jobs")
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let cfg = PreprocessConfig {
            window_start: self.get("preprocess.window_start")?,
            window_end: self.get("preprocess.window_end")?,
            n_points: self.get("preprocess.n_points")?,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn calibration(&self) -> Result<AxisCalibration> {
        let cal = AxisCalibration {
            x_left_wavenumber: self.get("digitize.x_left_wavenumber")?,
            x_right_wavenumber: self.get("digitize.x_right_wavenumber")?,
            y_top_transmittance: self.get("digitize.y_top_transmittance")?,
            y_bottom_transmittance: self.get("digitize.y_bottom_transmittance")?,
            ink_threshold: self.get("digitize.ink_threshold")?,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn architecture(&self) -> Result<Vec<LayerSpec>> {
        Ok(parse_architecture(self.raw("model.architecture"))?)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let optimizer = match self.raw("train.optimizer") {
            "adam" => Optimizer::Adam {
                beta1: self.get("train.beta1")?,
                beta2: self.get("train.beta2")?,
                epsilon: self.get("train.epsilon")?,
            },
            "sgd" => Optimizer::Sgd { momentum: self.get("train.momentum")? },
            other => bail!("train.optimizer must be `adam` or `sgd`, got `{other}`"),
        };
        let cfg = TrainConfig {
            epochs: self.get("train.epochs")?,
            batch_size: self.get("train.batch_size")?,
            learning_rate: self.get("train.learning_rate")?,
            optimizer,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cnn(&self) -> Result<CnnLearner> {
        Ok(CnnLearner { architecture: self.architecture()?, train: self.train()? })
    }

    pub fn svm(&self) -> Result<SvmConfig> {
        let cfg = SvmConfig {
            c: self.get("svm.c")?,
            epochs: self.get("svm.epochs")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn top_k(&self) -> Result<Vec<usize>> {
        let ks: Vec<usize> = self.list("evaluation.top_k")?;
        if ks.iter().any(|&k| k == 0 || k > fgnet::N_CLASSES) {
            bail!("evaluation.top_k entries must be in 1..={}", fgnet::N_CLASSES);
        }
        Ok(ks)
    }

    /// Explicit seeds win; otherwise one seed per repeat is derived from
    /// `run.seed`. The result is written back so reports show it.
    pub fn resolve_seeds(&mut self) -> Result<Vec<RngSeed>> {
        let explicit: Vec<u64> = self.list("evaluation.seeds")?;
        let seeds: Vec<u64> = if explicit.is_empty() {
            let base = self.seed()?;
            (0..self.get::<usize>("evaluation.n_repeats")?)
                .map(|r| base.derive(r as u64).0)
                .collect()
        } else {
            explicit
        };
        if seeds.is_empty() {
            bail!("evaluation.n_repeats must be >= 1");
        }
        let joined = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        self.set("evaluation.seeds", &joined)?;
        self.set("evaluation.n_repeats", &seeds.len().to_string())?;
        Ok(seeds.into_iter().map(RngSeed).collect())
    }

    pub fn cv(&mut self) -> Result<CvConfig> {
        let seeds = self.resolve_seeds()?;
        let n_folds: usize = self.get("evaluation.n_folds")?;
        if n_folds < 2 {
            bail!("evaluation.n_folds must be >= 2");
        }
        self.top_k()?;
        Ok(CvConfig { n_folds, seeds, jobs: self.jobs()?, snapshot: self.snapshot() })
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let overlap_mode = match self.raw("synth.overlap_mode") {
            "separable" => OverlapMode::Separable,
            "overlapping" => OverlapMode::Overlapping,
            other => bail!("synth.overlap_mode must be `separable` or `overlapping`, got `{other}`"),
        };
        let cfg = SynthConfig {
            per_class: self.get("synth.per_class")?,
            noise_sd: self.get("synth.noise_sd")?,
            band_jitter_sd: self.get("synth.band_jitter_sd")?,
            overlap_mode,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match self.raw("synth.templates") {
            "" => Ok(TemplateSet::default()),
            path => {
                let path = PathBuf::from(path);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading templates {}", path.display()))?;
                Ok(TemplateSet::parse(&text)?)
            }
        }
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }

    /// Same format as accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in &self.values {
            let (section, name) = key.split_once('.').expect("keys are qualified");
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut cfg = RunConfig::parse("# comment\n[train]\nepochs = 7\n\n[run]\nseed = 3 # inline\n").unwrap();
        assert_eq!(cfg.train().unwrap().epochs, 7);
        assert_eq!(cfg.seed().unwrap(), RngSeed(3));
        cfg.set_pair("train.epochs=9").unwrap();
        assert_eq!(cfg.train().unwrap().epochs, 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(RunConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::parse("epochs = 3\n").is_err());
        assert!(RunConfig::parse("[train]\nepochs\n").is_err());
        let cfg = RunConfig::parse("[train]\nepochs = 0\n").unwrap();
        assert!(cfg.train().is_err());
        let cfg = RunConfig::parse("[train]\noptimizer = rmsprop\n").unwrap();
        assert!(cfg.train().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("svm.c", "0.5").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn seeds_resolve_from_run_seed() {
        let mut cfg = RunConfig::default();
        cfg.set("evaluation.n_repeats", "3").unwrap();
        let seeds = cfg.resolve_seeds().unwrap();
        assert_eq!(seeds.len(), 3);
        assert_eq!(cfg.raw("evaluation.seeds").split(',').count(), 3);
        let again = cfg.resolve_seeds().unwrap();
        assert_eq!(seeds, again);
        cfg.set("evaluation.seeds", "5, 6").unwrap();
        assert_eq!(cfg.resolve_seeds().unwrap(), vec![RngSeed(5), RngSeed(6)]);
    }
}
