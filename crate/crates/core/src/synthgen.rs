//! Deterministic synthetic FTIR spectra built from per-group Gaussian
//! absorption bands.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digitizer::RawTrace;
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_trace, PreprocessConfig};
use crate::types::{Dataset, FunctionalGroup, LabeledSpectrum, RngSeed};

/// Transmittance before any absorption, percent.
pub const BASELINE: f64 = 95.0;

const DEFAULT_TEMPLATES: &str = include_str!("../data/band_templates.txt");

/// Gaussian absorption dip; `width` is the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center: f64,
    pub width: f64,
    pub depth: f64,
}

impl Band {
    pub fn dip(&self, wavenumber: f64) -> f64 {
        let z = (wavenumber - self.center) / self.width;
        self.depth * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandTemplate {
    pub group: FunctionalGroup,
    /// First entry is the primary band.
    pub bands: Vec<Band>,
}

impl BandTemplate {
    pub fn primary(&self) -> Band {
        self.bands[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<FunctionalGroup, BandTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateSet {
    /// Parses the `group: center width depth; ...` format. Groups may be
    /// missing here; [`generate`] reports them.
    pub fn parse(text: &str) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let (name, rest) = line
                .split_once(':')
                .ok_or_else(|| perr("expected `group: center width depth; ...`".into()))?;
            let group: FunctionalGroup = name.trim().parse().map_err(|e: Error| perr(e.to_string()))?;
            let mut bands = Vec::new();
            for triple in rest.split(';').filter(|t| !t.trim().is_empty()) {
                let nums: Vec<f64> = triple
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| perr(format!("invalid number `{t}`"))))
                    .collect::<Result<_>>()?;
                let [center, width, depth] = nums[..] else {
                    return Err(perr(format!("expected 3 numbers, got `{}`", triple.trim())));
                };
                if !(1400.0..=4000.0).contains(&center) {
                    return Err(perr(format!("center {center} outside 1400..4000")));
                }
                if !(width > 0.0) {
                    return Err(perr(format!("width {width} must be > 0")));
                }
                if !(depth > 0.0 && depth <= 100.0) {
                    return Err(perr(format!("depth {depth} outside (0, 100]")));
                }
                bands.push(Band { center, width, depth });
            }
            if bands.is_empty() {
                return Err(perr(format!("`{group}` has no bands")));
            }
            if templates.insert(group, BandTemplate { group, bands }).is_some() {
                return Err(perr(format!("duplicate record for `{group}`")));
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, g: FunctionalGroup) -> Option<&BandTemplate> {
        self.templates.get(&g)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.templates.values() {
            let bands: Vec<String> = t
                .bands
                .iter()
                .map(|b| format!("{} {} {}", b.center, b.width, b.depth))
                .collect();
            let _ = writeln!(out, "{}: {}", t.group, bands.join("; "));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    /// Only the class's own bands.
    Separable,
    /// Adds 1-2 bands borrowed from lower-priority groups.
    Overlapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_class: usize,
    pub noise_sd: f64,
    pub band_jitter_sd: f64,
    pub overlap_mode: OverlapMode,
    pub seed: RngSeed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 100,
            noise_sd: 2.0,
            band_jitter_sd: 10.0,
            overlap_mode: OverlapMode::Separable,
            seed: RngSeed(0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(Error::InvalidConfig("per_class must be >= 1".into()));
        }
        if !(self.noise_sd >= 0.0) || !(self.band_jitter_sd >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_sd and band_jitter_sd must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Raw trace on a 1 cm^-1 grid from 4000 to 400 cm^-1:
/// baseline minus band dips plus Gaussian noise, clamped to [0, 100].
pub fn synth_trace<R: Rng + ?Sized>(bands: &[Band], noise_sd: f64, rng: &mut R) -> RawTrace {
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("sd >= 0");
    let points = (0..=3600)
        .map(|i| {
            let w = 4000.0 - i as f64;
            let mut t = BASELINE - bands.iter().map(|b| b.dip(w)).sum::<f64>();
            if noise_sd > 0.0 {
                t += noise.sample(rng);
            }
            (w, t.clamp(0.0, 100.0))
        })
        .collect();
    RawTrace::new(points).expect("grid descends")
}

/// Bands for one sample of `group`: jittered template bands plus, in
/// overlapping mode, 1-2 bands drawn from lower-priority templates.
fn sample_bands<R: Rng + ?Sized>(
    group: FunctionalGroup,
    templates: &TemplateSet,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Vec<Band> {
    let jitter = Normal::new(0.0, cfg.band_jitter_sd).expect("sd >= 0");
    let jittered = |b: &Band, rng: &mut R| Band {
        center: if cfg.band_jitter_sd > 0.0 {
            b.center + jitter.sample(rng)
        } else {
            b.center
        },
        ..*b
    };
    let own = &templates.get(group).expect("checked by generate").bands;
    let mut bands: Vec<Band> = own.iter().map(|b| jittered(b, rng)).collect();
    if cfg.overlap_mode == OverlapMode::Overlapping {
        let lower = &FunctionalGroup::ALL[group.index() + 1..];
        if !lower.is_empty() {
            let extra = rng.random_range(1..=2);
            for _ in 0..extra {
                let donor = lower[rng.random_range(0..lower.len())];
                let donor_bands = &templates.get(donor).expect("checked by generate").bands;
                let b = donor_bands[rng.random_range(0..donor_bands.len())];
                bands.push(jittered(&b, rng));
            }
        }
    }
    bands
}

/// `per_class` preprocessed samples for each of the 14 groups, ordered by
/// class then index. Every sample draws from its own derived seed.
pub fn generate(cfg: &SynthConfig, templates: &TemplateSet) -> Result<Dataset> {
    cfg.validate()?;
    if let Some(g) = FunctionalGroup::ALL.iter().find(|g| templates.get(**g).is_none()) {
        return Err(Error::MissingTemplate(g.name()));
    }
    let pre = PreprocessConfig::default();
    let jobs: Vec<(FunctionalGroup, usize)> = FunctionalGroup::ALL
        .iter()
        .flat_map(|&g| (0..cfg.per_class).map(move |i| (g, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(group, i)| {
            let mut rng = cfg.seed.derive(group.index() as u64).derive(i as u64).rng();
            let bands = sample_bands(group, templates, cfg, &mut rng);
            let trace = synth_trace(&bands, cfg.noise_sd, &mut rng);
            Ok(LabeledSpectrum {
                spectrum: preprocess_trace(&trace, &pre)?,
                label: group,
                source_id: format!("{group}-{i:04}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, "synthetic")
}
