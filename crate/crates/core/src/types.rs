//! Domain vocabulary shared by every stage of the pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of functional-group classes.
pub const N_CLASSES: usize = 14;
/// Length of a model-ready spectrum.
pub const INPUT_LENGTH: usize = 404;
/// Normalized transmittance range of a model-ready spectrum.
pub const NORM_LOW: f64 = 1.0;
pub const NORM_HIGH: f64 = 100.0;

/// Highest-priority functional group of a molecule, in descending priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalGroup {
    Carboxylic,
    Ester,
    Amide,
    Nitrile,
    Aldehyde,
    Ketone,
    Alcohol,
    Amine,
    Aromatic,
    Alkene,
    Alkyne,
    Alkane,
    Ether,
    Nitro,
}

impl FunctionalGroup {
    /// All groups ordered from highest to lowest priority.
    pub const ALL: [FunctionalGroup; N_CLASSES] = [
        Self::Carboxylic,
        Self::Ester,
        Self::Amide,
        Self::Nitrile,
        Self::Aldehyde,
        Self::Ketone,
        Self::Alcohol,
        Self::Amine,
        Self::Aromatic,
        Self::Alkene,
        Self::Alkyne,
        Self::Alkane,
        Self::Ether,
        Self::Nitro,
    ];

    /// Zero-based class index used as the model label.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    /// Priority rank, 1 = highest.
    pub fn priority(self) -> u8 {
        self as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Carboxylic => "carboxylic",
            Self::Ester => "ester",
            Self::Amide => "amide",
            Self::Nitrile => "nitrile",
            Self::Aldehyde => "aldehyde",
            Self::Ketone => "ketone",
            Self::Alcohol => "alcohol",
            Self::Amine => "amine",
            Self::Aromatic => "aromatic",
            Self::Alkene => "alkene",
            Self::Alkyne => "alkyne",
            Self::Alkane => "alkane",
            Self::Ether => "ether",
            Self::Nitro => "nitro",
        }
    }

    /// Comma-separated list of canonical names, for diagnostics.
    pub fn valid_names() -> String {
        Self::ALL.iter().map(|g| g.name()).collect::<Vec<_>>().join(", ")
    }
}

/// Priority rank of a group (1 = highest).
pub fn priority_of(group: FunctionalGroup) -> u8 {
    group.priority()
}

impl fmt::Display for FunctionalGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionalGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::UnknownGroup {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

/// Seed for every stochastic operation.
///
/// Child seeds are derived with a SplitMix64 finalizer so independent
/// streams (folds, repeats, samples) never share state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(stream.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

/// Transmittance values on a descending, equidistant wavenumber axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    wavenumber_start: f64,
    wavenumber_end: f64,
    normalized: bool,
}

impl Spectrum {
    pub fn new(
        values: Vec<f64>,
        wavenumber_start: f64,
        wavenumber_end: f64,
        normalized: bool,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSpectrum("no values".into()));
        }
        if !(wavenumber_start > wavenumber_end) {
            return Err(Error::InvalidSpectrum(format!(
                "wavenumber axis must descend, got {wavenumber_start} -> {wavenumber_end}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSpectrum(format!("non-finite value {v}")));
        }
        Ok(Spectrum {
            values,
            wavenumber_start,
            wavenumber_end,
            normalized,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn wavenumber_start(&self) -> f64 {
        self.wavenumber_start
    }

    pub fn wavenumber_end(&self) -> f64 {
        self.wavenumber_end
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Wavenumber of sample `i` on the equidistant axis.
    pub fn wavenumber_at(&self, i: usize) -> f64 {
        if self.values.len() == 1 {
            return self.wavenumber_start;
        }
        let step = (self.wavenumber_start - self.wavenumber_end) / (self.values.len() - 1) as f64;
        self.wavenumber_start - i as f64 * step
    }

    /// Normalized, 404 points, every value in [1, 100].
    pub fn is_model_ready(&self) -> bool {
        self.normalized
            && self.values.len() == INPUT_LENGTH
            && self.values.iter().all(|v| (NORM_LOW..=NORM_HIGH).contains(v))
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, normalized: bool) -> Spectrum {
        Spectrum {
            values,
            wavenumber_start: self.wavenumber_start,
            wavenumber_end: self.wavenumber_end,
            normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpectrum {
    pub spectrum: Spectrum,
    pub label: FunctionalGroup,
    pub source_id: String,
}

/// Metadata a dataset CSV does not carry itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMeta {
    pub tag: String,
    pub wavenumber_start: f64,
    pub wavenumber_end: f64,
    pub normalized: bool,
}

impl CsvMeta {
    /// Model-ready data: normalized 4000..1400 cm^-1 window.
    pub fn normalized(tag: impl Into<String>) -> Self {
        CsvMeta {
            tag: tag.into(),
            wavenumber_start: 4000.0,
            wavenumber_end: 1400.0,
            normalized: true,
        }
    }
}

/// Ordered labeled spectra sharing one length and normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSpectrum>,
    tag: String,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSpectrum>, tag: impl Into<String>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let len = first.spectrum.len();
            let normalized = first.spectrum.is_normalized();
            let mut ids = HashSet::with_capacity(samples.len());
            for s in &samples {
                if s.spectrum.len() != len {
                    return Err(Error::InvalidDataset(format!(
                        "sample `{}` has length {}, expected {len}",
                        s.source_id,
                        s.spectrum.len()
                    )));
                }
                if s.spectrum.is_normalized() != normalized {
                    return Err(Error::InvalidDataset(format!(
                        "sample `{}` disagrees on normalization",
                        s.source_id
                    )));
                }
                if !ids.insert(s.source_id.as_str()) {
                    return Err(Error::InvalidDataset(format!(
                        "duplicate source id `{}`",
                        s.source_id
                    )));
                }
            }
        }
        Ok(Dataset {
            samples,
            tag: tag.into(),
        })
    }

    pub fn empty(tag: impl Into<String>) -> Self {
        Dataset {
            samples: Vec::new(),
            tag: tag.into(),
        }
    }

    pub fn samples(&self) -> &[LabeledSpectrum] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSpectrum> {
        self.samples
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Spectrum length shared by all samples, `None` when empty.
    pub fn spectrum_len(&self) -> Option<usize> {
        self.samples.first().map(|s| s.spectrum.len())
    }

    pub fn class_counts(&self) -> BTreeMap<FunctionalGroup, usize> {
        class_counts(self)
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            tag: self.tag.clone(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Dataset {
        self.tag = tag.into();
        self
    }

    /// Fails unless every sample is normalized with the given length.
    pub fn ensure_normalized(&self, len: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for s in &self.samples {
            if !s.spectrum.is_normalized() {
                return Err(Error::NotNormalized);
            }
            if s.spectrum.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "sample `{}` has length {}, model expects {len}",
                    s.source_id,
                    s.spectrum.len()
                )));
            }
        }
        Ok(())
    }

    /// Writes `id,label,x1..xN` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.spectrum_len().unwrap_or(INPUT_LENGTH);
        write!(w, "id,label")?;
        for i in 1..=n {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for s in &self.samples {
            write!(w, "{},{}", s.source_id, s.label)?;
            for v in s.spectrum.values() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: BufRead>(r: R, meta: &CsvMeta) -> Result<Dataset> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header row".into(),
        })?;
        let header = header?;
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `id,label,x1,...`".into(),
            });
        }
        for (i, c) in cols[2..].iter().enumerate() {
            if *c != format!("x{}", i + 1) {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected column `x{}`, found `{c}`", i + 1),
                });
            }
        }
        let n = cols.len() - 2;
        let mut samples = Vec::new();
        for (lineno, line) in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 2 {
                return Err(perr(format!(
                    "expected {} fields, found {}",
                    n + 2,
                    fields.len()
                )));
            }
            let label: FunctionalGroup = fields[1].parse().map_err(|e: Error| perr(e.to_string()))?;
            let values = fields[2..]
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| perr(format!("invalid number `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let spectrum = Spectrum::new(
                values,
                meta.wavenumber_start,
                meta.wavenumber_end,
                meta.normalized,
            )
            .map_err(|e| perr(e.to_string()))?;
            samples.push(LabeledSpectrum {
                spectrum,
                label,
                source_id: fields[0].to_string(),
            });
        }
        Dataset::new(samples, meta.tag.clone())
    }
}

/// Per-class sample counts; absent classes map to 0.
pub fn class_counts(d: &Dataset) -> BTreeMap<FunctionalGroup, usize> {
    let mut counts: BTreeMap<FunctionalGroup, usize> =
        FunctionalGroup::ALL.iter().map(|&g| (g, 0)).collect();
    for s in d.samples() {
        *counts.entry(s.label).or_default() += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore};

    fn sample(id: &str, label: FunctionalGroup, values: Vec<f64>) -> LabeledSpectrum {
        LabeledSpectrum {
            spectrum: Spectrum::new(values, 4000.0, 1400.0, true).unwrap(),
            label,
            source_id: id.to_string(),
        }
    }

    #[test]
    fn empty_dataset_counts_are_zero() {
        let counts = class_counts(&Dataset::empty("x"));
        assert_eq!(counts.len(), 14);
        assert!(counts.values().all(|&c| c == 0));
    }

    #[test]
    fn singleton_amide() {
        let d = Dataset::new(vec![sample("a", FunctionalGroup::Amide, vec![1.0; 3])], "x").unwrap();
        let counts = d.class_counts();
        assert_eq!(counts[&FunctionalGroup::Amide], 1);
        assert_eq!(counts.values().sum::<usize>(), 1);
    }

    #[test]
    fn priority_ranks() {
        assert_eq!(priority_of(FunctionalGroup::Carboxylic), 1);
        assert_eq!(priority_of(FunctionalGroup::Nitro), 14);
        let mut ranks: Vec<u8> = FunctionalGroup::ALL.iter().map(|g| g.priority()).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=14).collect::<Vec<u8>>());
    }

    #[test]
    fn names_round_trip() {
        for g in FunctionalGroup::ALL {
            assert_eq!(g.name().parse::<FunctionalGroup>().unwrap(), g);
            assert_eq!(FunctionalGroup::from_index(g.index()), Some(g));
        }
        let err = "amidex".parse::<FunctionalGroup>().unwrap_err().to_string();
        assert!(err.contains("amide") && err.contains("nitro"), "{err}");
    }

    #[test]
    fn spectrum_rejects_bad_axis() {
        assert!(Spectrum::new(vec![1.0], 1400.0, 4000.0, false).is_err());
        assert!(Spectrum::new(vec![], 4000.0, 1400.0, false).is_err());
        assert!(Spectrum::new(vec![f64::NAN], 4000.0, 1400.0, false).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_lengths_and_duplicate_ids() {
        let a = sample("a", FunctionalGroup::Amide, vec![1.0; 3]);
        let b = sample("b", FunctionalGroup::Amide, vec![1.0; 4]);
        assert!(Dataset::new(vec![a.clone(), b], "x").is_err());
        assert!(Dataset::new(vec![a.clone(), a], "x").is_err());
    }

    #[test]
    fn equal_seeds_give_equal_streams() {
        let mut a = RngSeed(42).rng();
        let mut b = RngSeed(42).rng();
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngSeed(42).derive(1).rng();
        let mut d = RngSeed(42).derive(2).rng();
        assert_ne!(c.random::<u64>(), d.random::<u64>());
    }

    #[test]
    fn csv_header_is_checked() {
        let meta = CsvMeta::normalized("t");
        let bad = "id,label,x2\na,amide,1\n";
        assert!(Dataset::read_csv(bad.as_bytes(), &meta).is_err());
        let unknown = "id,label,x1\na,amidex,1\n";
        let err = Dataset::read_csv(unknown.as_bytes(), &meta).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
