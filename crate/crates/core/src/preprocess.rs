//! Calibrated trace to model-ready feature vector: crop away the
//! fingerprint region, resample on an equidistant grid, rescale.

use crate::digitizer::RawTrace;
use crate::error::{Error, Result};
use crate::types::{Spectrum, INPUT_LENGTH, NORM_HIGH, NORM_LOW};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub window_start: f64,
    pub window_end: f64,
    pub n_points: usize,
    pub norm_low: f64,
    pub norm_high: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window_start: 4000.0,
            window_end: 1400.0,
            n_points: INPUT_LENGTH,
            norm_low: NORM_LOW,
            norm_high: NORM_HIGH,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_start > self.window_end) {
            return Err(Error::InvalidConfig(
                "window_start must exceed window_end".into(),
            ));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidConfig("n_points must be at least 2".into()));
        }
        if !(self.norm_low < self.norm_high) {
            return Err(Error::InvalidConfig("norm_low must be below norm_high".into()));
        }
        Ok(())
    }

    /// Sample wavenumbers, descending, both window bounds included.
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.window_start - self.window_end) / (self.n_points - 1) as f64;
        let mut grid: Vec<f64> = (0..self.n_points)
            .map(|i| self.window_start - i as f64 * step)
            .collect();
        grid[self.n_points - 1] = self.window_end;
        grid
    }
}

fn check_coverage(t: &RawTrace, cfg: &PreprocessConfig) -> Result<()> {
    let (Some(first), Some(last)) = (t.points().first(), t.points().last()) else {
        return Err(Error::TooSparse(0));
    };
    if first.0 < cfg.window_start || last.0 > cfg.window_end {
        return Err(Error::WindowNotCovered {
            lo: last.0,
            hi: first.0,
            window_start: cfg.window_start,
            window_end: cfg.window_end,
        });
    }
    Ok(())
}

/// Linear interpolation of a descending trace at `w`. `w` must lie within
/// the trace; `seg` is a cursor that only moves forward.
fn interpolate_at(points: &[(f64, f64)], w: f64, seg: &mut usize) -> f64 {
    while *seg + 2 < points.len() && points[*seg + 1].0 > w {
        *seg += 1;
    }
    let (w0, v0) = points[*seg];
    let (w1, v1) = points[*seg + 1];
    if w >= w0 {
        return v0;
    }
    if w <= w1 {
        return v1;
    }
    v0 + (v1 - v0) * (w0 - w) / (w0 - w1)
}

/// Keeps the points inside [window_end, window_start]. When a window bound
/// falls between two samples, an interpolated point is added at the bound
/// so the result still spans the full window.
pub fn crop_fingerprint(t: &RawTrace, cfg: &PreprocessConfig) -> Result<RawTrace> {
    cfg.validate()?;
    check_coverage(t, cfg)?;
    let pts = t.points();
    let mut out = Vec::with_capacity(pts.len());
    let mut seg = 0;
    if !pts.iter().any(|p| p.0 == cfg.window_start) {
        out.push((cfg.window_start, interpolate_at(pts, cfg.window_start, &mut seg)));
    }
    out.extend(
        pts.iter()
            .copied()
            .filter(|p| p.0 <= cfg.window_start && p.0 >= cfg.window_end),
    );
    if !pts.iter().any(|p| p.0 == cfg.window_end) {
        let mut seg = 0;
        out.push((cfg.window_end, interpolate_at(pts, cfg.window_end, &mut seg)));
    }
    RawTrace::new(out)
}

/// Linear interpolation at `n_points` equidistant wavenumbers spanning the window.
pub fn resample_uniform(t: &RawTrace, cfg: &PreprocessConfig) -> Result<Spectrum> {
    cfg.validate()?;
    if t.len() < 2 {
        return Err(Error::TooSparse(t.len()));
    }
    check_coverage(t, cfg)?;
    let mut seg = 0;
    let values = cfg
        .grid()
        .into_iter()
        .map(|w| interpolate_at(t.points(), w, &mut seg))
        .collect();
    Spectrum::new(values, cfg.window_start, cfg.window_end, false)
}

/// Affine rescale of one spectrum so its min maps to `norm_low` and its
/// max to `norm_high`. A flat spectrum maps to the range midpoint.
pub fn normalize(s: &Spectrum, cfg: &PreprocessConfig) -> Result<Spectrum> {
    cfg.validate()?;
    if s.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    let (lo, hi) = s
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = cfg.norm_high - cfg.norm_low;
    let values = if hi == lo {
        vec![cfg.norm_low + span / 2.0; s.len()]
    } else {
        s.values()
            .iter()
            .map(|&v| (cfg.norm_low + span * ((v - lo) / (hi - lo))).clamp(cfg.norm_low, cfg.norm_high))
            .collect()
    };
    Ok(s.with_values(values, true))
}

/// crop, resample and normalize in one step.
pub fn preprocess_trace(t: &RawTrace, cfg: &PreprocessConfig) -> Result<Spectrum> {
    let cropped = crop_fingerprint(t, cfg)?;
    let resampled = resample_uniform(&cropped, cfg)?;
    normalize(&resampled, cfg)
}
