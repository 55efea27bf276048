//! Raster plot to calibrated wavenumber/transmittance trace.
//!
//! The input is assumed to be cropped to the plot frame: column 0 is the
//! left axis (highest wavenumber) and row 0 the top of the plot (highest
//! transmittance). Axis detection is not attempted.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Default geometry of the source plots.
pub const DEFAULT_WIDTH: usize = 393;
pub const DEFAULT_HEIGHT: usize = 320;

/// 8-bit grayscale raster, row-major, 0 = black.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl PlotImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidImage(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(PlotImage {
            width,
            height,
            pixels,
        })
    }

    /// All-white canvas.
    pub fn blank(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![255; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    /// Parses an ASCII "P2" portable graymap. `#` comments are allowed.
    pub fn parse_pgm(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let bad = |msg: &str| Error::InvalidImage(msg.to_string());
        match tokens.next() {
            Some("P2") => {}
            Some(other) => return Err(bad(&format!("expected P2 magic, found `{other}`"))),
            None => return Err(bad("empty file")),
        }
        let mut header = [0usize; 3];
        for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = tokens.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            *slot = tok
                .parse()
                .map_err(|_| bad(&format!("invalid {name} `{tok}`")))?;
        }
        let [width, height, maxval] = header;
        if maxval == 0 || maxval > 255 {
            return Err(bad(&format!("maxval must be in 1..=255, got {maxval}")));
        }
        let mut pixels = Vec::with_capacity(width.saturating_mul(height).min(1 << 24));
        for tok in tokens {
            let v: usize = tok
                .parse()
                .map_err(|_| bad(&format!("invalid pixel `{tok}`")))?;
            if v > maxval {
                return Err(bad(&format!("pixel {v} exceeds maxval {maxval}")));
            }
            pixels.push((v * 255 / maxval) as u8);
        }
        Self::new(width, height, pixels)
    }

    pub fn to_pgm(&self) -> String {
        let mut out = String::with_capacity(self.pixels.len() * 4 + 32);
        let _ = writeln!(out, "P2\n{} {}\n255", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Maps image axes to physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisCalibration {
    pub x_left_wavenumber: f64,
    pub x_right_wavenumber: f64,
    pub y_top_transmittance: f64,
    pub y_bottom_transmittance: f64,
    pub ink_threshold: u8,
}

impl Default for AxisCalibration {
    fn default() -> Self {
        AxisCalibration {
            x_left_wavenumber: 4000.0,
            x_right_wavenumber: 400.0,
            y_top_transmittance: 100.0,
            y_bottom_transmittance: 0.0,
            ink_threshold: 128,
        }
    }
}

impl AxisCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_left_wavenumber > self.x_right_wavenumber) {
            return Err(Error::InvalidCalibration(
                "x_left_wavenumber must exceed x_right_wavenumber".into(),
            ));
        }
        if !(self.y_top_transmittance > self.y_bottom_transmittance) {
            return Err(Error::InvalidCalibration(
                "y_top_transmittance must exceed y_bottom_transmittance".into(),
            ));
        }
        Ok(())
    }

    fn row_to_transmittance(&self, row: f64, height: usize) -> f64 {
        let span = self.y_top_transmittance - self.y_bottom_transmittance;
        let t = self.y_top_transmittance - row / (height - 1) as f64 * span;
        t.clamp(self.y_bottom_transmittance, self.y_top_transmittance)
    }
}

/// (wavenumber, transmittance) points, wavenumbers strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    points: Vec<(f64, f64)>,
}

impl RawTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|(w, t)| !w.is_finite() || !t.is_finite())
        {
            return Err(Error::InvalidSpectrum(format!("non-finite point {p:?}")));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[0].0 > w[1].0)) {
            return Err(Error::InvalidSpectrum(format!(
                "wavenumbers must strictly decrease: {} then {}",
                w[0].0, w[1].0
            )));
        }
        Ok(RawTrace { points })
    }

    /// Sorts by descending wavenumber first; duplicate wavenumbers are an error.
    pub fn from_unsorted(mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.sort_by(|a, b| b.0.total_cmp(&a.0));
        Self::new(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn transmittances(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Parses `wavenumber,transmittance` rows. A non-numeric first row is
    /// treated as a header.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let mut fields = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(perr("expected `wavenumber,transmittance`".into()));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(w), Ok(t)) => points.push((w, t)),
                _ if i == 0 && points.is_empty() => continue,
                _ => return Err(perr(format!("invalid numbers `{line}`"))),
            }
        }
        Self::from_unsorted(points)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("wavenumber,transmittance\n");
        for (w, t) in &self.points {
            let _ = writeln!(out, "{w},{t}");
        }
        out
    }
}

/// Linear column to wavenumber map; column 0 is the left axis.
pub fn pixel_to_wavenumber(col: usize, img_width: usize, cal: &AxisCalibration) -> Result<f64> {
    if col >= img_width || img_width < 2 {
        return Err(Error::ColumnOutOfRange {
            col,
            width: img_width,
        });
    }
    let frac = col as f64 / (img_width - 1) as f64;
    Ok(cal.x_left_wavenumber + frac * (cal.x_right_wavenumber - cal.x_left_wavenumber))
}

/// Inverse of [`pixel_to_wavenumber`], as a fractional column.
fn wavenumber_to_column(w: f64, img_width: usize, cal: &AxisCalibration) -> f64 {
    (cal.x_left_wavenumber - w) / (cal.x_left_wavenumber - cal.x_right_wavenumber)
        * (img_width - 1) as f64
}

/// One point per inked column, at the mean row of that column's ink.
pub fn extract_trace(img: &PlotImage, cal: &AxisCalibration) -> Result<RawTrace> {
    cal.validate()?;
    let mut points = Vec::new();
    for col in 0..img.width() {
        let (mut sum, mut n) = (0usize, 0usize);
        for row in 0..img.height() {
            if img.get(col, row) < cal.ink_threshold {
                sum += row;
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let mean_row = sum as f64 / n as f64;
        points.push((
            pixel_to_wavenumber(col, img.width(), cal)?,
            cal.row_to_transmittance(mean_row, img.height()),
        ));
    }
    if points.is_empty() {
        return Err(Error::NoTraceFound);
    }
    RawTrace::new(points)
}

/// Fills every image column: linear interpolation inside gaps, nearest
/// value beyond the first and last inked columns.
pub fn interpolate_gaps(t: &RawTrace, cal: &AxisCalibration, img_width: usize) -> Result<RawTrace> {
    if t.len() < 2 {
        return Err(Error::TooSparse(t.len()));
    }
    cal.validate()?;
    let mut known: Vec<Option<f64>> = vec![None; img_width];
    for &(w, v) in t.points() {
        let c = wavenumber_to_column(w, img_width, cal).round();
        if c < 0.0 || c >= img_width as f64 {
            return Err(Error::ColumnOutOfRange {
                col: c.max(0.0) as usize,
                width: img_width,
            });
        }
        known[c as usize] = Some(v);
    }
    let present: Vec<usize> = (0..img_width).filter(|&c| known[c].is_some()).collect();
    if present.len() < 2 {
        return Err(Error::TooSparse(present.len()));
    }
    let mut points = Vec::with_capacity(img_width);
    let mut seg = 0;
    for col in 0..img_width {
        let value = match known[col] {
            Some(v) => v,
            None if col < present[0] => known[present[0]].unwrap(),
            None if col > *present.last().unwrap() => known[*present.last().unwrap()].unwrap(),
            None => {
                while present[seg + 1] < col {
                    seg += 1;
                }
                let (c0, c1) = (present[seg], present[seg + 1]);
                let (v0, v1) = (known[c0].unwrap(), known[c1].unwrap());
                v0 + (v1 - v0) * (col - c0) as f64 / (c1 - c0) as f64
            }
        };
        points.push((pixel_to_wavenumber(col, img_width, cal)?, value));
    }
    RawTrace::new(points)
}

/// Draws `transmittance(wavenumber)` as a one-pixel black curve, one dot per
/// column at the nearest row. Values are clamped to the calibrated range.
pub fn render_trace<F>(
    transmittance: F,
    width: usize,
    height: usize,
    cal: &AxisCalibration,
) -> Result<PlotImage>
where
    F: Fn(f64) -> f64,
{
    cal.validate()?;
    let mut img = PlotImage::blank(width, height)?;
    let span = cal.y_top_transmittance - cal.y_bottom_transmittance;
    for col in 0..width {
        let w = pixel_to_wavenumber(col, width, cal)?;
        let t = transmittance(w).clamp(cal.y_bottom_transmittance, cal.y_top_transmittance);
        let row = ((cal.y_top_transmittance - t) / span * (height - 1) as f64).round() as usize;
        img.set(col, row.min(height - 1), 0);
    }
    Ok(img)
}
