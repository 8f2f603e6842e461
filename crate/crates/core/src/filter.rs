//! Gaussian low-pass filtering in the frequency domain.
//!
//! Severities are stored in physical units (cycles per millimeter on the
//! breast) and converted per image to cycles per frame length, so a given
//! severity removes the same physical detail regardless of pixel pitch.
//!
//! The centered spectrum has its zero-frequency bin at `(H/2, W/2)` (integer
//! division). Distances in the mask are measured in cycles per frame, with the
//! vertical axis scaled by `α/H` and the horizontal by `α/W` (`α = min(H, W)`),
//! so that a circle in cycles/mm stays a circle on non-square images.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::RoiAnnotation;
use crate::io::{atomic_write, io_err};
use crate::Result;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid image metadata: {0}")]
    InvalidMetadata(String),
    #[error("degenerate cutoff: the mask is undefined at zero cutoff, use the dc-only path")]
    DegenerateCutoff,
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid severity ladder: {0}")]
    InvalidLadder(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("image codec error: {0}")]
    Codec(String),
}

/// Cutoff of one severity level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cutoff {
    Unfiltered,
    CyclesPerMm(f64),
}

impl Cutoff {
    /// Wavelength in millimeters, `None` when unfiltered.
    pub fn wavelength_mm(self) -> Option<f64> {
        match self {
            Cutoff::Unfiltered => None,
            Cutoff::CyclesPerMm(c) => Some(1.0 / c),
        }
    }
}

impl Serialize for Cutoff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cutoff::Unfiltered => s.serialize_str("unfiltered"),
            Cutoff::CyclesPerMm(c) => s.serialize_f64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for Cutoff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) if c >= 0.0 && c.is_finite() => Ok(Cutoff::CyclesPerMm(c)),
            Raw::Num(c) => Err(serde::de::Error::custom(format!("negative or non-finite cutoff {c}"))),
            Raw::Str(s) if s == "unfiltered" => Ok(Cutoff::Unfiltered),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unknown cutoff {s:?}"))),
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Unfiltered => f.write_str("unfiltered"),
            Cutoff::CyclesPerMm(c) => write!(f, "{c} cycles/mm"),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub severity_index: usize,
    pub cutoff_cycles_per_mm: Cutoff,
}

impl FilterSpec {
    pub fn unfiltered() -> Self {
        Self {
            severity_index: 0,
            cutoff_cycles_per_mm: Cutoff::Unfiltered,
        }
    }
}

/// Default nine-level ladder: unfiltered, then cutoffs halving from 32 to
/// 0.25 cycles/mm (wavelengths 1/32 mm to 4 mm).
pub fn default_ladder() -> Vec<FilterSpec> {
    halving_ladder(9)
}

/// The first `levels` entries of the halving sequence behind
/// [`default_ladder`], continued past it when `levels > 9`.
pub fn halving_ladder(levels: usize) -> Vec<FilterSpec> {
    (0..levels)
        .map(|i| match i {
            0 => FilterSpec::unfiltered(),
            _ => FilterSpec {
                severity_index: i,
                cutoff_cycles_per_mm: Cutoff::CyclesPerMm(64.0 / f64::powi(2.0, i as i32)),
            },
        })
        .collect()
}

/// Index 0 must be unfiltered, indices must be consecutive, and cutoffs must
/// strictly decrease with severity.
pub fn validate_ladder(ladder: &[FilterSpec]) -> std::result::Result<(), FilterError> {
    let bad = |m: String| Err(FilterError::InvalidLadder(m));
    if ladder.is_empty() {
        return bad("empty ladder".into());
    }
    if ladder[0].cutoff_cycles_per_mm != Cutoff::Unfiltered {
        return bad("severity 0 must be unfiltered".into());
    }
    let mut prev = f64::INFINITY;
    for (i, spec) in ladder.iter().enumerate() {
        if spec.severity_index != i {
            return bad(format!("entry {i} has severity_index {}", spec.severity_index));
        }
        if i == 0 {
            continue;
        }
        match spec.cutoff_cycles_per_mm {
            Cutoff::Unfiltered => return bad(format!("severity {i} is unfiltered")),
            Cutoff::CyclesPerMm(c) if c >= prev => {
                return bad(format!("cutoff at severity {i} does not decrease"))
            }
            Cutoff::CyclesPerMm(c) => prev = c,
        }
    }
    Ok(())
}

/// Single-channel image with physical pixel pitch. Pixels are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub mm_per_pixel: f64,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, mm_per_pixel: f64, pixels: Vec<f64>) -> std::result::Result<Self, FilterError> {
        if pixels.len() != height * width {
            return Err(FilterError::InvalidImage(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        let img = Self {
            height,
            width,
            mm_per_pixel,
            pixels,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, mm_per_pixel: f64, value: f64) -> Self {
        Self {
            height,
            width,
            mm_per_pixel,
            pixels: vec![value; height * width],
        }
    }

    pub fn validate(&self) -> std::result::Result<(), FilterError> {
        if !(self.mm_per_pixel > 0.0 && self.mm_per_pixel.is_finite()) {
            return Err(FilterError::InvalidMetadata(format!(
                "mm_per_pixel must be positive, got {}",
                self.mm_per_pixel
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(FilterError::InvalidImage("empty image".into()));
        }
        if let Some(i) = self.pixels.iter().position(|p| !p.is_finite()) {
            return Err(FilterError::InvalidImage(format!("non-finite pixel at index {i}")));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Shorter side, in pixels.
    pub fn frame_px(&self) -> usize {
        self.height.min(self.width)
    }

    /// Clip to `[0, 65535]` and round, for export.
    pub fn quantize_u16(&self) -> Vec<u16> {
        self.pixels
            .iter()
            .map(|p| p.round().clamp(0.0, u16::MAX as f64) as u16)
            .collect()
    }
}

/// Converts a cutoff in cycles/mm to cycles per frame length of `image`:
/// `D0 · min(H, W) · β`.
pub fn severity_to_cycles_per_frame(cutoff_cycles_per_mm: f64, image: &GrayImage) -> std::result::Result<f64, FilterError> {
    if !(image.mm_per_pixel > 0.0 && image.mm_per_pixel.is_finite()) {
        return Err(FilterError::InvalidMetadata(format!(
            "mm_per_pixel must be positive, got {}",
            image.mm_per_pixel
        )));
    }
    if !(cutoff_cycles_per_mm >= 0.0) {
        return Err(FilterError::InvalidMetadata(format!(
            "cutoff must be nonnegative, got {cutoff_cycles_per_mm}"
        )));
    }
    Ok(cutoff_cycles_per_mm * image.frame_px() as f64 * image.mm_per_pixel)
}

/// Gaussian transfer function in centered layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FreqMask {
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Mask value for an unshifted DFT bin.
    #[inline]
    fn at_unshifted(&self, k_row: usize, k_col: usize) -> f64 {
        let r = (k_row + self.height / 2) % self.height;
        let c = (k_col + self.width / 2) % self.width;
        self.at(r, c)
    }
}

/// Distance of a centered bin from the zero-frequency bin, in cycles/frame.
#[inline]
pub fn frame_distance(height: usize, width: usize, row: usize, col: usize) -> f64 {
    let alpha = height.min(width) as f64;
    let kv = row as f64 - (height / 2) as f64;
    let ku = col as f64 - (width / 2) as f64;
    alpha * ((kv / height as f64).powi(2) + (ku / width as f64).powi(2)).sqrt()
}

/// `M = exp(-D² / (2 D0²))` on an `H × W` centered grid.
pub fn gaussian_mask(height: usize, width: usize, cutoff_frame: f64) -> std::result::Result<FreqMask, FilterError> {
    if cutoff_frame == 0.0 {
        return Err(FilterError::DegenerateCutoff);
    }
    if !(cutoff_frame > 0.0) {
        return Err(FilterError::InvalidMetadata(format!("cutoff must be positive, got {cutoff_frame}")));
    }
    let denom = 2.0 * cutoff_frame * cutoff_frame;
    let values = (0..height * width)
        .map(|i| {
            let d = frame_distance(height, width, i / width, i % width);
            (-d * d / denom).exp()
        })
        .collect();
    Ok(FreqMask {
        height,
        width,
        values,
    })
}

fn fft_rows(data: &mut [Complex<f64>], width: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    data.par_chunks_mut(width).for_each(|row| fft.process(row));
}

fn transpose(data: &[Complex<f64>], height: usize, width: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); data.len()];
    for r in 0..height {
        for c in 0..width {
            out[c * height + r] = data[r * width + c];
        }
    }
    out
}

/// Unnormalized 2-D DFT (inverse when `inverse`), row-major.
pub fn fft2(data: &mut Vec<Complex<f64>>, height: usize, width: usize, inverse: bool) {
    fft_rows(data, width, inverse);
    let mut t = transpose(data, height, width);
    fft_rows(&mut t, height, inverse);
    *data = transpose(&t, width, height);
}

fn spectrum(image: &GrayImage) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = image.pixels.iter().map(|&p| Complex::new(p, 0.0)).collect();
    fft2(&mut data, image.height, image.width, false);
    data
}

/// Result of applying a mask, with the discarded imaginary part reported.
#[derive(Clone, Debug)]
pub struct MaskedInverse {
    pub image: GrayImage,
    pub max_imag: f64,
}

/// Multiplies the spectrum by `mask` and returns the real inverse transform.
pub fn apply_mask(image: &GrayImage, mask: &FreqMask) -> MaskedInverse {
    let (h, w) = (image.height, image.width);
    let mut data = spectrum(image);
    data.par_chunks_mut(w).enumerate().for_each(|(kr, row)| {
        for (kc, v) in row.iter_mut().enumerate() {
            *v *= mask.at_unshifted(kr, kc);
        }
    });
    fft2(&mut data, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    let max_imag = data.iter().map(|c| (c.im * scale).abs()).fold(0.0, f64::max);
    let pixels = data.iter().map(|c| c.re * scale).collect();
    MaskedInverse {
        image: GrayImage {
            height: h,
            width: w,
            mm_per_pixel: image.mm_per_pixel,
            pixels,
        },
        max_imag,
    }
}

/// Gaussian low-pass filter at the severity given by `spec`.
///
/// A zero cutoff takes the limiting path where every pixel becomes the image
/// mean; an unfiltered spec returns the input unchanged.
pub fn lowpass(image: &GrayImage, spec: &FilterSpec) -> std::result::Result<GrayImage, FilterError> {
    image.validate()?;
    match spec.cutoff_cycles_per_mm {
        Cutoff::Unfiltered => Ok(image.clone()),
        Cutoff::CyclesPerMm(0.0) => Ok(dc_only(image)),
        Cutoff::CyclesPerMm(c) => {
            let cutoff_frame = severity_to_cycles_per_frame(c, image)?;
            let mask = gaussian_mask(image.height, image.width, cutoff_frame)?;
            Ok(apply_mask(image, &mask).image)
        }
    }
}

/// Limit of the filter as the cutoff goes to zero.
pub fn dc_only(image: &GrayImage) -> GrayImage {
    GrayImage::filled(image.height, image.width, image.mm_per_pixel, image.mean())
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RoiScheme {
    Interior,
    Exterior,
    Full,
}

impl std::str::FromStr for RoiScheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "interior" => Ok(RoiScheme::Interior),
            "exterior" => Ok(RoiScheme::Exterior),
            "full" => Ok(RoiScheme::Full),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

/// Filters the whole image and composites with the original through a hard
/// mask over the union of ROI boxes. `Interior` keeps filtered pixels inside
/// the boxes, `Exterior` outside them.
pub fn roi_scheme_filter(
    image: &GrayImage,
    rois: &RoiAnnotation,
    scheme: RoiScheme,
    spec: &FilterSpec,
) -> std::result::Result<GrayImage, FilterError> {
    rois.check_bounds(image.width as u32, image.height as u32)
        .map_err(|e| FilterError::Annotation(e.to_string()))?;
    let filtered = lowpass(image, spec)?;
    if scheme == RoiScheme::Full {
        return Ok(filtered);
    }
    let want_inside = scheme == RoiScheme::Interior;
    let w = image.width;
    let pixels = (0..image.pixels.len())
        .map(|i| {
            let (row, col) = (i / w, i % w);
            let inside = rois.boxes.iter().any(|b| b.contains(row, col));
            if inside == want_inside {
                filtered.pixels[i]
            } else {
                image.pixels[i]
            }
        })
        .collect();
    Ok(GrayImage { pixels, ..filtered })
}

/// Power spectrum `|F|²` in unshifted layout.
pub fn power_spectrum(image: &GrayImage) -> Vec<f64> {
    spectrum(image).iter().map(|c| c.norm_sqr()).collect()
}

/// Radial frequency of an unshifted bin in cycles/mm.
pub fn bin_cycles_per_mm(image: &GrayImage, k_row: usize, k_col: usize) -> f64 {
    let signed = |k: usize, n: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let fv = signed(k_row, image.height) / (image.height as f64 * image.mm_per_pixel);
    let fu = signed(k_col, image.width) / (image.width as f64 * image.mm_per_pixel);
    (fv * fv + fu * fu).sqrt()
}

/// Spectral energy strictly above `threshold` cycles/mm, and the total
/// non-DC energy.
pub fn band_energy(image: &GrayImage, threshold_cycles_per_mm: f64) -> (f64, f64) {
    let power = power_spectrum(image);
    let mut above = 0.0;
    let mut total = 0.0;
    for (i, p) in power.iter().enumerate() {
        if i == 0 {
            continue;
        }
        let f = bin_cycles_per_mm(image, i / image.width, i % image.width);
        total += p;
        if f > threshold_cycles_per_mm {
            above += p;
        }
    }
    (above, total)
}

/// Fraction of non-DC spectral energy above `threshold` cycles/mm.
pub fn high_band_fraction(image: &GrayImage, threshold_cycles_per_mm: f64) -> f64 {
    let (above, total) = band_energy(image, threshold_cycles_per_mm);
    if total == 0.0 {
        0.0
    } else {
        above / total
    }
}

/// Reads a 16-bit (or 8-bit, widened) grayscale PNG or PGM.
pub fn read_gray_image(path: &Path, mm_per_pixel: f64) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes).map_err(|e| FilterError::Codec(e.to_string()))?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let pixels = luma.into_raw().into_iter().map(f64::from).collect();
    Ok(GrayImage::new(h as usize, w as usize, mm_per_pixel, pixels)?)
}

/// Encodes the quantized image as a 16-bit grayscale PNG.
pub fn encode_png16(image: &GrayImage) -> std::result::Result<Vec<u8>, FilterError> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        image.width as u32,
        image.height as u32,
        image.quantize_u16(),
    )
    .ok_or_else(|| FilterError::InvalidImage("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    image::DynamicImage::ImageLuma16(buf)
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| FilterError::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_png16(path: &Path, image: &GrayImage) -> Result<()> {
    atomic_write(path, &encode_png16(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RoiBox;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..h * w).map(|_| rng.random_range(0.0..1000.0)).collect();
        GrayImage::new(h, w, 0.1, pixels).unwrap()
    }

    fn spec(c: f64) -> FilterSpec {
        FilterSpec {
            severity_index: 1,
            cutoff_cycles_per_mm: Cutoff::CyclesPerMm(c),
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn conversion_examples() {
        let img = GrayImage::filled(2000, 3000, 0.05, 0.0);
        assert_relative_eq!(severity_to_cycles_per_frame(1.0, &img).unwrap(), 100.0, epsilon = 1e-12);
        assert_eq!(severity_to_cycles_per_frame(0.0, &img).unwrap(), 0.0);
        let sq = GrayImage::filled(1000, 1000, 0.1, 0.0);
        assert_relative_eq!(severity_to_cycles_per_frame(2.0, &sq).unwrap(), 200.0, epsilon = 1e-12);
        let bad = GrayImage::filled(10, 10, 0.0, 0.0);
        assert!(matches!(
            severity_to_cycles_per_frame(1.0, &bad),
            Err(FilterError::InvalidMetadata(_))
        ));
    }

    #[test]
    fn mask_values_at_known_distances() {
        let m = gaussian_mask(64, 64, 8.0).unwrap();
        let (cr, cc) = m.center();
        assert_eq!(m.at(cr, cc), 1.0);
        assert_relative_eq!(m.at(cr, cc + 8), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(m.at(cr + 16, cc), (-2.0f64).exp(), epsilon = 1e-15);
        assert!(matches!(gaussian_mask(8, 8, 0.0), Err(FilterError::DegenerateCutoff)));
    }

    #[test]
    fn mask_is_point_symmetric_and_radially_decreasing() {
        for (h, w) in [(33, 47), (32, 48), (16, 16)] {
            let m = gaussian_mask(h, w, 5.0).unwrap();
            let (cr, cc) = m.center();
            for r in 0..h {
                for c in 0..w {
                    let (r2, c2) = (2 * cr as isize - r as isize, 2 * cc as isize - c as isize);
                    if r2 >= 0 && c2 >= 0 && (r2 as usize) < h && (c2 as usize) < w {
                        assert_eq!(m.at(r, c), m.at(r2 as usize, c2 as usize));
                    }
                    assert!(m.at(r, c) <= 1.0 && m.at(r, c) > 0.0);
                }
            }
            // along the row through the center, values fall off away from it
            for c in cc..w - 1 {
                assert!(m.at(cr, c + 1) <= m.at(cr, c));
            }
        }
    }

    #[test]
    fn anisotropic_axes_scale_to_physical_units() {
        // On a 20x40 image one bin along the width is half the frequency of
        // one bin along the height; both map to the same cycles/frame when the
        // index offsets are in the ratio of the axis lengths.
        let d_row = frame_distance(20, 40, 10 + 2, 20);
        let d_col = frame_distance(20, 40, 10, 20 + 4);
        assert_relative_eq!(d_row, d_col, epsilon = 1e-12);
        assert_relative_eq!(d_row, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn huge_cutoff_is_identity() {
        let img = random_image(32, 40, 1);
        let out = lowpass(&img, &spec(1e9)).unwrap();
        assert!(rel_err(&out.pixels, &img.pixels) < 1e-6);
    }

    #[test]
    fn zero_cutoff_gives_mean_image() {
        let img = random_image(16, 24, 2);
        let out = lowpass(&img, &spec(0.0)).unwrap();
        let mean = img.mean();
        assert!(out.pixels.iter().all(|p| (p - mean).abs() < 1e-9));
    }

    #[test]
    fn unfiltered_returns_input() {
        let img = random_image(8, 8, 3);
        assert_eq!(lowpass(&img, &FilterSpec::unfiltered()).unwrap(), img);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = GrayImage::filled(20, 30, 0.07, 123.0);
        let out = lowpass(&img, &spec(0.3)).unwrap();
        assert!(out.pixels.iter().all(|p| (p - 123.0).abs() < 1e-9));
    }

    #[test]
    fn non_finite_pixels_rejected() {
        let mut img = GrayImage::filled(4, 4, 0.1, 1.0);
        img.pixels[5] = f64::NAN;
        assert!(matches!(lowpass(&img, &spec(1.0)), Err(FilterError::InvalidImage(_))));
    }

    #[test]
    fn mean_preserved_and_imaginary_residue_small() {
        let img = random_image(31, 44, 4);
        let mask = gaussian_mask(31, 44, 3.0).unwrap();
        let out = apply_mask(&img, &mask);
        assert_relative_eq!(out.image.mean(), img.mean(), max_relative = 1e-6);
        let norm = img.pixels.iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!(out.max_imag < 1e-8 * norm);
    }

    #[test]
    fn spectral_energy_contracts() {
        let img = random_image(24, 24, 5);
        let out = lowpass(&img, &spec(1.0)).unwrap();
        let p_in: f64 = power_spectrum(&img).iter().sum();
        let p_out: f64 = power_spectrum(&out).iter().sum();
        assert!(p_out <= p_in);
    }

    #[test]
    fn bright_pixel_high_band_energy_shrinks_with_cutoff() {
        let mut img = GrayImage::filled(64, 64, 0.1, 0.0);
        img.pixels[32 * 64 + 32] = 1000.0;
        let mut prev = f64::INFINITY;
        for c in [4.0, 2.0, 1.0, 0.5, 0.25] {
            let out = lowpass(&img, &spec(c)).unwrap();
            let (above, _) = band_energy(&out, 1.0);
            assert!(above < prev, "cutoff {c}");
            prev = above;
        }
    }

    #[test]
    fn roi_schemes_tile_the_image() {
        let img = random_image(40, 40, 6);
        let s = spec(0.5);
        let rois = RoiAnnotation {
            reader_id: "r".into(),
            image_id: "i".into(),
            boxes: vec![RoiBox { x: 5, y: 5, w: 10, h: 12 }, RoiBox { x: 20, y: 22, w: 15, h: 10 }],
        };
        let full = lowpass(&img, &s).unwrap();
        let interior = roi_scheme_filter(&img, &rois, RoiScheme::Interior, &s).unwrap();
        let exterior = roi_scheme_filter(&img, &rois, RoiScheme::Exterior, &s).unwrap();
        assert_eq!(roi_scheme_filter(&img, &rois, RoiScheme::Full, &s).unwrap(), full);
        for r in 0..40 {
            for c in 0..40 {
                let i = r * 40 + c;
                let inside = rois.boxes.iter().any(|b| b.contains(r, c));
                if inside {
                    assert_eq!(interior.pixels[i], full.pixels[i]);
                    assert_eq!(exterior.pixels[i], img.pixels[i]);
                } else {
                    assert_eq!(exterior.pixels[i], full.pixels[i]);
                    assert_eq!(interior.pixels[i], img.pixels[i]);
                }
            }
        }
    }

    #[test]
    fn roi_empty_boxes_and_out_of_bounds() {
        let img = random_image(16, 16, 7);
        let s = spec(0.5);
        let mut rois = RoiAnnotation {
            reader_id: "r".into(),
            image_id: "i".into(),
            boxes: vec![],
        };
        assert_eq!(roi_scheme_filter(&img, &rois, RoiScheme::Interior, &s).unwrap(), img);
        assert_eq!(
            roi_scheme_filter(&img, &rois, RoiScheme::Exterior, &s).unwrap(),
            lowpass(&img, &s).unwrap()
        );
        rois.boxes.push(RoiBox { x: 10, y: 10, w: 10, h: 2 });
        assert!(matches!(
            roi_scheme_filter(&img, &rois, RoiScheme::Interior, &s),
            Err(FilterError::Annotation(_))
        ));
    }

    #[test]
    fn ladder_default_is_valid() {
        let l = default_ladder();
        assert_eq!(l.len(), 9);
        validate_ladder(&l).unwrap();
        let mut bad = l.clone();
        bad.swap(3, 4);
        assert!(validate_ladder(&bad).is_err());
    }

    #[test]
    fn cutoff_serde() {
        let l = default_ladder();
        let json = serde_json::to_string(&l[..2]).unwrap();
        assert_eq!(
            json,
            r#"[{"severity_index":0,"cutoff_cycles_per_mm":"unfiltered"},{"severity_index":1,"cutoff_cycles_per_mm":32.0}]"#
        );
        let back: Vec<FilterSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l[..2].to_vec());
    }

    #[test]
    fn png_roundtrip_quantizes() {
        let img = GrayImage::new(3, 2, 0.1, vec![0.0, 1.4, 65535.0, 70000.0, -3.0, 2.6]).unwrap();
        let bytes = encode_png16(&img).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, bytes).unwrap();
        let back = read_gray_image(&p, 0.1).unwrap();
        assert_eq!(back.pixels, vec![0.0, 1.0, 65535.0, 65535.0, 0.0, 3.0]);
    }
}
