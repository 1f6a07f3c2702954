//! Raster loading, color conversion, and per-pixel feature extraction.
//!
//! The pipeline consumes an 8-bit RGB raster and derives three per-pixel
//! descriptors from it:
//!
//! * the CIELAB triple (D65 white point, sRGB transfer curve),
//! * the diagonal of the RGB covariance over a 3x3 window, and
//! * a saliency vector built from gamma-remapped color channels
//!   ([R, G, B, L, a, b, H, S] per gamma, gamma-major order).
//!
//! RGB and HSV channels live in [0, 1]. Lab is kept in its native ranges
//! (L in [0, 100], a/b roughly [-128, 127]); wherever a Lab value feeds a
//! [0, 1] grid it goes through [`rescale_lab`] first.

use ndarray::Array2;
use num_traits::Float;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{count, flt, Real};

/// Interpretation of the channel stack in an [`ImagePlane`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    /// Three channels R, G, B in [0, 1].
    Rgb,
    /// Three channels L, a, b in native Lab ranges.
    Lab,
    /// Two channels: hue as a normalized angle in [0, 1), HSV saturation in [0, 1].
    Hs,
}

impl ColorSpace {
    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            ColorSpace::Rgb => &["R", "G", "B"],
            ColorSpace::Lab => &["L", "a", "b"],
            ColorSpace::Hs => &["H", "S"],
        }
    }
}

/// A multi-channel raster with all channels sharing one shape.
#[derive(Debug, Clone)]
pub struct ImagePlane<F> {
    space: ColorSpace,
    planes: Vec<Array2<F>>,
}

impl<F: Real> ImagePlane<F> {
    /// Wraps channel grids, checking the channel count and shared shape.
    pub fn new(space: ColorSpace, planes: Vec<Array2<F>>) -> Result<Self> {
        if planes.len() != space.channel_names().len() {
            return Err(Error::Contract(format!(
                "{:?} expects {} channels, got {}",
                space,
                space.channel_names().len(),
                planes.len()
            )));
        }
        let dim = planes[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::Contract("image must be non-empty".into()));
        }
        for p in &planes[1..] {
            if p.dim() != dim {
                return Err(Error::Dimension {
                    expected: format!("{}x{}", dim.0, dim.1),
                    got: format!("{}x{}", p.dim().0, p.dim().1),
                });
            }
        }
        Ok(ImagePlane { space, planes })
    }

    pub fn from_rgb_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [F; 3]) -> Self {
        let mut planes = vec![Array2::zeros((height, width)); 3];
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                for ch in 0..3 {
                    planes[ch][[r, c]] = px[ch];
                }
            }
        }
        ImagePlane {
            space: ColorSpace::Rgb,
            planes,
        }
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn height(&self) -> usize {
        self.planes[0].dim().0
    }

    pub fn width(&self) -> usize {
        self.planes[0].dim().1
    }

    pub fn channel(&self, i: usize) -> &Array2<F> {
        &self.planes[i]
    }

    pub fn channels(&self) -> &[Array2<F>] {
        &self.planes
    }

    fn expect_space(&self, want: ColorSpace, op: &str) -> Result<()> {
        if self.space != want {
            return Err(Error::Contract(format!(
                "{op} requires a {want:?} image, got {:?}",
                self.space
            )));
        }
        Ok(())
    }
}

/// Loads an 8-bit RGB raster (PNG or PPM) and scales channels to [0, 1].
///
/// Gray and alpha-carrying 8-bit variants are expanded/flattened to RGB;
/// deeper bit depths are rejected rather than silently truncated.
pub fn load_image<F: Real>(path: &Path) -> Result<ImagePlane<F>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedImage {
            path: path.into(),
            detail: other.to_string(),
        },
    })?;
    use image::DynamicImage as D;
    let rgb = match img {
        D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageRgb8(_) | D::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedImage {
                path: path.into(),
                detail: format!("unsupported bit depth or layout {:?}", other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::UnsupportedImage {
            path: path.into(),
            detail: "empty image".into(),
        });
    }
    let scale = flt::<F>(1.0 / 255.0);
    let mut planes = vec![Array2::zeros((h, w)); 3];
    for (x, y, px) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            planes[ch][[y as usize, x as usize]] = count::<F>(px.0[ch] as usize) * scale;
        }
    }
    ImagePlane::new(ColorSpace::Rgb, planes)
}

// sRGB <-> XYZ (D65) and the Lab transfer constants.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_linearize<F: Real>(c: F) -> F {
    if c <= flt(0.04045) {
        c / flt(12.92)
    } else {
        Float::powf((c + flt(0.055)) / flt(1.055), flt(2.4))
    }
}

fn lab_f<F: Real>(t: F) -> F {
    if t > flt(LAB_EPSILON) {
        Float::cbrt(t)
    } else {
        (flt::<F>(LAB_KAPPA) * t + flt(16.0)) / flt(116.0)
    }
}

/// Converts one sRGB pixel in [0, 1] to a Lab triple.
pub fn rgb_pixel_to_lab<F: Real>(rgb: [F; 3]) -> [F; 3] {
    let lin: Vec<F> = rgb.iter().map(|&c| srgb_linearize(c)).collect();
    let mut xyz = [F::zero(); 3];
    for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[i] = flt::<F>(row[0]) * lin[0] + flt::<F>(row[1]) * lin[1] + flt::<F>(row[2]) * lin[2];
    }
    let fx = lab_f(xyz[0] / flt(WHITE_D65[0]));
    let fy = lab_f(xyz[1] / flt(WHITE_D65[1]));
    let fz = lab_f(xyz[2] / flt(WHITE_D65[2]));
    [
        flt::<F>(116.0) * fy - flt(16.0),
        flt::<F>(500.0) * (fx - fy),
        flt::<F>(200.0) * (fy - fz),
    ]
}

/// Converts an RGB image to Lab channel planes.
pub fn rgb_to_lab<F: Real>(img: &ImagePlane<F>) -> Result<ImagePlane<F>> {
    img.expect_space(ColorSpace::Rgb, "rgb_to_lab")?;
    let (h, w) = (img.height(), img.width());
    let mut planes = vec![Array2::zeros((h, w)); 3];
    for r in 0..h {
        for c in 0..w {
            let lab = rgb_pixel_to_lab([
                img.channel(0)[[r, c]],
                img.channel(1)[[r, c]],
                img.channel(2)[[r, c]],
            ]);
            for ch in 0..3 {
                planes[ch][[r, c]] = lab[ch];
            }
        }
    }
    ImagePlane::new(ColorSpace::Lab, planes)
}

/// Converts one RGB pixel to (hue, saturation); achromatic pixels map to (0, 0).
pub fn rgb_pixel_to_hs<F: Real>(rgb: [F; 3]) -> [F; 2] {
    let [r, g, b] = rgb;
    let max = Float::max(r, Float::max(g, b));
    let min = Float::min(r, Float::min(g, b));
    let delta = max - min;
    if delta == F::zero() || max == F::zero() {
        return [F::zero(), if max == F::zero() { F::zero() } else { delta / max }];
    }
    let six = flt::<F>(6.0);
    let mut h = if max == r {
        ((g - b) / delta) / six
    } else if max == g {
        ((b - r) / delta + flt(2.0)) / six
    } else {
        ((r - g) / delta + flt(4.0)) / six
    };
    if h < F::zero() {
        h += F::one();
    }
    if h >= F::one() {
        h -= F::one();
    }
    [h, delta / max]
}

/// Converts an RGB image to hue/saturation planes.
pub fn rgb_to_hs<F: Real>(img: &ImagePlane<F>) -> Result<ImagePlane<F>> {
    img.expect_space(ColorSpace::Rgb, "rgb_to_hs")?;
    let (h, w) = (img.height(), img.width());
    let mut planes = vec![Array2::zeros((h, w)); 2];
    for r in 0..h {
        for c in 0..w {
            let hs = rgb_pixel_to_hs([
                img.channel(0)[[r, c]],
                img.channel(1)[[r, c]],
                img.channel(2)[[r, c]],
            ]);
            planes[0][[r, c]] = hs[0];
            planes[1][[r, c]] = hs[1];
        }
    }
    ImagePlane::new(ColorSpace::Hs, planes)
}

/// Rescales a Lab triple into [0, 1] per channel: L/100, (a+128)/255, (b+128)/255.
pub fn rescale_lab<F: Real>(lab: [F; 3]) -> [F; 3] {
    let clamp01 = |v: F| Float::max(F::zero(), Float::min(F::one(), v));
    [
        clamp01(lab[0] / flt(100.0)),
        clamp01((lab[1] + flt(128.0)) / flt(255.0)),
        clamp01((lab[2] + flt(128.0)) / flt(255.0)),
    ]
}

/// Raises every grid value to `gamma`. Values must be in [0, 1].
pub fn gamma_correct<F: Real>(plane: &Array2<F>, gamma: F) -> Result<Array2<F>> {
    if !(gamma > F::zero()) {
        return Err(Error::Contract(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(plane.mapv(|v| gamma_value(v, gamma)))
}

#[inline]
fn gamma_value<F: Real>(v: F, gamma: F) -> F {
    // The three stock exponents avoid powf on the hot path.
    if gamma == flt(0.5) {
        Float::sqrt(v)
    } else if gamma == flt(2.0) {
        v * v
    } else if gamma == flt(1.5) {
        v * Float::sqrt(v)
    } else {
        Float::powf(v, gamma)
    }
}

/// Rec. 601 luma of an RGB image, in [0, 1].
pub fn luma<F: Real>(img: &ImagePlane<F>) -> Result<Array2<F>> {
    img.expect_space(ColorSpace::Rgb, "luma")?;
    let (h, w) = (img.height(), img.width());
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        flt::<F>(0.299) * img.channel(0)[[r, c]]
            + flt::<F>(0.587) * img.channel(1)[[r, c]]
            + flt::<F>(0.114) * img.channel(2)[[r, c]]
    }))
}

/// Per-pixel descriptors derived from one RGB image, stored flat row-major.
#[derive(Debug, Clone)]
pub struct PixelFeatureStack<F> {
    height: usize,
    width: usize,
    /// Lab triple per pixel, stride 3, native ranges.
    lab: Vec<F>,
    /// RGB covariance diagonal per pixel over a replicate-padded 3x3 window,
    /// stride 3. Each entry is a population variance of [0, 1] values, so it
    /// lies in [0, 0.25].
    cov_diag: Vec<F>,
    /// Saliency vector per pixel, stride `saliency_dim`, all entries in [0, 1].
    saliency: Vec<F>,
    saliency_dim: usize,
}

impl<F: Real> PixelFeatureStack<F> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lab(&self, r: usize, c: usize) -> &[F] {
        let i = (r * self.width + c) * 3;
        &self.lab[i..i + 3]
    }

    pub fn cov_diag(&self, r: usize, c: usize) -> &[F] {
        let i = (r * self.width + c) * 3;
        &self.cov_diag[i..i + 3]
    }

    pub fn saliency(&self, r: usize, c: usize) -> &[F] {
        let i = (r * self.width + c) * self.saliency_dim;
        &self.saliency[i..i + self.saliency_dim]
    }

    pub fn saliency_dim(&self) -> usize {
        self.saliency_dim
    }
}

/// Per-pixel saliency vectors, flattened row-major with stride
/// `8 * gammas.len()`.
///
/// Channel order inside each pixel's vector is gamma-major: for each gamma in
/// turn, the eight channels [R, G, B, L, a, b, H, S] (Lab rescaled to [0, 1])
/// raised to that gamma. With the stock three gammas the vector has 24
/// entries.
pub fn saliency_features<F: Real>(img: &ImagePlane<F>, gammas: &[F]) -> Result<Vec<F>> {
    img.expect_space(ColorSpace::Rgb, "saliency_features")?;
    for &g in gammas {
        if !(g > F::zero()) {
            return Err(Error::Contract(format!("gamma must be positive, got {g}")));
        }
    }
    let (h, w) = (img.height(), img.width());
    let dim = 8 * gammas.len();
    let mut out = vec![F::zero(); h * w * dim];
    for r in 0..h {
        for c in 0..w {
            let rgb = [
                img.channel(0)[[r, c]],
                img.channel(1)[[r, c]],
                img.channel(2)[[r, c]],
            ];
            let lab = rescale_lab(rgb_pixel_to_lab(rgb));
            let hs = rgb_pixel_to_hs(rgb);
            let base = [rgb[0], rgb[1], rgb[2], lab[0], lab[1], lab[2], hs[0], hs[1]];
            let o = (r * w + c) * dim;
            for (gi, &g) in gammas.iter().enumerate() {
                for (ci, &v) in base.iter().enumerate() {
                    out[o + gi * 8 + ci] = gamma_value(v, g);
                }
            }
        }
    }
    Ok(out)
}

/// Computes the full per-pixel descriptor stack for an RGB image.
pub fn pixel_features<F: Real>(img: &ImagePlane<F>, gammas: &[F]) -> Result<PixelFeatureStack<F>> {
    img.expect_space(ColorSpace::Rgb, "pixel_features")?;
    let (h, w) = (img.height(), img.width());
    let saliency_dim = 8 * gammas.len();
    let saliency = saliency_features(img, gammas)?;

    let mut lab = vec![F::zero(); h * w * 3];
    for r in 0..h {
        for c in 0..w {
            let v = rgb_pixel_to_lab([
                img.channel(0)[[r, c]],
                img.channel(1)[[r, c]],
                img.channel(2)[[r, c]],
            ]);
            lab[(r * w + c) * 3..(r * w + c) * 3 + 3].copy_from_slice(&v);
        }
    }

    let mut cov_diag = vec![F::zero(); h * w * 3];
    let nine = flt::<F>(9.0);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let plane = img.channel(ch);
                let mut sum = F::zero();
                let mut sum_sq = F::zero();
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                        let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                        let v = plane[[rr, cc]];
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let mean = sum / nine;
                let var = Float::max(sum_sq / nine - mean * mean, F::zero());
                cov_diag[(r * w + c) * 3 + ch] = var;
            }
        }
    }

    Ok(PixelFeatureStack {
        height: h,
        width: w,
        lab,
        cov_diag,
        saliency,
        saliency_dim,
    })
}
