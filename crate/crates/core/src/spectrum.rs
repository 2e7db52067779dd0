//! Spectral images, their conversion to sRGB, and PFM / PNG output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Radiance per pixel and wavelength band, row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub width: usize,
    pub height: usize,
    /// Band centers (nm).
    pub wavelengths_nm: Vec<f64>,
    pub data: Vec<f64>,
}

impl SpectralImage {
    pub fn new(width: usize, height: usize, wavelengths_nm: Vec<f64>) -> Self {
        let data = vec![0.0; width * height * wavelengths_nm.len()];
        Self { width, height, wavelengths_nm, data }
    }

    pub fn n_bands(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let n = self.n_bands();
        let k = (y * self.width + x) * n;
        &self.data[k..k + n]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let n = self.n_bands();
        let k = (y * self.width + x) * n;
        &mut self.data[k..k + n]
    }

    /// Band-averaged radiance per pixel.
    pub fn mean_per_pixel(&self) -> Vec<f64> {
        self.data.chunks(self.n_bands()).map(|p| p.iter().sum::<f64>() / p.len() as f64).collect()
    }
}

/// Sum of |a - b| over all pixels and bands divided by the sum of |b|.
pub fn mean_relative_l1(image: &SpectralImage, reference: &SpectralImage) -> Result<f64> {
    if image.data.len() != reference.data.len() {
        return Err(Error::InvalidInput("images differ in size".into()));
    }
    let num: f64 = image.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = reference.data.iter().map(|b| b.abs()).sum();
    Ok(if den > 0.0 { num / den } else if num == 0.0 { 0.0 } else { f64::INFINITY })
}

fn lobe(l: f64, mu: f64, below: f64, above: f64) -> f64 {
    let t = (l - mu) / if l < mu { below } else { above };
    (-0.5 * t * t).exp()
}

/// CIE 1931 2-degree color matching functions, multi-lobe Gaussian fit of
/// Wyman, Sloan and Shirley (2013).
pub fn cie_xyz(lambda_nm: f64) -> [f64; 3] {
    let l = lambda_nm;
    let x = 1.056 * lobe(l, 599.8, 37.9, 31.0) + 0.362 * lobe(l, 442.0, 16.0, 26.7) - 0.065 * lobe(l, 501.1, 20.4, 26.2);
    let y = 0.821 * lobe(l, 568.8, 46.9, 40.5) + 0.286 * lobe(l, 530.9, 16.3, 31.1);
    let z = 1.217 * lobe(l, 437.0, 11.8, 36.0) + 0.681 * lobe(l, 459.0, 26.0, 13.8);
    [x, y, z]
}

const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

/// Converts band radiances to linear sRGB. XYZ is a Riemann sum over the
/// band centers, then scaled per channel so that an equal-energy spectrum
/// of unit radiance maps to the D65 white of luminance 1.
pub struct SrgbConverter {
    weights: Vec<[f64; 3]>,
}

impl SrgbConverter {
    pub fn new(wavelengths_nm: &[f64]) -> Self {
        let cmf: Vec<[f64; 3]> = wavelengths_nm.iter().map(|&l| cie_xyz(l)).collect();
        let mut white = [0.0; 3];
        for c in &cmf {
            for k in 0..3 {
                white[k] += c[k];
            }
        }
        let weights = cmf.iter().map(|c| [0, 1, 2].map(|k| c[k] * D65_WHITE[k] / white[k])).collect();
        Self { weights }
    }

    pub fn xyz(&self, bands: &[f64]) -> [f64; 3] {
        let mut xyz = [0.0; 3];
        for (w, v) in self.weights.iter().zip(bands) {
            for k in 0..3 {
                xyz[k] += w[k] * v;
            }
        }
        xyz
    }

    pub fn linear_rgb(&self, bands: &[f64]) -> [f64; 3] {
        let xyz = self.xyz(bands);
        XYZ_TO_SRGB.map(|row| row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2])
    }
}

/// sRGB transfer function on [0, 1].
pub fn srgb_encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Linear sRGB floats plus the 8-bit encoded image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImages {
    pub width: usize,
    pub height: usize,
    pub linear: Vec<f32>,
    pub encoded: Vec<u8>,
}

pub fn spectral_to_srgb(image: &SpectralImage) -> RgbImages {
    let conv = SrgbConverter::new(&image.wavelengths_nm);
    let mut linear = Vec::with_capacity(image.width * image.height * 3);
    let mut encoded = Vec::with_capacity(image.width * image.height * 3);
    for px in image.data.chunks(image.n_bands()) {
        for c in conv.linear_rgb(px) {
            linear.push(c as f32);
            encoded.push((srgb_encode(c) * 255.0).round() as u8);
        }
    }
    RgbImages { width: image.width, height: image.height, linear, encoded }
}

impl RgbImages {
    /// Little-endian PFM ("PF", scale -1), rows bottom to top.
    pub fn write_pfm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "PF\n{} {}\n-1.0\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.linear.len() * 4);
        for row in (0..self.height).rev() {
            for v in &self.linear[row * self.width * 3..(row + 1) * self.width * 3] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&self.encoded).map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, pfm: impl AsRef<Path>, png: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(pfm)?);
        self.write_pfm(&mut f)?;
        f.flush()?;
        self.write_png(std::io::BufWriter::new(std::fs::File::create(png)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::band_centers_nm;

    fn one_pixel(bands: Vec<f64>) -> SpectralImage {
        SpectralImage { width: 1, height: 1, wavelengths_nm: band_centers_nm(8), data: bands }
    }

    #[test]
    fn equal_energy_is_neutral() {
        let rgb = spectral_to_srgb(&one_pixel(vec![0.5; 8]));
        let [r, g, b] = [0, 1, 2].map(|k| rgb.encoded[k] as i32);
        assert!((r - g).abs() < 2 && (g - b).abs() < 2, "{r} {g} {b}");
        let lin = SrgbConverter::new(&band_centers_nm(8)).linear_rgb(&[1.0; 8]);
        assert!(lin.iter().all(|c| (c - 1.0).abs() < 1e-3), "{lin:?}");
    }

    #[test]
    fn zero_is_black() {
        assert!(spectral_to_srgb(&one_pixel(vec![0.0; 8])).encoded.iter().all(|&c| c == 0));
    }

    #[test]
    fn line_at_590_nm_is_orange() {
        // a 590 nm line split between the neighbouring band centers
        let centers = band_centers_nm(8);
        let k = centers.iter().position(|&c| c > 590.0).unwrap();
        let f = (590.0 - centers[k - 1]) / (centers[k] - centers[k - 1]);
        let mut bands = vec![0.0; 8];
        bands[k - 1] = 0.3 * (1.0 - f);
        bands[k] = 0.3 * f;
        let rgb = spectral_to_srgb(&one_pixel(bands));
        let [r, g, b] = [0, 1, 2].map(|k| rgb.encoded[k]);
        assert!(r > g && g > b, "{r} {g} {b}");
    }

    #[test]
    fn cmf_peaks() {
        assert!((cie_xyz(599.8)[0] - 1.056).abs() < 0.01);
        assert!(cie_xyz(555.0)[1] > 0.95);
        assert!(cie_xyz(700.0)[2] < 1e-6);
    }

    #[test]
    fn pfm_layout() {
        let img = RgbImages { width: 1, height: 2, linear: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], encoded: vec![0; 6] };
        let mut out = Vec::new();
        img.write_pfm(&mut out).unwrap();
        assert!(out.starts_with(b"PF\n1 2\n-1.0\n"));
        let body = &out[12..];
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 4.0);
        assert_eq!(body.len(), 24);
    }
}
