//! 8-bit raster images: decoding, resampling and tensor conversion.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageError as CodecError, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{0}: file not found")]
    FileNotFound(PathBuf),
    #[error("{path}: unsupported image format ({reason})")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: corrupt image data ({reason})")]
    CorruptData { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u8),
}

/// Row-major interleaved 8-bit raster with 1 (gray) or 3 (sRGB) channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image{{{}x{}x{}}}", self.width, self.height, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMethod {
    Nearest,
    Bilinear,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::UnsupportedChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::ChannelMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Result<Self, ImageError> {
        let channels = pixel.len() as u8;
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * pixel.len())
            .collect();
        Image::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y, c)]
    }

    /// BT.601 luma, rounded to nearest. Gray images are returned as is.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Replicates a gray image into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    fn from_dynamic(img: DynamicImage) -> Image {
        let (width, height) = (img.width(), img.height());
        let color = img.color();
        let (channels, data) = if color.has_alpha() {
            if color.has_color() {
                let rgba = img.into_rgba8();
                let data = rgba
                    .as_raw()
                    .chunks_exact(4)
                    .flat_map(|p| {
                        let a = p[3] as u32;
                        [0, 1, 2].map(|c| ((p[c] as u32 * a + 127) / 255) as u8)
                    })
                    .collect();
                (3, data)
            } else {
                let la = img.into_luma_alpha8();
                let data = la
                    .as_raw()
                    .chunks_exact(2)
                    .map(|p| ((p[0] as u32 * p[1] as u32 + 127) / 255) as u8)
                    .collect();
                (1, data)
            }
        } else if color.has_color() {
            (3, img.into_rgb8().into_raw())
        } else {
            (1, img.into_luma8().into_raw())
        };
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    fn codec_buffer(&self) -> DynamicImage {
        match self.channels {
            1 => DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(self.width, self.height, self.data.clone())
                    .expect("buffer size checked at construction"),
            ),
            _ => DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                    .expect("buffer size checked at construction"),
            ),
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.codec_buffer()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Image, ImageError> {
        let reader = ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|source| ImageError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        if reader.format().is_none() {
            return Err(ImageError::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "unrecognized signature".into(),
            });
        }
        let img = reader.decode().map_err(|e| map_codec_error(e, path))?;
        Ok(Image::from_dynamic(img))
    }
}

fn map_codec_error(e: CodecError, path: &Path) -> ImageError {
    let path = path.to_path_buf();
    match e {
        CodecError::Unsupported(u) => ImageError::UnsupportedFormat {
            path,
            reason: u.to_string(),
        },
        CodecError::IoError(source) => ImageError::Io { path, source },
        other => ImageError::CorruptData {
            path,
            reason: other.to_string(),
        },
    }
}

/// Decodes PNG, BMP or JPEG. Alpha is composited over black.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ImageError::FileNotFound(path.to_path_buf())
        } else {
            ImageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    Image::decode(&bytes, path)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    crate::write_bytes(path, &img.encode_png()).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Source coordinate of destination sample `i` under the pixel-center convention.
#[inline]
fn source_coord(i: u32, src: u32, dst: u32) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

#[inline]
pub(crate) fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn resize(img: &Image, width: u32, height: u32, method: InterpMethod) -> Result<Image, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::InvalidDimensions { width, height });
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels as usize;
    let mut data = Vec::with_capacity(width as usize * height as usize * ch);
    match method {
        InterpMethod::Nearest => {
            let xs: Vec<u32> = (0..width)
                .map(|x| nearest_index(x, img.width, width))
                .collect();
            for y in 0..height {
                let sy = nearest_index(y, img.height, height);
                for &sx in &xs {
                    let base = img.index(sx, sy, 0);
                    data.extend_from_slice(&img.data[base..base + ch]);
                }
            }
        }
        InterpMethod::Bilinear => {
            let xs: Vec<(u32, u32, f64)> = (0..width)
                .map(|x| lerp_taps(source_coord(x, img.width, width), img.width))
                .collect();
            for y in 0..height {
                let (y0, y1, fy) = lerp_taps(source_coord(y, img.height, height), img.height);
                for &(x0, x1, fx) in &xs {
                    for c in 0..ch as u8 {
                        let top = img.get(x0, y0, c) as f64 * (1.0 - fx) + img.get(x1, y0, c) as f64 * fx;
                        let bot = img.get(x0, y1, c) as f64 * (1.0 - fx) + img.get(x1, y1, c) as f64 * fx;
                        data.push(clamp_u8(top * (1.0 - fy) + bot * fy));
                    }
                }
            }
        }
    }
    Image::new(width, height, img.channels, data)
}

fn nearest_index(i: u32, src: u32, dst: u32) -> u32 {
    let s = ((i as f64 + 0.5) * src as f64 / dst as f64).floor();
    (s as u32).min(src - 1)
}

/// Clamped bilinear taps along one axis.
fn lerp_taps(s: f64, len: u32) -> (u32, u32, f64) {
    let s = s.clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as u32;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

/// Converts to a `[channels, height, width]` tensor of `(sample - mean_c) / scale_c`.
pub fn to_tensor(img: &Image, mean: &[f32], scale: &[f32]) -> Result<Tensor<f32>, ImageError> {
    let ch = img.channels as usize;
    for len in [mean.len(), scale.len()] {
        if len != ch {
            return Err(ImageError::ChannelMismatch {
                expected: ch,
                actual: len,
            });
        }
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let mut out = vec![0f32; ch * w * h];
    for (p, px) in img.data.chunks_exact(ch).enumerate() {
        for c in 0..ch {
            out[c * w * h + p] = (px[c] as f32 - mean[c]) / scale[c];
        }
    }
    Ok(Tensor::from_vec(&[ch, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image() -> impl Strategy<Value = Image> {
        (1u32..9, 1u32..9, prop_oneof![Just(1u8), Just(3u8)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), (w * h * c as u32) as usize)
                .prop_map(move |d| Image::new(w, h, c, d).unwrap())
        })
    }

    /// Per-pixel nearest oracle written directly from the pixel-center rule.
    fn nearest_oracle(src: &[u8], dst_len: usize) -> Vec<u8> {
        (0..dst_len)
            .map(|i| {
                let center = (i as f64 + 0.5) / dst_len as f64; // normalized
                let idx = (center * src.len() as f64) as usize;
                src[idx.min(src.len() - 1)]
            })
            .collect()
    }

    #[test]
    fn nearest_upsample_uses_pixel_centers() {
        let img = Image::new(2, 1, 1, vec![0, 255]).unwrap();
        let out = resize(&img, 4, 1, InterpMethod::Nearest).unwrap();
        assert_eq!(out.data(), &[0, 0, 255, 255]);
        assert_eq!(out.data(), nearest_oracle(&[0, 255], 4).as_slice());
    }

    #[test]
    fn identity_and_constant_resize() {
        let img = Image::new(4, 4, 1, (0..16).map(|v| v * 13).collect()).unwrap();
        assert_eq!(resize(&img, 4, 4, InterpMethod::Bilinear).unwrap(), img);
        let gray = Image::filled(8, 8, &[77]).unwrap();
        let small = resize(&gray, 2, 2, InterpMethod::Bilinear).unwrap();
        assert_eq!(small, Image::filled(2, 2, &[77]).unwrap());
        assert!(matches!(
            resize(&img, 0, 3, InterpMethod::Nearest),
            Err(ImageError::InvalidDimensions { .. })
        ));
    }

    #[test]
    fn tensor_conversion() {
        let img = Image::new(1, 1, 1, vec![128]).unwrap();
        let t = to_tensor(&img, &[0.0], &[255.0]).unwrap();
        assert!((t.data()[0] - 0.50196).abs() < 1e-5);
        let rgb = Image::new(1, 1, 3, vec![255, 0, 255]).unwrap();
        let t = to_tensor(&rgb, &[127.5; 3], &[127.5; 3]).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data(), &[1.0, -1.0, 1.0]);
        assert!(matches!(
            to_tensor(&rgb, &[0.0], &[1.0; 3]),
            Err(ImageError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn grayscale_uses_bt601() {
        let img = Image::new(2, 1, 3, vec![255, 0, 0, 10, 200, 30]).unwrap();
        let g = img.to_grayscale();
        // 0.299*255 = 76.245; 0.299*10 + 0.587*200 + 0.114*30 = 123.81
        assert_eq!(g.data(), &[76, 124]);
    }

    #[test]
    fn missing_file_is_reported_with_path() {
        let err = load_image("/definitely/not/here.png").unwrap_err();
        assert!(matches!(err, ImageError::FileNotFound(p) if p.ends_with("here.png")));
    }

    proptest! {
        #[test]
        fn resize_preserves_channels(img in arb_image(), w in 1u32..12, h in 1u32..12, nearest in any::<bool>()) {
            let m = if nearest { InterpMethod::Nearest } else { InterpMethod::Bilinear };
            let out = resize(&img, w, h, m).unwrap();
            prop_assert_eq!(out.channels(), img.channels());
            prop_assert_eq!(out.data().len(), (w * h * img.channels() as u32) as usize);
        }

        #[test]
        fn to_tensor_is_affine(img in arb_image()) {
            let c = img.channels() as usize;
            let mean = vec![100.0f32; c];
            let scale = vec![37.0f32; c];
            let t = to_tensor(&img, &mean, &scale).unwrap();
            let (w, h) = (img.width() as usize, img.height() as usize);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = t.data()[ch * w * h + y * w + x] * 37.0 + 100.0;
                        let orig = img.get(x as u32, y as u32, ch as u8) as f32;
                        prop_assert!((v - orig).abs() <= 0.5);
                    }
                }
            }
        }

        #[test]
        fn png_round_trip_is_idempotent(img in arb_image()) {
            let bytes = img.encode_png();
            let back = Image::decode(&bytes, Path::new("mem.png")).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(back.encode_png(), bytes);
        }
    }
}
