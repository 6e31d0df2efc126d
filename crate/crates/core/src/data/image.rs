//! 8-bit grayscale images and their binary portable graymap container.
//!
//! One file per frame, written as `P5` with a 255 maxval: a trivially
//! diffable, language-agnostic format that round-trips bit-exactly.

use crate::error::Error;
use crate::nn::Scalar;
use std::fs;
use std::path::Path;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Image, Error> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::invalid(
                "image",
                format!(
                    "{} pixels do not fill {width}x{height}",
                    pixels.len()
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Image {
        Image {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Horizontally mirrored copy (left-right flip).
    pub fn mirrored(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width) {
            pixels.extend(row.iter().rev());
        }
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Pixels as network-input scalars in [0, 1].
    pub fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        self.pixels
            .iter()
            .map(|&v| T::from_f64(v as f64 / 255.0))
            .collect()
    }

    /// Quantizes a [0, 1] float plane back to 8 bits, clamping out-of-range
    /// values.
    pub fn from_plane(width: usize, height: usize, plane: &[f64]) -> Result<Image, Error> {
        if plane.len() != width * height {
            return Err(Error::invalid("image", "plane size mismatch"));
        }
        let pixels = plane
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Image::new(width, height, pixels)
    }

    /// Writes the image as a binary portable graymap.
    pub fn write_pgm(&self, path: &Path) -> Result<(), Error> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.pixels);
        fs::write(path, bytes).map_err(|e| Error::Write {
            path: path.to_path_buf(),
            why: e.to_string(),
        })
    }

    /// Reads a binary portable graymap with a 255 maxval.
    pub fn read_pgm(path: &Path) -> Result<Image, Error> {
        let bytes = fs::read(path).map_err(|e| Error::Read {
            path: path.to_path_buf(),
            why: e.to_string(),
        })?;
        let fail = |why: &str| Error::Read {
            path: path.to_path_buf(),
            why: why.to_string(),
        };
        let mut pos = 0usize;
        let mut token = |bytes: &[u8]| -> Result<String, Error> {
            while pos < bytes.len() {
                match bytes[pos] {
                    b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Read {
                    path: path.to_path_buf(),
                    why: "truncated header".to_string(),
                });
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token(&bytes)? != "P5" {
            return Err(fail("not a binary graymap"));
        }
        let width: usize = token(&bytes)?.parse().map_err(|_| fail("bad width"))?;
        let height: usize = token(&bytes)?.parse().map_err(|_| fail("bad height"))?;
        if token(&bytes)? != "255" {
            return Err(fail("maxval must be 255"));
        }
        // Exactly one whitespace byte separates the header from the data.
        pos += 1;
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| fail("image dimensions overflow"))?;
        let data = bytes.get(pos..).unwrap_or(&[]);
        if data.len() != expected {
            return Err(fail(&format!(
                "payload holds {} bytes, expected {expected}",
                data.len()
            )));
        }
        Image::new(width, height, data.to_vec())
    }
}
