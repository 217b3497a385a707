//! Grayscale images, binary planes, and the PGM (P2/P5) codec.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, PgmError, Result};

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Applies `f` to every intensity.
    pub fn map(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Central region with `border` pixels removed from every side.
    pub fn crop(&self, border: usize) -> Result<Self> {
        let data = crop_buffer(&self.data, self.width, self.height, border)?;
        Ok(Self {
            width: self.width - 2 * border,
            height: self.height - 2 * border,
            data,
        })
    }
}

/// A single row-major binary image with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryPlane {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryPlane {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} plane needs {} bits, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(Error::InvalidArgument(format!(
                "plane bit {index} has value {value}, expected 0 or 1"
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub(crate) fn from_bits_unchecked(width: usize, height: usize, bits: Vec<u8>) -> Self {
        debug_assert_eq!(bits.len(), width * height);
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    /// Fraction of ones.
    pub fn density(&self) -> f64 {
        let ones: usize = self.bits.iter().map(|&b| b as usize).sum();
        ones as f64 / self.bits.len() as f64
    }

    pub fn crop(&self, border: usize) -> Result<Self> {
        let bits = crop_buffer(&self.bits, self.width, self.height, border)?;
        Ok(Self {
            width: self.width - 2 * border,
            height: self.height - 2 * border,
            bits,
        })
    }
}

pub(crate) fn crop_buffer<T: Copy>(
    data: &[T],
    width: usize,
    height: usize,
    border: usize,
) -> Result<Vec<T>> {
    if 2 * border >= width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "border {border} too large for {width}x{height}"
        )));
    }
    let new_w = width - 2 * border;
    let mut out = Vec::with_capacity(new_w * (height - 2 * border));
    for row in border..height - border {
        let start = row * width + border;
        out.extend_from_slice(&data[start..start + new_w]);
    }
    Ok(out)
}

/// Maps 1 to 255 and 0 to 0.
pub fn plane_to_image(plane: &BinaryPlane) -> GrayImage {
    GrayImage {
        width: plane.width,
        height: plane.height,
        data: plane.bits.iter().map(|&b| b * 255).collect(),
    }
}

/// Inverse of [`plane_to_image`]; rejects anything other than 0 and 255.
pub fn image_to_plane(img: &GrayImage) -> Result<BinaryPlane> {
    let bits = img
        .data
        .iter()
        .enumerate()
        .map(|(index, &value)| match value {
            0 => Ok(0),
            255 => Ok(1),
            _ => Err(Error::NotBinary { index, value }),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(BinaryPlane::from_bits_unchecked(img.width, img.height, bits))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> std::result::Result<u32, PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::MalformedHeader(format!("expected {what}")));
        }
        if self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            return Err(PgmError::MalformedHeader(format!(
                "unexpected byte after {what}"
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::MalformedHeader(format!("{what} out of range")))
    }
}

/// Parses a binary (P5) or ASCII (P2) graymap with maxval at most 255.
///
/// Intensities are returned exactly as stored; no rescaling is applied for
/// maxval below 255.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let ascii = match bytes.get(..2) {
        Some(b"P5") => false,
        Some(b"P2") => true,
        _ => return Err(PgmError::BadMagic.into()),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.next_uint("width")? as usize;
    let height = cur.next_uint("height")? as usize;
    let maxval = cur.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader(format!("zero dimension {width}x{height}")).into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::UnsupportedMaxval(maxval).into());
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::MalformedHeader("dimensions overflow".into()))?;

    let data = if ascii {
        let mut data = Vec::with_capacity(expected);
        for found in 0..expected {
            cur.skip_whitespace_and_comments();
            if cur.pos >= bytes.len() {
                return Err(PgmError::Truncated { expected, found }.into());
            }
            let value = cur.next_uint("sample")?;
            if value > maxval {
                return Err(PgmError::SampleOutOfRange { value, maxval }.into());
            }
            data.push(value as u8);
        }
        data
    } else {
        // exactly one whitespace byte separates maxval from the raster
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => {
                return Err(PgmError::Truncated {
                    expected,
                    found: 0,
                }
                .into())
            }
        }
        let raster = &bytes[cur.pos..];
        if raster.len() < expected {
            return Err(PgmError::Truncated {
                expected,
                found: raster.len(),
            }
            .into());
        }
        let raster = &raster[..expected];
        if let Some(&value) = raster.iter().find(|&&v| v as u32 > maxval) {
            return Err(PgmError::SampleOutOfRange {
                value: value as u32,
                maxval,
            }
            .into());
        }
        raster.to_vec()
    };
    GrayImage::new(width, height, data)
}

/// Encodes as binary P5 with maxval 255.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pgm(&bytes)
}

pub fn write_pgm_file(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    write_atomic(path, &write_pgm(img))
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
