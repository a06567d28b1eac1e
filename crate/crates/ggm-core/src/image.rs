//! Binary images with exact equality, bitwise algebra, and the
//! differing-pixel norm used throughout the certificates.
//!
//! Bits are packed row-major into `u64` words. Equality and hashing are
//! bit-exact over the packed array.

use std::fmt;
use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitImage {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl BitImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0u64; bits.div_ceil(64)],
        }
    }

    pub fn ones(width: u32, height: u32) -> Self {
        let mut img = Self::zeros(width, height);
        for w in &mut img.words {
            *w = u64::MAX;
        }
        img.mask_tail();
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    fn index(&self, col: u32, row: u32) -> usize {
        debug_assert!(col < self.width && row < self.height);
        row as usize * self.width as usize + col as usize
    }

    /// Reads the bit at 0-based (col, row).
    #[inline]
    pub fn get(&self, col: u32, row: u32) -> bool {
        let i = self.index(col, row);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        let i = self.index(col, row);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Zeroes the unused bits of the last word so packed comparisons and
    /// popcounts stay exact.
    fn mask_tail(&mut self) {
        let bits = self.pixel_count();
        let rem = bits % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of differing pixels between two same-sized images.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Image norm: sqrt of the number of set pixels.
    pub fn norm(&self) -> f64 {
        (self.count_ones() as f64).sqrt()
    }

    /// Image distance: sqrt of the number of differing pixels.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        Ok((self.hamming(other)? as f64).sqrt())
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    fn zip_words(&self, other: &Self, op: impl Fn(u64, u64) -> u64) -> Result<Self> {
        self.check_dims(other)?;
        let mut out = Self {
            width: self.width,
            height: self.height,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| op(*a, *b))
                .collect(),
        };
        out.mask_tail();
        Ok(out)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_words(other, |a, b| a | b)
    }

    /// Pixelwise AND; also the Hadamard product of binary images.
    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        self.zip_words(other, |a, b| a ^ b)
    }

    pub fn not(&self) -> Self {
        let mut out = Self {
            width: self.width,
            height: self.height,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.mask_tail();
        out
    }

    pub fn or_assign(&mut self, other: &Self) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
        Ok(())
    }

    /// Pixelwise `self <= other`.
    pub fn dominated_by(&self, other: &Self) -> Result<bool> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0))
    }

    /// 128-bit content hash of (dimensions, packed bits).
    pub fn hash128(&self) -> [u8; 16] {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        for w in &self.words {
            hasher.update(w.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        out
    }

    /// Serializes to the raw archive format: `width: u32 LE`, `height: u32
    /// LE`, then row-major bits packed LSB-first into bytes.
    pub fn write_packed<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let bits = self.pixel_count();
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        for i in 0..bits {
            if (self.words[i / 64] >> (i % 64)) & 1 == 1 {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_packed<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        let width = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if width == 0 || height == 0 || width as u64 * height as u64 > (1 << 34) {
            return Err(Error::ImageFormat(format!("implausible size {width}x{height}")));
        }
        let bits = width as usize * height as usize;
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let mut img = Self::zeros(width, height);
        for i in 0..bits {
            if (bytes[i / 8] >> (i % 8)) & 1 == 1 {
                img.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(img)
    }

    /// Exports PBM (P4): rows padded to full bytes, MSB-first, 1 = black.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P4\n{} {}\n", self.width, self.height)?;
        let row_bytes = (self.width as usize).div_ceil(8);
        let mut row = vec![0u8; row_bytes];
        for y in 0..self.height {
            row.iter_mut().for_each(|b| *b = 0);
            for x in 0..self.width {
                if self.get(x, y) {
                    row[x as usize / 8] |= 0x80 >> (x % 8);
                }
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn read_pbm<R: Read>(mut r: R) -> Result<Self> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if !data.starts_with(b"P4") {
            return Err(Error::ImageFormat("not a P4 PBM".into()));
        }
        // Header: magic, whitespace-separated width and height, single
        // whitespace byte, then raster.
        let mut pos = 2;
        let mut fields = Vec::new();
        while fields.len() < 2 && pos < data.len() {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < data.len() && data[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::ImageFormat("bad PBM header".into()));
            }
            fields.push(std::str::from_utf8(&data[start..pos]).unwrap().to_string());
        }
        if fields.len() != 2 || pos >= data.len() {
            return Err(Error::ImageFormat("truncated PBM header".into()));
        }
        pos += 1; // single whitespace after height
        let width: u32 = fields[0].parse().map_err(|_| Error::ImageFormat("bad width".into()))?;
        let height: u32 = fields[1].parse().map_err(|_| Error::ImageFormat("bad height".into()))?;
        let row_bytes = (width as usize).div_ceil(8);
        if data.len() < pos + row_bytes * height as usize {
            return Err(Error::ImageFormat("truncated PBM raster".into()));
        }
        let mut img = Self::zeros(width, height);
        for y in 0..height {
            let row = &data[pos + y as usize * row_bytes..pos + (y as usize + 1) * row_bytes];
            for x in 0..width {
                if (row[x as usize / 8] >> (7 - x % 8)) & 1 == 1 {
                    img.set(x, y, true);
                }
            }
        }
        Ok(img)
    }
}

impl fmt::Debug for BitImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BitImage({}x{}, {} set)",
            self.width,
            self.height,
            self.count_ones()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_image(width: u32, height: u32, seed: u64) -> BitImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = BitImage::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, rng.gen_bool(0.5));
            }
        }
        img
    }

    #[test]
    fn set_get_roundtrip_and_counts() {
        let mut img = BitImage::zeros(10, 7);
        img.set(0, 0, true);
        img.set(9, 6, true);
        img.set(3, 4, true);
        assert!(img.get(0, 0) && img.get(9, 6) && img.get(3, 4));
        assert!(!img.get(1, 0));
        assert_eq!(img.count_ones(), 3);
        assert_eq!(img.norm(), 3f64.sqrt());
    }

    #[test]
    fn ones_tail_is_masked() {
        let img = BitImage::ones(13, 5);
        assert_eq!(img.count_ones(), 65);
        assert_eq!(img.not().count_ones(), 0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = BitImage::zeros(4, 4);
        let b = BitImage::zeros(5, 4);
        assert!(matches!(a.or(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn packed_roundtrip() {
        let img = random_image(37, 21, 99);
        let mut buf = Vec::new();
        img.write_packed(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + (37 * 21usize).div_ceil(8));
        let back = BitImage::read_packed(&buf[..]).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pbm_roundtrip() {
        let img = random_image(13, 9, 5);
        let mut buf = Vec::new();
        img.write_pbm(&mut buf).unwrap();
        let back = BitImage::read_pbm(&buf[..]).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn hash_distinguishes_content_and_dims() {
        let a = random_image(16, 16, 1);
        let mut b = a.clone();
        assert_eq!(a.hash128(), b.hash128());
        b.set(5, 5, !b.get(5, 5));
        assert_ne!(a.hash128(), b.hash128());
        let tall = BitImage::zeros(4, 8);
        let wide = BitImage::zeros(8, 4);
        assert_ne!(tall.hash128(), wide.hash128());
    }

    proptest! {
        #[test]
        fn xor_distance_is_symmetric_and_zero_iff_equal(seed_a in 0u64..500, seed_b in 0u64..500) {
            let a = random_image(24, 18, seed_a);
            let b = random_image(24, 18, seed_b);
            prop_assert_eq!(a.hamming(&b).unwrap(), b.hamming(&a).unwrap());
            prop_assert_eq!(a.hamming(&b).unwrap() == 0, a == b);
        }

        #[test]
        fn packed_roundtrip_random(seed in 0u64..200, w in 1u32..70, h in 1u32..40) {
            let img = random_image(w, h, seed);
            let mut buf = Vec::new();
            img.write_packed(&mut buf).unwrap();
            prop_assert_eq!(BitImage::read_packed(&buf[..]).unwrap(), img);
        }
    }
}
