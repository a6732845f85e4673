//! Dense row-major `H × W × C` images of `f64` and the PFM float-map format.

use std::io::Write;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Raster whose every pixel equals `pixel`.
    pub fn constant(width: usize, height: usize, pixel: &[f64]) -> Self {
        let mut data = Vec::with_capacity(width * height * pixel.len());
        for _ in 0..width * height {
            data.extend_from_slice(pixel);
        }
        Self {
            width,
            height,
            channels: pixel.len(),
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid_argument(format!(
                "raster data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Single channel extracted as a 1-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Encodes as PFM. Only 1- and 3-channel rasters are representable.
    /// Values are stored as little-endian `f32`, rows bottom to top.
    pub fn to_pfm(&self) -> Result<Vec<u8>> {
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => {
                return Err(Error::invalid_argument(format!(
                    "PFM supports 1 or 3 channels, raster has {c}"
                )))
            }
        };
        let mut out = Vec::with_capacity(32 + self.data.len() * 4);
        write!(out, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let row_len = self.width * self.channels;
        for y in (0..self.height).rev() {
            for v in &self.data[y * row_len..(y + 1) * row_len] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Raster> {
        let mut pos = 0usize;
        let mut token = |what: &str| -> Result<String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse(start, format!("missing PFM {what}")));
            }
            let tok = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
            Ok(tok)
        };
        let channels = match token("magic")?.as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(Error::parse(0, format!("bad PFM magic {other:?}"))),
        };
        let width: usize = token("width")?
            .parse()
            .map_err(|_| Error::parse(0, "PFM width is not an integer"))?;
        let height: usize = token("height")?
            .parse()
            .map_err(|_| Error::parse(0, "PFM height is not an integer"))?;
        let scale: f64 = token("scale")?
            .parse()
            .map_err(|_| Error::parse(0, "PFM scale is not a number"))?;
        // exactly one whitespace byte separates the header from the payload
        let data_start = pos + 1;
        let little = scale < 0.0;
        let count = width * height * channels;
        let needed = data_start + count * 4;
        if bytes.len() < needed {
            return Err(Error::parse(
                bytes.len(),
                format!("PFM payload truncated: need {needed} bytes"),
            ));
        }
        let mut data = vec![0.0; count];
        let row_len = width * channels;
        for (k, chunk) in bytes[data_start..needed].chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let file_row = k / row_len;
            let y = height - 1 - file_row;
            data[y * row_len + k % row_len] = v as f64;
        }
        Raster::from_vec(width, height, channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_preserves_f32_values() {
        let mut r = Raster::new(3, 2, 3);
        for (i, v) in r.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.25 - 1.0;
        }
        let back = Raster::from_pfm(&r.to_pfm().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn pfm_rejects_two_channels() {
        assert!(Raster::new(2, 2, 2).to_pfm().is_err());
    }

    #[test]
    fn pfm_truncated_is_parse_error() {
        let bytes = Raster::new(4, 4, 1).to_pfm().unwrap();
        let err = Raster::from_pfm(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn channel_extraction() {
        let r = Raster::constant(2, 2, &[1.0, 2.0, 3.0]);
        assert!(r.channel(1).data().iter().all(|&v| v == 2.0));
    }
}
