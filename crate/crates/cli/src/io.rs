//! File-format glue: rasters (PNG, PFM, tensor files), grids, JSON and sky
//! panoramas.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use voxsplat::raster_tensor::{DType, RasterTensor};
use voxsplat::sky::{SkyHeader, SkyPanorama};
use voxsplat::{sparse_grid, Raster, SparseVoxelGrid};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Either one value or a list of them.
pub fn read_json_list<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let value: serde_json::Value = read_json(path)?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|one| vec![one])
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

pub fn read_grid(path: &Path) -> Result<SparseVoxelGrid> {
    sparse_grid::deserialize(&read_bytes(path)?).with_context(|| format!("decoding grid {}", path.display()))
}

pub fn write_grid(path: &Path, grid: &SparseVoxelGrid) -> Result<()> {
    write_bytes(path, &sparse_grid::serialize(grid))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

fn tensor_to_raster(t: RasterTensor, path: &Path) -> Result<Raster> {
    let (h, w, c) = match *t.shape() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        ref s => bail!("{}: expected a [H, W] or [H, W, C] tensor, got shape {s:?}", path.display()),
    };
    Ok(Raster::from_vec(w, h, c, t.into_data())?)
}

fn raster_to_tensor(r: &Raster) -> Result<RasterTensor> {
    Ok(RasterTensor::new(
        DType::F64,
        vec![r.height(), r.width(), r.channels()],
        r.data().to_vec(),
    )?)
}

/// Loads a raster, keeping its channel count. PNGs are read as RGB with
/// values in `[0, 1]`.
pub fn read_raster(path: &Path) -> Result<Raster> {
    match extension(path).as_str() {
        "pfm" => Ok(Raster::from_pfm(&read_bytes(path)?).with_context(|| format!("decoding {}", path.display()))?),
        "rtns" => tensor_to_raster(
            RasterTensor::from_bytes(&read_bytes(path)?).with_context(|| format!("decoding {}", path.display()))?,
            path,
        ),
        _ => {
            let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
            let rgb = img.to_rgb32f();
            let (w, h) = rgb.dimensions();
            Ok(Raster::from_vec(w as usize, h as usize, 3, rgb.into_raw().into_iter().map(f64::from).collect())?)
        }
    }
}

/// Loads a single-channel raster. PNGs are converted to luminance; for
/// multi-channel float files the first channel is used.
pub fn read_mask(path: &Path) -> Result<Raster> {
    match extension(path).as_str() {
        "pfm" | "rtns" => Ok(read_raster(path)?.channel(0)),
        _ => {
            let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
            let luma = img.to_luma32f();
            let (w, h) = luma.dimensions();
            Ok(Raster::from_vec(w as usize, h as usize, 1, luma.into_raw().into_iter().map(f64::from).collect())?)
        }
    }
}

/// Writes by extension: `.png` (8-bit, clamped to `[0, 1]`), `.pfm` or
/// `.rtns`.
pub fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    match extension(path).as_str() {
        "png" => {
            let color = match r.channels() {
                1 => image::ColorType::L8,
                3 => image::ColorType::Rgb8,
                4 => image::ColorType::Rgba8,
                c => bail!("{}: PNG output needs 1, 3 or 4 channels, raster has {c}", path.display()),
            };
            let bytes: Vec<u8> = r.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            image::save_buffer_with_format(
                path,
                &bytes,
                r.width() as u32,
                r.height() as u32,
                color,
                image::ImageFormat::Png,
            )
            .with_context(|| format!("writing {}", path.display()))
        }
        "pfm" => write_bytes(path, &r.to_pfm()?),
        "rtns" => write_bytes(path, &raster_to_tensor(r)?.to_bytes()),
        other => bail!("{}: unsupported output extension {other:?} (use png, pfm or rtns)", path.display()),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// A panorama is three files: the raster at `path` (PFM for 1 or 3
/// channels, tensor file otherwise), a JSON header at `path.json` and the
/// coverage mask at `path.coverage.pfm`.
pub fn write_panorama(path: &Path, pano: &SkyPanorama) -> Result<()> {
    let data = match pano.channels() {
        1 | 3 => pano.data().to_pfm()?,
        _ => raster_to_tensor(pano.data())?.to_bytes(),
    };
    write_bytes(path, &data)?;
    write_bytes(&sidecar(path, ".json"), serde_json::to_string_pretty(&pano.header())?.as_bytes())?;
    write_bytes(&sidecar(path, ".coverage.pfm"), &pano.coverage_raster().to_pfm()?)
}

pub fn read_panorama(path: &Path) -> Result<SkyPanorama> {
    let header: SkyHeader = read_json(&sidecar(path, ".json"))?;
    let bytes = read_bytes(path)?;
    let data = if bytes.starts_with(voxsplat::raster_tensor::MAGIC) {
        tensor_to_raster(RasterTensor::from_bytes(&bytes)?, path)?
    } else {
        Raster::from_pfm(&bytes).with_context(|| format!("decoding {}", path.display()))?
    };
    let coverage = Raster::from_pfm(&read_bytes(&sidecar(path, ".coverage.pfm"))?)?;
    let pano = SkyPanorama::from_parts(data, coverage.data().iter().map(|&v| v > 0.5).collect())?;
    pano.check_header(&header)?;
    Ok(pano)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let r = Raster::from_vec(2, 1, 3, vec![0.0, 0.5, 1.0, 0.25, 2.0, -1.0]).unwrap();
        write_raster(&path, &r).unwrap();
        let back = read_raster(&path).unwrap();
        let expect = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0, 1.0, 0.0];
        for (a, b) in back.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn panorama_round_trip_keeps_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sky.pfm");
        let data = Raster::from_vec(4, 2, 3, (0..24).map(|v| v as f64 / 24.0).collect()).unwrap();
        let coverage: Vec<bool> = (0..8).map(|i| i % 3 != 0).collect();
        let pano = SkyPanorama::from_parts(data, coverage.clone()).unwrap();
        write_panorama(&path, &pano).unwrap();
        let back = read_panorama(&path).unwrap();
        assert_eq!(back.coverage(), coverage.as_slice());
        for (a, b) in back.data().data().iter().zip(pano.data().data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn wide_panoramas_use_tensor_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.pano");
        let pano = SkyPanorama::constant(4, 2, &[0.25; 5]).unwrap();
        write_panorama(&path, &pano).unwrap();
        assert_eq!(read_panorama(&path).unwrap(), pano);
    }
}
