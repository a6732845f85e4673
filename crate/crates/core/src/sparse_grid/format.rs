//! `.svg2` binary grid format, all fields little-endian:
//!
//! ```text
//! magic        4 bytes  "SVG2"
//! version      u32      1
//! voxel_size   f64
//! origin       3 × f64
//! n_channels   u32
//!   name_len   u32, name (UTF-8), width u32      (per channel)
//! count        u64
//! coords       count × (i32, i32, i32), strictly ascending
//! channels     per channel: count × width × f64, voxel-major
//! ```
//!
//! The grid extent is not part of the format.

use super::{is_known_channel, Channel, ChannelSpec, GridMeta, SparseVoxelGrid, VoxelCoord};
use crate::{Error, Result, Vec3};

pub const MAGIC: &[u8; 4] = b"SVG2";
pub const VERSION: u32 = 1;

pub fn serialize(grid: &SparseVoxelGrid) -> Vec<u8> {
    let n = grid.len();
    let payload: usize = grid.channels().iter().map(|c| c.width() * n * 8).sum();
    let mut out = Vec::with_capacity(64 + n * 12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = grid.meta();
    out.extend_from_slice(&meta.voxel_size.to_le_bytes());
    for a in 0..3 {
        out.extend_from_slice(&meta.origin[a].to_le_bytes());
    }
    out.extend_from_slice(&(grid.channels().len() as u32).to_le_bytes());
    for ch in grid.channels() {
        out.extend_from_slice(&(ch.name().len() as u32).to_le_bytes());
        out.extend_from_slice(ch.name().as_bytes());
        out.extend_from_slice(&(ch.width() as u32).to_le_bytes());
    }
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for c in grid.coords() {
        for v in c.as_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for ch in grid.channels() {
        for v in ch.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(
                self.pos,
                format!("truncated while reading {what}"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<SparseVoxelGrid> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, not an SVG2 grid"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let size_at = r.pos;
    let voxel_size = r.f64("voxel size")?;
    let origin = Vec3::new(r.f64("origin")?, r.f64("origin")?, r.f64("origin")?);
    let meta = GridMeta::new(origin, voxel_size)
        .map_err(|e| Error::parse(size_at, format!("invalid grid meta: {e}")))?;

    let n_channels = r.u32("channel count")? as usize;
    let mut specs = Vec::with_capacity(n_channels.min(64));
    for _ in 0..n_channels {
        let at = r.pos;
        let len = r.u32("channel name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "channel name")?)
            .map_err(|_| Error::parse(at + 4, "channel name is not UTF-8"))?
            .to_owned();
        if !is_known_channel(&name) {
            return Err(Error::parse(at, format!("unknown channel '{name}'")));
        }
        if specs.iter().any(|s: &ChannelSpec| s.name() == name) {
            return Err(Error::parse(at, format!("duplicate channel '{name}'")));
        }
        let width = r.u32("channel width")? as usize;
        let spec = ChannelSpec::new(name, width).map_err(|e| Error::parse(at, e.to_string()))?;
        specs.push(spec);
    }

    let count_at = r.pos;
    let count = usize::try_from(r.u64("voxel count")?)
        .map_err(|_| Error::parse(count_at, "voxel count overflows"))?;
    let remaining = bytes.len() - r.pos;
    let per_voxel = 12 + specs.iter().map(|s| s.width() * 8).sum::<usize>();
    if count.checked_mul(per_voxel).map_or(true, |need| need > remaining) {
        return Err(Error::parse(
            count_at,
            format!("truncated payload: {count} voxels need {per_voxel} bytes each, {remaining} bytes present"),
        ));
    }

    let mut coords = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let c = VoxelCoord::new(r.i32("coord")?, r.i32("coord")?, r.i32("coord")?);
        if coords.last().is_some_and(|&prev| prev >= c) {
            return Err(Error::parse(at, "coordinates are not strictly ascending"));
        }
        coords.push(c);
    }
    let mut channels = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut data = Vec::with_capacity(count * spec.width());
        for _ in 0..count * spec.width() {
            data.push(r.f64("channel data")?);
        }
        channels.push(Channel { spec, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after grid payload"));
    }
    Ok(SparseVoxelGrid::from_sorted_parts(meta, coords, channels))
}

#[cfg(test)]
mod tests {
    use super::super::{GridBuilder, FEATURE_CHANNEL, SEMANTIC_CHANNEL};
    use super::*;

    fn sample() -> SparseVoxelGrid {
        let meta = GridMeta::new(Vec3::new(-1.5, 2.0, 0.25), 0.1).unwrap();
        let mut b = GridBuilder::new(
            meta,
            vec![
                ChannelSpec::new(SEMANTIC_CHANNEL, 2).unwrap(),
                ChannelSpec::new(FEATURE_CHANNEL, 3).unwrap(),
            ],
        )
        .unwrap();
        b.insert(VoxelCoord::new(3, -2, 7), &[&[0.0, 1.0], &[0.1, -0.0, f64::MIN_POSITIVE]]).unwrap();
        b.insert(VoxelCoord::new(-8, 0, 1), &[&[1.0, 0.0], &[1e300, 2.5, -7.0]]).unwrap();
        b.build()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = sample();
        let bytes = serialize(&g);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(serialize(&back), bytes);
    }

    #[test]
    fn empty_round_trip() {
        let g = SparseVoxelGrid::empty(GridMeta::new(Vec3::zeros(), 0.4).unwrap());
        assert_eq!(deserialize(&serialize(&g)).unwrap(), g);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = serialize(&sample());
        bytes[0] = b'X';
        assert!(matches!(deserialize(&bytes), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = serialize(&sample());
        for cut in [3, 10, 40, bytes.len() - 1] {
            match deserialize(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_channel_is_rejected() {
        let mut bytes = serialize(&sample());
        let name_at = bytes.windows(SEMANTIC_CHANNEL.len()).position(|w| w == SEMANTIC_CHANNEL.as_bytes()).unwrap();
        bytes[name_at] = b'Z';
        let err = deserialize(&bytes).unwrap_err();
        assert!(err.to_string().contains("unknown channel"), "{err}");
    }
}
