//! Raster files.
//!
//! Layout: `CRRS`, u32 LE version, u64 LE header length, JSON header, a
//! row-major validity bitmask (bit `i % 8` of byte `i / 8`, padded to a whole
//! byte), then the payload.

use std::fs;
use std::path::Path;

use cropmap_core::raster::{GeoMetadata, MaskRaster, ProbabilityRaster, RasterStack};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 4] = b"CRRS";
pub const VERSION: u32 = 1;

const LAYOUT_STACK: &str = "row_col_time_feature";
const LAYOUT_PLANE: &str = "row_col";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

impl Dtype {
    fn size(self) -> u64 {
        match self {
            Dtype::F32Le => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub timesteps: usize,
    pub features: usize,
    pub dtype: Dtype,
    pub layout: String,
    #[serde(default)]
    pub geo: Option<GeoMetadata>,
}

/// What a raster file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterFile {
    Stack(RasterStack),
    Probability(ProbabilityRaster),
    Mask(MaskRaster),
}

fn pack_mask(valid: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; valid.len().div_ceil(8)];
    for (i, &v) in valid.iter().enumerate() {
        if v {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_mask(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

fn f32_bytes(values: &[f32]) -> impl Iterator<Item = u8> + '_ {
    values.iter().flat_map(|v| v.to_le_bytes())
}

fn encode(header: &RasterHeader, valid: &[bool], payload: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut body = pack_mask(valid);
    body.extend(payload);
    container::encode(MAGIC, VERSION, header, &body)
}

pub fn encode_stack(stack: &RasterStack) -> Vec<u8> {
    let header = RasterHeader {
        width: stack.width(),
        height: stack.height(),
        timesteps: stack.timesteps(),
        features: stack.features(),
        dtype: Dtype::F32Le,
        layout: LAYOUT_STACK.into(),
        geo: stack.geo.clone(),
    };
    encode(&header, stack.valid(), f32_bytes(stack.data()))
}

pub fn encode_probability(raster: &ProbabilityRaster) -> Vec<u8> {
    let header = RasterHeader {
        width: raster.width,
        height: raster.height,
        timesteps: 1,
        features: 1,
        dtype: Dtype::F32Le,
        layout: LAYOUT_PLANE.into(),
        geo: raster.geo.clone(),
    };
    encode(&header, &raster.valid, f32_bytes(&raster.values))
}

pub fn encode_mask(raster: &MaskRaster) -> Vec<u8> {
    let header = RasterHeader {
        width: raster.width,
        height: raster.height,
        timesteps: 1,
        features: 1,
        dtype: Dtype::U8,
        layout: LAYOUT_PLANE.into(),
        geo: raster.geo.clone(),
    };
    encode(&header, &raster.valid, raster.values.iter().copied())
}

fn dim_error(e: cropmap_core::Error) -> FormatError {
    FormatError::Dimension(e.to_string())
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterFile, FormatError> {
    let (h, body): (RasterHeader, _) = container::decode(bytes, MAGIC, VERSION)?;
    let prefix = (bytes.len() - body.len()) as u64;
    let overflow = || FormatError::Dimension(format!("{}×{}×{}×{} overflows", h.width, h.height, h.timesteps, h.features));
    let pixels = h.width.checked_mul(h.height).ok_or_else(overflow)?;
    let values = pixels
        .checked_mul(h.timesteps)
        .and_then(|v| v.checked_mul(h.features))
        .ok_or_else(overflow)?;
    let mask_len = pixels.div_ceil(8) as u64;
    let payload_len = (values as u64).checked_mul(h.dtype.size()).ok_or_else(overflow)?;
    container::check_body_len(body, mask_len.checked_add(payload_len).ok_or_else(overflow)?, prefix)?;
    let valid = unpack_mask(&body[..mask_len as usize], pixels);
    let payload = &body[mask_len as usize..];
    let floats = || -> Vec<f32> {
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
    };
    match (h.layout.as_str(), h.dtype) {
        (LAYOUT_STACK, Dtype::F32Le) => {
            let mut stack = RasterStack::new(h.width, h.height, h.timesteps, h.features, floats(), valid)
                .map_err(dim_error)?;
            stack.geo = h.geo;
            Ok(RasterFile::Stack(stack))
        }
        (LAYOUT_PLANE, Dtype::F32Le) if h.timesteps == 1 && h.features == 1 => {
            let mut r = ProbabilityRaster::new(h.width, h.height, floats(), valid).map_err(dim_error)?;
            r.geo = h.geo;
            Ok(RasterFile::Probability(r))
        }
        (LAYOUT_PLANE, Dtype::U8) if h.timesteps == 1 && h.features == 1 => Ok(RasterFile::Mask(MaskRaster {
            width: h.width,
            height: h.height,
            values: payload.to_vec(),
            valid,
            geo: h.geo,
        })),
        (layout, dtype) => Err(FormatError::Header(format!(
            "unsupported layout {layout:?} with dtype {dtype:?} and {}×{} planes",
            h.timesteps, h.features
        ))),
    }
}

fn read(path: &Path) -> Result<RasterFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes).map_err(|e| Error::format(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_stack(path: &Path, stack: &RasterStack) -> Result<()> {
    write(path, &encode_stack(stack))
}

pub fn write_probability(path: &Path, raster: &ProbabilityRaster) -> Result<()> {
    write(path, &encode_probability(raster))
}

pub fn write_mask(path: &Path, raster: &MaskRaster) -> Result<()> {
    write(path, &encode_mask(raster))
}

pub fn read_stack(path: &Path) -> Result<RasterStack> {
    match read(path)? {
        RasterFile::Stack(s) => Ok(s),
        _ => Err(Error::data(path, "expected a multi-temporal raster stack")),
    }
}

pub fn read_probability(path: &Path) -> Result<ProbabilityRaster> {
    match read(path)? {
        RasterFile::Probability(r) => Ok(r),
        _ => Err(Error::data(path, "expected a probability raster")),
    }
}

pub fn read_mask(path: &Path) -> Result<MaskRaster> {
    match read(path)? {
        RasterFile::Mask(r) => Ok(r),
        _ => Err(Error::data(path, "expected a mask raster")),
    }
}
