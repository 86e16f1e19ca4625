//! Binary sidecar files referenced from the dataset document.
//!
//! * Point clouds: flat little-endian `f32` records `x, y, z, ring`, 16 bytes
//!   per point, no header.
//! * Depth rasters: 16-byte header (`width: u32 LE`, `height: u32 LE`, 8
//!   reserved zero bytes) followed by `width · height` little-endian `f32`
//!   depths in meters, row-major. Invalid pixels are NaN.

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::io::write_atomic;

const CLOUD_RECORD: usize = 16;
const DEPTH_HEADER: usize = 16;
/// Rings are stored as `f32`; anything above this is not an exact integer.
const MAX_RING: f32 = 65535.0;
/// Guard against absurd headers in untrusted files (64 Mpx).
const MAX_DEPTH_PIXELS: u64 = 1 << 26;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("cloud size {0} is not a multiple of {CLOUD_RECORD} bytes")]
    CloudLength(usize),
    #[error("point {index}: non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("point {index}: ring value {value} is not a small non-negative integer")]
    BadRing { index: usize, value: f32 },
    #[error("depth file shorter than its {DEPTH_HEADER}-byte header")]
    DepthHeader,
    #[error("depth header reserved bytes must be zero")]
    DepthReserved,
    #[error("depth raster {width}x{height} expects {expected} bytes, found {found}")]
    DepthLength {
        width: u32,
        height: u32,
        expected: u64,
        found: usize,
    },
    #[error("depth raster {0}x{1} is empty or too large")]
    DepthSize(u32, u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// LiDAR returns in the sensor frame, each tagged with its ring (layer).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub rings: Vec<u16>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vector3<f64>, ring: u16) {
        self.points.push(p);
        self.rings.push(ring);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new_invalid(width: u32, height: u32) -> Self {
        DepthImage {
            width,
            height,
            data: vec![f32::NAN; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, d: f32) {
        let i = self.index(x, y);
        self.data[i] = d;
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && {
            let d = self.get(x, y);
            d.is_finite() && d > 0.0
        }
    }
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * CLOUD_RECORD);
    for (p, &ring) in cloud.points.iter().zip(&cloud.rings) {
        for v in [p.x as f32, p.y as f32, p.z as f32, ring as f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    let mut b = [0u8; 4];
    b.copy_from_slice(&bytes[offset..offset + 4]);
    f32::from_le_bytes(b)
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud, SidecarError> {
    if !bytes.len().is_multiple_of(CLOUD_RECORD) {
        return Err(SidecarError::CloudLength(bytes.len()));
    }
    let n = bytes.len() / CLOUD_RECORD;
    let mut cloud = PointCloud {
        points: Vec::with_capacity(n),
        rings: Vec::with_capacity(n),
    };
    for index in 0..n {
        let o = index * CLOUD_RECORD;
        let (x, y, z, ring) = (
            f32_at(bytes, o),
            f32_at(bytes, o + 4),
            f32_at(bytes, o + 8),
            f32_at(bytes, o + 12),
        );
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(SidecarError::NonFinitePoint { index });
        }
        if !((0.0..=MAX_RING).contains(&ring) && ring.fract() == 0.0) || ring.is_sign_negative() {
            return Err(SidecarError::BadRing { index, value: ring });
        }
        cloud.push(Vector3::new(x as f64, y as f64, z as f64), ring as u16);
    }
    Ok(cloud)
}

pub fn encode_depth(img: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEPTH_HEADER + img.data.len() * 4);
    out.extend_from_slice(&img.width.to_le_bytes());
    out.extend_from_slice(&img.height.to_le_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for d in &img.data {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthImage, SidecarError> {
    if bytes.len() < DEPTH_HEADER {
        return Err(SidecarError::DepthHeader);
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let height = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if bytes[8..16].iter().any(|&b| b != 0) {
        return Err(SidecarError::DepthReserved);
    }
    let pixels = width as u64 * height as u64;
    if pixels == 0 || pixels > MAX_DEPTH_PIXELS {
        return Err(SidecarError::DepthSize(width, height));
    }
    let expected = DEPTH_HEADER as u64 + pixels * 4;
    if bytes.len() as u64 != expected {
        return Err(SidecarError::DepthLength {
            width,
            height,
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[DEPTH_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(DepthImage {
        width,
        height,
        data,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, SidecarError> {
    std::fs::read(path).map_err(|source| SidecarError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, SidecarError> {
    decode_cloud(&read(path)?)
}

pub fn read_depth(path: &Path) -> Result<DepthImage, SidecarError> {
    decode_depth(&read(path)?)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), SidecarError> {
    write_atomic(path, &encode_cloud(cloud)).map_err(|source| SidecarError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_depth(path: &Path, img: &DepthImage) -> Result<(), SidecarError> {
    write_atomic(path, &encode_depth(img)).map_err(|source| SidecarError::Io {
        path: path.display().to_string(),
        source,
    })
}
