//! On-disk formats: APC point clouds, 16-bit PGM depth, PBM masks, camera
//! JSON and small JSON sidecars.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraExtrinsics, CameraIntrinsics, DepthMap, GeometryError, Mask, Point3, PointCloud};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

impl IoError {
    fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format { path: path.display().to_string(), msg: msg.into() }
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn write_bytes(path: &Path, data: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.display().to_string(), source })?;
    }
    std::fs::write(path, data).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

// ---------------------------------------------------------------- point clouds

pub fn format_apc(cloud: &PointCloud) -> String {
    let labeled = cloud.labels.is_some();
    let mut s = format!("# apc v1 n={} labeled={}\n", cloud.len(), labeled as u8);
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(l) = &cloud.labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn parse_apc(text: &str) -> Result<PointCloud, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let rest = header.strip_prefix("# apc v1").ok_or("missing '# apc v1' header")?;
    let mut n = None;
    let mut labeled = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = Some(v.parse::<usize>().map_err(|_| format!("bad point count '{v}'"))?);
        } else if let Some(v) = tok.strip_prefix("labeled=") {
            labeled = Some(match v {
                "0" => false,
                "1" => true,
                _ => return Err(format!("bad labeled flag '{v}'")),
            });
        }
    }
    let n = n.ok_or("header lacks n=")?;
    let labeled = labeled.ok_or("header lacks labeled=")?;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(if labeled { n } else { 0 });
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let want = if labeled { 4 } else { 3 };
        if toks.len() != want {
            return Err(format!("line {}: expected {want} fields", i + 2));
        }
        let c = |k: usize| toks[k].parse::<f64>().map_err(|_| format!("line {}: bad number '{}'", i + 2, toks[k]));
        let p = Point3::new(c(0)?, c(1)?, c(2)?);
        if !p.coords.iter().all(|v| v.is_finite()) {
            return Err(format!("line {}: non-finite coordinate", i + 2));
        }
        points.push(p);
        if labeled {
            labels.push(toks[3].parse::<u32>().map_err(|_| format!("line {}: bad label '{}'", i + 2, toks[3]))?);
        }
    }
    if points.len() != n {
        return Err(format!("header says {n} points, found {}", points.len()));
    }
    if labeled {
        PointCloud::with_labels(points, labels).map_err(|e| e.to_string())
    } else {
        Ok(PointCloud::new(points))
    }
}

pub fn read_apc(path: &Path) -> Result<PointCloud, IoError> {
    parse_apc(&read_text(path)?).map_err(|m| IoError::format(path, m))
}

pub fn write_apc(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_bytes(path, format_apc(cloud).as_bytes())
}

// ---------------------------------------------------------------- netpbm

/// Splits a netpbm header into `count` whitespace-separated tokens after the
/// magic, skipping comments, and returns them with the offset of the raster.
fn pnm_header(data: &[u8], count: usize) -> Result<(String, Vec<usize>, usize), String> {
    let mut pos = 0;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < count + 1 {
        while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let nums = tokens[1..]
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad header value '{t}'")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tokens.remove(0), nums, pos))
}

/// 16-bit big-endian binary PGM, millimetres.
pub fn encode_depth_pgm(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.values.len() * 2);
    for &z in &depth.values {
        let mm = (z * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn decode_depth_pgm(data: &[u8]) -> Result<DepthMap, String> {
    let (magic, nums, pos) = pnm_header(data, 3)?;
    if magic != "P5" {
        return Err(format!("expected P5, found {magic}"));
    }
    let (w, h, maxval) = (nums[0], nums[1], nums[2]);
    if !(256..=65535).contains(&maxval) {
        return Err(format!("depth PGM must be 16-bit, maxval {maxval}"));
    }
    let raster = &data[pos.min(data.len())..];
    if raster.len() < w * h * 2 {
        return Err("truncated raster".into());
    }
    let values = raster
        .chunks_exact(2)
        .take(w * h)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 1000.0)
        .collect();
    DepthMap::new(w, h, values).map_err(|e: GeometryError| e.to_string())
}

pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    decode_depth_pgm(&read_bytes(path)?).map_err(|m| IoError::format(path, m))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_bytes(path, &encode_depth_pgm(depth))
}

/// Binary PBM (P4); set bits are written as 1 (black).
pub fn encode_mask_pbm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P4\n{} {}\n", mask.width, mask.height).into_bytes();
    let row_bytes = mask.width.div_ceil(8);
    for v in 0..mask.height {
        let mut row = vec![0u8; row_bytes];
        for u in 0..mask.width {
            if mask.get(u, v) {
                row[u / 8] |= 0x80 >> (u % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

/// Reads P4 or ASCII P1.
pub fn decode_mask_pbm(data: &[u8]) -> Result<Mask, String> {
    let (magic, nums, pos) = pnm_header(data, 2)?;
    let (w, h) = (nums[0], nums[1]);
    let mut bits = Vec::with_capacity(w * h);
    match magic.as_str() {
        "P4" => {
            let row_bytes = w.div_ceil(8);
            let raster = &data[pos.min(data.len())..];
            if raster.len() < row_bytes * h {
                return Err("truncated raster".into());
            }
            for v in 0..h {
                for u in 0..w {
                    bits.push(raster[v * row_bytes + u / 8] & (0x80 >> (u % 8)) != 0);
                }
            }
        }
        "P1" => {
            for &b in &data[(pos - 1).min(data.len())..] {
                match b {
                    b'0' => bits.push(false),
                    b'1' => bits.push(true),
                    _ => {}
                }
            }
            bits.truncate(w * h);
        }
        _ => return Err(format!("expected P4 or P1, found {magic}")),
    }
    Mask::new(w, h, bits).map_err(|e| e.to_string())
}

pub fn read_mask(path: &Path) -> Result<Mask, IoError> {
    decode_mask_pbm(&read_bytes(path)?).map_err(|m| IoError::format(path, m))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), IoError> {
    write_bytes(path, &encode_mask_pbm(mask))
}

// ---------------------------------------------------------------- camera

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
}

impl CameraFile {
    pub fn new(intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Self {
        CameraFile {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            h: extr.matrix().to_vec(),
        }
    }

    pub fn split(&self) -> Result<(CameraIntrinsics, CameraExtrinsics), GeometryError> {
        let intr = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let m: [f64; 16] = self
            .h
            .as_slice()
            .try_into()
            .map_err(|_| GeometryError::InvalidCamera(format!("H needs 16 entries, got {}", self.h.len())))?;
        Ok((intr, CameraExtrinsics::from_matrix(&m)?))
    }
}

pub fn read_camera(path: &Path) -> Result<(CameraIntrinsics, CameraExtrinsics), IoError> {
    let file: CameraFile = read_json(path)?;
    file.split().map_err(|e| IoError::format(path, e.to_string()))
}

pub fn write_camera(path: &Path, intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Result<(), IoError> {
    write_json(path, &CameraFile::new(intr, extr))
}
