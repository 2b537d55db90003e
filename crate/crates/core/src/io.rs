//! File formats: binary pointmap and depth containers, TUM-style trajectory
//! text and a one-line intrinsics text file.
//!
//! Binary layout (all little-endian):
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `P4D\0` or `D4D\0` |
//! | 4  | 2 | version (1) |
//! | 6  | 2 | flags, bit 0 = normalized |
//! | 8  | 12 | frames, height, width (u32 each) |
//! | 20 | 8 | norm scale (f64) |
//!
//! followed by `N·H·W·C` f32 values (C = 3 for points, 1 for depth) and a
//! validity bitmask of `⌈N·H·W/8⌉` bytes, least significant bit first.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use thiserror::Error;

use crate::geometry::{Intrinsics, RigidPose, Vec3};
use crate::pointmap::{DepthSequence, PointmapError, PointmapSequence, Trajectory};

pub const POINTMAP_MAGIC: [u8; 4] = *b"P4D\0";
pub const DEPTH_MAGIC: [u8; 4] = *b"D4D\0";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;
pub const FLAG_NORMALIZED: u16 = 1;
/// Largest accepted deviation of a quaternion norm from 1.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("file truncated at byte {offset}, needed {needed} bytes")]
    TruncatedFile { offset: usize, needed: usize },
    #[error("dimensions {frames}x{height}x{width} are zero or too large")]
    DimOverflow { frames: u64, height: u64, width: u64 },
    #[error("{extra} unexpected trailing bytes after offset {offset}")]
    TrailingData { offset: usize, extra: usize },
    #[error("value at element {index} is not representable ({value})")]
    ValueNotRepresentable { index: usize, value: f64 },
    #[error("invalid content at byte {offset}: {source}")]
    InvalidContent { offset: usize, source: PointmapError },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("timestamps not increasing at line {line}")]
    NonIncreasingTimestamps { line: usize },
    #[error("quaternion norm {norm} at line {line} is not within tolerance of 1")]
    NonUnitQuaternion { line: usize, norm: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub magic: [u8; 4],
    pub version: u16,
    pub flags: u16,
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub norm_scale: f64,
}

impl Header {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        for d in [self.frames, self.height, self.width] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.norm_scale.to_le_bytes());
    }

    fn decode(bytes: &[u8], expected: [u8; 4]) -> Result<Header, FormatError> {
        need(bytes, 0, 4)?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != expected {
            return Err(FormatError::BadMagic { found: magic, expected });
        }
        need(bytes, 4, 2)?;
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionUnsupported(version));
        }
        need(bytes, 6, HEADER_LEN - 6)?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        Ok(Header {
            magic,
            version,
            flags: u16::from_le_bytes(bytes[6..8].try_into().unwrap()),
            frames: u32_at(8),
            height: u32_at(12),
            width: u32_at(16),
            norm_scale: f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        })
    }

    /// Element count `N·H·W`, rejecting zero and overflow.
    fn element_count(&self, channels: usize) -> Result<usize, FormatError> {
        let overflow = || FormatError::DimOverflow {
            frames: self.frames as u64,
            height: self.height as u64,
            width: self.width as u64,
        };
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(overflow());
        }
        let n = (self.frames as usize)
            .checked_mul(self.height as usize)
            .and_then(|n| n.checked_mul(self.width as usize))
            .ok_or_else(overflow)?;
        n.checked_mul(channels * 4).and_then(|b| b.checked_add(HEADER_LEN + n.div_ceil(8))).ok_or_else(overflow)?;
        Ok(n)
    }
}

fn need(bytes: &[u8], offset: usize, len: usize) -> Result<(), FormatError> {
    if bytes.len() < offset + len {
        Err(FormatError::TruncatedFile {
            offset: bytes.len(),
            needed: offset + len,
        })
    } else {
        Ok(())
    }
}

fn dims_u32(frames: usize, height: usize, width: usize) -> Result<(u32, u32, u32), FormatError> {
    let overflow = || FormatError::DimOverflow {
        frames: frames as u64,
        height: height as u64,
        width: width as u64,
    };
    if frames == 0 || height == 0 || width == 0 {
        return Err(overflow());
    }
    Ok((
        u32::try_from(frames).map_err(|_| overflow())?,
        u32::try_from(height).map_err(|_| overflow())?,
        u32::try_from(width).map_err(|_| overflow())?,
    ))
}

fn push_f32(out: &mut Vec<u8>, index: usize, value: f64) -> Result<(), FormatError> {
    let v = value as f32;
    if !v.is_finite() {
        return Err(FormatError::ValueNotRepresentable { index, value });
    }
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_mask(out: &mut Vec<u8>, valid: &[bool]) {
    for chunk in valid.chunks(8) {
        out.push(chunk.iter().enumerate().fold(0u8, |b, (i, v)| b | ((*v as u8) << i)));
    }
}

/// Splits the payload after the header into f32 values and mask bits.
fn read_payload(bytes: &[u8], n: usize, channels: usize) -> Result<(Vec<f64>, Vec<bool>), FormatError> {
    let value_bytes = n * channels * 4;
    let mask_offset = HEADER_LEN + value_bytes;
    let end = mask_offset + n.div_ceil(8);
    need(bytes, HEADER_LEN, value_bytes)?;
    need(bytes, mask_offset, n.div_ceil(8))?;
    if bytes.len() > end {
        return Err(FormatError::TrailingData {
            offset: end,
            extra: bytes.len() - end,
        });
    }
    let values = bytes[HEADER_LEN..mask_offset]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mask = &bytes[mask_offset..end];
    let valid = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok((values, valid))
}

pub fn encode_pointmap(p: &PointmapSequence) -> Result<Vec<u8>, FormatError> {
    let (frames, height, width) = dims_u32(p.frames(), p.height(), p.width())?;
    let n = p.points().len();
    let mut out = Vec::with_capacity(HEADER_LEN + 12 * n + n.div_ceil(8));
    Header {
        magic: POINTMAP_MAGIC,
        version: FORMAT_VERSION,
        flags: if p.is_normalized() { FLAG_NORMALIZED } else { 0 },
        frames,
        height,
        width,
        norm_scale: p.norm_scale(),
    }
    .encode(&mut out);
    for (i, pt) in p.points().iter().enumerate() {
        for c in 0..3 {
            push_f32(&mut out, 3 * i + c, pt[c])?;
        }
    }
    push_mask(&mut out, p.valid());
    Ok(out)
}

pub fn decode_pointmap(bytes: &[u8]) -> Result<PointmapSequence, FormatError> {
    let h = Header::decode(bytes, POINTMAP_MAGIC)?;
    let n = h.element_count(3)?;
    let (values, valid) = read_payload(bytes, n, 3)?;
    let points = values.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    let invalid = |source| FormatError::InvalidContent { offset: HEADER_LEN, source };
    PointmapSequence::new(h.frames as usize, h.height as usize, h.width as usize, points, valid)
        .and_then(|p| p.with_normalization(h.norm_scale, h.flags & FLAG_NORMALIZED != 0))
        .map_err(invalid)
}

pub fn encode_depth(d: &DepthSequence) -> Result<Vec<u8>, FormatError> {
    let (frames, height, width) = dims_u32(d.frames(), d.height(), d.width())?;
    let n = d.values().len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n + n.div_ceil(8));
    Header {
        magic: DEPTH_MAGIC,
        version: FORMAT_VERSION,
        flags: 0,
        frames,
        height,
        width,
        norm_scale: 1.0,
    }
    .encode(&mut out);
    for (i, (v, ok)) in d.values().iter().zip(d.valid()).enumerate() {
        // valid depths must stay positive after rounding to f32
        if *ok && (*v as f32) <= 0.0 {
            return Err(FormatError::ValueNotRepresentable { index: i, value: *v });
        }
        push_f32(&mut out, i, *v)?;
    }
    push_mask(&mut out, d.valid());
    Ok(out)
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthSequence, FormatError> {
    let h = Header::decode(bytes, DEPTH_MAGIC)?;
    let n = h.element_count(1)?;
    let (values, valid) = read_payload(bytes, n, 1)?;
    DepthSequence::new(h.frames as usize, h.height as usize, h.width as usize, values, valid)
        .map_err(|source| FormatError::InvalidContent { offset: HEADER_LEN, source })
}

pub fn write_pointmap(path: impl AsRef<Path>, p: &PointmapSequence) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_pointmap(p)?)?)
}

pub fn read_pointmap(path: impl AsRef<Path>) -> Result<PointmapSequence, FormatError> {
    decode_pointmap(&fs::read(path)?)
}

pub fn write_depth(path: impl AsRef<Path>, d: &DepthSequence) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_depth(d)?)?)
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthSequence, FormatError> {
    decode_depth(&fs::read(path)?)
}

/// Shortest decimal that parses back to the same f64, with `-0` printed as `0`.
fn fmt_num(x: f64) -> String {
    format!("{}", x + 0.0)
}

/// Text form: one `timestamp tx ty tz qx qy qz qw` line per pose
/// (camera-to-world), with `qw ≥ 0`.
pub fn format_trajectory(t: &Trajectory) -> String {
    let mut out = String::new();
    for (pose, ts) in t.poses().iter().zip(t.timestamps()) {
        let mut q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*pose.rotation()));
        if q.w < 0.0 {
            q = UnitQuaternion::new_unchecked(-q.into_inner());
        }
        let tr = pose.translation();
        let fields = [*ts, tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w].map(fmt_num);
        writeln!(out, "{}", fields.join(" ")).unwrap();
    }
    out
}

/// Parses trajectory text. Blank lines and lines starting with `#` are skipped.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, FormatError> {
    let mut poses = Vec::new();
    let mut stamps: Vec<f64> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = tokens(raw);
        let mut vals = [0.0; 8];
        for (k, slot) in vals.iter_mut().enumerate() {
            let Some(&(column, tok)) = fields.get(k) else {
                return Err(FormatError::ParseError {
                    line,
                    column: raw.len() + 1,
                    message: format!("expected 8 fields, found {}", fields.len()),
                });
            };
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FormatError::ParseError {
                    line,
                    column,
                    message: format!("'{tok}' is not a finite number"),
                })?;
        }
        if let Some(&(column, _)) = fields.get(8) {
            return Err(FormatError::ParseError {
                line,
                column,
                message: "more than 8 fields".into(),
            });
        }
        let [ts, tx, ty, tz, qx, qy, qz, qw] = vals;
        if stamps.last().is_some_and(|&prev| ts <= prev) {
            return Err(FormatError::NonIncreasingTimestamps { line });
        }
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(FormatError::NonUnitQuaternion { line, norm });
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        let t = Vec3::new(tx, ty, tz);
        poses.push(RigidPose::new(r, t).unwrap_or_else(|_| RigidPose::from_approx(&r, t)));
        stamps.push(ts);
    }
    Ok(Trajectory::new(poses, stamps).expect("timestamps checked above"))
}

/// Whitespace-separated tokens with their 1-based byte columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    out
}

pub fn write_trajectory(path: impl AsRef<Path>, t: &Trajectory) -> Result<(), FormatError> {
    Ok(fs::write(path, format_trajectory(t))?)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, FormatError> {
    parse_trajectory(&fs::read_to_string(path)?)
}

/// Intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraInfo {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

pub fn format_intrinsics(c: &CameraInfo) -> String {
    let k = &c.intrinsics;
    format!("{} {} {} {} {}\n", fmt_num(k.focal), fmt_num(k.cx), fmt_num(k.cy), c.width, c.height)
}

/// Parses a single `f cx cy width height` line.
pub fn parse_intrinsics(text: &str) -> Result<CameraInfo, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((idx, raw)) = lines.next() else {
        return Err(FormatError::ParseError {
            line: 1,
            column: 1,
            message: "empty intrinsics file".into(),
        });
    };
    let line = idx + 1;
    if let Some((extra, _)) = lines.next() {
        return Err(FormatError::ParseError {
            line: extra + 1,
            column: 1,
            message: "expected a single line".into(),
        });
    }
    let fields = tokens(raw);
    if fields.len() != 5 {
        return Err(FormatError::ParseError {
            line,
            column: fields.get(5).map_or(raw.len() + 1, |f| f.0),
            message: format!("expected 5 fields, found {}", fields.len()),
        });
    }
    let err = |column: usize, message: String| FormatError::ParseError { line, column, message };
    let mut real = [0.0; 3];
    for (slot, &(column, tok)) in real.iter_mut().zip(&fields) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(column, format!("'{tok}' is not a finite number")))?;
    }
    let mut size = [0usize; 2];
    for (slot, &(column, tok)) in size.iter_mut().zip(&fields[3..]) {
        *slot = tok
            .parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| err(column, format!("'{tok}' is not a positive integer")))?;
    }
    let intrinsics =
        Intrinsics::new(real[0], real[1], real[2]).map_err(|e| err(fields[0].0, e.to_string()))?;
    Ok(CameraInfo {
        intrinsics,
        width: size[0],
        height: size[1],
    })
}

pub fn write_intrinsics(path: impl AsRef<Path>, c: &CameraInfo) -> Result<(), FormatError> {
    Ok(fs::write(path, format_intrinsics(c))?)
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraInfo, FormatError> {
    parse_intrinsics(&fs::read_to_string(path)?)
}
