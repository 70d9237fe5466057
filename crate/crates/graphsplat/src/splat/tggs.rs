//! Binary snapshot format for Gaussian sets.
//!
//! Layout: 5-byte magic `TGGS1`, little-endian u32 count, then 14 f32 per
//! Gaussian (position xyz, rotation wxyz, log scales xyz, opacity logit,
//! color rgb), then the anchor center xyz and radius as 4 f32. Parameters
//! are stored at f32 precision regardless of the in-memory scalar type.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::num::Real;

use super::{Gaussian, GaussianSet};

const MAGIC: &[u8; 5] = b"TGGS1";
const FLOATS_PER_GAUSSIAN: usize = 14;

pub fn write_gaussians<T: Real>(set: &GaussianSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes =
        Vec::with_capacity(5 + 4 + set.len() * FLOATS_PER_GAUSSIAN * 4 + 16);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(set.len() as u32).to_le_bytes());
    let push = |v: T, bytes: &mut Vec<u8>| {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    };
    for g in &set.gaussians {
        for i in 0..3 {
            push(g.position[i], &mut bytes);
        }
        for i in 0..4 {
            push(g.rotation[i], &mut bytes);
        }
        for i in 0..3 {
            push(g.log_scales[i], &mut bytes);
        }
        push(g.opacity_logit, &mut bytes);
        for i in 0..3 {
            push(g.color[i], &mut bytes);
        }
    }
    for i in 0..3 {
        push(set.center[i], &mut bytes);
    }
    push(set.radius, &mut bytes);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_gaussians<T: Real>(path: impl AsRef<Path>) -> Result<GaussianSet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(Error::Format(format!(
            "{}: missing TGGS1 magic",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let expected = 9 + (count * FLOATS_PER_GAUSSIAN + 4) * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: truncated or oversized payload, expected {} bytes for {} gaussians, found {}",
            path.display(),
            expected,
            count,
            bytes.len()
        )));
    }
    let mut cursor = 9;
    let mut next = || {
        let v = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
        cursor += 4;
        T::of(v as f64)
    };
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let position = Vector3::new(next(), next(), next());
        let rotation = Vector4::new(next(), next(), next(), next());
        let log_scales = Vector3::new(next(), next(), next());
        let opacity_logit = next();
        let color = Vector3::new(next(), next(), next());
        gaussians.push(Gaussian {
            position,
            rotation,
            log_scales,
            opacity_logit,
            color,
        });
    }
    let center = Vector3::new(next(), next(), next());
    let radius = next();
    let set = GaussianSet::new(gaussians, center, radius);
    set.validate()?;
    Ok(set)
}
