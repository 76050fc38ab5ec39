//! Geometric transforms that relate the two reading directions of a
//! generated glyph. Each variant is an exact pixel permutation behind the
//! [`PixelTransform`] trait and is registered by name, so samplers, the
//! trainer, and the CLI select one at runtime without knowing the concrete
//! type.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// An exact, invertible permutation of the pixel grid.
///
/// Implementations never interpolate: applying a transform and then its
/// inverse returns the original array bit for bit.
pub trait PixelTransform: Send + Sync {
    /// Registry name, e.g. `"rot180"`.
    fn name(&self) -> &'static str;

    /// Applies the permutation. Rotations require square inputs.
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>>;

    /// The transform that undoes this one.
    fn inverse(&self) -> &'static dyn PixelTransform;
}

struct Identity;
struct Rot90;
struct Rot180;
struct Rot270;
struct HFlip;
struct VFlip;

fn require_square(op: &'static str, image: &Array2<f64>) -> Result<(usize, usize)> {
    let (h, w) = image.dim();
    if h != w {
        return Err(CoreError::NonSquare { op, h, w });
    }
    Ok((h, w))
}

impl PixelTransform for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(image.clone())
    }
    fn inverse(&self) -> &'static dyn PixelTransform {
        &Identity
    }
}

impl PixelTransform for Rot90 {
    fn name(&self) -> &'static str {
        "rot90"
    }
    // 90 degrees counterclockwise: out[i][j] = in[j][n-1-i].
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, _) = require_square("rot90", image)?;
        Ok(Array2::from_shape_fn((n, n), |(i, j)| image[[j, n - 1 - i]]))
    }
    fn inverse(&self) -> &'static dyn PixelTransform {
        &Rot270
    }
}

impl PixelTransform for Rot180 {
    fn name(&self) -> &'static str {
        "rot180"
    }
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, _) = require_square("rot180", image)?;
        Ok(Array2::from_shape_fn((n, n), |(i, j)| {
            image[[n - 1 - i, n - 1 - j]]
        }))
    }
    fn inverse(&self) -> &'static dyn PixelTransform {
        &Rot180
    }
}

impl PixelTransform for Rot270 {
    fn name(&self) -> &'static str {
        "rot270"
    }
    // 90 degrees clockwise: out[i][j] = in[n-1-j][i].
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, _) = require_square("rot270", image)?;
        Ok(Array2::from_shape_fn((n, n), |(i, j)| image[[n - 1 - j, i]]))
    }
    fn inverse(&self) -> &'static dyn PixelTransform {
        &Rot90
    }
}

impl PixelTransform for HFlip {
    fn name(&self) -> &'static str {
        "hflip"
    }
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let (h, w) = image.dim();
        Ok(Array2::from_shape_fn((h, w), |(i, j)| {
            image[[i, w - 1 - j]]
        }))
    }
    fn inverse(&self) -> &'static dyn PixelTransform {
        &HFlip
    }
}

impl PixelTransform for VFlip {
    fn name(&self) -> &'static str {
        "vflip"
    }
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let (h, w) = image.dim();
        Ok(Array2::from_shape_fn((h, w), |(i, j)| {
            image[[h - 1 - i, j]]
        }))
    }
    fn inverse(&self) -> &'static dyn PixelTransform {
        &VFlip
    }
}

/// All registered transforms. `rot270` is registered as the inverse leg of
/// `rot90` and is not part of the config-selectable set.
static REGISTRY: [&dyn PixelTransform; 6] =
    [&Identity, &Rot90, &Rot180, &Rot270, &HFlip, &VFlip];

/// The five transform names selectable from config and the CLI.
pub const CANONICAL_NAMES: [&str; 5] = ["rot180", "rot90", "hflip", "vflip", "identity"];

/// Looks up a transform strategy by registry name.
pub fn lookup(name: &str) -> Option<&'static dyn PixelTransform> {
    REGISTRY.iter().copied().find(|t| t.name() == name)
}

/// The config-level identifier for the five supported ambigram types.
/// `Identity` is the overlay type: two letters readable from the same
/// direction without any geometric transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Rot180,
    Rot90,
    HFlip,
    VFlip,
    Identity,
}

impl TransformKind {
    pub fn strategy(&self) -> &'static dyn PixelTransform {
        match self {
            TransformKind::Rot180 => &Rot180,
            TransformKind::Rot90 => &Rot90,
            TransformKind::HFlip => &HFlip,
            TransformKind::VFlip => &VFlip,
            TransformKind::Identity => &Identity,
        }
    }

    pub fn name(&self) -> &'static str {
        self.strategy().name()
    }

    pub fn all() -> [TransformKind; 5] {
        [
            TransformKind::Rot180,
            TransformKind::Rot90,
            TransformKind::HFlip,
            TransformKind::VFlip,
            TransformKind::Identity,
        ]
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rot180" => Ok(TransformKind::Rot180),
            "rot90" => Ok(TransformKind::Rot90),
            "hflip" => Ok(TransformKind::HFlip),
            "vflip" => Ok(TransformKind::VFlip),
            "identity" => Ok(TransformKind::Identity),
            other => Err(CoreError::InvalidConfig(format!(
                "unknown transform '{other}' (expected one of {})",
                CANONICAL_NAMES.join(", ")
            ))),
        }
    }
}

/// Applies the named transform to an image.
pub fn apply_transform(image: &Array2<f64>, kind: TransformKind) -> Result<Array2<f64>> {
    kind.strategy().apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn probe() -> Array2<f64> {
        array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
    }

    #[test]
    fn rot180_is_involution() {
        let x = probe();
        let once = apply_transform(&x, TransformKind::Rot180).unwrap();
        assert_ne!(once, x);
        let twice = apply_transform(&once, TransformKind::Rot180).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn identity_returns_input() {
        let x = probe();
        assert_eq!(apply_transform(&x, TransformKind::Identity).unwrap(), x);
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let x = probe();
        let mut y = x.clone();
        for _ in 0..4 {
            y = apply_transform(&y, TransformKind::Rot90).unwrap();
        }
        assert_eq!(y, x);
    }

    #[test]
    fn rot90_orientation() {
        // counterclockwise: the top-right corner moves to the top-left
        let x = probe();
        let y = apply_transform(&x, TransformKind::Rot90).unwrap();
        assert_eq!(y[[0, 0]], 3.0);
        assert_eq!(y[[2, 2]], 7.0);
    }

    #[test]
    fn every_transform_inverts_exactly() {
        let x = probe();
        for kind in TransformKind::all() {
            let t = kind.strategy();
            let back = t.inverse().apply(&t.apply(&x).unwrap()).unwrap();
            assert_eq!(back, x, "{} then inverse must be exact", t.name());
            // inverse of the inverse is the transform itself
            assert_eq!(t.inverse().inverse().name(), t.name());
        }
    }

    #[test]
    fn flips_work_on_rectangles_rotations_do_not() {
        let rect = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
        assert!(lookup("hflip").unwrap().apply(&rect).is_ok());
        assert!(lookup("vflip").unwrap().apply(&rect).is_ok());
        assert!(matches!(
            lookup("rot180").unwrap().apply(&rect),
            Err(CoreError::NonSquare { .. })
        ));
        assert!(matches!(
            lookup("rot90").unwrap().apply(&rect),
            Err(CoreError::NonSquare { .. })
        ));
    }

    #[test]
    fn registry_lookup_and_parse() {
        for name in CANONICAL_NAMES {
            let t = lookup(name).expect("registered");
            assert_eq!(t.name(), name);
            let kind: TransformKind = name.parse().unwrap();
            assert_eq!(kind.name(), name);
        }
        assert!(lookup("rot270").is_some());
        assert!("rot270".parse::<TransformKind>().is_err());
        assert!(lookup("swirl").is_none());
    }
}
