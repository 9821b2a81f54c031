//! Landmark-based morphing (triangulate, warp, blend), latent morphs and
//! selfmorphs.

mod triangulate;
mod warp;

pub use triangulate::{border_points, signed_area, triangulate, Triangulation};
pub use warp::{warp_affine_triangle, warp_image, AffineMap, WarpAccumulator};

use crate::image::{GrayImage, Point};
use crate::manifest::{MorphFamily, SampleKind};
use crate::synth::{FaceImage, FaceSpace, IdentityModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphConfig {
    /// Interpolation weight of the second source for landmarks, pixels and
    /// latents.
    pub blend_alpha: f64,
    pub family: MorphFamily,
}

impl Default for MorphConfig {
    fn default() -> Self {
        MorphConfig {
            blend_alpha: 0.5,
            family: MorphFamily::Landmark,
        }
    }
}

impl MorphConfig {
    pub fn landmark(blend_alpha: f64) -> Self {
        MorphConfig {
            blend_alpha,
            family: MorphFamily::Landmark,
        }
    }

    pub fn latent(blend_alpha: f64) -> Self {
        MorphConfig {
            blend_alpha,
            family: MorphFamily::Latent,
        }
    }

    fn check_alpha(&self) -> Result<f64> {
        if (0.0..=1.0).contains(&self.blend_alpha) {
            Ok(self.blend_alpha)
        } else {
            Err(Error::Config(format!("blend_alpha {} not in [0, 1]", self.blend_alpha)))
        }
    }
}

/// A generated image together with both source identities.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphedFace {
    pub face: FaceImage,
    pub id_first: u32,
    pub id_second: u32,
    pub kind: SampleKind,
}

/// Landmark morph of `a` and `b`.
///
/// Target landmarks are `(1-α)·p_a + α·p_b`; both images are warped onto the
/// target geometry over a Delaunay triangulation of the target landmarks plus
/// eight border points, then blended `(1-α)·a + α·b`.
pub fn morph_landmark(a: &FaceImage, b: &FaceImage, config: &MorphConfig) -> Result<MorphedFace> {
    let alpha = config.check_alpha()?;
    if a.landmarks.len() != b.landmarks.len() {
        return Err(Error::Topology(a.landmarks.len(), b.landmarks.len()));
    }
    if (a.pixels.width(), a.pixels.height()) != (b.pixels.width(), b.pixels.height()) {
        return Err(Error::Shape("morph sources differ in size".into()));
    }
    // (a, b, α) and (b, a, 1-α) share one code path so they agree bit for bit.
    let (pixels, landmarks) = if alpha > 0.5 {
        blend_warped(b, a, 1.0 - alpha)?
    } else {
        blend_warped(a, b, alpha)?
    };
    Ok(MorphedFace {
        face: FaceImage {
            pixels,
            landmarks,
            identity_id: a.identity_id,
        },
        id_first: a.identity_id,
        id_second: b.identity_id,
        kind: SampleKind::Morph(MorphFamily::Landmark),
    })
}

fn blend_warped(a: &FaceImage, b: &FaceImage, alpha: f64) -> Result<(GrayImage, Vec<Point>)> {
    let (w, h) = (a.pixels.width(), a.pixels.height());
    let border = border_points(w, h);
    let target: Vec<Point> = a
        .landmarks
        .iter()
        .zip(&b.landmarks)
        .map(|(p, q)| p.lerp(*q, alpha))
        .collect();
    let with_border = |pts: &[Point]| -> Vec<Point> { pts.iter().chain(&border).copied().collect() };
    let dst = with_border(&target);
    let tri = triangulate(&dst)?;
    let wa = warp_image(&a.pixels, &with_border(&a.landmarks), &dst, &tri)?;
    let wb = warp_image(&b.pixels, &with_border(&b.landmarks), &dst, &tri)?;
    let data = wa
        .image
        .pixels()
        .iter()
        .zip(wb.image.pixels())
        .map(|(x, y)| ((1.0 - alpha) * x + alpha * y).clamp(0.0, 1.0))
        .collect();
    Ok((GrayImage::from_vec(w, h, data)?, target))
}

/// Latent morph: interpolates the identity latents and renders the result.
pub fn morph_latent(
    space: &FaceSpace,
    a: &IdentityModel,
    b: &IdentityModel,
    config: &MorphConfig,
    variation_seed: u64,
) -> Result<MorphedFace> {
    let alpha = config.check_alpha()?;
    let (_, face) = space.latent_interpolate(a, b, alpha, variation_seed)?;
    Ok(MorphedFace {
        face,
        id_first: a.identity_id,
        id_second: b.identity_id,
        kind: SampleKind::Morph(MorphFamily::Latent),
    })
}

/// Morph of two images of the same identity, labelled as a bona fide of that
/// identity. The family in `config` selects the pipeline.
pub fn selfmorph(
    space: &FaceSpace,
    a: &FaceImage,
    a2: &FaceImage,
    config: &MorphConfig,
    variation_seed: u64,
) -> Result<MorphedFace> {
    if a.identity_id != a2.identity_id {
        return Err(Error::Misuse(format!(
            "selfmorph of different identities {} and {}",
            a.identity_id, a2.identity_id
        )));
    }
    let mut out = match config.family {
        MorphFamily::Landmark => morph_landmark(a, a2, config)?,
        MorphFamily::Latent => {
            let model = space.make_identity(a.identity_id);
            morph_latent(space, &model, &model, config, variation_seed)?
        }
    };
    out.kind = SampleKind::SelfMorph(config.family);
    out.id_second = a.identity_id;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;

    fn faces() -> (FaceSpace, FaceImage, FaceImage) {
        let s = FaceSpace::new(SynthConfig::default(), 5).unwrap();
        let a = s.render(&s.make_identity(1), 10);
        let b = s.render(&s.make_identity(2), 11);
        (s, a, b)
    }

    #[test]
    fn midpoint_landmarks() {
        let (_, a, b) = faces();
        let m = morph_landmark(&a, &b, &MorphConfig::default()).unwrap();
        for ((p, q), r) in a.landmarks.iter().zip(&b.landmarks).zip(&m.face.landmarks) {
            assert!((r.x - 0.5 * (p.x + q.x)).abs() <= 1e-12);
            assert!((r.y - 0.5 * (p.y + q.y)).abs() <= 1e-12);
        }
        assert_eq!((m.id_first, m.id_second), (1, 2));
    }

    #[test]
    fn morph_of_identical_images_is_identity() {
        let (_, a, _) = faces();
        let m = morph_landmark(&a, &a, &MorphConfig::default()).unwrap();
        assert!(m.face.pixels.max_abs_diff(&a.pixels) <= 1e-9);
    }

    #[test]
    fn alpha_zero_returns_first() {
        let (_, a, b) = faces();
        let m = morph_landmark(&a, &b, &MorphConfig::landmark(0.0)).unwrap();
        assert!(m.face.pixels.max_abs_diff(&a.pixels) <= 1e-9);
    }

    #[test]
    fn topology_mismatch() {
        let (_, a, mut b) = faces();
        b.landmarks.pop();
        assert!(matches!(
            morph_landmark(&a, &b, &MorphConfig::default()),
            Err(Error::Topology(13, 12))
        ));
    }

    #[test]
    fn selfmorph_labels_and_misuse() {
        let (s, a, b) = faces();
        let a2 = s.render(&s.make_identity(1), 12);
        for fam in MorphFamily::ALL {
            let cfg = MorphConfig {
                blend_alpha: 0.5,
                family: fam,
            };
            let m = selfmorph(&s, &a, &a2, &cfg, 3).unwrap();
            assert_eq!((m.id_first, m.id_second), (1, 1));
            assert_eq!(m.kind, SampleKind::SelfMorph(fam));
        }
        assert!(matches!(
            selfmorph(&s, &a, &b, &MorphConfig::default(), 3),
            Err(Error::Misuse(_))
        ));
    }

    #[test]
    fn latent_morph_tags_family() {
        let (s, _, _) = faces();
        let m = morph_latent(
            &s,
            &s.make_identity(1),
            &s.make_identity(2),
            &MorphConfig::latent(0.5),
            4,
        )
        .unwrap();
        assert_eq!(m.kind, SampleKind::Morph(MorphFamily::Latent));
        let a0 = morph_latent(
            &s,
            &s.make_identity(1),
            &s.make_identity(2),
            &MorphConfig::latent(0.0),
            4,
        )
        .unwrap();
        assert_eq!(a0.face, s.render(&s.make_identity(1), 4));
    }
}
