//! Procedural identity-conditioned face images.
//!
//! A [`FaceSpace`] fixes random linear maps from a unit-norm identity latent
//! to landmark geometry, a tone palette and a low-frequency texture. Each
//! identity is a latent; each image is a render of an identity with
//! per-image pose jitter, illumination change and sensor noise. Latent morphs
//! interpolate latents and render the result.

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};

use crate::image::{GrayImage, Point};
use crate::seed::{self, Rng};
use crate::{Error, Result};

/// Landmarks in semantic order.
pub const LANDMARK_NAMES: [&str; 13] = [
    "left_eye",
    "right_eye",
    "left_brow",
    "right_brow",
    "nose",
    "mouth_left",
    "mouth_right",
    "chin",
    "left_cheek",
    "right_cheek",
    "forehead",
    "jaw_left",
    "jaw_right",
];
pub const NUM_LANDMARKS: usize = LANDMARK_NAMES.len();

// Landmark layout on a 32x32 canvas; scaled for other sizes.
const BASE_LAYOUT: [(f64, f64); NUM_LANDMARKS] = [
    (11.0, 13.0),
    (21.0, 13.0),
    (11.0, 10.0),
    (21.0, 10.0),
    (16.0, 18.0),
    (12.5, 22.5),
    (19.5, 22.5),
    (16.0, 28.0),
    (9.0, 19.0),
    (23.0, 19.0),
    (16.0, 6.0),
    (8.0, 24.0),
    (24.0, 24.0),
];

const PALETTE_LEN: usize = 10;
// skin, eye, brow, mouth, nose, cheek, chin, forehead, jaw, background
const BASE_PALETTE: [f64; PALETTE_LEN] = [0.55, 0.32, 0.30, 0.25, 0.10, 0.0, 0.05, 0.06, 0.12, 0.15];
const TEXTURE_MODES: [(f64, f64); 6] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 0.0), (0.0, 2.0), (2.0, 1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub latent_dim: usize,
    /// Standard deviation (px) of identity-specific landmark offsets.
    pub geometry_scale: f64,
    /// Standard deviation of identity-specific tone offsets.
    pub palette_scale: f64,
    /// Standard deviation of identity texture amplitudes.
    pub texture_scale: f64,
    /// Maximum global landmark shift per image (px, per axis).
    pub pose_shift: f64,
    /// Per-landmark jitter standard deviation (px).
    pub landmark_jitter: f64,
    /// Per-landmark jitter is clipped to this magnitude per axis (px).
    pub landmark_jitter_clip: f64,
    /// Half-range of the illumination gain and offset.
    pub illumination: f64,
    /// Sensor noise standard deviation.
    pub pixel_noise: f64,
    /// Minimum angle (degrees) expected between identity latents.
    pub min_latent_angle_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 32,
            latent_dim: 16,
            geometry_scale: 2.0,
            palette_scale: 0.08,
            texture_scale: 0.05,
            pose_shift: 0.3,
            landmark_jitter: 0.2,
            landmark_jitter_clip: 0.7,
            illumination: 0.08,
            pixel_noise: 0.02,
            min_latent_angle_deg: 20.0,
        }
    }
}

impl SynthConfig {
    /// All per-image variation switched off.
    pub fn without_variation(mut self) -> Self {
        self.pose_shift = 0.0;
        self.landmark_jitter = 0.0;
        self.illumination = 0.0;
        self.pixel_noise = 0.0;
        self
    }

    /// Upper bound on the distance between a rendered landmark and the
    /// identity's layout.
    pub fn max_landmark_drift(&self) -> f64 {
        let jitter = if self.landmark_jitter > 0.0 {
            self.landmark_jitter_clip
        } else {
            0.0
        };
        std::f64::consts::SQRT_2 * (self.pose_shift + jitter)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size {} < 16", self.image_size)));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config("latent_dim must be at least 2".into()));
        }
        let non_negative = [
            self.geometry_scale,
            self.palette_scale,
            self.texture_scale,
            self.pose_shift,
            self.landmark_jitter,
            self.landmark_jitter_clip,
            self.illumination,
            self.pixel_noise,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("synthesis scales must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// An identity: its latent code and the appearance derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityModel {
    pub identity_id: u32,
    pub latent: Vec<f64>,
    pub layout: Vec<Point>,
    pub palette: [f64; PALETTE_LEN],
    pub texture: [f64; TEXTURE_MODES.len()],
}

/// A rendered face with its landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pub pixels: GrayImage,
    pub landmarks: Vec<Point>,
    pub identity_id: u32,
}

pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// The latent-to-appearance model shared by all identities of one world seed.
#[derive(Debug, Clone)]
pub struct FaceSpace {
    config: SynthConfig,
    seed: u64,
    geometry_map: Vec<f64>,
    palette_map: Vec<f64>,
    texture_map: Vec<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()
}

fn apply(map: &[f64], latent: &[f64], row: usize) -> f64 {
    let l = latent.len();
    map[row * l..(row + 1) * l].iter().zip(latent).map(|(m, z)| m * z).sum()
}

impl FaceSpace {
    pub fn new(config: SynthConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "face-space"));
        let l = config.latent_dim;
        Ok(FaceSpace {
            geometry_map: gaussian_matrix(2 * NUM_LANDMARKS, l, &mut rng),
            palette_map: gaussian_matrix(PALETTE_LEN, l, &mut rng),
            texture_map: gaussian_matrix(TEXTURE_MODES.len(), l, &mut rng),
            config,
            seed,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Identity `identity_id` of this world; deterministic per `(seed, id)`.
    pub fn make_identity(&self, identity_id: u32) -> IdentityModel {
        let mut rng = seed::rng(seed::derive_index(
            seed::derive(self.seed, "identity"),
            u64::from(identity_id),
        ));
        let mut latent: Vec<f64> = (0..self.config.latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        latent.iter_mut().for_each(|v| *v /= n);
        self.model_from_latent(identity_id, latent)
    }

    /// Builds the appearance for an arbitrary unit latent.
    pub fn model_from_latent(&self, identity_id: u32, latent: Vec<f64>) -> IdentityModel {
        let c = &self.config;
        let s = c.image_size as f64 / 32.0;
        let hi = c.image_size as f64 - 2.0;
        let layout = BASE_LAYOUT
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                let dx = c.geometry_scale * apply(&self.geometry_map, &latent, 2 * k);
                let dy = c.geometry_scale * apply(&self.geometry_map, &latent, 2 * k + 1);
                Point::new((x * s + dx).clamp(1.0, hi), (y * s + dy).clamp(1.0, hi))
            })
            .collect();
        let mut palette = BASE_PALETTE;
        for (k, p) in palette.iter_mut().enumerate() {
            *p += c.palette_scale * apply(&self.palette_map, &latent, k);
        }
        let mut texture = [0.0; TEXTURE_MODES.len()];
        for (k, t) in texture.iter_mut().enumerate() {
            *t = c.texture_scale * apply(&self.texture_map, &latent, k);
        }
        IdentityModel {
            identity_id,
            latent,
            layout,
            palette,
            texture,
        }
    }

    /// Renders one image of `identity`; all per-image variation is drawn from
    /// `variation_seed`. Pixels are quantised to 8-bit levels.
    pub fn render(&self, identity: &IdentityModel, variation_seed: u64) -> FaceImage {
        let c = &self.config;
        let mut rng = seed::rng(variation_seed);
        let size = c.image_size;
        let hi = size as f64 - 2.0;

        let (sx, sy) = if c.pose_shift > 0.0 {
            (
                rng.random_range(-c.pose_shift..=c.pose_shift),
                rng.random_range(-c.pose_shift..=c.pose_shift),
            )
        } else {
            (0.0, 0.0)
        };
        let clip = c.landmark_jitter_clip;
        let mut jitter = || -> f64 {
            if c.landmark_jitter > 0.0 {
                let j: f64 = StandardNormal.sample(&mut rng);
                (j * c.landmark_jitter).clamp(-clip, clip)
            } else {
                0.0
            }
        };
        let landmarks: Vec<Point> = identity
            .layout
            .iter()
            .map(|p| {
                let x = p.x + sx + jitter();
                let y = p.y + sy + jitter();
                Point::new(x.clamp(1.0, hi), y.clamp(1.0, hi))
            })
            .collect();
        let (gain, offset) = if c.illumination > 0.0 {
            (
                1.0 + rng.random_range(-c.illumination..=c.illumination),
                0.5 * rng.random_range(-c.illumination..=c.illumination),
            )
        } else {
            (1.0, 0.0)
        };

        let mut pixels = paint(&landmarks, &identity.palette, &identity.texture, size);
        for v in pixels.pixels_mut() {
            let noise = if c.pixel_noise > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                n * c.pixel_noise
            } else {
                0.0
            };
            *v = gain * *v + offset + noise;
        }
        pixels.quantize();
        FaceImage {
            pixels,
            landmarks,
            identity_id: identity.identity_id,
        }
    }

    /// Interpolates two identity latents, `normalize((1-α)·a + α·b)`, and renders
    /// the result. The returned image carries `a`'s identity id.
    pub fn latent_interpolate(
        &self,
        a: &IdentityModel,
        b: &IdentityModel,
        alpha: f64,
        variation_seed: u64,
    ) -> Result<(Vec<f64>, FaceImage)> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} not in [0, 1]")));
        }
        if a.latent.len() != b.latent.len() {
            return Err(Error::Shape("latent dimensions differ".into()));
        }
        let latent = if alpha == 0.0 {
            a.latent.clone()
        } else if alpha == 1.0 {
            b.latent.clone()
        } else {
            let mut mix: Vec<f64> = a
                .latent
                .iter()
                .zip(&b.latent)
                .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
                .collect();
            let n = mix.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-6 {
                return Err(Error::DegenerateLatent(n));
            }
            mix.iter_mut().for_each(|v| *v /= n);
            mix
        };
        let model = self.model_from_latent(a.identity_id, latent.clone());
        Ok((latent, self.render(&model, variation_seed)))
    }
}

fn gauss(dx: f64, dy: f64, sx: f64, sy: f64) -> f64 {
    (-0.5 * ((dx / sx).powi(2) + (dy / sy).powi(2))).exp()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.x - (a.x + t * vx)).hypot(p.y - (a.y + t * vy))
}

/// Noise-free face pattern placed on the given landmarks.
fn paint(lm: &[Point], palette: &[f64; PALETTE_LEN], texture: &[f64; 6], size: usize) -> GrayImage {
    let s = size as f64 / 32.0;
    let mut img = GrayImage::new(size, size);
    let cx = 0.5 * (lm[11].x + lm[12].x);
    let cy = 0.5 * (lm[10].y + lm[7].y);
    let rx = 0.5 * (lm[12].x - lm[11].x).abs() + 2.5 * s;
    let ry = 0.5 * (lm[7].y - lm[10].y).abs() + 2.0 * s;
    let [skin, eye, brow, mouth, nose, cheek, chin, forehead, jaw, background] = *palette;
    let w = size as f64;
    for yi in 0..size {
        for xi in 0..size {
            let (x, y) = (xi as f64, yi as f64);
            let p = Point::new(x, y);
            let r = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
            let mask = 1.0 / (1.0 + (-(1.0 - r) * 8.0).exp());
            let mut tex = 0.0;
            for (amp, (kx, ky)) in texture.iter().zip(TEXTURE_MODES) {
                tex += amp * (std::f64::consts::PI * kx * x / w).cos() * (std::f64::consts::PI * ky * y / w).cos();
            }
            let mut face = skin + tex;
            face += cheek
                * (gauss(x - lm[8].x, y - lm[8].y, 2.2 * s, 2.2 * s)
                    + gauss(x - lm[9].x, y - lm[9].y, 2.2 * s, 2.2 * s));
            face -= eye
                * (gauss(x - lm[0].x, y - lm[0].y, 1.2 * s, 1.0 * s)
                    + gauss(x - lm[1].x, y - lm[1].y, 1.2 * s, 1.0 * s));
            face -= brow
                * (gauss(x - lm[2].x, y - lm[2].y, 2.0 * s, 0.7 * s)
                    + gauss(x - lm[3].x, y - lm[3].y, 2.0 * s, 0.7 * s));
            face += nose * gauss(x - lm[4].x, y - lm[4].y, 1.0 * s, 1.8 * s);
            let dm = segment_distance(p, lm[5], lm[6]);
            face -= mouth * (-0.5 * (dm / (0.8 * s)).powi(2)).exp();
            face += chin * gauss(x - lm[7].x, y - lm[7].y, 1.5 * s, 1.5 * s);
            face += forehead * gauss(x - lm[10].x, y - lm[10].y, 2.5 * s, 2.5 * s);
            face -= jaw
                * (gauss(x - lm[11].x, y - lm[11].y, 1.8 * s, 1.8 * s)
                    + gauss(x - lm[12].x, y - lm[12].y, 1.8 * s, 1.8 * s));
            img.set(xi, yi, background * (1.0 - mask) + mask * face);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> FaceSpace {
        FaceSpace::new(SynthConfig::default(), 17).unwrap()
    }

    #[test]
    fn identities_are_deterministic_and_unit_norm() {
        let s = space();
        let a = s.make_identity(3);
        assert_eq!(a, s.make_identity(3));
        let n = a.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_ne!(a.latent, s.make_identity(4).latent);
    }

    #[test]
    fn zero_variation_renders_identically() {
        let s = FaceSpace::new(SynthConfig::default().without_variation(), 17).unwrap();
        let id = s.make_identity(0);
        assert_eq!(s.render(&id, 1), s.render(&id, 2));
    }

    #[test]
    fn renders_differ_but_landmarks_stay_close() {
        let s = space();
        let id = s.make_identity(5);
        let a = s.render(&id, 1);
        let b = s.render(&id, 2);
        assert!(a.pixels.max_abs_diff(&b.pixels) > 0.0);
        let bound = s.config().max_landmark_drift();
        for ((p, q), l) in a.landmarks.iter().zip(&b.landmarks).zip(&id.layout) {
            assert!(p.distance(*l) <= bound + 1e-12);
            assert!(p.distance(*q) <= 2.0 * bound + 1e-12);
        }
    }

    #[test]
    fn pixels_in_unit_range() {
        let s = space();
        let img = s.render(&s.make_identity(9), 4);
        assert!(img.pixels.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img.landmarks.len(), NUM_LANDMARKS);
    }

    #[test]
    fn latent_endpoints_and_midpoint() {
        let s = space();
        let a = s.make_identity(1);
        let b = s.make_identity(2);
        let (_, img0) = s.latent_interpolate(&a, &b, 0.0, 99).unwrap();
        assert_eq!(img0, s.render(&a, 99));
        let (_, img1) = s.latent_interpolate(&a, &b, 1.0, 99).unwrap();
        assert_eq!(img1.pixels, s.render(&b, 99).pixels);

        // Orthogonal latents meet at 45 degrees.
        let mut e1 = vec![0.0; 16];
        e1[0] = 1.0;
        let mut e2 = vec![0.0; 16];
        e2[1] = 1.0;
        let ma = s.model_from_latent(0, e1.clone());
        let mb = s.model_from_latent(1, e2.clone());
        let (mid, _) = s.latent_interpolate(&ma, &mb, 0.5, 0).unwrap();
        let q = std::f64::consts::FRAC_PI_4;
        assert!((angle_between(&mid, &e1) - q).abs() < 1e-9);
        assert!((angle_between(&mid, &e2) - q).abs() < 1e-9);
    }

    #[test]
    fn antipodal_latents_are_degenerate() {
        let s = space();
        let a = s.make_identity(1);
        let neg: Vec<f64> = a.latent.iter().map(|v| -v).collect();
        let b = s.model_from_latent(2, neg);
        assert!(matches!(
            s.latent_interpolate(&a, &b, 0.5, 0),
            Err(Error::DegenerateLatent(_))
        ));
        assert!(s.latent_interpolate(&a, &b, 1.5, 0).is_err());
    }
}
