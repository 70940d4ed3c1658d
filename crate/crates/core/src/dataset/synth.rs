//! Synthetic stand-in for a cine cardiac acquisition.
//!
//! Each subject is an ellipsoid-like surface whose shape follows one periodic
//! cycle over frames `t = 1..=M` with phase `φ(t) = 2π (t - ½) / M`:
//!
//! * x and z semi-axes scale by `1 + α cos φ` and `1 + γ cos φ`;
//! * the out-of-plane y semi-axis scales by `1 + α_y cos φ + δ cos 2φ`;
//! * a localized radial bulge of amplitude `β sin φ` sits on the wall.
//!
//! Frames `t` and `M - t + 1` therefore share their semi-axes and differ only
//! in the sign of the bulge. The cosine extremes (frame 1, frame M and the
//! mid-cycle frames) play the role of diastole and systole.
//!
//! A surface point for unit direction `u` is
//! `offset + semi_axes ⊙ u · (1 + bulge · exp((u·d - 1) / κ))`, with `d` the
//! bulge direction. Vertex `i` always uses the same direction `u_i` (a
//! Fibonacci lattice), which gives SSM-style correspondence across frames.
//!
//! The image is the x–z section through the shape centre (rows run along z,
//! columns along x), rendered with 4×4 supersampled coverage, a per-frame gain
//! and Gaussian noise, quantized to 16 bits. The 2D landmarks are the same
//! section's contour resampled by arc length, with small seeded jitter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GrayImage, Sample, SubjectDataset};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Physical extent of the rendered field of view (rows, columns) in mm.
pub const FIELD_OF_VIEW_MM: (f64, f64) = (172.8, 230.4);

const SUPERSAMPLE: usize = 4;
const BACKGROUND: f64 = 120.0;
const FOREGROUND: f64 = 900.0;
const PIXEL_NOISE_SD: f64 = 15.0;
const LANDMARK_NOISE_SD_MM: f64 = 0.25;
const CONTOUR_SAMPLES: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_frames: usize,
    pub num_y: usize,
    pub height: usize,
    pub width: usize,
    pub landmark_count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_frames: 20,
            num_y: 800,
            height: 192,
            width: 256,
            landmark_count: 64,
        }
    }
}

impl SynthConfig {
    /// Small profile: 5 frames, 100 vertices, 48×64 images.
    pub fn quick() -> Self {
        Self {
            num_frames: 5,
            num_y: 100,
            height: 48,
            width: 64,
            landmark_count: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 3 {
            return Err(Error::invalid(format!(
                "synthetic subjects need at least 3 frames, got {}",
                self.num_frames
            )));
        }
        if self.num_y < 100 {
            return Err(Error::invalid(format!(
                "synthetic subjects need numY >= 100, got {}",
                self.num_y
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid(format!(
                "image extents {}x{} are too small",
                self.height, self.width
            )));
        }
        if self.landmark_count < 3 {
            return Err(Error::invalid("need at least 3 contour landmarks"));
        }
        Ok(())
    }
}

/// Per-subject shape and motion parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeParams {
    /// Rest semi-axes (x, y, z) in mm; z is the long axis.
    pub semi_axes: [f64; 3],
    /// Cosine amplitudes of the x and z semi-axes.
    pub in_plane_amplitude: [f64; 2],
    /// Cosine and second-harmonic amplitudes of the y semi-axis.
    pub out_of_plane_amplitude: [f64; 2],
    pub bulge_amplitude: f64,
    /// Bulge direction angle in the x–z plane, from +x towards +z.
    pub bulge_angle: f64,
    pub bulge_width: f64,
    pub offset: Point3,
}

impl ShapeParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            semi_axes: [
                rng.random_range(30.0..40.0),
                rng.random_range(28.0..38.0),
                rng.random_range(45.0..60.0),
            ],
            in_plane_amplitude: [rng.random_range(0.12..0.18), rng.random_range(0.08..0.12)],
            out_of_plane_amplitude: [rng.random_range(0.10..0.15), rng.random_range(0.06..0.10)],
            bulge_amplitude: rng.random_range(0.06..0.10),
            bulge_angle: rng.random_range(-PI / 3.0..PI / 3.0),
            bulge_width: 0.2,
            offset: [
                rng.random_range(-8.0..8.0),
                rng.random_range(-8.0..8.0),
                rng.random_range(-8.0..8.0),
            ],
        }
    }

    pub fn phase(frame: usize, num_frames: usize) -> f64 {
        2.0 * PI * (frame as f64 - 0.5) / num_frames as f64
    }

    pub fn semi_axes_at(&self, frame: usize, num_frames: usize) -> [f64; 3] {
        let phi = Self::phase(frame, num_frames);
        let [a, b, c] = self.semi_axes;
        let [ax, az] = self.in_plane_amplitude;
        let [ay, harmonic] = self.out_of_plane_amplitude;
        [
            a * (1.0 + ax * phi.cos()),
            b * (1.0 + ay * phi.cos() + harmonic * (2.0 * phi).cos()),
            c * (1.0 + az * phi.cos()),
        ]
    }

    pub fn bulge_at(&self, frame: usize, num_frames: usize) -> f64 {
        self.bulge_amplitude * Self::phase(frame, num_frames).sin()
    }

    pub fn bulge_direction(&self) -> Point3 {
        [self.bulge_angle.cos(), 0.0, self.bulge_angle.sin()]
    }

    /// Radial scale factor `1 + bulge · exp((u·d - 1) / κ)` for unit `u`.
    pub fn radial_scale(&self, u: &Point3, bulge: f64) -> f64 {
        let d = self.bulge_direction();
        let cos = u[0] * d[0] + u[1] * d[1] + u[2] * d[2];
        1.0 + bulge * ((cos - 1.0) / self.bulge_width).exp()
    }

    pub fn surface_point(&self, u: &Point3, frame: usize, num_frames: usize) -> Point3 {
        let axes = self.semi_axes_at(frame, num_frames);
        let s = self.radial_scale(u, self.bulge_at(frame, num_frames));
        [0, 1, 2].map(|k| self.offset[k] + axes[k] * u[k] * s)
    }

    /// Whether the in-plane point `(x, z)` (mm, absolute) lies inside the
    /// section at `y = offset.y`.
    pub fn section_contains(&self, x: f64, z: f64, frame: usize, num_frames: usize) -> bool {
        let axes = self.semi_axes_at(frame, num_frames);
        let q = [(x - self.offset[0]) / axes[0], 0.0, (z - self.offset[2]) / axes[2]];
        let rho = (q[0] * q[0] + q[2] * q[2]).sqrt();
        if rho == 0.0 {
            return true;
        }
        let u = [q[0] / rho, 0.0, q[2] / rho];
        rho <= self.radial_scale(&u, self.bulge_at(frame, num_frames))
    }

    /// Section contour resampled to `count` points equally spaced in arc
    /// length, starting on the +x side and running towards +z.
    pub fn section_contour(&self, frame: usize, num_frames: usize, count: usize) -> Vec<[f64; 2]> {
        let dense: Vec<[f64; 2]> = (0..=CONTOUR_SAMPLES)
            .map(|i| {
                let theta = 2.0 * PI * i as f64 / CONTOUR_SAMPLES as f64;
                let u = [theta.cos(), 0.0, theta.sin()];
                let p = self.surface_point(&u, frame, num_frames);
                [p[0], p[2]]
            })
            .collect();
        let mut cumulative = vec![0.0];
        for w in dense.windows(2) {
            let step = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + step);
        }
        let total = *cumulative.last().unwrap();
        let mut out = Vec::with_capacity(count);
        let mut seg = 0;
        for k in 0..count {
            let target = total * k as f64 / count as f64;
            while cumulative[seg + 1] < target {
                seg += 1;
            }
            let span = cumulative[seg + 1] - cumulative[seg];
            let f = if span > 0.0 { (target - cumulative[seg]) / span } else { 0.0 };
            let (a, b) = (dense[seg], dense[seg + 1]);
            out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        }
        out
    }
}

/// `n` near-uniform unit directions on the sphere (Fibonacci lattice).
pub fn fibonacci_directions(n: usize) -> Vec<Point3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden * i as f64;
            [r * theta.cos(), r * theta.sin(), z]
        })
        .collect()
}

/// Frames at the cycle extremes: the first and last frame (diastole) and the
/// mid-cycle frame(s) (systole).
pub fn boundary_frames(num_frames: usize) -> Vec<usize> {
    let mut frames = vec![1, num_frames];
    if num_frames % 2 == 1 {
        frames.push(num_frames.div_ceil(2));
    } else {
        frames.extend([num_frames / 2, num_frames / 2 + 1]);
    }
    frames.sort_unstable();
    frames.dedup();
    frames
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded synthetic subject; frames can be regenerated independently.
#[derive(Clone, Debug)]
pub struct SyntheticSubject {
    seed: u64,
    config: SynthConfig,
    params: ShapeParams,
    directions: Vec<Point3>,
}

impl SyntheticSubject {
    pub fn new(seed: u64, config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
        let params = ShapeParams::sample(&mut rng);
        let directions = fibonacci_directions(config.num_y);
        Ok(Self {
            seed,
            config,
            params,
            directions,
        })
    }

    pub fn params(&self) -> &ShapeParams {
        &self.params
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn cloud(&self, frame: usize) -> PointCloud {
        let m = self.config.num_frames;
        let points = self
            .directions
            .iter()
            .map(|u| self.params.surface_point(u, frame, m))
            .collect();
        PointCloud::new(points).expect("finite surface points")
    }

    pub fn image(&self, frame: usize) -> GrayImage {
        let SynthConfig {
            num_frames: m,
            height,
            width,
            ..
        } = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 2 * frame as u64 - 1));
        let gain = rng.random_range(0.9..1.1);
        let noise = Normal::new(0.0, PIXEL_NOISE_SD).expect("valid sd");
        let (fov_rows, fov_cols) = FIELD_OF_VIEW_MM;
        let (dz, dx) = (fov_rows / height as f64, fov_cols / width as f64);
        let sub = SUPERSAMPLE as f64;

        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let mut inside = 0usize;
                for sr in 0..SUPERSAMPLE {
                    let z = fov_rows / 2.0 - (r as f64 + (sr as f64 + 0.5) / sub) * dz;
                    for sc in 0..SUPERSAMPLE {
                        let x = (c as f64 + (sc as f64 + 0.5) / sub) * dx - fov_cols / 2.0;
                        if self.params.section_contains(x, z, frame, m) {
                            inside += 1;
                        }
                    }
                }
                let coverage = inside as f64 / (sub * sub);
                let value = gain * (BACKGROUND + FOREGROUND * coverage) + noise.sample(&mut rng);
                pixels.push(value.round().clamp(0.0, 65535.0));
            }
        }
        GrayImage::new(height, width, pixels).expect("extents from config")
    }

    pub fn landmarks(&self, frame: usize) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 2 * frame as u64));
        let noise = Normal::new(0.0, LANDMARK_NOISE_SD_MM).expect("valid sd");
        self.params
            .section_contour(frame, self.config.num_frames, self.config.landmark_count)
            .into_iter()
            .map(|[x, z]| [x + noise.sample(&mut rng), z + noise.sample(&mut rng)])
            .collect()
    }

    pub fn frame(&self, frame: usize) -> Sample {
        Sample {
            frame_index: frame,
            image: self.image(frame),
            cloud: self.cloud(frame),
            landmarks: Some(self.landmarks(frame)),
        }
    }

    pub fn dataset(&self, subject_id: impl Into<String>) -> Result<SubjectDataset> {
        let samples = (1..=self.config.num_frames).map(|t| self.frame(t)).collect();
        SubjectDataset::new(
            subject_id,
            self.config.height,
            self.config.width,
            self.config.num_y,
            samples,
        )
    }
}

/// One synthetic subject with id `synth-<seed>`.
pub fn generate_synthetic_subject(seed: u64, config: &SynthConfig) -> Result<SubjectDataset> {
    SyntheticSubject::new(seed, config.clone())?.dataset(format!("synth-{seed}"))
}

/// Seed of the `k`-th (0-based) subject of a cohort.
pub fn cohort_subject_seed(cohort_seed: u64, k: usize) -> u64 {
    mix_seed(cohort_seed, 1_000_003 + k as u64)
}

/// `subjects` synthetic subjects named `subject01`, `subject02`, ….
pub fn generate_cohort(
    cohort_seed: u64,
    subjects: usize,
    config: &SynthConfig,
) -> Result<Vec<SubjectDataset>> {
    (0..subjects)
        .map(|k| {
            SyntheticSubject::new(cohort_subject_seed(cohort_seed, k), config.clone())?
                .dataset(format!("subject{:02}", k + 1))
        })
        .collect()
}
