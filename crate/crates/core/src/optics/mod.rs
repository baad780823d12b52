//! LED-array microscope image formation.
//!
//! A thin translucent sample is a phase screen. Each LED is a mutually
//! incoherent tilted plane wave; its image is the pupil-filtered field
//! intensity, box-integrated onto the detector. Images under any pattern
//! are weighted sums of the single-LED images.

mod fourier;
mod simulate;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use fourier::{signed_bin, Fft2};
pub use simulate::{brightfield_reference, simulate_single_led, simulate_stack, Simulator};

/// Sample thickness profile in micrometers.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightMap {
    height: usize,
    width: usize,
    thickness_um: Vec<f32>,
    pixel_pitch_um: f64,
}

impl HeightMap {
    pub fn new(height: usize, width: usize, thickness_um: Vec<f32>, pixel_pitch_um: f64) -> Result<Self> {
        if thickness_um.len() != height * width {
            return Err(Error::dim(format!(
                "height map {height}×{width} with {} values",
                thickness_um.len()
            )));
        }
        if thickness_um.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::Validation("thickness must be finite and ≥ 0".into()));
        }
        if !(pixel_pitch_um > 0.0) {
            return Err(Error::Validation(format!("pixel pitch {pixel_pitch_um} µm")));
        }
        Ok(Self {
            height,
            width,
            thickness_um,
            pixel_pitch_um,
        })
    }

    pub fn flat(height: usize, width: usize, pixel_pitch_um: f64) -> Self {
        Self {
            height,
            width,
            thickness_um: vec![0.0; height * width],
            pixel_pitch_um,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn thickness_um(&self) -> &[f32] {
        &self.thickness_um
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }
}

/// Maps a normalized grayscale image to a thickness profile:
/// `thickness = pixel × max_thickness`.
pub fn height_from_image(
    pixels: &[f32],
    height: usize,
    width: usize,
    max_thickness_um: f64,
    pixel_pitch_um: f64,
) -> Result<HeightMap> {
    if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!(
            "pixel value {bad} outside [0, 1]"
        )));
    }
    if !(max_thickness_um >= 0.0) {
        return Err(Error::Validation(format!(
            "max thickness {max_thickness_um} µm"
        )));
    }
    let t = pixels
        .iter()
        .map(|&p| (p as f64 * max_thickness_um) as f32)
        .collect();
    HeightMap::new(height, width, t, pixel_pitch_um)
}

/// Physical LED layout below the sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LedGeometry {
    /// `(x, y)` in millimeters, in the array plane.
    pub positions_mm: Vec<(f64, f64)>,
    pub distance_mm: f64,
    pub pitch_mm: f64,
    /// Spectral channels per LED. Stack slice `k·channels + c` is LED `k`,
    /// channel `c`.
    pub channels: usize,
    /// Per-channel wavelengths; empty means every channel uses the optics
    /// wavelength.
    pub channel_wavelengths_um: Vec<f64>,
}

impl LedGeometry {
    /// `side × side` grid centered on the optical axis, row-major with `y`
    /// increasing down the rows and `x` along a row.
    pub fn square_grid(side: usize, pitch_mm: f64, distance_mm: f64) -> Self {
        let half = (side as f64 - 1.0) / 2.0;
        let positions_mm = (0..side * side)
            .map(|i| {
                let (r, c) = ((i / side) as f64, (i % side) as f64);
                ((c - half) * pitch_mm, (r - half) * pitch_mm)
            })
            .collect();
        Self {
            positions_mm,
            distance_mm,
            pitch_mm,
            channels: 1,
            channel_wavelengths_um: Vec::new(),
        }
    }

    /// 5×5 LEDs at 6 mm pitch, 50 mm below the sample.
    pub fn mnist() -> Self {
        Self::square_grid(5, 6.0, 50.0)
    }

    pub fn n_leds(&self) -> usize {
        self.positions_mm.len()
    }

    pub fn n_slices(&self) -> usize {
        self.n_leds() * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions_mm.is_empty() {
            return Err(Error::Validation("LED geometry has no positions".into()));
        }
        if !(self.distance_mm > 0.0) {
            return Err(Error::Validation(format!(
                "LED distance {} mm",
                self.distance_mm
            )));
        }
        if self.channels == 0 {
            return Err(Error::Validation("LED geometry has zero channels".into()));
        }
        if !self.channel_wavelengths_um.is_empty()
            && self.channel_wavelengths_um.len() != self.channels
        {
            return Err(Error::Validation(format!(
                "{} channel wavelengths for {} channels",
                self.channel_wavelengths_um.len(),
                self.channels
            )));
        }
        for i in 0..self.positions_mm.len() {
            for j in 0..i {
                if self.positions_mm[i] == self.positions_mm[j] {
                    return Err(Error::Validation(format!(
                        "LEDs {j} and {i} share position {:?}",
                        self.positions_mm[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Direction sines `(sin θx, sin θy)` of LED `k`'s plane wave at the
    /// sample: `xₖ / rₖ`, `yₖ / rₖ`, `rₖ = sqrt(xₖ² + yₖ² + d²)`.
    pub fn direction_sines(&self, k: usize) -> (f64, f64) {
        let (x, y) = self.positions_mm[k];
        let r = (x * x + y * y + self.distance_mm * self.distance_mm).sqrt();
        (x / r, y / r)
    }

    /// Sine of the angle between LED `k`'s wave and the optical axis.
    pub fn sin_theta(&self, k: usize) -> f64 {
        let (sx, sy) = self.direction_sines(k);
        (sx * sx + sy * sy).sqrt()
    }

    pub fn is_brightfield(&self, k: usize, optics: &OpticsSpec) -> bool {
        self.sin_theta(k) < optics.numerical_aperture
    }

    pub fn channel_wavelength(&self, channel: usize, optics: &OpticsSpec) -> f64 {
        self.channel_wavelengths_um
            .get(channel)
            .copied()
            .unwrap_or(optics.wavelength_um)
    }
}

/// Imaging system parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticsSpec {
    pub numerical_aperture: f64,
    pub magnification: f64,
    pub wavelength_um: f64,
    /// Detector `(rows, cols)`.
    pub detector_pixels: (usize, usize),
    pub detector_pitch_um: f64,
    /// Sample minus ambient refractive index.
    pub refractive_index_delta: f64,
    /// Readout noise standard deviation as a fraction of the mean
    /// brightfield intensity.
    pub noise_sigma: f64,
    /// Internal field grid `(rows, cols)`.
    pub simulation_grid: (usize, usize),
}

impl Default for OpticsSpec {
    fn default() -> Self {
        Self::mnist()
    }
}

impl OpticsSpec {
    /// 0.175 NA, 5× objective onto a 28×28 detector of 7 µm pixels, green
    /// light, a 64×64 internal grid.
    pub fn mnist() -> Self {
        Self {
            numerical_aperture: 0.175,
            magnification: 5.0,
            wavelength_um: 0.532,
            detector_pixels: (28, 28),
            detector_pitch_um: 7.0,
            refractive_index_delta: 0.5,
            noise_sigma: 0.01,
            simulation_grid: (64, 64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let na = self.numerical_aperture;
        if !(na > 0.0 && na < 1.0) {
            return Err(Error::Validation(format!("numerical aperture {na}")));
        }
        if !(self.wavelength_um > 0.0) {
            return Err(Error::Validation(format!(
                "wavelength {} µm",
                self.wavelength_um
            )));
        }
        if !(self.magnification > 0.0) || !(self.detector_pitch_um > 0.0) {
            return Err(Error::Validation(
                "magnification and detector pitch must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "noise sigma {}",
                self.noise_sigma
            )));
        }
        let (dh, dw) = self.detector_pixels;
        let (sh, sw) = self.simulation_grid;
        if dh == 0 || dw == 0 {
            return Err(Error::Validation("empty detector".into()));
        }
        if !sh.is_power_of_two() || !sw.is_power_of_two() || sh < 2 * dh || sw < 2 * dw {
            return Err(Error::Validation(format!(
                "simulation grid {sh}×{sw} must be powers of two and at least twice the {dh}×{dw} detector"
            )));
        }
        Ok(())
    }

    /// Detector pixel size referred to the sample plane.
    pub fn object_pixel_pitch_um(&self) -> f64 {
        self.detector_pitch_um / self.magnification
    }

    /// Object-side field of view `(rows, cols)` in micrometers.
    pub fn field_of_view_um(&self) -> (f64, f64) {
        let p = self.object_pixel_pitch_um();
        (
            self.detector_pixels.0 as f64 * p,
            self.detector_pixels.1 as f64 * p,
        )
    }
}

/// Single-LED intensity images `Îₖ` of one sample, `depth × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerLedStack {
    depth: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PerLedStack {
    pub fn new(depth: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != depth * height * width {
            return Err(Error::dim(format!(
                "stack {depth}×{height}×{width} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Validation("stack intensities must be ≥ 0".into()));
        }
        Ok(Self {
            depth,
            height,
            width,
            data,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn slice(&self, k: usize) -> &[f32] {
        let p = self.pixels();
        &self.data[k * p..(k + 1) * p]
    }
}

/// LED brightnesses `wₖ ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationPattern {
    weights: Vec<f32>,
}

impl IlluminationPattern {
    pub fn new(weights: Vec<f32>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Validation(format!(
                "LED brightness {w} outside [0, 1]"
            )));
        }
        Ok(Self { weights })
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[k] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `O = Σₖ wₖ Îₖ` over raw slice data (`weights.len()` slices of
/// `pixels` values each).
pub fn compose_slices(slices: &[f32], pixels: usize, weights: &[f32]) -> Result<Vec<f32>> {
    if slices.len() != weights.len() * pixels {
        return Err(Error::dim(format!(
            "pattern of {} weights for {} slices",
            weights.len(),
            slices.len() / pixels.max(1)
        )));
    }
    let mut acc = vec![0f64; pixels];
    for (w, s) in weights.iter().zip(slices.chunks_exact(pixels)) {
        let w = *w as f64;
        if w == 0.0 {
            continue;
        }
        acc.iter_mut().zip(s).for_each(|(a, &x)| *a += w * x as f64);
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// Noiseless observation of `stack` under `pattern`. The differentiable
/// counterpart is [`crate::numerics::Tape::compose`].
pub fn compose(stack: &PerLedStack, pattern: &IlluminationPattern) -> Result<Vec<f32>> {
    if pattern.len() != stack.depth() {
        return Err(Error::dim(format!(
            "pattern of {} weights for a {}-slice stack",
            pattern.len(),
            stack.depth()
        )));
    }
    compose_slices(stack.data(), stack.pixels(), pattern.weights())
}

/// Additive zero-mean Gaussian readout noise, clamped at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadoutNoise {
    /// Absolute standard deviation.
    pub sigma: f64,
}

impl ReadoutNoise {
    /// `sigma = noise_sigma × reference`, where `reference` is the mean
    /// brightfield intensity.
    pub fn new(optics: &OpticsSpec, reference_intensity: f64) -> Self {
        Self {
            sigma: optics.noise_sigma * reference_intensity,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f32> {
        if self.sigma == 0.0 {
            return vec![0.0; n];
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma is finite and ≥ 0");
        (0..n).map(|_| normal.sample(rng) as f32).collect()
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &mut [f32], rng: &mut R) {
        if self.sigma == 0.0 {
            return;
        }
        let noise = self.sample(image.len(), rng);
        for (v, n) in image.iter_mut().zip(noise) {
            *v = (*v + n).max(0.0);
        }
    }
}

pub fn add_readout_noise<R: Rng + ?Sized>(
    image: &[f32],
    optics: &OpticsSpec,
    reference_intensity: f64,
    rng: &mut R,
) -> Vec<f32> {
    let mut out = image.to_vec();
    ReadoutNoise::new(optics, reference_intensity).apply(&mut out, rng);
    out
}
