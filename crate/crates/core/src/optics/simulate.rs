use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::optics::fourier::{signed_bin, Fft2};
use crate::optics::{HeightMap, LedGeometry, OpticsSpec, PerLedStack};

/// Precomputed per-configuration state for rendering single-LED images.
///
/// Tilted plane waves are snapped to the nearest frequency bin of the
/// simulation grid so the field is exactly periodic; without this, spectral
/// leakage of an off-grid carrier bleeds light from darkfield LEDs through
/// the pupil.
#[derive(Debug)]
pub struct Simulator {
    geometry: LedGeometry,
    optics: OpticsSpec,
    fft: Fft2,
    /// Per stack slice: carrier plane wave on the simulation grid.
    carriers: Vec<Vec<Complex64>>,
    /// Per channel: pupil transmission on the unshifted frequency grid.
    pupils: Vec<Vec<bool>>,
    row_weights: Vec<Vec<(usize, f64)>>,
    col_weights: Vec<Vec<(usize, f64)>>,
}

/// Area-overlap weights mapping `fine` cells onto `coarse` cells covering the
/// same extent; each coarse cell's weights sum to 1.
fn box_weights(coarse: usize, fine: usize) -> Vec<Vec<(usize, f64)>> {
    let r = fine as f64 / coarse as f64;
    (0..coarse)
        .map(|i| {
            let (lo, hi) = (i as f64 * r, (i + 1) as f64 * r);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(fine);
            (first..last)
                .filter_map(|j| {
                    let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap / r))
                })
                .collect()
        })
        .collect()
}

impl Simulator {
    pub fn new(geometry: &LedGeometry, optics: &OpticsSpec) -> Result<Self> {
        geometry.validate()?;
        optics.validate()?;
        for c in 0..geometry.channels {
            let wl = geometry.channel_wavelength(c, optics);
            if !(wl > 0.0) {
                return Err(Error::Validation(format!(
                    "channel {c} wavelength {wl} µm"
                )));
            }
        }
        let (sh, sw) = optics.simulation_grid;
        let (fov_y, fov_x) = optics.field_of_view_um();

        let mut carriers = Vec::with_capacity(geometry.n_slices());
        for k in 0..geometry.n_leds() {
            let (sx, sy) = geometry.direction_sines(k);
            for c in 0..geometry.channels {
                let wl = geometry.channel_wavelength(c, optics);
                let nx = (sx / wl * fov_x).round();
                let ny = (sy / wl * fov_y).round();
                let field = (0..sh * sw)
                    .map(|i| {
                        let (y, x) = ((i / sw) as f64, (i % sw) as f64);
                        Complex64::from_polar(1.0, 2.0 * PI * (nx * x / sw as f64 + ny * y / sh as f64))
                    })
                    .collect();
                carriers.push(field);
            }
        }

        let pupils = (0..geometry.channels)
            .map(|c| {
                let cutoff = optics.numerical_aperture / geometry.channel_wavelength(c, optics);
                (0..sh * sw)
                    .map(|i| {
                        let fy = signed_bin(i / sw, sh) / fov_y;
                        let fx = signed_bin(i % sw, sw) / fov_x;
                        (fx * fx + fy * fy).sqrt() <= cutoff
                    })
                    .collect()
            })
            .collect();

        let (dh, dw) = optics.detector_pixels;
        Ok(Self {
            geometry: geometry.clone(),
            optics: optics.clone(),
            fft: Fft2::new(sh, sw),
            carriers,
            pupils,
            row_weights: box_weights(dh, sh),
            col_weights: box_weights(dw, sw),
        })
    }

    pub fn geometry(&self) -> &LedGeometry {
        &self.geometry
    }

    pub fn optics(&self) -> &OpticsSpec {
        &self.optics
    }

    pub fn n_slices(&self) -> usize {
        self.carriers.len()
    }

    fn check_sample(&self, sample: &HeightMap) -> Result<()> {
        if sample.dims() != self.optics.detector_pixels {
            return Err(Error::dim(format!(
                "sample grid {:?} does not match detector {:?}",
                sample.dims(),
                self.optics.detector_pixels
            )));
        }
        Ok(())
    }

    /// Thickness resampled bilinearly onto the simulation grid (pixel
    /// centers aligned, edges clamped).
    fn upsampled_thickness(&self, sample: &HeightMap) -> Vec<f64> {
        let (h, w) = sample.dims();
        let (sh, sw) = self.optics.simulation_grid;
        let t = sample.thickness_um();
        let coord = |i: usize, fine: usize, coarse: usize| -> (usize, usize, f64) {
            let u = ((i as f64 + 0.5) * coarse as f64 / fine as f64 - 0.5).clamp(0.0, coarse as f64 - 1.0);
            let lo = u.floor() as usize;
            let hi = (lo + 1).min(coarse - 1);
            (lo, hi, u - lo as f64)
        };
        let mut out = Vec::with_capacity(sh * sw);
        for y in 0..sh {
            let (y0, y1, fy) = coord(y, sh, h);
            for x in 0..sw {
                let (x0, x1, fx) = coord(x, sw, w);
                let v = |r: usize, c: usize| t[r * w + c] as f64;
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
        out
    }

    fn sample_transmission(&self, thickness: &[f64], channel: usize) -> Vec<Complex64> {
        let wl = self.geometry.channel_wavelength(channel, &self.optics);
        let k = 2.0 * PI * self.optics.refractive_index_delta / wl;
        thickness
            .iter()
            .map(|&t| Complex64::from_polar(1.0, k * t))
            .collect()
    }

    fn render(&self, transmission: &[Complex64], slice: usize) -> Vec<f32> {
        let channel = slice % self.geometry.channels;
        let mut field: Vec<Complex64> = transmission
            .iter()
            .zip(&self.carriers[slice])
            .map(|(a, b)| a * b)
            .collect();
        self.fft.forward(&mut field);
        for (v, &pass) in field.iter_mut().zip(&self.pupils[channel]) {
            if !pass {
                *v = Complex64::default();
            }
        }
        self.fft.inverse(&mut field);

        let sw = self.optics.simulation_grid.1;
        let intensity: Vec<f64> = field.iter().map(|v| v.norm_sqr()).collect();
        let (dh, dw) = self.optics.detector_pixels;
        let mut out = Vec::with_capacity(dh * dw);
        for rw in &self.row_weights {
            for cw in &self.col_weights {
                let mut acc = 0.0;
                for &(r, wr) in rw {
                    for &(c, wc) in cw {
                        acc += wr * wc * intensity[r * sw + c];
                    }
                }
                out.push(acc.max(0.0) as f32);
            }
        }
        out
    }

    /// Noiseless detector image of `sample` under stack slice `slice`
    /// (LED `slice / channels`, channel `slice % channels`) at unit
    /// brightness.
    pub fn single(&self, sample: &HeightMap, slice: usize) -> Result<Vec<f32>> {
        self.check_sample(sample)?;
        if slice >= self.n_slices() {
            return Err(Error::OutOfRange {
                index: slice,
                len: self.n_slices(),
            });
        }
        let thickness = self.upsampled_thickness(sample);
        let channel = slice % self.geometry.channels;
        Ok(self.render(&self.sample_transmission(&thickness, channel), slice))
    }

    /// All single-LED images of `sample`, slice-major.
    pub fn stack(&self, sample: &HeightMap) -> Result<PerLedStack> {
        self.check_sample(sample)?;
        let thickness = self.upsampled_thickness(sample);
        let transmissions: Vec<Vec<Complex64>> = (0..self.geometry.channels)
            .map(|c| self.sample_transmission(&thickness, c))
            .collect();
        let (dh, dw) = self.optics.detector_pixels;
        let mut data = Vec::with_capacity(self.n_slices() * dh * dw);
        for slice in 0..self.n_slices() {
            data.extend(self.render(&transmissions[slice % self.geometry.channels], slice));
        }
        PerLedStack::new(self.n_slices(), dh, dw, data)
    }
}

pub fn simulate_single_led(
    sample: &HeightMap,
    led_index: usize,
    geometry: &LedGeometry,
    optics: &OpticsSpec,
) -> Result<Vec<f32>> {
    if led_index >= geometry.n_leds() {
        return Err(Error::OutOfRange {
            index: led_index,
            len: geometry.n_leds(),
        });
    }
    Simulator::new(geometry, optics)?.single(sample, led_index * geometry.channels)
}

pub fn simulate_stack(sample: &HeightMap, geometry: &LedGeometry, optics: &OpticsSpec) -> Result<PerLedStack> {
    Simulator::new(geometry, optics)?.stack(sample)
}

/// Mean flat-sample intensity under the most on-axis LED, the readout-noise
/// reference level.
pub fn brightfield_reference(geometry: &LedGeometry, optics: &OpticsSpec) -> Result<f64> {
    let sim = Simulator::new(geometry, optics)?;
    let k = (0..geometry.n_leds())
        .min_by(|&a, &b| geometry.sin_theta(a).total_cmp(&geometry.sin_theta(b)))
        .ok_or_else(|| Error::Validation("LED geometry has no positions".into()))?;
    let (h, w) = optics.detector_pixels;
    let img = sim.single(&HeightMap::flat(h, w, optics.object_pixel_pitch_um()), k * geometry.channels)?;
    Ok(img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_weights_partition_fine_cells() {
        let w = box_weights(28, 64);
        for row in &w {
            let s: f64 = row.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let mut per_fine = vec![0.0; 64];
        for row in &w {
            for &(j, v) in row {
                per_fine[j] += v;
            }
        }
        for v in per_fine {
            assert!((v - 28.0 / 64.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_center_led_is_uniform_unit_intensity() {
        let g = LedGeometry::mnist();
        let o = OpticsSpec::mnist();
        let img = simulate_single_led(&HeightMap::flat(28, 28, 1.4), 12, &g, &o).unwrap();
        for v in img {
            assert!((v - 1.0).abs() < 1e-6);
        }
        assert!((brightfield_reference(&g, &o).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bad_inputs_rejected() {
        let g = LedGeometry::mnist();
        let o = OpticsSpec::mnist();
        let flat = HeightMap::flat(28, 28, 1.4);
        assert!(matches!(
            simulate_single_led(&flat, 25, &g, &o),
            Err(Error::OutOfRange { index: 25, len: 25 })
        ));
        let mut bad = o.clone();
        bad.wavelength_um = -0.5;
        assert!(simulate_single_led(&flat, 0, &g, &bad).is_err());
        assert!(simulate_single_led(&HeightMap::flat(20, 28, 1.4), 0, &g, &o).is_err());
    }
}
