use illumrl_core::numerics::{Tape, Tensor};
use illumrl_core::optics::{
    compose, height_from_image, simulate_single_led, HeightMap, IlluminationPattern, LedGeometry,
    OpticsSpec, Simulator,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sample(rng: &mut ChaCha8Rng) -> HeightMap {
    // Smooth blob so the sample resembles a stroke rather than white noise.
    let (cx, cy) = (rng.random_range(8.0..20.0), rng.random_range(8.0..20.0));
    let r: f64 = rng.random_range(3.0..8.0);
    let px: Vec<f32> = (0..28 * 28)
        .map(|i| {
            let (y, x) = ((i / 28) as f64, (i % 28) as f64);
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            (-d2 / (r * r)).exp() as f32
        })
        .collect();
    height_from_image(&px, 28, 28, 2.5, 1.4).unwrap()
}

fn energy(img: &[f32]) -> f64 {
    img.iter().map(|&v| v as f64 * v as f64).sum()
}

#[test]
fn corner_led_on_flat_sample_is_dark() {
    let g = LedGeometry::mnist();
    let o = OpticsSpec::mnist();
    assert!(g.sin_theta(0) > 0.32 && g.sin_theta(0) > o.numerical_aperture);
    let img = simulate_single_led(&HeightMap::flat(28, 28, 1.4), 0, &g, &o).unwrap();
    assert!(img.iter().all(|&v| v.abs() < 1e-9));
}

#[test]
fn axis_leds_at_one_and_two_pitches() {
    let g = LedGeometry::mnist();
    let o = OpticsSpec::mnist();
    let flat = HeightMap::flat(28, 28, 1.4);
    // (6, 0) mm → sin θ ≈ 0.119: brightfield, uniform.
    assert!((g.sin_theta(13) - 0.1191).abs() < 1e-3);
    let near = simulate_single_led(&flat, 13, &g, &o).unwrap();
    assert!(near.iter().all(|&v| (v - 1.0).abs() < 1e-6));
    // (12, 0) mm → sin θ ≈ 0.233: darkfield.
    assert!((g.sin_theta(14) - 0.2334).abs() < 1e-3);
    let far = simulate_single_led(&flat, 14, &g, &o).unwrap();
    assert!(energy(&far) < 1e-12);
}

#[test]
fn flat_stack_has_nine_uniform_brightfield_images() {
    let g = LedGeometry::mnist();
    let o = OpticsSpec::mnist();
    let stack = Simulator::new(&g, &o)
        .unwrap()
        .stack(&HeightMap::flat(28, 28, 1.4))
        .unwrap();
    assert_eq!((stack.depth(), stack.dims()), (25, (28, 28)));
    let center = energy(stack.slice(12));
    let mut bright = 0;
    for k in 0..25 {
        let e = energy(stack.slice(k));
        if e > 1e-6 * center {
            bright += 1;
            let first = stack.slice(k)[0];
            assert!(stack.slice(k).iter().all(|&v| (v - first).abs() < 1e-6));
            assert!(g.is_brightfield(k, &o));
        } else {
            assert!(!g.is_brightfield(k, &o));
        }
    }
    assert_eq!(bright, 9);
}

#[test]
fn thin_sample_scatters_into_darkfield() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sim = Simulator::new(&LedGeometry::mnist(), &OpticsSpec::mnist()).unwrap();
    let stack = sim.stack(&random_sample(&mut rng)).unwrap();
    assert!(stack.data().iter().all(|&v| v >= 0.0));
    // Some darkfield energy, but much less than brightfield.
    let dark = energy(stack.slice(14));
    let bright = energy(stack.slice(12));
    assert!(dark > 1e-6 * bright && dark < bright, "{dark} {bright}");
}

#[test]
fn permuting_leds_permutes_slices() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample = random_sample(&mut rng);
    let g = LedGeometry::mnist();
    let o = OpticsSpec::mnist();
    let base = Simulator::new(&g, &o).unwrap().stack(&sample).unwrap();
    let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
    let mut pg = g.clone();
    pg.positions_mm = perm.iter().map(|&k| g.positions_mm[k]).collect();
    let permuted = Simulator::new(&pg, &o).unwrap().stack(&sample).unwrap();
    for (i, &k) in perm.iter().enumerate() {
        assert_eq!(permuted.slice(i), base.slice(k));
    }
}

#[test]
fn stack_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sample = random_sample(&mut rng);
    let sim = Simulator::new(&LedGeometry::mnist(), &OpticsSpec::mnist()).unwrap();
    assert_eq!(sim.stack(&sample).unwrap(), sim.stack(&sample).unwrap());
}

#[test]
fn multi_channel_layout_has_87_slices() {
    let mut g = LedGeometry::square_grid(5, 6.0, 50.0);
    // 29 LEDs: the 5×5 grid plus four outer positions.
    g.positions_mm
        .extend([(18.0, 0.0), (-18.0, 0.0), (0.0, 18.0), (0.0, -18.0)]);
    g.channels = 3;
    g.channel_wavelengths_um = vec![0.63, 0.532, 0.47];
    let sim = Simulator::new(&g, &OpticsSpec::mnist()).unwrap();
    let stack = sim.stack(&HeightMap::flat(28, 28, 1.4)).unwrap();
    assert_eq!(stack.depth(), 87);
}

#[test]
fn compose_gradient_is_slice_inner_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sim = Simulator::new(&LedGeometry::mnist(), &OpticsSpec::mnist()).unwrap();
    let stack = sim.stack(&random_sample(&mut rng)).unwrap();
    let probe: Vec<f32> = (0..784).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f32> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();

    let mut tape = Tape::<f32>::new();
    let wv = tape.param(Tensor::row(w));
    let sv = tape.constant(Tensor::new(vec![1, 25, 784], stack.data().to_vec()).unwrap());
    let o = tape.compose(wv, sv).unwrap();
    let pv = tape.constant(Tensor::row(probe.clone()));
    let prod = tape.mul(o, pv).unwrap();
    let s = tape.sum(prod);
    let g = tape.backward(s).unwrap();
    let g = g.wide(wv).unwrap();
    for k in 0..25 {
        let inner: f64 = stack
            .slice(k)
            .iter()
            .zip(&probe)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        assert!((g[k] - inner).abs() <= 1e-5 * inner.abs().max(1.0), "{k}: {} vs {inner}", g[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn superposition_is_linear(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sim = Simulator::new(&LedGeometry::mnist(), &OpticsSpec::mnist()).unwrap();
        let stack = sim.stack(&random_sample(&mut rng)).unwrap();
        let (a, b): (f32, f32) = (rng.random(), rng.random());
        let p1: Vec<f32> = (0..25).map(|_| rng.random()).collect();
        let p2: Vec<f32> = (0..25).map(|_| rng.random()).collect();
        let mix: Vec<f32> = p1.iter().zip(&p2).map(|(x, y)| (a * x + b * y) / 2.0).collect();
        let o1 = compose(&stack, &IlluminationPattern::new(p1).unwrap()).unwrap();
        let o2 = compose(&stack, &IlluminationPattern::new(p2).unwrap()).unwrap();
        let om = compose(&stack, &IlluminationPattern::new(mix).unwrap()).unwrap();
        for ((m, x), y) in om.iter().zip(&o1).zip(&o2) {
            let r = (a as f64 * *x as f64 + b as f64 * *y as f64) / 2.0;
            prop_assert!((*m as f64 - r).abs() <= 1e-5 * r.abs().max(1e-3));
        }
    }
}
