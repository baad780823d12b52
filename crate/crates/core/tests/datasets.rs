use std::path::PathBuf;

use illumrl_core::datasets::{
    augment_flip_rotate, generate_simulated_dataset, load_idx_corpus, load_stack_file, save_stack_file,
    split, Corpus, Dihedral, IlluminationDataset, SplitSpec,
};
use illumrl_core::optics::{LedGeometry, OpticsSpec};
use illumrl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("ILLUMRL_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Corpus {
        rows: 28,
        cols: 28,
        images: (0..n * 784).map(|_| (rng.random_range(0..256) as f32) / 255.0).collect(),
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, depth: usize, side: usize) -> IlluminationDataset {
    let per = depth * side * side;
    let data = (0..n * per).map(|_| rng.random::<f32>() * 4.0).collect();
    let labels = (0..n).map(|_| rng.random_range(0..5u16)).collect();
    IlluminationDataset::new(depth, (side, side), 5, labels, data).unwrap()
}

#[test]
fn mnist_corpus_counts() {
    let Some(dir) = mnist_dir() else {
        eprintln!("skipping: MNIST IDX files not found");
        return;
    };
    let train = load_idx_corpus(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")).unwrap();
    let test = load_idx_corpus(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")).unwrap();
    assert_eq!((train.len(), test.len()), (60000, 10000));
    assert_eq!((train.rows, train.cols, train.n_classes()), (28, 28, 10));
    assert!(train.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn ten_images_give_ten_stacks_with_matching_histogram() {
    let corpus = synthetic_corpus(10, 1);
    let (g, o) = (LedGeometry::mnist(), OpticsSpec::mnist());
    let ds = generate_simulated_dataset(&corpus, &g, &o).unwrap();
    assert_eq!(ds.len(), 10);
    assert_eq!((ds.n_slices(), ds.dims()), (25, (28, 28)));
    assert_eq!(ds.class_histogram(), vec![1; 10]);
    let again = generate_simulated_dataset(&corpus, &g, &o).unwrap();
    assert!(ds.data().iter().zip(again.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn empty_corpus_rejected() {
    let corpus = Corpus { rows: 28, cols: 28, images: vec![], labels: vec![] };
    assert!(generate_simulated_dataset(&corpus, &LedGeometry::mnist(), &OpticsSpec::mnist()).is_err());
}

#[test]
fn all_eight_transforms_give_eight_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = random_dataset(&mut rng, 1, 3, 6);
    let aug = augment_flip_rotate(&ds, 8, &mut rng).unwrap();
    assert_eq!(aug.len(), 8);
    assert_eq!(aug.stack_data(0), ds.stack_data(0));
    assert!(aug.labels().iter().all(|&l| l == ds.labels()[0]));
    assert!(aug.groups().iter().all(|&g| g == 0));
}

#[test]
fn malaria_sized_augmentation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = random_dataset(&mut rng, 512, 1, 4);
    let aug = augment_flip_rotate(&ds, 8, &mut rng).unwrap();
    assert_eq!(aug.len(), 4096);
    assert!((aug.len() as f64 - 4100.0).abs() / 4100.0 < 0.01);
}

#[test]
fn eighty_twenty_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds = random_dataset(&mut rng, 100, 1, 2);
    let spec = SplitSpec { train_fraction: 0.8, seed: 11 };
    let (a, b) = split(&ds, spec).unwrap();
    assert_eq!((a.len(), b.len()), (80, 20));
    let (a2, _) = split(&ds, spec).unwrap();
    assert_eq!(a, a2);
    assert!(split(&ds, SplitSpec { train_fraction: 1.0, seed: 0 }).is_err());
}

#[test]
fn stack_file_round_trip_87_slices() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ds = random_dataset(&mut rng, 3, 87, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vistack");
    save_stack_file(&ds, &path).unwrap();
    let back = load_stack_file(&path, None).unwrap();
    ds.meta = back.meta.clone();
    assert_eq!(back, ds);
    let two = load_stack_file(&path, Some(2)).unwrap();
    assert_eq!(two.len(), 2);
    assert_eq!(two.stack_data(1), ds.stack_data(1));
}

#[test]
fn stack_file_rejects_bad_headers() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = random_dataset(&mut rng, 2, 2, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vistack");
    save_stack_file(&ds, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bytes = good.clone();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_stack_file(&path, None), Err(Error::Format { offset: 0, .. })));

    let mut bytes = good.clone();
    bytes[8] = 2;
    std::fs::write(&path, &bytes).unwrap();
    let err = load_stack_file(&path, None).unwrap_err().to_string();
    assert!(err.contains("version 2"), "{err}");

    let mut bytes = good.clone();
    bytes[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
    bytes[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
    bytes[24..28].copy_from_slice(&u32::MAX.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    let err = load_stack_file(&path, None).unwrap_err().to_string();
    assert!(err.contains("overflow"), "{err}");

    std::fs::write(&path, &good[..good.len() - 1]).unwrap();
    assert!(matches!(load_stack_file(&path, None), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..6, depth in 1usize..5, side in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = random_dataset(&mut rng, n, depth, side);
        // Include values that only survive a bit-exact path.
        let mut data = ds.data().to_vec();
        data[0] = f32::MIN_POSITIVE / 2.0;
        let last = data.len() - 1;
        data[last] = -0.0;
        ds = IlluminationDataset::new(depth, (side, side), 5, ds.labels().to_vec(), data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.vistack");
        save_stack_file(&ds, &path).unwrap();
        let back = load_stack_file(&path, None).unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert!(back.data().iter().zip(ds.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn split_is_a_seeded_partition(seed in any::<u64>(), n in 2usize..60, frac in 0.05f64..0.95, variants in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_dataset(&mut rng, n, 1, 2);
        let ds = augment_flip_rotate(&base, variants, &mut rng).unwrap();
        let spec = SplitSpec { train_fraction: frac, seed };
        let (a, b) = illumrl_core::datasets::split_indices(ds.groups(), spec).unwrap();
        let (a2, b2) = illumrl_core::datasets::split_indices(ds.groups(), spec).unwrap();
        prop_assert_eq!(&a, &a2);
        prop_assert_eq!(&b, &b2);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let ga: std::collections::HashSet<u32> = a.iter().map(|&i| ds.groups()[i]).collect();
        prop_assert!(b.iter().all(|&i| !ga.contains(&ds.groups()[i])));
    }

    #[test]
    fn augmentation_preserves_slice_histograms(seed in any::<u64>(), q in 0u8..4, flip: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 1, 3, 5);
        let out = Dihedral { quarter_turns: q, flip }.apply(ds.stack_data(0), 5);
        for (s, t) in ds.stack_data(0).chunks(25).zip(out.chunks(25)) {
            let mut a: Vec<u32> = s.iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = t.iter().map(|v| v.to_bits()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
