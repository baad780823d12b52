//! Per-LED stack datasets: generation from grayscale corpora, dihedral
//! augmentation, leakage-free splits and the binary stack file.

mod idx;
mod stackfile;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optics::{height_from_image, LedGeometry, OpticsSpec, PerLedStack, Simulator};

pub use idx::{encode_idx, load_idx_corpus, parse_idx_images, parse_idx_labels, Corpus};
pub use stackfile::{load_stack_file, read_stack_header, save_stack_file, StackFileWriter, StackHeader};

/// Peak sample thickness for a fully white pixel.
pub const MAX_THICKNESS_UM: f64 = 2.5;

/// Where a dataset came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetMeta {
    pub geometry: Option<LedGeometry>,
    pub optics: Option<OpticsSpec>,
    pub provenance: String,
}

/// Labelled per-LED stacks stored contiguously, sample-major.
///
/// `groups[i]` identifies the base sample that sample `i` was derived from;
/// augmented variants share their source's group.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationDataset {
    n_slices: usize,
    height: usize,
    width: usize,
    n_classes: usize,
    labels: Vec<u16>,
    groups: Vec<u32>,
    data: Vec<f32>,
    pub meta: DatasetMeta,
}

impl IlluminationDataset {
    pub fn new(
        n_slices: usize,
        (height, width): (usize, usize),
        n_classes: usize,
        labels: Vec<u16>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let groups = (0..labels.len() as u32).collect();
        Self::with_groups(n_slices, (height, width), n_classes, labels, groups, data)
    }

    pub fn with_groups(
        n_slices: usize,
        (height, width): (usize, usize),
        n_classes: usize,
        labels: Vec<u16>,
        groups: Vec<u32>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let per = n_slices * height * width;
        if per == 0 {
            return Err(Error::dim("stacks must have nonzero depth and size"));
        }
        if data.len() != labels.len() * per || groups.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} labels, {} groups and {} values for stacks of {per}",
                labels.len(),
                groups.len(),
                data.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Validation(format!("label {l} not below {n_classes} classes")));
        }
        Ok(Self {
            n_slices,
            height,
            width,
            n_classes,
            labels,
            groups,
            data,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn stack_len(&self) -> usize {
        self.n_slices * self.height * self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Slice-major values of stack `i`.
    pub fn stack_data(&self, i: usize) -> &[f32] {
        let n = self.stack_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn stack(&self, i: usize) -> PerLedStack {
        PerLedStack::new(self.n_slices, self.height, self.width, self.stack_data(i).to_vec())
            .expect("stored stacks are validated")
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// New dataset holding the given samples in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.stack_len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut groups = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::OutOfRange { index: i, len: self.len() });
            }
            data.extend_from_slice(self.stack_data(i));
            labels.push(self.labels[i]);
            groups.push(self.groups[i]);
        }
        let mut out = Self::with_groups(
            self.n_slices,
            self.dims(),
            self.n_classes,
            labels,
            groups,
            data,
        )?;
        out.meta = self.meta.clone();
        Ok(out)
    }
}

/// Renders one noiseless stack per corpus image, in parallel over samples.
///
/// Output is independent of thread count.
pub fn generate_simulated_dataset(
    corpus: &Corpus,
    geometry: &LedGeometry,
    optics: &OpticsSpec,
) -> Result<IlluminationDataset> {
    if corpus.is_empty() {
        return Err(Error::Validation("corpus is empty".into()));
    }
    let sim = Simulator::new(geometry, optics)?;
    let stacks: Vec<Vec<f32>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| simulate_image(&sim, corpus, i))
        .collect::<Result<_>>()?;
    let n_classes = corpus.n_classes();
    let labels = corpus.labels.iter().map(|&l| l as u16).collect();
    let mut ds = IlluminationDataset::new(
        sim.n_slices(),
        optics.detector_pixels,
        n_classes,
        labels,
        stacks.concat(),
    )?;
    ds.meta = DatasetMeta {
        geometry: Some(geometry.clone()),
        optics: Some(optics.clone()),
        provenance: format!("simulated from {} corpus images", corpus.len()),
    };
    Ok(ds)
}

/// Stack for corpus image `i`.
pub fn simulate_image(sim: &Simulator, corpus: &Corpus, i: usize) -> Result<Vec<f32>> {
    let pitch = sim.optics().object_pixel_pitch_um();
    let hm = height_from_image(corpus.image(i), corpus.rows, corpus.cols, MAX_THICKNESS_UM, pitch)?;
    Ok(sim.stack(&hm)?.into_data())
}

/// Elements of the dihedral group of the square, as `rotate(k·90°)`
/// optionally followed by a horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Self = Self { quarter_turns: 0, flip: false };

    pub fn all() -> [Self; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Self {
                quarter_turns: (i % 4) as u8,
                flip: i >= 4,
            };
        }
        out
    }

    /// Source pixel for destination `(r, c)` in an `n×n` image.
    fn source(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let c = if self.flip { n - 1 - c } else { c };
        // Counter-clockwise rotation by k quarter turns.
        match self.quarter_turns % 4 {
            0 => (r, c),
            1 => (c, n - 1 - r),
            2 => (n - 1 - r, n - 1 - c),
            _ => (n - 1 - c, r),
        }
    }

    /// Applies the transform to every `n×n` slice of `stack`.
    pub fn apply(self, stack: &[f32], n: usize) -> Vec<f32> {
        let p = n * n;
        let mut out = vec![0.0; stack.len()];
        for (src, dst) in stack.chunks_exact(p).zip(out.chunks_exact_mut(p)) {
            for r in 0..n {
                for c in 0..n {
                    let (sr, sc) = self.source(r, c, n);
                    dst[r * n + c] = src[sr * n + sc];
                }
            }
        }
        out
    }
}

/// Emits `variants` dihedral copies of each sample (the untransformed
/// original first, then distinct transforms drawn from `rng`), so the result
/// has `len × variants` samples. Copies keep their source's group.
pub fn augment_flip_rotate<R: Rng + ?Sized>(
    dataset: &IlluminationDataset,
    variants: usize,
    rng: &mut R,
) -> Result<IlluminationDataset> {
    let (h, w) = dataset.dims();
    if h != w {
        return Err(Error::Unsupported(format!("augmentation of non-square {h}×{w} stacks")));
    }
    if !(1..=8).contains(&variants) {
        return Err(Error::Validation(format!("{variants} variants; expected 1..=8")));
    }
    let all = Dihedral::all();
    let n = dataset.len() * variants;
    let mut data = Vec::with_capacity(n * dataset.stack_len());
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for i in 0..dataset.len() {
        let mut rest = all[1..].to_vec();
        rest.shuffle(rng);
        for d in std::iter::once(all[0]).chain(rest).take(variants) {
            data.extend(d.apply(dataset.stack_data(i), h));
            labels.push(dataset.labels[i]);
            groups.push(dataset.groups[i]);
        }
    }
    let mut out = IlluminationDataset::with_groups(
        dataset.n_slices,
        (h, w),
        dataset.n_classes,
        labels,
        groups,
        data,
    )?;
    out.meta = dataset.meta.clone();
    out.meta.provenance = format!("{} (×{variants} dihedral)", dataset.meta.provenance);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Sample indices of a seeded group-aware partition.
///
/// Groups are shuffled and assigned to the train side until it holds
/// `round(len × train_fraction)` samples; with one sample per group the
/// sizes are exact.
pub fn split_indices(groups: &[u32], spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut order: Vec<u32> = groups.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut rng = crate::rng::stream(spec.seed, crate::rng::Purpose::Split, 0);
    order.shuffle(&mut rng);

    let mut sizes = std::collections::HashMap::new();
    for &g in groups {
        *sizes.entry(g).or_insert(0usize) += 1;
    }
    let target = (groups.len() as f64 * spec.train_fraction).round() as usize;
    let mut train_groups = std::collections::HashSet::new();
    let mut count = 0;
    for g in order {
        if count >= target {
            break;
        }
        count += sizes[&g];
        train_groups.insert(g);
    }
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..groups.len()).partition(|&i| train_groups.contains(&groups[i]));
    Ok((train, test))
}

pub fn split(dataset: &IlluminationDataset, spec: SplitSpec) -> Result<(IlluminationDataset, IlluminationDataset)> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    let (a, b) = split_indices(&dataset.groups, spec)?;
    Ok((dataset.subset(&a)?, dataset.subset(&b)?))
}

/// Shuffled minibatches of sample indices; the last batch may be short.
pub fn batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
