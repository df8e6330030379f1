//! In-memory labeled `[CLS]` stacks and the synthetic generator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result, Tensor};

/// `n_samples` stacks of `n_layers × hidden` values plus class labels.
///
/// Values are kept at 32-bit, the on-disk precision; [`EmbeddingDataset::stack`]
/// widens a sample for the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    n_layers: usize,
    hidden: usize,
    n_classes: usize,
    labels: Vec<u32>,
    values: Vec<f32>,
}

impl EmbeddingDataset {
    pub fn new(n_layers: usize, hidden: usize, n_classes: usize, labels: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let ds = Self {
            n_layers,
            hidden,
            n_classes,
            labels,
            values,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden == 0 {
            return Err(Error::Validation(format!(
                "stack extents must be positive, got {}x{}",
                self.n_layers, self.hidden
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        let expected = self.labels.len() * self.stack_len();
        if self.values.len() != expected {
            return Err(Error::Validation(format!(
                "payload holds {} values, expected {}",
                self.values.len(),
                expected
            )));
        }
        if let Some((i, l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= self.n_classes)
        {
            return Err(Error::Validation(format!(
                "label {l} of sample {i} is outside [0, {})",
                self.n_classes
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value in sample {}",
                i / self.stack_len()
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Flat sample-major, layer-major payload.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn stack_len(&self) -> usize {
        self.n_layers * self.hidden
    }

    pub fn raw_stack(&self, i: usize) -> &[f32] {
        let n = self.stack_len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Sample `i` as an `n_layers × hidden` tensor.
    pub fn stack(&self, i: usize) -> Tensor {
        let data = self.raw_stack(i).iter().map(|&v| v as f64).collect();
        Tensor::new(&[self.n_layers, self.hidden], data).expect("validated extents")
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// New dataset holding the given samples, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.stack_len());
        for &i in indices {
            values.extend_from_slice(self.raw_stack(i));
        }
        Self {
            n_layers: self.n_layers,
            hidden: self.hidden,
            n_classes: self.n_classes,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            values,
        }
    }
}

/// Parameters of [`synth_generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_layers: usize,
    pub hidden: usize,
    pub separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_samples: usize, n_classes: usize, separation: f64, seed: u64) -> Self {
        Self {
            n_samples,
            n_classes,
            n_layers: 12,
            hidden: 768,
            separation,
            seed,
        }
    }
}

/// Labeled synthetic stacks.
///
/// Each class owns a seeded unit-norm direction `u_c` in the hidden space. A
/// sample of class `c` is `separation · u_c` repeated on every layer plus
/// independent standard Gaussian noise. Labels are balanced (counts differ
/// by at most one) and shuffled.
pub fn synth_generate(spec: &SynthSpec) -> Result<EmbeddingDataset> {
    if spec.n_classes < 2 || spec.n_samples < spec.n_classes {
        return Err(Error::Config(format!(
            "need n_samples >= n_classes >= 2, got {} samples and {} classes",
            spec.n_samples, spec.n_classes
        )));
    }
    if spec.separation.is_nan() || spec.separation < 0.0 || !spec.separation.is_finite() {
        return Err(Error::Config(format!(
            "separation must be a finite value >= 0, got {}",
            spec.separation
        )));
    }
    if spec.n_layers == 0 || spec.hidden == 0 {
        return Err(Error::Config("stack extents must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut directions = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let mut u: Vec<f64> = (0..spec.hidden).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = libm::sqrt(u.iter().map(|v| v * v).sum::<f64>());
        u.iter_mut().for_each(|v| *v /= norm);
        directions.push(u);
    }

    let mut labels: Vec<u32> = (0..spec.n_samples).map(|i| (i % spec.n_classes) as u32).collect();
    labels.shuffle(&mut rng);

    let mut values = Vec::with_capacity(spec.n_samples * spec.n_layers * spec.hidden);
    for &label in &labels {
        let u = &directions[label as usize];
        for _ in 0..spec.n_layers {
            for &d in u {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values.push((spec.separation * d + noise) as f32);
            }
        }
    }
    EmbeddingDataset::new(spec.n_layers, spec.hidden, spec.n_classes, labels, values)
}
