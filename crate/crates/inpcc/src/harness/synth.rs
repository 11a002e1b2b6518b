//! Synthetic scene generation: a vocabulary with controlled embedding
//! geometry plus procedural token-grid images. Desk-scale stand-in for real
//! HOI data; everything is exact and seeded.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ImageRecord, Role};
use super::{stream_rng, STREAM_SYNTH_IMAGES, STREAM_SYNTH_VOCAB};
use crate::concepts::{ConceptEntry, ConceptVocabulary, Split};
use crate::error::{Error, Result};
use crate::train::GroundTruthInteraction;
use crate::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneSpec {
    pub vocab_size: usize,
    /// Description-space clusters; categories are split into contiguous
    /// blocks, one per cluster.
    pub clusters: usize,
    /// Pairwise description cosine within a cluster (inter-cluster pairs
    /// land near zero by construction).
    pub intra_cosine: Scalar,
    /// The last `novel_count` categories are held out of training.
    pub novel_count: usize,
    pub images_per_category: usize,
    pub test_images_per_category: usize,
    /// Square token grid side.
    pub grid: usize,
    /// Classifier embedding width.
    pub c_t: usize,
    /// Description embedding width.
    pub c_d: usize,
    /// Background token noise sigma.
    pub noise: Scalar,
    /// When set, classifier embeddings share the clustered geometry of the
    /// descriptions (confusable preset); otherwise base classifiers are
    /// orthonormal and novel ones are random unit combinations of them.
    pub confusable_classifiers: bool,
    /// Interactions per training image. Beyond the first, extra interactions
    /// use distinct other base categories, so busy train scenes also expose
    /// summed classifier imprints where boxes overlap. Test images always
    /// hold exactly one interaction.
    pub train_interactions: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            vocab_size: 10,
            clusters: 2,
            intra_cosine: 0.5,
            novel_count: 2,
            images_per_category: 25,
            test_images_per_category: 5,
            grid: 6,
            c_t: 8,
            c_d: 16,
            noise: 0.05,
            confusable_classifiers: false,
            train_interactions: 1,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: SyntheticSceneSpec = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.clusters == 0 || self.clusters > self.vocab_size {
            return Err(Error::Parameter(format!(
                "cluster count {} out of range for {} categories",
                self.clusters, self.vocab_size
            )));
        }
        if self.novel_count >= self.vocab_size {
            return Err(Error::Parameter(format!(
                "novel_count {} leaves no base categories",
                self.novel_count
            )));
        }
        if !(0.0..1.0).contains(&self.intra_cosine) {
            return Err(Error::Parameter(format!(
                "intra_cosine {} must lie in [0, 1)",
                self.intra_cosine
            )));
        }
        // Cluster centers and one private direction per category must fit
        // orthogonally.
        if self.c_d < self.clusters + self.vocab_size {
            return Err(Error::Parameter(format!(
                "description geometry unrealizable: c_d = {} < clusters + vocab = {}",
                self.c_d,
                self.clusters + self.vocab_size
            )));
        }
        if self.confusable_classifiers && self.c_t < self.clusters + self.vocab_size {
            return Err(Error::Parameter(format!(
                "classifier geometry unrealizable: c_t = {} < clusters + vocab = {}",
                self.c_t,
                self.clusters + self.vocab_size
            )));
        }
        let base = self.vocab_size - self.novel_count;
        if !self.confusable_classifiers && self.c_t < base {
            return Err(Error::Parameter(format!(
                "classifier geometry unrealizable: c_t = {} < {} base categories",
                self.c_t, base
            )));
        }
        if self.grid == 0 || self.images_per_category == 0 || self.test_images_per_category == 0 {
            return Err(Error::Parameter(
                "grid and image counts must be positive".to_string(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter(format!("invalid noise {}", self.noise)));
        }
        if self.train_interactions == 0 || self.train_interactions > base {
            return Err(Error::Parameter(format!(
                "train_interactions {} out of range for {base} base categories",
                self.train_interactions
            )));
        }
        Ok(())
    }

    /// Cluster index of each category: contiguous blocks, as even as
    /// possible.
    pub fn cluster_of(&self, category_index: usize) -> usize {
        let per = self.vocab_size.div_ceil(self.clusters);
        (category_index / per).min(self.clusters - 1)
    }
}

fn normalize(v: &mut [Scalar]) {
    let n: Scalar = v.iter().map(|x| x * x).sum::<Scalar>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Clustered unit vectors: member i of a cluster is
/// √ρ·center + √(1−ρ)·e_i with globally orthogonal basis directions, so
/// same-cluster pairs have cosine exactly ρ and cross-cluster pairs 0.
fn clustered_vectors(
    spec: &SyntheticSceneSpec,
    dim: usize,
    rho: Scalar,
) -> Vec<Vec<Scalar>> {
    let mut out = Vec::with_capacity(spec.vocab_size);
    for i in 0..spec.vocab_size {
        let cluster = spec.cluster_of(i);
        let mut v = vec![0.0; dim];
        // Center direction for the cluster in the first `clusters` axes,
        // private direction in the axes after them.
        v[cluster] = rho.sqrt();
        v[spec.clusters + i] = (1.0 - rho).sqrt();
        out.push(v);
    }
    out
}

/// Orthonormal base classifiers via Gram-Schmidt over Gaussian draws;
/// novel classifiers are unit-normalized random combinations of the base
/// ones, so they stay inside the span the model is trained on.
fn separable_classifiers(
    spec: &SyntheticSceneSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Scalar>>> {
    let base_count = spec.vocab_size - spec.novel_count;
    let mut base: Vec<Vec<Scalar>> = Vec::with_capacity(base_count);
    let mut attempts = 0;
    while base.len() < base_count {
        attempts += 1;
        if attempts > 100 * base_count {
            return Err(Error::Parameter(
                "failed to draw an orthonormal classifier basis".to_string(),
            ));
        }
        let mut v: Vec<Scalar> = (0..spec.c_t)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        for b in &base {
            let dot: Scalar = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm: Scalar = v.iter().map(|x| x * x).sum::<Scalar>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        base.push(v);
    }
    let mut all = base.clone();
    for _ in 0..spec.novel_count {
        let mut v = vec![0.0; spec.c_t];
        for b in &base {
            let coeff: Scalar = StandardNormal.sample(rng);
            for (x, y) in v.iter_mut().zip(b) {
                *x += coeff * y;
            }
        }
        normalize(&mut v);
        all.push(v);
    }
    Ok(all)
}

/// A random cell-aligned box on a `grid`×`grid` token grid, 1-3 cells per
/// side, in cxcywh fractions.
fn random_box(grid: usize, rng: &mut ChaCha8Rng) -> [Scalar; 4] {
    let g = grid as Scalar;
    // Sides of 2-3 cells: small enough that box positions stay varied,
    // large enough that the double-IoU-0.5 gate rewards a head that has
    // genuinely learned localization rather than demanding sub-cell
    // precision on single-cell boxes.
    let min_side = 2.min(grid);
    let max_side = 3.min(grid);
    let w = rng.gen_range(min_side..=max_side);
    let h = rng.gen_range(min_side..=max_side);
    let x0 = rng.gen_range(0..=grid - w);
    let y0 = rng.gen_range(0..=grid - h);
    [
        (x0 as Scalar + w as Scalar / 2.0) / g,
        (y0 as Scalar + h as Scalar / 2.0) / g,
        w as Scalar / g,
        h as Scalar / g,
    ]
}

/// Generates the vocabulary and dataset for a spec. Same seed, same bytes.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<(ConceptVocabulary, Dataset)> {
    spec.validate()?;
    let mut vocab_rng = stream_rng(spec.seed, STREAM_SYNTH_VOCAB);
    let descriptions = clustered_vectors(spec, spec.c_d, spec.intra_cosine);
    let classifiers = if spec.confusable_classifiers {
        clustered_vectors(spec, spec.c_t, spec.intra_cosine)
    } else {
        separable_classifiers(spec, &mut vocab_rng)?
    };

    let base_count = spec.vocab_size - spec.novel_count;
    let entries: Vec<ConceptEntry> = (0..spec.vocab_size)
        .map(|i| ConceptEntry {
            id: i as u32 + 1,
            action: format!("act{i}"),
            object: format!("obj{i}"),
            name_text: format!("act{i} obj{i}"),
            description_text: format!("a person act{i}s the obj{i}"),
            classifier_embedding: classifiers[i].clone(),
            description_embedding: descriptions[i].clone(),
            split: if i < base_count {
                Split::Base
            } else {
                Split::Novel
            },
            cluster_id: None,
        })
        .collect();
    let vocab = ConceptVocabulary::from_entries(entries)?;

    let mut image_rng = stream_rng(spec.seed, STREAM_SYNTH_IMAGES);
    let mut images = Vec::new();
    let make_image = |idx: usize, role: Role, category_id: u32, rng: &mut ChaCha8Rng| {
        let prefix = match role {
            Role::Train => "train",
            Role::Test => "test",
        };
        let token_seed = rng.gen();
        let mut interactions = vec![GroundTruthInteraction {
            human_box: random_box(spec.grid, rng),
            object_box: random_box(spec.grid, rng),
            category_id,
        }];
        if role == Role::Train {
            // Extra interactions cycle through the remaining base
            // categories; rejection keeps them distinct within the image.
            while interactions.len() < spec.train_interactions {
                let cat = rng.gen_range(1..=base_count as u32);
                if interactions.iter().any(|gt| gt.category_id == cat) {
                    continue;
                }
                interactions.push(GroundTruthInteraction {
                    human_box: random_box(spec.grid, rng),
                    object_box: random_box(spec.grid, rng),
                    category_id: cat,
                });
            }
        }
        ImageRecord {
            image_id: format!("{prefix}_{idx:04}"),
            role,
            height: spec.grid,
            width: spec.grid,
            token_seed,
            noise: spec.noise,
            interactions,
        }
    };

    let mut train_idx = 0;
    for i in 0..base_count {
        for _ in 0..spec.images_per_category {
            images.push(make_image(
                train_idx,
                Role::Train,
                i as u32 + 1,
                &mut image_rng,
            ));
            train_idx += 1;
        }
    }
    let mut test_idx = 0;
    for i in 0..spec.vocab_size {
        for _ in 0..spec.test_images_per_category {
            images.push(make_image(
                test_idx,
                Role::Test,
                i as u32 + 1,
                &mut image_rng,
            ));
            test_idx += 1;
        }
    }
    Ok((vocab, Dataset { images }))
}
