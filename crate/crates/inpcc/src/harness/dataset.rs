//! Dataset files: JSON lines, one image per line. Images are procedural
//! token grids identified by a seed, never stored as pixels; rendering here
//! is the single source of truth for what a scene looks like.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::concepts::ConceptVocabulary;
use crate::error::{Error, Result};
use crate::train::{cxcywh_to_xyxy, GroundTruthInteraction, TrainImage};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub role: Role,
    pub height: usize,
    pub width: usize,
    /// Seed for the procedural background of this image.
    pub token_seed: u64,
    /// Standard deviation of the background noise.
    pub noise: Scalar,
    pub interactions: Vec<GroundTruthInteraction>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    /// Loads and validates against the vocabulary: known categories, valid
    /// boxes, unique image ids.
    pub fn load(path: &Path, vocab: &ConceptVocabulary) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut images = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ImageRecord = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("dataset line {}: {e}", lineno + 1)))?;
            if record.height == 0 || record.width == 0 {
                return Err(Error::Format(format!(
                    "image {} has an empty grid",
                    record.image_id
                )));
            }
            if !(record.noise >= 0.0 && record.noise.is_finite()) {
                return Err(Error::Format(format!(
                    "image {} has invalid noise level {}",
                    record.image_id, record.noise
                )));
            }
            for gt in &record.interactions {
                gt.validate(vocab).map_err(|e| {
                    Error::Format(format!("image {}: {e}", record.image_id))
                })?;
            }
            if !seen.insert(record.image_id.clone()) {
                return Err(Error::Format(format!(
                    "duplicate image id {}",
                    record.image_id
                )));
            }
            images.push(record);
        }
        if images.is_empty() {
            return Err(Error::Format("dataset has no images".to_string()));
        }
        Ok(Dataset { images })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for image in &self.images {
            out.push_str(&serde_json::to_string(image).map_err(|e| {
                Error::Format(format!("serializing image {}: {e}", image.image_id))
            })?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn with_role(&self, role: Role) -> Vec<&ImageRecord> {
        self.images.iter().filter(|im| im.role == role).collect()
    }
}

/// Token channel count for a vocabulary: category channels plus the two
/// box-marker channels.
pub fn token_channels(vocab: &ConceptVocabulary) -> usize {
    vocab.c_t + 2
}

fn center_in_box(x: Scalar, y: Scalar, b: [Scalar; 4]) -> bool {
    let [x1, y1, x2, y2] = cxcywh_to_xyxy(b);
    x > x1 && x < x2 && y > y1 && y < y2
}

/// Renders one image: seeded Gaussian background at the record's noise
/// level, then each interaction imprints its category's classifier
/// embedding over the union of its boxes and marks human/object cells in
/// the two marker channels.
pub fn render_tokens(record: &ImageRecord, vocab: &ConceptVocabulary) -> Result<Tensor> {
    let c_in = token_channels(vocab);
    let (h, w) = (record.height, record.width);
    let mut rng = ChaCha8Rng::seed_from_u64(record.token_seed);
    let mut data: Vec<Scalar> = (0..h * w * c_in)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * record.noise
        })
        .collect();

    for gt in &record.interactions {
        let entry = vocab.entry(gt.category_id).ok_or_else(|| {
            Error::Parameter(format!("unknown category {}", gt.category_id))
        })?;
        for row in 0..h {
            for col in 0..w {
                let x = (col as Scalar + 0.5) / w as Scalar;
                let y = (row as Scalar + 0.5) / h as Scalar;
                let in_human = center_in_box(x, y, gt.human_box);
                let in_object = center_in_box(x, y, gt.object_box);
                let base = (row * w + col) * c_in;
                if in_human {
                    data[base + vocab.c_t] += 1.0;
                }
                if in_object {
                    data[base + vocab.c_t + 1] += 1.0;
                }
                if in_human || in_object {
                    for (i, e) in entry.classifier_embedding.iter().enumerate() {
                        data[base + i] += e;
                    }
                }
            }
        }
    }
    Tensor::new(&[h * w, c_in], data)
}

/// Renders every image of the given role into the training-loop view.
pub fn to_train_images(
    dataset: &Dataset,
    vocab: &ConceptVocabulary,
    role: Role,
) -> Result<Vec<TrainImage>> {
    dataset
        .with_role(role)
        .into_iter()
        .map(|record| {
            Ok(TrainImage {
                id: record.image_id.clone(),
                tokens: render_tokens(record, vocab)?,
                hw: (record.height, record.width),
                gts: record.interactions.clone(),
            })
        })
        .collect()
}
