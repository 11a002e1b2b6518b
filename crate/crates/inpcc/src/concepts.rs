//! HOI concept calibration: the category vocabulary, description-embedding
//! clustering, and cluster-aware negative sampling.
//!
//! Vocabulary files are UTF-8 JSON lines, one entry per line. Classifier
//! embeddings are L2-normalized on load; description embeddings are
//! clustered as-is with k-means (k-means++ seeding, Euclidean distance).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// Category split: seen during training or held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Novel,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Base => write!(f, "base"),
            Split::Novel => write!(f, "novel"),
        }
    }
}

/// Negative-category sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Hard,
    Easy,
    Random,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Strategy::Hard),
            "easy" => Ok(Strategy::Easy),
            "random" => Ok(Strategy::Random),
            other => Err(Error::Parameter(format!(
                "unknown negative-sampling strategy '{other}' (expected hard, easy or random)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Hard => write!(f, "hard"),
            Strategy::Easy => write!(f, "easy"),
            Strategy::Random => write!(f, "random"),
        }
    }
}

/// One HOI category: an (action, object) pair with its texts and embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptEntry {
    pub id: u32,
    pub action: String,
    pub object: String,
    pub name_text: String,
    pub description_text: String,
    /// Joint-space classifier embedding (T_hoi row), normalized on load.
    pub classifier_embedding: Vec<Scalar>,
    /// Visual description embedding; the clustering input.
    pub description_embedding: Vec<Scalar>,
    pub split: Split,
    #[serde(skip)]
    pub cluster_id: Option<usize>,
}

/// Validated category vocabulary with id-based lookup.
#[derive(Debug)]
pub struct ConceptVocabulary {
    pub entries: Vec<ConceptEntry>,
    index: HashMap<u32, usize>,
    /// Classifier embedding width.
    pub c_t: usize,
    /// Description embedding width.
    pub c_d: usize,
}

impl ConceptVocabulary {
    /// Builds and validates a vocabulary from entries (see `load` for the
    /// file-based path). Classifier embeddings are normalized here.
    pub fn from_entries(mut entries: Vec<ConceptEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Format("vocabulary has no entries".to_string()));
        }
        let c_t = entries[0].classifier_embedding.len();
        let c_d = entries[0].description_embedding.len();
        if c_t == 0 || c_d == 0 {
            return Err(Error::Format(format!(
                "entry {} has an empty embedding",
                entries[0].id
            )));
        }
        let mut index = HashMap::new();
        let mut pairs = HashSet::new();
        for (pos, entry) in entries.iter_mut().enumerate() {
            if entry.classifier_embedding.len() != c_t {
                return Err(Error::Format(format!(
                    "entry {} has classifier embedding of length {}, expected {c_t}",
                    entry.id,
                    entry.classifier_embedding.len()
                )));
            }
            if entry.description_embedding.len() != c_d {
                return Err(Error::Format(format!(
                    "entry {} has description embedding of length {}, expected {c_d}",
                    entry.id,
                    entry.description_embedding.len()
                )));
            }
            if index.insert(entry.id, pos).is_some() {
                return Err(Error::Format(format!("duplicate id {}", entry.id)));
            }
            if !pairs.insert((entry.action.clone(), entry.object.clone())) {
                return Err(Error::Format(format!(
                    "duplicate (action, object) pair ({}, {}) at id {}",
                    entry.action, entry.object, entry.id
                )));
            }
            let norm: f64 = entry
                .classifier_embedding
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm <= crate::numeric::NORM_EPS {
                return Err(Error::Format(format!(
                    "entry {} has a zero classifier embedding",
                    entry.id
                )));
            }
            // Normalize only when needed so already-normalized files
            // round-trip byte-identically.
            if (norm - 1.0).abs() > 1e-9 {
                for x in entry.classifier_embedding.iter_mut() {
                    *x /= norm;
                }
            }
        }
        Ok(ConceptVocabulary {
            entries,
            index,
            c_t,
            c_d,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ConceptEntry = serde_json::from_str(line).map_err(|e| {
                Error::Format(format!("vocabulary line {}: {e}", lineno + 1))
            })?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(
                &serde_json::to_string(entry)
                    .map_err(|e| Error::Format(format!("serializing entry {}: {e}", entry.id)))?,
            );
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of a category id in entry order (the class-score column).
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn entry(&self, id: u32) -> Option<&ConceptEntry> {
        self.index_of(id).map(|i| &self.entries[i])
    }

    /// Classifier embeddings as a [V×C_t] tensor, rows in entry order.
    pub fn classifier_matrix(&self) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.len() * self.c_t);
        for e in &self.entries {
            data.extend_from_slice(&e.classifier_embedding);
        }
        Tensor::new(&[self.len(), self.c_t], data)
    }

    /// Ids in entry order.
    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

/// Fitted k-means model over description embeddings.
pub struct ClusterModel {
    /// Shape [J×C_d].
    pub centroids: Tensor,
    /// Category id → cluster index.
    pub assignments: BTreeMap<u32, usize>,
    /// Final within-cluster sum of squared distances.
    pub inertia: Scalar,
    /// Inertia measured after every assignment step; non-increasing.
    pub inertia_trace: Vec<Scalar>,
    pub j: usize,
}

impl ClusterModel {
    /// Members of each cluster, as sorted id lists.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.j];
        for (&id, &cluster) in &self.assignments {
            out[cluster].push(id);
        }
        out
    }

    /// The `id<TAB>cluster_id` export, sorted by id.
    pub fn map_text(&self) -> String {
        let mut out = String::new();
        for (&id, &cluster) in &self.assignments {
            out.push_str(&format!("{id}\t{cluster}\n"));
        }
        out
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance, ties to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means over the vocabulary's description embeddings: k-means++ seeding,
/// Lloyd iterations to an assignment fixpoint (or 300 rounds), empty
/// clusters keep their previous centroid. Writes cluster ids back into the
/// vocabulary entries.
pub fn cluster(vocab: &mut ConceptVocabulary, j: usize, seed: u64) -> Result<ClusterModel> {
    let n = vocab.len();
    if j == 0 || j > n {
        return Err(Error::Parameter(format!(
            "cluster count J={j} out of range for vocabulary of size {n}"
        )));
    }
    let points: Vec<Vec<f64>> = vocab
        .entries
        .iter()
        .map(|e| e.description_embedding.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: first centroid uniform, then weighted by squared
    // distance to the nearest chosen centroid.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(j);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < j {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // All remaining mass at zero distance: take the first point that
            // is not already a centroid (duplicates collapse).
            (0..n)
                .find(|&i| centroids.iter().all(|c| c != &points[i]))
                .unwrap_or(0)
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, centroids.last().expect("just pushed"));
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }

    // Lloyd iterations.
    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    for _ in 0..300 {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        if !changed {
            break;
        }
        let c_d = vocab.c_d;
        let mut sums = vec![vec![0.0; c_d]; j];
        let mut counts = vec![0usize; j];
        for (i, p) in points.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, x) in sums[assignments[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        for cl in 0..j {
            if counts[cl] > 0 {
                for s in sums[cl].iter_mut() {
                    *s /= counts[cl] as f64;
                }
                centroids[cl] = sums[cl].clone();
            }
        }
    }

    let inertia = *inertia_trace.last().expect("at least one iteration");
    let mut assignment_map = BTreeMap::new();
    for (entry, &cl) in vocab.entries.iter_mut().zip(&assignments) {
        entry.cluster_id = Some(cl);
        assignment_map.insert(entry.id, cl);
    }
    let centroid_tensor = Tensor::new(
        &[j, vocab.c_d],
        centroids.into_iter().flatten().collect(),
    )?;
    Ok(ClusterModel {
        centroids: centroid_tensor,
        assignments: assignment_map,
        inertia,
        inertia_trace,
        j,
    })
}

/// Negative sample plus a diagnostic for exhausted pools.
pub struct NegativeSample {
    pub ids: Vec<u32>,
    /// True when the strategy's candidate pool was empty.
    pub pool_empty: bool,
}

/// Samples up to `count` negative category ids, uniformly without
/// replacement from the strategy's candidate pool:
/// hard — clusters containing a batch positive, minus the positives;
/// easy — clusters containing no positive;
/// random — everything minus the positives.
/// Pools smaller than `count` are returned whole; hard/easy never back-fill.
pub fn sample_negatives<G: Rng>(
    vocab: &ConceptVocabulary,
    clusters: &ClusterModel,
    batch_positive_ids: &BTreeSet<u32>,
    count: usize,
    strategy: Strategy,
    rng: &mut G,
) -> Result<NegativeSample> {
    if batch_positive_ids.is_empty() {
        return Err(Error::Parameter(
            "sample_negatives requires at least one batch positive".to_string(),
        ));
    }
    for &id in batch_positive_ids {
        if vocab.index_of(id).is_none() {
            return Err(Error::Parameter(format!(
                "batch positive id {id} is not in the vocabulary"
            )));
        }
        if !clusters.assignments.contains_key(&id) {
            return Err(Error::Parameter(format!(
                "batch positive id {id} has no cluster assignment"
            )));
        }
    }

    let positive_clusters: BTreeSet<usize> = batch_positive_ids
        .iter()
        .map(|id| clusters.assignments[id])
        .collect();

    let mut pool: Vec<u32> = match strategy {
        Strategy::Hard => clusters
            .assignments
            .iter()
            .filter(|(id, cl)| {
                positive_clusters.contains(cl) && !batch_positive_ids.contains(id)
            })
            .map(|(&id, _)| id)
            .collect(),
        Strategy::Easy => clusters
            .assignments
            .iter()
            .filter(|(_, cl)| !positive_clusters.contains(cl))
            .map(|(&id, _)| id)
            .collect(),
        Strategy::Random => vocab
            .ids()
            .into_iter()
            .filter(|id| !batch_positive_ids.contains(id))
            .collect(),
    };
    pool.sort_unstable();

    if pool.is_empty() {
        return Ok(NegativeSample {
            ids: Vec::new(),
            pool_empty: true,
        });
    }
    if pool.len() <= count {
        return Ok(NegativeSample {
            ids: pool,
            pool_empty: false,
        });
    }
    let ids = pool.choose_multiple(rng, count).copied().collect();
    Ok(NegativeSample {
        ids,
        pool_empty: false,
    })
}
