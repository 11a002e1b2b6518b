//! Interaction-aware prompt generation.
//!
//! A [`PromptBank`] holds one common prompt shared by every image and a bank
//! of M rank-one interaction prompts, each parameterized as an outer product
//! u_i ⊗ v_i masking the common prompt. A small MLP maps each interaction
//! prompt to a key vector; at inference the image fingerprint scores all keys
//! by cosine similarity, the top-k prompts are selected, and their weighted
//! sum forms the per-image prompt handed to the encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// Common prompt plus M rank-one interaction prompts and the key MLP.
///
/// Parameter tensors are gradient-tracked; the interaction-specific part
/// costs M·(L+D) parameters instead of M·L·D full matrices.
pub struct PromptBank {
    pub l: usize,
    pub d: usize,
    pub m: usize,
    pub k: usize,
    /// P_C, shape [L×D].
    pub common: Tensor,
    /// Rows are u_i, shape [M×L].
    pub u_vectors: Tensor,
    /// Rows are v_i, shape [M×D].
    pub v_vectors: Tensor,
    /// Key MLP: flatten(L·D) → D, gelu, D → D.
    pub key_w1: Tensor,
    pub key_b1: Tensor,
    pub key_w2: Tensor,
    pub key_b2: Tensor,
}

/// Result of input-adaptive selection for one image.
#[derive(Clone)]
pub struct PromptSelection {
    /// Selected prompt indices, descending by weight, ties to lower index.
    pub chosen_indices: Vec<usize>,
    /// Cosine similarities of the fingerprint to the chosen keys.
    pub weights: Vec<Scalar>,
    /// P_IA = Σ w_i · P_IT^i over the chosen i, shape [L×D]. Carries the
    /// gradient graph of the selected entries only.
    pub composed: Tensor,
}

impl PromptBank {
    /// Fresh bank with the documented initialization: P_C ~ N(0, 0.02²);
    /// u, v with variance 0.5/√(L·D) so ‖u_i ⊗ v_i‖_F ≈ 0.5 at any size;
    /// key MLP weights at 1/fan-in variance, zero biases.
    pub fn init<G: Rng>(l: usize, d: usize, m: usize, k: usize, rng: &mut G) -> Result<Self> {
        if l == 0 || d == 0 || m == 0 {
            return Err(Error::Parameter(format!(
                "prompt bank dimensions must be positive, got L={l} D={d} M={m}"
            )));
        }
        if k == 0 || k > m {
            return Err(Error::Parameter(format!(
                "selection count k={k} must satisfy 1 <= k <= M={m}"
            )));
        }
        let uv_std = (0.5 / ((l * d) as f64).sqrt()).sqrt();
        let w1_std = 1.0 / ((l * d) as f64).sqrt();
        let w2_std = 1.0 / (d as f64).sqrt();
        Ok(PromptBank {
            l,
            d,
            m,
            k,
            common: Tensor::randn_param(&[l, d], 0.02, rng),
            u_vectors: Tensor::randn_param(&[m, l], uv_std, rng),
            v_vectors: Tensor::randn_param(&[m, d], uv_std, rng),
            key_w1: Tensor::randn_param(&[l * d, d], w1_std, rng),
            key_b1: Tensor::param(&[d], vec![0.0; d])?,
            key_w2: Tensor::randn_param(&[d, d], w2_std, rng),
            key_b2: Tensor::param(&[d], vec![0.0; d])?,
        })
    }

    /// Bank from explicit tensors (tests, checkpoint restore). Shapes are
    /// validated against (L, D, M).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        l: usize,
        d: usize,
        m: usize,
        k: usize,
        common: Tensor,
        u_vectors: Tensor,
        v_vectors: Tensor,
        key_w1: Tensor,
        key_b1: Tensor,
        key_w2: Tensor,
        key_b2: Tensor,
    ) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::Parameter(format!(
                "selection count k={k} must satisfy 1 <= k <= M={m}"
            )));
        }
        let expect = [
            (common.shape(), vec![l, d], "prompt.common"),
            (u_vectors.shape(), vec![m, l], "prompt.u"),
            (v_vectors.shape(), vec![m, d], "prompt.v"),
            (key_w1.shape(), vec![l * d, d], "prompt.key_mlp.w1"),
            (key_b1.shape(), vec![d], "prompt.key_mlp.b1"),
            (key_w2.shape(), vec![d, d], "prompt.key_mlp.w2"),
            (key_b2.shape(), vec![d], "prompt.key_mlp.b2"),
        ];
        for (got, want, name) in expect {
            if got != want.as_slice() {
                return Err(Error::Config(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(PromptBank {
            l,
            d,
            m,
            k,
            common,
            u_vectors,
            v_vectors,
            key_w1,
            key_b1,
            key_w2,
            key_b2,
        })
    }

    /// Parameter tensors under their checkpoint names.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        vec![
            ("prompt.common".to_string(), self.common.clone()),
            ("prompt.u".to_string(), self.u_vectors.clone()),
            ("prompt.v".to_string(), self.v_vectors.clone()),
            ("prompt.key_mlp.w1".to_string(), self.key_w1.clone()),
            ("prompt.key_mlp.b1".to_string(), self.key_b1.clone()),
            ("prompt.key_mlp.w2".to_string(), self.key_w2.clone()),
            ("prompt.key_mlp.b2".to_string(), self.key_b2.clone()),
        ]
    }

    /// Tracked parameters specific to the interaction prompts (u and v).
    pub fn interaction_parameter_count(&self) -> usize {
        self.u_vectors.numel() + self.v_vectors.numel()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.m {
            return Err(Error::Parameter(format!(
                "prompt index {i} out of range for M={}",
                self.m
            )));
        }
        Ok(())
    }

    /// P_IT^i = (u_i ⊗ v_i) ⊙ P_C, shape [L×D].
    pub fn interaction_prompt(&self, i: usize) -> Result<Tensor> {
        self.check_index(i)?;
        let u_i = self.u_vectors.gather_rows(&[i])?.reshape(&[self.l])?;
        let v_i = self.v_vectors.gather_rows(&[i])?.reshape(&[self.d])?;
        u_i.outer(&v_i)?.hadamard(&self.common)
    }

    /// k_IT^i = g(P_IT^i): the key MLP applied to the flattened prompt.
    /// Recomputed from current parameters on every call, so keys track
    /// training updates.
    pub fn prompt_key(&self, i: usize) -> Result<Tensor> {
        self.check_index(i)?;
        let flat = self.interaction_prompt(i)?.reshape(&[self.l * self.d])?;
        flat.linear(&self.key_w1, &self.key_b1)?
            .gelu()
            .linear(&self.key_w2, &self.key_b2)
    }

    /// Scores every key against the fingerprint, keeps the top-k (ties to
    /// the lower index) and composes P_IA = Σ w_i · P_IT^i with the raw
    /// cosine weights. Only the selected prompts enter the gradient graph.
    pub fn select_and_compose(&self, fingerprint: &Tensor) -> Result<PromptSelection> {
        if !fingerprint.is_vector() || fingerprint.numel() != self.d {
            return Err(Error::Dimension {
                op: "select_and_compose",
                lhs: fingerprint.shape().to_vec(),
                rhs: vec![self.d],
            });
        }
        // cosine_sim raises on degenerate inputs (fingerprint or key).
        let mut weight_nodes = Vec::with_capacity(self.m);
        let mut scores = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let key = self.prompt_key(i)?;
            let w = fingerprint.cosine_sim(&key)?;
            scores.push(w.value());
            weight_nodes.push(w);
        }
        let ranked = Tensor::new(&[self.m], scores)?.topk(self.k)?;

        let mut chosen_indices = Vec::with_capacity(self.k);
        let mut weights = Vec::with_capacity(self.k);
        let mut composed: Option<Tensor> = None;
        for &(i, w_val) in &ranked {
            chosen_indices.push(i);
            weights.push(w_val);
            let term = self.interaction_prompt(i)?.scale_by(&weight_nodes[i])?;
            composed = Some(match composed {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        Ok(PromptSelection {
            chosen_indices,
            weights,
            composed: composed.expect("k >= 1 by bank invariant"),
        })
    }
}

/// Shannon entropy (nats) of the empirical distribution of chosen prompt
/// indices across a selection history. Counts each chosen index once per
/// selection; weight magnitudes are ignored.
pub fn selection_entropy(history: &[PromptSelection]) -> Result<Scalar> {
    if history.is_empty() {
        return Err(Error::Parameter(
            "selection_entropy requires a nonempty history".to_string(),
        ));
    }
    let max_index = history
        .iter()
        .flat_map(|s| s.chosen_indices.iter().copied())
        .max()
        .expect("selections are never empty");
    let mut counts = vec![0usize; max_index + 1];
    for sel in history {
        for &i in &sel.chosen_indices {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let mut entropy = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            entropy -= p * p.ln();
        }
    }
    Ok(entropy)
}

/// Per-prompt usage frequencies of a selection history, length `m`. This is
/// the vector compared across classes by the selection-similarity diagnostic.
pub fn usage_frequencies(history: &[PromptSelection], m: usize) -> Result<Vec<Scalar>> {
    if history.is_empty() {
        return Err(Error::Parameter(
            "usage_frequencies requires a nonempty history".to_string(),
        ));
    }
    let mut counts = vec![0.0; m];
    let mut total = 0.0;
    for sel in history {
        for &i in &sel.chosen_indices {
            if i >= m {
                return Err(Error::Parameter(format!(
                    "selection index {i} out of range for M={m}"
                )));
            }
            counts[i] += 1.0;
            total += 1.0;
        }
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    fn identity(n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        d
    }

    /// L=1, D=3 bank whose key MLP is the identity composed with gelu, so
    /// key_i = gelu(P_IT^i) elementwise; u_i = 1 and v_i = e_i makes the keys
    /// mutually orthogonal.
    fn orthogonal_key_bank(k: usize) -> PromptBank {
        PromptBank::from_parts(
            1,
            3,
            3,
            k,
            p(&[1, 3], &[1.0, 1.0, 1.0]),
            p(&[3, 1], &[1.0, 1.0, 1.0]),
            p(&[3, 3], &identity(3)),
            p(&[3, 3], &identity(3)),
            p(&[3], &[0.0; 3]),
            p(&[3, 3], &identity(3)),
            p(&[3], &[0.0; 3]),
        )
        .unwrap()
    }

    #[test]
    fn interaction_prompt_examples() {
        let bank = PromptBank::from_parts(
            3,
            3,
            2,
            1,
            p(&[3, 3], &[1.0; 9]),
            p(&[2, 3], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            p(&[2, 3], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            p(&[9, 3], &[0.0; 27]),
            p(&[3], &[0.0; 3]),
            p(&[3, 3], &[0.0; 9]),
            p(&[3], &[0.0; 3]),
        )
        .unwrap();
        // u = e1, v = e1, P_C = ones: single 1 at (0,0).
        let p0 = bank.interaction_prompt(0).unwrap();
        let mut expected = vec![0.0; 9];
        expected[0] = 1.0;
        assert_eq!(p0.to_vec(), expected);
        // u = zeros: zero prompt regardless of P_C.
        let p1 = bank.interaction_prompt(1).unwrap();
        assert_eq!(p1.to_vec(), vec![0.0; 9]);
        assert!(matches!(
            bank.interaction_prompt(2),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn interaction_prompt_analytic() {
        let bank = PromptBank::from_parts(
            2,
            2,
            1,
            1,
            p(&[2, 2], &[1.0, 2.0, 3.0, 4.0]),
            p(&[1, 2], &[1.0, 2.0]),
            p(&[1, 2], &[1.0, 1.0]),
            p(&[4, 2], &[0.0; 8]),
            p(&[2], &[0.0; 2]),
            p(&[2, 2], &[0.0; 4]),
            p(&[2], &[0.0; 2]),
        )
        .unwrap();
        // (u ⊗ v) ⊙ P_C = [[1,1],[2,2]] ⊙ [[1,2],[3,4]] = [[1,2],[6,8]].
        assert_eq!(
            bank.interaction_prompt(0).unwrap().to_vec(),
            vec![1.0, 2.0, 6.0, 8.0]
        );
    }

    #[test]
    fn zero_prompt_gives_zero_key_and_equal_params_equal_keys() {
        let mut bank = orthogonal_key_bank(1);
        // Duplicate (u, v) across two indices: identical keys.
        bank.u_vectors = p(&[3, 1], &[1.0, 1.0, 0.0]);
        bank.v_vectors = p(&[3, 3], &[0.5, -0.2, 0.8, 0.5, -0.2, 0.8, 0.0, 0.0, 0.0]);
        let k0 = bank.prompt_key(0).unwrap();
        let k1 = bank.prompt_key(1).unwrap();
        assert_eq!(k0.to_vec(), k1.to_vec());
        // Zero prompt (u_2 = 0) through zero-bias MLP: zero key.
        let k2 = bank.prompt_key(2).unwrap();
        assert_eq!(k2.to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn key_gradient_reaches_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = PromptBank::init(2, 3, 4, 2, &mut rng).unwrap();
        let key = bank.prompt_key(1).unwrap();
        key.sum().backward().unwrap();
        let du = bank.u_vectors.grad().unwrap();
        // Row 1 of u receives gradient; finite-difference on one coordinate.
        let coord = 1 * bank.l; // (row 1, col 0)
        assert!(du[coord].abs() > 0.0);
        let h = 1e-5;
        let base = bank.u_vectors.to_vec();
        let mut probe = base.clone();
        probe[coord] = base[coord] + h;
        bank.u_vectors.set_data(&probe).unwrap();
        let plus: f64 = bank.prompt_key(1).unwrap().to_vec().iter().sum();
        probe[coord] = base[coord] - h;
        bank.u_vectors.set_data(&probe).unwrap();
        let minus: f64 = bank.prompt_key(1).unwrap().to_vec().iter().sum();
        bank.u_vectors.set_data(&base).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        assert!(
            (du[coord] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
            "analytic {} vs fd {}",
            du[coord],
            fd
        );
    }

    #[test]
    fn selection_picks_matching_orthogonal_key() {
        let bank = orthogonal_key_bank(1);
        let f = t(&[3], &[0.0, 0.0, 1.0]);
        let sel = bank.select_and_compose(&f).unwrap();
        assert_eq!(sel.chosen_indices, vec![2]);
        assert!((sel.weights[0] - 1.0).abs() <= 1e-12);
        // composed = 1.0 · P_IT^2 = e_3 row.
        assert_eq!(sel.composed.shape(), &[1, 3]);
        let c = sel.composed.to_vec();
        assert!((c[2] - 1.0).abs() <= 1e-12 && c[0].abs() <= 1e-12 && c[1].abs() <= 1e-12);
    }

    #[test]
    fn k_equals_m_composes_all_prompts() {
        let bank = orthogonal_key_bank(3);
        let f = t(&[3], &[0.3, 0.5, 0.9]);
        let sel = bank.select_and_compose(&f).unwrap();
        assert_eq!(sel.chosen_indices.len(), 3);
        // Full weighted sum: composed[d] = w_d since P_IT^i = e_i.
        let c = sel.composed.to_vec();
        for (&i, &w) in sel.chosen_indices.iter().zip(&sel.weights) {
            assert!((c[i] - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn selection_scale_invariant_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bank = PromptBank::init(3, 4, 6, 2, &mut rng).unwrap();
        let f = t(&[4], &[0.4, -0.2, 0.9, 0.1]);
        let a = bank.select_and_compose(&f).unwrap();
        let b = bank.select_and_compose(&f.scale(17.0)).unwrap();
        assert_eq!(a.chosen_indices, b.chosen_indices);
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa - wb).abs() <= 1e-12);
        }
        // Re-run on identical state: bitwise identical.
        let c = bank.select_and_compose(&f).unwrap();
        assert_eq!(a.chosen_indices, c.chosen_indices);
        assert_eq!(a.weights, c.weights);
        assert_eq!(a.composed.to_vec(), c.composed.to_vec());
    }

    #[test]
    fn degenerate_fingerprint_rejected() {
        let bank = orthogonal_key_bank(1);
        let zero = t(&[3], &[0.0; 3]);
        assert!(matches!(
            bank.select_and_compose(&zero),
            Err(Error::DegenerateInput(_))
        ));
        let wrong_len = t(&[2], &[1.0, 0.0]);
        assert!(matches!(
            bank.select_and_compose(&wrong_len),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn composed_rank_bounded_by_k_when_common_is_ones() {
        // With P_C = ones, each term is rank one, so P_IA has rank <= k.
        for k in [1usize, 2] {
            let mut rng = ChaCha8Rng::seed_from_u64(23 + k as u64);
            let mut bank = PromptBank::init(4, 4, 5, k, &mut rng).unwrap();
            bank.common = p(&[4, 4], &[1.0; 16]);
            let f = t(&[4], &[0.2, -0.7, 0.4, 0.9]);
            let sel = bank.select_and_compose(&f).unwrap();
            let m = sel.composed.to_vec();
            let dim = k + 1;
            // Every (k+1)×(k+1) minor must vanish.
            let rows: Vec<Vec<usize>> = combos(4, dim);
            for r in &rows {
                for c in &rows {
                    let mut sub = vec![0.0; dim * dim];
                    for (ri, &rr) in r.iter().enumerate() {
                        for (ci, &cc) in c.iter().enumerate() {
                            sub[ri * dim + ci] = m[rr * 4 + cc];
                        }
                    }
                    assert!(
                        det(&sub, dim).abs() <= 1e-9,
                        "k={k} minor rows {r:?} cols {c:?}"
                    );
                }
            }
        }
    }

    fn combos(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] != i + n - k {
                    break;
                }
                if i == 0 {
                    return out;
                }
            }
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    fn det(m: &[f64], n: usize) -> f64 {
        // Gaussian elimination with partial pivoting.
        let mut a = m.to_vec();
        let mut d = 1.0;
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap()
            });
            let pivot = pivot.unwrap();
            if a[pivot * n + col].abs() < 1e-15 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                }
                d = -d;
            }
            d *= a[col * n + col];
            for row in col + 1..n {
                let f = a[row * n + col] / a[col * n + col];
                for j in col..n {
                    a[row * n + j] -= f * a[col * n + j];
                }
            }
        }
        d
    }

    #[test]
    fn interaction_parameter_count_is_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (l, d, m) = (4, 6, 8);
        let bank = PromptBank::init(l, d, m, 2, &mut rng).unwrap();
        assert_eq!(bank.interaction_parameter_count(), m * (l + d));
        assert!(bank.interaction_parameter_count() < m * l * d);
    }

    #[test]
    fn gradient_only_reaches_chosen_prompts() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let bank = PromptBank::init(3, 4, 6, 2, &mut rng).unwrap();
        let f = t(&[4], &[0.4, -0.2, 0.9, 0.1]);
        let sel = bank.select_and_compose(&f).unwrap();
        sel.composed.sum().backward().unwrap();
        let du = bank.u_vectors.grad().unwrap();
        let dv = bank.v_vectors.grad().unwrap();
        for j in 0..bank.m {
            let u_row = &du[j * bank.l..(j + 1) * bank.l];
            let v_row = &dv[j * bank.d..(j + 1) * bank.d];
            let touched = u_row.iter().chain(v_row).any(|g| g.abs() > 0.0);
            assert_eq!(
                sel.chosen_indices.contains(&j),
                touched,
                "prompt {j}: gradient locality violated"
            );
        }
    }

    #[test]
    fn entropy_examples() {
        let bank = orthogonal_key_bank(1);
        let sel_for = |f: &Tensor| bank.select_and_compose(f).unwrap();
        let e0 = t(&[3], &[1.0, 0.0, 0.0]);
        let e1 = t(&[3], &[0.0, 1.0, 0.0]);
        let e2 = t(&[3], &[0.0, 0.0, 1.0]);

        // Same single index every time: entropy 0.
        let same = vec![sel_for(&e0), sel_for(&e0), sel_for(&e0)];
        assert_eq!(selection_entropy(&same).unwrap(), 0.0);

        // Uniform usage over M indices: ln M.
        let uniform = vec![sel_for(&e0), sel_for(&e1), sel_for(&e2)];
        let h = selection_entropy(&uniform).unwrap();
        assert!((h - (3.0f64).ln()).abs() <= 1e-12);

        // Counts [2,1,1]: entropy of [0.5, 0.25, 0.25] = 1.5·ln 2.
        let skewed = vec![sel_for(&e0), sel_for(&e0), sel_for(&e1), sel_for(&e2)];
        let h = selection_entropy(&skewed).unwrap();
        assert!((h - 1.5 * std::f64::consts::LN_2).abs() <= 1e-12);
        assert!((h - 1.03972).abs() <= 1e-5);

        assert!(matches!(selection_entropy(&[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn usage_frequencies_normalized() {
        let bank = orthogonal_key_bank(1);
        let e0 = t(&[3], &[1.0, 0.0, 0.0]);
        let e1 = t(&[3], &[0.0, 1.0, 0.0]);
        let hist = vec![
            bank.select_and_compose(&e0).unwrap(),
            bank.select_and_compose(&e0).unwrap(),
            bank.select_and_compose(&e1).unwrap(),
        ];
        let freq = usage_frequencies(&hist, 3).unwrap();
        assert_eq!(freq, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
    }
}
