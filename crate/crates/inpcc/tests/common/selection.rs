//! Straight-line re-implementation of prompt selection in plain f64 loops.
//! No tensors, no graph: an independent oracle for select_and_compose.

/// Tanh-form GELU, duplicated here on purpose so the oracle shares no code
/// with the library.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Selection oracle. Inputs are row-major: `common` [L×D], `u` [M×L],
/// `v` [M×D], `w1` [L·D×D], `w2` [D×D]. Returns (chosen indices,
/// their cosine weights, composed prompt flat [L×D]).
#[allow(clippy::too_many_arguments)]
pub fn straight_line_select(
    l: usize,
    d: usize,
    m: usize,
    k: usize,
    common: &[f64],
    u: &[f64],
    v: &[f64],
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    fingerprint: &[f64],
) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let f_norm = norm(fingerprint);
    assert!(f_norm > 1e-12, "degenerate fingerprint");

    // Per-prompt interaction parameters and cosine scores.
    let mut prompts = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let mut p = vec![0.0; l * d];
        for row in 0..l {
            for col in 0..d {
                p[row * d + col] = u[i * l + row] * v[i * d + col] * common[row * d + col];
            }
        }
        // Key MLP on the flattened prompt: affine L·D -> D, gelu, affine D -> D.
        let mut h = vec![0.0; d];
        for (o, h_o) in h.iter_mut().enumerate() {
            let mut acc = b1[o];
            for (input, &x) in p.iter().enumerate() {
                acc += x * w1[input * d + o];
            }
            *h_o = gelu(acc);
        }
        let mut key = vec![0.0; d];
        for (o, k_o) in key.iter_mut().enumerate() {
            let mut acc = b2[o];
            for (input, &x) in h.iter().enumerate() {
                acc += x * w2[input * d + o];
            }
            *k_o = acc;
        }
        let key_norm = norm(&key);
        assert!(key_norm > 1e-12, "degenerate key for prompt {i}");
        scores.push(dot(fingerprint, &key) / (f_norm * key_norm));
        prompts.push(p);
    }

    // Top-k by score, ties to the lower index.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let chosen: Vec<usize> = order[..k].to_vec();
    let weights: Vec<f64> = chosen.iter().map(|&i| scores[i]).collect();

    let mut composed = vec![0.0; l * d];
    for (&i, &w) in chosen.iter().zip(&weights) {
        for (c, p) in composed.iter_mut().zip(&prompts[i]) {
            *c += w * p;
        }
    }
    (chosen, weights, composed)
}
