//! Prompt-conditioned encoder, HOI query decoder, and the two heads.
//!
//! The encoder is a small trainable pre-LN transformer: image tokens are
//! projected to width C, given 2D sinusoidal positional encodings, and
//! prefixed with the prompt rows (which carry no positional encoding). The
//! decoder cross-attends learned HOI queries to the encoded grid. A box head
//! maps each decoded query to 8 box coordinates plus a confidence score, and
//! a classifier head scores queries against fixed text embeddings in a joint
//! space via temperature-scaled cosine similarity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::prompts::{PromptBank, PromptSelection};
use crate::{Scalar, Tensor};

/// Encoded image: per-token grid features plus a single fingerprint vector.
pub struct ImageFeatures {
    /// F_I, shape [HW×C].
    pub grid: Tensor,
    /// f_I: L2-normalized mean of the grid rows, shape [C].
    pub fingerprint: Tensor,
    /// Grid height and width; `grid` has hw.0 · hw.1 rows.
    pub hw: (usize, usize),
}

/// Decoded detections for one image.
pub struct DetectionSet {
    /// Head output per query, shape [N×9]: columns 0..4 human box cxcywh,
    /// 4..8 object box cxcywh, 8 confidence. All in (0,1).
    pub boxes: Tensor,
    /// ŝ, shape [N×V], each in (0,1).
    pub class_scores: Tensor,
    /// H, shape [N×C].
    pub decoded: Tensor,
}

impl DetectionSet {
    pub fn n_queries(&self) -> usize {
        self.boxes.shape()[0]
    }

    /// Human box of query `i` as plain cxcywh values.
    pub fn human_box(&self, i: usize) -> [Scalar; 4] {
        let d = self.boxes.data();
        let row = &d[i * 9..i * 9 + 4];
        [row[0], row[1], row[2], row[3]]
    }

    /// Object box of query `i` as plain cxcywh values.
    pub fn object_box(&self, i: usize) -> [Scalar; 4] {
        let d = self.boxes.data();
        let row = &d[i * 9 + 4..i * 9 + 8];
        [row[0], row[1], row[2], row[3]]
    }

    pub fn confidence(&self, i: usize) -> Scalar {
        self.boxes.data()[i * 9 + 8]
    }
}

/// Full forward result for one image.
pub struct ForwardOutput {
    pub features: ImageFeatures,
    pub detections: DetectionSet,
    /// Present when interaction-aware prompting was used.
    pub selection: Option<PromptSelection>,
}

/// Final ranking score ŝ' = ŝ · ĉ^γ. Monotone in both arguments for
/// γ ≥ 0; γ = 0 leaves the class score untouched.
pub fn inference_score(class_score: Scalar, confidence: Scalar, gamma: Scalar) -> Scalar {
    class_score * confidence.powf(gamma)
}

/// Sinusoidal 2D positional encoding: the first C/2 channels encode the row
/// index, the rest the column index, each as interleaved sin/cos bands.
pub fn positional_encoding(h: usize, w: usize, c: usize) -> Result<Tensor> {
    if c % 4 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs width divisible by 4, got {c}"
        )));
    }
    let half = c / 2;
    let bands = half / 2;
    let mut data = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            let token = r * w + col;
            for b in 0..bands {
                let omega = 1.0 / 10000f64.powf(2.0 * b as f64 / half as f64);
                data[token * c + 2 * b] = (r as f64 * omega).sin();
                data[token * c + 2 * b + 1] = (r as f64 * omega).cos();
                data[token * c + half + 2 * b] = (col as f64 * omega).sin();
                data[token * c + half + 2 * b + 1] = (col as f64 * omega).cos();
            }
        }
    }
    Tensor::new(&[h * w, c], data)
}

/// Multi-head attention over row-token matrices.
pub struct Attention {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    heads: usize,
}

impl Attention {
    fn init<G: Rng>(c: usize, heads: usize, rng: &mut G) -> Self {
        let std = 1.0 / (c as f64).sqrt();
        Attention {
            wq: Tensor::randn_param(&[c, c], std, rng),
            bq: Tensor::param(&[c], vec![0.0; c]).expect("zero bias"),
            wk: Tensor::randn_param(&[c, c], std, rng),
            bk: Tensor::param(&[c], vec![0.0; c]).expect("zero bias"),
            wv: Tensor::randn_param(&[c, c], std, rng),
            bv: Tensor::param(&[c], vec![0.0; c]).expect("zero bias"),
            wo: Tensor::randn_param(&[c, c], std, rng),
            bo: Tensor::param(&[c], vec![0.0; c]).expect("zero bias"),
            heads,
        }
    }

    /// Attention output plus the per-head attention matrices (probes for
    /// tests and diagnostics; each row sums to 1).
    pub fn apply_with_probe(
        &self,
        queries: &Tensor,
        memory: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let c = self.wq.shape()[0];
        let hd = c / self.heads;
        let q = queries.linear(&self.wq, &self.bq)?;
        let k = memory.linear(&self.wk, &self.bk)?;
        let v = memory.linear(&self.wv, &self.bv)?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut probes = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let scores = q
                .slice_cols(lo, hi)?
                .matmul(&k.slice_cols(lo, hi)?.transpose()?)?
                .scale(scale);
            let attn = scores.softmax_rows()?;
            outs.push(attn.matmul(&v.slice_cols(lo, hi)?)?);
            probes.push(attn);
        }
        let cat = Tensor::concat_cols(&outs)?;
        Ok((cat.linear(&self.wo, &self.bo)?, probes))
    }

    pub fn apply(&self, queries: &Tensor, memory: &Tensor) -> Result<Tensor> {
        Ok(self.apply_with_probe(queries, memory)?.0)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
        ] {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }
}

struct FeedForward {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl FeedForward {
    fn init<G: Rng>(c: usize, rng: &mut G) -> Self {
        let hidden = 2 * c;
        FeedForward {
            w1: Tensor::randn_param(&[c, hidden], 1.0 / (c as f64).sqrt(), rng),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]).expect("zero bias"),
            w2: Tensor::randn_param(&[hidden, c], 1.0 / (hidden as f64).sqrt(), rng),
            b2: Tensor::param(&[c], vec![0.0; c]).expect("zero bias"),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.w1, &self.b1)?.gelu().linear(&self.w2, &self.b2)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w1"), self.w1.clone()));
        out.push((format!("{prefix}.b1"), self.b1.clone()));
        out.push((format!("{prefix}.w2"), self.w2.clone()));
        out.push((format!("{prefix}.b2"), self.b2.clone()));
    }
}

struct LayerNormParams {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNormParams {
    fn init(c: usize) -> Self {
        LayerNormParams {
            gamma: Tensor::param(&[c], vec![1.0; c]).expect("unit gain"),
            beta: Tensor::param(&[c], vec![0.0; c]).expect("zero shift"),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Pre-LN self-attention block: x += attn(ln1(x)); x += ffn(ln2(x)).
pub struct EncoderBlock {
    ln1: LayerNormParams,
    pub attn: Attention,
    ln2: LayerNormParams,
    ffn: FeedForward,
}

impl EncoderBlock {
    fn init<G: Rng>(c: usize, heads: usize, rng: &mut G) -> Self {
        EncoderBlock {
            ln1: LayerNormParams::init(c),
            attn: Attention::init(c, heads, rng),
            ln2: LayerNormParams::init(c),
            ffn: FeedForward::init(c, rng),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let normed = self.ln1.apply(x)?;
        let x = x.add(&self.attn.apply(&normed, &normed)?)?;
        let f = self.ffn.apply(&self.ln2.apply(&x)?)?;
        x.add(&f)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.named(&format!("{prefix}.ln1"), out);
        self.attn.named(&format!("{prefix}.attn"), out);
        self.ln2.named(&format!("{prefix}.ln2"), out);
        self.ffn.named(&format!("{prefix}.ffn"), out);
    }
}

/// Pre-LN decoder block: query self-attention, cross-attention to the grid,
/// feed-forward, all residual.
pub struct DecoderBlock {
    ln1: LayerNormParams,
    pub self_attn: Attention,
    ln2: LayerNormParams,
    pub cross_attn: Attention,
    ln3: LayerNormParams,
    ffn: FeedForward,
}

impl DecoderBlock {
    fn init<G: Rng>(c: usize, heads: usize, rng: &mut G) -> Self {
        DecoderBlock {
            ln1: LayerNormParams::init(c),
            self_attn: Attention::init(c, heads, rng),
            ln2: LayerNormParams::init(c),
            cross_attn: Attention::init(c, heads, rng),
            ln3: LayerNormParams::init(c),
            ffn: FeedForward::init(c, rng),
        }
    }

    fn apply(&self, q: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let normed = self.ln1.apply(q)?;
        let q = q.add(&self.self_attn.apply(&normed, &normed)?)?;
        let ca = self.cross_attn.apply(&self.ln2.apply(&q)?, memory)?;
        let q = q.add(&ca)?;
        let f = self.ffn.apply(&self.ln3.apply(&q)?)?;
        q.add(&f)
    }

    fn named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.named(&format!("{prefix}.ln1"), out);
        self.self_attn.named(&format!("{prefix}.self_attn"), out);
        self.ln2.named(&format!("{prefix}.ln2"), out);
        self.cross_attn.named(&format!("{prefix}.cross_attn"), out);
        self.ln3.named(&format!("{prefix}.ln3"), out);
        self.ffn.named(&format!("{prefix}.ffn"), out);
    }
}

/// The desk-scale detector backbone: encoder, decoder, heads.
pub struct Detector {
    pub c_in: usize,
    pub c: usize,
    pub n_queries: usize,
    /// Joint-space width (matches classifier text embeddings).
    pub c_t: usize,
    input_w: Tensor,
    input_b: Tensor,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    pub query: Tensor,
    box_w1: Tensor,
    box_b1: Tensor,
    box_w2: Tensor,
    box_b2: Tensor,
    cls_w: Tensor,
    cls_b: Tensor,
    pub log_temperature: Tensor,
}

impl Detector {
    /// Fresh detector. The final box-head layer starts at zero so every box
    /// opens at (0.5, 0.5, 0.5, 0.5) and, since no loss term supervises the
    /// confidence column, confidence stays exactly 0.5.
    pub fn init<G: Rng>(
        c_in: usize,
        c: usize,
        heads: usize,
        blocks: usize,
        n_queries: usize,
        c_t: usize,
        rng: &mut G,
    ) -> Result<Self> {
        if c % 4 != 0 || heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!(
                "width {c} must be divisible by 4 and by heads={heads}"
            )));
        }
        if blocks == 0 || n_queries == 0 || c_in == 0 || c_t == 0 {
            return Err(Error::Config(
                "blocks, queries and widths must be positive".to_string(),
            ));
        }
        let std_in = 1.0 / (c_in as f64).sqrt();
        let std_c = 1.0 / (c as f64).sqrt();
        Ok(Detector {
            c_in,
            c,
            n_queries,
            c_t,
            input_w: Tensor::randn_param(&[c_in, c], std_in, rng),
            input_b: Tensor::param(&[c], vec![0.0; c])?,
            encoder: (0..blocks).map(|_| EncoderBlock::init(c, heads, rng)).collect(),
            decoder: (0..blocks).map(|_| DecoderBlock::init(c, heads, rng)).collect(),
            query: Tensor::randn_param(&[n_queries, c], std_c, rng),
            box_w1: Tensor::randn_param(&[c, c], std_c, rng),
            box_b1: Tensor::param(&[c], vec![0.0; c])?,
            box_w2: Tensor::param(&[c, 9], vec![0.0; c * 9])?,
            box_b2: Tensor::param(&[9], vec![0.0; 9])?,
            cls_w: Tensor::randn_param(&[c, c_t], std_c, rng),
            cls_b: Tensor::param(&[c_t], vec![0.0; c_t])?,
            log_temperature: Tensor::param(&[1], vec![(0.07f64).ln()])?,
        })
    }

    /// Projected tokens plus positional encodings: the encoder's view of the
    /// image before any prompt rows are attached.
    pub fn embed_tokens(&self, tokens: &Tensor, hw: (usize, usize)) -> Result<Tensor> {
        let (rows, width) = match tokens.shape() {
            [r, w] => (*r, *w),
            other => {
                return Err(Error::Dimension {
                    op: "embed_tokens",
                    lhs: other.to_vec(),
                    rhs: vec![hw.0 * hw.1, self.c_in],
                })
            }
        };
        if width != self.c_in || rows != hw.0 * hw.1 {
            return Err(Error::Config(format!(
                "token grid {rows}x{width} does not match hw {hw:?} with input width {}",
                self.c_in
            )));
        }
        let projected = tokens.linear(&self.input_w, &self.input_b)?;
        projected.add(&positional_encoding(hw.0, hw.1, self.c)?)
    }

    /// Encoder pass over an already-embedded grid. Prompt rows are prepended
    /// without positional encoding and stripped again after the blocks.
    pub fn encode_embedded(&self, embedded: &Tensor, hw: (usize, usize), prompt: &Tensor) -> Result<ImageFeatures> {
        let (l, d) = match prompt.shape() {
            [l, d] => (*l, *d),
            other => {
                return Err(Error::Dimension {
                    op: "encode",
                    lhs: other.to_vec(),
                    rhs: vec![self.c],
                })
            }
        };
        if d != self.c {
            return Err(Error::Config(format!(
                "prompt width {d} does not match encoder width {}",
                self.c
            )));
        }
        let hw_tokens = hw.0 * hw.1;
        let mut x = Tensor::concat_rows(&[prompt.clone(), embedded.clone()])?;
        for block in &self.encoder {
            x = block.apply(&x)?;
        }
        let grid_rows: Vec<usize> = (l..l + hw_tokens).collect();
        let grid = x.gather_rows(&grid_rows)?;
        let fingerprint = grid.mean_rows()?.l2_normalize()?;
        Ok(ImageFeatures {
            grid,
            fingerprint,
            hw,
        })
    }

    /// Full encode: project, add positional encodings, run the blocks.
    pub fn encode(&self, tokens: &Tensor, hw: (usize, usize), prompt: &Tensor) -> Result<ImageFeatures> {
        let embedded = self.embed_tokens(tokens, hw)?;
        self.encode_embedded(&embedded, hw, prompt)
    }

    /// Decoder pass: learned queries against the encoded grid.
    pub fn decode(&self, features: &ImageFeatures) -> Result<Tensor> {
        let mut q = self.query.clone();
        for block in &self.decoder {
            q = block.apply(&q, &features.grid)?;
        }
        Ok(q)
    }

    /// Box head: per query, 8 box coordinates and a confidence, all through
    /// the logistic map.
    pub fn box_head(&self, decoded: &Tensor) -> Result<Tensor> {
        Ok(decoded
            .linear(&self.box_w1, &self.box_b1)?
            .gelu()
            .linear(&self.box_w2, &self.box_b2)?
            .sigmoid())
    }

    /// Classifier head: project to the joint space, L2-normalize per query,
    /// cosine against the (already normalized) text embeddings, scale by the
    /// learned temperature, squash.
    pub fn classify(&self, decoded: &Tensor, text_embeddings: &Tensor) -> Result<Tensor> {
        let (v, ct) = match text_embeddings.shape() {
            [v, ct] => (*v, *ct),
            other => {
                return Err(Error::Dimension {
                    op: "classify",
                    lhs: other.to_vec(),
                    rhs: vec![self.c_t],
                })
            }
        };
        if ct != self.c_t || v == 0 {
            return Err(Error::Config(format!(
                "text embeddings {v}x{ct} do not match joint width {}",
                self.c_t
            )));
        }
        // Text embeddings are constants; normalize them outside the graph so
        // the similarity is a true cosine even for unnormalized fixtures.
        let mut t_norm = text_embeddings.to_vec();
        for (row_idx, row) in t_norm.chunks_mut(ct).enumerate() {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= crate::numeric::NORM_EPS {
                return Err(Error::DegenerateInput(format!(
                    "text embedding row {row_idx} has norm below 1e-12"
                )));
            }
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        let text_normalized = Tensor::new(&[v, ct], t_norm)?;

        let projected = decoded.linear(&self.cls_w, &self.cls_b)?;
        let n = projected.shape()[0];
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let row = projected
                .gather_rows(&[i])?
                .reshape(&[self.c_t])?
                .l2_normalize()?;
            rows.push(row.reshape(&[1, self.c_t])?);
        }
        let normalized = Tensor::concat_rows(&rows)?;
        let logits = normalized.matmul(&text_normalized.transpose()?)?;
        // Floor the learned temperature at 0.05 so the scaled cosine stays
        // within +-20 and the sigmoid never rounds to exactly 1.0 in f64;
        // a collapsed temperature would otherwise erase the ranking between
        // near-identical high scores.
        let temperature = self
            .log_temperature
            .exp()
            .maximum(&Tensor::new(&[1], vec![0.05])?)?;
        Ok(logits.div_by(&temperature)?.sigmoid())
    }

    /// End-to-end forward pass for one image.
    ///
    /// With `use_inp`, a first encoder pass under the common prompt produces
    /// the fingerprint, the bank selects and composes the interaction-aware
    /// prompt, and a second pass under that prompt feeds the decoder. Without
    /// it, the common prompt alone conditions a single pass.
    pub fn forward(
        &self,
        tokens: &Tensor,
        hw: (usize, usize),
        bank: &PromptBank,
        text_embeddings: &Tensor,
        use_inp: bool,
    ) -> Result<ForwardOutput> {
        let embedded = self.embed_tokens(tokens, hw)?;
        let (features, selection) = if use_inp {
            let first = self.encode_embedded(&embedded, hw, &bank.common)?;
            let sel = bank.select_and_compose(&first.fingerprint)?;
            let feats = self.encode_embedded(&embedded, hw, &sel.composed)?;
            (feats, Some(sel))
        } else {
            (self.encode_embedded(&embedded, hw, &bank.common)?, None)
        };
        let decoded = self.decode(&features)?;
        let boxes = self.box_head(&decoded)?;
        let class_scores = self.classify(&decoded, text_embeddings)?;
        Ok(ForwardOutput {
            features,
            detections: DetectionSet {
                boxes,
                class_scores,
                decoded,
            },
            selection,
        })
    }

    /// Parameter tensors under their checkpoint names.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("net.encoder.input.w".to_string(), self.input_w.clone()),
            ("net.encoder.input.b".to_string(), self.input_b.clone()),
        ];
        for (i, block) in self.encoder.iter().enumerate() {
            block.named(&format!("net.encoder.{i}"), &mut out);
        }
        for (i, block) in self.decoder.iter().enumerate() {
            block.named(&format!("net.decoder.{i}"), &mut out);
        }
        out.push(("net.query".to_string(), self.query.clone()));
        out.push(("net.box_head.w1".to_string(), self.box_w1.clone()));
        out.push(("net.box_head.b1".to_string(), self.box_b1.clone()));
        out.push(("net.box_head.w2".to_string(), self.box_w2.clone()));
        out.push(("net.box_head.b2".to_string(), self.box_b2.clone()));
        out.push(("net.cls_proj.w".to_string(), self.cls_w.clone()));
        out.push(("net.cls_proj.b".to_string(), self.cls_b.clone()));
        out.push(("net.log_temperature".to_string(), self.log_temperature.clone()));
        out
    }
}
