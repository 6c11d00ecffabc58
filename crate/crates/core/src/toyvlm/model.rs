use crate::error::{Error, Result};
use crate::numcore::{GradTape, NodeId, Tensor2};
use crate::prompt::{Segment, TokenSequence};
use crate::toyvlm::params::{MarkerIds, ModelParams, VlmConfig};
use crate::toyvlm::scene::{rasterize, Scene};
use crate::toyvlm::vocab::Vocab;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn token_id(&self, vocab: &Vocab) -> u32 {
        match self {
            Answer::Yes => vocab.yes_id(),
            Answer::No => vocab.no_id(),
        }
    }

    pub fn as_bool(&self) -> bool {
        matches!(self, Answer::Yes)
    }
}

impl std::fmt::Display for Answer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        })
    }
}

/// Compares the yes and no logits of one row. Exact ties answer no.
pub fn answer_yes_no(logits_row: &[f64], vocab: &Vocab) -> (Answer, f64, f64) {
    let yes = logits_row[vocab.yes_id() as usize];
    let no = logits_row[vocab.no_id() as usize];
    let a = if yes > no { Answer::Yes } else { Answer::No };
    (a, yes, no)
}

/// One taped forward pass. Holds the tape, so gradients and attention maps
/// stay available until dropped.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: GradTape,
    logits_id: NodeId,
    virtual_leaf: Option<NodeId>,
    attn_ids: Vec<Vec<NodeId>>,
    pub seq_len: usize,
}

impl ForwardPass {
    pub fn logits(&self) -> &Tensor2 {
        self.tape.value(self.logits_id)
    }

    pub fn logits_id(&self) -> NodeId {
        self.logits_id
    }

    pub fn virtual_leaf(&self) -> Option<NodeId> {
        self.virtual_leaf
    }

    /// Post-softmax attention for (layer, head); rows are query positions.
    pub fn attn_probs(&self, layer: usize, head: usize) -> &Tensor2 {
        self.tape.value(self.attn_ids[layer][head])
    }

    pub fn layers(&self) -> usize {
        self.attn_ids.len()
    }

    pub fn heads(&self) -> usize {
        self.attn_ids.first().map_or(0, |l| l.len())
    }

    /// Adds the answer-position cross-entropy: each ANSWER token is
    /// predicted from the position before it. Image, prompt and question
    /// positions contribute nothing.
    pub fn add_answer_loss(&mut self, seq: &TokenSequence) -> Result<NodeId> {
        let targets = answer_targets(seq)?;
        self.tape.cross_entropy(self.logits_id, &targets)
    }

    /// Backward from `loss`, returning the gradient for the virtual rows.
    pub fn backward_virtual(&mut self, loss: NodeId) -> Result<Tensor2> {
        let leaf = self
            .virtual_leaf
            .ok_or_else(|| Error::Tape("forward pass has no virtual rows".into()))?;
        self.tape.backward(loss)?;
        self.tape.grad(leaf)
    }
}

/// `(row, target)` pairs for answer supervision: row `p-1` predicts the
/// answer token at position `p`.
pub fn answer_targets(seq: &TokenSequence) -> Result<Vec<(usize, usize)>> {
    let mut targets = Vec::new();
    for (p, (&id, &seg)) in seq.ids.iter().zip(&seq.segs).enumerate() {
        if seg == Segment::Answer {
            if p == 0 {
                return Err(Error::Template("answer at position 0".into()));
            }
            targets.push((p - 1, id as usize));
        }
    }
    if targets.is_empty() {
        return Err(Error::Template("sequence has no answer positions".into()));
    }
    Ok(targets)
}

/// Frozen toy VLM. Parameters are reachable only by reference; nothing in
/// the crate mutates them after construction.
pub struct Model {
    cfg: VlmConfig,
    vocab: Vocab,
    params: ModelParams,
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Feature,
    Virtual(usize),
    Token(u32),
}

impl Model {
    pub fn new(cfg: VlmConfig) -> Result<Model> {
        cfg.validate()?;
        let vocab =
            Vocab::build(cfg.coord_bins, cfg.categories, cfg.placeholders, cfg.ref_capacity)?;
        let qmark = vocab
            .id("?")
            .ok_or_else(|| Error::Vocab("question mark missing from vocabulary".into()))?;
        let cat_start = vocab.category_id(0)?;
        let marks = MarkerIds {
            yes: vocab.yes_id(),
            no: vocab.no_id(),
            qmark,
            lbrace: vocab.lbrace_id(),
            cat_start,
            cat_end: cat_start + cfg.categories as u32,
        };
        let params = ModelParams::init(&cfg, vocab.base_size(), marks);
        Ok(Model { cfg, vocab, params })
    }

    pub fn cfg(&self) -> &VlmConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_hash(&self) -> String {
        self.params.hash()
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Embedding rows beyond the base vocabulary (plugged-in virtual rows).
    pub fn extended_refs(&self) -> usize {
        self.params.embed.rows() - self.vocab.base_size()
    }

    /// A copy of this model whose embedding table carries `delta` as extra
    /// rows, so `[refk]` ids resolve without a separate block.
    pub fn with_virtual_rows(&self, delta: &Tensor2) -> Result<Model> {
        let new_total = self.extended_refs() + delta.rows();
        if new_total > self.vocab.ref_capacity() {
            return Err(Error::Vocab(format!(
                "{new_total} virtual rows exceed reference capacity {}",
                self.vocab.ref_capacity()
            )));
        }
        Ok(Model {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            params: self.params.extend_embed(delta)?,
        })
    }

    /// Scene to `grid*grid x dim` visual features: per-cell category
    /// histogram through the frozen patch and visual projections. Cells
    /// nothing overlaps stay exactly zero.
    pub fn encode_scene(&self, scene: &Scene) -> Result<Tensor2> {
        scene.validate(self.cfg.categories, usize::MAX)?;
        let hist = rasterize(scene, self.cfg.grid, self.cfg.categories);
        hist.matmul(&self.params.patch_proj)?.matmul(&self.params.vis_proj)
    }

    /// Runs the decoder over an assembled sequence. `virtual_rows` binds the
    /// VIRTUAL segment's `[refk]` tokens to trainable rows; without it those
    /// ids must resolve inside the (possibly extended) embedding table.
    ///
    /// Every call records the computation on a fresh tape; inference simply
    /// never runs the reverse sweep, so both paths share one code path and
    /// one set of numbers.
    pub fn forward(
        &self,
        features: &Tensor2,
        seq: &TokenSequence,
        virtual_rows: Option<&Tensor2>,
    ) -> Result<ForwardPass> {
        let s = seq.len();
        if s == 0 {
            return Err(Error::Template("empty sequence".into()));
        }
        if seq.segs.len() != seq.ids.len() {
            return Err(Error::Template("segment tags out of sync with ids".into()));
        }
        if s > self.cfg.context_limit {
            return Err(Error::ContextOverflow { len: s, limit: self.cfg.context_limit });
        }
        if features.cols() != self.cfg.dim {
            return Err(Error::Shape(format!(
                "features have dim {}, model dim {}",
                features.cols(),
                self.cfg.dim
            )));
        }
        if let Some(d) = virtual_rows {
            if d.cols() != self.cfg.dim {
                return Err(Error::Shape(format!(
                    "virtual rows have dim {}, model dim {}",
                    d.cols(),
                    self.cfg.dim
                )));
            }
        }

        let embed_rows = self.params.embed.rows();
        let mut kinds = Vec::with_capacity(s);
        let mut slots = 0usize;
        for (i, (&id, &seg)) in seq.ids.iter().zip(&seq.segs).enumerate() {
            let kind = match seg {
                Segment::Image if id == self.vocab.img_patch_id() => {
                    slots += 1;
                    Kind::Feature
                }
                Segment::Virtual => {
                    let k = self.vocab.ref_index_of(id).ok_or_else(|| {
                        Error::Template(format!(
                            "non-reference token in VIRTUAL segment at position {i}"
                        ))
                    })?;
                    match virtual_rows {
                        Some(d) if k < d.rows() => Kind::Virtual(k),
                        Some(d) => {
                            return Err(Error::Template(format!(
                                "[ref{}] exceeds virtual block of {} rows",
                                k + 1,
                                d.rows()
                            )))
                        }
                        None if (id as usize) < embed_rows => Kind::Token(id),
                        None => {
                            return Err(Error::Template(format!(
                                "[ref{}] is bound to neither a virtual block nor the embedding table",
                                k + 1
                            )))
                        }
                    }
                }
                _ => {
                    if (id as usize) >= embed_rows {
                        return Err(Error::Vocab(format!(
                            "token id {id} at position {i} beyond embedding table ({embed_rows} rows)"
                        )));
                    }
                    Kind::Token(id)
                }
            };
            kinds.push(kind);
        }
        if slots != features.rows() {
            return Err(Error::Shape(format!(
                "sequence has {slots} image slots, features have {} rows",
                features.rows()
            )));
        }

        let mut tape = GradTape::new();
        let embed_n = tape.frozen(self.params.embed.clone());
        let delta_n = virtual_rows.map(|d| tape.leaf(d.clone()));

        // Contiguous runs of one kind become one tape node each.
        let mut parts: Vec<NodeId> = Vec::new();
        let mut i = 0usize;
        let mut slot_at = 0usize;
        while i < s {
            match kinds[i] {
                Kind::Feature => {
                    let start = slot_at;
                    let mut len = 0;
                    while i < s && matches!(kinds[i], Kind::Feature) {
                        len += 1;
                        i += 1;
                    }
                    slot_at += len;
                    parts.push(tape.frozen(features.slice_rows(start, len)?));
                }
                Kind::Virtual(_) => {
                    let mut ids = Vec::new();
                    while i < s {
                        if let Kind::Virtual(k) = kinds[i] {
                            ids.push(k);
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    let leaf = delta_n.expect("virtual kind implies virtual rows");
                    parts.push(tape.gather_rows(leaf, &ids)?);
                }
                Kind::Token(_) => {
                    let mut ids = Vec::new();
                    while i < s {
                        if let Kind::Token(id) = kinds[i] {
                            ids.push(id as usize);
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    parts.push(tape.gather_rows(embed_n, &ids)?);
                }
            }
        }

        let x0 = tape.concat_rows(&parts)?;
        let pos_n = tape.frozen(self.params.pos.slice_rows(0, s)?);
        let mut x = tape.add(x0, pos_n)?;

        let dh = self.cfg.head_dim();
        let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();
        let mut attn_ids = Vec::with_capacity(self.cfg.layers);
        for layer in &self.params.layers {
            let ln1g = tape.frozen(layer.ln1_g.clone());
            let ln1b = tape.frozen(layer.ln1_b.clone());
            let h1 = tape.layer_norm(x, ln1g, ln1b)?;
            let wq = tape.frozen(layer.wq.clone());
            let wk = tape.frozen(layer.wk.clone());
            let wv = tape.frozen(layer.wv.clone());
            let q = tape.matmul(h1, wq)?;
            let k = tape.matmul(h1, wk)?;
            let v = tape.matmul(h1, wv)?;
            let mut heads = Vec::with_capacity(self.cfg.heads);
            let mut probs_ids = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(k, h * dh, dh)?;
                let vh = tape.slice_cols(v, h * dh, dh)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scaled = tape.scale(scores, inv_sqrt_dh)?;
                let probs = tape.causal_softmax(scaled)?;
                probs_ids.push(probs);
                heads.push(tape.matmul(probs, vh)?);
            }
            attn_ids.push(probs_ids);
            let merged = tape.concat_cols(&heads)?;
            let wo = tape.frozen(layer.wo.clone());
            let att = tape.matmul(merged, wo)?;
            x = tape.add(x, att)?;

            let ln2g = tape.frozen(layer.ln2_g.clone());
            let ln2b = tape.frozen(layer.ln2_b.clone());
            let h2 = tape.layer_norm(x, ln2g, ln2b)?;
            let w1 = tape.frozen(layer.w1.clone());
            let w2 = tape.frozen(layer.w2.clone());
            let m = tape.matmul(h2, w1)?;
            let m = tape.gelu(m)?;
            let m = tape.matmul(m, w2)?;
            x = tape.add(x, m)?;
        }

        let lnfg = tape.frozen(self.params.lnf_g.clone());
        let lnfb = tape.frozen(self.params.lnf_b.clone());
        let xf = tape.layer_norm(x, lnfg, lnfb)?;
        // Weight-tied readout over the full (possibly extended) table.
        let logits_id = tape.matmul_nt(xf, embed_n)?;

        Ok(ForwardPass { tape, logits_id, virtual_leaf: delta_n, attn_ids, seq_len: s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gelu;
    use crate::prompt::{assemble, Detection, DetectionMode, PromptTemplate};
    use crate::toyvlm::scene::SceneObject;

    fn small_cfg() -> VlmConfig {
        VlmConfig {
            layers: 2,
            heads: 2,
            dim: 16,
            grid: 3,
            context_limit: 96,
            coord_bins: 8,
            categories: 6,
            placeholders: 4,
            ref_capacity: 8,
            seed: 77,
            ..VlmConfig::default()
        }
    }

    fn scene() -> Scene {
        Scene {
            id: 1,
            objects: vec![
                SceneObject { category: 2, bbox: [0.1, 0.1, 0.5, 0.6] },
                SceneObject { category: 4, bbox: [0.55, 0.3, 0.8, 0.9] },
            ],
        }
    }

    fn sample_seq(model: &Model, n: usize, answer: Option<u32>) -> TokenSequence {
        let v = model.vocab();
        let dets = vec![
            Detection { category: 2, bins: [1, 1, 4, 5] },
            Detection { category: 4, bins: [4, 2, 6, 7] },
        ];
        let q = v.tokenize("is there a car in the image?").unwrap();
        let template =
            if n > 0 { PromptTemplate::PatchStandard } else { PromptTemplate::P2Hard };
        assemble(template, model.cfg().image_slots(), &dets, DetectionMode::Category, &q, n, v, answer)
            .unwrap()
    }

    /// Plain-loop reimplementation of the forward pass, sharing nothing
    /// with the tape besides the parameter values.
    fn oracle_logits(model: &Model, features: &Tensor2, seq: &TokenSequence) -> Tensor2 {
        let cfg = model.cfg();
        let p = model.params();
        let v = model.vocab();
        let s = seq.len();
        let d = cfg.dim;
        let dh = cfg.head_dim();

        let mut x = Tensor2::zeros(s, d);
        let mut slot = 0;
        for i in 0..s {
            let id = seq.ids[i];
            if seq.segs[i] == Segment::Image && id == v.img_patch_id() {
                x.row_mut(i).copy_from_slice(features.row(slot));
                slot += 1;
            } else {
                x.row_mut(i).copy_from_slice(p.embed.row(id as usize));
            }
            for j in 0..d {
                let val = x.get(i, j) + p.pos.get(i, j);
                x.set(i, j, val);
            }
        }

        let ln = |x: &Tensor2, g: &Tensor2, b: &Tensor2| {
            let mut out = Tensor2::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let row = x.row(r);
                let mu = row.iter().sum::<f64>() / row.len() as f64;
                let var =
                    row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
                let rstd = 1.0 / (var + 1e-5).sqrt();
                for j in 0..row.len() {
                    out.set(r, j, g.get(0, j) * (row[j] - mu) * rstd + b.get(0, j));
                }
            }
            out
        };

        for layer in &p.layers {
            let h1 = ln(&x, &layer.ln1_g, &layer.ln1_b);
            let q = h1.matmul(&layer.wq).unwrap();
            let k = h1.matmul(&layer.wk).unwrap();
            let vv = h1.matmul(&layer.wv).unwrap();
            let mut merged = Tensor2::zeros(s, d);
            for h in 0..cfg.heads {
                for i in 0..s {
                    let mut scores = Vec::with_capacity(i + 1);
                    for j in 0..=i {
                        let mut acc = 0.0;
                        for c in 0..dh {
                            acc += q.get(i, h * dh + c) * k.get(j, h * dh + c);
                        }
                        scores.push(acc / (dh as f64).sqrt());
                    }
                    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let mut exp: Vec<f64> = scores.iter().map(|&v| (v - max).exp()).collect();
                    let sum: f64 = exp.iter().sum();
                    for e in &mut exp {
                        *e /= sum;
                    }
                    for c in 0..dh {
                        let mut acc = 0.0;
                        for j in 0..=i {
                            acc += exp[j] * vv.get(j, h * dh + c);
                        }
                        merged.set(i, h * dh + c, acc);
                    }
                }
            }
            let att = merged.matmul(&layer.wo).unwrap();
            x = x.add(&att).unwrap();
            let h2 = ln(&x, &layer.ln2_g, &layer.ln2_b);
            let m = h2.matmul(&layer.w1).unwrap().map(gelu).matmul(&layer.w2).unwrap();
            x = x.add(&m).unwrap();
        }
        let xf = ln(&x, &p.lnf_g, &p.lnf_b);
        xf.matmul_nt(&p.embed).unwrap()
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();
        let seq = sample_seq(&model, 0, None);
        let pass = model.forward(&features, &seq, None).unwrap();
        let want = oracle_logits(&model, &features, &seq);
        assert_eq!(pass.logits().shape(), want.shape());
        let mut worst = 0.0f64;
        for (a, b) in pass.logits().data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-9, "logits diverge from oracle by {worst}");
    }

    #[test]
    fn forward_is_causal() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();
        let seq = sample_seq(&model, 0, None);
        let base = model.forward(&features, &seq, None).unwrap();

        // Perturb one late detection token; earlier rows must not move.
        let det = seq.positions_of(Segment::Detection);
        let j = det[det.len() / 2];
        let mut other = seq.clone();
        other.ids[j] = model.vocab().category_id(5).unwrap();
        let changed = model.forward(&features, &other, None).unwrap();
        for row in 0..j {
            assert!(
                base.logits()
                    .row(row)
                    .iter()
                    .zip(changed.logits().row(row))
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                "row {row} changed by a perturbation at {j}"
            );
        }
        let moved = base
            .logits()
            .row(j)
            .iter()
            .zip(changed.logits().row(j))
            .any(|(a, b)| a != b);
        assert!(moved, "perturbed position must feel its own change");
    }

    #[test]
    fn zero_row_virtual_block_is_identity() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();
        let seq = sample_seq(&model, 0, None);
        let without = model.forward(&features, &seq, None).unwrap();
        let empty = Tensor2::zeros(0, model.cfg().dim);
        let with = model.forward(&features, &seq, Some(&empty)).unwrap();
        assert!(without.logits().bit_eq(with.logits()));
    }

    #[test]
    fn plugged_rows_reproduce_block_forward() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();
        let seq = sample_seq(&model, 4, None);
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha12Rng::seed_from_u64(3)
        };
        let delta = Tensor2::gaussian(4, model.cfg().dim, 0.7, &mut rng);

        let with_block = model.forward(&features, &seq, Some(&delta)).unwrap();
        let extended = model.with_virtual_rows(&delta).unwrap();
        assert_eq!(extended.extended_refs(), 4);
        let plugged = extended.forward(&features, &seq, None).unwrap();
        // The extended readout has extra columns for the plugged rows; the
        // shared vocabulary entries must agree bit for bit.
        let shared = model.vocab().base_size();
        assert_eq!(plugged.logits().cols(), shared + 4);
        for r in 0..with_block.logits().rows() {
            let a = &with_block.logits().row(r)[..shared];
            let b = &plugged.logits().row(r)[..shared];
            assert!(
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                "row {r} differs between block and plugged forward"
            );
        }
    }

    #[test]
    fn forward_contract_errors() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();

        let seq = sample_seq(&model, 4, None);
        let err = model.forward(&features, &seq, None).unwrap_err();
        assert!(err.to_string().contains("neither"), "{err}");

        let short = Tensor2::zeros(3, model.cfg().dim);
        assert!(model.forward(&short, &seq, Some(&Tensor2::zeros(4, 16))).is_err());

        let delta = Tensor2::zeros(2, model.cfg().dim);
        let err = model.forward(&features, &seq, Some(&delta)).unwrap_err();
        assert!(err.to_string().contains("exceeds virtual block"), "{err}");

        let mut huge = sample_seq(&model, 0, None);
        while huge.len() <= model.cfg().context_limit {
            huge.ids.push(model.vocab().no_id());
            huge.segs.push(Segment::Question);
        }
        assert!(matches!(
            model.forward(&features, &huge, None),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn attention_rows_are_distributions() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();
        let seq = sample_seq(&model, 2, None);
        let delta = Tensor2::zeros(2, model.cfg().dim);
        let pass = model.forward(&features, &seq, Some(&delta)).unwrap();
        for l in 0..pass.layers() {
            for h in 0..pass.heads() {
                let p = pass.attn_probs(l, h);
                for r in 0..p.rows() {
                    let sum: f64 = p.row(r).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn virtual_grad_matches_finite_difference() {
        let model = Model::new(small_cfg()).unwrap();
        let features = model.encode_scene(&scene()).unwrap();
        let n = 3;
        let seq = sample_seq(&model, n, Some(model.vocab().yes_id()));
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha12Rng::seed_from_u64(8)
        };
        let delta = Tensor2::gaussian(n, model.cfg().dim, 0.5, &mut rng);

        let loss_of = |d: &Tensor2| {
            let mut pass = model.forward(&features, &seq, Some(d)).unwrap();
            let loss = pass.add_answer_loss(&seq).unwrap();
            pass.tape.value(loss).get(0, 0)
        };
        let mut pass = model.forward(&features, &seq, Some(&delta)).unwrap();
        let loss = pass.add_answer_loss(&seq).unwrap();
        let grad = pass.backward_virtual(loss).unwrap();

        let h = 1e-5;
        for r in 0..n {
            for c in 0..model.cfg().dim {
                let mut plus = delta.clone();
                plus.set(r, c, plus.get(r, c) + h);
                let mut minus = delta.clone();
                minus.set(r, c, minus.get(r, c) - h);
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grad.get(r, c);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                assert!(
                    rel < 1e-4 || (an.abs() < 1e-9 && fd.abs() < 1e-9),
                    "delta grad ({r},{c}): analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn freezing_forward_and_backward_leave_params_intact() {
        let model = Model::new(small_cfg()).unwrap();
        let before = model.params_hash();
        let features = model.encode_scene(&scene()).unwrap();
        let seq = sample_seq(&model, 2, Some(model.vocab().no_id()));
        let delta = Tensor2::zeros(2, model.cfg().dim);
        let mut pass = model.forward(&features, &seq, Some(&delta)).unwrap();
        let loss = pass.add_answer_loss(&seq).unwrap();
        let _ = pass.backward_virtual(loss).unwrap();
        assert_eq!(model.params_hash(), before);
        assert!(pass.tape.replay_matches().unwrap());
    }

    #[test]
    fn tie_breaks_to_no() {
        let v = Vocab::build(8, 4, 2, 4).unwrap();
        let mut row = vec![0.0; v.len()];
        row[v.yes_id() as usize] = 1.5;
        row[v.no_id() as usize] = 1.5;
        let (a, yes, no) = answer_yes_no(&row, &v);
        assert_eq!(a, Answer::No);
        assert_eq!(yes, no);
        row[v.yes_id() as usize] = 1.6;
        assert_eq!(answer_yes_no(&row, &v).0, Answer::Yes);
    }

    #[test]
    fn encode_scene_zero_cells_are_zero() {
        let model = Model::new(small_cfg()).unwrap();
        let s = Scene {
            id: 9,
            objects: vec![SceneObject { category: 1, bbox: [0.0, 0.0, 0.32, 0.32] }],
        };
        let f = model.encode_scene(&s).unwrap();
        // Bottom-right cell has no overlap: exact zeros.
        assert!(f.row(8).iter().all(|&v| v == 0.0));
        assert!(f.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn answer_targets_extraction() {
        let model = Model::new(small_cfg()).unwrap();
        let seq = sample_seq(&model, 0, Some(model.vocab().yes_id()));
        let t = answer_targets(&seq).unwrap();
        assert_eq!(t.len(), 1);
        let n = seq.len();
        assert_eq!(t[0], (n - 2, model.vocab().yes_id() as usize));
        let bare = sample_seq(&model, 0, None);
        assert!(answer_targets(&bare).is_err());
    }
}
