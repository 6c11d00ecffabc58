use crate::error::{Error, Result};
use crate::numcore::tensor::dot;
use crate::numcore::Tensor2;
use crate::util::sha256_hex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Phase pairs in the positional carrier; each pair is one (cos, sin) wave.
const PHASE_PAIRS: usize = 4;
const PHASE_DIMS: usize = 2 * PHASE_PAIRS;
/// Carrier wavelengths in tokens. Chosen so the summed cosine response peaks
/// sharply at a single relative offset: peak 4.0, worst off-peak 2.88 over a
/// 256-token window.
const WAVELENGTHS: [f64; PHASE_PAIRS] = [4.4277, 10.6634, 13.4857, 88.3788];

/// Relative offset the first-layer copy head is tuned to (previous token).
pub const OFFSET_PREV: usize = 1;
/// Offset from "?" back to the category word in the fixed question shape
/// `is there a CAT in the image ?`.
pub const OFFSET_QUESTION_CATEGORY: usize = 4;
/// Offset from "?" to the word right after the category ("in"). That
/// position's predecessor is the category itself, so it always echoes the
/// match the last-layer head looks for and must be damped.
pub const OFFSET_QUESTION_ECHO: usize = 3;
/// Width of the content code the copy heads write between layers.
const CODE_DIMS: usize = 8;

/// Architecture and initialization knobs of the frozen backbone.
///
/// The init is structured, not plain Gaussian: positional rows carry a phase
/// code at fixed wavelengths, two first-layer heads use it to copy content
/// from fixed relative offsets (previous token, and four back), and one
/// last-layer head matches its position's copied category word against every
/// earlier position's copied previous token. Where that matches, it forwards
/// the source's component along a reserved readout direction g. "{" rows are
/// marked along +g, so a question category that also appears in the
/// serialized detections pushes g-flux into the "?" position; "yes"/"no"
/// rows differ only along g, making the answer a threshold on that flux with
/// bias `qmark_align`. Strength knobs scale each stage; `weight_std` fills
/// everything unstructured with Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub grid: usize,
    pub context_limit: usize,
    pub coord_bins: usize,
    pub categories: usize,
    pub placeholders: usize,
    pub ref_capacity: usize,
    pub embed_std: f64,
    pub pos_std: f64,
    pub weight_std: f64,
    /// Gaussian std of attention heads outside the fixed circuit. These stay
    /// generic full-rank channels; trainable prompt rows can recruit them, so
    /// they are drawn wider than the `weight_std` noise floor.
    pub spare_std: f64,
    /// Amplitude of the positional phase carrier.
    pub pos_phase: f64,
    /// QK gain of the fixed-offset copy heads.
    pub match_strength: f64,
    /// OV gain of the fixed-offset copy heads.
    pub copy_strength: f64,
    /// QK gain of the token-match head in the last layer.
    pub induct_match: f64,
    /// QK gain of the match head's damping of the in-question echo position.
    pub echo_damp: f64,
    /// OV gain of the token-match head's g-channel payload.
    pub induct_payload: f64,
    /// g-component added to the "{" embedding row. Must stay below
    /// `yes_align` in magnitude, or "{" outruns "yes" whenever g-flux grows.
    pub brace_mark: f64,
    /// g-component added to "yes" (+) and "no" (-); their other components
    /// are identical, so the answer readout is a pure g-channel.
    pub yes_align: f64,
    /// g-component of the "?" row; acts as the yes/no decision bias.
    pub qmark_align: f64,
    /// Strength of the last layer's answer-mode MLP unit along the yes/no
    /// shared base: lifts both answers over the rest of the vocabulary at
    /// positions that look like "?".
    pub answer_gain: f64,
    /// Same unit's negative write-back along the "?" direction, cancelling
    /// the tied readout's self-echo at the answer position.
    pub self_damp: f64,
    pub seed: u64,
}

impl Default for VlmConfig {
    fn default() -> Self {
        VlmConfig {
            layers: 2,
            heads: 2,
            dim: 32,
            grid: 8,
            context_limit: 256,
            coord_bins: 100,
            categories: 40,
            placeholders: 16,
            ref_capacity: 128,
            embed_std: 1.0,
            pos_std: 1.4,
            weight_std: 0.06,
            spare_std: 0.15,
            pos_phase: 1.0,
            match_strength: 4.0,
            copy_strength: 0.9,
            induct_match: 2.5,
            echo_damp: 2.2,
            induct_payload: 3.0,
            brace_mark: 0.6,
            yes_align: 2.5,
            qmark_align: -0.8,
            answer_gain: 8.0,
            self_damp: 1.6,
            seed: 1234,
        }
    }
}

impl VlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.grid == 0 {
            return Err(Error::Config("layers, heads, dim, grid must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.head_dim() < PHASE_DIMS {
            return Err(Error::Config(format!(
                "head dim {} too small for the {PHASE_DIMS}-dim phase code",
                self.head_dim()
            )));
        }
        if self.dim < 2 + PHASE_DIMS + 2 {
            return Err(Error::Config(format!(
                "dim {} leaves no room for readout, phase and code directions",
                self.dim
            )));
        }
        if self.context_limit < self.grid * self.grid + 8 {
            return Err(Error::Config(format!(
                "context limit {} too small for {} image slots",
                self.context_limit,
                self.grid * self.grid
            )));
        }
        if self.categories < 2 {
            return Err(Error::Config("need at least two categories".into()));
        }
        if self.coord_bins == 0 || self.coord_bins > u16::MAX as usize {
            return Err(Error::Config(format!("coord_bins {} out of range", self.coord_bins)));
        }
        for v in [self.embed_std, self.pos_std, self.weight_std, self.spare_std] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("std {v} must be finite and >= 0")));
            }
        }
        for v in [
            self.pos_phase,
            self.match_strength,
            self.copy_strength,
            self.induct_match,
            self.echo_damp,
            self.induct_payload,
            self.brace_mark,
            self.yes_align,
            self.qmark_align,
            self.answer_gain,
            self.self_damp,
        ] {
            if !v.is_finite() {
                return Err(Error::Config("non-finite circuit strength".into()));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn image_slots(&self) -> usize {
        self.grid * self.grid
    }

    /// Width of the content code the copy heads write. Fixed small so the
    /// write subspace, the content-read basis, the phase code and the
    /// readout direction (all mutually orthogonal and clear of the ones
    /// vector) leave most of `dim` to token content; shrinks further when
    /// `dim` or the head size cannot host it.
    fn code_dims(&self) -> usize {
        CODE_DIMS.min(self.head_dim()).min((self.dim - 2 - PHASE_DIMS) / 2)
    }
}

/// Token ids the structured init treats specially: rows marked along the
/// readout direction, plus the contiguous category id range `cat_start..cat_end`
/// that keeps content in the match-code basis.
#[derive(Clone, Copy, Debug)]
pub struct MarkerIds {
    pub yes: u32,
    pub no: u32,
    pub qmark: u32,
    pub lbrace: u32,
    pub cat_start: u32,
    pub cat_end: u32,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub ln1_g: Tensor2,
    pub ln1_b: Tensor2,
    pub wq: Tensor2,
    pub wk: Tensor2,
    pub wv: Tensor2,
    pub wo: Tensor2,
    pub ln2_g: Tensor2,
    pub ln2_b: Tensor2,
    pub w1: Tensor2,
    pub w2: Tensor2,
}

/// Backbone weights. Embedding rows beyond the base vocabulary, if any, are
/// plugged-in virtual tokens; everything here is frozen at runtime.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub embed: Tensor2,
    pub pos: Tensor2,
    pub patch_proj: Tensor2,
    pub vis_proj: Tensor2,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Tensor2,
    pub lnf_b: Tensor2,
}

/// Gaussian matrix with orthonormalized columns.
fn semi_orthogonal<R: Rng>(d: usize, dh: usize, rng: &mut R) -> Tensor2 {
    orthonormal_cols(d, dh, &[], rng)
}

/// Gaussian matrix whose columns are orthonormal and orthogonal to every
/// vector in `avoid`.
fn orthonormal_cols<R: Rng>(
    d: usize,
    k: usize,
    avoid: &[Vec<f64>],
    rng: &mut R,
) -> Tensor2 {
    assert!(k + avoid.len() <= d);
    let m = Tensor2::gaussian(d, k, 1.0, rng);
    let mut cols: Vec<Vec<f64>> =
        (0..k).map(|j| (0..d).map(|i| m.get(i, j)).collect()).collect();
    for j in 0..k {
        for a in avoid {
            let proj = dot(&cols[j], a) / dot(a, a);
            for i in 0..d {
                cols[j][i] -= proj * a[i];
            }
        }
        for t in 0..j {
            let proj = dot(&cols[j], &cols[t]);
            for i in 0..d {
                cols[j][i] -= proj * cols[t][i];
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut out = Tensor2::zeros(d, k);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..d {
            out.set(i, j, col[i]);
        }
    }
    out
}

/// Removes every frame component from each row of `t` (frame columns are
/// orthonormal, one pass suffices).
fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

fn project_rows_off(t: &mut Tensor2, frame: &Tensor2) {
    let d = t.cols();
    assert_eq!(frame.rows(), d);
    for r in 0..t.rows() {
        for c in 0..frame.cols() {
            let mut coef = 0.0;
            for i in 0..d {
                coef += t.get(r, i) * frame.get(i, c);
            }
            for i in 0..d {
                let v = t.get(r, i) - coef * frame.get(i, c);
                t.set(r, i, v);
            }
        }
    }
}

/// Carrier phases at position `j`: (cos, sin) per wavelength.
fn phase_vec(j: usize) -> [f64; PHASE_DIMS] {
    let mut out = [0.0; PHASE_DIMS];
    for (q, lambda) in WAVELENGTHS.iter().enumerate() {
        let a = TAU * j as f64 / lambda;
        out[2 * q] = a.cos();
        out[2 * q + 1] = a.sin();
    }
    out
}

impl ModelParams {
    /// Deterministic init from `cfg.seed`. Draw order is part of the format:
    /// changing it invalidates every stored parameter hash.
    pub fn init(cfg: &VlmConfig, base_vocab: usize, marks: MarkerIds) -> ModelParams {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let dh = cfg.head_dim();
        let cd = cfg.code_dims();

        // One orthonormal frame: col 0 is the readout direction g, the next
        // PHASE_DIMS columns carry the positional phase code, the rest span
        // the shared write subspace of the copy heads. Embeddings, positions
        // and visual features are projected off the whole frame so those
        // channels stay clean at init. The frame also avoids the all-ones
        // vector: layer norm subtracts each row's mean, and a frame with a
        // ones-component would see that subtraction as signal.
        let ones = vec![1.0; d];
        let frame = orthonormal_cols(d, 1 + PHASE_DIMS + cd, &[ones.clone()], &mut rng);
        let spin1 = semi_orthogonal(cd, cd, &mut rng);
        let spin2 = semi_orthogonal(cd, cd, &mut rng);
        // The content-read basis avoids the frame and the ones vector, so
        // codes see pure token content: no carrier, no markers, no written
        // codes, no layer-norm mean.
        let mut avoid = vec![ones];
        for c in 0..frame.cols() {
            avoid.push((0..d).map(|i| frame.get(i, c)).collect());
        }
        let r_c = orthonormal_cols(d, cd, &avoid, &mut rng);
        let g: Vec<f64> = (0..d).map(|i| frame.get(i, 0)).collect();
        let phi = |i: usize, p: usize| frame.get(i, 1 + p);
        // Write bases: two rotations of the same subspace, so one head's
        // output is exactly readable through the other's basis.
        let w_col = |i: usize, c: usize, spin: &Tensor2| {
            let mut v = 0.0;
            for t in 0..cd {
                v += frame.get(i, 1 + PHASE_DIMS + t) * spin.get(t, c);
            }
            v
        };

        let mut embed = Tensor2::gaussian(base_vocab, d, cfg.embed_std, &mut rng);
        let mut pos = Tensor2::gaussian(cfg.context_limit, d, cfg.pos_std, &mut rng);
        let patch_proj = Tensor2::gaussian(cfg.categories, d, 1.0, &mut rng);
        let mut vis_proj = Tensor2::gaussian(d, d, 1.0 / (d as f64).sqrt(), &mut rng);

        project_rows_off(&mut embed, &frame);
        project_rows_off(&mut pos, &frame);
        project_rows_off(&mut vis_proj, &frame);
        // Positions and visual features carry no code content.
        project_rows_off(&mut pos, &r_c);
        project_rows_off(&mut vis_proj, &r_c);

        // Codes: only category tokens keep content in the match basis, all at
        // one shared norm. Any other row with code content would act as a fake
        // match key wherever that token lands in a prompt, and quiet codes
        // would make some categories harder to look up than others.
        let code_norm = (cd as f64).sqrt() * cfg.embed_std;
        for r in 0..embed.rows() {
            let coef: Vec<f64> = (0..cd)
                .map(|c| (0..d).map(|i| embed.get(r, i) * r_c.get(i, c)).sum())
                .collect();
            let is_cat = (r as u32) >= marks.cat_start && (r as u32) < marks.cat_end;
            let norm = dot(&coef, &coef).sqrt();
            let put = if is_cat && norm > 0.0 { code_norm / norm } else { 0.0 };
            for c in 0..cd {
                for i in 0..d {
                    let v = embed.get(r, i) + (put - 1.0) * coef[c] * r_c.get(i, c);
                    embed.set(r, i, v);
                }
            }
        }

        // Equal-norm embedding rows keep layer norm's denominator the same
        // at every text position, so the carrier reaches the offset filters
        // at a uniform amplitude; unequal rows would let a quiet token's
        // neighbor response beat a loud token's peak.
        for r in 0..embed.rows() {
            let norm = dot(embed.row(r), embed.row(r)).sqrt();
            if norm > 0.0 {
                let want = cfg.embed_std * (d as f64).sqrt();
                for i in 0..d {
                    let v = embed.get(r, i) * want / norm;
                    embed.set(r, i, v);
                }
            }
        }

        // "yes" and "no" share everything except their g-component.
        let yes_row: Vec<f64> = embed.row(marks.yes as usize).to_vec();
        for i in 0..d {
            embed.set(marks.no as usize, i, yes_row[i]);
        }
        let add_g = |row: usize, a: f64, embed: &mut Tensor2| {
            for i in 0..d {
                let v = embed.get(row, i) + a * g[i];
                embed.set(row, i, v);
            }
        };
        add_g(marks.yes as usize, cfg.yes_align, &mut embed);
        add_g(marks.no as usize, -cfg.yes_align, &mut embed);
        add_g(marks.qmark as usize, cfg.qmark_align, &mut embed);
        add_g(marks.lbrace as usize, cfg.brace_mark, &mut embed);
        // Unit directions for the answer-mode rewrite below: the yes/no
        // shared base, and the "?" row as it will appear in the residual.
        // The "?" direction is taken without its g-component: the rewrite
        // must neither gate on nor move the decision channel.
        let h_hat = unit(&yes_row);
        let q_hat = {
            let q = embed.row(marks.qmark as usize);
            let qg = dot(q, &g);
            let v: Vec<f64> = (0..d).map(|i| q[i] - qg * g[i]).collect();
            unit(&v)
        };

        // Every template keeps the image block (<Img> + patches + </Img>) as
        // the sequence prefix. The carrier starts after it: empty grid cells
        // embed near zero, and layer norm would blow their carrier up
        // relative to text rows, handing the offset filters false peaks.
        let text_start = cfg.image_slots() + 2;
        for j in text_start..cfg.context_limit {
            let ph = phase_vec(j);
            for i in 0..d {
                let mut v = pos.get(j, i);
                for (p, amp) in ph.iter().enumerate() {
                    v += cfg.pos_phase * amp * phi(i, p);
                }
                pos.set(j, i, v);
            }
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut wq = Tensor2::zeros(d, d);
            let mut wk = Tensor2::zeros(d, d);
            let mut wv = Tensor2::zeros(d, d);
            let mut wo = Tensor2::zeros(d, d);
            for h in 0..cfg.heads {
                let offset_head = l == 0 && h <= 1;
                let match_head = cfg.layers >= 2 && l == cfg.layers - 1 && h == 0;
                let std = if offset_head || match_head { cfg.weight_std } else { cfg.spare_std };
                let nq = Tensor2::gaussian(d, dh, std, &mut rng);
                let nk = Tensor2::gaussian(d, dh, std, &mut rng);
                let nv = Tensor2::gaussian(d, dh, std, &mut rng);
                let no = Tensor2::gaussian(d, dh, std, &mut rng);
                for i in 0..d {
                    for j in 0..dh {
                        let col = h * dh + j;
                        wq.set(i, col, nq.get(i, j));
                        wk.set(i, col, nk.get(i, j));
                        wv.set(i, col, nv.get(i, j));
                        // wo rows for head h hold its output map.
                        wo.set(h * dh + j, i, no.get(i, j));
                    }
                }

                if offset_head {
                    let delta = if h == 0 { OFFSET_PREV } else { OFFSET_QUESTION_CATEGORY };
                    // Query carries the phase rotated back by `delta`, key the
                    // raw phase: their dot peaks at source = query - delta.
                    for (q, lambda) in WAVELENGTHS.iter().enumerate() {
                        let a = -TAU * delta as f64 / lambda;
                        let (sin, cos) = a.sin_cos();
                        for i in 0..d {
                            let (pc, ps) = (phi(i, 2 * q), phi(i, 2 * q + 1));
                            wq.set(i, h * dh + 2 * q, cfg.match_strength * (cos * pc - sin * ps));
                            wq.set(i, h * dh + 2 * q + 1, cfg.match_strength * (sin * pc + cos * ps));
                            wk.set(i, h * dh + 2 * q, cfg.match_strength * pc);
                            wk.set(i, h * dh + 2 * q + 1, cfg.match_strength * ps);
                        }
                    }
                    // Value reads the shared content code, output rewrites it
                    // into this head's rotation of the write subspace.
                    let spin = if h == 0 { &spin1 } else { &spin2 };
                    for i in 0..d {
                        for c in 0..cd {
                            wv.set(i, h * dh + c, cfg.copy_strength * r_c.get(i, c));
                            wo.set(h * dh + c, i, cfg.copy_strength * w_col(i, c, spin));
                        }
                    }
                }
                if match_head {
                    // Query reads the code written 4 back (the question's
                    // category), key the code written 1 back (each token's
                    // predecessor); equal codes mark positions right after
                    // an occurrence of the queried category.
                    for i in 0..d {
                        for c in 0..cd {
                            wq.set(i, h * dh + c, cfg.induct_match * w_col(i, c, &spin2));
                            wk.set(i, h * dh + c, cfg.induct_match * w_col(i, c, &spin1));
                        }
                        wv.set(i, h * dh, cfg.induct_payload * g[i]);
                        wo.set(h * dh, i, cfg.induct_payload * g[i]);
                    }
                    // The token right after the in-question category echoes
                    // the code match from inside the question itself. It sits
                    // at a fixed offset before "?", so spare key columns hold
                    // a sign-flipped phase filter tuned to that offset.
                    if cd + PHASE_DIMS <= dh {
                        for (q, lambda) in WAVELENGTHS.iter().enumerate() {
                            let a = -TAU * OFFSET_QUESTION_ECHO as f64 / lambda;
                            let (sin, cos) = a.sin_cos();
                            for i in 0..d {
                                let (pc, ps) = (phi(i, 2 * q), phi(i, 2 * q + 1));
                                let col = h * dh + cd + 2 * q;
                                wq.set(i, col, -cfg.echo_damp * (cos * pc - sin * ps));
                                wq.set(i, col + 1, -cfg.echo_damp * (sin * pc + cos * ps));
                                wk.set(i, col, cfg.echo_damp * pc);
                                wk.set(i, col + 1, cfg.echo_damp * ps);
                            }
                        }
                    }
                }
            }
            let mut w1 = Tensor2::gaussian(d, 4 * d, cfg.weight_std, &mut rng);
            let mut w2 = Tensor2::gaussian(4 * d, d, cfg.weight_std, &mut rng);
            if l == cfg.layers - 1 {
                // Answer-mode unit: fires where the residual looks like "?"
                // (the position every template predicts the answer from) and
                // rewrites it toward the yes/no base while damping the "?"
                // echo itself. The tied readout otherwise ranks the current
                // token and a fixed set of random lookalikes far above both
                // answers, and no trainable prompt row can reach past that.
                for i in 0..d {
                    w1.set(i, 0, q_hat[i]);
                    w2.set(0, i, cfg.answer_gain * h_hat[i] - cfg.self_damp * q_hat[i]);
                }
            }
            layers.push(LayerParams {
                ln1_g: Tensor2::from_vec(1, d, vec![1.0; d]).unwrap(),
                ln1_b: Tensor2::zeros(1, d),
                wq,
                wk,
                wv,
                wo,
                ln2_g: Tensor2::from_vec(1, d, vec![1.0; d]).unwrap(),
                ln2_b: Tensor2::zeros(1, d),
                w1,
                w2,
            });
        }

        ModelParams {
            embed,
            pos,
            patch_proj,
            vis_proj,
            layers,
            lnf_g: Tensor2::from_vec(1, d, vec![1.0; d]).unwrap(),
            lnf_b: Tensor2::zeros(1, d),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor2)> {
        let mut out: Vec<(&'static str, &Tensor2)> = vec![
            ("embed", &self.embed),
            ("pos", &self.pos),
            ("patch_proj", &self.patch_proj),
            ("vis_proj", &self.vis_proj),
        ];
        for l in &self.layers {
            out.push(("ln1_g", &l.ln1_g));
            out.push(("ln1_b", &l.ln1_b));
            out.push(("wq", &l.wq));
            out.push(("wk", &l.wk));
            out.push(("wv", &l.wv));
            out.push(("wo", &l.wo));
            out.push(("ln2_g", &l.ln2_g));
            out.push(("ln2_b", &l.ln2_b));
            out.push(("w1", &l.w1));
            out.push(("w2", &l.w2));
        }
        out.push(("lnf_g", &self.lnf_g));
        out.push(("lnf_b", &self.lnf_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.rows() * t.cols()).sum()
    }

    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, t) in self.tensors() {
            bytes.extend_from_slice(name.as_bytes());
            t.digest_bytes(&mut bytes);
        }
        sha256_hex(&bytes)
    }

    /// New params with `delta` rows appended to the embedding table.
    pub fn extend_embed(&self, delta: &Tensor2) -> Result<ModelParams> {
        if delta.cols() != self.embed.cols() {
            return Err(Error::Shape(format!(
                "virtual rows have dim {}, embedding has {}",
                delta.cols(),
                self.embed.cols()
            )));
        }
        let mut out = self.clone();
        let mut data = self.embed.data().to_vec();
        data.extend_from_slice(delta.data());
        out.embed =
            Tensor2::from_vec(self.embed.rows() + delta.rows(), self.embed.cols(), data)?;
        Ok(out)
    }
}
