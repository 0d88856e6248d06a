//! Concept translation (learnable queries cross-attending over hidden
//! states), prompt assembly, the promptable mask head and the Stage I
//! segmentation loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, MaskGrid};
use crate::numerics::{Bound, Graph, NumericsError, ParamStore, Tensor, Var};
use crate::synthbench::{ColorName, Shape, FEATURE_DIM};

/// Word table rows: six colors, two shapes, one shared unknown row.
pub const VOCAB: [&str; 9] = ["red", "green", "blue", "yellow", "magenta", "cyan", "block", "disc", "<unk>"];
pub const UNK: usize = 8;

/// Per-pixel inputs of the mask head: `r, g, b, r², g², b², x, y, 1`.
pub const PIXEL_DIM: usize = 9;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const DICE_EPS: f64 = 1.0;
/// Logit clamp used when the loss is fed probabilities instead of logits.
pub const LOGIT_CLAMP: f64 = 20.0;

pub fn word_index(w: &str) -> usize {
    VOCAB[..UNK].iter().position(|v| *v == w).unwrap_or(UNK)
}

pub fn color_word(c: ColorName) -> usize {
    c.index()
}

pub fn shape_word(s: Shape) -> usize {
    match s {
        Shape::Rect => 6,
        Shape::Disc => 7,
    }
}

/// Whitespace tokens mapped to word-table rows.
pub fn tokenize(text: &str) -> Vec<usize> {
    text.split_whitespace().map(word_index).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptConfig {
    /// Hidden width `C`.
    pub dim: usize,
    /// Concept query count `L2`.
    pub queries: usize,
    /// Width of the prompt-pooling perceptron.
    pub hidden: usize,
    /// Edge softness of the box term, in normalized units.
    pub box_temp: f64,
}

impl Default for ConceptConfig {
    fn default() -> Self {
        Self { dim: 16, queries: 8, hidden: 32, box_temp: 0.02 }
    }
}

/// Fresh CTM and mask-head parameters under the `ctm.` and `mask.` prefixes.
pub fn init_params<R: Rng>(cfg: &ConceptConfig, rng: &mut R) -> ParamStore {
    let (c, l2, hd) = (cfg.dim, cfg.queries, cfg.hidden);
    let mut p = ParamStore::new();
    let s = 1.0 / (c as f64).sqrt();
    p.init_uniform("ctm.queries", &[l2, c], 1.0, rng);
    p.init_uniform("ctm.wq", &[c, c], s, rng);
    p.init_uniform("ctm.wk", &[c, c], s, rng);
    p.init_uniform("ctm.wv", &[c, c], s, rng);
    p.init_uniform("mask.words", &[VOCAB.len(), c], 0.5, rng);
    p.init_uniform("mask.w1z", &[l2 * c, hd], 1.0 / ((l2 * c) as f64).sqrt(), rng);
    p.init_uniform("mask.w1t", &[c, hd], s, rng);
    p.insert("mask.b1", Tensor::zeros(&[1, hd]));
    p.init_uniform("mask.w2v", &[hd, c], 0.1, rng);
    p.insert("mask.b2v", Tensor::zeros(&[1, c]));
    p.insert("mask.wbox", Tensor::zeros(&[l2 * c, 4]));
    p.insert("mask.bbox", Tensor::row_vector(vec![0.5, 0.5, 0.5, 0.5]));
    p.init_uniform("mask.w2gate", &[hd, 1], 0.1, rng);
    p.insert("mask.b2gate", Tensor::scalar(1.0));
    p.init_uniform("mask.wpix", &[PIXEL_DIM, c], 0.5, rng);
    p
}

/// Graph handles of the CTM parameters.
#[derive(Debug, Clone, Copy)]
pub struct CtmVars {
    pub queries: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

impl CtmVars {
    pub fn from_bound(b: &Bound) -> Self {
        Self { queries: b.var("ctm.queries"), wq: b.var("ctm.wq"), wk: b.var("ctm.wk"), wv: b.var("ctm.wv") }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaskHeadVars {
    pub words: Var,
    pub w1z: Var,
    pub w1t: Var,
    pub b1: Var,
    pub w2v: Var,
    pub b2v: Var,
    pub wbox: Var,
    pub bbox: Var,
    pub w2gate: Var,
    pub b2gate: Var,
    pub wpix: Var,
}

impl MaskHeadVars {
    pub fn from_bound(b: &Bound) -> Self {
        Self {
            words: b.var("mask.words"),
            w1z: b.var("mask.w1z"),
            w1t: b.var("mask.w1t"),
            b1: b.var("mask.b1"),
            w2v: b.var("mask.w2v"),
            b2v: b.var("mask.b2v"),
            wbox: b.var("mask.wbox"),
            bbox: b.var("mask.bbox"),
            w2gate: b.var("mask.w2gate"),
            b2gate: b.var("mask.b2gate"),
            wpix: b.var("mask.wpix"),
        }
    }
}

pub struct Translation {
    pub z: Var,
    /// Row-stochastic `L2×L1` attention weights.
    pub attention: Var,
    /// Multiplies spent in the score and mix products.
    pub attention_multiplies: u64,
}

/// `Z = softmax((C·W_q)(H·W_k)ᵀ / √C) · (H·W_v)`.
pub fn translate(g: &mut Graph, h: Var, p: &CtmVars) -> Result<Translation, NumericsError> {
    let c = g.value(p.queries).cols();
    let hc = g.value(h).cols();
    if hc != c || g.value(h).shape().len() != 2 {
        return Err(NumericsError::Shape { op: "translate", lhs: g.value(h).shape().to_vec(), rhs: vec![0, c] });
    }
    let q = g.matmul(p.queries, p.wq)?;
    let k = g.matmul(h, p.wk)?;
    let v = g.matmul(h, p.wv)?;
    let kt = g.transpose(k);
    let before = g.multiply_count();
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (c as f64).sqrt());
    let attention = g.softmax_rows(scores);
    let z = g.matmul(attention, v)?;
    let attention_multiplies = g.multiply_count() - before;
    Ok(Translation { z, attention, attention_multiplies })
}

/// `P = [Z; E_text]`.
pub fn assemble_prompt(g: &mut Graph, z: Var, e_text: Option<Var>) -> Result<Var, NumericsError> {
    match e_text {
        None => Ok(z),
        Some(e) => {
            if g.value(e).cols() != g.value(z).cols() {
                return Err(NumericsError::Shape {
                    op: "assemble_prompt",
                    lhs: g.value(z).shape().to_vec(),
                    rhs: g.value(e).shape().to_vec(),
                });
            }
            g.concat_rows(&[z, e])
        }
    }
}

/// Word-table rows for the given token ids; `None` for empty text.
pub fn text_rows(g: &mut Graph, m: &MaskHeadVars, tokens: &[usize]) -> Result<Option<Var>, NumericsError> {
    if tokens.is_empty() {
        return Ok(None);
    }
    g.select_rows(m.words, tokens).map(Some)
}

/// Expands `r, g, b, x, y` scene features into the mask head's pixel inputs.
pub fn pixel_inputs(features: &Tensor) -> Tensor {
    assert_eq!(features.cols(), FEATURE_DIM, "scene features carry r, g, b, x, y");
    let n = features.rows();
    let mut data = Vec::with_capacity(n * PIXEL_DIM);
    for i in 0..n {
        let f = features.row(i);
        data.extend_from_slice(&[f[0], f[1], f[2], f[0] * f[0], f[1] * f[1], f[2] * f[2], f[3], f[4], 1.0]);
    }
    Tensor::matrix(n, PIXEL_DIM, data).expect("pixel input shape")
}

pub struct MaskOutput {
    /// `(H·W)×1` pixel logits, row-major with `y` outer.
    pub logits: Var,
    /// Scalar `σ(max logit)`.
    pub presence: Var,
    /// `1×4` box corners of the spatial term.
    pub bbox: Var,
}

/// Promptable mask head. The first `l2` prompt rows (the concept groups) are
/// flattened in order and the remaining text rows mean-pooled; a two-layer
/// perceptron maps both to a pixel-embedding direction and a gate. The box
/// is a linear read-out of the flattened groups.
/// Pixel logit = `⟨ψ·W_pix, v⟩ + gate · (2·softbox(box) − 1)`; the second
/// term is left out when every group row is zero.
pub fn predict_mask(
    g: &mut Graph,
    m: &MaskHeadVars,
    prompt: Var,
    l2: usize,
    pixels: Var,
    width: usize,
    height: usize,
    box_temp: f64,
) -> Result<MaskOutput, NumericsError> {
    let rows = g.value(prompt).rows();
    let c = g.value(prompt).cols();
    if rows < l2 || g.value(pixels).rows() != width * height {
        return Err(NumericsError::Contract(format!(
            "prompt has {rows} rows for {l2} concept groups, pixels {} for {width}x{height}",
            g.value(pixels).rows()
        )));
    }
    let z = g.select_rows(prompt, &(0..l2).collect::<Vec<_>>())?;
    let zflat = g.reshape(z, &[1, l2 * c])?;
    let mut pre = g.matmul(zflat, m.w1z)?;
    if rows > l2 {
        let text = g.select_rows(prompt, &(l2..rows).collect::<Vec<_>>())?;
        let pooled = g.mean_rows(text);
        let t = g.matmul(pooled, m.w1t)?;
        pre = g.add(pre, t)?;
    }
    let pre = g.add(pre, m.b1)?;
    let hid = g.tanh(pre);

    let v = g.matmul(hid, m.w2v)?;
    let v = g.add(v, m.b2v)?;
    let raw = g.matmul(zflat, m.wbox)?;
    let raw = g.add(raw, m.bbox)?;
    let bx = box_corners(g, raw)?;
    let gate = g.matmul(hid, m.w2gate)?;
    let gate = g.add(gate, m.b2gate)?;

    // ψ·(W_pix·vᵀ) is the same product as (ψ·W_pix)·vᵀ at a fraction of the cost
    let vt = g.transpose(v);
    let dir = g.matmul(m.wpix, vt)?;
    let color = g.matmul(pixels, dir)?;

    // an all-zero group block carries no location, so only colour speaks
    let logits = if g.value(z).data().iter().all(|&x| x == 0.0) {
        color
    } else {
        let sb = g.soft_box(bx, width, height, box_temp)?;
        let sb = g.scale(sb, 2.0);
        let sb = g.add_const(sb, -1.0);
        let spatial = g.scale_by(sb, gate)?;
        g.add(color, spatial)?
    };

    let mx = g.max(logits);
    let presence = g.sigmoid(mx);
    Ok(MaskOutput { logits, presence, bbox: bx })
}

/// Sharpness of the softplus that keeps box sides positive.
pub const SIZE_SHARPNESS: f64 = 20.0;

/// `[cx, cy, w, h]` to corners, with `w, h` passed through
/// `softplus(k·s)/k` so a box can never turn inside out.
fn box_corners(g: &mut Graph, raw: Var) -> Result<Var, NumericsError> {
    let centers = g.constant(Tensor::matrix(
        4,
        4,
        vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    )?);
    let halves = g.constant(Tensor::matrix(
        4,
        4,
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.5, 0.0, 0.0, -0.5, 0.0, 0.5],
    )?);
    let k = g.scale(raw, -SIZE_SHARPNESS);
    let ls = g.log_sigmoid(k);
    let size = g.scale(ls, -1.0 / SIZE_SHARPNESS);
    let c = g.matmul(raw, centers)?;
    let h = g.matmul(size, halves)?;
    g.add(c, h)
}

/// Loss nodes for one mask.
pub struct SegLoss {
    pub dice: Var,
    pub focal: Var,
    pub total: Var,
}

/// Dice (ε = 1, on probabilities) plus mean focal loss (γ = 2, α = 0.25),
/// from pixel logits.
pub fn seg_loss(g: &mut Graph, logits: Var, gt: &MaskGrid) -> Result<SegLoss, NumericsError> {
    let n = g.value(logits).len();
    if n != gt.len() {
        return Err(NumericsError::Contract(format!("{n} logits for a {}x{} mask", gt.width(), gt.height())));
    }
    let gv: Vec<f64> = gt.values().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let shape = g.value(logits).shape().to_vec();
    let gcol = g.constant(Tensor::new(shape.clone(), gv.clone())?);

    let p = g.sigmoid(logits);
    let pg = g.mul(p, gcol)?;
    let inter = g.sum(pg);
    let psum = g.sum(p);
    let gsum: f64 = gv.iter().sum();
    let num = g.scale(inter, 2.0);
    let num = g.add_const(num, DICE_EPS);
    let den = g.add_const(psum, gsum + DICE_EPS);
    let rden = g.recip(den);
    let ratio = g.mul(num, rden)?;
    let neg = g.neg(ratio);
    let dice = g.add_const(neg, 1.0);

    // s = z·(2g − 1) gives p_t = σ(s) and 1 − p_t = σ(−s)
    let sign = g.constant(Tensor::new(shape.clone(), gv.iter().map(|&x| 2.0 * x - 1.0).collect())?);
    let alpha = g.constant(Tensor::new(
        shape,
        gv.iter().map(|&x| if x == 1.0 { FOCAL_ALPHA } else { 1.0 - FOCAL_ALPHA }).collect(),
    )?);
    let s = g.mul(logits, sign)?;
    let log_pt = g.log_sigmoid(s);
    let ns = g.neg(s);
    let one_minus = g.sigmoid(ns);
    let w = g.mul(one_minus, one_minus)?;
    debug_assert_eq!(FOCAL_GAMMA, 2.0);
    let w = g.mul(w, alpha)?;
    let terms = g.mul(w, log_pt)?;
    let mean = g.mean(terms);
    let focal = g.neg(mean);

    let total = g.add(dice, focal)?;
    Ok(SegLoss { dice, focal, total })
}

/// Loss values for a probability map: probabilities become logits clamped
/// to `±LOGIT_CLAMP`.
pub fn seg_loss_probs(pred: &MaskGrid, gt: &MaskGrid) -> Result<(f64, f64), GeometryError> {
    pred.same_dims(gt)?;
    let logits: Vec<f64> = pred
        .values()
        .iter()
        .map(|&p| {
            let z = if p <= 0.0 {
                -LOGIT_CLAMP
            } else if p >= 1.0 {
                LOGIT_CLAMP
            } else {
                (p / (1.0 - p)).ln()
            };
            z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        })
        .collect();
    let mut g = Graph::new();
    let z = g.constant(Tensor::column(logits));
    let l = seg_loss(&mut g, z, gt).expect("dimensions checked");
    Ok((g.value(l.dice).item(), g.value(l.focal).item()))
}

/// Soft mask values of a logit column.
pub fn probabilities(g: &Graph, logits: Var, width: usize, height: usize) -> MaskGrid {
    let vals = g.value(logits).data().iter().map(|&z| crate::numerics::sigmoid(z)).collect();
    MaskGrid::new(width, height, vals).expect("sigmoid output lies in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, softmax_rows_raw};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn ctm(g: &mut Graph, c: usize, l2: usize, rng: &mut ChaCha8Rng) -> CtmVars {
        CtmVars {
            queries: g.param(random(&[l2, c], rng)),
            wq: g.param(random(&[c, c], rng)),
            wk: g.param(random(&[c, c], rng)),
            wv: g.param(random(&[c, c], rng)),
        }
    }

    #[test]
    fn single_key_copies_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let p = ctm(&mut g, 4, 3, &mut rng);
        let h = g.constant(random(&[1, 4], &mut rng));
        let t = translate(&mut g, h, &p).unwrap();
        let hv = g.matmul(h, p.wv).unwrap();
        let want = g.value(hv).row(0).to_vec();
        for i in 0..3 {
            for (a, b) in g.value(t.z).row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_keys_leave_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let p = ctm(&mut g, 4, 2, &mut rng);
        let ht = random(&[5, 4], &mut rng);
        let h = g.constant(ht.clone());
        let z1 = translate(&mut g, h, &p).unwrap().z;
        let mut rows: Vec<Vec<f64>> = (0..5).map(|i| ht.row(i).to_vec()).collect();
        rows.extend(rows.clone());
        let h2 = g.constant(Tensor::from_rows(&rows));
        let z2 = translate(&mut g, h2, &p).unwrap().z;
        assert!(g.value(z1).max_abs_diff(g.value(z2)) < 1e-9);
    }

    #[test]
    fn attention_rows_sum_to_one_and_cost_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (l1, l2, c) in [(8, 2, 4), (17, 8, 16), (4, 1, 5)] {
            let mut g = Graph::new();
            let p = ctm(&mut g, c, l2, &mut rng);
            let h = g.constant(random(&[l1, c], &mut rng));
            let t = translate(&mut g, h, &p).unwrap();
            assert_eq!(t.attention_multiplies, (2 * l1 * l2 * c) as u64);
            for r in 0..l2 {
                let s: f64 = g.value(t.attention).row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
            let _ = softmax_rows_raw(g.value(t.attention));
        }
    }

    #[test]
    fn translate_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let p = ctm(&mut g, 4, 2, &mut rng);
        let h = g.constant(random(&[3, 5], &mut rng));
        assert!(translate(&mut g, h, &p).is_err());
    }

    #[test]
    fn translate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (l1, l2, c) = (8, 2, 4);
        let base: Vec<Tensor> =
            vec![random(&[l2, c], &mut rng), random(&[c, c], &mut rng), random(&[c, c], &mut rng), random(&[c, c], &mut rng)];
        let h = random(&[l1, c], &mut rng);
        for which in 0..5 {
            let x = if which == 4 { h.clone() } else { base[which].clone() };
            let err = grad_check(
                |g, xv| {
                    let mut vars: Vec<Var> = base.iter().map(|t| g.constant(t.clone())).collect();
                    let hv = if which == 4 { xv } else { g.constant(h.clone()) };
                    if which < 4 {
                        vars[which] = xv;
                    }
                    let p = CtmVars { queries: vars[0], wq: vars[1], wk: vars[2], wv: vars[3] };
                    let t = translate(g, hv, &p)?;
                    Ok(g.sum(t.z))
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "param {which}: {err}");
        }
    }

    #[test]
    fn prompt_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = Graph::new();
        let zt = random(&[8, 4], &mut rng);
        let et = random(&[2, 4], &mut rng);
        let z = g.constant(zt.clone());
        let e = g.constant(et.clone());
        let p = assemble_prompt(&mut g, z, Some(e)).unwrap();
        assert_eq!(g.value(p).shape(), &[10, 4]);
        assert_eq!(&g.value(p).data()[..32], zt.data());
        assert_eq!(&g.value(p).data()[32..], et.data());
        assert_eq!(assemble_prompt(&mut g, z, None).unwrap(), z);
        let bad = g.constant(random(&[2, 3], &mut rng));
        assert!(assemble_prompt(&mut g, z, Some(bad)).is_err());
    }

    fn zero_head(g: &mut Graph, l2: usize, c: usize, hd: usize) -> MaskHeadVars {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = random_head(g, l2, c, hd, &mut rng);
        m.w2v = g.param(Tensor::zeros(&[hd, c]));
        m.b2v = g.param(Tensor::zeros(&[1, c]));
        m.w2gate = g.param(Tensor::zeros(&[hd, 1]));
        m.b2gate = g.param(Tensor::zeros(&[1, 1]));
        m
    }

    fn random_head(g: &mut Graph, l2: usize, c: usize, hd: usize, rng: &mut ChaCha8Rng) -> MaskHeadVars {
        let mut r = |g: &mut Graph, shape: &[usize]| g.constant(random(shape, rng));
        MaskHeadVars {
            words: r(g, &[VOCAB.len(), c]),
            w1z: r(g, &[l2 * c, hd]),
            w1t: r(g, &[c, hd]),
            b1: r(g, &[1, hd]),
            w2v: r(g, &[hd, c]),
            b2v: r(g, &[1, c]),
            wbox: r(g, &[l2 * c, 4]),
            bbox: r(g, &[1, 4]),
            w2gate: r(g, &[hd, 1]),
            b2gate: r(g, &[1, 1]),
            wpix: r(g, &[PIXEL_DIM, c]),
        }
    }

    #[test]
    fn zero_pooled_output_gives_half_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let m = zero_head(&mut g, 2, 4, 6);
        let prompt = g.constant(random(&[3, 4], &mut rng));
        let feats = random(&[12, FEATURE_DIM], &mut rng);
        let pix = g.constant(pixel_inputs(&feats));
        let out = predict_mask(&mut g, &m, prompt, 2, pix, 4, 3, 0.05).unwrap();
        let mask = probabilities(&g, out.logits, 4, 3);
        assert!(mask.values().iter().all(|&v| v == 0.5));
        assert_eq!(g.value(out.presence).item(), 0.5);
    }

    #[test]
    fn seg_loss_closed_forms() {
        let gt = MaskGrid::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let (dice, _) = seg_loss_probs(&MaskGrid::new(2, 2, vec![0.5; 4]).unwrap(), &gt).unwrap();
        assert!((dice - 0.4).abs() < 1e-12);
        let (dice, focal) = seg_loss_probs(&gt, &gt).unwrap();
        assert!(dice.abs() < 1e-6 && focal.abs() < 1e-6 && focal >= 0.0);
        assert!(seg_loss_probs(&MaskGrid::zeros(3, 1), &gt).is_err());
    }

    #[test]
    fn seg_loss_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let gt = MaskGrid::new(4, 4, (0..16).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect()).unwrap();
            let x = random(&[16, 1], &mut rng).map(|v| 3.0 * v);
            let err = grad_check(|g, z| Ok(seg_loss(g, z, &gt)?.total), &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn mask_head_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let feats = random(&[12, FEATURE_DIM], &mut rng).map(|v| v.abs());
        let gt = MaskGrid::new(4, 3, (0..12).map(|i| f64::from(u8::from(i % 3 == 0))).collect()).unwrap();
        let prompt = random(&[4, 4], &mut rng);
        let err = grad_check(
            |g, p| {
                let m = random_head(g, 2, 4, 6, &mut ChaCha8Rng::seed_from_u64(11));
                let pix = g.constant(pixel_inputs(&feats));
                let out = predict_mask(g, &m, p, 2, pix, 4, 3, 0.3)?;
                let l = seg_loss(g, out.logits, &gt)?;
                g.add(l.total, out.presence)
            },
            &prompt,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn vocabulary_lookup() {
        assert_eq!(tokenize("red disc"), vec![0, 7]);
        assert_eq!(tokenize("the blue block"), vec![UNK, 2, 6]);
        assert_eq!(color_word(ColorName::Cyan), 5);
        assert_eq!(shape_word(Shape::Rect), 6);
    }
}
