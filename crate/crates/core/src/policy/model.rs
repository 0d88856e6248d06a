use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concept::pixel_inputs;
use crate::geometry::{box_iou, BoxN, MaskGrid};
use crate::numerics::{Bound, Graph, NumericsError, ParamStore, Tensor, Var};
use crate::synthbench::{Episode, Family, ObjectClass, DESCRIPTOR_DIM};
use crate::template::StructuredResponse;

use super::PolicyError;

/// Template tags, one compliance draw each.
pub const TAG_COUNT: usize = 5;

/// Answer phrases `"<color> <shape>"`, indexed `shape · 6 + color`.
pub fn answer_phrases() -> Vec<String> {
    ObjectClass::all().into_iter().map(ObjectClass::phrase).collect()
}

pub fn answer_index(c: ObjectClass) -> usize {
    ObjectClass::all().iter().position(|&x| x == c).expect("class in table")
}

/// Number of coordinate tokens appended to the hidden states.
pub const COORD_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Hidden width `C`; must match the concept module.
    pub dim: usize,
    /// Initial tag-compliance logit.
    pub tag_init: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { dim: 16, tag_init: 2.0 }
    }
}

/// Fresh policy parameters under the `policy.` prefix. Scoring weights start
/// at zero, so every categorical starts uniform.
pub fn init_policy<R: Rng>(cfg: &PolicyConfig, rng: &mut R) -> ParamStore {
    let c = cfg.dim;
    let d = DESCRIPTOR_DIM;
    let mut p = ParamStore::new();
    p.init_uniform("policy.enc", &[d + 1, c], 1.0 / ((d + 1) as f64).sqrt() * 2.0, rng);
    p.insert("policy.alpha", Tensor::scalar(0.0));
    p.insert("policy.m", Tensor::zeros(&[d, d]));
    p.insert("policy.u_check", Tensor::zeros(&[c, 1]));
    p.insert("policy.u_target", Tensor::zeros(&[c, 1]));
    p.insert("policy.answer", Tensor::zeros(&[d + 1, ObjectClass::all().len()]));
    p.insert("policy.tags", Tensor::full(&[1, TAG_COUNT], cfg.tag_init));
    p
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyVars {
    pub enc: Var,
    pub alpha: Var,
    pub m: Var,
    pub u_check: Var,
    pub u_target: Var,
    pub answer: Var,
    pub tags: Var,
}

impl PolicyVars {
    pub fn from_bound(b: &Bound) -> Self {
        Self {
            enc: b.var("policy.enc"),
            alpha: b.var("policy.alpha"),
            m: b.var("policy.m"),
            u_check: b.var("policy.u_check"),
            u_target: b.var("policy.u_target"),
            answer: b.var("policy.answer"),
            tags: b.var("policy.tags"),
        }
    }
}

/// Everything about an episode the policy and mask head read, computed once.
#[derive(Debug, Clone)]
pub struct EpisodeView {
    pub id: usize,
    pub family: Family,
    pub instruction: String,
    /// All objects of all scenes (tiles, then query) as `[descriptor; 1]` rows.
    pub objects: Tensor,
    /// First object row of each scene.
    pub offsets: Vec<usize>,
    pub proxy: Option<usize>,
    /// Sum and count of the support targets' descriptors.
    pub support_sum: Vec<f64>,
    pub support_count: usize,
    /// Global boxes of the proxy tile's objects.
    pub check_boxes: Vec<BoxN>,
    /// Boxes of the query objects.
    pub target_boxes: Vec<BoxN>,
    pub query_classes: Vec<ObjectClass>,
    pub oracle_check: Option<usize>,
    pub oracle_target: usize,
    pub gt_check: Option<BoxN>,
    pub gt_box: BoxN,
    pub gt_mask: MaskGrid,
    pub width: usize,
    pub height: usize,
    /// Mask-head pixel inputs of the query scene.
    pub pixels: Tensor,
}

impl EpisodeView {
    pub fn new(ep: &Episode) -> Result<Self, PolicyError> {
        if ep.query.objects.len() < 2 {
            return Err(PolicyError::Candidates(ep.id));
        }
        let descs = ep.descriptors();
        let mut offsets = Vec::with_capacity(descs.len());
        let mut rows = Vec::new();
        for scene in &descs {
            offsets.push(rows.len());
            for d in scene {
                let mut r = d.to_vec();
                r.push(1.0);
                rows.push(r);
            }
        }
        let mut support_sum = vec![0.0; DESCRIPTOR_DIM];
        for a in &ep.support {
            for (s, v) in support_sum.iter_mut().zip(&descs[a.tile][a.object]) {
                *s += v;
            }
        }
        let proxy = ep.proxy_tile();
        let check_boxes = match proxy {
            Some(p) => (0..ep.tiles[p].objects.len()).map(|i| ep.tile_box(p, i)).collect(),
            None => Vec::new(),
        };
        Ok(Self {
            id: ep.id,
            family: ep.family(),
            instruction: ep.instruction.clone(),
            objects: Tensor::from_rows(&rows),
            offsets,
            proxy,
            support_sum,
            support_count: ep.support.len(),
            check_boxes,
            target_boxes: ep.query.objects.iter().map(|o| o.bbox).collect(),
            query_classes: ep.query.classes(),
            oracle_check: proxy.map(|p| ep.tile_targets[p]),
            oracle_target: ep.query_target,
            gt_check: ep.gt_check,
            gt_box: ep.gt_box,
            gt_mask: ep.gt_mask(),
            width: ep.query.width,
            height: ep.query.height,
            pixels: pixel_inputs(&ep.query.features()),
        })
    }

    fn scene_rows(&self, s: usize) -> Vec<usize> {
        let end = self.offsets.get(s + 1).copied().unwrap_or(self.objects.rows());
        (self.offsets[s]..end).collect()
    }

    pub fn query_rows(&self) -> Vec<usize> {
        self.scene_rows(self.offsets.len() - 1)
    }

    pub fn proxy_rows(&self) -> Option<Vec<usize>> {
        self.proxy.map(|p| self.scene_rows(p))
    }

    fn descriptor(&self, row: usize) -> &[f64] {
        &self.objects.row(row)[..DESCRIPTOR_DIM]
    }

    fn descriptor_matrix(&self, rows: &[usize]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|&r| self.descriptor(r).to_vec()).collect::<Vec<_>>())
    }

    /// Evidence column: mean descriptor of the support targets, plus the
    /// chosen proxy object when there is one.
    fn evidence(&self, check: Option<usize>) -> Tensor {
        let mut e = self.support_sum.clone();
        let mut n = self.support_count;
        if let (Some(c), Some(rows)) = (check, self.proxy_rows()) {
            for (s, v) in e.iter_mut().zip(self.descriptor(rows[c])) {
                *s += v;
            }
            n += 1;
        }
        Tensor::column(e.into_iter().map(|v| v / n.max(1) as f64).collect())
    }

    /// Query object whose box best matches `b`, if any overlaps by more
    /// than half.
    pub fn match_target(&self, b: &BoxN) -> Option<usize> {
        best_match(&self.target_boxes, b)
    }

    pub fn match_check(&self, b: &BoxN) -> Option<usize> {
        best_match(&self.check_boxes, b)
    }

    pub fn oracle_answer(&self) -> usize {
        answer_index(self.query_classes[self.oracle_target])
    }
}

fn best_match(boxes: &[BoxN], b: &BoxN) -> Option<usize> {
    let (i, iou) = boxes.iter().enumerate().map(|(i, c)| (i, box_iou(c, b))).fold((0, 0.0), |a, x| if x.1 > a.1 { x } else { a });
    (iou > 0.5).then_some(i)
}

/// Encoder output for every object row: `tanh([d; 1] · W_enc)`.
pub fn object_rows(g: &mut Graph, pv: &PolicyVars, view: &EpisodeView) -> Result<Var, NumericsError> {
    let x = g.constant(view.objects.clone());
    let pre = g.matmul(x, pv.enc)?;
    Ok(g.tanh(pre))
}

/// `α·(D e) + D·M·e + H·u` as a `1×n` row.
fn scores(
    g: &mut Graph,
    pv: &PolicyVars,
    view: &EpisodeView,
    obj: Var,
    rows: &[usize],
    evidence: Tensor,
    u: Var,
) -> Result<Var, NumericsError> {
    let d = view.descriptor_matrix(rows);
    let de: Vec<f64> = (0..rows.len())
        .map(|i| d.row(i).iter().zip(evidence.data()).map(|(a, b)| a * b).sum())
        .collect();
    let de = g.constant(Tensor::column(de));
    let induced = g.scale_by(de, pv.alpha)?;
    let dm = g.constant(d);
    let dm = g.matmul(dm, pv.m)?;
    let ev = g.constant(evidence);
    let learned = g.matmul(dm, ev)?;
    let h = g.select_rows(obj, rows)?;
    let bias = g.matmul(h, u)?;
    let s = g.add(induced, learned)?;
    let s = g.add(s, bias)?;
    Ok(g.transpose(s))
}

pub fn check_logits(g: &mut Graph, pv: &PolicyVars, view: &EpisodeView, obj: Var) -> Result<Option<Var>, NumericsError> {
    let Some(rows) = view.proxy_rows() else {
        return Ok(None);
    };
    scores(g, pv, view, obj, &rows, view.evidence(None), pv.u_check).map(Some)
}

pub fn target_logits(
    g: &mut Graph,
    pv: &PolicyVars,
    view: &EpisodeView,
    obj: Var,
    check: Option<usize>,
) -> Result<Var, NumericsError> {
    let rows = view.query_rows();
    scores(g, pv, view, obj, &rows, view.evidence(check), pv.u_target)
}

pub fn answer_logits(g: &mut Graph, pv: &PolicyVars, view: &EpisodeView, target: usize) -> Result<Var, NumericsError> {
    let row = view.query_rows()[target];
    let x = g.constant(Tensor::row_vector(view.objects.row(row).to_vec()));
    g.matmul(x, pv.answer)
}

/// Fixed embeddings of the eight coordinate tokens: a one-hot slot for the
/// token's position plus one shared value channel.
pub fn coordinate_tokens(r: &StructuredResponse, dim: usize) -> Result<Tensor, NumericsError> {
    if dim < COORD_TOKENS + 1 {
        return Err(NumericsError::Contract(format!("hidden width {dim} too small for coordinate tokens")));
    }
    let vals = r.check.to_array().into_iter().chain(r.bbox.to_array());
    let mut t = Tensor::zeros(&[COORD_TOKENS, dim]);
    for (i, v) in vals.enumerate() {
        t.set(i, i, 1.0);
        t.set(i, COORD_TOKENS, v);
    }
    Ok(t)
}

/// Hidden states read by the concept module: the encoder rows of the
/// objects the response points at (matched by box), followed by its
/// coordinate tokens.
pub fn hidden_states(g: &mut Graph, obj: Var, view: &EpisodeView, r: &StructuredResponse) -> Result<Var, NumericsError> {
    let dim = g.value(obj).cols();
    let tokens = g.constant(coordinate_tokens(r, dim)?);
    let mut rows = Vec::new();
    if let Some(i) = view.match_target(&r.bbox) {
        rows.push(view.query_rows()[i]);
    }
    if let (Some(i), Some(pr)) = (view.match_check(&r.check), view.proxy_rows()) {
        rows.push(pr[i]);
    }
    if rows.is_empty() {
        return Ok(tokens);
    }
    let picked = g.select_rows(obj, &rows)?;
    g.concat_rows(&[picked, tokens])
}

/// Graph over constant copies of `params`, for sampling and scoring without
/// gradients.
pub fn frozen(params: &ParamStore) -> (Graph, PolicyVars) {
    let mut g = Graph::new();
    let b = params.bind(&mut g, &[]);
    let pv = PolicyVars::from_bound(&b);
    (g, pv)
}
