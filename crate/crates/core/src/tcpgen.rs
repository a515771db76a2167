//! Tree-constrained pointer generator head: query, masked pointer
//! distribution over active tree nodes, pointer context, generation gate,
//! interpolation with the transducer distribution, and analytic gradients of
//! the teacher-forced NLL.

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::encoder::{gcn_backward, EncodeError, NodeEncodings, TreeGraph};
use crate::params::TcpgenModel;
use crate::tokenizer::PieceId;
use crate::trie::{NodeId, PrefixTree};

/// Tolerance for "sums to one" checks on distributions.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("two active nodes carry piece {0}")]
    DuplicateActivePiece(PieceId),
    #[error("distribution sums to {0}")]
    NotNormalized(f64),
    #[error("target of example {0} has zero probability")]
    InfiniteLoss(usize),
    #[error("empty active set")]
    EmptyActiveSet,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), HeadError> {
    if got == want {
        Ok(())
    } else {
        Err(HeadError::ShapeError(format!(
            "{what}: length {got}, expected {want}"
        )))
    }
}

/// Decoder-side embedding of the previous token; id 0 (start / blank) maps
/// to zeros.
pub fn prev_embedding(model: &TcpgenModel, y_prev: PieceId) -> Result<Array1<f64>, HeadError> {
    let table = model.decoder_embed();
    if y_prev == 0 {
        return Ok(Array1::zeros(table.ncols()));
    }
    if y_prev > table.nrows() {
        return Err(HeadError::ShapeError(format!(
            "previous token {y_prev} outside vocabulary"
        )));
    }
    Ok(table.row(y_prev - 1).to_owned())
}

/// Projection used for CTC phoneme embeddings in the query, `d_p × d_enc`;
/// `None` means identity.
pub fn query_projection(model: &TcpgenModel) -> Option<&Array2<f64>> {
    match &model.head.query_proj {
        Some(p) => Some(p),
        None => model.encoder.phoneme_proj.as_ref(),
    }
}

/// `q = (h_enc + h_ctc W^p) W^q + Emb(y_prev) W^q'`, dropping the CTC term
/// when `h_ctc` is absent.
pub fn compute_query(
    model: &TcpgenModel,
    h_enc: ArrayView1<f64>,
    y_prev: PieceId,
    h_ctc: Option<ArrayView1<f64>>,
) -> Result<Array1<f64>, HeadError> {
    let dims = model.dims();
    check_len("h_enc", h_enc.len(), dims.d_enc)?;
    let u = query_input(model, h_enc, h_ctc)?;
    let e = prev_embedding(model, y_prev)?;
    Ok(u.dot(&model.head.wq) + e.dot(&model.head.wq_prev))
}

fn query_input(
    model: &TcpgenModel,
    h_enc: ArrayView1<f64>,
    h_ctc: Option<ArrayView1<f64>>,
) -> Result<Array1<f64>, HeadError> {
    let Some(c) = h_ctc else {
        return Ok(h_enc.to_owned());
    };
    check_len("h_ctc", c.len(), model.dims().d_p)?;
    let proj = match query_projection(model) {
        Some(p) => c.dot(p),
        None => c.to_owned(),
    };
    check_len("projected h_ctc", proj.len(), h_enc.len())?;
    Ok(&h_enc + &proj)
}

/// Best non-blank phoneme of a CTC frame; ties go to the lowest index.
pub fn ctc_argmax(posterior: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in posterior.iter().enumerate().skip(1) {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|b| b.0)
}

/// Embedding row of the frame's best non-blank phoneme.
pub fn ctc_phoneme_embedding(
    posterior: &[f64],
    table: &Array2<f64>,
) -> Result<Array1<f64>, HeadError> {
    check_len("CTC posterior", posterior.len(), table.nrows())?;
    let i = ctc_argmax(posterior)
        .ok_or_else(|| HeadError::ShapeError("inventory has no phonemes".into()))?;
    Ok(table.row(i).to_owned())
}

/// Pointer distribution over the pieces of the active nodes. Pieces not
/// listed have probability exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PtrDistribution {
    pub nodes: Vec<NodeId>,
    pub ids: Vec<PieceId>,
    pub probs: Vec<f64>,
}

impl PtrDistribution {
    pub fn prob(&self, id: PieceId) -> f64 {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map_or(0.0, |k| self.probs[k])
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn active_ids(&self) -> BTreeSet<PieceId> {
        self.ids.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / total).collect()
}

/// `q · k_n / √d_att` for each active node, with `k_n = h_n W^k`.
pub fn ptr_logits(
    model: &TcpgenModel,
    q: ArrayView1<f64>,
    h_tree: &Array2<f64>,
    active: &[NodeId],
) -> Result<Vec<f64>, HeadError> {
    check_len("query", q.len(), model.dims().d_att)?;
    let scale = (model.dims().d_att as f64).sqrt();
    active
        .iter()
        .map(|&n| {
            if n >= h_tree.nrows() {
                return Err(HeadError::ShapeError(format!("node {n} outside encodings")));
            }
            Ok(h_tree.row(n).dot(&model.head.wk).dot(&q) / scale)
        })
        .collect()
}

fn distribution_from_logits(
    tree: &PrefixTree,
    active: &[NodeId],
    logits: &[f64],
) -> Result<PtrDistribution, HeadError> {
    if active.is_empty() {
        return Err(HeadError::EmptyActiveSet);
    }
    let mut seen = BTreeSet::new();
    let ids: Vec<PieceId> = active.iter().map(|&n| tree.piece(n)).collect();
    for &id in &ids {
        if !seen.insert(id) {
            return Err(HeadError::DuplicateActivePiece(id));
        }
    }
    Ok(PtrDistribution {
        nodes: active.to_vec(),
        ids,
        probs: softmax(logits),
    })
}

/// Masked softmax over the active nodes.
pub fn ptr_distribution(
    model: &TcpgenModel,
    q: ArrayView1<f64>,
    h_tree: &Array2<f64>,
    active: &[NodeId],
    tree: &PrefixTree,
) -> Result<PtrDistribution, HeadError> {
    let logits = ptr_logits(model, q, h_tree, active)?;
    distribution_from_logits(tree, active, &logits)
}

/// `Σ P^ptr(n) · h_n W^v`.
pub fn pointer_context(
    model: &TcpgenModel,
    dist: &PtrDistribution,
    h_tree: &Array2<f64>,
) -> Array1<f64> {
    let mut out = Array1::zeros(model.dims().d_att);
    for (&n, &p) in dist.nodes.iter().zip(&dist.probs) {
        out.scaled_add(p, &h_tree.row(n).dot(&model.head.wv));
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn gate_logit(model: &TcpgenModel, h_joint: ArrayView1<f64>, h_ptr: ArrayView1<f64>) -> f64 {
    let dj = model.dims().d_joint;
    let w = &model.head.wgen;
    w.slice(s![..dj]).dot(&h_joint) + w.slice(s![dj..]).dot(&h_ptr) + model.head.bgen
}

/// `σ(W^gen [h_joint; h_ptr] + b)`.
pub fn generation_prob(
    model: &TcpgenModel,
    h_joint: ArrayView1<f64>,
    h_ptr: ArrayView1<f64>,
) -> Result<f64, HeadError> {
    check_len("h_joint", h_joint.len(), model.dims().d_joint)?;
    check_len("h_ptr", h_ptr.len(), model.dims().d_att)?;
    Ok(sigmoid(gate_logit(model, h_joint, h_ptr)))
}

/// `(1 - p_gen) P_rnnt + p_gen P_ptr` over blank + vocabulary.
pub fn interpolate(
    p_rnnt: &[f64],
    ptr: &PtrDistribution,
    p_gen: f64,
) -> Result<Vec<f64>, HeadError> {
    let total: f64 = p_rnnt.iter().sum();
    if (total - 1.0).abs() > NORM_TOL {
        return Err(HeadError::NotNormalized(total));
    }
    let ptotal = ptr.sum();
    if (ptotal - 1.0).abs() > NORM_TOL {
        return Err(HeadError::NotNormalized(ptotal));
    }
    if let Some(&bad) = ptr.ids.iter().find(|&&i| i == 0 || i >= p_rnnt.len()) {
        return Err(HeadError::ShapeError(format!(
            "pointer id {bad} outside the output space"
        )));
    }
    let mut out: Vec<f64> = p_rnnt.iter().map(|&p| (1.0 - p_gen) * p).collect();
    for (&id, &p) in ptr.ids.iter().zip(&ptr.probs) {
        out[id] += p_gen * p;
    }
    Ok(out)
}

/// Outputs of the head at one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadStep {
    pub dist: PtrDistribution,
    pub h_ptr: Array1<f64>,
    pub p_gen: f64,
}

/// Query → pointer distribution → context → gate, for a nonempty active set.
pub fn head_step(
    model: &TcpgenModel,
    tree: &PrefixTree,
    h_tree: &Array2<f64>,
    active: &[NodeId],
    q: ArrayView1<f64>,
    h_joint: ArrayView1<f64>,
) -> Result<HeadStep, HeadError> {
    let dist = ptr_distribution(model, q, h_tree, active, tree)?;
    let h_ptr = pointer_context(model, &dist, h_tree);
    let p_gen = generation_prob(model, h_joint, h_ptr.view())?;
    Ok(HeadStep { dist, h_ptr, p_gen })
}

/// One teacher-forced training example.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadExample {
    /// Index into the graph slice passed alongside the batch.
    pub graph: usize,
    pub active: Vec<NodeId>,
    pub h_enc: Array1<f64>,
    /// Already-embedded CTC phoneme (`d_p`), when the phoneme query is on.
    pub h_ctc: Option<Array1<f64>>,
    pub h_joint: Array1<f64>,
    pub y_prev: PieceId,
    /// Reference symbol; 0 is blank.
    pub target: PieceId,
    /// Transducer probability of `target`.
    pub p_rnnt_target: f64,
}

fn encode_used(
    model: &TcpgenModel,
    graphs: &[TreeGraph],
    batch: &[HeadExample],
) -> Result<Vec<Option<NodeEncodings>>, HeadError> {
    let mut out: Vec<Option<NodeEncodings>> = vec![None; graphs.len()];
    for ex in batch {
        if ex.graph >= graphs.len() {
            return Err(HeadError::ShapeError(format!(
                "graph index {} out of range",
                ex.graph
            )));
        }
        if out[ex.graph].is_none() && !ex.active.is_empty() {
            out[ex.graph] = Some(graphs[ex.graph].encode(model)?);
        }
    }
    Ok(out)
}

struct ExampleForward {
    q: Array1<f64>,
    u: Array1<f64>,
    step: HeadStep,
    pi: f64,
    p: f64,
}

fn example_forward(
    model: &TcpgenModel,
    graph: &TreeGraph,
    enc: &NodeEncodings,
    ex: &HeadExample,
) -> Result<ExampleForward, HeadError> {
    let u = query_input(model, ex.h_enc.view(), ex.h_ctc.as_ref().map(|c| c.view()))?;
    let q = compute_query(
        model,
        ex.h_enc.view(),
        ex.y_prev,
        ex.h_ctc.as_ref().map(|c| c.view()),
    )?;
    let step = head_step(
        model,
        &graph.tree,
        enc.output(),
        &ex.active,
        q.view(),
        ex.h_joint.view(),
    )?;
    let pi = step.dist.prob(ex.target);
    let p = (1.0 - step.p_gen) * ex.p_rnnt_target + step.p_gen * pi;
    Ok(ExampleForward { q, u, step, pi, p })
}

/// Mean negative log-probability of the targets under the interpolated
/// distribution. Examples with an empty active set use the transducer
/// probability alone.
pub fn head_loss(
    model: &TcpgenModel,
    graphs: &[TreeGraph],
    batch: &[HeadExample],
) -> Result<f64, HeadError> {
    let encs = encode_used(model, graphs, batch)?;
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let p = match &encs[ex.graph] {
            Some(enc) if !ex.active.is_empty() => {
                example_forward(model, &graphs[ex.graph], enc, ex)?.p
            }
            _ => ex.p_rnnt_target,
        };
        if !(p > 0.0 && p.is_finite()) {
            return Err(HeadError::InfiniteLoss(i));
        }
        total -= p.ln();
    }
    Ok(total / batch.len().max(1) as f64)
}

fn add_outer(m: &mut Array2<f64>, scale: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(scale * ai, &b);
        }
    }
}

/// Loss and gradients of [`head_loss`] with respect to every learnable
/// parameter. Gradients come back in a model-shaped container.
pub fn head_gradients(
    model: &TcpgenModel,
    graphs: &[TreeGraph],
    batch: &[HeadExample],
) -> Result<(f64, TcpgenModel), HeadError> {
    head_gradients_with(model, graphs, batch, false)
}

/// [`head_gradients`], optionally treating `p_gen` as a constant: no
/// gradient reaches `wgen`, `bgen`, or anything through `h_ptr`.
pub fn head_gradients_with(
    model: &TcpgenModel,
    graphs: &[TreeGraph],
    batch: &[HeadExample],
    freeze_gate: bool,
) -> Result<(f64, TcpgenModel), HeadError> {
    let dims = *model.dims();
    let encs = encode_used(model, graphs, batch)?;
    let mut grad = model.zeros_like();
    let scale = 1.0 / batch.len().max(1) as f64;
    let sqrt_att = (dims.d_att as f64).sqrt();
    let tied_query_proj = model.head.query_proj.is_none();

    // dL/dK and dL/dV per graph, over all rows.
    let mut dk: Vec<Option<Array2<f64>>> = vec![None; graphs.len()];
    let mut dv: Vec<Option<Array2<f64>>> = vec![None; graphs.len()];
    let mut total = 0.0;

    for (i, ex) in batch.iter().enumerate() {
        let Some(enc) = encs[ex.graph].as_ref().filter(|_| !ex.active.is_empty()) else {
            let p = ex.p_rnnt_target;
            if !(p > 0.0 && p.is_finite()) {
                return Err(HeadError::InfiniteLoss(i));
            }
            total -= p.ln();
            continue;
        };
        let graph = &graphs[ex.graph];
        let f = example_forward(model, graph, enc, ex)?;
        if !(f.p > 0.0 && f.p.is_finite()) {
            return Err(HeadError::InfiniteLoss(i));
        }
        total -= f.p.ln();
        let h = enc.output();
        let g = f.step.p_gen;
        let r = ex.p_rnnt_target;

        let d_p = -scale / f.p;
        let d_a = if freeze_gate {
            0.0
        } else {
            d_p * (f.pi - r) * g * (1.0 - g)
        };
        let dj = dims.d_joint;
        {
            let mut wg = grad.head.wgen.slice_mut(s![..dj]);
            wg.scaled_add(d_a, &ex.h_joint);
            let mut wp = grad.head.wgen.slice_mut(s![dj..]);
            wp.scaled_add(d_a, &f.step.h_ptr);
        }
        grad.head.bgen += d_a;
        let d_hptr = model.head.wgen.slice(s![dj..]).mapv(|w| w * d_a);
        let d_pi = d_p * g;

        // Pointer probabilities, values and softmax.
        let dist = &f.step.dist;
        let n_rows = h.nrows();
        let dk_g = dk[ex.graph].get_or_insert_with(|| Array2::zeros((n_rows, dims.d_att)));
        let dv_g = dv[ex.graph].get_or_insert_with(|| Array2::zeros((n_rows, dims.d_att)));
        let mut dprob = Vec::with_capacity(dist.len());
        let mut keys = Vec::with_capacity(dist.len());
        for (k, (&n, &pk)) in dist.nodes.iter().zip(&dist.probs).enumerate() {
            let v = h.row(n).dot(&model.head.wv);
            let mut dpk = v.dot(&d_hptr);
            if dist.ids[k] == ex.target {
                dpk += d_pi;
            }
            dprob.push(dpk);
            dv_g.row_mut(n).scaled_add(pk, &d_hptr);
            keys.push(h.row(n).dot(&model.head.wk));
        }
        let mean: f64 = dist.probs.iter().zip(&dprob).map(|(p, d)| p * d).sum();
        let mut dq = Array1::zeros(dims.d_att);
        for (k, &n) in dist.nodes.iter().enumerate() {
            let dz = dist.probs[k] * (dprob[k] - mean) / sqrt_att;
            dq.scaled_add(dz, &keys[k]);
            dk_g.row_mut(n).scaled_add(dz, &f.q);
        }

        // Query.
        add_outer(&mut grad.head.wq, 1.0, f.u.view(), dq.view());
        let e = prev_embedding(model, ex.y_prev)?;
        add_outer(&mut grad.head.wq_prev, 1.0, e.view(), dq.view());
        if ex.y_prev != 0 {
            let de = model.head.wq_prev.dot(&dq);
            let table = match grad.head.decoder_embed.as_mut() {
                Some(t) => t,
                None => &mut grad.encoder.piece_embed,
            };
            table.row_mut(ex.y_prev - 1).scaled_add(1.0, &de);
        }
        if let Some(c) = &ex.h_ctc {
            let du = model.head.wq.dot(&dq);
            let target = if tied_query_proj {
                grad.encoder.phoneme_proj.as_mut()
            } else {
                grad.head.query_proj.as_mut()
            };
            if let Some(m) = target {
                add_outer(m, 1.0, c.view(), du.view());
            }
        }
    }

    // Keys and values back into the tree encodings, then through the GCN.
    for (gi, enc) in encs.iter().enumerate() {
        let (Some(enc), Some(dkg), Some(dvg)) = (enc, &dk[gi], &dv[gi]) else {
            continue;
        };
        let h = enc.output();
        grad.head.wk += &h.t().dot(dkg);
        grad.head.wv += &h.t().dot(dvg);
        let d_out = dkg.dot(&model.head.wk.t()) + dvg.dot(&model.head.wv.t());
        let graph = &graphs[gi];
        let dh0 = gcn_backward(
            enc,
            &graph.adj,
            &model.encoder.gcn,
            d_out,
            &mut grad.encoder.gcn,
        );
        grad.encoder.root_embed += &dh0.row(0);
        let mode = model.config.encoding;
        if mode.uses_grapheme() {
            for (n, node) in graph.tree.nodes().iter().enumerate().skip(1) {
                grad.encoder
                    .piece_embed
                    .row_mut(node.piece - 1)
                    .scaled_add(1.0, &dh0.row(n));
            }
        }
        if mode.uses_phoneme() {
            if let (Some(x), Some(gp)) =
                (&graph.phoneme_features, grad.encoder.phoneme_proj.as_mut())
            {
                *gp += &x.slice(s![1.., ..]).t().dot(&dh0.slice(s![1.., ..]));
            }
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Dims, ModelConfig};
    use crate::tokenizer::SubwordVocab;
    use ndarray::array;

    fn model() -> TcpgenModel {
        let dims = Dims {
            vocab: 5,
            d: 3,
            d_p: 4,
            d_enc: 2,
            d_att: 3,
            d_joint: 2,
            layers: 1,
        };
        TcpgenModel::init(ModelConfig::new(dims), Array2::eye(4), 9).unwrap()
    }

    fn tree() -> PrefixTree {
        let vocab = SubwordVocab::from_pieces(["A", "B_", "C_", "D", "E_"]).unwrap();
        let s1 = vocab.segmentation_from_pieces("AB", &["A", "B_"]).unwrap();
        let s2 = vocab.segmentation_from_pieces("AC", &["A", "C_"]).unwrap();
        let s3 = vocab.segmentation_from_pieces("DE", &["D", "E_"]).unwrap();
        PrefixTree::build("t", [("AB", &s1), ("AC", &s2), ("DE", &s3)])
    }

    #[test]
    fn zero_inputs_give_zero_query() {
        let m = model();
        let q = compute_query(&m, Array1::zeros(2).view(), 0, None).unwrap();
        assert_eq!(q, Array1::<f64>::zeros(3));
    }

    #[test]
    fn zero_ctc_embedding_is_bitwise_neutral() {
        let m = model();
        let h = array![0.3, -1.2];
        let a = compute_query(&m, h.view(), 2, None).unwrap();
        let b = compute_query(&m, h.view(), 2, Some(Array1::zeros(4).view())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ctc_argmax_skips_blank() {
        assert_eq!(ctc_argmax(&[0.9, 0.02, 0.08]), Some(2));
        assert_eq!(ctc_argmax(&[0.25; 4]), Some(1));
        assert_eq!(ctc_argmax(&[1.0]), None);
        let table = Array2::eye(3);
        assert_eq!(
            ctc_phoneme_embedding(&[0.0, 0.0, 1.0], &table).unwrap(),
            array![0.0, 0.0, 1.0]
        );
        assert!(ctc_phoneme_embedding(&[0.5, 0.5], &table).is_err());
    }

    #[test]
    fn closed_form_softmax() {
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        assert_eq!(softmax(&[-4.0]), vec![1.0]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.5, -1.25, 2.0, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 8.0).collect();
        assert_eq!(softmax(&z), softmax(&shifted));
    }

    #[test]
    fn singleton_distribution_and_context() {
        let m = model();
        let t = tree();
        let h = Array2::from_shape_fn((t.len() + 1, 3), |(i, j)| 0.1 * (i + j) as f64);
        let a = t.active_set(&[1]);
        let q = array![0.2, 0.1, -0.3];
        let only = vec![a[0]];
        let d = ptr_distribution(&m, q.view(), &h, &only, &t).unwrap();
        assert_eq!(d.probs, vec![1.0]);
        assert_eq!(d.prob(0), 0.0);
        let ctx = pointer_context(&m, &d, &h);
        assert_eq!(ctx, h.row(only[0]).dot(&m.head.wv));
    }

    #[test]
    fn gate_values() {
        let mut m = model();
        m.head.bgen = 0.0;
        let g = generation_prob(&m, Array1::zeros(2).view(), Array1::zeros(3).view()).unwrap();
        assert_eq!(g, 0.5);
        m.head.bgen = -50.0;
        let g = generation_prob(&m, Array1::zeros(2).view(), Array1::zeros(3).view()).unwrap();
        assert!(g < 1e-20);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let ptr = PtrDistribution {
            nodes: vec![1, 2],
            ids: vec![1, 2],
            probs: vec![0.25, 0.75],
        };
        let p = [0.5, 0.3, 0.2];
        assert_eq!(interpolate(&p, &ptr, 0.0).unwrap(), p.to_vec());
        let full = interpolate(&p, &ptr, 1.0).unwrap();
        assert_eq!(full, vec![0.0, 0.25, 0.75]);
        let half = interpolate(&p, &ptr, 0.5).unwrap();
        assert_eq!(half, vec![0.25, 0.275, 0.475]);
        assert!(matches!(
            interpolate(&[0.5, 0.4], &ptr, 0.5),
            Err(HeadError::NotNormalized(_))
        ));
    }

    #[test]
    fn duplicate_piece_is_rejected() {
        let t = tree();
        let a = t.active_set(&[]);
        let dup = vec![a[0], a[0]];
        assert!(matches!(
            distribution_from_logits(&t, &dup, &[0.0, 0.0]),
            Err(HeadError::DuplicateActivePiece(_))
        ));
    }
}
