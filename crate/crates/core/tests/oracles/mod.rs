//! Independent reference implementations and the checks behind the
//! acceptance criteria. Each check returns a one-line summary or the reason
//! it failed.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcpgen_core::align::{
    compose, AlignmentKind, AlignmentMatrix, ChunkPair, EmConfig, MultigramModel, SubwordCharMatrix,
};
use tcpgen_core::encoder::{
    gcn_forward, phoneme_node_encoding, SparseAdj, TreeGraph, WordPhonemes,
};
use tcpgen_core::gradcheck::{check_gradients, random_instance, InstanceSpec, FD_STEP};
use tcpgen_core::lexicon::{Lexicon, LexiconEntry, PhonemeInventory};
use tcpgen_core::metrics::{rwer, wer};
use tcpgen_core::params::{one_hot_table, Dims, ModelConfig, PhonemeEmbedMode, TcpgenModel};
use tcpgen_core::sim::decode::{decode, Biasing, DecodeConfig};
use tcpgen_core::sim::world::{demo_model, prepare};
use tcpgen_core::sim::{run_demo, DemoConfig, DemoWorld};
use tcpgen_core::tcpgen::{head_step, interpolate, ptr_distribution};
use tcpgen_core::tokenizer::{PieceId, Segmentation};
use tcpgen_core::trie::{PrefixTree, RootMode};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- trees

/// A word spelled by random piece ids, one character per piece.
pub fn random_word(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> (String, Segmentation) {
    let len = rng.gen_range(1..=max_len);
    let piece_ids: Vec<PieceId> = (0..len).map(|_| rng.gen_range(1..=vocab)).collect();
    let word = piece_ids.iter().map(|p| format!("{p}.")).collect();
    (
        word,
        Segmentation {
            piece_ids,
            char_spans: (0..len).map(|i| i..i + 1).collect(),
        },
    )
}

pub fn random_words(
    rng: &mut ChaCha8Rng,
    n: usize,
    vocab: usize,
    max_len: usize,
) -> Vec<(String, Segmentation)> {
    (0..n).map(|_| random_word(rng, vocab, max_len)).collect()
}

/// Between 1 and `max_n - 1` random words.
pub fn random_list(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    vocab: usize,
    max_len: usize,
) -> Vec<(String, Segmentation)> {
    let n = rng.gen_range(1..max_n);
    random_words(rng, n, vocab, max_len)
}

pub fn build(words: &[(String, Segmentation)]) -> PrefixTree {
    PrefixTree::build("t", words.iter().map(|(w, s)| (w.as_str(), s)))
}

/// Pieces that can follow `prefix` in some word of the list.
pub fn brute_active(words: &[(String, Segmentation)], prefix: &[PieceId]) -> BTreeSet<PieceId> {
    words
        .iter()
        .map(|(_, s)| &s.piece_ids)
        .filter(|p| p.len() > prefix.len() && p.starts_with(prefix))
        .map(|p| p[prefix.len()])
        .collect()
}

/// Active pieces as the decoder sees them: a prefix that no word continues
/// sends the search back to the word starts.
pub fn brute_active_with_reset(
    words: &[(String, Segmentation)],
    prefix: &[PieceId],
) -> BTreeSet<PieceId> {
    let in_tree = prefix.is_empty() || words.iter().any(|(_, s)| s.piece_ids.starts_with(prefix));
    if in_tree {
        brute_active(words, prefix)
    } else {
        brute_active(words, &[])
    }
}

/// Dense `(N+1) × (N+1)` normalized adjacency built straight from parent
/// links.
pub fn dense_normalized_adjacency(tree: &PrefixTree, mode: RootMode) -> Array2<f64> {
    let n = tree.nodes().len();
    let mut a = Array2::<f64>::eye(n);
    for (i, node) in tree.nodes().iter().enumerate() {
        if let Some(p) = node.parent {
            if p == 0 && mode == RootMode::Detached {
                continue;
            }
            a[[i, p]] = 1.0;
            a[[p, i]] = 1.0;
        }
    }
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    let mut s = a.clone();
    for i in 0..n {
        for j in 0..n {
            s[[i, j]] = a[[i, j]] / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    s
}

/// `ReLU(S H W)` by explicit loops, layer after layer.
pub fn dense_gcn(s: &Array2<f64>, h0: &Array2<f64>, weights: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut out = vec![h0.clone()];
    for w in weights {
        let h = out.last().unwrap();
        let (n, d_in, d_out) = (h.nrows(), h.ncols(), w.ncols());
        let mut sh = Array2::<f64>::zeros((n, d_in));
        for i in 0..n {
            for j in 0..n {
                for k in 0..d_in {
                    sh[[i, k]] += s[[i, j]] * h[[j, k]];
                }
            }
        }
        let mut next = Array2::<f64>::zeros((n, d_out));
        for i in 0..n {
            for c in 0..d_out {
                let mut acc = 0.0;
                for k in 0..d_in {
                    acc += sh[[i, k]] * w[[k, c]];
                }
                next[[i, c]] = acc.max(0.0);
            }
        }
        out.push(next);
    }
    out
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest elementwise difference relative to the larger matrix scale.
pub fn matrix_rel_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = max_abs(a).max(max_abs(b));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
}

// ------------------------------------------------------------ criterion 1

/// Model over `vocab` pieces with small random dims, grapheme encoding.
fn pointer_model(rng: &mut ChaCha8Rng, vocab: usize) -> TcpgenModel {
    let d = rng.gen_range(2..=8);
    let dims = Dims {
        vocab,
        d,
        d_p: d,
        d_enc: rng.gen_range(2..=8),
        d_att: rng.gen_range(2..=8),
        d_joint: 3,
        layers: rng.gen_range(0..=3),
    };
    let mut cfg = ModelConfig::new(dims);
    cfg.encoding = tcpgen_core::params::EncodingMode::Grapheme;
    cfg.phoneme_embed = PhonemeEmbedMode::OneHot;
    let mut m = TcpgenModel::init(cfg, Array2::eye(d), rng.gen()).unwrap();
    m.head.wk *= 3.0;
    m
}

pub fn check_masking(instances: usize) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut nonempty = 0;
    for inst in 0..instances {
        let vocab = rng.gen_range(2..=30);
        let n_words = rng.gen_range(0..=50);
        let words = random_words(&mut rng, n_words, vocab, 5);
        let tree = build(&words);
        let prefix: Vec<PieceId> = if !words.is_empty() && rng.gen_bool(0.7) {
            let w = &words[rng.gen_range(0..words.len())].1.piece_ids;
            w[..rng.gen_range(0..=w.len())].to_vec()
        } else {
            (0..rng.gen_range(0..4))
                .map(|_| rng.gen_range(1..=vocab))
                .collect()
        };
        let active = tree.active_set(&prefix);
        let got: BTreeSet<PieceId> = active.iter().map(|&n| tree.piece(n)).collect();
        ensure(got.len() == active.len(), || {
            format!("instance {inst}: repeated piece in active set")
        })?;
        let want = brute_active_with_reset(&words, &prefix);
        ensure(got == want, || {
            format!("instance {inst}: active set {got:?} != word scan {want:?}")
        })?;
        if active.is_empty() {
            continue;
        }
        nonempty += 1;

        let model = pointer_model(&mut rng, vocab);
        let graph = TreeGraph::new(tree.clone(), RootMode::Connected, None);
        let enc = graph.encode(&model).map_err(|e| e.to_string())?;
        let h = enc.output();
        let q = Array1::from_shape_simple_fn(model.dims().d_att, || rng.gen_range(-3.0..3.0));
        let dist =
            ptr_distribution(&model, q.view(), h, &active, &tree).map_err(|e| e.to_string())?;

        // Dense softmax over every piece with -inf on inactive logits.
        let scale = (model.dims().d_att as f64).sqrt();
        let mut logits = vec![f64::NEG_INFINITY; vocab + 1];
        for &n in &active {
            let k = h.row(n).dot(&model.head.wk);
            logits[tree.piece(n)] = q.dot(&k) / scale;
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let total: f64 = ex.iter().sum();
        for (y, e) in ex.iter().enumerate() {
            let want = e / total;
            let got = dist.prob(y);
            if want == 0.0 {
                ensure(got == 0.0, || {
                    format!("instance {inst}: inactive piece {y} has mass {got}")
                })?;
            } else {
                worst = worst.max((got - want).abs() / want);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-12, || {
        format!("masked softmax rel error {worst:e} > 1e-12")
    })?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{instances} instances ({nonempty} nonempty), max rel error {worst:.1e}, {secs:.2}s"
    ))
}

// ------------------------------------------------------------ criterion 2

pub fn random_soft_alignment(rng: &mut ChaCha8Rng, l_c: usize, l_p: usize) -> AlignmentMatrix {
    let mut w = Array2::<f64>::zeros((l_c, l_p));
    for j in 0..l_p {
        let col: Vec<f64> = (0..l_c)
            .map(|_| rng.gen_range(0.0..1.0f64).powi(3))
            .collect();
        let s: f64 = col.iter().sum::<f64>().max(1e-300);
        for i in 0..l_c {
            w[[i, j]] = col[i] / s;
        }
    }
    AlignmentMatrix::new(w, AlignmentKind::Soft).unwrap()
}

pub fn random_spans(rng: &mut ChaCha8Rng, l_c: usize) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < l_c {
        let len = rng.gen_range(1..=(l_c - pos).min(4));
        spans.push(pos..pos + len);
        pos += len;
    }
    spans
}

pub fn check_normalization(seeds: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut ptr_max, mut out_max, mut comp_max) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n_ptr, mut n_out, mut n_comp) = (0, 0, 0);
    for seed in 0..seeds {
        let inst = random_instance(seed, &InstanceSpec::default());
        let m = &inst.model;
        for ex in &inst.batch {
            if ex.active.is_empty() {
                continue;
            }
            let graph = &inst.graphs[ex.graph];
            let enc = graph.encode(m).map_err(|e| e.to_string())?;
            let q = tcpgen_core::tcpgen::compute_query(
                m,
                ex.h_enc.view(),
                ex.y_prev,
                ex.h_ctc.as_ref().map(|c| c.view()),
            )
            .map_err(|e| e.to_string())?;
            let step = head_step(
                m,
                &graph.tree,
                enc.output(),
                &ex.active,
                q.view(),
                ex.h_joint.view(),
            )
            .map_err(|e| e.to_string())?;
            ptr_max = ptr_max.max((step.dist.sum() - 1.0).abs());
            n_ptr += 1;
            for g in [0.0, step.p_gen, 0.5, 1.0] {
                let mut p: Vec<f64> = (0..=m.dims().vocab)
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                let out = interpolate(&p, &step.dist, g).map_err(|e| e.to_string())?;
                out_max = out_max.max((out.iter().sum::<f64>() - 1.0).abs());
                n_out += 1;
            }
        }
    }
    for _ in 0..2000 {
        let l_c = rng.gen_range(1..=12);
        let l_p = rng.gen_range(1..=12);
        let cp = if rng.gen_bool(0.5) {
            random_soft_alignment(&mut rng, l_c, l_p)
        } else {
            let mut a: Vec<usize> = (0..l_p).map(|_| rng.gen_range(0..l_c)).collect();
            a.sort_unstable();
            AlignmentMatrix::from_assignment(l_c, &a).unwrap()
        };
        let sc = SubwordCharMatrix::from_spans(l_c, &random_spans(&mut rng, l_c)).unwrap();
        let sp = compose(&sc, &cp).map_err(|e| e.to_string())?;
        for col in sp.columns() {
            comp_max = comp_max.max((col.sum() - 1.0).abs());
        }
        n_comp += 1;
    }
    ensure(ptr_max <= 1e-9, || {
        format!("pointer distribution off by {ptr_max:e}")
    })?;
    ensure(out_max <= 1e-9, || {
        format!("interpolated output off by {out_max:e}")
    })?;
    ensure(comp_max <= 1e-6, || {
        format!("composition column off by {comp_max:e}")
    })?;
    Ok(format!(
        "{n_ptr} pointer distributions (max |Σ-1| {ptr_max:.1e}), {n_out} outputs ({out_max:.1e}), {n_comp} compositions ({comp_max:.1e})"
    ))
}

// ------------------------------------------------------------ criterion 3

pub fn check_gradient_suite(instances: u64) -> Check {
    let start = Instant::now();
    let spec = InstanceSpec::default();
    ensure(
        spec.vocab <= 20 && spec.max_nodes <= 10 && spec.d <= 8,
        || "instance spec too large".into(),
    )?;
    let (mut rel, mut abs, mut checked) = (0.0f64, 0.0f64, 0);
    for seed in 0..instances {
        let inst = random_instance(seed, &spec);
        let r = check_gradients(&inst, FD_STEP).map_err(|e| e.to_string())?;
        ensure(r.passed(), || {
            format!(
                "seed {seed}: {} failing entries, worst in {:?} (rel {:e})",
                r.failures, r.worst, r.max_rel_error
            )
        })?;
        rel = rel.max(r.max_rel_error);
        abs = abs.max(r.max_abs_error);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{instances} instances, {checked} entries, max rel {rel:.1e}, max abs {abs:.1e}, {secs:.2}s"
    ))
}

// ------------------------------------------------------------ criterion 4

/// 50 words over ten letters, each letter always read as its own phoneme.
pub fn deterministic_lexicon() -> (PhonemeInventory, Lexicon, Vec<(char, usize)>) {
    let letters = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J'];
    let symbols = ["aa", "b", "k", "d", "eh", "f", "g", "hh", "iy", "jh"];
    let inv = PhonemeInventory::new(symbols).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut lex = Lexicon::default();
    let mut seen = BTreeSet::new();
    while lex.len() < 50 {
        let len = rng.gen_range(2..=7);
        let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..letters.len())).collect();
        let word: String = idx.iter().map(|&i| letters[i]).collect();
        if !seen.insert(word.clone()) {
            continue;
        }
        let phones = idx.iter().map(|&i| inv.id(symbols[i]).unwrap()).collect();
        lex.insert(LexiconEntry::new(word, phones, &inv).unwrap());
    }
    let mapping = letters
        .iter()
        .zip(symbols)
        .map(|(&c, s)| (c, inv.id(s).unwrap()))
        .collect();
    (inv, lex, mapping)
}

pub fn check_em_recovery() -> Check {
    let (_, lex, mapping) = deterministic_lexicon();
    let cfg = EmConfig {
        max_iters: 10,
        ..EmConfig::default()
    };
    let (model, report) = MultigramModel::train(&lex, &cfg).map_err(|e| e.to_string())?;
    ensure(report.iterations <= 10, || {
        format!("{} iterations", report.iterations)
    })?;
    for w in report.log_likelihoods.windows(2) {
        ensure(w[1] >= w[0] - 1e-9 * w[0].abs(), || {
            format!("log-likelihood fell: {} -> {}", w[0], w[1])
        })?;
    }
    let mut worst = 1.0f64;
    for &(c, ph) in &mapping {
        let p = model.conditional(&ChunkPair::new(&c.to_string(), &[ph]));
        worst = worst.min(p);
    }
    ensure(worst >= 0.99, || {
        format!("weakest true pair has P(p|g) = {worst}")
    })?;
    for e in lex.entries() {
        let a = model.viterbi_align(e).map_err(|e| e.to_string())?;
        let eye = Array2::<f64>::eye(e.char_len());
        ensure(*a.weights() == eye, || {
            format!("{}: Viterbi alignment is not the identity", e.word)
        })?;
    }
    Ok(format!(
        "{} iterations, min P(true phoneme | letter) = {worst:.6}, all 50 Viterbi alignments identity",
        report.iterations
    ))
}

// ------------------------------------------------------------ criterion 5

/// Best chunk-path score by enumerating every monotonic segmentation,
/// folding log-probabilities from the last chunk backwards.
pub fn exhaustive_viterbi(model: &MultigramModel, e: &LexiconEntry) -> Option<f64> {
    fn rec(model: &MultigramModel, e: &LexiconEntry, i: usize, j: usize) -> Option<f64> {
        let (l_c, l_p) = (e.char_len(), e.phoneme_len());
        if i == l_c && j == l_p {
            return Some(0.0);
        }
        let min_b = if model.allow_deletions { 0 } else { 1 };
        let mut best: Option<f64> = None;
        for a in 1..=model.max_g.min(l_c.saturating_sub(i)) {
            for b in min_b..=model.max_p.min(l_p - j) {
                let g: String = e.chars[i..i + a].iter().collect();
                let Some(lp) = model.log_prob(&ChunkPair::new(&g, &e.phonemes[j..j + b])) else {
                    continue;
                };
                if let Some(rest) = rec(model, e, i + a, j + b) {
                    let s = lp + rest;
                    best = Some(best.map_or(s, |m: f64| m.max(s)));
                }
            }
        }
        best
    }
    rec(model, e, 0, 0)
}

pub fn random_lexicon(seed: u64, n: usize) -> (PhonemeInventory, Lexicon) {
    let symbols = ["a", "b", "c", "d", "e"];
    let inv = PhonemeInventory::new(symbols).unwrap();
    let letters = ['A', 'B', 'C', 'D'];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lex = Lexicon::default();
    let mut guard = 0;
    while lex.len() < n && guard < 100 * n {
        guard += 1;
        let l_c = rng.gen_range(1..=6);
        let l_p = rng.gen_range(1..=6);
        // Keep entries alignable with one-to-two and two-to-one chunks.
        if l_p > 2 * l_c || l_c > 2 * l_p {
            continue;
        }
        let word: String = (0..l_c)
            .map(|_| letters[rng.gen_range(0..letters.len())])
            .collect();
        let phones = (0..l_p).map(|_| rng.gen_range(1..inv.len())).collect();
        lex.insert(LexiconEntry::new(word, phones, &inv).unwrap());
    }
    (inv, lex)
}

pub fn check_viterbi_oracle() -> Check {
    let mut entries = 0;
    for (seed, deletions) in [(505u64, true), (506, false)] {
        let (_, lex) = random_lexicon(seed, 150);
        let cfg = EmConfig {
            max_iters: 5,
            allow_deletions: deletions,
            ..EmConfig::default()
        };
        let (model, _) = MultigramModel::train(&lex, &cfg).map_err(|e| e.to_string())?;
        for e in lex.entries() {
            if e.char_len() > 6 || e.phoneme_len() > 6 {
                continue;
            }
            let want = exhaustive_viterbi(&model, e);
            let got = model.viterbi_path(e).ok().map(|p| p.log_score);
            ensure(got == want, || {
                format!("{}: Viterbi {got:?} vs exhaustive {want:?}", e.word)
            })?;
            entries += 1;
        }
    }
    Ok(format!("{entries} entries, exact agreement"))
}

// ------------------------------------------------------------ criterion 6

pub fn check_gcn_oracle(trees: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0f64;
    let mut built = 0;
    while built < trees {
        let vocab = rng.gen_range(2..=12);
        let n_words = rng.gen_range(1..=12);
        let words = random_words(&mut rng, n_words, vocab, 5);
        let tree = build(&words);
        if tree.len() > 30 {
            continue;
        }
        built += 1;
        let mode = if rng.gen_bool(0.5) {
            RootMode::Connected
        } else {
            RootMode::Detached
        };
        let d = rng.gen_range(1..=8);
        let layers = rng.gen_range(0..=6);
        let h0 = uniform(&mut rng, (tree.len() + 1, d));
        let ws: Vec<Array2<f64>> = (0..layers).map(|_| uniform(&mut rng, (d, d))).collect();
        let enc = gcn_forward(h0.clone(), &SparseAdj::for_tree(&tree, mode), &ws)
            .map_err(|e| e.to_string())?;
        let want = dense_gcn(&dense_normalized_adjacency(&tree, mode), &h0, &ws);
        for (l, (a, b)) in enc.layers.iter().zip(&want).enumerate() {
            let e = matrix_rel_error(a, b);
            ensure(e <= 1e-10, || {
                format!("tree {built}, layer {l}: rel error {e:e}")
            })?;
            worst = worst.max(e);
        }
    }
    // Paper-sized shapes: six layers of width 256.
    let words = random_words(&mut rng, 10, 50, 4);
    let tree = build(&words);
    let h0 = uniform(&mut rng, (tree.len() + 1, 256)) * 0.1;
    let ws: Vec<Array2<f64>> = (0..6)
        .map(|_| uniform(&mut rng, (256, 256)) * (1.0 / 16.0))
        .collect();
    let enc = gcn_forward(h0, &SparseAdj::for_tree(&tree, RootMode::Connected), &ws)
        .map_err(|e| e.to_string())?;
    ensure(enc.output().dim() == (tree.len() + 1, 256), || {
        "L=6, d=256 output shape".into()
    })?;
    Ok(format!(
        "{trees} trees (N ≤ 30, L ≤ 6), max rel error {worst:.1e}; L=6/d=256 accepted"
    ))
}

// ------------------------------------------------------------ criterion 7

pub struct Fig2 {
    pub inv: PhonemeInventory,
    pub tree: PrefixTree,
    pub inputs: BTreeMap<String, WordPhonemes>,
}

/// BRIDAL and BRISKLY segmented as B·RI·DAL_ and B·RI·SKLY_. BRIDAL uses
/// the identity alignment; BRISKLY spreads R and IH over the letters R, I.
pub fn fig2() -> Fig2 {
    let inv =
        PhonemeInventory::new(["B", "R", "AY", "D", "AH", "L", "IH", "S", "K", "IY"]).unwrap();
    let ph = |s: &str| -> Vec<usize> { s.split(' ').map(|p| inv.id(p).unwrap()).collect() };
    let bridal = LexiconEntry::new("BRIDAL", ph("B R AY D AH L"), &inv).unwrap();
    let brisk = LexiconEntry::new("BRISKLY", ph("B R IH S K L IY"), &inv).unwrap();
    let seg = |spans: Vec<std::ops::Range<usize>>, ids: Vec<PieceId>| Segmentation {
        piece_ids: ids,
        char_spans: spans,
    };
    let s_bridal = seg(vec![0..1, 1..3, 3..6], vec![1, 2, 3]);
    let s_brisk = seg(vec![0..1, 1..3, 3..7], vec![1, 2, 4]);
    let a_bridal = AlignmentMatrix::from_assignment(6, &[0, 1, 2, 3, 4, 5]).unwrap();
    let mut w = Array2::<f64>::eye(7);
    // Column R: 3/4 on letter R, 1/4 on I; column IH: half and half.
    w[[1, 1]] = 0.75;
    w[[2, 1]] = 0.25;
    w[[1, 2]] = 0.5;
    w[[2, 2]] = 0.5;
    let a_brisk = AlignmentMatrix::new(w, AlignmentKind::Soft).unwrap();
    let tree = PrefixTree::build("fig2", [("BRIDAL", &s_bridal), ("BRISKLY", &s_brisk)]);
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "BRIDAL".to_string(),
        WordPhonemes::from_entry(&bridal, &s_bridal, &a_bridal).unwrap(),
    );
    inputs.insert(
        "BRISKLY".to_string(),
        WordPhonemes::from_entry(&brisk, &s_brisk, &a_brisk).unwrap(),
    );
    Fig2 { inv, tree, inputs }
}

pub fn check_fig2() -> Check {
    let f = fig2();
    let table = one_hot_table(&f.inv);
    let ri = f.tree.walk(&[1, 2]).ok_or("no RI node")?;
    ensure(f.tree.node(ri).words.len() == 2, || {
        "RI should be shared".into()
    })?;
    let e =
        phoneme_node_encoding(&f.tree, ri, &f.inputs, &table, None).map_err(|e| e.to_string())?;

    let one = |s: &str| table.row(f.inv.id(s).unwrap()).to_owned();
    let r_bridal = one("R");
    let i_bridal = one("AY");
    let r_brisk = one("R") * 0.75 + one("IH") * 0.5;
    let i_brisk = one("R") * 0.25 + one("IH") * 0.5;
    let want = &(&(&r_bridal + &i_bridal) + &r_brisk) + &i_brisk;
    ensure(e == want, || {
        format!("e(RI) = {e} but the four contributions sum to {want}")
    })?;

    // Through a projection the same sum is mapped linearly.
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let wp = uniform(&mut rng, (f.inv.len(), 5));
    let ep = phoneme_node_encoding(&f.tree, ri, &f.inputs, &table, Some(&wp))
        .map_err(|e| e.to_string())?;
    let wantp = want.dot(&wp);
    let err = ep
        .iter()
        .zip(&wantp)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(err <= 1e-12, || format!("projected e(RI) off by {err:e}"))?;
    Ok(format!("e(RI) = {want} exactly"))
}

// ------------------------------------------------------------ criterion 8

pub const DEMO_MIN_RELATIVE_RWER_REDUCTION: f64 = 0.30;
pub const DEMO_MAX_WER_INCREASE: f64 = 0.01;

pub fn check_demo() -> Check {
    let start = Instant::now();
    let cfg = DemoConfig::default();
    ensure(cfg.world.test_utterances == 20, || {
        "suite must have 20 utterances".into()
    })?;
    ensure(
        cfg.world.distractors == 20 && cfg.world.noise == 0.6 && cfg.train.steps == 200,
        || "demo settings drifted".into(),
    )?;
    let a = run_demo(&cfg).map_err(|e| e.to_string())?;
    let b = run_demo(&cfg).map_err(|e| e.to_string())?;
    let fingerprint = |r: &tcpgen_core::sim::DemoReport| {
        format!(
            "{:?}{:?}{:?}{:?}{:?}",
            r.hyps_off,
            r.hyps_on,
            r.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            r.bias_on,
            r.bias_off
        )
    };
    ensure(fingerprint(&a) == fingerprint(&b), || {
        "runs differ for the same seed".into()
    })?;
    ensure(a.model == b.model, || {
        "trained parameters differ for the same seed".into()
    })?;
    let (off, on) = (
        a.bias_off.rwer().ok_or("no rare words in suite")?,
        a.bias_on.rwer().ok_or("no rare words in suite")?,
    );
    let (wer_off, wer_on) = (a.bias_off.wer().unwrap(), a.bias_on.wer().unwrap());
    let reduction = (off - on) / off;
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "R-WER {off:.3} -> {on:.3} ({:.1}% relative), WER {:.1}% -> {:.1}%, {secs:.1}s for two runs",
        100.0 * reduction,
        100.0 * wer_off,
        100.0 * wer_on
    );
    ensure(
        on < off && reduction >= DEMO_MIN_RELATIVE_RWER_REDUCTION,
        || summary.clone(),
    )?;
    ensure(wer_on <= wer_off + DEMO_MAX_WER_INCREASE, || {
        summary.clone()
    })?;
    ensure(secs < 240.0, || summary.clone())?;
    Ok(summary)
}

// ------------------------------------------------------------ criterion 9

pub fn check_phoneme_query_equivalence() -> Check {
    let mut cfg = DemoConfig::default();
    cfg.world.train_utterances = 4;
    cfg.world.test_utterances = 10;
    let world = DemoWorld::generate(&cfg.world).map_err(|e| e.to_string())?;
    let res = &world.resources;
    let mut compared = 0;
    for seed in 0..3 {
        let mut model = demo_model(
            &world,
            &DemoConfig {
                model_seed: seed,
                ..cfg.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        model.head.bgen = 1.0;
        let prep = prepare(res, &world.test, &model).map_err(|e| e.to_string())?;

        // Zero CTC embeddings: the phoneme query collapses to the plain one.
        let mut zero = model.clone();
        zero.encoder.phoneme_table.fill(0.0);
        for p in &prep {
            let graph = res
                .graph(p.graph.tree.clone(), &zero)
                .map_err(|e| e.to_string())?;
            let bias = Biasing::new(&zero, &graph).map_err(|e| e.to_string())?;
            let base = DecodeConfig::default();
            let a = decode(
                &p.utterance,
                &res.vocab,
                Some(&bias),
                &DecodeConfig {
                    phoneme_query_enabled: true,
                    ..base
                },
            )
            .map_err(|e| e.to_string())?;
            let b =
                decode(&p.utterance, &res.vocab, Some(&bias), &base).map_err(|e| e.to_string())?;
            ensure(
                a.pieces == b.pieces && a.log_prob.to_bits() == b.log_prob.to_bits(),
                || format!("{}: zero CTC stream changed the decode", p.scenario.id),
            )?;

            // Forced p_gen = 0 against unbiased decoding.
            let bias = Biasing::new(&model, &p.graph).map_err(|e| e.to_string())?;
            for pq in [false, true] {
                let forced = DecodeConfig {
                    force_pgen_zero: true,
                    phoneme_query_enabled: pq,
                    ..base
                };
                let a = decode(&p.utterance, &res.vocab, Some(&bias), &forced)
                    .map_err(|e| e.to_string())?;
                let off = DecodeConfig {
                    biasing_enabled: false,
                    ..base
                };
                let b = decode(&p.utterance, &res.vocab, None, &off).map_err(|e| e.to_string())?;
                ensure(
                    a.pieces == b.pieces && a.log_prob.to_bits() == b.log_prob.to_bits(),
                    || {
                        format!(
                            "{}: forced p_gen = 0 differs from unbiased decode",
                            p.scenario.id
                        )
                    },
                )?;
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} utterance decodes bit-identical in both comparisons"
    ))
}

// ----------------------------------------------------------- criterion 10

/// Reverse edit operation codes in tie-break priority order.
const MATCH: u8 = 0;
const SUB: u8 = 1;
const DEL: u8 = 2;
const INS: u8 = 3;

/// Enumerates every edit path from the end backwards (ops in priority
/// order), keeping the cheapest; among equal costs the first one found is
/// kept. Pruned with the trivial length-difference bound.
pub fn brute_alignment(r: &[u8], h: &[u8]) -> (usize, Vec<u8>) {
    struct Search<'a> {
        r: &'a [u8],
        h: &'a [u8],
        path: Vec<u8>,
        best: Option<(usize, Vec<u8>)>,
    }
    fn go(s: &mut Search, i: usize, j: usize, cost: usize) {
        // Equal-cost paths found later rank lower, so they are cut too.
        if matches!(&s.best, Some((b, _)) if cost + i.abs_diff(j) >= *b) {
            return;
        }
        if i == 0 && j == 0 {
            s.best = Some((cost, s.path.clone()));
            return;
        }
        if i > 0 && j > 0 {
            let op = if s.r[i - 1] == s.h[j - 1] { MATCH } else { SUB };
            s.path.push(op);
            go(s, i - 1, j - 1, cost + (op == SUB) as usize);
            s.path.pop();
        }
        if i > 0 {
            s.path.push(DEL);
            go(s, i - 1, j, cost + 1);
            s.path.pop();
        }
        if j > 0 {
            s.path.push(INS);
            go(s, i, j - 1, cost + 1);
            s.path.pop();
        }
    }
    let mut s = Search {
        r,
        h,
        path: Vec::new(),
        best: None,
    };
    go(&mut s, r.len(), h.len(), 0);
    let (c, mut p) = s.best.unwrap();
    p.reverse();
    (c, p)
}

pub fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for a in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

pub fn check_metrics_oracle() -> Check {
    let seqs = all_sequences(6, 3);
    let names = ["a", "b", "c"];
    let words = |s: &[u8]| -> Vec<&str> { s.iter().map(|&c| names[c as usize]).collect() };
    let biasing: BTreeSet<String> = ["a".to_string()].into();
    let mut pairs = 0u64;
    for r in &seqs {
        let rw = words(r);
        for h in &seqs {
            let hw = words(h);
            let (cost, path) = brute_alignment(r, h);
            let w = wer(&rw, &hw);
            let c = w.alignment.counts();
            ensure(c.errors() == cost, || {
                format!("{rw:?}/{hw:?}: WER errors {} vs {cost}", c.errors())
            })?;
            // An empty reference scores 0 when the hypothesis is empty too.
            let want_rate = if r.is_empty() {
                (cost == 0).then_some(0.0)
            } else {
                Some(cost as f64 / r.len() as f64)
            };
            ensure(w.rate == want_rate, || {
                format!("{rw:?}/{hw:?}: rate {:?}", w.rate)
            })?;

            // R-WER from the enumerated path.
            let (mut i, mut j) = (0usize, 0usize);
            let mut rare = 0;
            let mut subs = 0;
            for &op in &path {
                match op {
                    MATCH => {
                        i += 1;
                        j += 1;
                    }
                    SUB => {
                        rare += (r[i] == 0) as usize;
                        subs += 1;
                        i += 1;
                        j += 1;
                    }
                    DEL => {
                        rare += (r[i] == 0) as usize;
                        i += 1;
                    }
                    _ => {
                        rare += (h[j] == 0) as usize;
                        j += 1;
                    }
                }
            }
            ensure(c.substitutions == subs, || {
                format!("{rw:?}/{hw:?}: substitution count differs")
            })?;
            let n_rare = r.iter().filter(|&&x| x == 0).count();
            let rr = rwer(&rw, &hw, &biasing);
            ensure(rr.counts.errors() == rare, || {
                format!(
                    "{rw:?}/{hw:?}: R-WER errors {} vs {rare}",
                    rr.counts.errors()
                )
            })?;
            let want = (n_rare > 0).then(|| rare as f64 / n_rare as f64);
            ensure(rr.rate == want, || {
                format!("{rw:?}/{hw:?}: R-WER {:?} vs {want:?}", rr.rate)
            })?;
            pairs += 1;
        }
    }
    Ok(format!(
        "{pairs} sequence pairs (length ≤ 6, 3 symbols), exact agreement"
    ))
}
