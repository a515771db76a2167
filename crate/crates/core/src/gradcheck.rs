//! Random small head instances and a central finite-difference check of
//! [`head_gradients`](crate::tcpgen::head_gradients).

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{AlignmentKind, AlignmentMatrix, SubwordCharMatrix};
use crate::encoder::{TreeGraph, WordPhonemes};
use crate::params::{Dims, EncodingMode, ModelConfig, PhonemeEmbedMode, TcpgenModel};
use crate::tcpgen::{head_gradients, head_loss, HeadError, HeadExample};
use crate::tokenizer::Segmentation;
use crate::trie::{PrefixTree, RootMode};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;

/// Size limits for random instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceSpec {
    pub vocab: usize,
    pub max_nodes: usize,
    pub d: usize,
    pub examples: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            vocab: 20,
            max_nodes: 10,
            d: 8,
            examples: 6,
        }
    }
}

impl InstanceSpec {
    /// Parses `"V=20,N=10,d=8"`; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut spec = Self::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| format!("bad value in {part:?}"))?;
            if v == 0 {
                return Err(format!("{k} must be positive"));
            }
            match k.trim() {
                "V" => spec.vocab = v,
                "N" => spec.max_nodes = v,
                "d" => spec.d = v,
                "B" => spec.examples = v,
                other => return Err(format!("unknown dimension {other:?}")),
            }
        }
        if spec.vocab < 2 {
            return Err("V must be at least 2".into());
        }
        Ok(spec)
    }
}

/// A model, its tree graphs, and a batch referencing them.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: TcpgenModel,
    pub graphs: Vec<TreeGraph>,
    pub batch: Vec<HeadExample>,
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.gen_range(-bound..bound))
}

fn random_tree(
    rng: &mut ChaCha8Rng,
    spec: &InstanceSpec,
) -> (PrefixTree, Vec<(String, Segmentation)>) {
    let mut words: Vec<(String, Segmentation)> = Vec::new();
    let mut tree = PrefixTree::build("random", std::iter::empty());
    for attempt in 0..4 * spec.max_nodes {
        let len = rng.gen_range(1..=4);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=spec.vocab)).collect();
        let word = format!("w{attempt}");
        let seg = Segmentation {
            piece_ids: ids,
            char_spans: (0..len).map(|i| i..i + 1).collect(),
        };
        let mut trial = words.clone();
        trial.push((word, seg));
        let t = PrefixTree::build("random", trial.iter().map(|(w, s)| (w.as_str(), s)));
        if t.len() <= spec.max_nodes {
            words = trial;
            tree = t;
        }
    }
    (tree, words)
}

fn random_alignment(rng: &mut ChaCha8Rng, l_c: usize, l_p: usize) -> AlignmentMatrix {
    let mut w = Array2::from_shape_simple_fn((l_c, l_p), || rng.gen_range(0.05..1.0));
    for mut c in w.columns_mut() {
        let s = c.sum();
        c.mapv_inplace(|v| v / s);
    }
    AlignmentMatrix::new(w, AlignmentKind::Soft).expect("normalized columns")
}

/// Random instance exercising every parameter: phoneme-aware encodings
/// with a learned projection, untied embeddings, CTC query input, and a mix
/// of in-tree, out-of-tree and blank targets.
pub fn random_instance(seed: u64, spec: &InstanceSpec) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_phones = rng.gen_range(3..=6);
    let d = spec.d;
    let dims = Dims {
        vocab: spec.vocab,
        d,
        d_p: n_phones,
        d_enc: rng.gen_range(2..=d.max(2)),
        d_att: rng.gen_range(2..=d.max(2)),
        d_joint: rng.gen_range(1..=4),
        layers: rng.gen_range(1..=3),
    };
    let mut cfg = ModelConfig::new(dims);
    cfg.encoding = EncodingMode::Both;
    cfg.phoneme_embed = PhonemeEmbedMode::OneHotLinear;
    cfg.tie_embeddings = rng.gen_bool(0.5);
    cfg.root_mode = if rng.gen_bool(0.5) {
        RootMode::Connected
    } else {
        RootMode::Detached
    };
    let mut model = TcpgenModel::init(cfg, Array2::eye(n_phones), rng.gen()).expect("valid dims");
    // Spread weights out so the gate and ReLUs are not all in one regime.
    for (_, t) in model.learnable_mut() {
        for v in t.iter_mut() {
            *v *= 2.0;
        }
    }
    model.head.bgen = rng.gen_range(-1.0..1.0);

    let mut graphs = Vec::new();
    for _ in 0..2 {
        let (tree, words) = random_tree(&mut rng, spec);
        let mut inputs = BTreeMap::new();
        for (w, seg) in &words {
            let l = seg.len();
            let l_p = rng.gen_range(1..=4);
            let sc = SubwordCharMatrix::from_spans(l, &seg.char_spans).unwrap();
            let cp = random_alignment(&mut rng, l, l_p);
            let phones = (0..l_p).map(|_| rng.gen_range(1..n_phones)).collect();
            inputs.insert(w.clone(), WordPhonemes::new(&sc, &cp, phones).unwrap());
        }
        graphs.push(TreeGraph::for_model(tree, &model, Some(&inputs)).expect("inputs cover tree"));
    }

    let mut batch = Vec::new();
    for _ in 0..spec.examples {
        let gi = rng.gen_range(0..graphs.len());
        let tree = &graphs[gi].tree;
        let words = tree.words();
        let w = &words[rng.gen_range(0..words.len())];
        let cut = rng.gen_range(0..w.segmentation.len());
        let prefix = &w.segmentation.piece_ids[..cut];
        let active = tree.active_set(prefix);
        let target = match rng.gen_range(0..4) {
            0 => 0,
            1 => rng.gen_range(1..=spec.vocab),
            _ => w.segmentation.piece_ids[cut],
        };
        batch.push(HeadExample {
            graph: gi,
            active,
            h_enc: random_vec(&mut rng, dims.d_enc, 1.0),
            h_ctc: rng.gen_bool(0.7).then(|| {
                let mut e = Array1::zeros(n_phones);
                e[rng.gen_range(1..n_phones)] = 1.0;
                e
            }),
            h_joint: random_vec(&mut rng, dims.d_joint, 1.0),
            y_prev: if cut == 0 { 0 } else { prefix[cut - 1] },
            target,
            p_rnnt_target: rng.gen_range(0.05..0.9),
        });
    }
    Instance {
        model,
        graphs,
        batch,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error among entries above the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub failures: usize,
    /// Tensor holding the worst entry.
    pub worst: Option<&'static str>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares analytic gradients against central differences, entry by entry.
pub fn check_gradients(inst: &Instance, step: f64) -> Result<GradCheckReport, HeadError> {
    let (_, grad) = head_gradients(&inst.model, &inst.graphs, &inst.batch)?;
    let analytic = grad.flat();
    let names: Vec<&'static str> = inst
        .model
        .learnable()
        .iter()
        .flat_map(|(n, t)| std::iter::repeat_n(*n, t.len()))
        .collect();
    let base = inst.model.flat();
    let mut probe = inst.model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        failures: 0,
        worst: None,
    };
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + step;
        probe.set_flat(&values);
        let plus = head_loss(&probe, &inst.graphs, &inst.batch)?;
        values[i] = base[i] - step;
        probe.set_flat(&values);
        let minus = head_loss(&probe, &inst.graphs, &inst.batch)?;
        values[i] = base[i];
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if abs <= ABS_TOL {
            continue;
        }
        let rel = abs / a.abs().max(numeric.abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(names[i]);
        }
        if rel > REL_TOL {
            report.failures += 1;
        }
    }
    Ok(report)
}
