use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde_json::json;

use tcpgen_core::align::{AlignmentRecord, EmConfig, MultigramModel};
use tcpgen_core::encoder::{tree_word_phonemes, TreeGraph};
use tcpgen_core::gradcheck::{check_gradients, random_instance, InstanceSpec, FD_STEP};
use tcpgen_core::lexicon::{Lexicon, PhonemeInventory};
use tcpgen_core::metrics::ScoreTotals;
use tcpgen_core::params::{
    one_hot_table, parse_phoneme_vectors, Dims, EncodingMode, ModelConfig, PhonemeEmbedMode,
    TcpgenModel,
};
use tcpgen_core::sim::decode::{decode, Biasing, DecodeConfig};
use tcpgen_core::sim::synth::JOINT_DIM;
use tcpgen_core::sim::world::{em_alignments, prepare, training_set, Resources};
use tcpgen_core::sim::{
    run_demo, toy_train, DemoConfig, DemoWorld, Optimizer, ScenarioFile, ToyTrainConfig,
};
use tcpgen_core::tokenizer::{Segmentation, SubwordVocab};
use tcpgen_core::trie::{PrefixTree, RootMode};

use crate::config::{read_text, usage, RunConfig};
use crate::manifest::Run;
use crate::{
    AlignArgs, AlignTrainArgs, BuildTrieArgs, DemoArgs, EncodeArgs, GradcheckArgs, ModelArgs,
    Pipeline, ScoreArgs, SimulateArgs, TokenizeArgs, TrainArgs,
};

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

fn load_inventory(
    cfg: &RunConfig,
    flag: Option<PathBuf>,
    run: &mut Run,
) -> Result<PhonemeInventory> {
    let path = cfg.input(flag, "phonemes")?;
    run.input("phonemes", &path);
    Ok(PhonemeInventory::load(&path)?)
}

fn load_lexicon(
    cfg: &RunConfig,
    flag: Option<PathBuf>,
    inv: &PhonemeInventory,
    run: &mut Run,
) -> Result<Lexicon> {
    let path = cfg.input(flag, "lexicon")?;
    run.input("lexicon", &path);
    Ok(Lexicon::load(&path, inv)?)
}

fn load_vocab(cfg: &RunConfig, flag: Option<PathBuf>, run: &mut Run) -> Result<SubwordVocab> {
    let path = cfg.input(flag, "vocab")?;
    run.input("vocab", &path);
    Ok(SubwordVocab::load(&path)?)
}

fn em_config(cfg: &RunConfig, a: &AlignTrainArgs) -> Result<EmConfig> {
    let d = EmConfig::default();
    Ok(EmConfig {
        max_g: cfg.value(a.max_g, "max_g", d.max_g)?,
        max_p: cfg.value(a.max_p, "max_p", d.max_p)?,
        allow_deletions: cfg.switch(a.deletions, "deletions", d.allow_deletions)?,
        many_to_many: cfg.switch(a.many_to_many, "many_to_many", d.many_to_many)?,
        max_iters: cfg.value(a.iters, "iters", d.max_iters)?,
        tol: cfg.value(a.tol, "tol", d.tol)?,
    })
}

pub fn align_train(cfg: &RunConfig, a: AlignTrainArgs) -> Result<()> {
    let mut run = Run::new("align-train");
    let em = em_config(cfg, &a)?;
    if em.max_g == 0 || em.max_p == 0 {
        return Err(usage("--max-g and --max-p must be at least 1"));
    }
    let inv = load_inventory(cfg, a.res.phonemes, &mut run)?;
    let lexicon = load_lexicon(cfg, a.res.lexicon, &inv, &mut run)?;
    let (model, report) = MultigramModel::train(&lexicon, &em)?;
    model.save(&a.out, &inv)?;
    run.set("em", em);
    run.set("iterations", report.iterations);
    run.set("converged", report.converged);
    run.set("log_likelihoods", &report.log_likelihoods);
    run.write(&a.out, &[&a.out])?;
    println!(
        "{} entries, {} iterations ({}), log-likelihood {:.4}, {} chunk pairs",
        lexicon.len(),
        report.iterations,
        if report.converged {
            "converged"
        } else {
            "iteration limit"
        },
        report.log_likelihoods.last().copied().unwrap_or(f64::NAN),
        model.len()
    );
    Ok(())
}

pub fn align(cfg: &RunConfig, a: AlignArgs) -> Result<()> {
    let mut run = Run::new("align");
    let inv = load_inventory(cfg, a.res.phonemes, &mut run)?;
    let model_path = cfg.input(a.model, "em_model")?;
    let lexicon = load_lexicon(cfg, a.res.lexicon, &inv, &mut run)?;
    run.input("model", &model_path);
    let model = MultigramModel::load(&model_path, &inv)?;
    let mut records = Vec::with_capacity(lexicon.len());
    for e in lexicon.entries() {
        let m = model
            .viterbi_align(e)
            .with_context(|| format!("aligning {:?}", e.word))?;
        records.push(AlignmentRecord::from_matrix(&e.word, &m));
    }
    write(&a.out, &serde_json::to_string_pretty(&records)?)?;
    run.write(&a.out, &[&a.out])?;
    println!("aligned {} words", records.len());
    Ok(())
}

/// Pre-segmented words override longest match.
fn segmenter(
    cfg: &RunConfig,
    flag: Option<PathBuf>,
    vocab: &SubwordVocab,
    run: &mut Run,
) -> Result<BTreeMap<String, Segmentation>> {
    match cfg.opt_input(flag, "pretokenized")? {
        Some(p) => {
            run.input("pretokenized", &p);
            Ok(vocab
                .parse_presegmented(&read_text(&p)?)?
                .into_iter()
                .collect())
        }
        None => Ok(BTreeMap::new()),
    }
}

fn segment(
    vocab: &SubwordVocab,
    fixed: &BTreeMap<String, Segmentation>,
    word: &str,
) -> Result<Segmentation> {
    match fixed.get(word) {
        Some(s) => Ok(s.clone()),
        None => vocab
            .tokenize(word)
            .with_context(|| format!("tokenizing {word:?}")),
    }
}

pub fn tokenize(cfg: &RunConfig, a: TokenizeArgs) -> Result<()> {
    let mut run = Run::new("tokenize");
    let vocab = load_vocab(cfg, a.vocab, &mut run)?;
    if !a.words.is_file() {
        return Err(usage(format!("words: no such file {}", a.words.display())));
    }
    run.input("words", &a.words);
    let fixed = segmenter(cfg, a.pretokenized, &vocab, &mut run)?;
    let mut out = String::new();
    for w in lines(&read_text(&a.words)?) {
        let seg = segment(&vocab, &fixed, w)?;
        let pieces: Vec<&str> = seg
            .piece_ids
            .iter()
            .filter_map(|&p| vocab.piece(p))
            .collect();
        writeln!(out, "{w}\t{}", pieces.join(" "))?;
    }
    match &a.out {
        Some(path) => {
            write(path, &out)?;
            run.write(path, &[path])?;
        }
        None => print!("{out}"),
    }
    Ok(())
}

pub fn build_trie(cfg: &RunConfig, a: BuildTrieArgs) -> Result<()> {
    let mut run = Run::new("build-trie");
    let vocab = load_vocab(cfg, a.vocab, &mut run)?;
    let list = cfg.input(a.list, "list")?;
    run.input("list", &list);
    let fixed = segmenter(cfg, a.pretokenized, &vocab, &mut run)?;
    let words = read_text(&list)?;
    let segs = lines(&words)
        .map(|w| Ok((w.to_string(), segment(&vocab, &fixed, w)?)))
        .collect::<Result<Vec<_>>>()?;
    let name = list
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tree = PrefixTree::build(name, segs.iter().map(|(w, s)| (w.as_str(), s)));
    tree.save(&a.out, Some(&vocab))?;
    run.write(&a.out, &[&a.out])?;
    println!("{} words, {} nodes", tree.words().len(), tree.len());
    Ok(())
}

/// Inventory, lexicon, vocabulary and alignments.
fn resources(cfg: &RunConfig, p: Pipeline, run: &mut Run) -> Result<Resources> {
    let mode = cfg.value(p.alignment, "alignment", "em".to_string())?;
    if mode != "em" && mode != "soft" {
        return Err(usage(format!(
            "alignment: expected em or soft, got {mode:?}"
        )));
    }
    let aligned = cfg.opt_input(p.alignments, "alignments")?;
    if mode == "soft" && aligned.is_none() {
        return Err(usage("soft alignment needs --alignments"));
    }
    let inventory = load_inventory(cfg, p.res.phonemes, run)?;
    let lexicon = load_lexicon(cfg, p.res.lexicon, &inventory, run)?;
    let vocab = load_vocab(cfg, p.vocab, run)?;
    run.set("alignment", &mode);
    let alignments = match aligned {
        Some(path) => {
            run.input("alignments", &path);
            let records = tcpgen_core::align::load_alignment_set(&path)?;
            let mut out = BTreeMap::new();
            for (word, rec) in records {
                let entry = lexicon.get(&word).with_context(|| {
                    format!("alignment for {word:?}, which is not in the lexicon")
                })?;
                out.insert(word, rec.into_matrix(entry)?);
            }
            out
        }
        None => em_alignments(&lexicon, &EmConfig::default())?.1,
    };
    Ok(Resources {
        inventory,
        vocab,
        lexicon,
        alignments,
    })
}

fn load_params(cfg: &RunConfig, flag: Option<PathBuf>, run: &mut Run) -> Result<TcpgenModel> {
    let path = cfg.input(flag, "params")?;
    run.input("params", &path);
    Ok(TcpgenModel::load(&path)?.0)
}

pub fn encode(cfg: &RunConfig, a: EncodeArgs) -> Result<()> {
    let mut run = Run::new("encode");
    let tree_path = cfg.input(a.tree, "tree")?;
    let params = cfg.input(a.params, "params")?;
    let mode = a.mode;
    let res = resources(cfg, a.pipe, &mut run)?;
    let model = load_params(cfg, Some(params), &mut run)?;
    if let Some(m) = mode {
        let mc = &model.config;
        let matches = match (m.parse::<EncodingMode>(), m.parse::<PhonemeEmbedMode>()) {
            (Ok(e), _) => e == mc.encoding,
            (_, Ok(p)) => p == mc.phoneme_embed && mc.encoding.uses_phoneme(),
            _ => return Err(usage(format!("unknown mode {m:?}"))),
        };
        if !matches {
            return Err(usage(format!(
                "--mode {m} does not match the parameters ({:?}, {:?})",
                mc.encoding, mc.phoneme_embed
            )));
        }
    }
    run.input("tree", &tree_path);
    let tree = PrefixTree::load(&tree_path)?;
    let inputs = if model.config.encoding.uses_phoneme() {
        Some(tree_word_phonemes(
            &tree,
            |w| res.lexicon.get(w),
            &res.alignments,
        )?)
    } else {
        None
    };
    let graph = TreeGraph::for_model(tree, &model, inputs.as_ref())?;
    let enc = graph.encode(&model)?;
    let h = enc.output();
    let bytes: Vec<u8> = h.iter().flat_map(|v| v.to_le_bytes()).collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&a.out, bytes).with_context(|| format!("writing {}", a.out.display()))?;
    run.set("rows", h.nrows());
    run.set("cols", h.ncols());
    run.set("layout", "row-major little-endian f64, row 0 is the root");
    run.write(&a.out, &[&a.out])?;
    println!("{} x {} node encodings", h.nrows(), h.ncols());
    Ok(())
}

fn root_mode(s: &str) -> Result<RootMode> {
    match s {
        "connected" => Ok(RootMode::Connected),
        "detached" => Ok(RootMode::Detached),
        _ => Err(usage(format!(
            "root: expected connected or detached, got {s:?}"
        ))),
    }
}

/// Model configuration from flags and config, on top of the demo defaults.
fn model_config(cfg: &RunConfig, m: &ModelArgs) -> Result<ModelConfig> {
    let base = DemoConfig::default().model;
    let d = base.dims;
    let mut mc = base;
    mc.dims = Dims {
        d: cfg.value(m.d, "d", d.d)?,
        d_enc: cfg.value(m.d_enc, "d_enc", d.d_enc)?,
        d_att: cfg.value(m.d_att, "d_att", d.d_att)?,
        layers: cfg.value(m.layers, "layers", d.layers)?,
        d_joint: JOINT_DIM,
        ..d
    };
    mc.encoding = cfg.mode(m.mode.clone(), "encoding", "both")?;
    mc.phoneme_embed = cfg.mode(m.pemb.clone(), "pemb", "oh+")?;
    mc.root_mode = root_mode(&cfg.value(m.root.clone(), "root", "connected".to_string())?)?;
    if mc.dims.d == 0 || mc.dims.d_enc == 0 || mc.dims.d_att == 0 {
        return Err(usage("dimensions must be positive"));
    }
    Ok(mc)
}

fn phoneme_table(
    cfg: &RunConfig,
    m: &ModelArgs,
    mc: &ModelConfig,
    inv: &PhonemeInventory,
    run: &mut Run,
) -> Result<Array2<f64>> {
    if mc.phoneme_embed == PhonemeEmbedMode::External {
        let path = cfg.input(m.phoneme_vectors.clone(), "phoneme_vectors")?;
        run.input("phoneme_vectors", &path);
        Ok(parse_phoneme_vectors(&read_text(&path)?, inv)?)
    } else {
        Ok(one_hot_table(inv))
    }
}

fn train_config(
    cfg: &RunConfig,
    steps: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    optimizer: Option<String>,
    gate_warmup: Option<usize>,
) -> Result<ToyTrainConfig> {
    let d = DemoConfig::default().train;
    let tc = ToyTrainConfig {
        lr: cfg.value(lr, "lr", d.lr)?,
        steps: cfg.value(steps, "steps", d.steps)?,
        seed: cfg.value(seed, "seed", d.seed)?,
        batch_size: None,
        optimizer: cfg.mode::<Optimizer>(optimizer, "optimizer", "adam")?,
        gate_warmup: cfg.value(gate_warmup, "gate_warmup", d.gate_warmup)?,
    };
    if !(tc.lr >= 0.0 && tc.lr.is_finite()) {
        return Err(usage(format!("learning rate {} is invalid", tc.lr)));
    }
    Ok(tc)
}

fn load_scenarios(cfg: &RunConfig, flag: Option<PathBuf>, run: &mut Run) -> Result<ScenarioFile> {
    let path = cfg.input(flag, "scenarios")?;
    run.input("scenarios", &path);
    Ok(ScenarioFile::from_json(&read_text(&path)?)?)
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> Result<()> {
    let mut run = Run::new("train");
    let mut mc = model_config(cfg, &a.model)?;
    let mut tc = train_config(cfg, a.steps, a.lr, a.seed, a.optimizer, a.gate_warmup)?;
    tc.batch_size = cfg.opt(a.batch_size, "batch_size")?;
    let phoneme_query = cfg.switch(a.phoneme_query, "phoneme_query", true)?;
    let scenario_path = cfg.input(a.scenarios.clone(), "scenarios")?;
    let res = resources(cfg, a.pipe, &mut run)?;
    let file = load_scenarios(cfg, Some(scenario_path), &mut run)?;
    let table = phoneme_table(cfg, &a.model, &mc, &res.inventory, &mut run)?;
    mc.dims.vocab = res.vocab.len();
    mc.dims.d_p = table.ncols();
    mc.validate().map_err(|e| usage(e.to_string()))?;
    let init = TcpgenModel::init(mc, table, tc.seed)?;

    let prepared = prepare(&res, &file, &init)?;
    let (graphs, examples) = training_set(&res, &prepared, &init, phoneme_query)?;
    let outcome = toy_train(&init, &graphs, &examples, &tc)?;
    outcome.model.save(&a.out, Some(tc.seed))?;

    run.seed(tc.seed);
    run.set("model", mc);
    run.set("lr", tc.lr);
    run.set("steps", tc.steps);
    run.set("optimizer", tc.optimizer);
    run.set("gate_warmup", tc.gate_warmup);
    run.set("batch_size", tc.batch_size);
    run.set("phoneme_query", phoneme_query);
    run.set("examples", examples.len());
    run.set("loss_trace", &outcome.loss_trace);
    let params_manifest = tcpgen_core::params::manifest_path(&a.out);
    run.write(&a.out, &[&a.out, &params_manifest])?;
    let first = outcome.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} utterances, {} steps, {} examples: loss {first:.4} -> {last:.4}",
        prepared.len(),
        tc.steps,
        examples.len()
    );
    Ok(())
}

fn percent(rate: Option<f64>) -> String {
    rate.map_or_else(|| "n/a".to_string(), |r| format!("{:.2}%", 100.0 * r))
}

fn totals_json(t: &ScoreTotals) -> serde_json::Value {
    json!({
        "wer": t.wer(),
        "rwer": t.rwer(),
        "counts": t,
    })
}

pub fn simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<()> {
    let mut run = Run::new("simulate");
    let dc = DecodeConfig {
        beam: cfg.value(a.beam, "beam", DecodeConfig::default().beam)?,
        max_symbols_per_frame: cfg.value(
            a.max_symbols,
            "max_symbols",
            DecodeConfig::default().max_symbols_per_frame,
        )?,
        biasing_enabled: !a.no_bias,
        phoneme_query_enabled: cfg.switch(a.phoneme_query, "phoneme_query", false)?,
        force_pgen_zero: false,
    };
    dc.validate().map_err(|e| usage(e.to_string()))?;
    let scenario_path = cfg.input(a.scenarios.clone(), "scenarios")?;
    let params = cfg.input(a.params.clone(), "params")?;
    let tree_path = cfg.opt_input(a.tree.clone(), "tree")?;
    let res = resources(cfg, a.pipe, &mut run)?;
    let file = load_scenarios(cfg, Some(scenario_path), &mut run)?;
    let model = load_params(cfg, Some(params), &mut run)?;
    let fixed_tree = match &tree_path {
        Some(p) => {
            run.input("tree", p);
            Some(PrefixTree::load(p)?)
        }
        None => None,
    };

    let mut totals = ScoreTotals::default();
    let (mut hyp_text, mut ref_text) = (String::new(), String::new());
    for sc in &file.scenarios {
        let tree = match &fixed_tree {
            Some(t) => t.clone(),
            None => {
                let list = file
                    .lists
                    .get(&sc.list)
                    .with_context(|| format!("{}: unknown biasing list {:?}", sc.id, sc.list))?;
                res.tree(&sc.list, list)?
            }
        };
        let biasing: BTreeSet<String> = tree.words().iter().map(|w| w.word.clone()).collect();
        let utt = res.utterance(sc, &file.synth, model.dims().d_enc)?;
        let hyp = if dc.biasing_enabled {
            let graph = res.graph(tree, &model)?;
            let bias = Biasing::new(&model, &graph)?;
            decode(&utt, &res.vocab, Some(&bias), &dc)?
        } else {
            decode(&utt, &res.vocab, None, &dc)?
        };
        let words = res.vocab.pieces_to_words(&hyp.pieces);
        totals.add_utterance(&sc.words, &words, &biasing);
        writeln!(hyp_text, "{}", words.join(" "))?;
        writeln!(ref_text, "{}", sc.words.join(" "))?;
    }
    write(&a.hyp, &hyp_text)?;
    let mut outputs: Vec<&Path> = vec![&a.hyp];
    if let Some(r) = &a.reference {
        write(r, &ref_text)?;
        outputs.push(r);
    }
    run.set(
        "decode",
        json!({
            "beam": dc.beam,
            "max_symbols_per_frame": dc.max_symbols_per_frame,
            "biasing": dc.biasing_enabled,
            "phoneme_query": dc.phoneme_query_enabled,
        }),
    );
    run.set("scores", totals_json(&totals));
    run.write(&a.hyp, &outputs)?;
    println!(
        "{} utterances, bias {}: WER {}, R-WER {}",
        file.scenarios.len(),
        if dc.biasing_enabled { "on" } else { "off" },
        percent(totals.wer()),
        percent(totals.rwer())
    );
    Ok(())
}

pub fn score(cfg: &RunConfig, a: ScoreArgs) -> Result<()> {
    let mut run = Run::new("score");
    for (name, p) in [("ref", &a.reference), ("hyp", &a.hyp)] {
        if !p.is_file() {
            return Err(usage(format!("{name}: no such file {}", p.display())));
        }
    }
    let list = cfg.opt_input(a.list, "list")?;
    run.input("ref", &a.reference);
    run.input("hyp", &a.hyp);
    let biasing: BTreeSet<String> = match &list {
        Some(p) => {
            run.input("list", p);
            lines(&read_text(p)?).map(str::to_string).collect()
        }
        None => BTreeSet::new(),
    };
    let refs = read_text(&a.reference)?;
    let hyps = read_text(&a.hyp)?;
    let refs: Vec<&str> = refs.lines().collect();
    let hyps: Vec<&str> = hyps.lines().collect();
    if refs.len() != hyps.len() {
        bail!(
            "{} reference lines but {} hypothesis lines",
            refs.len(),
            hyps.len()
        );
    }
    let mut totals = ScoreTotals::default();
    for (r, h) in refs.iter().zip(&hyps) {
        let r: Vec<&str> = r.split_whitespace().collect();
        let h: Vec<&str> = h.split_whitespace().collect();
        totals.add_utterance(&r, &h, &biasing);
    }
    let c = totals.words;
    println!(
        "WER {} ({} sub, {} del, {} ins / {} words)",
        percent(totals.wer()),
        c.substitutions,
        c.deletions,
        c.insertions,
        totals.ref_words
    );
    let r = totals.rare;
    println!(
        "R-WER {} ({} sub, {} del, {} ins / {} biasing words)",
        percent(totals.rwer()),
        r.substitutions,
        r.deletions,
        r.insertions,
        r.ref_biased
    );
    if let Some(path) = &a.json {
        write(path, &serde_json::to_string_pretty(&totals_json(&totals))?)?;
        run.write(path, &[path])?;
    }
    Ok(())
}

pub fn head_gradcheck(cfg: &RunConfig, a: GradcheckArgs) -> Result<()> {
    let spec = InstanceSpec::parse(&a.dims).map_err(|e| usage(format!("--dims: {e}")))?;
    let seed = cfg.value(a.seed, "seed", 0)?;
    let (mut rel, mut abs, mut checked, mut failures) = (0.0f64, 0.0f64, 0, 0);
    let mut worst = None;
    for s in seed..seed + a.instances {
        let r = check_gradients(&random_instance(s, &spec), FD_STEP)?;
        if r.max_rel_error >= rel {
            worst = r.worst;
        }
        rel = rel.max(r.max_rel_error);
        abs = abs.max(r.max_abs_error);
        checked += r.checked;
        failures += r.failures;
    }
    println!("max relative gradient error: {rel:.3e}");
    println!("max absolute gradient error: {abs:.3e}");
    println!("entries checked: {checked}, above tolerance: {failures}");
    if let Some(w) = worst {
        println!("worst tensor: {w}");
    }
    if failures > 0 {
        bail!("{failures} gradient entries disagree with finite differences");
    }
    Ok(())
}

pub fn demo(cfg: &RunConfig, a: DemoArgs) -> Result<()> {
    let mut run = Run::new("demo");
    let mut dc = DemoConfig::default();
    let seed = cfg.value(a.seed, "seed", dc.world.seed)?;
    dc.world.seed = seed;
    dc.model_seed = seed;
    dc.model = model_config(cfg, &a.model)?;
    if dc.model.phoneme_embed == PhonemeEmbedMode::External {
        return Err(usage(
            "the demo uses one-hot phoneme embeddings (oh or oh+)",
        ));
    }
    dc.train = train_config(cfg, a.steps, a.lr, Some(seed), a.optimizer, a.gate_warmup)?;
    dc.decode.phoneme_query_enabled = cfg.switch(a.phoneme_query, "phoneme_query", true)?;
    dc.decode.beam = cfg.value(a.beam, "beam", dc.decode.beam)?;
    dc.decode.validate().map_err(|e| usage(e.to_string()))?;

    let report = run_demo(&dc)?;
    println!("bias  {:>8}  {:>8}", "WER", "R-WER");
    for (name, t) in [("off", &report.bias_off), ("on", &report.bias_on)] {
        println!(
            "{name:<4}  {:>8}  {:>8}",
            percent(t.wer()),
            percent(t.rwer())
        );
    }
    println!(
        "mean gate on rare-word steps {:.3}, elsewhere {:.3}",
        report.mean_gate_rare, report.mean_gate_other
    );

    run.seed(seed);
    run.set("model", dc.model);
    run.set("lr", dc.train.lr);
    run.set("steps", dc.train.steps);
    run.set("optimizer", dc.train.optimizer);
    run.set("gate_warmup", dc.train.gate_warmup);
    run.set("phoneme_query", dc.decode.phoneme_query_enabled);
    run.set("beam", dc.decode.beam);
    if let Some(path) = &a.json {
        let body = json!({
            "bias_off": totals_json(&report.bias_off),
            "bias_on": totals_json(&report.bias_on),
            "mean_gate_rare": report.mean_gate_rare,
            "mean_gate_other": report.mean_gate_other,
            "loss_trace": report.loss_trace,
            "hyps_off": report.hyps_off,
            "hyps_on": report.hyps_on,
        });
        write(path, &serde_json::to_string_pretty(&body)?)?;
        run.write(path, &[path])?;
    }
    if let Some(dir) = &a.export {
        export_world(&dc, dir, &run)?;
    }
    Ok(())
}

/// Files for running the stages one by one on the demo world.
fn export_world(dc: &DemoConfig, dir: &Path, run: &Run) -> Result<()> {
    let world = DemoWorld::generate(&dc.world)?;
    let res = &world.resources;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &text)?;
        files.push(p);
        Ok(())
    };
    put("phonemes.txt", res.inventory.to_text())?;
    put("lexicon.tsv", res.lexicon.to_tsv(&res.inventory))?;
    put("vocab.txt", res.vocab.to_text())?;
    let records: Vec<AlignmentRecord> = res
        .alignments
        .iter()
        .map(|(w, m)| AlignmentRecord::from_matrix(w, m))
        .collect();
    put("aligned.json", serde_json::to_string_pretty(&records)?)?;
    put(
        "em.json",
        serde_json::to_string_pretty(&world.em.to_json(&res.inventory))?,
    )?;
    put("train.json", world.train.to_json())?;
    put("test.json", world.test.to_json())?;
    for (name, words) in &world.test.lists {
        put(
            &format!("lists/{name}.txt"),
            words.iter().map(|w| format!("{w}\n")).collect(),
        )?;
    }
    let config = json!({
        "phonemes": "phonemes.txt",
        "lexicon": "lexicon.tsv",
        "vocab": "vocab.txt",
        "alignments": "aligned.json",
        "em_model": "em.json",
        "alignment": "em",
        "encoding": format!("{:?}", dc.model.encoding).to_lowercase(),
        "d": dc.model.dims.d,
        "d_enc": dc.model.dims.d_enc,
        "d_att": dc.model.dims.d_att,
        "layers": dc.model.dims.layers,
        "seed": dc.world.seed,
        "steps": dc.train.steps,
        "lr": dc.train.lr,
        "gate_warmup": dc.train.gate_warmup,
        "phoneme_query": if dc.decode.phoneme_query_enabled { "on" } else { "off" },
        "beam": dc.decode.beam,
    });
    put("config.json", serde_json::to_string_pretty(&config)?)?;
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    run.write(&dir.join("config.json"), &refs)?;
    println!("world written to {}", dir.display());
    Ok(())
}
