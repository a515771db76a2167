//! A seeded synthetic language (letters, phonemes, syllable pieces, common
//! and rare words), scenario files over it, and the end-to-end demo.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{decode, Biasing, DecodeConfig};
use super::synth::{synthesize_utterance, ConfusionMap, MockUtterance, RefWord, SynthConfig};
use super::train::{gate_values, teacher_forced_examples, toy_train, ToyTrainConfig};
use super::SimError;
use crate::align::{compose, AlignmentMatrix, EmConfig, MultigramModel, SubwordCharMatrix};
use crate::encoder::{tree_word_phonemes, TreeGraph};
use crate::lexicon::{Lexicon, LexiconEntry, PhonemeId, PhonemeInventory};
use crate::metrics::{build_biasing_list, CommonWords, ScoreTotals};
use crate::params::{one_hot_table, Dims, ModelConfig, TcpgenModel};
use crate::tcpgen::HeadExample;
use crate::tokenizer::{PieceId, Segmentation, SubwordVocab};
use crate::trie::PrefixTree;

const CONSONANTS: [(char, &str); 12] = [
    ('B', "b"),
    ('D', "d"),
    ('G', "g"),
    ('K', "k"),
    ('L', "l"),
    ('M', "m"),
    ('N', "n"),
    ('P', "p"),
    ('R', "r"),
    ('S', "s"),
    ('T', "t"),
    ('V', "v"),
];
const VOWELS: [(char, &str); 5] = [
    ('A', "aa"),
    ('E', "eh"),
    ('I', "iy"),
    ('O', "ow"),
    ('U', "uw"),
];

/// One utterance of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub words: Vec<String>,
    pub pieces: Vec<PieceId>,
    /// Half-open piece ranges, one per word.
    pub word_spans: Vec<[usize; 2]>,
    pub noise: f64,
    pub seed: u64,
    /// Name of the biasing list used for this utterance.
    pub list: String,
}

/// Synthesis settings shared by all scenarios of a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub background_noise: f64,
    pub acoustic_noise: f64,
    pub acoustic_seed: u64,
    #[serde(default)]
    pub confusion: Option<ConfusionMap>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            background_noise: 0.05,
            acoustic_noise: 0.3,
            acoustic_seed: 1,
            confusion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub synth: SynthSettings,
    pub scenarios: Vec<Scenario>,
    /// Biasing lists by name.
    #[serde(default)]
    pub lists: BTreeMap<String, Vec<String>>,
}

impl ScenarioFile {
    /// Accepts either the full object or a bare list of scenarios.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SimError::Format(e.to_string()))?;
        if value.is_array() {
            let scenarios =
                serde_json::from_value(value).map_err(|e| SimError::Format(e.to_string()))?;
            return Ok(Self {
                synth: SynthSettings::default(),
                scenarios,
                lists: BTreeMap::new(),
            });
        }
        serde_json::from_value(value).map_err(|e| SimError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files serialize")
    }
}

/// Phonemes owned by each piece: every phoneme goes to the piece holding the
/// largest share of it in `A_s→c · A_c→p` (first piece on ties).
pub fn piece_phonemes(
    entry: &LexiconEntry,
    seg: &Segmentation,
    cp: &AlignmentMatrix,
) -> Result<Vec<Vec<PhonemeId>>, SimError> {
    let sc = SubwordCharMatrix::from_segmentation(entry, seg)?;
    let sp = compose(&sc, cp)?;
    let mut out = vec![Vec::new(); seg.len()];
    for (j, col) in sp.columns().into_iter().enumerate() {
        let mut best = 0;
        for (i, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = i;
            }
        }
        out[best].push(entry.phonemes[j]);
    }
    Ok(out)
}

/// Everything needed to turn words into trees and scenarios into mock
/// utterances.
#[derive(Debug, Clone)]
pub struct Resources {
    pub inventory: PhonemeInventory,
    pub vocab: SubwordVocab,
    pub lexicon: Lexicon,
    /// Character→phoneme alignment per word.
    pub alignments: BTreeMap<String, AlignmentMatrix>,
}

impl Resources {
    /// Prefix tree over `words`, tokenized with the vocabulary.
    pub fn tree<S: AsRef<str>>(&self, name: &str, words: &[S]) -> Result<PrefixTree, SimError> {
        let segs = words
            .iter()
            .map(|w| Ok((w.as_ref().to_string(), self.vocab.tokenize(w.as_ref())?)))
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(PrefixTree::build(
            name,
            segs.iter().map(|(w, s)| (w.as_str(), s)),
        ))
    }

    pub fn graph(&self, tree: PrefixTree, model: &TcpgenModel) -> Result<TreeGraph, SimError> {
        let inputs = if model.config.encoding.uses_phoneme() {
            Some(tree_word_phonemes(
                &tree,
                |w| self.lexicon.get(w),
                &self.alignments,
            )?)
        } else {
            None
        };
        Ok(TreeGraph::for_model(tree, model, inputs.as_ref())?)
    }

    pub fn ref_words(&self, sc: &Scenario) -> Result<Vec<RefWord>, SimError> {
        if sc.word_spans.len() != sc.words.len() {
            return Err(SimError::Format(format!(
                "{}: one span per word required",
                sc.id
            )));
        }
        let mut out = Vec::with_capacity(sc.words.len());
        for (word, &[s, e]) in sc.words.iter().zip(&sc.word_spans) {
            let ids = sc
                .pieces
                .get(s..e)
                .ok_or_else(|| SimError::Format(format!("{}: bad span {s}..{e}", sc.id)))?;
            let names = ids
                .iter()
                .map(|&i| {
                    self.vocab
                        .piece(i)
                        .ok_or_else(|| SimError::Format(format!("unknown piece id {i}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let seg = self.vocab.segmentation_from_pieces(word, &names)?;
            let entry = self
                .lexicon
                .get(word)
                .ok_or_else(|| SimError::Format(format!("{word:?} not in lexicon")))?;
            let cp = self
                .alignments
                .get(word)
                .ok_or_else(|| SimError::Format(format!("no alignment for {word:?}")))?;
            out.push(RefWord {
                word: word.clone(),
                pieces: ids.to_vec(),
                piece_phonemes: piece_phonemes(entry, &seg, cp)?,
            });
        }
        Ok(out)
    }

    pub fn synth_config(&self, settings: &SynthSettings, noise: f64, d_enc: usize) -> SynthConfig {
        SynthConfig {
            vocab: self.vocab.len(),
            phonemes: self.inventory.len(),
            d_enc,
            noise,
            background_noise: settings.background_noise,
            acoustic_noise: settings.acoustic_noise,
            acoustic_seed: settings.acoustic_seed,
            confusion: settings.confusion.clone(),
        }
    }

    pub fn utterance(
        &self,
        sc: &Scenario,
        settings: &SynthSettings,
        d_enc: usize,
    ) -> Result<MockUtterance, SimError> {
        let words = self.ref_words(sc)?;
        synthesize_utterance(
            &words,
            &self.synth_config(settings, sc.noise, d_enc),
            sc.seed,
        )
    }
}

/// Hard EM alignments for every lexicon word.
pub fn em_alignments(
    lexicon: &Lexicon,
    cfg: &EmConfig,
) -> Result<(MultigramModel, BTreeMap<String, AlignmentMatrix>), SimError> {
    let (model, _) = MultigramModel::train(lexicon, cfg)?;
    let mut out = BTreeMap::new();
    for e in lexicon.entries() {
        out.insert(e.word.clone(), model.viterbi_align(e)?);
    }
    Ok((model, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub syllables: usize,
    pub common_words: usize,
    pub rare_train: usize,
    pub rare_test: usize,
    pub distractor_pool: usize,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub common_per_utterance: (usize, usize),
    pub rare_per_utterance: (usize, usize),
    pub distractors: usize,
    pub noise: f64,
    pub background_noise: f64,
    pub acoustic_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            syllables: 30,
            common_words: 40,
            rare_train: 60,
            rare_test: 60,
            distractor_pool: 200,
            train_utterances: 60,
            test_utterances: 20,
            common_per_utterance: (4, 7),
            rare_per_utterance: (1, 3),
            distractors: 20,
            noise: 0.6,
            background_noise: 0.05,
            acoustic_noise: 0.3,
        }
    }
}

/// The generated language plus train and test scenario sets.
#[derive(Debug, Clone)]
pub struct DemoWorld {
    pub resources: Resources,
    pub em: MultigramModel,
    /// Common words in rank order.
    pub common: Vec<String>,
    pub rare_train: Vec<String>,
    pub rare_test: Vec<String>,
    pub distractor_pool: Vec<String>,
    pub train: ScenarioFile,
    pub test: ScenarioFile,
}

fn pronounce(word: &str, inv: &PhonemeInventory) -> Vec<PhonemeId> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    for (i, c) in chars.iter().enumerate() {
        // Word-final E after a consonant is silent.
        if *c == 'E' && i + 1 == chars.len() && i > 0 {
            continue;
        }
        let sym = CONSONANTS
            .iter()
            .chain(VOWELS.iter())
            .find(|(l, _)| l == c)
            .map(|(_, p)| *p)
            .expect("world letters only");
        out.push(inv.id(sym).unwrap());
    }
    out
}

impl DemoWorld {
    pub fn generate(cfg: &WorldConfig) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let inventory =
            PhonemeInventory::new(CONSONANTS.iter().chain(VOWELS.iter()).map(|(_, p)| *p))?;

        let mut all_syll: Vec<String> = CONSONANTS
            .iter()
            .flat_map(|(c, _)| VOWELS.iter().map(move |(v, _)| format!("{c}{v}")))
            .collect();
        all_syll.shuffle(&mut rng);
        all_syll.truncate(cfg.syllables.clamp(2, 60));
        all_syll.sort();
        let syllables = all_syll;

        let letter =
            |rng: &mut ChaCha8Rng, set: &[(char, &str)]| set[rng.gen_range(0..set.len())].0;
        let mut common = Vec::new();
        let mut seen = BTreeSet::new();
        while common.len() < cfg.common_words.min(12 * 5 * 12) {
            let w: String = [
                letter(&mut rng, &CONSONANTS),
                letter(&mut rng, &VOWELS),
                letter(&mut rng, &CONSONANTS),
            ]
            .iter()
            .collect();
            if seen.insert(w.clone()) {
                common.push(w);
            }
        }
        let n_rare = cfg.rare_train + cfg.rare_test + cfg.distractor_pool;
        let mut rare = Vec::new();
        let mut guard = 0;
        while rare.len() < n_rare && guard < 100 * n_rare {
            guard += 1;
            let n = rng.gen_range(2..=3);
            let w: String = (0..n)
                .map(|_| syllables[rng.gen_range(0..syllables.len())].as_str())
                .collect();
            if seen.insert(w.clone()) {
                rare.push(w);
            }
        }
        if rare.len() < n_rare {
            return Err(SimError::BadConfig(
                "too few syllables for the requested rare words".into(),
            ));
        }
        let distractor_pool = rare.split_off(cfg.rare_train + cfg.rare_test);
        let rare_test = rare.split_off(cfg.rare_train);
        let rare_train = rare;

        let mut pieces: Vec<String> = Vec::new();
        for (c, _) in CONSONANTS.iter().chain(VOWELS.iter()) {
            pieces.push(c.to_string());
            pieces.push(format!("{c}_"));
        }
        for s in &syllables {
            pieces.push(s.clone());
            pieces.push(format!("{s}_"));
        }
        for w in &common {
            pieces.push(format!("{w}_"));
        }
        let vocab = SubwordVocab::from_pieces(&pieces)?;

        let mut lexicon = Lexicon::default();
        for w in common
            .iter()
            .chain(&rare_train)
            .chain(&rare_test)
            .chain(&distractor_pool)
        {
            lexicon.insert(LexiconEntry::new(w, pronounce(w, &inventory), &inventory)?);
        }
        let (em, alignments) = em_alignments(&lexicon, &EmConfig::default())?;

        // Each syllable piece is confused with another syllable sharing its
        // vowel and word-final form.
        let mut confusion = ConfusionMap::new();
        for s in &syllables {
            let vowel = s.chars().nth(1).unwrap();
            let mates: Vec<&String> = syllables
                .iter()
                .filter(|o| *o != s && o.ends_with(vowel))
                .collect();
            let pool: Vec<&String> = if mates.is_empty() {
                syllables.iter().filter(|o| *o != s).collect()
            } else {
                mates
            };
            let other = pool[rng.gen_range(0..pool.len())];
            for suffix in ["", "_"] {
                let from = vocab.id(&format!("{s}{suffix}")).unwrap();
                let to = vocab.id(&format!("{other}{suffix}")).unwrap();
                confusion.insert(from, vec![to]);
            }
        }
        let settings = SynthSettings {
            background_noise: cfg.background_noise,
            acoustic_noise: cfg.acoustic_noise,
            acoustic_seed: rng.gen(),
            confusion: Some(confusion),
        };

        let resources = Resources {
            inventory,
            vocab,
            lexicon,
            alignments,
        };
        let common_set = CommonWords::top_k(&common, common.len());
        let mut make =
            |prefix: &str, n: usize, rare_words: &[String]| -> Result<ScenarioFile, SimError> {
                let mut scenarios = Vec::new();
                let mut lists = BTreeMap::new();
                for u in 0..n {
                    let n_common =
                        rng.gen_range(cfg.common_per_utterance.0..=cfg.common_per_utterance.1);
                    let n_rare = rng.gen_range(cfg.rare_per_utterance.0..=cfg.rare_per_utterance.1);
                    let mut words: Vec<String> = (0..n_common)
                        .map(|_| common[rng.gen_range(0..common.len())].clone())
                        .collect();
                    for _ in 0..n_rare {
                        let at = rng.gen_range(0..=words.len());
                        words.insert(at, rare_words[rng.gen_range(0..rare_words.len())].clone());
                    }
                    let mut ids = Vec::new();
                    let mut spans = Vec::new();
                    for w in &words {
                        let seg = resources.vocab.tokenize(w)?;
                        spans.push([ids.len(), ids.len() + seg.len()]);
                        ids.extend(seg.piece_ids);
                    }
                    let id = format!("{prefix}{u:03}");
                    let sel = build_biasing_list(
                        &words,
                        &common_set,
                        &distractor_pool,
                        cfg.distractors,
                        rng.gen(),
                    );
                    lists.insert(id.clone(), sel.words.into_iter().collect());
                    scenarios.push(Scenario {
                        id: id.clone(),
                        words,
                        pieces: ids,
                        word_spans: spans,
                        noise: cfg.noise,
                        seed: rng.gen(),
                        list: id,
                    });
                }
                Ok(ScenarioFile {
                    synth: settings.clone(),
                    scenarios,
                    lists,
                })
            };
        let train = make("train", cfg.train_utterances, &rare_train)?;
        let test = make("test", cfg.test_utterances, &rare_test)?;
        Ok(Self {
            resources,
            em,
            common,
            rare_train,
            rare_test,
            distractor_pool,
            train,
            test,
        })
    }
}

/// A scenario turned into an utterance and its biasing graph.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub utterance: MockUtterance,
    pub biasing_words: BTreeSet<String>,
    pub graph: TreeGraph,
}

pub fn prepare(
    res: &Resources,
    file: &ScenarioFile,
    model: &TcpgenModel,
) -> Result<Vec<Prepared>, SimError> {
    file.scenarios
        .iter()
        .map(|sc| {
            let list = file
                .lists
                .get(&sc.list)
                .ok_or_else(|| SimError::Format(format!("unknown biasing list {:?}", sc.list)))?;
            let tree = res.tree(&sc.list, list)?;
            Ok(Prepared {
                scenario: sc.clone(),
                utterance: res.utterance(sc, &file.synth, model.dims().d_enc)?,
                biasing_words: list.iter().cloned().collect(),
                graph: res.graph(tree, model)?,
            })
        })
        .collect()
}

/// Teacher-forced examples of every prepared utterance; graph `i` is the
/// `i`-th utterance's tree.
pub fn training_set(
    res: &Resources,
    prepared: &[Prepared],
    model: &TcpgenModel,
    phoneme_query: bool,
) -> Result<(Vec<TreeGraph>, Vec<HeadExample>), SimError> {
    let graphs: Vec<TreeGraph> = prepared.iter().map(|p| p.graph.clone()).collect();
    let mut examples = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        examples.extend(teacher_forced_examples(
            &p.utterance,
            i,
            &p.graph,
            &res.vocab,
            model,
            phoneme_query,
        )?);
    }
    Ok((graphs, examples))
}

/// Decodes every utterance and scores it against its own biasing list.
pub fn evaluate(
    res: &Resources,
    prepared: &[Prepared],
    model: &TcpgenModel,
    cfg: &DecodeConfig,
) -> Result<(ScoreTotals, Vec<Vec<String>>), SimError> {
    let mut totals = ScoreTotals::default();
    let mut hyps = Vec::with_capacity(prepared.len());
    for p in prepared {
        let bias = Biasing::new(model, &p.graph)?;
        let h = decode(&p.utterance, &res.vocab, Some(&bias), cfg)?;
        let words = res.vocab.pieces_to_words(&h.pieces);
        totals.add_utterance(&p.scenario.words, &words, &p.biasing_words);
        hyps.push(words);
    }
    Ok((totals, hyps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub world: WorldConfig,
    /// Vocabulary size and phoneme width are filled in from the world.
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: ToyTrainConfig,
    pub decode: DecodeConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        let dims = Dims {
            vocab: 0,
            d: 16,
            d_p: 0,
            d_enc: 16,
            d_att: 16,
            d_joint: super::synth::JOINT_DIM,
            // Message passing mixes each first-level node with its children,
            // which are specific to the training words; at this data size
            // the keys generalize better without it.
            layers: 0,
        };
        Self {
            world: WorldConfig::default(),
            model: ModelConfig::new(dims),
            model_seed: 7,
            train: ToyTrainConfig {
                lr: 0.02,
                gate_warmup: 100,
                ..ToyTrainConfig::default()
            },
            decode: DecodeConfig {
                phoneme_query_enabled: true,
                ..DecodeConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub bias_off: ScoreTotals,
    pub bias_on: ScoreTotals,
    pub hyps_off: Vec<Vec<String>>,
    pub hyps_on: Vec<Vec<String>>,
    pub loss_trace: Vec<f64>,
    /// Mean gate on training steps whose target is a rare-word piece.
    pub mean_gate_rare: f64,
    /// Mean gate on training steps whose target is any other symbol.
    pub mean_gate_other: f64,
    pub model: TcpgenModel,
}

/// Model configuration with the world's vocabulary and phoneme sizes.
pub fn demo_model(world: &DemoWorld, cfg: &DemoConfig) -> Result<TcpgenModel, SimError> {
    let mut mc = cfg.model;
    mc.dims.vocab = world.resources.vocab.len();
    let table = one_hot_table(&world.resources.inventory);
    mc.dims.d_p = table.ncols();
    Ok(TcpgenModel::init(mc, table, cfg.model_seed)?)
}

/// World → EM alignments → trees → toy training → biased and unbiased
/// decoding of the test suite → scoring.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport, SimError> {
    let world = DemoWorld::generate(&cfg.world)?;
    let res = &world.resources;
    let init = demo_model(&world, cfg)?;
    let train_prep = prepare(res, &world.train, &init)?;
    let (graphs, examples) =
        training_set(res, &train_prep, &init, cfg.decode.phoneme_query_enabled)?;
    let outcome = toy_train(&init, &graphs, &examples, &cfg.train)?;
    let model = outcome.model;

    let rare_pieces: BTreeSet<PieceId> = world
        .rare_train
        .iter()
        .flat_map(|w| {
            res.vocab
                .tokenize(w)
                .map(|s| s.piece_ids)
                .unwrap_or_default()
        })
        .collect();
    let gates = gate_values(&model, &graphs, &examples)?;
    let mean = |sel: &dyn Fn(PieceId) -> bool| {
        let v: Vec<f64> = gates.iter().filter(|(t, _)| sel(*t)).map(|g| g.1).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let mean_gate_rare = mean(&|t| rare_pieces.contains(&t));
    let mean_gate_other = mean(&|t| !rare_pieces.contains(&t));

    let test_prep = prepare(res, &world.test, &model)?;
    let off_cfg = DecodeConfig {
        biasing_enabled: false,
        ..cfg.decode
    };
    let (bias_off, hyps_off) = evaluate(res, &test_prep, &model, &off_cfg)?;
    let (bias_on, hyps_on) = evaluate(res, &test_prep, &model, &cfg.decode)?;
    Ok(DemoReport {
        bias_off,
        bias_on,
        hyps_off,
        hyps_on,
        loss_trace: outcome.loss_trace,
        mean_gate_rare,
        mean_gate_other,
        model,
    })
}
