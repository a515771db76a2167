mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_switch, RunConfig, Usage};

#[derive(Parser, Debug)]
#[command(
    name = "tcpgen",
    version,
    about = "Contextual biasing pipeline: alignment, tries, node encodings, toy training, simulated decoding and scoring"
)]
struct Cli {
    /// Flat JSON config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the joint-multigram aligner on a lexicon.
    AlignTrain(AlignTrainArgs),
    /// Viterbi character-to-phoneme alignments for every lexicon word.
    Align(AlignArgs),
    /// Segment words into subword pieces.
    Tokenize(TokenizeArgs),
    /// Build the prefix tree of a biasing list.
    BuildTrie(BuildTrieArgs),
    /// Compute GCN node encodings of a tree.
    Encode(EncodeArgs),
    /// Toy-train the biasing head on simulated utterances.
    Train(TrainArgs),
    /// Decode simulated utterances with or without biasing.
    Simulate(SimulateArgs),
    /// WER and R-WER of hypotheses against references.
    Score(ScoreArgs),
    /// Compare head gradients with finite differences.
    HeadGradcheck(GradcheckArgs),
    /// Seeded end-to-end run with a bias on/off comparison.
    Demo(DemoArgs),
}

#[derive(Args, Debug, Default)]
pub struct Resources {
    /// Phoneme inventory, one symbol per line.
    #[arg(long)]
    pub phonemes: Option<PathBuf>,
    /// Lexicon TSV: word, tab, space-separated phonemes.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignTrainArgs {
    #[command(flatten)]
    pub res: Resources,
    #[arg(long)]
    pub max_g: Option<usize>,
    #[arg(long)]
    pub max_p: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Allow chunks with several symbols on both sides.
    #[arg(long, value_parser = parse_switch, num_args = 0..=1, default_missing_value = "on")]
    pub many_to_many: Option<bool>,
    /// Allow letters that produce no phoneme.
    #[arg(long, value_parser = parse_switch, num_args = 0..=1, default_missing_value = "on")]
    pub deletions: Option<bool>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[command(flatten)]
    pub res: Resources,
    /// Aligner model from align-train.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Words to segment, one per line.
    #[arg(long)]
    pub words: PathBuf,
    /// Fixed segmentations (word, tab, pieces) used before longest match.
    #[arg(long)]
    pub pretokenized: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildTrieArgs {
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Biasing list, one word per line.
    #[arg(long)]
    pub list: Option<PathBuf>,
    #[arg(long)]
    pub pretokenized: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct Pipeline {
    #[command(flatten)]
    pub res: Resources,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Alignment records (JSON array). Without it, EM alignments are
    /// trained on the lexicon.
    #[arg(long)]
    pub alignments: Option<PathBuf>,
    /// Where alignments come from: em or soft (soft needs --alignments).
    #[arg(long)]
    pub alignment: Option<String>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub pipe: Pipeline,
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Expected encoding (grapheme|phoneme|both) or phoneme embedding
    /// (oh|oh+|external) of the parameters.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_enc: Option<usize>,
    #[arg(long)]
    pub d_att: Option<usize>,
    /// GCN layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Node encoding: grapheme, phoneme or both.
    #[arg(long)]
    pub mode: Option<String>,
    /// Phoneme embeddings: oh, oh+ or external.
    #[arg(long)]
    pub pemb: Option<String>,
    /// Phoneme vectors (`SYMBOL v1 v2 ...`) for external embeddings.
    #[arg(long)]
    pub phoneme_vectors: Option<PathBuf>,
    /// Root handling in the GCN: connected or detached.
    #[arg(long)]
    pub root: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub pipe: Pipeline,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Leading steps with the gate held fixed.
    #[arg(long)]
    pub gate_warmup: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train with the phoneme-aware query.
    #[arg(long, value_parser = parse_switch, num_args = 0..=1, default_missing_value = "on")]
    pub phoneme_query: Option<bool>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub pipe: Pipeline,
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// One tree for every scenario instead of each scenario's own list.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long, value_parser = parse_switch, num_args = 0..=1, default_missing_value = "on")]
    pub phoneme_query: Option<bool>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_symbols: Option<usize>,
    /// Hypotheses, one utterance per line.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Also write the references, one utterance per line.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    /// Biasing words, one per line.
    #[arg(long)]
    pub list: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Instance limits, e.g. "V=20,N=10,d=8".
    #[arg(long, default_value = "V=20,N=10,d=8")]
    pub dims: String,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub instances: u64,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub gate_warmup: Option<usize>,
    #[arg(long, value_parser = parse_switch, num_args = 0..=1, default_missing_value = "on")]
    pub phoneme_query: Option<bool>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the generated world (inventory, lexicon, vocabulary,
    /// alignments, scenarios, lists, config) to this directory.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::AlignTrain(a) => commands::align_train(&cfg, a),
        Command::Align(a) => commands::align(&cfg, a),
        Command::Tokenize(a) => commands::tokenize(&cfg, a),
        Command::BuildTrie(a) => commands::build_trie(&cfg, a),
        Command::Encode(a) => commands::encode(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Score(a) => commands::score(&cfg, a),
        Command::HeadGradcheck(a) => commands::head_gradcheck(&cfg, a),
        Command::Demo(a) => commands::demo(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
