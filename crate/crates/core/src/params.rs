//! Learned parameters of the tree encoder and the pointer head, plus their
//! on-disk format: a JSON manifest next to a little-endian `f64` blob with
//! tensors stored row-major in manifest order.

use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::PhonemeInventory;
use crate::trie::RootMode;

pub const PARAMS_FORMAT: &str = "tcpgen-params";
pub const PARAMS_VERSION: u32 = 1;
/// Initial generation-probability bias, σ(-2) ≈ 0.12.
pub const INITIAL_GEN_BIAS: f64 = -2.0;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("invalid dimensions: {0}")]
    BadDims(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad parameter file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Subword vocabulary size `V`.
    pub vocab: usize,
    /// Node encoding size.
    pub d: usize,
    /// Phoneme feature size.
    pub d_p: usize,
    /// Acoustic encoder output size.
    pub d_enc: usize,
    /// Attention size.
    pub d_att: usize,
    /// Joint network output size.
    pub d_joint: usize,
    /// GCN layers.
    pub layers: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let named = [
            ("vocab", self.vocab),
            ("d", self.d),
            ("d_p", self.d_p),
            ("d_enc", self.d_enc),
            ("d_att", self.d_att),
            ("d_joint", self.d_joint),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(ParamsError::BadDims(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Which node encodings feed the first GCN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// Subword embeddings only.
    Grapheme,
    /// Phoneme-aware encodings only (ablation).
    Phoneme,
    /// Sum of both.
    Both,
}

impl EncodingMode {
    pub fn uses_grapheme(self) -> bool {
        matches!(self, Self::Grapheme | Self::Both)
    }

    pub fn uses_phoneme(self) -> bool {
        matches!(self, Self::Phoneme | Self::Both)
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grapheme" => Ok(Self::Grapheme),
            "phoneme" => Ok(Self::Phoneme),
            "both" => Ok(Self::Both),
            _ => Err(format!(
                "unknown encoding mode {s:?} (grapheme|phoneme|both)"
            )),
        }
    }
}

/// How phoneme embeddings are formed and projected to the node size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhonemeEmbedMode {
    /// One-hot rows used directly; requires `d_p == d`.
    #[serde(rename = "oh")]
    OneHot,
    /// One-hot rows through a learned `d_p × d` projection.
    #[serde(rename = "oh+")]
    OneHotLinear,
    /// Fixed externally supplied vectors used directly; requires `d_p == d`.
    #[serde(rename = "external")]
    External,
}

impl std::str::FromStr for PhonemeEmbedMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oh" => Ok(Self::OneHot),
            "oh+" => Ok(Self::OneHotLinear),
            "external" | "g2p" => Ok(Self::External),
            _ => Err(format!(
                "unknown phoneme embedding mode {s:?} (oh|oh+|external)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub encoding: EncodingMode,
    pub phoneme_embed: PhonemeEmbedMode,
    pub root_mode: RootMode,
    /// Decoder-side `Emb` shares the tree-side embedding table.
    pub tie_embeddings: bool,
    /// The query-side phoneme projection reuses the encoder's `W^p`.
    pub tie_phoneme_proj: bool,
}

impl ModelConfig {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            encoding: EncodingMode::Both,
            phoneme_embed: PhonemeEmbedMode::OneHotLinear,
            root_mode: RootMode::Connected,
            tie_embeddings: true,
            tie_phoneme_proj: false,
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        self.dims.validate()?;
        let d = &self.dims;
        if self.phoneme_embed != PhonemeEmbedMode::OneHotLinear && d.d_p != d.d {
            return Err(ParamsError::BadDims(format!(
                "phoneme embedding mode without projection needs d_p == d ({} != {})",
                d.d_p, d.d
            )));
        }
        if self.tie_phoneme_proj && d.d_enc != d.d {
            return Err(ParamsError::BadDims(
                "tying the query phoneme projection needs d_enc == d".into(),
            ));
        }
        if !self.tie_phoneme_proj
            && self.phoneme_embed != PhonemeEmbedMode::OneHotLinear
            && d.d_p != d.d_enc
        {
            // Untied projection is learned, so any d_p works; nothing to check.
        }
        Ok(())
    }
}

/// Tree-side parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `V × d`; row `id - 1` embeds piece `id`.
    pub piece_embed: Array2<f64>,
    pub root_embed: Array1<f64>,
    /// One `d × d` matrix per GCN layer.
    pub gcn: Vec<Array2<f64>>,
    /// `d_p × d`; `None` means identity.
    pub phoneme_proj: Option<Array2<f64>>,
    /// Fixed `|inventory| × d_p` phoneme embedding rows (row 0 is the blank).
    pub phoneme_table: Array2<f64>,
}

/// Pointer-head parameters. Row-vector convention: `q = x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TcpgenHead {
    /// `d_enc × d_att`.
    pub wq: Array2<f64>,
    /// `d × d_att`, applied to the previous-token embedding.
    pub wq_prev: Array2<f64>,
    /// `d × d_att`.
    pub wk: Array2<f64>,
    /// `d × d_att`.
    pub wv: Array2<f64>,
    /// `d_joint + d_att` gate weights.
    pub wgen: Array1<f64>,
    pub bgen: f64,
    /// `d_p × d_enc` projection of CTC phoneme embeddings; `None` when tied
    /// to the encoder's projection.
    pub query_proj: Option<Array2<f64>>,
    /// `V × d` decoder embedding; `None` when tied to the encoder table.
    pub decoder_embed: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcpgenModel {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub head: TcpgenHead,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

/// One-hot phoneme table: identity over the whole inventory.
pub fn one_hot_table(inv: &PhonemeInventory) -> Array2<f64> {
    Array2::eye(inv.len())
}

impl TcpgenModel {
    /// Seeded initialization, uniform in `(-1/√d, 1/√d)`; the gate bias
    /// starts at [`INITIAL_GEN_BIAS`].
    pub fn init(
        config: ModelConfig,
        phoneme_table: Array2<f64>,
        seed: u64,
    ) -> Result<Self, ParamsError> {
        config.validate()?;
        let d = config.dims;
        if phoneme_table.ncols() != d.d_p {
            return Err(ParamsError::BadDims(format!(
                "phoneme table has {} columns, d_p is {}",
                phoneme_table.ncols(),
                d.d_p
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 1.0 / (d.d as f64).sqrt();
        let piece_embed = uniform(&mut rng, (d.vocab, d.d), b);
        let root_embed = uniform(&mut rng, (1, d.d), b).row(0).to_owned();
        let gcn = (0..d.layers)
            .map(|_| uniform(&mut rng, (d.d, d.d), b))
            .collect();
        let phoneme_proj = (config.phoneme_embed == PhonemeEmbedMode::OneHotLinear)
            .then(|| uniform(&mut rng, (d.d_p, d.d), b));
        let wq = uniform(&mut rng, (d.d_enc, d.d_att), b);
        let wq_prev = uniform(&mut rng, (d.d, d.d_att), b);
        let wk = uniform(&mut rng, (d.d, d.d_att), b);
        let wv = uniform(&mut rng, (d.d, d.d_att), b);
        let wgen = uniform(&mut rng, (1, d.d_joint + d.d_att), b)
            .row(0)
            .to_owned();
        let query_proj = (!config.tie_phoneme_proj).then(|| uniform(&mut rng, (d.d_p, d.d_enc), b));
        let decoder_embed = (!config.tie_embeddings).then(|| uniform(&mut rng, (d.vocab, d.d), b));
        Ok(Self {
            config,
            encoder: EncoderParams {
                piece_embed,
                root_embed,
                gcn,
                phoneme_proj,
                phoneme_table,
            },
            head: TcpgenHead {
                wq,
                wq_prev,
                wk,
                wv,
                wgen,
                bgen: INITIAL_GEN_BIAS,
                query_proj,
                decoder_embed,
            },
        })
    }

    pub fn dims(&self) -> &Dims {
        &self.config.dims
    }

    /// Same structure with every learnable value set to zero; used as the
    /// gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.learnable_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Decoder-side embedding table.
    pub fn decoder_embed(&self) -> &Array2<f64> {
        self.head
            .decoder_embed
            .as_ref()
            .unwrap_or(&self.encoder.piece_embed)
    }

    /// Every learnable tensor with a stable name, in serialization order.
    /// The phoneme table is fixed and not listed.
    pub fn learnable(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("piece_embed", self.encoder.piece_embed.as_slice().unwrap()),
            ("root_embed", self.encoder.root_embed.as_slice().unwrap()),
        ];
        for w in &self.encoder.gcn {
            out.push(("gcn", w.as_slice().unwrap()));
        }
        if let Some(p) = &self.encoder.phoneme_proj {
            out.push(("phoneme_proj", p.as_slice().unwrap()));
        }
        let h = &self.head;
        out.push(("wq", h.wq.as_slice().unwrap()));
        out.push(("wq_prev", h.wq_prev.as_slice().unwrap()));
        out.push(("wk", h.wk.as_slice().unwrap()));
        out.push(("wv", h.wv.as_slice().unwrap()));
        out.push(("wgen", h.wgen.as_slice().unwrap()));
        out.push(("bgen", std::slice::from_ref(&h.bgen)));
        if let Some(p) = &h.query_proj {
            out.push(("query_proj", p.as_slice().unwrap()));
        }
        if let Some(e) = &h.decoder_embed {
            out.push(("decoder_embed", e.as_slice().unwrap()));
        }
        out
    }

    pub fn learnable_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            (
                "piece_embed",
                self.encoder.piece_embed.as_slice_mut().unwrap(),
            ),
            (
                "root_embed",
                self.encoder.root_embed.as_slice_mut().unwrap(),
            ),
        ];
        for w in &mut self.encoder.gcn {
            out.push(("gcn", w.as_slice_mut().unwrap()));
        }
        if let Some(p) = &mut self.encoder.phoneme_proj {
            out.push(("phoneme_proj", p.as_slice_mut().unwrap()));
        }
        let h = &mut self.head;
        out.push(("wq", h.wq.as_slice_mut().unwrap()));
        out.push(("wq_prev", h.wq_prev.as_slice_mut().unwrap()));
        out.push(("wk", h.wk.as_slice_mut().unwrap()));
        out.push(("wv", h.wv.as_slice_mut().unwrap()));
        out.push(("wgen", h.wgen.as_slice_mut().unwrap()));
        out.push(("bgen", std::slice::from_mut(&mut h.bgen)));
        if let Some(p) = &mut h.query_proj {
            out.push(("query_proj", p.as_slice_mut().unwrap()));
        }
        if let Some(e) = &mut h.decoder_embed {
            out.push(("decoder_embed", e.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn num_learnable(&self) -> usize {
        self.learnable().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.learnable()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for (_, t) in self.learnable_mut() {
            for v in t.iter_mut() {
                *v = *it.next().expect("flat parameter vector too short");
            }
        }
    }

    /// `self += alpha * other`, over learnable tensors.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        let src = other.flat();
        let mut it = src.iter();
        for (_, t) in self.learnable_mut() {
            for v in t.iter_mut() {
                *v += alpha * it.next().expect("parameter layouts differ");
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.learnable()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            (
                "piece_embed".to_string(),
                self.encoder.piece_embed.shape().to_vec(),
            ),
            (
                "root_embed".to_string(),
                self.encoder.root_embed.shape().to_vec(),
            ),
        ];
        for (i, w) in self.encoder.gcn.iter().enumerate() {
            out.push((format!("gcn.{i}"), w.shape().to_vec()));
        }
        if let Some(p) = &self.encoder.phoneme_proj {
            out.push(("phoneme_proj".into(), p.shape().to_vec()));
        }
        let h = &self.head;
        out.push(("wq".into(), h.wq.shape().to_vec()));
        out.push(("wq_prev".into(), h.wq_prev.shape().to_vec()));
        out.push(("wk".into(), h.wk.shape().to_vec()));
        out.push(("wv".into(), h.wv.shape().to_vec()));
        out.push(("wgen".into(), h.wgen.shape().to_vec()));
        out.push(("bgen".into(), vec![1]));
        if let Some(p) = &h.query_proj {
            out.push(("query_proj".into(), p.shape().to_vec()));
        }
        if let Some(e) = &h.decoder_embed {
            out.push(("decoder_embed".into(), e.shape().to_vec()));
        }
        out.push((
            "phoneme_table".into(),
            self.encoder.phoneme_table.shape().to_vec(),
        ));
        out
    }

    /// Manifest describing the blob layout.
    pub fn manifest(&self, seed: Option<u64>) -> ParamsManifest {
        ParamsManifest {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            config: self.config,
            seed,
            tensors: self
                .tensor_shapes()
                .into_iter()
                .map(|(name, shape)| TensorInfo { name, shape })
                .collect(),
        }
    }

    /// Learnable tensors followed by the phoneme table, as LE `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut values = self.flat();
        values.extend(self.encoder.phoneme_table.iter().copied());
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_parts(manifest: &ParamsManifest, blob: &[u8]) -> Result<Self, ParamsError> {
        if manifest.format != PARAMS_FORMAT || manifest.version != PARAMS_VERSION {
            return Err(ParamsError::Format(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let table_shape = manifest
            .tensors
            .iter()
            .find(|t| t.name == "phoneme_table")
            .filter(|t| t.shape.len() == 2)
            .ok_or_else(|| ParamsError::Format("missing phoneme_table".into()))?;
        let table = Array2::zeros((table_shape.shape[0], table_shape.shape[1]));
        let mut model = Self::init(manifest.config, table, 0)?;
        let expected = model.manifest(manifest.seed);
        if expected.tensors != manifest.tensors {
            return Err(ParamsError::Format(
                "tensor list does not match the configuration".into(),
            ));
        }
        let n_learn = model.num_learnable();
        let n_total = n_learn + model.encoder.phoneme_table.len();
        if blob.len() != n_total * 8 {
            return Err(ParamsError::Format(format!(
                "blob has {} bytes, expected {}",
                blob.len(),
                n_total * 8
            )));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_flat(&values[..n_learn]);
        model
            .encoder
            .phoneme_table
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&values[n_learn..]);
        Ok(model)
    }

    /// Writes `path` (blob) and its manifest at `path` with a `.json` extension.
    pub fn save(&self, path: impl AsRef<Path>, seed: Option<u64>) -> Result<(), ParamsError> {
        let path = path.as_ref();
        let io = |source, p: &Path| ParamsError::Io {
            path: p.display().to_string(),
            source,
        };
        std::fs::write(path, self.to_bytes()).map_err(|e| io(e, path))?;
        let mpath = manifest_path(path);
        let text = serde_json::to_string_pretty(&self.manifest(seed))
            .map_err(|e| ParamsError::Format(e.to_string()))?;
        std::fs::write(&mpath, text).map_err(|e| io(e, &mpath))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ParamsManifest), ParamsError> {
        let path = path.as_ref();
        let io = |source, p: &Path| ParamsError::Io {
            path: p.display().to_string(),
            source,
        };
        let mpath = manifest_path(path);
        let text = std::fs::read_to_string(&mpath).map_err(|e| io(e, &mpath))?;
        let manifest: ParamsManifest =
            serde_json::from_str(&text).map_err(|e| ParamsError::Format(e.to_string()))?;
        let mut blob = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut blob))
            .map_err(|e| io(e, path))?;
        Ok((Self::from_parts(&manifest, &blob)?, manifest))
    }
}

pub fn manifest_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub seed: Option<u64>,
    pub tensors: Vec<TensorInfo>,
}

/// Parses `SYMBOL v1 v2 ...` lines into an `|inventory| × d_p` table. The
/// blank row and phonemes without a line stay zero.
pub fn parse_phoneme_vectors(
    text: &str,
    inv: &PhonemeInventory,
) -> Result<Array2<f64>, ParamsError> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(sym) = parts.next() else { continue };
        let id = inv.id(sym).ok_or_else(|| {
            ParamsError::Format(format!("line {}: unknown phoneme {sym:?}", i + 1))
        })?;
        let vals = parts
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ParamsError::Format(format!("line {}: {e}", i + 1)))?;
        rows.push((id, vals));
    }
    let d_p = rows.first().map(|r| r.1.len()).unwrap_or(0);
    if d_p == 0 || rows.iter().any(|r| r.1.len() != d_p) {
        return Err(ParamsError::Format(
            "phoneme vectors must share one positive width".into(),
        ));
    }
    let mut table = Array2::zeros((inv.len(), d_p));
    for (id, vals) in rows {
        table.row_mut(id).assign(&Array1::from(vals));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims {
            vocab: 7,
            d: 4,
            d_p: 5,
            d_enc: 3,
            d_att: 4,
            d_joint: 2,
            layers: 2,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::new(dims());
        let a = TcpgenModel::init(cfg, Array2::eye(5), 3).unwrap();
        let b = TcpgenModel::init(cfg, Array2::eye(5), 3).unwrap();
        assert_eq!(a, b);
        let bound = 0.5;
        for (name, t) in a.learnable() {
            if name != "bgen" {
                assert!(t.iter().all(|v| v.abs() < bound), "{name}");
            }
        }
        assert_eq!(a.head.bgen, -2.0);
        assert_ne!(a, TcpgenModel::init(cfg, Array2::eye(5), 4).unwrap());
    }

    #[test]
    fn one_hot_needs_matching_width() {
        let mut cfg = ModelConfig::new(dims());
        cfg.phoneme_embed = PhonemeEmbedMode::OneHot;
        assert!(matches!(cfg.validate(), Err(ParamsError::BadDims(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut cfg = ModelConfig::new(dims());
        cfg.tie_embeddings = false;
        let m = TcpgenModel::init(cfg, Array2::eye(5), 11).unwrap();
        m.save(&path, Some(11)).unwrap();
        let (back, manifest) = TcpgenModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.seed, Some(11));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), (m.num_learnable() + 25) * 8);
    }

    #[test]
    fn axpy_and_flat_agree() {
        let m = TcpgenModel::init(ModelConfig::new(dims()), Array2::eye(5), 1).unwrap();
        let mut z = m.zeros_like();
        assert!(z.flat().iter().all(|&v| v == 0.0));
        z.axpy(2.0, &m);
        let want: Vec<f64> = m.flat().iter().map(|v| 2.0 * v).collect();
        assert_eq!(z.flat(), want);
    }

    #[test]
    fn phoneme_vector_file() {
        let inv = PhonemeInventory::new(["a", "b"]).unwrap();
        let t = parse_phoneme_vectors("a 1 2\nb 3 4\n", &inv).unwrap();
        assert_eq!(t, ndarray::array![[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]]);
        assert!(parse_phoneme_vectors("a 1 2\nb 3\n", &inv).is_err());
    }
}
