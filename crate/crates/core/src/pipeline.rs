//! End-to-end experiment driver: split, lexicon or tokenizer, LM, decode,
//! score, report.
//!
//! The configuration is one TOML file; relative paths resolve against the
//! directory holding it. Every referenced input, including one emission file
//! per corpus utterance, is checked before any stage runs.
//!
//! ```toml
//! mode = "phoneme"            # or "subword"
//! seed = 7
//! output_dir = "out"
//! workers = 2                 # decode threads
//! model_id = "M2"
//! model_name = "fixture + phoneme FT"
//!
//! [paths]
//! corpus = "corpus.tsv"       # utt-id TAB text
//! emissions = "emissions"     # <utt-id>.ems or <utt-id>.ems.txt
//! inventory = "inventory.txt" # optional, built-in otherwise
//! g2p = "g2p.tsv"             # optional, built-in otherwise
//! phoneme_vocab = "vocab.txt" # optional; emission columns in phoneme mode
//! bpe_model = "bpe.model"     # optional; emission columns in subword mode
//!
//! [cv]
//! folds = 10
//! runs = 3
//!
//! [lm]
//! order = 4
//! smoothing = "kn"            # kn | absolute | mle
//!
//! [decode]
//! beam = 32
//! lm_weight = 0.5
//! wip = 0.0
//! tune = false                # grid-search lm_weight and wip on each dev fold
//!
//! [bpe]
//! vocab_size = 500            # used when no bpe_model is given
//! ```
//!
//! Without `phoneme_vocab` the vocabulary is derived from the lexicon of the
//! whole corpus; without `bpe_model` the tokenizer is trained on the whole
//! corpus. Either way the result is written to the output directory, since
//! emission columns must stay fixed across runs.
//!
//! Report rates are percentages with two decimals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Deserialize;

use crate::ctc::greedy_decode;
use crate::decoder::{
    build_prefix_tree, tune_weights, DecodeConfig, DecodeMode, Decoder, LM_WEIGHT_GRID, WIP_GRID,
};
use crate::emission::{emission_path, read_emission, EmissionMatrix};
use crate::error::{self, Error, Result};
use crate::eval::{make_cv_plan, mean, normalize_text, read_transcripts, score_corpus, transcripts_to_text, ScoreReport};
use crate::lexicon::{build_lexicon, derive_phoneme_vocab, lexicon_to_text, G2PTable, LexiconEntry, PhonemeVocab};
use crate::lm::{lm_train, Smoothing};
use crate::orthography::{load_inventory, InventoryConfig};
use crate::tokenizer::{bpe_decode, bpe_train, BpeModel};

fn default_seed() -> u64 {
    0
}
fn default_workers() -> usize {
    1
}
fn default_folds() -> usize {
    10
}
fn default_runs() -> usize {
    3
}
fn default_order() -> usize {
    4
}
fn default_smoothing() -> String {
    "kn".into()
}
fn default_beam() -> usize {
    32
}
fn default_lm_weight() -> f64 {
    0.5
}
fn default_vocab_size() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub emissions: PathBuf,
    pub inventory: Option<PathBuf>,
    pub g2p: Option<PathBuf>,
    pub phoneme_vocab: Option<PathBuf>,
    pub bpe_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default = "default_lm_weight")]
    pub lm_weight: f64,
    #[serde(default)]
    pub wip: f64,
    #[serde(default)]
    pub tune: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpeSection {
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: DecodeMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    pub paths: Paths,
    #[serde(default = "CvSection::default")]
    pub cv: CvSection,
    #[serde(default = "LmSection::default")]
    pub lm: LmSection,
    #[serde(default = "DecodeSection::default")]
    pub decode: DecodeSection,
    #[serde(default = "BpeSection::default")]
    pub bpe: BpeSection,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { folds: default_folds(), runs: default_runs() }
    }
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection { order: default_order(), smoothing: default_smoothing() }
    }
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection { beam: default_beam(), lm_weight: default_lm_weight(), wip: 0.0, tune: false }
    }
}

impl Default for BpeSection {
    fn default() -> Self {
        BpeSection { vocab_size: default_vocab_size() }
    }
}

impl PipelineConfig {
    /// Parse TOML, resolving relative paths against `base`.
    pub fn parse(src: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        let paths = &mut cfg.paths;
        resolve(&mut paths.corpus);
        resolve(&mut paths.emissions);
        for p in [&mut paths.inventory, &mut paths.g2p, &mut paths.phoneme_vocab, &mut paths.bpe_model]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = error::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&src, base)
    }

    pub fn smoothing(&self) -> Result<Smoothing> {
        self.lm.smoothing.parse()
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.decode.beam,
            lm_weight: self.decode.lm_weight,
            word_insertion_penalty: self.decode.wip,
            nbest: 1,
            mode: self.mode,
        }
    }

    /// Check inputs and parameters without doing any work.
    pub fn validate(&self) -> Result<Vec<(String, String)>> {
        let p = &self.paths;
        let must_be_file = |path: &Path, what: &str| {
            if path.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", path.display())))
            }
        };
        must_be_file(&p.corpus, "corpus")?;
        if !p.emissions.is_dir() {
            return Err(Error::Config(format!("emissions directory {} does not exist", p.emissions.display())));
        }
        for (opt, what) in [
            (&p.inventory, "inventory"),
            (&p.g2p, "g2p table"),
            (&p.phoneme_vocab, "phoneme vocabulary"),
            (&p.bpe_model, "bpe model"),
        ] {
            if let Some(path) = opt {
                must_be_file(path, what)?;
            }
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.lm.order == 0 {
            return Err(Error::Config("lm order must be at least 1".into()));
        }
        self.smoothing()?;
        self.decode_config().validate()?;
        let corpus = read_transcripts(&p.corpus)?;
        if corpus.len() < self.cv.folds {
            return Err(Error::Config(format!("{} utterances cannot fill {} folds", corpus.len(), self.cv.folds)));
        }
        if 2 * self.cv.runs > self.cv.folds || self.cv.runs == 0 {
            return Err(Error::Config(format!("{} runs need {} folds", self.cv.runs, 2 * self.cv.runs)));
        }
        for (id, _) in &corpus {
            emission_path(&p.emissions, id).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(corpus)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub dev_fold: usize,
    pub test_fold: usize,
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
    /// Phoneme mode: greedy phoneme output against reference pronunciations.
    pub per: Option<ScoreReport>,
    /// Subword mode: greedy token output.
    pub wer_without_lm: Option<ScoreReport>,
    pub wer_with_lm: ScoreReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub mode: DecodeMode,
    pub seed: u64,
    pub folds: usize,
    pub model_id: String,
    pub model_name: String,
    pub runs: Vec<RunResult>,
}

fn pct(rate: f64) -> String {
    format!("{:.2}", 100.0 * rate)
}

impl ExperimentReport {
    /// Mean per-run rates: (first column, WER with LM).
    pub fn averages(&self) -> (f64, f64) {
        let first: Vec<f64> = self
            .runs
            .iter()
            .map(|r| r.per.or(r.wer_without_lm).map_or(f64::NAN, |s| s.rate()))
            .collect();
        let with_lm: Vec<f64> = self.runs.iter().map(|r| r.wer_with_lm.rate()).collect();
        (mean(&first).unwrap_or(f64::NAN), mean(&with_lm).unwrap_or(f64::NAN))
    }

    pub fn to_text(&self) -> String {
        let (first, with_lm) = self.averages();
        let first_col = match self.mode {
            DecodeMode::Phoneme => "test_per",
            DecodeMode::Subword => "test_wer_without_lm",
        };
        let second_col = match self.mode {
            DecodeMode::Phoneme => "test_wer",
            DecodeMode::Subword => "test_wer_with_lm",
        };
        let mut s = String::new();
        let _ = writeln!(s, "mode\t{}\nseed\t{}\nfolds\t{}\nruns\t{}\n", self.mode.name(), self.seed, self.folds, self.runs.len());
        let _ = writeln!(s, "id\tmodel\t{first_col}\t{second_col}");
        let _ = writeln!(s, "{}\t{}\t{}\t{}\n", self.model_id, self.model_name, pct(first), pct(with_lm));
        let _ = writeln!(s, "run\tdev_fold\ttest_fold\tlm_weight\twip\t{first_col}\t{second_col}\tcounts");
        for r in &self.runs {
            let f = r.per.or(r.wer_without_lm).unwrap_or_default();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.run,
                r.dev_fold,
                r.test_fold,
                r.lm_weight,
                r.word_insertion_penalty,
                pct(f.rate()),
                pct(r.wer_with_lm.rate()),
                r.wer_with_lm.summary()
            );
        }
        s
    }
}

fn stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage { stage, source: Box::new(other) },
    })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

struct Resources {
    text: HashMap<String, String>,
    emissions: HashMap<String, EmissionMatrix>,
    prons: HashMap<String, LexiconEntry>,
    vocab: Option<PhonemeVocab>,
    bpe: Option<BpeModel>,
}

/// Run every cross-validation run and write all artifacts plus `report.txt`.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<ExperimentReport> {
    let corpus = stage("validate", cfg.validate())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let out = &cfg.output_dir;
    stage("validate", mkdir(out))?;

    let plan = stage("split", {
        let ids: Vec<&str> = corpus.iter().map(|(i, _)| i.as_str()).collect();
        make_cv_plan(&ids, cfg.cv.folds, cfg.cv.runs, cfg.seed).and_then(|p| p.write_manifests(&out.join("manifests")).map(|_| p))
    })?;

    let res = stage("resources", pool.install(|| load_resources(cfg, corpus)))?;

    let mut runs = Vec::with_capacity(plan.runs.len());
    for (r, run) in plan.runs.iter().enumerate() {
        let dir = out.join(format!("run_{r}"));
        stage("split", mkdir(&dir))?;
        let train = plan.train_ids(r);
        let dev = plan.dev_ids(r);
        let test = plan.test_ids(r);
        let train_text: Vec<&str> = train.iter().map(|i| res.text[i].as_str()).collect();

        let lm = stage("lm", {
            lm_train(&train_text, cfg.lm.order, cfg.smoothing()?).and_then(|m| {
                crate::lm::arpa_write(&m, &dir.join("lm.arpa"))?;
                Ok(m)
            })
        })?;

        let tree = match cfg.mode {
            DecodeMode::Phoneme => Some(stage("lexicon", {
                let mut words: Vec<&str> = train_text.iter().flat_map(|t| t.split_whitespace()).collect();
                words.sort();
                words.dedup();
                let entries: Vec<LexiconEntry> = words.iter().filter_map(|w| res.prons.get(*w).cloned()).collect();
                error::write_string(&dir.join("lexicon.txt"), &lexicon_to_text(&entries))
                    .and_then(|_| build_prefix_tree(&entries, res.vocab.as_ref().unwrap()))
            })?),
            DecodeMode::Subword => None,
        };
        let decoder = match (&tree, &res.bpe) {
            (Some(tree), _) => Decoder::Phoneme { tree, lm: &lm },
            (None, Some(bpe)) => Decoder::Subword { bpe, lm: &lm },
            (None, None) => unreachable!("subword mode always loads a tokenizer"),
        };

        let mut dcfg = cfg.decode_config();
        if cfg.decode.tune {
            let best = stage(
                "tune",
                tune_weights(&LM_WEIGHT_GRID, &WIP_GRID, |lm_weight, wip| {
                    let c = DecodeConfig { lm_weight, word_insertion_penalty: wip, ..dcfg.clone() };
                    let hyps = pool.install(|| decode_all(&decoder, &res, &dev, &c))?;
                    Ok(score_corpus(&refs(&res, &dev), &hyps).total.rate())
                }),
            )?;
            info!("run {r}: tuned lm_weight={} wip={} (dev WER {:.4})", best.lm_weight, best.word_insertion_penalty, best.error_rate);
            dcfg.lm_weight = best.lm_weight;
            dcfg.word_insertion_penalty = best.word_insertion_penalty;
        }

        let test_refs = refs(&res, &test);
        let hyps = stage("decode", pool.install(|| decode_all(&decoder, &res, &test, &dcfg)))?;
        let (per, wer_without_lm) = stage("decode", match cfg.mode {
            DecodeMode::Phoneme => {
                let vocab = res.vocab.as_ref().unwrap();
                let greedy = greedy_all(&res, &test, |ids| {
                    Ok(ids.iter().filter_map(|&i| vocab.token(i)).collect::<Vec<_>>().join(" "))
                })?;
                let pron_refs: Vec<(String, String)> = test_refs
                    .iter()
                    .map(|(id, text)| (id.clone(), reference_pron(&res.prons, text)))
                    .collect();
                write_pair(&dir, "per", &pron_refs, &greedy)?;
                Ok((Some(score_corpus(&pron_refs, &greedy).total), None))
            }
            DecodeMode::Subword => {
                let bpe = res.bpe.as_ref().unwrap();
                let greedy = greedy_all(&res, &test, |ids| bpe_decode(ids, bpe))?;
                write_pair(&dir, "nolm", &test_refs, &greedy)?;
                Ok((None, Some(score_corpus(&test_refs, &greedy).total)))
            }
        })?;
        stage("score", write_pair(&dir, "lm", &test_refs, &hyps))?;
        let scored = score_corpus(&test_refs, &hyps);
        info!("run {r}: {}", scored.total.summary());
        runs.push(RunResult {
            run: r,
            dev_fold: run.dev,
            test_fold: run.test,
            lm_weight: dcfg.lm_weight,
            word_insertion_penalty: dcfg.word_insertion_penalty,
            per,
            wer_without_lm,
            wer_with_lm: scored.total,
        });
    }

    let default_name = match cfg.mode {
        DecodeMode::Phoneme => "phoneme FT",
        DecodeMode::Subword => "subword FT",
    };
    let report = ExperimentReport {
        mode: cfg.mode,
        seed: cfg.seed,
        folds: cfg.cv.folds,
        model_id: cfg.model_id.clone().unwrap_or_else(|| "-".into()),
        model_name: cfg.model_name.clone().unwrap_or_else(|| default_name.into()),
        runs,
    };
    stage("report", error::write_string(&out.join("report.txt"), &report.to_text()))?;
    Ok(report)
}

fn load_resources(cfg: &PipelineConfig, corpus: Vec<(String, String)>) -> Result<Resources> {
    let p = &cfg.paths;
    let text: HashMap<String, String> = corpus.iter().map(|(i, t)| (i.clone(), normalize_text(t))).collect();
    let emissions: Vec<(String, EmissionMatrix)> = corpus
        .par_iter()
        .map(|(id, _)| Ok((id.clone(), read_emission(&emission_path(&p.emissions, id)?)?)))
        .collect::<Result<_>>()?;
    let emissions: HashMap<String, EmissionMatrix> = emissions.into_iter().collect();

    let mut prons = HashMap::new();
    let mut vocab = None;
    let mut bpe = None;
    match cfg.mode {
        DecodeMode::Phoneme => {
            let inv = match &p.inventory {
                Some(path) => load_inventory(path)?,
                None => InventoryConfig::builtin(),
            };
            let table = match &p.g2p {
                Some(path) => crate::lexicon::load_g2p_table(path)?,
                None => G2PTable::builtin(),
            };
            let mut words: Vec<&str> = corpus.iter().flat_map(|(i, _)| text[i].split_whitespace()).collect();
            words.sort();
            words.dedup();
            let built = build_lexicon(words.iter().copied(), &table, &inv);
            for f in &built.failures {
                warn!("no pronunciation for {:?}: {}", f.word, f.reason);
            }
            let v = match &p.phoneme_vocab {
                Some(path) => PhonemeVocab::load(path)?,
                None => {
                    let v = derive_phoneme_vocab(&built.entries, false);
                    v.save(&cfg.output_dir.join("phoneme_vocab.txt"))?;
                    v
                }
            };
            prons = built.entries.into_iter().map(|e| (e.word.clone(), e)).collect();
            vocab = Some(v);
        }
        DecodeMode::Subword => {
            let model = match &p.bpe_model {
                Some(path) => BpeModel::load(path)?,
                None => {
                    let lines: Vec<&str> = corpus.iter().map(|(i, _)| text[i].as_str()).collect();
                    let m = bpe_train(&lines, cfg.bpe.vocab_size)?;
                    m.save(&cfg.output_dir.join("bpe.model"))?;
                    m
                }
            };
            bpe = Some(model);
        }
    }
    let columns = vocab.as_ref().map(PhonemeVocab::len).or(bpe.as_ref().map(BpeModel::len)).unwrap();
    for (id, em) in &emissions {
        if em.vocab_size() != columns {
            return Err(Error::Stage {
                stage: "resources",
                source: Box::new(Error::Emission(format!("utterance {id}: {}", Error::VocabMismatch { emissions: em.vocab_size(), expected: columns }))),
            });
        }
    }
    Ok(Resources { text, emissions, prons, vocab, bpe })
}

fn refs(res: &Resources, ids: &[String]) -> Vec<(String, String)> {
    ids.iter().map(|i| (i.clone(), res.text[i].clone())).collect()
}

fn reference_pron(prons: &HashMap<String, LexiconEntry>, text: &str) -> String {
    text.split_whitespace()
        .filter_map(|w| prons.get(w))
        .flat_map(|e| e.pron.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(" ")
}

fn decode_all(decoder: &Decoder, res: &Resources, ids: &[String], cfg: &DecodeConfig) -> Result<Vec<(String, String)>> {
    ids.par_iter()
        .map(|id| {
            let hyps = decoder.decode(&res.emissions[id], cfg)?;
            Ok((id.clone(), hyps.first().map(|h| h.text()).unwrap_or_default()))
        })
        .collect()
}

fn greedy_all(
    res: &Resources,
    ids: &[String],
    render: impl Fn(&[u32]) -> Result<String> + Sync,
) -> Result<Vec<(String, String)>> {
    ids.par_iter()
        .map(|id| Ok((id.clone(), render(&greedy_decode(&res.emissions[id]))?)))
        .collect()
}

fn write_pair(dir: &Path, tag: &str, refs: &[(String, String)], hyps: &[(String, String)]) -> Result<()> {
    error::write_string(&dir.join(format!("ref_{tag}.txt")), &transcripts_to_text(refs))?;
    error::write_string(&dir.join(format!("hyp_{tag}.txt")), &transcripts_to_text(hyps))
}
