use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use mien_asr::decoder::{build_prefix_tree, DecodeConfig, DecodeMode, Decoder};
use mien_asr::emission::load_emission;
use mien_asr::eval::{make_cv_plan, normalize_text, read_transcripts, score_corpus, ScoreReport};
use mien_asr::lexicon::{
    build_lexicon, derive_phoneme_vocab, lexicon_to_text, load_g2p_table, load_lexicon, report_reference_size,
    G2PTable, PhonemeVocab,
};
use mien_asr::lm::{arpa_read, arpa_write, lm_train, perplexity, Smoothing};
use mien_asr::orthography::{load_inventory, parse_text, InventoryConfig};
use mien_asr::pipeline::{run_experiment, PipelineConfig};
use mien_asr::split_utterance_line;
use mien_asr::tokenizer::{bpe_decode, bpe_encode, bpe_train, BpeModel};
use mien_asr::transfer::{transfer_init, EmbeddingMatrix};

#[derive(Parser)]
#[command(name = "mien-asr", version, about = "Iu Mien ASR toolkit: text processing, LM, CTC decoding and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Subword,
    Phoneme,
}

impl From<ModeArg> for DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Subword => DecodeMode::Subword,
            ModeArg::Phoneme => DecodeMode::Phoneme,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Wer,
    Per,
}

#[derive(Subcommand)]
enum Command {
    /// Print the syllable decomposition of every word (initial,medial,main,coda,tone).
    Parse {
        /// Text or `utt-id TAB text` lines; `-` reads stdin.
        input: PathBuf,
        #[arg(long)]
        inventory: Option<PathBuf>,
    },
    /// Build a pronunciation lexicon for every distinct word of a corpus.
    Lexicon {
        input: PathBuf,
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long)]
        g2p: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Derive the phoneme vocabulary of a lexicon.
    Vocab {
        lexicon: PathBuf,
        /// Remove non-tone diacritics.
        #[arg(long)]
        strip: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train a BPE model.
    BpeTrain {
        input: PathBuf,
        #[arg(long, default_value_t = 500)]
        vocab_size: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Encode text lines into token ids.
    BpeEncode {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Print token strings instead of ids.
        #[arg(long)]
        pieces: bool,
    },
    /// Decode lines of token ids into text.
    BpeDecode {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Train a back-off n-gram LM and write it as ARPA.
    LmTrain {
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// kn, absolute or mle.
        #[arg(long, default_value = "kn")]
        smoothing: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Perplexity of an ARPA LM on a text.
    LmPpl {
        input: PathBuf,
        #[arg(long)]
        lm: PathBuf,
    },
    /// Beam-search decode precomputed emissions.
    Decode {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Directory of `<utt-id>.ems` or `<utt-id>.ems.txt` files.
        #[arg(long)]
        emissions: PathBuf,
        /// One utterance id per line, or `utt-id TAB text` lines.
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        /// Phoneme mode: lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Phoneme mode: vocabulary matching the emission columns.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Subword mode: BPE model matching the emission columns.
        #[arg(long)]
        bpe: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        beam: usize,
        #[arg(long, default_value_t = 0.5)]
        lm_weight: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        wip: f64,
        /// Write the N best hypotheses per utterance here.
        #[arg(long)]
        nbest_output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        nbest: usize,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Initialize a target output layer from a source embedding matrix.
    TransferInit {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt_vocab: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        scale: Option<f64>,
        /// Also match tokens after removing diacritics.
        #[arg(long)]
        normalize: bool,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write seeded cross-validation fold and run manifests.
    Split {
        /// Utterance ids, one per line, or `utt-id TAB text` lines.
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score hypotheses against references (`utt-id TAB text` files).
    Score {
        reference: PathBuf,
        hypothesis: PathBuf,
        #[arg(long, value_enum, default_value = "wer")]
        metric: Metric,
        /// Print one line per utterance as well.
        #[arg(long)]
        per_utterance: bool,
    },
    /// Run the full cross-validation experiment described by a TOML config.
    Experiment { config: PathBuf },
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn input_texts(path: &Path) -> Result<Vec<String>> {
    Ok(read_input(path)?
        .lines()
        .map(|l| normalize_text(split_utterance_line(l).1))
        .filter(|l| !l.is_empty())
        .collect())
}

fn input_ids(path: &Path) -> Result<Vec<String>> {
    Ok(read_input(path)?
        .lines()
        .filter_map(|l| {
            let (id, text) = split_utterance_line(l);
            let id = id.unwrap_or(text);
            (!id.is_empty()).then(|| id.to_string())
        })
        .collect())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().lock().write_all(text.as_bytes())?),
    }
}

fn inventory(path: Option<&Path>) -> Result<InventoryConfig> {
    Ok(match path {
        Some(p) => load_inventory(p)?,
        None => InventoryConfig::builtin(),
    })
}

fn print_report(label: &str, r: &ScoreReport) {
    println!(
        "{label}\tS={} D={} I={} N={}\t{:.2}%",
        r.substitutions,
        r.deletions,
        r.insertions,
        r.reference_length,
        100.0 * r.rate()
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse { input, inventory: inv } => {
            let inv = inventory(inv.as_deref())?;
            let mut out = String::new();
            let mut bad = 0;
            for text in input_texts(&input)? {
                let parse = parse_text(&text, &inv);
                for w in &parse.parsed {
                    let syls: Vec<String> = w.syllables.iter().map(|s| s.to_string()).collect();
                    let _ = writeln!(out, "{}\t{}", w.word, syls.join(" "));
                }
                for w in &parse.unparseable {
                    warn!("unparseable token {w:?}");
                    bad += 1;
                }
            }
            emit(None, &out)?;
            if bad > 0 {
                bail!("{bad} unparseable tokens");
            }
        }
        Command::Lexicon { input, inventory: inv, g2p, output } => {
            let inv = inventory(inv.as_deref())?;
            let table = match g2p {
                Some(p) => load_g2p_table(&p)?,
                None => G2PTable::builtin(),
            };
            let texts = input_texts(&input)?;
            let built = build_lexicon(texts.iter().flat_map(|t| t.split_whitespace()), &table, &inv);
            for f in &built.failures {
                warn!("no pronunciation for {:?}: {}", f.word, f.reason);
            }
            info!("{} entries, {} failures", built.entries.len(), built.failures.len());
            emit(output.as_deref(), &lexicon_to_text(&built.entries))?;
        }
        Command::Vocab { lexicon, strip, output } => {
            let vocab = derive_phoneme_vocab(&load_lexicon(&lexicon)?, strip);
            report_reference_size(&vocab, strip);
            emit(output.as_deref(), &vocab.to_text())?;
        }
        Command::BpeTrain { input, vocab_size, output } => {
            let model = bpe_train(&input_texts(&input)?, vocab_size)?;
            info!("{} tokens, {} merges", model.len(), model.merges().len());
            model.save(&output)?;
        }
        Command::BpeEncode { input, model, pieces } => {
            let model = BpeModel::load(&model)?;
            let mut out = String::new();
            for text in input_texts(&input)? {
                let ids = bpe_encode(&text, &model);
                let cols: Vec<String> = if pieces {
                    ids.iter().map(|&i| model.token(i).unwrap_or("<unk>").to_string()).collect()
                } else {
                    ids.iter().map(u32::to_string).collect()
                };
                let _ = writeln!(out, "{}", cols.join(" "));
            }
            emit(None, &out)?;
        }
        Command::BpeDecode { input, model } => {
            let model = BpeModel::load(&model)?;
            let mut out = String::new();
            for line in read_input(&input)?.lines() {
                let ids = line
                    .split_whitespace()
                    .map(|t| t.parse::<u32>().with_context(|| format!("bad token id {t:?}")))
                    .collect::<Result<Vec<_>>>()?;
                let _ = writeln!(out, "{}", bpe_decode(&ids, &model)?);
            }
            emit(None, &out)?;
        }
        Command::LmTrain { input, order, smoothing, output } => {
            let smoothing: Smoothing = smoothing.parse()?;
            let model = lm_train(&input_texts(&input)?, order, smoothing)?;
            arpa_write(&model, &output)?;
        }
        Command::LmPpl { input, lm } => {
            let model = arpa_read(&lm)?;
            println!("{:.6}", perplexity(&model, &input_texts(&input)?));
        }
        Command::Decode {
            mode,
            emissions,
            ids,
            lm,
            lexicon,
            vocab,
            bpe,
            beam,
            lm_weight,
            wip,
            nbest_output,
            nbest,
            workers,
            output,
        } => {
            let mode = DecodeMode::from(mode);
            let cfg = DecodeConfig { beam_size: beam, lm_weight, word_insertion_penalty: wip, nbest, mode };
            cfg.validate()?;
            let lm = arpa_read(&lm)?;
            let ids = input_ids(&ids)?;
            let tree;
            let bpe_model;
            let decoder = match mode {
                DecodeMode::Phoneme => {
                    let (Some(lexicon), Some(vocab)) = (lexicon, vocab) else {
                        bail!("phoneme mode needs --lexicon and --vocab");
                    };
                    tree = build_prefix_tree(&load_lexicon(&lexicon)?, &PhonemeVocab::load(&vocab)?)?;
                    Decoder::Phoneme { tree: &tree, lm: &lm }
                }
                DecodeMode::Subword => {
                    let Some(bpe) = bpe else { bail!("subword mode needs --bpe") };
                    bpe_model = BpeModel::load(&bpe)?;
                    Decoder::Subword { bpe: &bpe_model, lm: &lm }
                }
            };
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
            let results = pool.install(|| {
                ids.par_iter()
                    .map(|id| {
                        let em = load_emission(&emissions, id)?;
                        decoder.decode(&em, &cfg).with_context(|| format!("utterance {id}"))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut best = String::new();
            let mut nb = String::new();
            for (id, hyps) in ids.iter().zip(&results) {
                let _ = writeln!(best, "{id}\t{}", hyps.first().map(|h| h.text()).unwrap_or_default());
                for (rank, h) in hyps.iter().enumerate() {
                    let _ = writeln!(nb, "{id}\t{rank}\t{:.6}\t{:.6}\t{:.6}\t{}", h.score, h.score_ac, h.score_lm, h.text());
                }
            }
            emit(output.as_deref(), &best)?;
            if let Some(p) = nbest_output {
                emit(Some(&p), &nb)?;
            }
        }
        Command::TransferInit { src, tgt_vocab, seed, scale, normalize, output, report } => {
            let src = EmbeddingMatrix::load(&src)?;
            let vocab = PhonemeVocab::load(&tgt_vocab)?;
            let (matrix, rep) = transfer_init(&src, &vocab, seed, scale, normalize)?;
            info!("copied {} rows, randomized {} (coverage {:.4})", rep.copied.len(), rep.randomized.len(), rep.coverage);
            matrix.save(&output)?;
            if let Some(p) = report {
                emit(Some(&p), &rep.to_text())?;
            }
        }
        Command::Split { input, folds, runs, seed, output } => {
            let plan = make_cv_plan(&input_ids(&input)?, folds, runs, seed)?;
            plan.write_manifests(&output)?;
        }
        Command::Score { reference, hypothesis, metric, per_utterance } => {
            let refs = read_transcripts(&reference)?;
            let hyps = read_transcripts(&hypothesis)?;
            let scored = score_corpus(&refs, &hyps);
            for id in &scored.missing {
                warn!("no hypothesis for {id}; scored as empty");
            }
            if per_utterance {
                for (id, r) in &scored.per_utterance {
                    print_report(id, r);
                }
            }
            let label = match metric {
                Metric::Wer => "WER",
                Metric::Per => "PER",
            };
            print_report(label, &scored.total);
        }
        Command::Experiment { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already render their causes; skip repeats.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
