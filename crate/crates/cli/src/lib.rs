//! The `hwr` command line: synthesize corpora, train, evaluate, recognize
//! and inspect models.
//!
//! Exit status is 0 on success, 1 for data errors (unreadable ink, corpus or
//! model problems, failed decoding) and 2 for usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use hwr_core::config::{Config, Variant};
use hwr_core::hmm::{DecodeStatus, Lexicon};
use hwr_core::ink::parse_ink;
use hwr_core::pipeline::{evaluate, read_corpus, read_corpus_lexicon, train_system, write_corpus, EvalReport, LabeledTrace, PipelineError, PipelineModel, Recognizer};
use hwr_core::synth::{generate_corpus, make_lexicon, Alphabet};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "hwr", version, about = "Online Arabic handwriting recognition with a hybrid MLP/HMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Sectioned `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one setting, e.g. `--set mlp.epochs=200`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus: ink files, manifest and lexicon.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Word traces per alphabet class.
        #[arg(long = "per-class", alias = "per_class")]
        per_class: Option<usize>,
    },
    /// Train a model on a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Training report path; defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate one or more models on a labelled corpus.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the best hypotheses for one ink file.
    Recognize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        topn: usize,
        ink: PathBuf,
    },
    /// Summarize a model file.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Config::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => Config::default(),
    };
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cfg)
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn read_lexicon(path: &Path) -> Result<Lexicon, CliError> {
    require_exists(path, "lexicon")?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Lexicon::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<PipelineModel, CliError> {
    require_exists(path, "model")?;
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(PipelineModel::from_json(&bytes)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_synth(common: &Common, out: &Path, per_class: Option<usize>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(n) = per_class {
        cfg.synth.per_class = n;
    }
    if cfg.synth.per_class == 0 {
        return Err(CliError::Usage("per_class must be at least 1".into()));
    }
    let alphabet = Alphabet::default_ten();
    let words = make_lexicon(&alphabet, cfg.synth.lexicon_size, cfg.synth.min_len..=cfg.synth.max_len, cfg.synth.lexicon_seed);
    if words.is_empty() {
        return Err(CliError::Usage("synth.lexicon_size must be at least 1".into()));
    }
    let lexicon = Lexicon::uniform(words.iter().map(|w| (alphabet.spell(w), w.clone())).collect()).map_err(|e| CliError::Data(e.to_string()))?;
    let count = cfg.synth.per_class * alphabet.len();
    let traces: Vec<LabeledTrace> = generate_corpus(&alphabet, &words, count, cfg.run.seed, &cfg.synth_config()).iter().map(LabeledTrace::from_synth).collect();
    write_corpus(out, &alphabet.symbols(), &lexicon, &traces)?;
    let _ = writeln!(stdout, "wrote {count} traces and a {}-word lexicon to {}", lexicon.len(), out.display());
    Ok(())
}

/// Lexicon from the flag, the corpus directory, or the corpus words.
fn corpus_lexicon(explicit: Option<&Path>, corpus_dir: &Path, symbols: &[String], traces: &[LabeledTrace]) -> Result<Lexicon, CliError> {
    if let Some(path) = explicit {
        return read_lexicon(path);
    }
    if let Some(lex) = read_corpus_lexicon(corpus_dir)? {
        return Ok(lex);
    }
    let mut words: Vec<Vec<usize>> = traces.iter().map(|t| t.word.clone()).collect();
    words.sort();
    words.dedup();
    Lexicon::uniform(words.into_iter().map(|w| (w.iter().map(|&c| symbols[c].as_str()).collect(), w)).collect()).map_err(|e| CliError::Data(e.to_string()))
}

fn cmd_train(common: &Common, corpus: &Path, out: &Path, variant: Option<&str>, lexicon: Option<&Path>, report: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(v) = variant {
        cfg.run.variant = Variant::parse(v).ok_or_else(|| CliError::Usage(format!("unknown variant {v:?}; expected hybrid, discrete-hmm or mlp-only")))?;
    }
    require_exists(corpus, "corpus")?;
    let (manifest, traces) = read_corpus(corpus)?;
    let lex = corpus_lexicon(lexicon, corpus, &manifest.alphabet, &traces)?;
    let (model, training) = train_system(&traces, &manifest.alphabet, &lex, &cfg)?;
    write_file(out, &model.to_json())?;
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".report.json");
        PathBuf::from(p)
    });
    let mut bytes = serde_json::to_vec_pretty(&training).expect("report serializes");
    bytes.push(b'\n');
    write_file(&report_path, &bytes)?;
    let _ = writeln!(stdout, "trained {} on {} traces ({} segments) -> {}", model.variant.name(), training.traces, training.segments, out.display());
    Ok(())
}

fn cmd_eval(common: &Common, models: &[PathBuf], corpus: &Path, lexicon: Option<&Path>, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    load_config(common)?;
    require_exists(corpus, "corpus")?;
    let (manifest, traces) = read_corpus(corpus)?;
    let lex = lexicon.map(read_lexicon).transpose()?;
    let set = corpus.file_name().map_or_else(|| "test".to_string(), |n| n.to_string_lossy().into_owned());
    let mut report = EvalReport::default();
    for path in models {
        let mut model = load_model(path)?;
        if model.alphabet.hash != manifest.alphabet_hash {
            return Err(PipelineError::AlphabetMismatch { model: model.alphabet.hash.clone(), corpus: manifest.alphabet_hash.clone() }.into());
        }
        if let Some(lex) = &lex {
            model.lexicon = lex.clone();
        }
        // A second model of the same variant is keyed by its file name.
        let mut system = model.variant.name().to_string();
        if report.systems.contains_key(&system) {
            system = path.file_stem().map_or_else(|| format!("{system}-{}", report.systems.len() + 1), |s| s.to_string_lossy().trim_end_matches(".json").to_string());
        }
        let rec = Recognizer::new(model)?;
        report.insert(&system, &set, evaluate(&rec, &traces)?);
    }
    if let Some(out) = out {
        write_file(out, &report.to_json())?;
    }
    let _ = writeln!(stdout, "system\tset\ttop1\ttop5\ttop10");
    for row in report.rows() {
        let _ = writeln!(stdout, "{row}");
    }
    Ok(())
}

fn cmd_recognize(common: &Common, model: &Path, lexicon: Option<&Path>, topn: usize, ink: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    load_config(common)?;
    if topn == 0 {
        return Err(CliError::Usage("--topn must be at least 1".into()));
    }
    let mut model = load_model(model)?;
    if let Some(path) = lexicon {
        model.lexicon = read_lexicon(path)?;
    }
    require_exists(ink, "ink file")?;
    let bytes = fs::read(ink).map_err(|e| CliError::Data(format!("{}: {e}", ink.display())))?;
    let trace = parse_ink(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", ink.display())))?;
    let rec = Recognizer::new(model)?;
    let r = rec.recognize(&trace, topn)?;
    if r.result.status == DecodeStatus::NoAlignment {
        return Err(CliError::Data("no lexicon entry can align with this trace".into()));
    }
    for line in format_hypotheses(&r.result.hypotheses) {
        let _ = writeln!(stdout, "{line}");
    }
    Ok(())
}

/// `rank TAB label TAB log-score` lines, ranks from 1.
pub fn format_hypotheses(hyps: &[hwr_core::hmm::Hypothesis]) -> Vec<String> {
    hyps.iter().enumerate().map(|(i, h)| format!("{}\t{}\t{}", i + 1, h.label, h.log_score)).collect()
}

fn cmd_inspect(model: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model(model)?;
    let mut lines = vec![
        format!("version\t{}", model.version()),
        format!("variant\t{}", model.variant.name()),
        format!("alphabet\t{} ({})", model.alphabet.symbols.join(" "), &model.alphabet.hash[..12]),
        format!("lexicon\t{} words", model.lexicon.len()),
    ];
    if let Some(mlp) = &model.mlp {
        lines.push(format!("mlp\t{} nets, {} inputs, {} hidden", mlp.nets.len(), mlp.nets[0].input_size, mlp.nets[0].hidden_size));
    }
    if let Some(book) = &model.vq {
        lines.push(format!("vq\t{} centroids of dimension {}", book.size(), book.dimension()));
    }
    if let Some(hmm) = &model.hmm {
        lines.push(format!("hmm\t{} models, {} emitting states", hmm.classes(), hmm.models[0].n_states));
    }
    for (k, v) in &model.config {
        lines.push(format!("config\t{k} = {v}"));
    }
    for l in lines {
        let _ = writeln!(stdout, "{l}");
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command, returning the
/// exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth { common, out, per_class } => cmd_synth(common, out, *per_class, stdout),
        Command::Train { common, corpus, out, variant, lexicon, report } => cmd_train(common, corpus, out, variant.as_deref(), lexicon.as_deref(), report.as_deref(), stdout),
        Command::Eval { common, model, corpus, lexicon, out } => cmd_eval(common, model, corpus, lexicon.as_deref(), out.as_deref(), stdout),
        Command::Recognize { common, model, lexicon, topn, ink } => cmd_recognize(common, model, lexicon.as_deref(), *topn, ink, stdout),
        Command::Inspect { model } => cmd_inspect(model, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}
