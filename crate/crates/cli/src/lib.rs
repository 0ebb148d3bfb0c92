//! Subcommands of the `bilex` tool.
//!
//! Every command reads its inputs from flags or a `--config` file and writes
//! artifacts atomically (temporary file in the target directory, then rename).

pub mod config;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use bilex::lexicon::SeedLexicon;
use bilex::optim::{CandidatePolicy, Init, Regularizer, Schedule, TrainConfig};
use bilex::smt::{self, MarkupMode, MarkupPolicy, NeRule, SystemVocabulary};
use bilex::{BilinearModel, EmbeddingStore, LoadOptions};

use config::ConfigFile;

#[derive(Debug, Parser)]
#[command(name = "bilex", version, about = "Translation lexicons for OOV words from monolingual embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train W on a seed dictionary (grid over --lambda values).
    Train(TrainArgs),
    /// Print the top-n translations of words.
    Translate(TranslateArgs),
    /// Precision@k of a model on the dev split of a dictionary.
    Eval(EvalArgs),
    /// Mark up OOVs of a tokenized corpus with translation options.
    Markup(MarkupArgs),
    /// Count OOVs of a tokenized corpus.
    OovScan(OovScanArgs),
    /// Write low-rank aligned embeddings for both languages.
    ExportCompressed(ExportArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// key=value configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub src_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub tgt_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub src_lang: Option<String>,
    #[arg(long)]
    pub tgt_lang: Option<String>,
    /// Keep only the first N rows of each embedding file.
    #[arg(long)]
    pub limit_vocab: Option<usize>,
    /// Scale embeddings to unit length at load time.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// frobenius, frobenius_squared or trace.
    #[arg(long)]
    pub reg: Option<Regularizer>,
    /// Comma-separated λ values; more than one trains a selection grid.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub eta0: Option<f64>,
    /// constant or inverse_sqrt.
    #[arg(long)]
    pub schedule: Option<Schedule>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Standard deviation of a Gaussian initialization (zeros if absent).
    #[arg(long)]
    pub init_sigma: Option<f64>,
    /// vocabulary or dictionary.
    #[arg(long)]
    pub candidates: Option<CandidatePolicy>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Word to translate.
    pub word: Option<String>,
    /// File with one word per line.
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[arg(long, short = 'n')]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Comma-separated k values.
    #[arg(long)]
    pub k: Option<String>,
    /// Evaluate on every dictionary pair instead of the dev split.
    #[arg(long)]
    pub all_pairs: bool,
    /// Also write per-word gold ranks.
    #[arg(long)]
    pub ranks: bool,
}

#[derive(Debug, Args)]
pub struct MarkupArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// none, verbatim, bwe_all or bwe_cw.
    #[arg(long)]
    pub policy: Option<MarkupMode>,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Do not add the OOV itself as an extra option.
    #[arg(long)]
    pub no_verbatim_option: bool,
    /// Element name of the inline markup.
    #[arg(long)]
    pub tag: Option<String>,
    /// Output file for the marked-up corpus (default: <out-dir>/<corpus>.markup).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OovScanArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Count every OOV as a content word.
    #[arg(long)]
    pub no_ne_rule: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rank of the factorization (default: numerical rank of W).
    #[arg(long)]
    pub k: Option<usize>,
}

/// Runs a parsed command; data meant for standard output goes to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Translate(args) => cmd_translate(args, stdout),
        Command::Eval(args) => cmd_eval(args, stdout),
        Command::Markup(args) => cmd_markup(args),
        Command::OovScan(args) => cmd_oov_scan(args, stdout),
        Command::ExportCompressed(args) => cmd_export_compressed(args),
    }
}

/// Writes `path` through a temporary file in the same directory, renamed into
/// place once `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let tmp = builder
        .tempfile_in(dir)
        .with_context(|| format!("temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Inputs {
    cfg: ConfigFile,
}

impl Inputs {
    fn new(common: &Common) -> Result<Self> {
        let cfg = match &common.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Ok(Inputs { cfg })
    }

    /// A required input path that must exist.
    fn input(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let path = self
            .cfg
            .pick(flag.clone(), key)?
            .with_context(|| format!("missing --{} (or `{}` in the config file)", key.replace('_', "-"), key))?;
        ensure!(path.exists(), "{key} path does not exist: {}", path.display());
        Ok(path)
    }

    fn out_dir(&self, common: &Common) -> Result<PathBuf> {
        let dir = self.cfg.pick_or(common.out_dir.clone(), "out_dir", PathBuf::from("."))?;
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn seed(&self, common: &Common) -> Result<u64> {
        self.cfg.pick_or(common.seed, "seed", 0)
    }

    fn load_stores(&self, common: &Common) -> Result<(EmbeddingStore, EmbeddingStore)> {
        let limit = self.cfg.pick(common.limit_vocab, "limit_vocab")?;
        let normalize = self.cfg.switch(common.normalize, "normalize", false)?;
        let src_lang = self.cfg.pick_or(common.src_lang.clone(), "src_lang", "src".to_owned())?;
        let tgt_lang = self.cfg.pick_or(common.tgt_lang.clone(), "tgt_lang", "tgt".to_owned())?;
        let mut stores = Vec::with_capacity(2);
        for (flag, key, lang) in [
            (&common.src_embeddings, "src_embeddings", src_lang),
            (&common.tgt_embeddings, "tgt_embeddings", tgt_lang),
        ] {
            let path = self.input(flag, key)?;
            let opts = LoadOptions::new(lang).limit(limit).normalize(normalize);
            let (store, report) =
                EmbeddingStore::load(&path, &opts).with_context(|| format!("loading {}", path.display()))?;
            log::info!(
                "loaded embeddings path={} tokens={} dim={} duplicates={}",
                path.display(),
                store.len(),
                store.dimension(),
                report.duplicates
            );
            stores.push(store);
        }
        let tgt = stores.pop().expect("two stores");
        let src = stores.pop().expect("two stores");
        Ok((src, tgt))
    }

    fn load_lexicon(
        &self,
        flag: &Option<PathBuf>,
        src: &EmbeddingStore,
        tgt: &EmbeddingStore,
        fraction: Option<f64>,
        seed: u64,
    ) -> Result<SeedLexicon> {
        let path = self.input(flag, "dictionary")?;
        let (lex, report) =
            SeedLexicon::load(&path, src, tgt).with_context(|| format!("loading {}", path.display()))?;
        log::info!(
            "loaded dictionary path={} kept={} dropped={} duplicates={} multiword={}",
            path.display(),
            report.kept,
            report.dropped,
            report.duplicates,
            report.multiword
        );
        let fraction = self.cfg.pick_or(fraction, "train_fraction", 0.7)?;
        Ok(lex.split(fraction, seed)?)
    }

    fn load_model<'a>(
        &self,
        flag: &Option<PathBuf>,
        src: &'a EmbeddingStore,
        tgt: &'a EmbeddingStore,
    ) -> Result<BilinearModel<'a>> {
        let path = self.input(flag, "model")?;
        let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        BilinearModel::read_from(BufReader::new(file), src, tgt).with_context(|| format!("reading model {}", path.display()))
    }
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("invalid {what} {s:?}: {e}"))
        })
        .collect()
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let ctx = Inputs::new(&args.common)?;
    let cfg = &ctx.cfg;
    let seed = ctx.seed(&args.common)?;
    let (src, tgt) = ctx.load_stores(&args.common)?;
    let lex = ctx.load_lexicon(&args.dictionary, &src, &tgt, args.train_fraction, seed)?;
    log::info!(
        "split train={} dev={} seed={seed}",
        lex.train_indices().len(),
        lex.dev_indices().len()
    );

    let lambdas: Vec<f64> = parse_list(&cfg.pick_or(args.lambda.clone(), "lambda", "0.01".to_owned())?, "lambda")?;
    let init = match cfg.pick(args.init_sigma, "init_sigma")? {
        Some(sigma) => Init::Gaussian { sigma },
        None => Init::Zeros,
    };
    let base = TrainConfig {
        regularizer: cfg.pick_or(args.reg, "reg", Regularizer::Trace)?,
        lambda: 0.0,
        eta0: cfg.pick_or(args.eta0, "eta0", 0.1)?,
        schedule: cfg.pick_or(args.schedule, "schedule", Schedule::InverseSqrt)?,
        epochs: cfg.pick_or(args.epochs, "epochs", 100)?,
        init,
        rng_seed: seed,
        early_stop_patience: cfg.pick(args.patience, "patience")?,
        candidates: cfg.pick_or(args.candidates, "candidates", CandidatePolicy::Vocabulary)?,
    };
    let grid: Vec<TrainConfig> = lambdas
        .into_iter()
        .map(|lambda| TrainConfig { lambda, ..base.clone() })
        .collect();

    let selection = bilex::select_model(&grid, &src, &tgt, &lex)?;
    let out = ctx.out_dir(&args.common)?;
    write_atomic(&out.join("model.bin"), |w| Ok(selection.model.write_to(w)?))?;
    write_atomic(&out.join("train_report.log"), |w| Ok(selection.best_report().write_log(w)?))?;
    write_atomic(&out.join("grid.tsv"), |w| Ok(selection.write_table(w)?))?;
    let report = selection.best_report();
    log::info!(
        "trained cell={} lambda={} best_epoch={} dev_p1={} rank={} out={}",
        selection.best_index,
        grid[selection.best_index].lambda,
        report.best_epoch,
        report.best_dev_p1().map_or("NA".into(), |p| p.to_string()),
        report.final_rank,
        out.display()
    );
    Ok(())
}

pub fn cmd_translate(args: TranslateArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = Inputs::new(&args.common)?;
    let n = ctx.cfg.pick_or(args.top_n, "top_n", 10)?;
    ensure!(n > 0, "usage: --top-n must be at least 1");
    let (src, tgt) = ctx.load_stores(&args.common)?;
    let model = ctx.load_model(&args.model, &src, &tgt)?;

    let (words, list_mode) = match (&args.word, &args.words) {
        (Some(w), None) => (vec![w.clone()], false),
        (None, Some(path)) => {
            let file = File::open(path).with_context(|| format!("words path does not exist: {}", path.display()))?;
            let mut words = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    words.push(line.trim().to_owned());
                }
            }
            (words, true)
        }
        _ => bail!("usage: give exactly one of WORD or --words FILE"),
    };
    for word in words {
        if !src.contains(&word) {
            writeln!(stdout, "OOV-in-embeddings {word}")?;
            continue;
        }
        if list_mode {
            writeln!(stdout, "# {word}")?;
        }
        let dist = model.top_n(&word, n)?;
        for (rank, t) in (1..).zip(&dist.entries) {
            writeln!(stdout, "{rank} {} {}", t.token, t.probability)?;
        }
    }
    Ok(())
}

pub fn cmd_eval(args: EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = Inputs::new(&args.common)?;
    let seed = ctx.seed(&args.common)?;
    let ks: Vec<usize> = parse_list(&ctx.cfg.pick_or(args.k.clone(), "k", "1,5,10".to_owned())?, "k")?;
    let (src, tgt) = ctx.load_stores(&args.common)?;
    let model = ctx.load_model(&args.model, &src, &tgt)?;
    let lex = ctx.load_lexicon(&args.dictionary, &src, &tgt, args.train_fraction, seed)?;
    let pairs = if args.all_pairs { lex.pairs().to_vec() } else { lex.dev_pairs() };
    let result = bilex::precision_at_k(&model, &pairs, &ks)?;
    result.write_table(&mut *stdout)?;
    let out = ctx.out_dir(&args.common)?;
    write_atomic(&out.join("eval.tsv"), |w| Ok(result.write_table(w)?))?;
    if args.ranks {
        write_atomic(&out.join("ranks.tsv"), |w| Ok(result.write_ranks(w)?))?;
    }
    log::info!(
        "evaluated types={} uncovered={}",
        result.evaluated,
        result.uncovered
    );
    Ok(())
}

fn scan(ctx: &Inputs, corpus: &Option<PathBuf>, vocab: &Option<PathBuf>, ne_rule: bool) -> Result<ScanOutput> {
    let corpus_path = ctx.input(corpus, "corpus")?;
    let vocab_path = ctx.input(vocab, "vocab")?;
    let corpus = smt::read_corpus(&corpus_path)?;
    let vocab = SystemVocabulary::load(&vocab_path)?;
    let rule = NeRule::default();
    let (report, flags) = smt::scan_oov(&corpus, &vocab, ne_rule.then_some(&rule))?;
    Ok(ScanOutput {
        corpus_path,
        corpus,
        report,
        flags,
    })
}

struct ScanOutput {
    corpus_path: PathBuf,
    corpus: Vec<Vec<String>>,
    report: smt::OovReport,
    flags: Vec<Vec<smt::TokenFlag>>,
}

pub fn cmd_oov_scan(args: OovScanArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = Inputs::new(&args.common)?;
    let ne_rule = !ctx.cfg.switch(args.no_ne_rule, "no_ne_rule", false)?;
    let scanned = scan(&ctx, &args.corpus, &args.vocab, ne_rule)?;
    scanned.report.write_summary(&mut *stdout)?;
    if args.common.out_dir.is_some() || ctx.cfg.raw("out_dir").is_some() {
        let out = ctx.out_dir(&args.common)?;
        write_atomic(&out.join("oov_report.tsv"), |w| Ok(scanned.report.write_summary(w)?))?;
    }
    Ok(())
}

pub fn cmd_markup(args: MarkupArgs) -> Result<()> {
    let ctx = Inputs::new(&args.common)?;
    let cfg = &ctx.cfg;
    let policy = MarkupPolicy {
        mode: cfg.pick_or(args.policy, "policy", MarkupMode::BweCw)?,
        top_n: cfg.pick_or(args.top_n, "top_n", 10)?,
        add_verbatim_option: !cfg.switch(args.no_verbatim_option, "no_verbatim_option", false)?,
    };
    ensure!(policy.top_n > 0, "usage: --top-n must be at least 1");
    let tag = cfg.pick_or(args.tag.clone(), "tag", smt::DEFAULT_TAG.to_owned())?;
    ensure!(
        !tag.is_empty() && tag.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-'),
        "invalid tag name {tag:?}"
    );
    let mut scanned = scan(&ctx, &args.corpus, &args.vocab, true)?;

    let needs_model = matches!(policy.mode, MarkupMode::BweAll | MarkupMode::BweCw);
    let stores = if needs_model { Some(ctx.load_stores(&args.common)?) } else { None };
    let model = match &stores {
        Some((src, tgt)) => Some(ctx.load_model(&args.model, src, tgt)?),
        None => None,
    };
    let (lines, fallbacks) = smt::markup_corpus(&scanned.corpus, &scanned.flags, model.as_ref(), &policy, &tag)?;
    scanned.report.embedding_fallbacks = fallbacks;

    let out = ctx.out_dir(&args.common)?;
    let output = match cfg.pick(args.output.clone(), "output")? {
        Some(p) => p,
        None => {
            let name = scanned
                .corpus_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "corpus".into());
            out.join(format!("{name}.markup"))
        }
    };
    write_atomic(&output, |w| {
        for line in &lines {
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    write_atomic(&out.join("oov_report.tsv"), |w| Ok(scanned.report.write_summary(w)?))?;
    log::info!(
        "markup policy={} top_n={} oov_all={} oov_cw={} fallbacks={fallbacks} out={}",
        policy.mode,
        policy.top_n,
        scanned.report.oov_all,
        scanned.report.oov_cw,
        output.display()
    );
    Ok(())
}

/// `<stem>-cmp-k<K>.txt` next to the other outputs.
fn compressed_name(path: &Path, k: usize) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "embeddings".into());
    format!("{stem}-cmp-k{k}.txt")
}

pub fn cmd_export_compressed(args: ExportArgs) -> Result<()> {
    let ctx = Inputs::new(&args.common)?;
    let (src, tgt) = ctx.load_stores(&args.common)?;
    let model = ctx.load_model(&args.model, &src, &tgt)?;
    let k = ctx.cfg.pick(args.k, "k")?;
    let compressed = bilex::compress(&model, k)?;
    let out = ctx.out_dir(&args.common)?;
    let src_path = ctx.input(&args.common.src_embeddings, "src_embeddings")?;
    let tgt_path = ctx.input(&args.common.tgt_embeddings, "tgt_embeddings")?;
    let mut src_name = compressed_name(&src_path, compressed.rank_k);
    let tgt_name = compressed_name(&tgt_path, compressed.rank_k);
    if src_name == tgt_name {
        src_name = format!("src-{src_name}");
    }
    write_atomic(&out.join(&src_name), |w| Ok(compressed.write_source_text(w)?))?;
    write_atomic(&out.join(&tgt_name), |w| Ok(compressed.write_target_text(w)?))?;
    log::info!("exported k={} source={src_name} target={tgt_name}", compressed.rank_k);
    Ok(())
}
