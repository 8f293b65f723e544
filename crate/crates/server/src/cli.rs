//! The `supdim` command-line tool.

use std::error::Error;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use supdim::binfmt::atomic_write;
use supdim::classifier::{SupervisedDimension, TrainConfig};
use supdim::crosslingual::{apply_dimension_foreign, procrustes_align, AlignmentMap, BilingualLexicon};
use supdim::curation::{CurationSession, NegativeSampling};
use supdim::docfeatures::{self, assign_words, doc_features, scatter_export, Assignment, DocError, StopWords};
use supdim::embedding::{load_text_embeddings, open_embeddings, save_cache, EmbeddingMatrix, DEFAULT_MAX_WORDS};
use supdim::ranking::CandidateList;
use supdim::synthetic::{TransferCorpus, TransferCorpusSpec};
use supdim::transfer::{build_activation_table, demo_downstream, export_dense_init, DownstreamMode, LabeledDoc};

use crate::config::{ServiceConfig, ENV_DATA_DIR, ENV_LISTEN};

pub type CliResult<T = ()> = Result<T, Box<dyn Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "supdim", version, about = "Curate and apply supervised dimensions over word embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a text embedding file, L2-normalize it and write the binary cache.
    CacheEmbeddings(CacheArgs),
    /// Run scripted curation rounds from a label file.
    Curate(CurateArgs),
    /// Write the thresholded dictionary of a session's dimension.
    ExportDict(ExportDictArgs),
    /// Fit an orthogonal map from a source space onto a target space.
    Align(AlignArgs),
    /// Score a foreign vocabulary with a trained dimension.
    ApplyForeign(ApplyForeignArgs),
    /// Per-document mean activations, word assignment and scatter CSV.
    DocFeatures(DocFeaturesArgs),
    /// Export dimensions as dense-layer weights and optional activation table.
    ExportDense(ExportDenseArgs),
    /// Compare plain and activation-augmented document classifiers.
    DemoDownstream(DemoArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Loss weight on positive examples.
    #[arg(long, default_value_t = 2.0)]
    pub positive_class_weight: f64,
    /// L2 penalty coefficient on the weights.
    #[arg(long, default_value_t = 1.0)]
    pub l2_strength: f64,
    /// Gradient infinity-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: u32,
}

impl TrainArgs {
    fn config(&self) -> CliResult<TrainConfig> {
        let c = TrainConfig {
            positive_class_weight: self.positive_class_weight,
            l2_strength: self.l2_strength,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Text file: optional "count dim" header, then "word v1 .. vd" lines.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep the first N valid words; 0 keeps everything.
    #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
    pub max_words: usize,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Embeddings (binary cache or text file).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Session file; loaded when it exists, always written at the end.
    #[arg(long)]
    pub session: PathBuf,
    /// Comma-separated seed words for a new session.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<String>,
    #[arg(long, default_value = "dimension")]
    pub name: String,
    /// Label script: "+word" accepts, "-word" rejects, "---" ends a batch, "#" comments.
    /// Each batch is applied and then followed by one training round.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Rounds to run when no label script is given.
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    /// Candidates per round.
    #[arg(long, short, default_value_t = 25)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    /// Train on expert negatives only.
    #[arg(long)]
    pub no_auto_negatives: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ExportDictArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write JSON instead of "word<TAB>score" lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Space to be mapped (e.g. the foreign language).
    #[arg(long)]
    pub source: PathBuf,
    /// Space mapped into (e.g. the training language).
    #[arg(long)]
    pub target: PathBuf,
    /// "source<TAB>target" word pairs, one per line.
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ApplyForeignArgs {
    /// Session file or dimension JSON.
    #[arg(long)]
    pub dimension: PathBuf,
    #[arg(long)]
    pub foreign: PathBuf,
    /// Alignment map from `align`; omit for spaces that are already aligned.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, short, default_value_t = 25)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct DocFeaturesArgs {
    /// Session files or dimension JSON files; repeat for several dimensions.
    #[arg(long = "dimension", required = true)]
    pub dimensions: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// One document per line, "doc_id<TAB>text" or bare text (id = line number).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Average over unique tokens instead of all tokens.
    #[arg(long)]
    pub dedupe: bool,
    /// Stop word file (one per line); the bundled English list is the default.
    #[arg(long, conflicts_with = "no_stopwords")]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub no_stopwords: bool,
    /// Feature CSV output; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Scatter CSV for the first two dimensions.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// Word list (one per line) to assign to their max-activation dimension.
    #[arg(long)]
    pub assign: Option<PathBuf>,
    #[arg(long, default_value_t = docfeatures::ASSIGNMENT_FLOOR)]
    pub floor: f64,
}

#[derive(Debug, Args)]
pub struct ExportDenseArgs {
    #[arg(long = "dimension", required = true)]
    pub dimensions: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the per-word activation table (".csv" for CSV, otherwise binary).
    #[arg(long, requires = "embeddings")]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Run on generated corpora instead of files.
    #[arg(long)]
    pub synthetic: bool,
    /// Number of generated corpora (seeds 0..N).
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// "class<TAB>text" lines.
    #[arg(long, required_unless_present = "synthetic")]
    pub train: Option<PathBuf>,
    #[arg(long, required_unless_present = "synthetic")]
    pub test: Option<PathBuf>,
    #[arg(long, required_unless_present = "synthetic")]
    pub embeddings: Option<PathBuf>,
    #[arg(long = "dimension")]
    pub dimensions: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Config file (key = value lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `listen` and SUPDIM_LISTEN.
    #[arg(long)]
    pub listen: Option<String>,
    /// Overrides `data_dir` and SUPDIM_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// One batch of expert decisions from a label script.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelBatch {
    pub accept: Vec<String>,
    pub reject: Vec<String>,
}

pub fn parse_label_script(text: &str) -> CliResult<Vec<LabelBatch>> {
    let mut batches = Vec::new();
    let mut current = LabelBatch::default();
    let mut dirty = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "---" {
            batches.push(std::mem::take(&mut current));
            dirty = false;
            continue;
        }
        let (sign, word) = line.split_at(1);
        let word = word.trim();
        if word.is_empty() {
            return Err(format!("label script line {}: missing word", i + 1).into());
        }
        match sign {
            "+" => current.accept.push(word.to_owned()),
            "-" => current.reject.push(word.to_owned()),
            _ => return Err(format!("label script line {}: expected +word, -word or ---", i + 1).into()),
        }
        dirty = true;
    }
    if dirty {
        batches.push(current);
    }
    Ok(batches)
}

/// A session file's current dimension, or a bare dimension JSON file.
pub fn load_dimension(path: &Path) -> CliResult<SupervisedDimension> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if value.get("labels").is_some() {
        let session = CurationSession::from_json(&text)?;
        return session
            .current_dimension()
            .cloned()
            .ok_or_else(|| format!("{}: session has not been trained yet", path.display()).into());
    }
    Ok(serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => atomic_write(p, text.as_bytes()).map_err(|e| format!("{}: {e}", p.display()).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_candidates(round: Option<u32>, list: &CandidateList) {
    for (rank, c) in list.entries.iter().enumerate() {
        match round {
            Some(r) => println!("{r}\t{}\t{}\t{:.6}", rank + 1, c.word, c.score),
            None => println!("{}\t{}\t{:.6}", rank + 1, c.word, c.score),
        }
    }
}

fn read_docs(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split_once('\t') {
            Some((id, body)) => (id.to_owned(), body.to_owned()),
            None => ((i + 1).to_string(), l.to_owned()),
        })
        .collect())
}

fn read_labeled_docs(path: &Path) -> CliResult<Vec<LabeledDoc>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (class, body) =
            l.split_once('\t').ok_or_else(|| format!("{}:{}: expected class<TAB>text", path.display(), i + 1))?;
        out.push(LabeledDoc::new(body, class));
    }
    Ok(out)
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::CacheEmbeddings(a) => cache_embeddings(a),
        Command::Curate(a) => curate(a),
        Command::ExportDict(a) => export_dict(a),
        Command::Align(a) => align(a),
        Command::ApplyForeign(a) => apply_foreign(a),
        Command::DocFeatures(a) => doc_features_cmd(a),
        Command::ExportDense(a) => export_dense(a),
        Command::DemoDownstream(a) => demo(a),
        Command::Serve(a) => serve(a),
    }
}

fn cache_embeddings(a: CacheArgs) -> CliResult {
    let limit = (a.max_words > 0).then_some(a.max_words);
    let loaded = load_text_embeddings(&a.input, limit)?;
    let before = loaded.matrix.len();
    let m = loaded.matrix.normalize()?;
    save_cache(&m, &a.output)?;
    eprintln!(
        "{} words x {} dims written to {} ({} skipped lines, {} zero vectors dropped)",
        m.len(),
        m.dim(),
        a.output.display(),
        loaded.stats.skipped(),
        before - m.len()
    );
    Ok(())
}

fn curate(a: CurateArgs) -> CliResult {
    let m = open_embeddings(&a.embeddings, Some(DEFAULT_MAX_WORDS))?;
    let config = a.train.config()?;
    let mut session = if a.session.exists() {
        let s = CurationSession::load(&a.session)?;
        s.check_vocab(&m)?;
        s
    } else {
        let id = a.session.file_stem().and_then(|s| s.to_str()).unwrap_or("session").to_owned();
        let s = CurationSession::init(id, &a.name, &m, &a.seeds, a.rng_seed)?;
        if a.no_auto_negatives {
            s.with_sampling(NegativeSampling::disabled())
        } else {
            s
        }
    };
    let batches = match &a.labels {
        Some(p) => parse_label_script(&std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?)?,
        None => Vec::new(),
    };
    let script: Vec<Option<&LabelBatch>> =
        if batches.is_empty() { vec![None; a.rounds.max(1)] } else { batches.iter().map(Some).collect() };
    for batch in script {
        if let Some(b) = batch {
            let counts = session.apply_labels(&m, &b.accept, &b.reject)?;
            eprintln!(
                "after round {}: +{} -{} -> {} positives, {} negatives",
                session.round(),
                b.accept.len(),
                b.reject.len(),
                counts.positives,
                counts.negatives
            );
        }
        let c = session.run_round(&m, &config, a.k)?;
        print_candidates(Some(session.round()), &c);
        session.save(&a.session)?;
    }
    Ok(())
}

fn export_dict(a: ExportDictArgs) -> CliResult {
    let m = open_embeddings(&a.embeddings, Some(DEFAULT_MAX_WORDS))?;
    let session = CurationSession::load(&a.session)?;
    let dict = session.export_dictionary(&m, a.threshold)?;
    let text = if a.json { serde_json::to_string_pretty(&dict)? + "\n" } else { dict.to_text() };
    write_output(a.output.as_deref(), &text)
}

fn align(a: AlignArgs) -> CliResult {
    let source = open_embeddings(&a.source, Some(DEFAULT_MAX_WORDS))?;
    let target = open_embeddings(&a.target, Some(DEFAULT_MAX_WORDS))?;
    let lexicon = BilingualLexicon::load(&a.lexicon)?;
    let map = procrustes_align(&source, &target, &lexicon)?;
    map.save(&a.output)?;
    eprintln!(
        "fit residual {:.6}, orthogonality error {:.3e}, written to {}",
        map.fit_residual,
        map.orthogonality_error(),
        a.output.display()
    );
    Ok(())
}

fn apply_foreign(a: ApplyForeignArgs) -> CliResult {
    let dim = load_dimension(&a.dimension)?;
    let foreign = open_embeddings(&a.foreign, Some(DEFAULT_MAX_WORDS))?;
    let map = a.map.as_deref().map(AlignmentMap::load).transpose()?;
    let c = apply_dimension_foreign(&dim, &foreign, map.as_ref(), a.k)?;
    print_candidates(None, &c);
    Ok(())
}

fn csv_bytes<I, R>(rows: I) -> CliResult<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)?)
}

fn doc_features_cmd(a: DocFeaturesArgs) -> CliResult {
    let m = open_embeddings(&a.embeddings, Some(DEFAULT_MAX_WORDS))?;
    let dims = a.dimensions.iter().map(|p| load_dimension(p)).collect::<CliResult<Vec<_>>>()?;
    let stopwords = match (&a.stopwords, a.no_stopwords) {
        (_, true) => StopWords::none(),
        (Some(p), _) => StopWords::load(p)?,
        (None, _) => StopWords::english(),
    };
    if let Some(words_path) = &a.assign {
        let text = std::fs::read_to_string(words_path).map_err(|e| format!("{}: {e}", words_path.display()))?;
        let words: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        for w in assign_words(&words, &dims, &m, a.floor)? {
            let label = match &w.assignment {
                Assignment::Dimension(name) => name.clone(),
                Assignment::Unassigned => "UNASSIGNED".into(),
                Assignment::UnknownWord => "UNKNOWN".into(),
            };
            let score = w.max_score.map(|s| format!("{s:.6}")).unwrap_or_default();
            println!("{}\t{label}\t{score}", w.word);
        }
    }
    let Some(docs_path) = &a.docs else {
        return Ok(());
    };
    let docs = read_docs(docs_path)?;
    if let Some(scatter) = &a.scatter {
        if dims.len() < 2 {
            return Err("--scatter needs at least two dimensions".into());
        }
        let s = scatter_export(&docs, &dims[0], &dims[1], &m, &stopwords, scatter)?;
        eprintln!("scatter: {} documents, {} empty", s.documents, s.empty_documents);
    }
    let header = std::iter::once("doc_id".to_string())
        .chain(dims.iter().map(|d| d.name.clone()))
        .chain(["token_count".to_string()])
        .collect::<Vec<_>>();
    let mut rows = vec![header];
    for (id, text) in &docs {
        let tokens = docfeatures::tokenize(text);
        let mut row = vec![id.clone()];
        match doc_features(id, &tokens, &dims, &m, &stopwords, a.dedupe) {
            Ok(f) => {
                row.extend(f.values.iter().map(f64::to_string));
                row.push(f.token_count_used.to_string());
            }
            Err(DocError::EmptyDocument) => {
                row.extend(dims.iter().map(|_| String::new()));
                row.push("0".into());
            }
            Err(e) => return Err(e.into()),
        }
        rows.push(row);
    }
    let out = csv_bytes(rows)?;
    write_output(a.output.as_deref(), &out)
}

fn export_dense(a: ExportDenseArgs) -> CliResult {
    let dims = a.dimensions.iter().map(|p| load_dimension(p)).collect::<CliResult<Vec<_>>>()?;
    let init = export_dense_init(&dims, &a.output)?;
    eprintln!("{} x {} weights written to {}", init.names().len(), init.dim(), a.output.display());
    if let (Some(path), Some(emb)) = (&a.activations, &a.embeddings) {
        let m = open_embeddings(emb, Some(DEFAULT_MAX_WORDS))?;
        let table = build_activation_table(&dims, &m)?;
        if path.extension().is_some_and(|e| e == "csv") {
            table.write_csv(path)?;
        } else {
            table.save(path)?;
        }
        eprintln!("activation table for {} words written to {}", table.len(), path.display());
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn demo(a: DemoArgs) -> CliResult {
    let config = TrainConfig::default();
    let mut report = String::new();
    let _ = writeln!(report, "run\tplain_acc\taugmented_acc\tplain_f1\taugmented_f1");
    let mut gains = Vec::new();
    let mut record = |name: String,
                      train: &[LabeledDoc],
                      test: &[LabeledDoc],
                      dims: &[SupervisedDimension],
                      m: &EmbeddingMatrix|
     -> CliResult {
        let stop = StopWords::english();
        let p = demo_downstream(train, test, dims, m, DownstreamMode::Plain, &config, &stop)?;
        let g = demo_downstream(train, test, dims, m, DownstreamMode::Augmented, &config, &stop)?;
        let _ = writeln!(report, "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", p.accuracy, g.accuracy, p.macro_f1, g.macro_f1);
        if p.train_skipped + p.test_skipped > 0 {
            eprintln!(
                "{name}: skipped {} train and {} test documents with no usable tokens",
                p.train_skipped, p.test_skipped
            );
        }
        gains.push(g.accuracy - p.accuracy);
        Ok(())
    };
    if a.synthetic {
        let spec = TransferCorpusSpec::default();
        for seed in 0..a.seeds.max(1) {
            let corpus = TransferCorpus::generate(&spec, seed);
            let dims = corpus.dictionary_dimensions(200, &config)?;
            record(format!("seed{seed}"), &corpus.train, &corpus.test, &dims, &corpus.matrix)?;
        }
    } else {
        let (train, test, emb) = (a.train.unwrap(), a.test.unwrap(), a.embeddings.unwrap());
        if a.dimensions.is_empty() {
            return Err("--dimension is required with file input".into());
        }
        let m = open_embeddings(&emb, Some(DEFAULT_MAX_WORDS))?;
        let dims = a.dimensions.iter().map(|p| load_dimension(p)).collect::<CliResult<Vec<_>>>()?;
        record("files".into(), &read_labeled_docs(&train)?, &read_labeled_docs(&test)?, &dims, &m)?;
    }
    print!("{report}");
    println!("median accuracy gain: {:.4}", median(gains));
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let mut config = ServiceConfig::load(&a.config)?;
    config.apply_env(|k| std::env::var(k).ok().filter(|_| k == ENV_LISTEN || k == ENV_DATA_DIR))?;
    if let Some(l) = a.listen {
        config.listen = l.parse().map_err(|e| format!("--listen: {e}"))?;
    }
    if let Some(d) = a.data_dir {
        config.data_dir = d;
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::serve(config))
}
