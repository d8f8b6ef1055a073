use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use moc_core::anomaly::{AnomalyConfig, AnomalyMode};
use moc_core::baselines::Lexicon;
use moc_core::bocpd::{BocpdPreset, PoissonGammaPrior};
use moc_core::evaluation::{
    evaluate_methods, raw_vote_table, scale_vote_table, timeline_density, EvalConfig, MethodRuns,
    MvAggregation,
};
use moc_core::features::{
    extract_features, feature_names, label_by_quartile, read_scores, train_logreg, LogRegConfig,
};
use moc_core::io::{self as mio, CmocRecord, TimelineRecord};
use moc_core::model::{to_daily_counts, CountSource, EventHistory};
use moc_core::pipeline::{
    annotated_timelines, detect_user, extract_timelines, methods_from_records, standard_detectors,
    DetectorSpec, ExtractConfig,
};
use moc_core::report;
use moc_core::synth::{generate_corpus, CorpusSpec};
use moc_core::timeline::TimelineSpan;

mod exit;
use exit::{config_error, exit_code};

#[derive(Parser)]
#[command(
    name = "moc",
    version,
    about = "Moment-of-change candidate detection and timeline evaluation"
)]
struct Cli {
    /// Worker threads for per-user work (0 = all cores). Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted changes and simulated annotations.
    Synth(SynthArgs),
    /// Run detectors over posting histories and write candidate days.
    Detect(DetectArgs),
    /// Cut candidate timelines around detected days.
    Extract(ExtractArgs),
    /// Score candidate sets against annotated timelines.
    Evaluate(EvaluateArgs),
    /// Rank methods from a raw vote table.
    Rank(RankArgs),
    /// Fit dense-vs-sparse logistic regression on per-post scores.
    Features(FeaturesArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON corpus specification.
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the specification.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Posts,
    Comments,
}

impl From<SourceArg> for CountSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Posts => CountSource::Posts,
            SourceArg::Comments => CountSource::Comments,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    High,
    Low,
    Both,
}

impl From<ModeArg> for AnomalyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::High => AnomalyMode::High,
            ModeArg::Low => AnomalyMode::Low,
            ModeArg::Both => AnomalyMode::HighAndLow,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    /// Posts JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Candidate-day JSONL to write.
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated: bocpd1, bocpd2, bocpd (needs --alpha0/--beta0/--hazard),
    /// ad, keywords, random, everyday, or all.
    #[arg(long, default_value = "bocpd1")]
    method: String,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long)]
    hazard: Option<f64>,
    #[arg(long, value_enum, default_value = "posts")]
    source: SourceArg,
    #[arg(long, value_enum, default_value = "high")]
    mode: ModeArg,
    #[arg(long, default_value_t = 90)]
    window_days: usize,
    #[arg(long, default_value_t = 14)]
    silence_min_days: usize,
    #[arg(long, default_value_t = 0.01)]
    prob_threshold: f64,
    /// One phrase per line; required by the keywords method.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Seed range for the random baseline, inclusive: `0:99`.
    #[arg(long, default_value = "0:99")]
    seeds: String,
    /// Write an SVG of this user's daily counts with the detected days.
    #[arg(long, requires = "svg")]
    plot_user: Option<String>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cmocs: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 7)]
    radius: i64,
    #[arg(long, default_value_t = 10)]
    min_posts: usize,
    #[arg(long, default_value_t = 150)]
    max_posts: usize,
    /// Drop timelines with a silent stretch longer than this many days.
    #[arg(long)]
    max_silent_days: Option<usize>,
    /// Keep one randomly chosen timeline per user and method.
    #[arg(long)]
    one_per_user: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MvModeArg {
    Sum,
    PerTau,
}

impl From<MvModeArg> for MvAggregation {
    fn from(m: MvModeArg) -> Self {
        match m {
            MvModeArg::Sum => MvAggregation::SumThenScale,
            MvModeArg::PerTau => MvAggregation::ScalePerTau,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    timelines: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Candidate-day JSONL; repeat for several files.
    #[arg(long, required = true)]
    cmocs: Vec<PathBuf>,
    /// Comma-separated method ids to score even if they produced no candidates.
    #[arg(long, value_delimiter = ',')]
    include_methods: Vec<String>,
    #[arg(long, default_value_t = 5)]
    tau: u32,
    /// Inclusive margin range for Medoid Votes, `lo:hi`.
    #[arg(long, default_value = "0:6")]
    mv_taus: String,
    #[arg(long, value_enum, default_value = "sum")]
    mv_mode: MvModeArg,
    /// Scorecard CSV.
    #[arg(long)]
    output: PathBuf,
    /// Raw vote totals per method and margin, for `rank`.
    #[arg(long)]
    votes_output: Option<PathBuf>,
    #[arg(long)]
    density_svg: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    votes: PathBuf,
    /// Restrict to this inclusive margin range, `lo:hi`.
    #[arg(long)]
    mv_taus: Option<String>,
    #[arg(long, value_enum, default_value = "sum")]
    mv_mode: MvModeArg,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    timelines: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// Per-post scores JSONL.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| anyhow!(e))?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Extract(a) => extract(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Rank(a) => rank(a),
        Command::Features(a) => features(a),
    }
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_histories(path: &Path) -> anyhow::Result<BTreeMap<String, EventHistory>> {
    mio::read_histories(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    Ok(mio::read_jsonl(open(path)?)
        .with_context(|| format!("reading {}", path.display()))?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// `lo:hi`, inclusive.
fn parse_range(raw: &str) -> anyhow::Result<(u64, u64)> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| config_error(format!("expected lo:hi, got {raw:?}")))?;
    let lo: u64 = lo
        .trim()
        .parse()
        .map_err(|_| config_error(format!("bad range start in {raw:?}")))?;
    let hi: u64 = hi
        .trim()
        .parse()
        .map_err(|_| config_error(format!("bad range end in {raw:?}")))?;
    if lo > hi {
        return Err(config_error(format!("empty range {raw:?}")));
    }
    Ok((lo, hi))
}

fn tau_range(raw: &str) -> anyhow::Result<Vec<u32>> {
    let (lo, hi) = parse_range(raw)?;
    let hi = u32::try_from(hi).map_err(|_| config_error("margin too large"))?;
    Ok((lo as u32..=hi).collect())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(&a.spec).with_context(|| format!("cannot read {}", a.spec.display()))?;
    let mut spec: CorpusSpec =
        serde_json::from_str(&text).map_err(|e| config_error(format!("corpus spec: {e}")))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let corpus = generate_corpus(&spec)?;
    fs::create_dir_all(&a.output_dir)?;
    let dir = &a.output_dir;
    mio::write_histories(create(&dir.join("posts.jsonl"))?, corpus.histories.values())?;
    mio::write_jsonl(create(&dir.join("annotations.jsonl"))?, &corpus.annotations)?;
    let records: Vec<TimelineRecord> = corpus
        .timeline_spans()
        .iter()
        .map(TimelineSpan::to_record)
        .collect();
    mio::write_jsonl(create(&dir.join("timelines.jsonl"))?, &records)?;
    let mut planted = serde_json::to_string_pretty(&corpus.planted)?;
    planted.push('\n');
    write_text(&dir.join("planted-cps.json"), &planted)?;
    Ok(())
}

fn detectors(a: &DetectArgs) -> anyhow::Result<Vec<DetectorSpec>> {
    let anomaly = AnomalyConfig {
        window_days: a.window_days,
        silence_min_days: a.silence_min_days,
        prob_threshold: a.prob_threshold,
        source: a.source.into(),
        mode: a.mode.into(),
    };
    anomaly
        .validate()
        .map_err(|e| config_error(e.to_string()))?;
    let lexicon = a
        .lexicon
        .as_ref()
        .map(|p| Lexicon::load(p).with_context(|| format!("reading lexicon {}", p.display())))
        .transpose()?;
    let (lo, hi) = parse_range(&a.seeds)?;

    let mut out = Vec::new();
    for name in a.method.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "bocpd1" => out.push(DetectorSpec::preset(BocpdPreset::One)),
            "bocpd2" => out.push(DetectorSpec::preset(BocpdPreset::Two)),
            "bocpd" => {
                let (Some(al), Some(be), Some(h)) = (a.alpha0, a.beta0, a.hazard) else {
                    return Err(config_error(
                        "method bocpd needs --alpha0, --beta0 and --hazard",
                    ));
                };
                let prior =
                    PoissonGammaPrior::new(al, be, h).map_err(|e| config_error(e.to_string()))?;
                out.push(DetectorSpec::Bocpd {
                    prior,
                    method_id: format!("bocpd_pg_a{al}_b{be}_h{h}"),
                });
            }
            "ad" => out.push(DetectorSpec::Anomaly(anomaly.clone())),
            "keywords" => {
                let lex = lexicon
                    .clone()
                    .ok_or_else(|| config_error("method keywords needs --lexicon"))?;
                if lex.is_empty() {
                    return Err(config_error("empty lexicon"));
                }
                out.push(DetectorSpec::Keywords(lex));
            }
            "random" => out.push(DetectorSpec::Random {
                seeds: (lo..=hi).collect(),
            }),
            "everyday" => out.push(DetectorSpec::EveryDay),
            "all" => out.extend(standard_detectors(
                lexicon.clone().filter(|l| !l.is_empty()),
            )),
            other => return Err(config_error(format!("unknown method {other:?}"))),
        }
    }
    if out.is_empty() {
        return Err(config_error("no methods selected"));
    }
    Ok(out)
}

fn detect(a: DetectArgs) -> anyhow::Result<()> {
    let specs = detectors(&a)?;
    let histories = load_histories(&a.input)?;
    if let Some(user) = &a.plot_user {
        if !histories.contains_key(user) {
            return Err(config_error(format!("unknown --plot-user {user:?}")));
        }
    }
    let users: Vec<&EventHistory> = histories.values().collect();
    let mut records = Vec::new();
    for spec in &specs {
        let per_user = users
            .par_iter()
            .map(|h| detect_user(spec, h).with_context(|| format!("user {}", h.user_id())))
            .collect::<anyhow::Result<Vec<_>>>()?;
        records.extend(per_user.into_iter().flatten());
    }
    mio::write_jsonl(create(&a.output)?, &records)?;

    if let (Some(user), Some(svg)) = (&a.plot_user, &a.svg) {
        let history = &histories[user];
        let source = a.source.into();
        let series = to_daily_counts(history, source)?;
        let days: Vec<_> = records
            .iter()
            .filter(|r| &r.user_id == user && r.seed.is_none())
            .map(|r| r.day)
            .collect();
        write_text(
            svg,
            &report::daily_counts_svg(&series, &days, &format!("{user} ({source})")),
        )?;
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> anyhow::Result<()> {
    let histories = load_histories(&a.input)?;
    let cmocs: Vec<CmocRecord> = load_jsonl(&a.cmocs)?;
    let config = ExtractConfig {
        radius_days: a.radius,
        min_posts: a.min_posts,
        max_posts: a.max_posts,
        max_silent_days: a.max_silent_days,
        one_per_user_seed: a.one_per_user.then_some(a.seed),
    };
    if config.radius_days <= 0 || config.min_posts > config.max_posts {
        return Err(config_error(
            "need --radius > 0 and --min-posts <= --max-posts",
        ));
    }
    let spans = extract_timelines(&histories, &cmocs, &config)?;
    let records: Vec<TimelineRecord> = spans.iter().map(TimelineSpan::to_record).collect();
    mio::write_jsonl(create(&a.output)?, &records)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let mv_taus = tau_range(&a.mv_taus)?;
    let histories = load_histories(&a.input)?;
    let timelines: Vec<TimelineRecord> = load_jsonl(&a.timelines)?;
    let annotations = mio::read_annotations(open(&a.annotations)?)
        .with_context(|| format!("reading {}", a.annotations.display()))?;
    let annotated = annotated_timelines(&histories, &timelines, &annotations)?;

    let mut cmocs: Vec<CmocRecord> = Vec::new();
    for path in &a.cmocs {
        cmocs.extend(load_jsonl::<CmocRecord>(path)?);
    }
    let mut methods = methods_from_records(&cmocs);
    for id in &a.include_methods {
        if !methods.iter().any(|m| &m.method_id == id) {
            methods.push(MethodRuns::single(id.clone(), Default::default()));
        }
    }
    methods.sort_by(|x, y| x.method_id.cmp(&y.method_id));
    if methods.is_empty() {
        bail!("no candidate days in the --cmocs files");
    }
    let config = EvalConfig {
        tau: a.tau,
        mv_taus: mv_taus.clone(),
        mv_mode: a.mv_mode.into(),
    };
    let cards = evaluate_methods(&methods, &annotated, &config)?;
    write_text(&a.output, &report::scorecard_csv(&cards)?)?;

    if let Some(path) = &a.votes_output {
        let table = raw_vote_table(&methods, &annotated, &mv_taus)?;
        write_text(path, &report::votes_csv(&mv_taus, &table)?)?;
    }
    if let Some(path) = &a.density_svg {
        let densities: Vec<f64> = annotated.iter().map(timeline_density).collect();
        write_text(path, &report::density_histogram_svg(&densities, 20))?;
    }
    Ok(())
}

fn rank(a: RankArgs) -> anyhow::Result<()> {
    let keep = a.mv_taus.as_deref().map(tau_range).transpose()?;
    let (taus, table) = report::read_votes(open(&a.votes)?, keep.as_deref())
        .with_context(|| format!("reading {}", a.votes.display()))?;
    if taus.is_empty() {
        bail!("no vote rows in {}", a.votes.display());
    }
    let scaled = scale_vote_table(&table, a.mv_mode.into())?;
    write_text(&a.output, &report::ranking_csv(&scaled)?)?;
    Ok(())
}

fn features(a: FeaturesArgs) -> anyhow::Result<()> {
    if !(a.l2 >= 0.0 && a.l2.is_finite()) {
        return Err(config_error("--l2 must be a non-negative number"));
    }
    let histories = load_histories(&a.input)?;
    let timelines: Vec<TimelineRecord> = load_jsonl(&a.timelines)?;
    let annotations = mio::read_annotations(open(&a.annotations)?)?;
    let annotated = annotated_timelines(&histories, &timelines, &annotations)?;
    let scores: HashMap<_, _> =
        read_scores(open(&a.scores)?).with_context(|| format!("reading {}", a.scores.display()))?;

    let densities: Vec<f64> = annotated.iter().map(timeline_density).collect();
    let labels = label_by_quartile(&densities)?;
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for (t, label) in annotated.iter().zip(labels) {
        if let Some(y) = label.sign() {
            rows.push(extract_features(&t.posts, &scores)?.values().to_vec());
            ys.push(y);
        }
    }
    let config = LogRegConfig {
        l2: a.l2,
        ..LogRegConfig::default()
    };
    let model = train_logreg(&rows, &ys, &feature_names(), &config)?;
    if !model.converged {
        eprintln!(
            "warning: logistic regression stopped after {} iterations",
            model.iterations
        );
    }
    let mut out = create(&a.output)?;
    out.write_all(report::coefficients_csv(&model)?.as_bytes())?;
    out.flush()?;
    Ok(())
}
