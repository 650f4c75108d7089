//! `codeprep` — training-data construction CLI.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use codeprep::corpus::{self, IngestMode, LengthUnit, SynthSpec};
use codeprep::evol::{self, GenerationClient, RetryPolicy, StrategyKind};
use codeprep::fim;
use codeprep::mixture;
use codeprep::pipeline::{self, CorpusSource, PipelineConfig, Stage};
use codeprep::refmodel::{self, CountAssumptions};
use codeprep::repopack;
use codeprep::schedule::{self, StageConfig};
use codeprep::seqpack::{self, BatchSpec, DocTokens, PackMode, TruncatePolicy};
use codeprep::tokenizer::{ByteTokenizer, Tokenize};

#[derive(Parser)]
#[command(name = "codeprep", version, about = "Deterministic training-data pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse record files and report document counts and errors.
    Ingest(IngestArgs),
    /// Length statistics over a corpus.
    Stats(StatsArgs),
    /// Mixture table operations.
    Mixture(MixtureArgs),
    /// Apply the fill-in-the-middle transform to a corpus.
    Fim(FimArgs),
    /// Repository-level long-context packing.
    PackRepo(PackRepoArgs),
    /// Pack token streams into fixed-length sequences.
    PackSeq(PackSeqArgs),
    /// Emit (step, lr) tables for the stage schedules.
    Schedule(ScheduleArgs),
    /// Run the reference-kernel invariants, parameter ledger, and MFU table.
    KernelCheck,
    /// Evolve seed prompts with the mock or an external client.
    Evol(EvolArgs),
    /// Run a full stage end to end and write a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Record files (one JSON object per line).
    inputs: Vec<PathBuf>,
    /// Collect per-record errors instead of failing on the first.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct StatsArgs {
    inputs: Vec<PathBuf>,
    /// Measure token lengths (reference tokenizer) instead of characters.
    #[arg(long)]
    tokens: bool,
}

#[derive(Args)]
struct MixtureArgs {
    #[command(subcommand)]
    command: MixtureCommand,
}

#[derive(Subcommand)]
enum MixtureCommand {
    /// Check the table's internal arithmetic.
    Validate {
        /// Table JSON; the built-in transcription if omitted.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Derive per-source token quotas for a budget.
    Plan {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        budget: u64,
    },
}

#[derive(Args)]
struct FimArgs {
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for rendered ids and the audit sidecar.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PackRepoArgs {
    inputs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t =
        repopack::DEFAULT_LANGUAGES.iter().map(|s| s.to_string()))]
    languages: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Context length the report checks against.
    #[arg(long, default_value_t = 16_384)]
    context_length: u64,
}

#[derive(Args)]
struct PackSeqArgs {
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    seq_len: usize,
    /// Never split documents (SFT mode); oversize documents are truncated.
    #[arg(long)]
    no_split: bool,
    #[arg(long)]
    out: PathBuf,
    /// Print a human-readable audit instead of only the binary record.
    #[arg(long)]
    audit: bool,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Steps between printed rows.
    #[arg(long, default_value_t = 1000)]
    stride: u64,
}

#[derive(Args)]
struct EvolArgs {
    /// Seed prompts, one per line.
    seeds: PathBuf,
    #[arg(long, default_value_t = 1)]
    rounds: u32,
    /// breadth | reasoning | deepening | complexity
    #[arg(long, default_value = "complexity")]
    strategy: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// pretrain | long-context | sft
    #[arg(long, default_value = "pretrain")]
    stage: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record files; a synthetic corpus when omitted.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Synthetic corpus size when no inputs are given.
    #[arg(long, default_value_t = 50)]
    synth_repos: usize,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    fim_rate: f64,
    #[arg(long, value_delimiter = ',', default_values_t =
        repopack::DEFAULT_LANGUAGES.iter().map(|s| s.to_string()))]
    languages: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Re-run a previous run from its manifest; other flags are ignored.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Mixture(args) => cmd_mixture(args),
        Command::Fim(args) => cmd_fim(args),
        Command::PackRepo(args) => cmd_pack_repo(args),
        Command::PackSeq(args) => cmd_pack_seq(args),
        Command::Schedule(args) => cmd_schedule(args),
        Command::KernelCheck => cmd_kernel_check(),
        Command::Evol(args) => cmd_evol(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn read_documents(paths: &[PathBuf], mode: IngestMode) -> Result<corpus::IngestReport> {
    let mut all = corpus::IngestReport::default();
    for path in paths {
        let file = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
        let report = corpus::ingest(BufReader::new(file), mode)
            .with_context(|| format!("ingest {}", path.display()))?;
        all.documents.extend(report.documents);
        all.errors.extend(report.errors);
    }
    Ok(all)
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let mode = if args.lenient { IngestMode::Lenient } else { IngestMode::Strict };
    let report = read_documents(&args.inputs, mode)?;
    println!("documents: {}", report.documents.len());
    for err in &report.errors {
        eprintln!("error: {err}");
    }
    if !report.errors.is_empty() {
        bail!("{} malformed records", report.errors.len());
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let report = read_documents(&args.inputs, IngestMode::Strict)?;
    let tok = ByteTokenizer::default();
    let (lengths, unit): (Vec<u64>, _) = if args.tokens {
        (
            report
                .documents
                .iter()
                .map(|d| tok.encode(&d.text).len() as u64)
                .collect(),
            LengthUnit::Tokens,
        )
    } else {
        (
            report
                .documents
                .iter()
                .map(|d| d.text.chars().count() as u64)
                .collect(),
            LengthUnit::Chars,
        )
    };
    let stats = corpus::length_stats(&lengths, unit)?;
    println!("unit          {:?}", stats.unit);
    println!("count         {}", lengths.len());
    println!("median        {}", stats.median);
    println!("mean          {:.2}", stats.mean);
    println!("min           {}", stats.min);
    println!("max           {}", stats.max);
    println!("pct_ge_4096   {:.2}", stats.pct_ge_4096);
    Ok(())
}

fn load_table(path: &Option<PathBuf>) -> Result<Vec<mixture::DatasetSpec>> {
    match path {
        None => Ok(mixture::builtin_table()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn cmd_mixture(args: MixtureArgs) -> Result<()> {
    match args.command {
        MixtureCommand::Validate { table } => {
            let specs = load_table(&table)?;
            let report = mixture::validate_table(&specs, mixture::TABLE_TOTAL_TOKENS);
            for check in &report.checks {
                println!(
                    "{} {} — {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            for (a, b) in &report.duplicate_rows {
                println!("NOTE identical rows: {a} / {b} (possible transcription artifact)");
            }
            if !report.passed() {
                eprintln!("table validation reported violations");
                std::process::exit(1);
            }
            Ok(())
        }
        MixtureCommand::Plan { table, budget } => {
            let specs = load_table(&table)?;
            let plan = mixture::plan_mixture(&specs, budget)?;
            println!("{}", serde_json::to_string_pretty(&plan)?);
            Ok(())
        }
    }
}

fn cmd_fim(args: FimArgs) -> Result<()> {
    let report = read_documents(&args.inputs, IngestMode::Strict)?;
    let tok = ByteTokenizer::default();
    fs::create_dir_all(&args.out)?;
    let mut rng = seeded_rng(args.seed);
    let mut rendered = fs::File::create(args.out.join("rendered.jsonl"))?;
    let mut sidecar = fs::File::create(args.out.join("fim_audit.jsonl"))?;
    for doc in &report.documents {
        let ex = fim::apply_fim(&doc.text, args.rate, &mut rng, &tok)?;
        writeln!(rendered, "{}", serde_json::to_string(&ex.rendered)?)?;
        writeln!(
            sidecar,
            "{}",
            serde_json::json!({
                "doc": doc.id,
                "mode": ex.mode,
                "cuts": [ex.prefix.1, ex.middle.1],
            })
        )?;
    }
    println!("documents: {}", report.documents.len());
    Ok(())
}

fn cmd_pack_repo(args: PackRepoArgs) -> Result<()> {
    let report = read_documents(&args.inputs, IngestMode::Strict)?;
    let groups = corpus::group_by_repo(report.documents);
    let allowed: Vec<&str> = args.languages.iter().map(String::as_str).collect();
    let tok = ByteTokenizer::default();
    let mut packs = Vec::new();
    for group in &groups {
        let filtered = repopack::filter_languages(group, &allowed);
        if filtered.files.is_empty() {
            continue;
        }
        packs.extend(repopack::pack_repository(&filtered, args.seed)?);
    }
    println!("repositories: {}", groups.len());
    println!("packs:        {}", packs.len());
    if !packs.is_empty() {
        let report = repopack::target_context_report(&packs, &tok, args.context_length)?;
        println!("median tokens {}", report.stats.median);
        println!("mean tokens   {:.1}", report.stats.mean);
        println!(
            "context {} bracketed by median/mean: {}",
            report.context_length, report.brackets_context
        );
    }
    Ok(())
}

fn cmd_pack_seq(args: PackSeqArgs) -> Result<()> {
    let report = read_documents(&args.inputs, IngestMode::Strict)?;
    let tok = ByteTokenizer::default();
    let stream: Vec<DocTokens> = report
        .documents
        .iter()
        .map(|d| DocTokens::plain(tok.encode(&d.text)))
        .collect();
    let mode = if args.no_split {
        PackMode::NoSplit(TruncatePolicy::Truncate)
    } else {
        PackMode::Split
    };
    let sequences = seqpack::pack(&stream, args.seq_len, mode, &tok)?;
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    seqpack::write_binary(&mut buf, &sequences, &tok)?;
    fs::write(&args.out, &buf)?;
    println!("sequences: {}", sequences.len());
    if args.audit {
        for (i, seq) in sequences.iter().enumerate() {
            println!(
                "seq {i}: len {} docs {} pad {}",
                seq.ids.len(),
                seq.doc_boundaries.len(),
                seq.pad_count
            );
        }
    }
    Ok(())
}

fn cmd_schedule(args: ScheduleArgs) -> Result<()> {
    for preset in schedule::stage_presets::<f64>() {
        print_schedule(&preset, args.stride)?;
    }
    Ok(())
}

fn print_schedule(preset: &StageConfig, stride: u64) -> Result<()> {
    println!(
        "# {:?}: peak {:.3e} min {:.3e} steps {} warmup {:.0}% rotary_base {}",
        preset.name,
        preset.schedule.peak_lr,
        preset.schedule.min_lr,
        preset.schedule.total_steps,
        preset.schedule.warmup_fraction * 100.0,
        preset.rotary_base,
    );
    let mut step = 0;
    while step <= preset.schedule.total_steps {
        println!("{step}\t{:.6e}", schedule::lr_at(&preset.schedule, step)?);
        step += stride.max(1);
    }
    let last = preset.schedule.total_steps;
    println!("{last}\t{:.6e}", schedule::lr_at(&preset.schedule, last)?);
    Ok(())
}

fn cmd_kernel_check() -> Result<()> {
    let config = refmodel::reference_3b_config();
    let breakdown = refmodel::param_count(&config, CountAssumptions::default());
    println!("{breakdown}");

    let flops = refmodel::flops_per_token(&config, breakdown.total);
    println!("flops/token: 6N = {:.3e}, attention = {:.3e}, total = {:.3e}",
        flops.six_n, flops.attention, flops.total);

    println!("\nMFU table (peak 312 TFLOPs/s per device):");
    for achieved in [100e12, 222e12, 312e12] {
        println!(
            "  achieved {:>6.0e} -> {:.2}%",
            achieved,
            refmodel::mfu(achieved, 312e12)?
        );
    }

    println!("\nbatch arithmetic:");
    for (spec, label) in [
        (BatchSpec::new(256, 4, 1, 4096), "stage 1"),
        (BatchSpec::new(256, 4, 1, 16_384), "long context"),
    ] {
        println!("  {label}: {} tokens/step", seqpack::tokens_per_step(spec));
    }
    println!("  bias inventory: {:?}", refmodel::BlockWeights::<f64>::bias_inventory());
    Ok(())
}

fn cmd_evol(args: EvolArgs) -> Result<()> {
    let kind = match args.strategy.as_str() {
        "breadth" => StrategyKind::Breadth,
        "reasoning" => StrategyKind::Reasoning,
        "deepening" => StrategyKind::Deepening,
        "complexity" => StrategyKind::Complexity,
        other => bail!("unknown strategy `{other}`"),
    };
    let strategy = evol::builtin_strategies()
        .into_iter()
        .find(|s| s.kind == kind)
        .expect("builtin strategies cover all kinds");
    // CODEPREP_EVOL_ENDPOINT selects an external client; without it the
    // deterministic mock runs, which keeps the subcommand usable offline.
    let client: Box<dyn GenerationClient> = match std::env::var("CODEPREP_EVOL_ENDPOINT") {
        Ok(endpoint) => bail!(
            "external endpoint `{endpoint}` configured but no transport is built in; \
             unset CODEPREP_EVOL_ENDPOINT to use the mock client"
        ),
        Err(_) => Box::new(evol::MockClient::default()),
    };
    let retry = RetryPolicy::default();
    let seeds: Vec<String> = BufReader::new(fs::File::open(&args.seeds)?)
        .lines()
        .collect::<std::io::Result<_>>()?;
    fs::create_dir_all(args.out.parent().unwrap_or(&args.out))?;
    let mut out = fs::File::create(&args.out)?;
    let mut count = 0u64;
    for seed in seeds.iter().filter(|s| !s.trim().is_empty()) {
        for evolved in evol::evolve_prompt(seed, &strategy, client.as_ref(), args.rounds, &retry)? {
            writeln!(out, "{}", serde_json::to_string(&evolved)?)?;
            count += 1;
        }
    }
    println!("evolved prompts: {count}");
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let manifest = if let Some(manifest_path) = &args.manifest {
        pipeline::run_from_manifest(manifest_path, &args.out)?
    } else {
        let stage = match args.stage.as_str() {
            "pretrain" => Stage::Pretrain,
            "long-context" => Stage::LongContext,
            "sft" => Stage::Sft,
            other => bail!("unknown stage `{other}`"),
        };
        let source = if args.input.is_empty() {
            CorpusSource::Synthetic {
                seed: args.seed,
                spec: SynthSpec {
                    n_repos: args.synth_repos,
                    ..SynthSpec::default()
                },
            }
        } else {
            CorpusSource::Files(args.input.clone())
        };
        let table = match &args.table {
            None => None,
            Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
        };
        let cfg = PipelineConfig {
            stage,
            seed: args.seed,
            source,
            table,
            seq_len: args.seq_len,
            fim_rate: args.fim_rate,
            languages: args.languages.clone(),
        };
        pipeline::run_pipeline(&cfg, &args.out)?
    };
    let hashes: BTreeMap<&String, &String> = manifest.outputs.iter().collect();
    println!("documents:  {}", manifest.counts.documents);
    println!("sequences:  {}", manifest.counts.sequences);
    println!("tokens:     {}", manifest.counts.non_pad_tokens);
    for (name, hash) in hashes {
        println!("{name}  sha256:{hash}");
    }
    Ok(())
}

fn seeded_rng(seed: u64) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha12Rng::seed_from_u64(seed)
}
