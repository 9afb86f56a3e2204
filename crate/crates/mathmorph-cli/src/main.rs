//! Command line interface for the formula mutation engine.
//!
//! Exit codes: 0 success, 2 validation errors, 3 partial success (the
//! skip ratio exceeded the threshold).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mathmorph::catalog::{self, Identity};
use mathmorph::falsify::{FalsifyInput, FalsifyOptions, SlicePool};
use mathmorph::generate::{evg_formula, evg_text, fvg, GenConfig};
use mathmorph::parser::{parse_formula, parse_math_text};
use mathmorph::pipeline::{
    self, extract_formulas, gen_mf, gen_mfr, gen_mt, gen_nmf, read_jsonl, stats::stats_report,
    write_jsonl, CorpusDoc, DatasetRecord, NmfConfig, RecordMeta, RunReport,
};
use mathmorph::printer::PrintSettings;
use mathmorph::subst::SubstitutionOptions;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "mathmorph", about = "Generate equivalent and falsified versions of LaTeX formulas and build training datasets", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Global random seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Printer settings JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Falsification settings JSON file.
    #[arg(long)]
    falsify_config: Option<PathBuf>,
    /// Output path (JSONL); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker count; 1 forces sequential generation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit with code 3 when skipped/input exceeds this ratio.
    #[arg(long, default_value_t = 0.5)]
    max_skip_ratio: f64,
    /// Store 128-bit hashes instead of full strings while deduplicating.
    #[arg(long, default_value_t = false)]
    low_mem_dedup: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate equivalent versions of one formula or math text.
    Evg {
        /// LaTeX formula, or text with $...$ spans with --text.
        input: String,
        #[arg(long, default_value_t = false)]
        text: bool,
        /// Number of versions.
        #[arg(short = 'n', long, default_value_t = 10)]
        count: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate falsified versions of one formula or math text.
    Fvg {
        input: String,
        #[arg(long, default_value_t = false)]
        text: bool,
        #[arg(short = 'n', long, default_value_t = 10)]
        count: usize,
        /// Catalog for manual hints and the random pool.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Identity name providing manual hints.
        #[arg(long)]
        identity: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the formula dataset from a corpus JSONL file.
    GenMf {
        /// Corpus JSONL (one document per line).
        #[arg(long = "in")]
        input: PathBuf,
        /// Additional versions per formula.
        #[arg(long, default_value_t = 100)]
        cap: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the math-text dataset from a corpus JSONL file.
    GenMt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        cap: usize,
        /// Minimum number of formulas per text.
        #[arg(long, default_value_t = 5)]
        min_formulas: usize,
        /// Minimum score for answer documents.
        #[arg(long, default_value_t = 5)]
        min_score: i64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the named-formula dataset from the catalog.
    GenNmf {
        /// Catalog JSON; the bundled catalog when omitted.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Total versions per identity (positives plus negatives).
        #[arg(long, default_value_t = 400_000)]
        cap: usize,
        /// Negatives per positive.
        #[arg(long, default_value_t = 4)]
        neg_ratio: usize,
        /// Share of text-kind bases for identities with text versions.
        #[arg(long, default_value_t = 0.6)]
        text_ratio: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the formula-pair dataset from a generated NMF file.
    GenMfr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        neg_ratio: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Validate a catalog file and print the report.
    ValidateCatalog {
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Aggregate statistics over an emitted dataset.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_gen_config(common: &CommonArgs) -> Result<GenConfig, String> {
    let mut cfg = GenConfig::default();
    if let Some(path) = &common.config {
        let json = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.print = PrintSettings::from_json(&json).map_err(|e| format!("printer config: {e}"))?;
        // The same file may carry substitution options.
        if let Ok(subst) = serde_json::from_str::<SubstitutionOptions>(&json) {
            cfg.subst = subst;
        }
    }
    if let Some(path) = &common.falsify_config {
        let json = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.falsify = FalsifyOptions::from_json(&json).map_err(|e| format!("falsify config: {e}"))?;
    }
    Ok(cfg)
}

fn load_catalog_arg(path: &Option<PathBuf>) -> Result<Vec<Identity>, String> {
    match path {
        Some(p) => catalog::load_catalog(p).map_err(|errs| {
            errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
        }),
        None => Ok(catalog::bundled_catalog()),
    }
}

fn read_corpus(path: &PathBuf) -> Result<Vec<CorpusDoc>, String> {
    let content =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut docs = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc =
            serde_json::from_str(line).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if !ids.insert(doc.id.clone()) {
            return Err(format!("duplicate document id {:?}", doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn emit(
    records: &[DatasetRecord],
    report: &RunReport,
    common: &CommonArgs,
) -> Result<ExitCode, String> {
    let jsonl = write_jsonl(records);
    match &common.out {
        Some(path) => {
            std::fs::write(path, jsonl).map_err(|e| format!("{}: {e}", path.display()))?;
            let report_path = path.with_extension("report.json");
            let report_json = serde_json::to_string_pretty(report).unwrap();
            std::fs::write(&report_path, report_json)
                .map_err(|e| format!("{}: {e}", report_path.display()))?;
            eprintln!(
                "wrote {} records to {} ({} skipped, {} duplicates dropped)",
                records.len(),
                path.display(),
                report.total_skipped(),
                report.dedup_collisions,
            );
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(jsonl.as_bytes()).map_err(|e| e.to_string())?;
        }
    }
    if report.inputs > 0 {
        let ratio = report.total_skipped() as f64 / report.inputs as f64;
        if ratio > common.max_skip_ratio {
            return Ok(ExitCode::from(3));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Evg { input, text, count, common } => {
            let cfg = load_gen_config(&common)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let mut records = Vec::new();
            let mut report = RunReport { inputs: count, ..Default::default() };
            if text {
                let parsed = parse_math_text(&input, &cfg.parse).map_err(|e| e.to_string())?;
                for version in 0..count {
                    let (printed, meta) = evg_text(&parsed, &cfg, &mut rng);
                    records.push(DatasetRecord::Mt {
                        schema: pipeline::SCHEMA_VERSION,
                        text: printed,
                        meta: RecordMeta::from_version(&meta, "cli", version as u32),
                    });
                }
            } else {
                let parsed = parse_formula(&input, &cfg.parse).map_err(|e| e.to_string())?;
                for version in 0..count {
                    let (printed, meta) = evg_formula(&parsed, &cfg, &mut rng);
                    records.push(DatasetRecord::Mf {
                        schema: pipeline::SCHEMA_VERSION,
                        formula: printed,
                        meta: RecordMeta::from_version(&meta, "cli", version as u32),
                    });
                }
            }
            report.emitted = records.len();
            emit(&records, &report, &common)
        }
        Command::Fvg { input, text, count, catalog: catalog_path, identity, common } => {
            let cfg = load_gen_config(&common)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let loaded;
            let (hints, pool) = if catalog_path.is_some() || identity.is_some() {
                loaded = load_catalog_arg(&catalog_path)?;
                let pool = SlicePool {
                    items: loaded
                        .iter()
                        .flat_map(|i| {
                            i.versions.iter().filter_map(|v| {
                                match catalog::parse_version(i, v).ok()? {
                                    catalog::ParsedVersion::Formula(f) => {
                                        Some((i.primary_name().to_string(), FalsifyInput::Formula(f)))
                                    }
                                    catalog::ParsedVersion::Text(t) => {
                                        Some((i.primary_name().to_string(), FalsifyInput::Text(t)))
                                    }
                                }
                            })
                        })
                        .collect(),
                };
                let hints = identity.as_ref().and_then(|name| {
                    loaded
                        .iter()
                        .find(|i| i.names.iter().any(|n| n == name))
                        .map(|i| i.hints())
                });
                (hints, pool)
            } else {
                (None, SlicePool { items: vec![] })
            };
            let parsed_input = if text {
                FalsifyInput::Text(parse_math_text(&input, &cfg.parse).map_err(|e| e.to_string())?)
            } else {
                FalsifyInput::Formula(parse_formula(&input, &cfg.parse).map_err(|e| e.to_string())?)
            };
            let mut records = Vec::new();
            let mut report = RunReport { inputs: count, ..Default::default() };
            for version in 0..count {
                match fvg(&parsed_input, hints.as_ref(), &pool, identity.as_deref(), &cfg, &mut rng)
                {
                    Ok((printed, meta)) => {
                        let rm = RecordMeta::from_version(&meta, "cli", version as u32);
                        records.push(if text {
                            DatasetRecord::Mt { schema: pipeline::SCHEMA_VERSION, text: printed, meta: rm }
                        } else {
                            DatasetRecord::Mf { schema: pipeline::SCHEMA_VERSION, formula: printed, meta: rm }
                        });
                    }
                    Err(_) => report.skip("no_strategy_applicable"),
                }
            }
            report.emitted = records.len();
            emit(&records, &report, &common)
        }
        Command::GenMf { input, cap, common } => {
            let cfg = load_gen_config(&common)?;
            let docs = read_corpus(&input)?;
            let (candidates, mut report) = extract_formulas(&docs, &cfg, common.seed);
            let (records, gen_report) = gen_mf(&candidates, cap, &cfg, common.seed, common.jobs);
            report.emitted = gen_report.emitted;
            report.dedup_collisions = gen_report.dedup_collisions;
            for (k, v) in gen_report.skipped {
                *report.skipped.entry(k).or_insert(0) += v;
            }
            emit(&records, &report, &common)
        }
        Command::GenMt { input, cap, min_formulas, min_score, common } => {
            let cfg = load_gen_config(&common)?;
            let docs = read_corpus(&input)?;
            let (records, report) =
                gen_mt(&docs, min_formulas, min_score, cap, &cfg, common.seed, common.jobs);
            emit(&records, &report, &common)
        }
        Command::GenNmf { catalog: catalog_path, cap, neg_ratio, text_ratio, common } => {
            let cfg = load_gen_config(&common)?;
            let identities = load_catalog_arg(&catalog_path)?;
            let nmf_cfg = NmfConfig { cap, neg_ratio, text_ratio };
            let (records, report) = gen_nmf(&identities, &nmf_cfg, &cfg, common.seed, common.jobs);
            emit(&records, &report, &common)
        }
        Command::GenMfr { input, neg_ratio, common } => {
            let content = std::fs::read_to_string(&input)
                .map_err(|e| format!("{}: {e}", input.display()))?;
            let nmf = read_jsonl(&content).map_err(|e| format!("{}: {e}", input.display()))?;
            let (records, report) = gen_mfr(&nmf, neg_ratio, common.seed);
            emit(&records, &report, &common)
        }
        Command::ValidateCatalog { catalog: catalog_path } => {
            let identities = load_catalog_arg(&catalog_path)?;
            let report = catalog::validate_catalog(&identities);
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if report.errors.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::Stats { input, out } => {
            let content = std::fs::read_to_string(&input)
                .map_err(|e| format!("{}: {e}", input.display()))?;
            let records = read_jsonl(&content).map_err(|e| e.to_string())?;
            let mut report = stats_report(&records);
            // Merge the sidecar run report when present.
            let sidecar = input.with_extension("report.json");
            if let Ok(json) = std::fs::read_to_string(&sidecar) {
                if let Ok(run) = serde_json::from_str::<RunReport>(&json) {
                    report.dedup_collisions = Some(run.dedup_collisions);
                }
            }
            let json = serde_json::to_string_pretty(&report).unwrap();
            match out {
                Some(path) => std::fs::write(&path, json).map_err(|e| e.to_string())?,
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
