//! Command-line workflows: build a tree against a backend, predict and
//! evaluate on CSV data, render, and the self-contained oracle demo.
//!
//! Exit codes partition failures: 2 configuration, 3 transport or
//! authentication, 4 build/format/data mismatch. Output files are written
//! to a temp file and renamed, so failures never leave partial output.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::builder::{build_tree, BuildConfig};
use crate::error::{BuildError, EvalError, GatewayError};
use crate::eval::{
    cart_fit, default_missing_tokens, evaluate, few_shot_sample, load_csv, train_test_split,
    Dataset, EvalReport,
};
use crate::gateway::{
    Advisor, Gateway, HttpBackend, PromptParams, PromptStore, ReplayBackend, TextAdvisor,
};
use crate::oracle::{generate_model, KnowledgeModel, ModelGenConfig, OracleAdvisor};
use crate::prompt::TemplateSet;
use crate::schema::TaskSpec;
use crate::tree::{
    deserialize, predict, render, serialize, DecisionTree, MissingPolicy, RenderStyle, Row,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_FAILURE: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError {
            code: EXIT_TRANSPORT,
            message: e.to_string(),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Gateway(g) => g.into(),
            other => CliError::failure(other.to_string()),
        }
    }
}

impl From<crate::error::TreeFormatError> for CliError {
    fn from(e: crate::error::TreeFormatError) -> Self {
        CliError::failure(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::KTooLarge { .. } | EvalError::BadParameter(_) => {
                CliError::config(e.to_string())
            }
            other => CliError::failure(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ztree",
    version,
    about = "Zero-shot decision trees from a knowledge backend, with a CART baseline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build a tree for a schema against a backend and write its JSON.
    Build(BuildArgs),
    /// Route CSV rows through a tree and append prediction columns.
    Predict(PredictArgs),
    /// Score a tree on labeled CSV data, optionally against a CART baseline.
    Eval(EvalArgs),
    /// Print a tree as indented text or DOT.
    Render(RenderArgs),
    /// Generate a synthetic knowledge model, build, sample and compare.
    DemoOracle(DemoOracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Replay,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingPolicyArg {
    Error,
    MajorityBranch,
}

impl From<MissingPolicyArg> for MissingPolicy {
    fn from(p: MissingPolicyArg) -> Self {
        match p {
            MissingPolicyArg::Error => MissingPolicy::Error,
            MissingPolicyArg::MajorityBranch => MissingPolicy::MajorityBranch,
        }
    }
}

#[derive(Args)]
pub struct BuildArgs {
    /// Task schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Knowledge backend answering split and probability queries.
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    /// Output path for the tree JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Knowledge model file (oracle backend).
    #[arg(long)]
    pub oracle_model: Option<PathBuf>,
    /// Recording directory: written by http builds, read by replay builds.
    #[arg(long)]
    pub record_dir: Option<PathBuf>,
    /// Completion cache directory, reused across runs.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    pub templates_dir: Option<PathBuf>,
    /// Chat-completions base URL (default: ZTREE_BASE_URL).
    #[arg(long)]
    pub base_url: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, default_value = "gpt-4o-mini")]
    pub model: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 5)]
    pub max_depth: u32,
    /// Confidence at which a node becomes a leaf.
    #[arg(long, default_value_t = 0.9)]
    pub prob_threshold: f64,
    /// Attempts per advisor query on unusable model output.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// Concurrent advisor queries per node.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Concurrent HTTP requests.
    #[arg(long, default_value_t = 4)]
    pub max_inflight: usize,
    /// Recorded in the tree metadata; builds themselves are seed-free.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append a path column explaining each routing decision.
    #[arg(long)]
    pub explain: bool,
    #[arg(long, value_enum, default_value_t = MissingPolicyArg::Error)]
    pub missing_policy: MissingPolicyArg,
    /// Report unroutable rows in a summary instead of failing.
    #[arg(long)]
    pub allow_skips: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub csv: PathBuf,
    /// Output path for the JSON report (default: stdout JSON suppressed,
    /// table only).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MissingPolicyArg::Error)]
    pub missing_policy: MissingPolicyArg,
    /// Fit and report a supervised baseline side by side.
    #[arg(long, value_parser = ["cart"])]
    pub baseline: Option<String>,
    /// Baseline tree depth (default: the evaluated tree's max depth).
    #[arg(long)]
    pub max_depth: Option<u32>,
    /// Train the baseline on a k-shot sample of the training split.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Held-out fraction for the test split; requires --seed stability.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, value_parser = ["text", "dot"], default_value = "text")]
    pub style: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DemoOracleArgs {
    /// Knowledge model JSON; generated from the seed when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 7)]
    pub max_depth: u32,
    /// Sample size for each of the train and test sets.
    #[arg(long, default_value_t = 2000)]
    pub rows: usize,
    /// Write the generated schema, model and tree here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Build(args) => cmd_build(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Render(args) => cmd_render(args),
        Command::DemoOracle(args) => cmd_demo_oracle(args),
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(path) => write_atomic(path, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_tree(path: &Path) -> Result<DecisionTree, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::failure(format!("cannot read {}: {e}", path.display())))?;
    Ok(deserialize(&text)?)
}

fn templates(dir: &Option<PathBuf>) -> Result<TemplateSet, CliError> {
    match dir {
        Some(dir) => TemplateSet::from_dir(dir).map_err(|e| CliError::config(e.to_string())),
        None => Ok(TemplateSet::embedded()),
    }
}

fn cmd_build(args: BuildArgs) -> Result<(), CliError> {
    let task = TaskSpec::from_file(&args.schema)
        .map_err(|e| CliError::config(format!("schema {}: {e}", args.schema.display())))?;
    let cfg = BuildConfig {
        max_depth: args.max_depth,
        leaf_prob_threshold: args.prob_threshold,
        retry_limit: args.retries,
        concurrency: args.concurrency,
    };
    cfg.validate(&task)
        .map_err(|e| CliError::config(e.to_string()))?;

    let advisor: Box<dyn Advisor> = match args.backend {
        BackendKind::Oracle => {
            let model_path = args
                .oracle_model
                .as_ref()
                .ok_or_else(|| CliError::config("--backend oracle requires --oracle-model"))?;
            let model = KnowledgeModel::from_file(model_path)
                .map_err(|e| CliError::config(format!("model {}: {e}", model_path.display())))?;
            let advisor =
                OracleAdvisor::new(model, &task).map_err(|e| CliError::config(e.to_string()))?;
            Box::new(advisor)
        }
        BackendKind::Replay => {
            let dir = args
                .record_dir
                .as_ref()
                .ok_or_else(|| CliError::config("--backend replay requires --record-dir"))?;
            let backend = ReplayBackend::open(dir)?;
            let mut gateway = Gateway::new(Box::new(backend)).with_max_inflight(args.max_inflight);
            if let Some(cache) = &args.cache_dir {
                gateway = gateway.with_cache(PromptStore::open(cache)?);
            }
            let params = PromptParams {
                model_name: args.model.clone(),
                temperature: args.temperature,
                max_tokens: args.max_tokens,
            };
            Box::new(TextAdvisor::new(
                Arc::new(gateway),
                templates(&args.templates_dir)?,
                params,
                args.retries,
            ))
        }
        BackendKind::Http => {
            let backend = match &args.base_url {
                Some(url) => {
                    let key = std::env::var(crate::gateway::API_KEY_ENV).map_err(|_| {
                        CliError::config(format!(
                            "{} must be set for the http backend",
                            crate::gateway::API_KEY_ENV
                        ))
                    })?;
                    HttpBackend::new(url, &key)
                }
                None => HttpBackend::from_env().map_err(|e| CliError::config(e.to_string()))?,
            };
            let mut gateway = Gateway::new(Box::new(backend)).with_max_inflight(args.max_inflight);
            if let Some(cache) = &args.cache_dir {
                gateway = gateway.with_cache(PromptStore::open(cache)?);
            }
            if let Some(record) = &args.record_dir {
                gateway = gateway.with_recorder(PromptStore::open(record)?);
            }
            let params = PromptParams {
                model_name: args.model.clone(),
                temperature: args.temperature,
                max_tokens: args.max_tokens,
            };
            Box::new(TextAdvisor::new(
                Arc::new(gateway),
                templates(&args.templates_dir)?,
                params,
                args.retries,
            ))
        }
    };

    let mut tree = build_tree(&task, advisor.as_ref(), &cfg)?;
    tree.meta.seed = args.seed;
    write_atomic(&args.out, &serialize(&tree))?;
    eprintln!(
        "built tree: depth {}, {} leaves, {} completions ({} cached)",
        tree.depth(),
        tree.root.leaf_count(),
        tree.meta.total_completions,
        tree.meta.cache_hits
    );
    Ok(())
}

/// Prediction input: original headers and records plus the parsed row
/// (or the reason it cannot be routed).
struct PredictInput {
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
    rows: Vec<Result<Row, String>>,
}

/// Feature columns of a CSV resolved against a task, without requiring
/// the target column (prediction input may be unlabeled).
fn load_rows_for_predict(path: &Path, task: &TaskSpec) -> Result<PredictInput, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::failure(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::failure(e.to_string()))?
        .clone();
    let missing_tokens = default_missing_tokens();

    let mut column_of_feature = Vec::new();
    for feature in &task.features {
        let col = headers
            .iter()
            .position(|h| crate::schema::normalize_identifier(h).is_ok_and(|n| n == feature.name));
        match col {
            Some(col) => column_of_feature.push(col),
            None => {
                return Err(CliError::failure(format!(
                    "CSV header mismatch: missing feature column {:?}",
                    feature.name
                )))
            }
        }
    }

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::failure(e.to_string()))?;
        let mut row = Row::new();
        let mut error = None;
        for (feature, &col) in task.features.iter().zip(&column_of_feature) {
            let cell = record.get(col).unwrap_or("").trim();
            if missing_tokens.contains(&cell.to_lowercase()) {
                continue;
            }
            match &feature.kind {
                crate::schema::FeatureKind::Numeric { .. } => match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => {
                        row.set(&feature.name, crate::tree::RowValue::Number(v))
                    }
                    _ => {
                        error = Some(format!("feature {}: bad number {cell:?}", feature.name));
                        break;
                    }
                },
                crate::schema::FeatureKind::Categorical { categories } => {
                    match crate::schema::normalize_identifier(cell)
                        .ok()
                        .filter(|c| categories.contains(c))
                    {
                        Some(c) => row.set(&feature.name, crate::tree::RowValue::Category(c)),
                        None => {
                            error = Some(format!(
                                "feature {}: unknown category {cell:?}",
                                feature.name
                            ));
                            break;
                        }
                    }
                }
            }
        }
        records.push(record);
        rows.push(match error {
            None => Ok(row),
            Some(e) => Err(e),
        });
    }
    Ok(PredictInput {
        headers: headers.iter().map(|h| h.to_string()).collect(),
        records,
        rows,
    })
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let tree = load_tree(&args.tree)?;
    let PredictInput {
        headers,
        records,
        rows,
    } = load_rows_for_predict(&args.csv, &tree.task)?;
    let policy: MissingPolicy = args.missing_policy.into();

    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header_row = headers.clone();
    header_row.push("predicted".to_string());
    for label in &tree.task.target_labels {
        header_row.push(format!("p_{label}"));
    }
    if args.explain {
        header_row.push("path".to_string());
    }
    out.write_record(&header_row)
        .map_err(|e| CliError::failure(e.to_string()))?;

    let mut skipped: Vec<(usize, String)> = Vec::new();
    for (i, (record, row)) in records.iter().zip(&rows).enumerate() {
        let prediction = match row {
            Ok(row) => match predict(&tree, row, policy) {
                Ok(p) => Some(p),
                Err(e) => {
                    skipped.push((i, e.to_string()));
                    None
                }
            },
            Err(reason) => {
                skipped.push((i, reason.clone()));
                None
            }
        };
        if prediction.is_none() && !args.allow_skips {
            let (row, reason) = skipped.last().expect("just pushed");
            return Err(CliError::failure(format!(
                "row {row}: {reason} (use --allow-skips to continue)"
            )));
        }
        let mut fields: Vec<String> = record.iter().map(|c| c.to_string()).collect();
        match prediction {
            Some(p) => {
                fields.push(p.label.clone());
                for label in &tree.task.target_labels {
                    fields.push(format!("{:.6}", p.probs.get(label).unwrap_or(0.0)));
                }
                if args.explain {
                    let path: Vec<String> =
                        p.path.iter().map(|step| step.condition.clone()).collect();
                    fields.push(path.join(" -> "));
                }
            }
            None => {
                fields.push(String::new());
                for _ in &tree.task.target_labels {
                    fields.push(String::new());
                }
                if args.explain {
                    fields.push(String::new());
                }
            }
        }
        out.write_record(&fields)
            .map_err(|e| CliError::failure(e.to_string()))?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| CliError::failure(e.to_string()))?;
    let content = String::from_utf8(bytes).expect("CSV output is UTF-8");
    write_or_print(&args.out, &content)?;
    if !skipped.is_empty() {
        eprintln!("skipped {} of {} rows:", skipped.len(), records.len());
        for (row, reason) in skipped.iter().take(10) {
            eprintln!("  row {row}: {reason}");
        }
        if skipped.len() > 10 {
            eprintln!("  ... and {} more", skipped.len() - 10);
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let tree = load_tree(&args.tree)?;
    let (data, load_report) = load_csv(&args.csv, &tree.task, &default_missing_tokens())?;
    if !load_report.row_errors.is_empty() {
        eprintln!(
            "warning: {} rows dropped while loading (first: row {}: {})",
            load_report.row_errors.len(),
            load_report.row_errors[0].0,
            load_report.row_errors[0].1
        );
    }
    if data.is_empty() {
        return Err(CliError::failure("no usable rows in the CSV"));
    }
    let policy: MissingPolicy = args.missing_policy.into();

    let (train, test) = match args.test_fraction {
        Some(f) => {
            if !(0.0 < f && f < 1.0) {
                return Err(CliError::config("--test-fraction must be in (0, 1)"));
            }
            let (train, test) = train_test_split(&data, f, args.seed)?;
            (Some(train), test)
        }
        None => (None, data),
    };

    let zero_shot = evaluate(&tree, &test, policy)?;
    println!(
        "zero-shot tree (depth {}) on {} rows",
        tree.depth(),
        test.len()
    );
    print!("{}", zero_shot.to_table());

    let baseline = match args.baseline.as_deref() {
        None => None,
        Some("cart") => {
            let train = train.as_ref().ok_or_else(|| {
                CliError::config("--baseline cart requires --test-fraction for a train/test split")
            })?;
            let depth = args.max_depth.unwrap_or(tree.config.max_depth);
            let fit_set: Dataset = match args.shots {
                Some(k) => few_shot_sample(train, k, args.seed)?,
                None => train.clone(),
            };
            let cart = cart_fit(&fit_set, depth)?;
            let report = evaluate(&cart, &test, policy)?;
            match args.shots {
                Some(k) => println!("\ncart baseline (depth {depth}, {k}-shot)"),
                None => println!("\ncart baseline (depth {depth}, {} rows)", fit_set.len()),
            }
            print!("{}", report.to_table());
            Some(report)
        }
        Some(other) => return Err(CliError::config(format!("unknown baseline {other:?}"))),
    };

    if let Some(out) = &args.out {
        let json = match &baseline {
            Some(b) => format!(
                "{{\n\"zero_shot\": {},\n\"cart_baseline\": {}\n}}\n",
                zero_shot.to_json(),
                b.to_json()
            ),
            None => zero_shot.to_json(),
        };
        write_atomic(out, &json)?;
    }
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    let tree = load_tree(&args.tree)?;
    let style = match args.style.as_str() {
        "dot" => RenderStyle::Dot,
        _ => RenderStyle::Text,
    };
    write_or_print(&args.out, &render(&tree, style))
}

fn cmd_demo_oracle(args: DemoOracleArgs) -> Result<(), CliError> {
    let model = match &args.model {
        Some(path) => KnowledgeModel::from_file(path)
            .map_err(|e| CliError::config(format!("model {}: {e}", path.display())))?,
        None => generate_model(args.seed, &ModelGenConfig::default()),
    };
    let task = model.task_view().clone();
    let numeric = task.features.iter().filter(|f| f.is_numeric()).count();
    println!(
        "model: {} features ({} numeric, {} categorical), labels {:?}, seed {}",
        task.features.len(),
        numeric,
        task.features.len() - numeric,
        task.target_labels,
        args.seed
    );

    let advisor = OracleAdvisor::new(model, &task).map_err(|e| CliError::config(e.to_string()))?;
    let cfg = BuildConfig {
        max_depth: args.max_depth,
        ..BuildConfig::default()
    };
    let tree = build_tree(&task, &advisor, &cfg)?;
    println!(
        "zero-shot tree: depth {}, {} internal nodes, {} leaves",
        tree.depth(),
        tree.root.internal_count(),
        tree.root.leaf_count()
    );

    let train = advisor
        .model()
        .sample(&task, args.rows, args.seed.wrapping_add(1));
    let test = advisor
        .model()
        .sample(&task, args.rows, args.seed.wrapping_add(2));
    let bayes = advisor
        .model()
        .bayes_accuracy(args.rows, args.seed.wrapping_add(3));

    let mut lines: Vec<(String, EvalReport)> = Vec::new();
    let zero_shot = evaluate(&tree, &test, MissingPolicy::Error)?;
    lines.push((
        format!("zero-shot tree (depth {})", args.max_depth),
        zero_shot,
    ));
    for k in [4usize, 8, 16, 32] {
        if k <= train.len() {
            let sample = few_shot_sample(&train, k, args.seed)?;
            if let Ok(cart) = cart_fit(&sample, args.max_depth) {
                lines.push((
                    format!("cart {k}-shot"),
                    evaluate(&cart, &test, MissingPolicy::Error)?,
                ));
            }
        }
    }
    let cart_full = cart_fit(&train, args.max_depth)?;
    lines.push((
        format!("cart full ({} rows)", train.len()),
        evaluate(&cart_full, &test, MissingPolicy::Error)?,
    ));

    println!("\n{:<28} {:>9} {:>9}", "method", "accuracy", "macro F1");
    for (name, report) in &lines {
        println!(
            "{name:<28} {:>9.3} {:>9.3}",
            report.accuracy, report.macro_f1
        );
    }
    println!("{:<28} {bayes:>9.3}", "bayes ceiling");

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::failure(format!("cannot create {}: {e}", dir.display())))?;
        write_atomic(&dir.join("model.json"), &advisor.model().to_json())?;
        write_atomic(&dir.join("schema.json"), &task.to_json())?;
        write_atomic(&dir.join("tree.json"), &serialize(&tree))?;
        println!(
            "\nwrote model.json, schema.json, tree.json to {}",
            dir.display()
        );
    }
    Ok(())
}
