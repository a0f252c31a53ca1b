//! `ctxclip` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ctxclip::evaluation::{
    classify, evaluate, evaluate_attribute_inference, predictions_jsonl, render_table,
    run_ablation, sweep_temperature, ConditioningSource, EvalOptions, EvaluationReport, TAU_GRID,
};
use ctxclip::inference::{Estimator, InferenceConfig, Mode, TemperaturePlacement};
use ctxclip::schema::{load_schema, randomize_descriptions, render_manifest, save_schema, AttributeSchema};
use ctxclip::scoring::{build_anchors, AnchorSet, DEFAULT_ANCHOR_BUDGET};
use ctxclip::store::{load_normalized, save_bundle, EmbeddingSet};
use ctxclip::synthetic::{
    demo_text_schema, generate, generate_from_captions, GenerativeSpec, HashTextEncoder, TextPipelineSpec,
    PLACEHOLDER_CLASS,
};
use ctxclip::{par, Error};

/// Relative input paths that do not exist are also looked up here.
const DATA_DIR_ENV: &str = "CTXCLIP_DATA_DIR";

static CLASS_FILE: OnceLock<PathBuf> = OnceLock::new();

#[derive(Parser)]
#[command(name = "ctxclip", version, about = "Attribute-conditioned zero-shot classification over precomputed embeddings")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Class names, one per line, replacing the schema's class list.
    #[arg(long, global = true)]
    class_names: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the prompt manifest (JSON Lines) for a schema.
    RenderPrompts(RenderArgs),
    /// Per-image predictions as JSON Lines.
    Classify(EvalArgs),
    /// Attribute inference accuracy per attribute.
    InferAttrs(InferArgs),
    /// Accuracy and group-robustness report.
    Eval(EvalArgs),
    /// Real versus randomized descriptions.
    Ablate(AblateArgs),
    /// Generate a synthetic bundle with ground truth.
    Synth(SynthArgs),
    /// Evaluate over a grid of temperatures.
    SweepTau(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simple,
    Ensemble,
    Conditioned,
    OneStep,
    TwoStep,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Simple => Mode::Simple,
            ModeArg::Ensemble => Mode::Ensemble,
            ModeArg::Conditioned => Mode::Conditioned,
            ModeArg::OneStep => Mode::OneStep,
            ModeArg::TwoStep => Mode::TwoStep,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Classattr,
    Pureattr,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Classattr => Estimator::ClassAttr,
            EstimatorArg::Pureattr => Estimator::PureAttr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Inside,
    After,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum FormatArg {
    Json,
    Table,
}

#[derive(Args)]
struct RenderArgs {
    /// Attribute schema (JSON).
    #[arg(long)]
    schema: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render class-agnostic prompts with this placeholder class word.
    #[arg(long)]
    placeholder: Option<String>,
    /// Drop every attribute (class-only prompts).
    #[arg(long)]
    without_attributes: bool,
    /// Replace descriptions with word-length-preserving random strings.
    #[arg(long)]
    randomize_seed: Option<u64>,
}

/// Text bundles and schema shared by the scoring subcommands.
#[derive(Args)]
struct AnchorArgs {
    /// Attribute schema (JSON).
    #[arg(long)]
    schema: PathBuf,
    /// Image bundle directory.
    #[arg(long)]
    bundle: PathBuf,
    /// Text bundle for the attribute-aware prompts.
    #[arg(long)]
    text_bundle: PathBuf,
    /// Text bundle for class-only prompts (simple mode).
    #[arg(long)]
    class_text_bundle: Option<PathBuf>,
    /// Text bundle for class-agnostic prompts (PureAttr).
    #[arg(long)]
    agnostic_text_bundle: Option<PathBuf>,
    /// Replace all anchors with random unit vectors drawn from this seed.
    #[arg(long)]
    random_anchors: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_ANCHOR_BUDGET)]
    anchor_budget: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    anchors: AnchorArgs,
    #[arg(long, value_enum, default_value = "two-step")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "classattr")]
    estimator: EstimatorArg,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Where the temperature enters the ClassAttr estimate.
    #[arg(long, value_enum, default_value = "inside")]
    placement: PlacementArg,
    /// Attributes whose true values are given (conditioned mode only).
    #[arg(long, value_delimiter = ',')]
    true_attrs: Option<Vec<String>>,
    /// Condition on deliberately wrong values (conditioned mode only).
    #[arg(long)]
    wrong_attrs: bool,
    /// Attributes that define groups alongside the class.
    #[arg(long, value_delimiter = ',')]
    group_attrs: Option<Vec<String>>,
    /// Also report attribute inference accuracy.
    #[arg(long)]
    infer_attrs: bool,
    /// Multiply every cosine score by this factor before inference.
    #[arg(long)]
    logit_scale: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    anchors: AnchorArgs,
    #[arg(long, value_enum, default_value = "classattr")]
    estimator: EstimatorArg,
    /// Attributes to score (default: all).
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<String>>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Attribute schema (JSON).
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// Embed prompts with the built-in hashing encoder.
    #[arg(long, conflicts_with_all = ["text_bundle", "random_text_bundle"])]
    hash_encoder: bool,
    /// Hashing encoder dimension.
    #[arg(long, default_value_t = 64)]
    hash_dim: usize,
    /// Precomputed embeddings of the real prompts.
    #[arg(long, requires = "random_text_bundle")]
    text_bundle: Option<PathBuf>,
    /// Precomputed embeddings of `render-prompts --randomize-seed SEED`.
    #[arg(long, requires = "text_bundle")]
    random_text_bundle: Option<PathBuf>,
    #[arg(long)]
    class_text_bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "two-step")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "classattr")]
    estimator: EstimatorArg,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_ANCHOR_BUDGET)]
    anchor_budget: usize,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    images: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    attr_sizes: Vec<usize>,
    /// Attribute strength (γ).
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Class × combination interaction strength.
    #[arg(long, default_value_t = 1.0)]
    interaction: f64,
    /// Per-coordinate noise (σ).
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Pull one anchor per class toward the next class (miscalibration).
    #[arg(long, default_value_t = 0.0)]
    anchor_leak: f64,
    /// Correlation of attribute 0 with the class (ρ).
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Images from rendered captions under the built-in animal schema,
    /// text bundles from the hashing encoder.
    #[arg(long)]
    captions: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| {
            Failure::Data(Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn schema_at(path: &Path) -> Outcome<AttributeSchema> {
    let schema = load_schema(resolve(path))?;
    let Some(file) = CLASS_FILE.get() else {
        return Ok(schema);
    };
    let file = resolve(file);
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let names = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    Ok(schema.with_classes(names)?)
}

fn bundle_at(path: &Path) -> Outcome<EmbeddingSet> {
    Ok(load_normalized(resolve(path))?)
}

fn anchors_for(schema: &AttributeSchema, dir: &Path, budget: usize) -> Outcome<AnchorSet> {
    let texts = bundle_at(dir)?;
    let manifest = render_manifest(schema)?;
    Ok(build_anchors(&texts.matrix, &manifest, schema, budget)?)
}

fn load_anchors(args: &AnchorArgs, schema: &AttributeSchema) -> Outcome<AnchorSet> {
    let mut anchors = anchors_for(schema, &args.text_bundle, args.anchor_budget)?;
    if let Some(dir) = &args.class_text_bundle {
        anchors = anchors.attach_class_only(&anchors_for(&schema.without_attributes(), dir, args.anchor_budget)?)?;
    }
    if let Some(dir) = &args.agnostic_text_bundle {
        let agnostic = schema.class_agnostic(PLACEHOLDER_CLASS)?;
        anchors = anchors.attach_class_agnostic(&anchors_for(&agnostic, dir, args.anchor_budget)?)?;
    }
    if let Some(seed) = args.random_anchors {
        anchors = anchors.randomized(seed);
    }
    Ok(anchors)
}

fn eval_options(args: &EvalArgs) -> Outcome<EvalOptions> {
    let mode = Mode::from(args.mode);
    if mode != Mode::Conditioned && (args.true_attrs.is_some() || args.wrong_attrs) {
        return Err(Failure::Usage("--true-attrs and --wrong-attrs need --mode conditioned".into()));
    }
    let placement = match args.placement {
        PlacementArg::Inside => TemperaturePlacement::InsideClassSum,
        PlacementArg::After => TemperaturePlacement::AfterClassSum,
    };
    let config = InferenceConfig::new(mode, args.estimator.into(), args.tau)
        .map_err(|e| Failure::Usage(e.to_string()))?
        .with_placement(placement);
    Ok(EvalOptions {
        config,
        conditioning: if args.wrong_attrs {
            ConditioningSource::Wrong
        } else {
            ConditioningSource::True
        },
        true_attrs: args.true_attrs.clone(),
        group_attrs: args.group_attrs.clone(),
        attribute_inference: args.infer_attrs,
        ablation: false,
        logit_scale: args.logit_scale,
    })
}

fn render_report(report: &EvaluationReport, format: FormatArg) -> String {
    match format {
        FormatArg::Json => report.to_json(),
        FormatArg::Table => render_table(report),
    }
}

fn render_prompts(args: &RenderArgs) -> Outcome {
    let mut schema = schema_at(&args.schema)?;
    if args.without_attributes {
        schema = schema.without_attributes();
    }
    if let Some(word) = &args.placeholder {
        schema = schema.class_agnostic(word)?;
    }
    if let Some(seed) = args.randomize_seed {
        schema = randomize_descriptions(&schema, seed);
    }
    let manifest = render_manifest(&schema)?;
    let mut buf = Vec::new();
    manifest.write_to(&mut buf).expect("writing to memory");
    emit(args.out.as_deref(), &String::from_utf8(buf).expect("manifest is UTF-8"))
}

fn run_classify(args: &EvalArgs) -> Outcome {
    let options = eval_options(args)?;
    let schema = schema_at(&args.anchors.schema)?;
    let images = bundle_at(&args.anchors.bundle)?;
    let anchors = load_anchors(&args.anchors, &schema)?;
    let predictions = classify(&images, &anchors, &schema, &options)?;
    emit(args.out.as_deref(), &predictions_jsonl(&images, &schema, &predictions))
}

fn run_eval(args: &EvalArgs) -> Outcome {
    let options = eval_options(args)?;
    let schema = schema_at(&args.anchors.schema)?;
    let images = bundle_at(&args.anchors.bundle)?;
    let anchors = load_anchors(&args.anchors, &schema)?;
    let report = evaluate(&images, &anchors, &schema, &options)?;
    emit(args.out.as_deref(), &render_report(&report, args.format))
}

fn run_infer(args: &InferArgs) -> Outcome {
    let schema = schema_at(&args.anchors.schema)?;
    let images = bundle_at(&args.anchors.bundle)?;
    let anchors = load_anchors(&args.anchors, &schema)?;
    let estimator = Estimator::from(args.estimator);
    let accuracy = evaluate_attribute_inference(&images, &anchors, &schema, estimator, args.attrs.as_deref())?;
    let report = json!({
        "estimator": estimator,
        "n_images": images.matrix.rows(),
        "random_anchors": args.anchors.random_anchors,
        "schema_hash": schema.content_hash(),
        "attribute_inference_accuracy": accuracy,
    });
    emit(args.out.as_deref(), &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))
}

fn run_ablate(args: &AblateArgs) -> Outcome {
    let schema = schema_at(&args.schema)?;
    let images = bundle_at(&args.bundle)?;
    let config = InferenceConfig::new(args.mode.into(), args.estimator.into(), args.tau)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if config.mode == Mode::Conditioned {
        return Err(Failure::Usage("ablate runs unconditioned modes only".into()));
    }
    let options = EvalOptions {
        config,
        ..EvalOptions::default()
    };
    let (real, random) = if args.hash_encoder {
        let encoder = HashTextEncoder {
            dim: args.hash_dim,
            ..HashTextEncoder::default()
        };
        run_ablation(&images, &schema, &options, args.seed, args.anchor_budget, |m| encoder.encode_manifest(m))?
    } else {
        let (Some(real_dir), Some(random_dir)) = (&args.text_bundle, &args.random_text_bundle) else {
            return Err(Failure::Usage(
                "ablate needs --hash-encoder or both --text-bundle and --random-text-bundle".into(),
            ));
        };
        let scrambled = randomize_descriptions(&schema, args.seed);
        let mut real_anchors = anchors_for(&schema, real_dir, args.anchor_budget)?;
        let mut random_anchors = anchors_for(&scrambled, random_dir, args.anchor_budget)?;
        if let Some(dir) = &args.class_text_bundle {
            let plain = anchors_for(&schema.without_attributes(), dir, args.anchor_budget)?;
            real_anchors = real_anchors.attach_class_only(&plain)?;
            random_anchors = random_anchors.attach_class_only(&plain)?;
        }
        let real = evaluate(&images, &real_anchors, &schema, &options)?;
        let ablated = EvalOptions {
            ablation: true,
            ..options
        };
        (real, evaluate(&images, &random_anchors, &scrambled, &ablated)?)
    };
    let report = json!({
        "seed": args.seed,
        "real": real,
        "randomized": random,
        "margin": real.top1_accuracy - random.top1_accuracy,
    });
    emit(args.out.as_deref(), &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    emit(Some(path), &text)
}

fn run_synth(args: &SynthArgs) -> Outcome {
    let dir = &args.out;
    std::fs::create_dir_all(dir).map_err(|source| {
        Failure::Data(Error::Io {
            path: dir.clone(),
            source,
        })
    })?;
    if args.captions {
        let schema = demo_text_schema();
        let encoder = HashTextEncoder {
            dim: args.dim,
            ..HashTextEncoder::default()
        };
        let spec = TextPipelineSpec {
            encoder,
            n_images: args.images,
            noise: args.noise,
            seed: args.seed,
        };
        let (images, truth) = generate_from_captions(&schema, &spec)?;
        save_bundle(&images, dir.join("images"))?;
        let texts = |s: &AttributeSchema| -> Outcome<EmbeddingSet> {
            Ok(EmbeddingSet::texts(encoder.encode_manifest(&render_manifest(s)?)?))
        };
        save_bundle(&texts(&schema)?, dir.join("texts"))?;
        save_bundle(&texts(&schema.without_attributes())?, dir.join("texts_class"))?;
        save_bundle(&texts(&schema.class_agnostic(PLACEHOLDER_CLASS)?)?, dir.join("texts_agnostic"))?;
        save_schema(&schema, dir.join("schema.json"))?;
        return write_json(&dir.join("ground_truth.json"), &json!({ "spec": spec, "images": truth }));
    }
    let spec = GenerativeSpec {
        dim: args.dim,
        n_classes: args.classes,
        attribute_sizes: args.attr_sizes.clone(),
        attribute_strength: args.gamma,
        interaction_strength: args.interaction,
        spurious_attribute: Some(0),
        spurious_correlation: args.rho,
        noise: args.noise,
        anchor_leak: args.anchor_leak,
        seed: args.seed,
    };
    let data = generate(&spec, args.images)?;
    let (aware, plain, agnostic) = data.text_sets()?;
    save_bundle(&data.images, dir.join("images"))?;
    save_bundle(&aware, dir.join("texts"))?;
    save_bundle(&plain, dir.join("texts_class"))?;
    save_bundle(&agnostic, dir.join("texts_agnostic"))?;
    save_schema(&data.schema, dir.join("schema.json"))?;
    write_json(&dir.join("ground_truth.json"), &json!({ "spec": spec, "images": data.truth }))
}

fn run_sweep(args: &SweepArgs) -> Outcome {
    let options = eval_options(&args.eval)?;
    let grid = args.grid.clone().unwrap_or_else(|| TAU_GRID.to_vec());
    if let Some(bad) = grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Failure::Usage(format!("temperatures must be positive, got {bad}")));
    }
    let schema = schema_at(&args.eval.anchors.schema)?;
    let images = bundle_at(&args.eval.anchors.bundle)?;
    let anchors = load_anchors(&args.eval.anchors, &schema)?;
    let reports = sweep_temperature(&images, &anchors, &schema, &options, &grid)?;
    let text = match args.eval.format {
        FormatArg::Json => {
            let rows: Vec<_> = reports
                .iter()
                .map(|r| json!({ "tau": r.config.temperature, "top1_accuracy": r.top1_accuracy, "worst_group_accuracy": r.worst_group_accuracy, "report": r }))
                .collect();
            serde_json::to_string_pretty(&json!({ "sweep": rows })).expect("serializes") + "\n"
        }
        FormatArg::Table => {
            let mut s = format!("{:>8} {:>10} {:>12}\n", "tau", "top-1 (%)", "worst (%)");
            for r in &reports {
                s.push_str(&format!(
                    "{:>8} {:>10.2} {:>12.2}\n",
                    r.config.temperature,
                    100.0 * r.top1_accuracy,
                    100.0 * r.worst_group_accuracy
                ));
            }
            s
        }
    };
    emit(args.eval.out.as_deref(), &text)
}

fn dispatch(command: &Command) -> Outcome {
    match command {
        Command::RenderPrompts(a) => render_prompts(a),
        Command::Classify(a) => run_classify(a),
        Command::InferAttrs(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Synth(a) => run_synth(a),
        Command::SweepTau(a) => run_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Some(file) = &cli.class_names {
        let _ = CLASS_FILE.set(file.clone());
    }
    match par::with_threads(cli.threads, || dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
