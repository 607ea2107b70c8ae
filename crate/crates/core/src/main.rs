//! `violin` command line: dataset generation, split tagging, evaluation,
//! probes and one-off metric computation. Results go to stdout as JSON;
//! failures go to stderr as `{"error": {"kind", "message"}}` with exit code 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use violin::color::parse_hex;
use violin::dataset::{
    generalization_split, generate_dataset, is_single_color, read_manifest, stratified_split, write_manifest,
    GenConfig, GeneralizationStrategy, DEFAULT_PROMPT_HOLDOUT,
};
use violin::harness::{
    emit_report, probe_suite, run_eval, ProbeFamily, ProviderKind, ReportFormat, RunConfig, RunLabel,
};
use violin::precision::{normalize_and_aggregate, HyabForm, NormalizationConstants, PrecisionValues};
use violin::purity::{purity_aggregate, purity_values, PurityConfig};
use violin::region::Rect;

#[derive(Parser)]
#[command(name = "violin", version, about = "Pure-color generation benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the dataset: manifest plus ground-truth images.
    Gen(GenArgs),
    /// Tag a manifest with a stratified or generalization split.
    Split(SplitArgs),
    /// Acquire images for a manifest, score them and write reports.
    Eval(EvalArgs),
    /// Run the diagnostic probe prompts.
    Probe(ProbeArgs),
    /// Metrics for one color pair or one image.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct GenArgs {
    /// TOML file with generation settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every base count, e.g. 0.1 for a tenth of the dataset.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    resolution: Option<u32>,
    /// Skip writing ground-truth images.
    #[arg(long)]
    no_images: bool,
    /// Replace an existing manifest and images.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitStrategy {
    Stratified,
    Prompt,
    Hue1,
    Hue2,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest; defaults to rewriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "stratified")]
    strategy: SplitStrategy,
    /// Training share for the stratified split.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    /// Held-out template share for the prompt split.
    #[arg(long, default_value_t = DEFAULT_PROMPT_HOLDOUT)]
    holdout: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ProviderArgs {
    /// TOML run config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of model images (filesystem provider).
    #[arg(long, conflicts_with = "endpoint")]
    images: Option<PathBuf>,
    /// Generation endpoint (http provider).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    model_tag: Option<String>,
    #[arg(long, value_enum)]
    hyab_form: Option<HyabArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HyabArg {
    Printed,
    Literature,
}

impl From<HyabArg> for HyabForm {
    fn from(h: HyabArg) -> Self {
        match h {
            HyabArg::Printed => HyabForm::Printed,
            HyabArg::Literature => HyabForm::Literature,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Report directory.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    repeats: Option<u32>,
    /// Downscale mismatched images instead of rejecting them.
    #[arg(long)]
    resize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Negation,
    SemanticGravity,
    Spatial,
    All,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, value_enum, default_value = "all")]
    family: FamilyArg,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value_t = 256)]
    resolution: u32,
    /// Also write the probe report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Sample and target colors as hex codes.
    #[arg(long, num_args = 2, value_names = ["SAMPLE", "TARGET"], conflicts_with = "image")]
    pair: Option<Vec<String>>,
    /// An image to measure as a single region.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Target color for `--image`.
    #[arg(long, requires = "image")]
    target: Option<String>,
    #[arg(long, value_enum, default_value = "printed")]
    hyab_form: HyabArg,
}

struct CliError {
    kind: &'static str,
    message: String,
}

fn fail(kind: &'static str, e: impl std::fmt::Display) -> CliError {
    CliError {
        kind,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Split(a) => split(a),
        Command::Eval(a) => eval(a),
        Command::Probe(a) => probe(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json output"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind, "message": e.message}}));
            ExitCode::FAILURE
        }
    }
}

fn gen(a: GenArgs) -> Result<Value, CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| fail("config", format!("{}: {e}", p.display())))?;
            toml::from_str::<GenConfig>(&text).map_err(|e| fail("config", e))?
        }
        None => GenConfig::default(),
    };
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(res) = a.resolution {
        cfg.resolution = res;
    }
    if let Some(scale) = a.scale {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(fail("config", "scale must be a non-negative number"));
        }
        cfg = cfg.scaled(scale);
    }
    cfg.overwrite |= a.overwrite;
    cfg.write_images &= !a.no_images;
    let summary = generate_dataset(&cfg).map_err(|e| fail("gen", e))?;
    Ok(json!({
        "manifest": summary.manifest_path,
        "counts": summary.counts,
        "total": summary.total,
        "images_written": summary.images_written,
    }))
}

fn split(a: SplitArgs) -> Result<Value, CliError> {
    let mut manifest = read_manifest(&a.manifest).map_err(|e| fail("manifest", e))?;
    let (name, summary) = match a.strategy {
        SplitStrategy::Stratified => (
            "stratified",
            stratified_split(&mut manifest, a.ratio, a.seed).map_err(|e| fail("split", e))?,
        ),
        s => {
            let strategy = match s {
                SplitStrategy::Prompt => GeneralizationStrategy::Prompt { holdout: a.holdout },
                SplitStrategy::Hue1 => GeneralizationStrategy::Hue1,
                _ => GeneralizationStrategy::Hue2,
            };
            // Only single-color samples take part; the rest pass through.
            let (mut eligible, rest): (Vec<_>, Vec<_>) = manifest.into_iter().partition(is_single_color);
            let summary = generalization_split(&mut eligible, strategy, a.seed).map_err(|e| fail("split", e))?;
            manifest = eligible.into_iter().chain(rest).collect();
            manifest.sort_by(|x, y| (x.variation, &x.id).cmp(&(y.variation, &y.id)));
            (strategy.name(), summary)
        }
    };
    let out = a.out.unwrap_or(a.manifest);
    write_manifest(&out, &manifest).map_err(|e| fail("io", e))?;
    Ok(json!({
        "strategy": name,
        "manifest": out,
        "train": summary.train,
        "test": summary.test,
        "small_strata": summary.warned,
    }))
}

fn run_config(p: &ProviderArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &p.config {
        Some(path) => RunConfig::load(path).map_err(|e| fail("config", e))?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &p.images {
        cfg.provider.kind = ProviderKind::Filesystem;
        cfg.provider.root = Some(dir.clone());
        cfg.provider.endpoint = None;
    }
    if let Some(url) = &p.endpoint {
        cfg.provider.kind = ProviderKind::Http;
        cfg.provider.endpoint = Some(url.clone());
        cfg.provider.root = None;
    }
    if let Some(n) = p.parallelism {
        cfg.provider.parallelism = n;
    }
    if let Some(tag) = &p.model_tag {
        cfg.model_tag = tag.clone();
    }
    if let Some(h) = p.hyab_form {
        let form = HyabForm::from(h);
        if cfg.eval.hyab_form != form {
            cfg.eval.hyab_form = form;
            cfg.eval.normalization = NormalizationConstants::for_form(form);
        }
    }
    cfg.provider.validate().map_err(|e| fail("config", e))?;
    cfg.eval.validate().map_err(|e| fail("config", e))?;
    Ok(cfg)
}

fn eval(a: EvalArgs) -> Result<Value, CliError> {
    let mut cfg = run_config(&a.provider)?;
    if let Some(r) = a.repeats {
        cfg.provider.repeats = r;
    }
    cfg.provider.resize |= a.resize;
    let manifest = read_manifest(&a.manifest).map_err(|e| fail("manifest", e))?;
    let source = cfg.provider.build().map_err(|e| fail("provider", e))?;
    let label = RunLabel {
        model_tag: cfg.model_tag.clone(),
        manifest: a.manifest.display().to_string(),
    };
    let run = run_eval(&manifest, source.as_ref(), &cfg.provider, &cfg.eval, &label).map_err(|e| fail("eval", e))?;
    let mut written = Vec::new();
    for format in ReportFormat::ALL {
        written.push(emit_report(&run, format, &a.report).map_err(|e| fail("io", e))?);
    }
    Ok(json!({
        "run_id": run.run_id,
        "coverage": run.coverage,
        "evaluated": run.samples.len(),
        "failures": run.failures.len(),
        "aggregates": run.aggregates.iter().map(|g| json!({
            "variation": g.variation,
            "n": g.n,
            "pre_mean": g.pre_mean(),
            "pur_mean": g.pur_mean(),
        })).collect::<Vec<_>>(),
        "reports": written,
    }))
}

fn probe(a: ProbeArgs) -> Result<Value, CliError> {
    let cfg = run_config(&a.provider)?;
    let source = cfg.provider.build().map_err(|e| fail("provider", e))?;
    let families = match a.family {
        FamilyArg::Negation => vec![ProbeFamily::Negation],
        FamilyArg::SemanticGravity => vec![ProbeFamily::SemanticGravity],
        FamilyArg::Spatial => vec![ProbeFamily::Spatial],
        FamilyArg::All => ProbeFamily::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    for f in families {
        reports.push(probe_suite(f, source.as_ref(), a.resolution, &cfg.eval).map_err(|e| fail("probe", e))?);
    }
    let value = serde_json::to_value(&reports).expect("probe report serializes");
    if let Some(out) = &a.out {
        write_json(out, &value)?;
    }
    Ok(value)
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("json output");
    std::fs::write(path, text).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

fn hex(s: &str) -> Result<violin::Rgb8, CliError> {
    parse_hex(s).map_err(|e| fail("input", format!("{s:?}: {e}")))
}

fn precision_json(raw: PrecisionValues, k: &NormalizationConstants) -> Result<Value, CliError> {
    let report = normalize_and_aggregate(raw, k).map_err(|e| fail("metric", e))?;
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn metrics(a: MetricsArgs) -> Result<Value, CliError> {
    let form = HyabForm::from(a.hyab_form);
    let k = NormalizationConstants::for_form(form);
    if let Some(pair) = a.pair {
        let (s, t) = (hex(&pair[0])?, hex(&pair[1])?);
        let raw = PrecisionValues::between(s.into(), t.into(), form);
        return Ok(json!({"sample": s, "target": t, "precision": precision_json(raw, &k)?}));
    }
    let Some(path) = a.image else {
        return Err(fail("input", "pass --pair SAMPLE TARGET or --image PATH"));
    };
    let img = image::open(&path)
        .map_err(|e| fail("input", format!("{}: {e}", path.display())))?
        .to_rgb8();
    let rect = Rect::new(0, 0, img.width(), img.height());
    let cfg = PurityConfig::default();
    let raw = purity_values(&img, rect, &cfg).map_err(|e| fail("metric", e))?;
    let purity = purity_aggregate(raw, &cfg).map_err(|e| fail("metric", e))?;
    let rep = violin::precision::representative_color(&img, rect).map_err(|e| fail("metric", e))?;
    let mut out = json!({
        "width": img.width(),
        "height": img.height(),
        "representative": [rep.r, rep.g, rep.b],
        "purity": purity,
    });
    if let Some(t) = a.target {
        let t = hex(&t)?;
        let raw = PrecisionValues::between(rep, t.into(), form);
        out["target"] = json!(t);
        out["precision"] = precision_json(raw, &k)?;
    }
    Ok(out)
}
