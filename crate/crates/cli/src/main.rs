use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use redcane::approx::{
    gaussian_likeness, load_catalog, profile, to_nm_na, Catalog, ErrorProfile, GaussianFit, InputSource,
    MultiplierModel, ProfileOptions, DEFAULT_CHAIN_SAMPLES,
};
use redcane::capsnet::{
    build_network, conv_operand_pairs, evaluate, train, Model, NetworkSpec, Optimizer, TrainConfig,
};
use redcane::data::{bundled_digits, digits_split, downsample, load_idx, LabeledDataset, Split, DIGITS_SPLIT_SEED};
use redcane::energy::{
    count_ops, count_site_ops, energy_estimate, energy_uniform, energy_with_plan, EnergySummary, OpCounts,
    UnitEnergies,
};
use redcane::noise::Injector;
use redcane::resilience::{
    group_sweep, layer_sweep, mark_resilient, run_pipeline, select_components, site_tolerances, Mark, Marks,
    ResilienceReport, RunConfig, SelectionPlan, SiteTolerance, SweepConfig,
};
use redcane::tensor::Range;

#[derive(Parser)]
#[command(name = "redcane", version, about = "Noise-resilience analysis for capsule networks")]
struct Cli {
    /// Seed for weight init, shuffling, noise and sampling.
    #[arg(long, global = true, env = "REDCANE_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a capsule network and write it as JSON.
    Train(TrainArgs),
    /// Print test-split accuracy of a model.
    Evaluate(EvalArgs),
    /// Dump the quantized operand pairs of one conv layer as raw byte pairs.
    Operands(OperandArgs),
    /// Profile the arithmetic error of an 8-bit multiplier.
    Profile(ProfileArgs),
    /// Group-wise and layer-wise noise sweeps with resilience marking.
    Analyze(AnalyzeArgs),
    /// Choose multipliers per site from sweep results and a catalog.
    Select(SelectArgs),
    /// Estimate operation counts and energy.
    Energy(EnergyArgs),
    /// Turn a sweep CSV into per-group accuracy-vs-NM data files.
    Report(ReportArgs),
    /// Analyze, select and estimate energy in one go.
    Run(RunArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// IDX images file; the bundled 8x8 digits are used when absent.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX labels file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Average-pool images by this factor after loading.
    #[arg(long)]
    downsample: Option<usize>,
    /// Seed of the 80/20 train/test shuffle.
    #[arg(long, default_value_t = DIGITS_SPLIT_SEED)]
    split_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let full = match (&self.images, &self.labels) {
            (Some(i), Some(l)) => load_idx(i, l, Split::Test)
                .with_context(|| format!("loading IDX files {} and {}", i.display(), l.display()))?,
            _ => bundled_digits(),
        };
        let full = match self.downsample {
            Some(f) => downsample(&full, f)?,
            None => full,
        };
        Ok(digits_split(&full, self.split_seed))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Network spec JSON; the default toy network otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct OperandArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Convolution layer whose multiplier operands are collected.
    #[arg(long, default_value = "conv1")]
    layer: String,
    /// Number of training images to run.
    #[arg(long, default_value_t = 100)]
    max_images: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// exact, truncN, or lut:PATH (131072-byte little-endian u16 table).
    #[arg(long, default_value = "exact")]
    mult: String,
    /// uniform, or empirical:PATH with raw interleaved operand byte pairs.
    #[arg(long, default_value = "uniform")]
    inputs: String,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    chains: Vec<usize>,
    /// Random chains drawn per chain length > 1.
    #[arg(long, default_value_t = DEFAULT_CHAIN_SAMPLES)]
    samples: usize,
    /// Output range R used for NM/NA; default chain length x 255^2.
    #[arg(long)]
    range: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Comma-separated noise magnitudes.
    #[arg(long, value_delimiter = ',')]
    nm_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    na: f64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Largest accuracy drop (percentage points) still counted as resilient.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    /// Noise magnitude at which targets are marked.
    #[arg(long, default_value_t = 0.01)]
    probe: f64,
    /// Evaluate on at most this many test samples.
    #[arg(long)]
    limit: Option<usize>,
}

impl SweepArgs {
    fn config(&self, seed: u64) -> Result<RunConfig> {
        if self.reps == 0 {
            bail!("--reps must be at least 1");
        }
        let mut sweep = SweepConfig {
            na: self.na,
            reps: self.reps,
            seed,
            ..SweepConfig::default()
        };
        if let Some(g) = &self.nm_grid {
            sweep.nm_grid = g.clone();
        }
        Ok(RunConfig {
            sweep,
            threshold_pp: self.threshold,
            probe_nm: self.probe,
        })
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sweep: SweepArgs,
    /// Directory receiving report.csv and marks.json.
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Sweep CSV written by `analyze`.
    #[arg(long)]
    report: PathBuf,
    /// Marks JSON; defaults to marks.json next to the report.
    #[arg(long)]
    marks: Option<PathBuf>,
    /// Catalog JSON; the bundled 8-bit multiplier catalog otherwise.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Cap every site's tolerated NM at this value.
    #[arg(long)]
    tolerated: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    /// Model JSON whose inference is counted.
    #[arg(long, conflicts_with = "deepcaps")]
    model: Option<PathBuf>,
    /// Use the DeepCaps operation-count fixture instead of a model.
    #[arg(long)]
    deepcaps: bool,
    /// Selection plan JSON (requires --model).
    #[arg(long, requires = "model", conflicts_with = "uniform")]
    plan: Option<PathBuf>,
    /// Cost every multiplication with this catalog component.
    #[arg(long)]
    uniform: Option<String>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

/// Contents of marks.json.
#[derive(Serialize, Deserialize)]
struct Analysis {
    marks: Marks,
    tolerances: Vec<SiteTolerance>,
}

#[derive(Serialize)]
struct ProfileOutput {
    profile: ErrorProfile,
    range: f64,
    nm: f64,
    na: f64,
    gaussian: Option<GaussianFit>,
}

#[derive(Serialize)]
struct EnergyOutput {
    counts: OpCounts,
    summary: EnergySummary,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => cmd_train(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Operands(a) => cmd_operands(a),
        Command::Profile(a) => cmd_profile(a, seed),
        Command::Analyze(a) => cmd_analyze(a, seed),
        Command::Select(a) => cmd_select(a),
        Command::Energy(a) => cmd_energy(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a, seed),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_catalog_arg(path: Option<&Path>) -> Result<Catalog> {
    match path {
        Some(p) => load_catalog(p).with_context(|| format!("loading catalog {}", p.display())),
        None => Ok(Catalog::bundled()),
    }
}

fn test_split(data: &DataArgs, limit: Option<usize>) -> Result<LabeledDataset> {
    let (_, test) = data.load()?;
    Ok(match limit {
        Some(n) => test.take(n),
        None => test,
    })
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    let (train_set, test_set) = a.data.load()?;
    let spec = match &a.spec {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing spec {}", p.display()))?,
        None => NetworkSpec::toy_for_input(train_set.image_shape(), train_set.num_classes()),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        seed,
    };
    let outcome = train(build_network(&spec, seed)?, &train_set, &cfg)?;
    let acc = evaluate(&outcome.model, &test_set, &Injector::null())?;
    outcome.model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "trained {} epochs, final loss {:.5}, test accuracy {:.4}",
        cfg.epochs,
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        acc
    );
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let test = test_split(&a.data, None)?;
    println!("{}", evaluate(&model, &test, &Injector::null())?);
    Ok(())
}

fn cmd_operands(a: OperandArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (train_set, _) = a.data.load()?;
    let n = a.max_images.min(train_set.len());
    let pairs = conv_operand_pairs(&model, &train_set.images()[..n], &a.layer)?;
    let bytes: Vec<u8> = pairs.iter().flat_map(|&(x, w)| [x, w]).collect();
    fs::write(&a.out, bytes).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} operand pairs", pairs.len());
    Ok(())
}

fn parse_inputs(spec: &str) -> Result<InputSource> {
    if spec == "uniform" {
        return Ok(InputSource::UniformExhaustive);
    }
    let Some(path) = spec.strip_prefix("empirical:") else {
        bail!("--inputs must be 'uniform' or 'empirical:PATH', got '{spec}'");
    };
    let bytes = fs::read(path).with_context(|| format!("reading operand pairs {path}"))?;
    if bytes.is_empty() || bytes.len() % 2 != 0 {
        bail!("operand file {path} must hold a non-empty sequence of byte pairs");
    }
    Ok(InputSource::Empirical(bytes.chunks_exact(2).map(|p| (p[0], p[1])).collect()))
}

fn cmd_profile(a: ProfileArgs, seed: u64) -> Result<()> {
    let mult = MultiplierModel::parse(&a.mult)?;
    let source = parse_inputs(&a.inputs)?;
    let opts = ProfileOptions {
        chain_samples: a.samples,
        seed,
    };
    let profiles = profile(&mult, &source, &a.chains, &opts)?;
    let out = profiles
        .into_iter()
        .map(|p| {
            let r = a.range.unwrap_or(p.chain_length as f64 * 255.0 * 255.0);
            let (na, nm) = to_nm_na(&p, &Range::new(0.0, r)?)?;
            let gaussian = gaussian_likeness(&p).ok();
            Ok(ProfileOutput {
                profile: p,
                range: r,
                nm,
                na,
                gaussian,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &to_json(&out)?)
}

fn analyze(model: &Model, test: &LabeledDataset, cfg: &RunConfig) -> Result<(ResilienceReport, Analysis)> {
    let mut report = group_sweep(model, test, &cfg.sweep)?;
    let group_marks = mark_resilient(&report, cfg.threshold_pp, cfg.probe_nm)?;
    for m in &group_marks.groups {
        if m.mark == Mark::NonResilient {
            report.rows.extend(layer_sweep(model, test, m.group, &cfg.sweep)?);
        }
    }
    let marks = mark_resilient(&report, cfg.threshold_pp, cfg.probe_nm)?;
    let tolerances = site_tolerances(model.sites(), &report, &marks)?;
    Ok((report, Analysis { marks, tolerances }))
}

fn cmd_analyze(a: AnalyzeArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let test = test_split(&a.data, a.sweep.limit)?;
    let cfg = a.sweep.config(seed)?;
    let (report, analysis) = analyze(&model, &test, &cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write(&a.out_dir.join("report.csv"), &report.to_csv())?;
    write(&a.out_dir.join("marks.json"), &to_json(&analysis)?)?;
    eprintln!("baseline accuracy {:.4}, {} sweep rows", report.baseline, report.rows.len());
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let marks_path = match &a.marks {
        Some(p) => p.clone(),
        None => a.report.with_file_name("marks.json"),
    };
    let analysis: Analysis = serde_json::from_str(&read(&marks_path)?)
        .with_context(|| format!("parsing marks {}", marks_path.display()))?;
    // the report must parse against the schema even though tolerances come from marks
    ResilienceReport::from_csv(&read(&a.report)?, analysis.marks.baseline)
        .with_context(|| format!("parsing report {}", a.report.display()))?;
    let catalog = load_catalog_arg(a.catalog.as_deref())?;
    let mut tolerances = analysis.tolerances;
    if let Some(cap) = a.tolerated {
        if !(cap >= 0.0) {
            bail!("--tolerated must be >= 0");
        }
        for t in &mut tolerances {
            t.tolerated_nm = t.tolerated_nm.min(cap);
        }
    }
    let plan = select_components(&tolerances, &catalog)?;
    emit(a.out.as_deref(), &to_json(&plan)?)
}

fn cmd_energy(a: EnergyArgs) -> Result<()> {
    let units = UnitEnergies::default();
    let catalog = load_catalog_arg(a.catalog.as_deref())?;
    let (counts, summary) = match (&a.model, a.deepcaps) {
        (Some(path), _) => {
            let model = load_model(path)?;
            let counts = count_ops(&model);
            let summary = if let Some(plan_path) = &a.plan {
                let plan: SelectionPlan = serde_json::from_str(&read(plan_path)?)
                    .with_context(|| format!("parsing plan {}", plan_path.display()))?;
                energy_with_plan(&count_site_ops(&model), &units, &plan, &catalog)?
            } else {
                uniform_or_exact(&counts, &units, a.uniform.as_deref(), &catalog)?
            };
            (counts, summary)
        }
        (None, true) => {
            let counts = OpCounts::deepcaps();
            (counts, uniform_or_exact(&counts, &units, a.uniform.as_deref(), &catalog)?)
        }
        (None, false) => bail!("pass --model PATH or --deepcaps"),
    };
    emit(a.out.as_deref(), &to_json(&EnergyOutput { counts, summary })?)
}

fn uniform_or_exact(
    counts: &OpCounts,
    units: &UnitEnergies,
    component: Option<&str>,
    catalog: &Catalog,
) -> Result<EnergySummary> {
    let Some(name) = component else {
        return Ok(energy_estimate(counts, units));
    };
    let exact = catalog.exact_entry().context("catalog has no exact component")?;
    let entry = catalog
        .get(name)
        .with_context(|| format!("component '{name}' is not in the catalog"))?;
    Ok(energy_uniform(counts, units, entry.power_uw / exact.power_uw)?)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let report = ResilienceReport::from_csv(&read(&a.report)?, f64::NAN)
        .with_context(|| format!("parsing report {}", a.report.display()))?;
    let curves = report.group_curves();
    if curves.is_empty() {
        bail!("report {} has no group rows", a.report.display());
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (group, rows) in curves {
        let mut text = String::from("nm mean_acc min_acc max_acc\n");
        for (nm, mean, min, max) in rows {
            text.push_str(&format!("{nm} {mean} {min} {max}\n"));
        }
        write(&a.out_dir.join(format!("{group}.dat")), &text)?;
    }
    Ok(())
}

fn cmd_run(a: RunArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let test = test_split(&a.data, a.sweep.limit)?;
    let cfg = a.sweep.config(seed)?;
    let catalog = load_catalog_arg(a.catalog.as_deref())?;
    let out = run_pipeline(&model, &test, &cfg, &catalog, &UnitEnergies::default())?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write(&a.out_dir.join("report.csv"), &out.report.to_csv())?;
    let analysis = Analysis {
        marks: out.marks,
        tolerances: out.tolerances,
    };
    write(&a.out_dir.join("marks.json"), &to_json(&analysis)?)?;
    write(&a.out_dir.join("plan.json"), &to_json(&out.plan)?)?;
    let counts = count_ops(&model);
    let savings = out.energy.savings_percent;
    write(
        &a.out_dir.join("energy.json"),
        &to_json(&EnergyOutput {
            counts,
            summary: out.energy,
        })?,
    )?;
    eprintln!(
        "baseline accuracy {:.4}; estimated energy savings {:.2}%",
        out.report.baseline, savings
    );
    Ok(())
}
