use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::{Array2, Zip};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use knewimp::experiment::{
    benchmark, correlated_gaussian, run_experiment, write_outcome, BenchmarkConfig, ExperimentConfig,
};
use knewimp::kernel::KernelConfig;
use knewimp::metrics::{evaluate_against, WassMethod};
use knewimp::missingness::{simulate, Mechanism, MissingSpec};
use knewimp::score_net::{DsmConfig, ScoreNetwork};
use knewimp::tabular::{
    load_csv_with_delimiter, load_mask_csv, standardize, write_csv, write_mask_csv,
    StandardizationStats, TabularDataset,
};
use knewimp::wgf::{initial_network, knewimp_with_network, TrajectoryPoint, WgfConfig};
use knewimp::Error;

#[derive(Parser, Debug)]
#[command(name = "knewimp", version, about = "Kernelized Wasserstein-gradient-flow imputation for tabular data")]
struct Cli {
    /// JSON file setting any flag (kebab-case keys); command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mask a complete CSV and write the mask and the masked data.
    Simulate(SimulateArgs),
    /// Fill the missing cells of a CSV.
    Impute(ImputeArgs),
    /// Score an imputation against the truth.
    Evaluate(EvaluateArgs),
    /// Repeat simulate, impute and evaluate over seeds, with a mean baseline.
    Experiment(ExperimentArgs),
    /// Time the Estimate and Impute parts over a grid of sizes.
    Benchmark(BenchmarkArgs),
    /// Write a synthetic correlated Gaussian table.
    Generate(GenerateArgs),
}

/// Fills unset fields of `self` from `other`.
macro_rules! merge_from {
    ($self:ident, $other:ident; $($field:ident),* $(,)?) => {
        $( if $self.$field.is_none() { $self.$field = $other.$field; } )*
    };
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(rename_all = "kebab-case", default)]
struct InputArgs {
    /// Input has no header row.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_header: Option<bool>,
    /// Field delimiter.
    #[arg(long)]
    delimiter: Option<char>,
    /// Extra token read as a missing cell (empty, NaN and nan always are).
    #[arg(long)]
    missing_token: Option<String>,
}

impl InputArgs {
    fn merge(&mut self, other: Self) {
        merge_from!(self, other; no_header, delimiter, missing_token);
    }

    fn load(&self, path: &Path) -> anyhow::Result<TabularDataset> {
        let delimiter = self.delimiter.unwrap_or(',');
        if !delimiter.is_ascii() {
            return Err(Error::InvalidParameter(format!("delimiter must be ASCII, got {delimiter:?}")).into());
        }
        load_csv_with_delimiter(
            path,
            !self.no_header.unwrap_or(false),
            self.missing_token.as_deref().unwrap_or(""),
            delimiter as u8,
        )
        .with_context(|| format!("loading {}", path.display()))
    }
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(rename_all = "kebab-case", default)]
struct MaskArgs {
    /// mcar, mar or mnar.
    #[arg(long)]
    mechanism: Option<Mechanism>,
    /// Target missing rate in [0, 1).
    #[arg(long, value_parser = parse_rate)]
    rate: Option<f64>,
    /// Fraction of columns kept fully observed under MAR and MNAR.
    #[arg(long)]
    observed_fraction: Option<f64>,
    /// MCAR rate applied to the observed columns under MNAR.
    #[arg(long)]
    overlay_rate: Option<f64>,
}

impl MaskArgs {
    fn merge(&mut self, other: Self) {
        merge_from!(self, other; mechanism, rate, observed_fraction, overlay_rate);
    }

    fn spec(&self, seed: u64) -> MissingSpec {
        let rate = self.rate.unwrap_or(0.3);
        let mut spec = MissingSpec::new(self.mechanism.unwrap_or(Mechanism::Mcar), rate, seed);
        if let Some(f) = self.observed_fraction {
            spec.observed_fraction = f;
        }
        if let Some(r) = self.overlay_rate {
            spec.mcar_overlay_rate = r;
        }
        spec
    }
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let rate: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&rate) {
        Ok(rate)
    } else {
        Err(format!("rate must lie in [0, 1), got {rate}"))
    }
}

#[derive(Args, Deserialize, Debug, Default, Clone)]
#[serde(rename_all = "kebab-case", default)]
struct FlowArgs {
    /// Weight of the negative-entropy term.
    #[arg(long)]
    lambda: Option<f64>,
    /// RBF kernel bandwidth.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Pick the bandwidth by the median heuristic at every step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    median_bandwidth: Option<bool>,
    /// Euler step size.
    #[arg(long)]
    step_size: Option<f64>,
    /// Euler steps per Impute phase.
    #[arg(long)]
    steps: Option<usize>,
    /// Estimate/Impute repetitions.
    #[arg(long)]
    loops: Option<usize>,
    /// Training epochs per Estimate phase.
    #[arg(long)]
    epochs: Option<usize>,
    /// Denoising noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden width of the score network.
    #[arg(long)]
    hidden: Option<usize>,
    /// Trajectory sampling stride.
    #[arg(long)]
    record_every: Option<usize>,
    /// Jitter scale of the mean initialization.
    #[arg(long)]
    init_noise: Option<f64>,
    /// Do not mask kernel gradients by the source row's pattern.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_source_masking: Option<bool>,
}

impl FlowArgs {
    fn merge(&mut self, other: Self) {
        merge_from!(
            self, other; lambda, bandwidth, median_bandwidth, step_size, steps, loops, epochs,
            sigma, lr, hidden, record_every, init_noise, no_source_masking
        );
    }

    fn dsm(&self) -> DsmConfig {
        let d = DsmConfig::default();
        DsmConfig {
            sigma: self.sigma.unwrap_or(d.sigma),
            epochs: self.epochs.unwrap_or(d.epochs),
            lr: self.lr.unwrap_or(d.lr),
            ..d
        }
    }

    fn kernel(&self) -> KernelConfig {
        let d = KernelConfig::default();
        KernelConfig {
            bandwidth: self.bandwidth.unwrap_or(d.bandwidth),
            use_median_heuristic: self.median_bandwidth.unwrap_or(d.use_median_heuristic),
        }
    }

    fn wgf(&self) -> WgfConfig {
        let d = WgfConfig::default();
        WgfConfig {
            lambda: self.lambda.unwrap_or(d.lambda),
            step: self.step_size.unwrap_or(d.step),
            steps: self.steps.unwrap_or(d.steps),
            loops: self.loops.unwrap_or(d.loops),
            record_every: self.record_every.unwrap_or(d.record_every),
            init_noise: self.init_noise.unwrap_or(d.init_noise),
            source_masking: !self.no_source_masking.unwrap_or(false),
        }
    }

    fn hidden(&self) -> usize {
        self.hidden.unwrap_or(256)
    }
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", default)]
struct SimulateArgs {
    /// Complete input CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Where to write the 0/1 mask (1 = observed).
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Where to write the data with masked cells left empty.
    #[arg(long)]
    data_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    csv: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    mask: MaskArgs,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", default)]
struct ImputeArgs {
    /// CSV with missing cells.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Optional 0/1 mask; cells marked 0 are treated as missing.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Complete table used only to record metrics along the trajectory.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Where to write the completed table.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Where to write trajectory metrics (needs --truth).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Write the trained network checkpoint here.
    #[arg(long)]
    save_net: Option<PathBuf>,
    /// Start from this network checkpoint instead of a fresh one.
    #[arg(long)]
    load_net: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    csv: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", default)]
struct EvaluateArgs {
    /// Complete ground-truth CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Imputed CSV.
    #[arg(long)]
    imputed: Option<PathBuf>,
    /// 0/1 mask CSV (1 = observed).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// exact, sinkhorn or auto.
    #[arg(long)]
    wass_method: Option<WassMethod>,
    /// Score in the original units instead of standardized ones.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    raw: Option<bool>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    csv: InputArgs,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", default)]
struct ExperimentArgs {
    /// Complete input CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// exact, sinkhorn or auto.
    #[arg(long)]
    wass_method: Option<WassMethod>,
    /// Directory for summary.json and per-seed reports.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    csv: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    mask: MaskArgs,
    #[command(flatten)]
    #[serde(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", default)]
struct BenchmarkArgs {
    /// Comma-separated row counts.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Comma-separated column counts.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Neighbouring-column correlation of the synthetic data.
    #[arg(long)]
    rho: Option<f64>,
    /// MCAR missing rate.
    #[arg(long, value_parser = parse_rate)]
    rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON records here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", default)]
struct GenerateArgs {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Neighbouring-column correlation.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// A usage problem detected after parsing (exit code 1).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn required<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| usage(format!("missing required option --{flag}")))
}

/// Keys a config file may set.
const CONFIG_KEYS: &[&str] = &[
    "input", "mask", "truth", "imputed", "output", "output-dir", "mask-out", "data-out", "trajectory",
    "save-net", "load-net", "seed", "seeds", "no-header", "delimiter", "missing-token", "mechanism", "rate",
    "observed-fraction", "overlay-rate", "lambda", "bandwidth", "median-bandwidth", "step-size", "steps",
    "loops", "epochs", "sigma", "lr", "hidden", "record-every", "init-noise", "no-source-masking",
    "wass-method", "raw", "sizes", "dims", "rho", "rows", "cols",
];

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let map = value
        .as_object()
        .ok_or_else(|| usage(format!("config {} must hold a JSON object", path.display())))?;
    if let Some(key) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(usage(format!("config {}: unknown key {key:?}", path.display())));
    }
    serde_json::from_value(value).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn write_json(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(path) => fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_simulate(mut args: SimulateArgs, file: SimulateArgs) -> anyhow::Result<()> {
    args.csv.merge(file.csv);
    args.mask.merge(file.mask);
    merge_from!(args, file; input, mask_out, data_out, seed);
    let input = required(args.input, "input")?;
    let mask_out = required(args.mask_out, "mask-out")?;
    let data_out = required(args.data_out, "data-out")?;

    let ds = args.csv.load(&input)?;
    if ds.missing_count() > 0 {
        bail!("simulate: {} already has missing cells", input.display());
    }
    let spec = args.mask.spec(args.seed.unwrap_or(0));
    let mask = simulate(ds.values(), &spec).context("simulate")?;
    let masked = TabularDataset::from_truth_and_mask(ds.values().clone(), mask.clone())?;
    write_mask_csv(&mask_out, &mask)?;
    write_csv(&data_out, masked.values(), ds.column_names())?;
    println!("missing rate: {:.6}", masked.missing_rate());
    Ok(())
}

fn apply_mask(ds: TabularDataset, mask_path: Option<&Path>) -> anyhow::Result<TabularDataset> {
    let Some(path) = mask_path else { return Ok(ds) };
    let mask = load_mask_csv(path).with_context(|| format!("loading mask {}", path.display()))?;
    if mask.dim() != ds.values().dim() {
        bail!("mask {} has shape {:?}, data has {:?}", path.display(), mask.dim(), ds.values().dim());
    }
    let mut values = ds.values().clone();
    Zip::from(&mut values).and(&mask).for_each(|v, &m| {
        if m == 0 {
            *v = f64::NAN;
        }
    });
    let names = ds.column_names().map(<[String]>::to_vec);
    let out = TabularDataset::from_values(values)?;
    Ok(match names {
        Some(n) => out.with_column_names(n)?,
        None => out,
    })
}

fn cmd_impute(mut args: ImputeArgs, file: ImputeArgs) -> anyhow::Result<()> {
    args.csv.merge(file.csv);
    args.flow.merge(file.flow);
    merge_from!(args, file; input, mask, truth, output, trajectory, save_net, load_net, seed);
    let input = required(args.input, "input")?;
    let output = required(args.output, "output")?;
    if args.trajectory.is_some() && args.truth.is_none() {
        return Err(usage("--trajectory needs --truth"));
    }

    let mut ds = apply_mask(args.csv.load(&input)?, args.mask.as_deref())?;
    if let Some(path) = &args.truth {
        let truth = args.csv.load(path)?;
        ds = ds.with_truth(truth.values().clone()).context("impute: attaching truth")?;
    }
    let (std_ds, stats) = standardize(&ds).context("impute: standardizing")?;
    let seed = args.seed.unwrap_or(0);
    let net = match &args.load_net {
        Some(path) => ScoreNetwork::load_json(path).with_context(|| format!("loading network {}", path.display()))?,
        None => initial_network(ds.ncols(), args.flow.hidden(), seed)?,
    };
    let (result, net) = knewimp_with_network(
        &std_ds,
        &args.flow.dsm(),
        &args.flow.kernel(),
        &args.flow.wgf(),
        net,
        seed,
    )
    .context("impute")?;

    let mut imputed = stats.invert(&result.imputed)?;
    // observed cells are copied back verbatim rather than round-tripped
    Zip::from(&mut imputed).and(ds.values()).and(ds.mask()).for_each(|x, &v, &m| {
        if m == 1 {
            *x = v;
        }
    });
    write_csv(&output, &imputed, ds.column_names())?;
    if let Some(path) = &args.trajectory {
        write_trajectory(path, &result.trajectory)?;
    }
    if let Some(path) = &args.save_net {
        net.save_json(path).with_context(|| format!("saving network {}", path.display()))?;
    }
    eprintln!(
        "imputed {} cells (estimate {:.2}s, impute {:.2}s)",
        ds.missing_count(),
        result.estimate_seconds,
        result.impute_seconds
    );
    Ok(())
}

fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["loop", "step", "mae", "wass"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        w.write_record([p.loop_index.to_string(), p.step.to_string(), opt(p.mae), opt(p.wass)])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_evaluate(mut args: EvaluateArgs, file: EvaluateArgs) -> anyhow::Result<()> {
    args.csv.merge(file.csv);
    merge_from!(args, file; truth, imputed, mask, wass_method, raw, output);
    let truth_path = required(args.truth, "truth")?;
    let imputed_path = required(args.imputed, "imputed")?;
    let mask_path = required(args.mask, "mask")?;

    let truth = args.csv.load(&truth_path)?;
    let imputed = args.csv.load(&imputed_path)?;
    let mask = load_mask_csv(&mask_path).with_context(|| format!("loading mask {}", mask_path.display()))?;
    if truth.missing_count() > 0 || imputed.missing_count() > 0 {
        bail!("evaluate: truth and imputed tables must be complete");
    }
    let (t, x) = if args.raw.unwrap_or(false) {
        (truth.values().clone(), imputed.values().clone())
    } else {
        if mask.dim() != truth.values().dim() {
            bail!("mask {} has shape {:?}, truth has {:?}", mask_path.display(), mask.dim(), truth.values().dim());
        }
        let stats = StandardizationStats::from_observed(truth.values(), &mask)?;
        (stats.apply(truth.values())?, stats.apply(imputed.values())?)
    };
    let report = evaluate_against(&t, &x, &mask, args.wass_method.unwrap_or(WassMethod::Auto)).context("evaluate")?;
    write_json(args.output.as_deref(), &serde_json::to_string(&report)?)
}

fn cmd_experiment(mut args: ExperimentArgs, file: ExperimentArgs) -> anyhow::Result<()> {
    args.csv.merge(file.csv);
    args.mask.merge(file.mask);
    args.flow.merge(file.flow);
    merge_from!(args, file; input, seeds, wass_method, output_dir);
    let input = required(args.input, "input")?;
    let ds = args.csv.load(&input)?;
    if ds.missing_count() > 0 {
        bail!("experiment: {} must be complete", input.display());
    }
    let spec = args.mask.spec(0);
    if args.mask.observed_fraction.is_some() || args.mask.overlay_rate.is_some() {
        return Err(usage("experiment uses the default observed fraction and overlay rate"));
    }
    let cfg = ExperimentConfig {
        mechanism: spec.mechanism,
        rate: spec.rate,
        seeds: args.seeds.unwrap_or_else(|| (0..5).collect()),
        dsm: args.flow.dsm(),
        kernel: args.flow.kernel(),
        wgf: args.flow.wgf(),
        hidden: args.flow.hidden(),
        wass_method: args.wass_method.unwrap_or(WassMethod::Auto),
    };
    let outcome = run_experiment(ds.values(), &cfg).context("experiment")?;
    if let Some(dir) = &args.output_dir {
        write_outcome(dir, &outcome)?;
    }
    write_json(None, &serde_json::to_string_pretty(&outcome.summary)?)
}

fn cmd_benchmark(mut args: BenchmarkArgs, file: BenchmarkArgs) -> anyhow::Result<()> {
    args.flow.merge(file.flow);
    merge_from!(args, file; sizes, dims, rho, rate, seed, output);
    let d = BenchmarkConfig::default();
    let cfg = BenchmarkConfig {
        sizes: args.sizes.unwrap_or(d.sizes),
        dims: args.dims.unwrap_or(d.dims),
        rate: args.rate.unwrap_or(d.rate),
        rho: args.rho.unwrap_or(d.rho),
        seed: args.seed.unwrap_or(d.seed),
        dsm: args.flow.dsm(),
        kernel: args.flow.kernel(),
        wgf: args.flow.wgf(),
        hidden: args.flow.hidden(),
    };
    let records = benchmark(&cfg).context("benchmark")?;
    write_json(args.output.as_deref(), &serde_json::to_string_pretty(&records)?)
}

fn cmd_generate(mut args: GenerateArgs, file: GenerateArgs) -> anyhow::Result<()> {
    merge_from!(args, file; rows, cols, rho, seed, output);
    let output = required(args.output, "output")?;
    let (n, d) = (args.rows.unwrap_or(200), args.cols.unwrap_or(4));
    let x: Array2<f64> = correlated_gaussian(n, d, args.rho.unwrap_or(0.8), args.seed.unwrap_or(0))?;
    let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    write_csv(&output, &x, Some(&names))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, load_config(cfg)?),
        Command::Impute(a) => cmd_impute(a, load_config(cfg)?),
        Command::Evaluate(a) => cmd_evaluate(a, load_config(cfg)?),
        Command::Experiment(a) => cmd_experiment(a, load_config(cfg)?),
        Command::Benchmark(a) => cmd_benchmark(a, load_config(cfg)?),
        Command::Generate(a) => cmd_generate(a, load_config(cfg)?),
    }
}

/// 1 for usage problems, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|cause| {
        cause.is::<Usage>() || matches!(cause.downcast_ref::<Error>(), Some(Error::InvalidParameter(_)))
    });
    if is_usage {
        1
    } else {
        2
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
