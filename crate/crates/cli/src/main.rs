mod config;
mod error;
mod report;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agrisk::actuarial::{self, load_contracts, price_all, standard_contracts, Contract};
use agrisk::data::{load_rainfall, load_yield_panel, transform_panel, write_rainfall, write_yield_panel, Crop};
use agrisk::decomposition::{
    decompose, decompose_fit, decompose_posterior, format_decomposition_text, write_decomposition_csv,
    VarianceDecomposition,
};
use agrisk::estimation::{fit_mle, fit_ols, profile_zeta, write_profile_csv, FitResult, ProfileParameter};
use agrisk::gibbs::{posterior_histogram, run_gibbs, write_histogram_csv, PdVariant, Scheme};
use agrisk::hierarchy::{HierarchySpec, Level};
use agrisk::synthetic::{calibrate_premium, calibrate_probability, generate_panel, plan_rainfall};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "agrisk", version, about = "Multilevel yield-risk decomposition and rainfall insurance pricing")]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Format of the report printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a yield panel and a rainfall panel with known truth.
    Simulate(SimulateArgs),
    /// Pooled least squares with season fixed effects.
    FitOls(FitArgs),
    /// Maximum likelihood fit of the multilevel model.
    FitMle(FitArgs),
    /// Gibbs sampling fit of the multilevel model.
    FitBayes(BayesArgs),
    /// Signed-root likelihood-ratio profiles of MLE parameters.
    Profile(ProfileArgs),
    /// Variance shares and intraclass correlations.
    Decompose(DecomposeArgs),
    /// Price rainfall contracts against a daily rainfall panel.
    Price(PriceArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Calibrate rainfall so this contract pays with the target probability.
    #[arg(long)]
    calibrate_contract: Option<String>,
    #[arg(long)]
    target_probability: Option<f64>,
    #[arg(long)]
    target_premium: Option<f64>,
    /// Skip the rainfall panel.
    #[arg(long)]
    no_rainfall: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Yield panel CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated levels, innermost first.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<Level>>,
    /// Drop the input covariates (crop intercepts only).
    #[arg(long)]
    no_covariates: bool,
    /// Keep only these crops.
    #[arg(long, value_delimiter = ',')]
    crops: Option<Vec<Crop>>,
}

#[derive(Debug, Args)]
struct BayesArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Keep every draw of every group effect.
    #[arg(long)]
    store_effects: bool,
    /// Use half the posterior variance of the deviance for p_D.
    #[arg(long)]
    pd_half_variance: bool,
    /// Histogram bins for each variance parameter.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Blocked,
    SingleSite,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Parameters to profile (default: every variance).
    #[arg(long, value_delimiter = ',')]
    parameter: Option<Vec<String>>,
    #[arg(long)]
    points_per_side: Option<usize>,
    #[arg(long)]
    width_se: Option<f64>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Fit result JSON files, shown side by side.
    #[arg(long)]
    fit: Vec<PathBuf>,
    /// Six variances: parcel, household, season, village, time, idiosyncratic.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    variances: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct PriceArgs {
    /// Daily rainfall CSV.
    #[arg(long)]
    rainfall: Option<PathBuf>,
    /// Contract file (JSON or TOML); defaults to the six built-in contracts.
    #[arg(long)]
    contracts: Option<PathBuf>,
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    format: Format,
    seed: Option<u64>,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| CliError::input("io", format!("cannot create {}: {e}", p.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Prints the report in the requested format.
    fn emit<T: Serialize>(&self, text: &str, csv_file: Option<&str>, json: &T) -> Result<(), CliError> {
        let bytes = match self.format {
            Format::Text => text.as_bytes().to_vec(),
            Format::Json => {
                let mut v = serde_json::to_vec_pretty(json)?;
                v.push(b'\n');
                v
            }
            Format::Csv => match csv_file {
                Some(name) => std::fs::read(self.path(name))?,
                None => text.as_bytes().to_vec(),
            },
        };
        let mut stdout = std::io::stdout().lock();
        match stdout.write_all(&bytes).and_then(|_| stdout.flush()) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => Ok(r?),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let workers = cli.workers.or(cfg.workers);
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::input("invalid_option", "--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input("invalid_option", e.to_string()))?;
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::input("io", format!("cannot create output directory {}: {e}", out.display())))?;
    let seed = cli.seed.or(cfg.seed);
    let ctx = Context { cfg, out, format: cli.format, seed };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::FitOls(a) => cmd_fit_ols(&ctx, a),
        Command::FitMle(a) => cmd_fit_mle(&ctx, a),
        Command::FitBayes(a) => cmd_fit_bayes(&ctx, a),
        Command::Profile(a) => cmd_profile(&ctx, a),
        Command::Decompose(a) => cmd_decompose(&ctx, a),
        Command::Price(a) => cmd_price(&ctx, a),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input("io", format!("no such file: {}", path.display())))
    }
}

fn find_contract(ctx: &Context, name: &str) -> Result<Contract, CliError> {
    let mut pool = standard_contracts();
    if let Some(p) = &ctx.cfg.contracts {
        pool.extend(load_contracts(p)?);
    }
    if Path::new(name).exists() {
        return load_contracts(name)?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::input("actuarial", "contract file lists no contracts"));
    }
    pool.into_iter()
        .find(|c| c.label == name)
        .ok_or_else(|| CliError::input("actuarial", format!("unknown contract `{name}`")))
}

fn cmd_simulate(ctx: &Context, a: SimulateArgs) -> Result<(), CliError> {
    let mut gen = ctx.cfg.simulate.clone();
    let mut rain = ctx.cfg.rainfall_generator.clone();
    if let Some(s) = ctx.seed {
        gen.seed = s;
        rain.seed = s;
    }
    let panel = generate_panel(&gen)?;
    write_yield_panel(ctx.create("panel.csv")?, &panel.records)?;

    #[derive(Serialize)]
    struct SimulationReport<'a> {
        truth: &'a agrisk::synthetic::GenerativeTruth,
        #[serde(skip_serializing_if = "Option::is_none")]
        rainfall: Option<RainfallSummary>,
    }
    #[derive(Serialize)]
    struct RainfallSummary {
        series: usize,
        clipped_phase_totals: usize,
        calibrated_means: Option<[f64; 3]>,
        calibrated_premium: Option<f64>,
    }

    let mut rainfall = None;
    if !a.no_rainfall {
        let mut plan = plan_rainfall(&rain)?;
        let mut calibration = ctx.cfg.calibration.clone();
        if let Some(name) = &a.calibrate_contract {
            let c = calibration.get_or_insert(config::CalibrationConfig {
                contract: name.clone(),
                probability: None,
                premium: None,
                sds: [60.0, 60.0, 80.0],
            });
            c.contract = name.clone();
        }
        if let Some(c) = calibration.as_mut() {
            c.probability = a.target_probability.or(c.probability);
            c.premium = a.target_premium.or(c.premium);
        }
        let mut means = None;
        let mut premium = None;
        if let Some(c) = &calibration {
            let contract = find_contract(ctx, &c.contract)?;
            if let Some(p) = c.probability {
                means = Some(calibrate_probability(&mut plan, &contract, c.sds, p)?);
            }
            if let Some(p) = c.premium {
                premium = Some(calibrate_premium(&mut plan, &contract, p)?);
            }
        }
        let series = plan.to_series();
        write_rainfall(ctx.create("rainfall.csv")?, &series)?;
        rainfall = Some(RainfallSummary {
            series: series.len(),
            clipped_phase_totals: plan.clipped,
            calibrated_means: means,
            calibrated_premium: premium,
        });
    }
    let report = SimulationReport { truth: &panel.truth, rainfall };
    ctx.write_json("truth.json", &report)?;
    let mut text = format!(
        "simulated {} observations over {} parcels, {} households, {} villages, {} periods\n",
        panel.truth.n_obs,
        panel.truth.group_counts[0],
        panel.truth.group_counts[1],
        panel.truth.group_counts[3],
        panel.truth.group_counts[4]
    );
    if let Some(d) = &panel.truth.decomposition {
        text.push_str(&format_decomposition_text(&[("truth", d)]));
    }
    ctx.emit(&text, None, &report)
}

fn hierarchy(ctx: &Context, a: &FitArgs) -> Result<(HierarchySpec, Option<Vec<Crop>>), CliError> {
    let h = &ctx.cfg.hierarchy;
    let mut levels = a.levels.clone().unwrap_or_else(|| h.levels.clone());
    levels.sort();
    levels.dedup();
    let spec = HierarchySpec::new(levels, h.include_covariates && !a.no_covariates)?;
    Ok((spec, a.crops.clone().or_else(|| h.crops.clone())))
}

fn load_records(ctx: &Context, a: &FitArgs) -> Result<(Vec<agrisk::data::TransformedRecord>, HierarchySpec), CliError> {
    let path = a
        .input
        .clone()
        .or_else(|| ctx.cfg.input.clone())
        .ok_or_else(|| CliError::input("invalid_option", "no yield panel given (use --input)"))?;
    require_file(&path)?;
    let mut raw = load_yield_panel(&path, &ctx.cfg.schema)?;
    let (spec, crops) = hierarchy(ctx, a)?;
    if let Some(crops) = crops {
        raw.retain(|r| crops.contains(&r.crop));
        if raw.is_empty() {
            return Err(CliError::input("data", "no observations left after the crop filter"));
        }
    }
    Ok((transform_panel(&raw)?, spec))
}

fn write_fit_artifacts(ctx: &Context, fit: &FitResult) -> Result<Option<VarianceDecomposition>, CliError> {
    ctx.write_json("fit.json", fit)?;
    ctx.write_text("coefficients.txt", &report::coefficient_table(fit))?;
    report::write_coefficients_csv(ctx.create("coefficients.csv")?, fit)?;
    if fit.components.is_empty() {
        return Ok(None);
    }
    let d = decompose_fit(fit)?;
    let label = format!("{:?}", fit.method).to_uppercase();
    write_decomposition_csv(ctx.create("decomposition.csv")?, &[(&label, &d)])?;
    ctx.write_text("decomposition.txt", &format_decomposition_text(&[(&label, &d)]))?;
    Ok(Some(d))
}

fn fit_text(fit: &FitResult, d: Option<&VarianceDecomposition>) -> String {
    let mut text = report::coefficient_table(fit);
    if let Some(d) = d {
        text.push('\n');
        text.push_str(&format_decomposition_text(&[(&format!("{:?}", fit.method).to_uppercase(), d)]));
    }
    for w in &fit.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    text
}

fn cmd_fit_ols(ctx: &Context, a: FitArgs) -> Result<(), CliError> {
    let (records, spec) = load_records(ctx, &a)?;
    let fit = fit_ols(&records, &spec)?;
    write_fit_artifacts(ctx, &fit)?;
    ctx.emit(&fit_text(&fit, None), Some("coefficients.csv"), &fit)
}

fn cmd_fit_mle(ctx: &Context, a: FitArgs) -> Result<(), CliError> {
    let (records, spec) = load_records(ctx, &a)?;
    let fit = fit_mle(&records, &spec, &ctx.cfg.mle)?;
    let d = write_fit_artifacts(ctx, &fit)?;
    ctx.emit(&fit_text(&fit, d.as_ref()), Some("coefficients.csv"), &fit)
}

fn cmd_fit_bayes(ctx: &Context, a: BayesArgs) -> Result<(), CliError> {
    let (records, spec) = load_records(ctx, &a.fit)?;
    let mut chains = ctx.cfg.chains.clone();
    if let Some(s) = ctx.seed {
        chains.seed = s;
    }
    chains.burn_in = a.burn_in.unwrap_or(chains.burn_in);
    chains.keep = a.keep.unwrap_or(chains.keep);
    chains.thin = a.thin.unwrap_or(chains.thin);
    chains.n_chains = a.chains.unwrap_or(chains.n_chains);
    chains.store_effects |= a.store_effects;
    if let Some(s) = a.scheme {
        chains.scheme = match s {
            SchemeArg::Blocked => Scheme::Blocked,
            SchemeArg::SingleSite => Scheme::SingleSite,
        };
    }
    if a.pd_half_variance {
        chains.pd_variant = PdVariant::HalfVariance;
    }
    let draws = run_gibbs(&records, &spec, &ctx.cfg.priors, &chains)?;
    let fit = draws.fit_result(records.len());
    write_fit_artifacts(ctx, &fit)?;
    draws.write_csv(ctx.create("draws.csv")?)?;
    draws.write_summary_csv(ctx.create("posterior_summary.csv")?)?;
    let post = decompose_posterior(&draws)?;
    let mean = post.mean();
    write_decomposition_csv(ctx.create("decomposition.csv")?, &[("BAYES", &mean)])?;
    ctx.write_text("decomposition.txt", &format_decomposition_text(&[("BAYES", &mean)]))?;

    #[derive(Serialize)]
    struct Diagnostics<'a> {
        summaries: &'a [agrisk::gibbs::ParameterSummary],
        dic: &'a agrisk::gibbs::Dic,
        decomposition: &'a [(String, agrisk::gibbs::Summary)],
        warnings: &'a [String],
        config: &'a agrisk::gibbs::ChainConfig,
    }
    ctx.write_json(
        "diagnostics.json",
        &Diagnostics {
            summaries: &draws.summaries,
            dic: &draws.dic,
            decomposition: &post.summaries,
            warnings: &draws.warnings,
            config: &draws.config,
        },
    )?;
    let bins = a.bins.or(ctx.cfg.histogram_bins).unwrap_or(50);
    for name in draws.variance_names() {
        let h = posterior_histogram(&draws, &name, bins)?;
        write_histogram_csv(ctx.create(&format!("histogram_{name}.csv"))?, &h)?;
    }
    ctx.emit(&fit_text(&fit, Some(&mean)), Some("posterior_summary.csv"), &fit)
}

fn cmd_profile(ctx: &Context, a: ProfileArgs) -> Result<(), CliError> {
    let (records, spec) = load_records(ctx, &a.fit)?;
    let fit = fit_mle(&records, &spec, &ctx.cfg.mle)?;
    let parameters: Vec<ProfileParameter> = match &a.parameter {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?,
        None => {
            let mut v: Vec<ProfileParameter> = spec.levels.iter().map(|l| ProfileParameter::Variance(*l)).collect();
            v.push(ProfileParameter::Idiosyncratic);
            v
        }
    };
    let mut grid = ctx.cfg.profile.clone();
    grid.points_per_side = a.points_per_side.unwrap_or(grid.points_per_side);
    grid.width_se = a.width_se.unwrap_or(grid.width_se);
    let mut profiles = Vec::new();
    for p in &parameters {
        profiles.push(profile_zeta(&records, &spec, &fit, p, &grid, &ctx.cfg.mle)?);
    }
    write_profile_csv(ctx.create("profile.csv")?, &profiles)?;
    ctx.write_json("profile.json", &profiles)?;
    let mut text = String::new();
    for p in &profiles {
        text.push_str(&format!("{} (estimate {:.4}, se {:.4})\n", p.parameter, p.mle_value, p.standard_error));
        for (t, z) in p.grid.iter().zip(&p.zeta) {
            text.push_str(&format!("  {t:>12.5} {z:>9.3}\n"));
        }
        if !p.failed.is_empty() {
            text.push_str(&format!("  {} grid point(s) failed\n", p.failed.len()));
        }
    }
    ctx.emit(&text, Some("profile.csv"), &profiles)
}

fn cmd_decompose(ctx: &Context, a: DecomposeArgs) -> Result<(), CliError> {
    let mut columns: Vec<(String, VarianceDecomposition)> = Vec::new();
    for path in &a.fit {
        let file = File::open(path).map_err(|e| CliError::input("io", format!("cannot open {}: {e}", path.display())))?;
        let fit: FitResult = serde_json::from_reader(std::io::BufReader::new(file))?;
        columns.push((format!("{:?}", fit.method).to_uppercase(), decompose_fit(&fit)?));
    }
    if let Some(v) = &a.variances {
        let arr: [f64; 6] = v
            .as_slice()
            .try_into()
            .map_err(|_| CliError::input("invalid_option", "--variances needs exactly six values"))?;
        columns.push(("INPUT".into(), decompose(&arr)?));
    }
    if columns.is_empty() {
        return Err(CliError::input("invalid_option", "give --fit or --variances"));
    }
    let refs: Vec<(&str, &VarianceDecomposition)> = columns.iter().map(|(n, d)| (n.as_str(), d)).collect();
    write_decomposition_csv(ctx.create("decomposition.csv")?, &refs)?;
    let text = format_decomposition_text(&refs);
    ctx.write_text("decomposition.txt", &text)?;
    ctx.write_json("decomposition.json", &columns)?;
    ctx.emit(&text, Some("decomposition.csv"), &columns)
}

fn cmd_price(ctx: &Context, a: PriceArgs) -> Result<(), CliError> {
    let rain_path = a
        .rainfall
        .clone()
        .or_else(|| ctx.cfg.rainfall.clone())
        .ok_or_else(|| CliError::input("invalid_option", "no rainfall panel given (use --rainfall)"))?;
    let contracts = match a.contracts.clone().or_else(|| ctx.cfg.contracts.clone()) {
        Some(p) => load_contracts(p)?,
        None => standard_contracts(),
    };
    require_file(&rain_path)?;
    let series = load_rainfall(&rain_path)?;
    let results = price_all(&contracts, &series)?;
    let rows: Vec<(&Contract, &actuarial::PricingResult)> = contracts.iter().zip(&results).collect();
    actuarial::write_pricing_report(ctx.create("pricing.csv")?, &rows)?;
    actuarial::write_payout_ledger(ctx.create("payout_ledger.csv")?, &results)?;

    #[derive(Serialize)]
    struct PricingSummary<'a> {
        label: &'a str,
        fair_premium_rs: f64,
        payout_probability: f64,
        loading_factor: Option<f64>,
        years_until_payout: Option<f64>,
        n_cells: usize,
        phases: &'a [actuarial::PhaseBreakdown],
    }
    let summary: Vec<PricingSummary> = results
        .iter()
        .map(|r| PricingSummary {
            label: &r.label,
            fair_premium_rs: r.fair_premium_rs,
            payout_probability: r.payout_probability,
            loading_factor: r.loading_factor,
            years_until_payout: r.years_until_payout.is_finite().then_some(r.years_until_payout),
            n_cells: r.n_cells,
            phases: &r.phases,
        })
        .collect();
    #[derive(Serialize)]
    struct PricingFile<'a> {
        contracts: &'a [PricingSummary<'a>],
        excluded: &'a [actuarial::ExcludedSeries],
        warnings: &'a [String],
    }
    let (excluded, warnings) = results.first().map(|r| (&r.excluded[..], &r.warnings[..])).unwrap_or((&[], &[]));
    let file = PricingFile { contracts: &summary, excluded, warnings };
    ctx.write_json("pricing.json", &file)?;

    let mut text = format!(
        "{:<12}{:>12}{:>12}{:>10}{:>10}{:>8}\n",
        "contract", "fair (Rs)", "prob.", "loading", "years", "cells"
    );
    for r in &results {
        let loading = r.loading_factor.map(|l| format!("{l:.2}")).unwrap_or_default();
        let years = if r.years_until_payout.is_finite() { format!("{:.2}", r.years_until_payout) } else { "inf".into() };
        text.push_str(&format!(
            "{:<12}{:>12.1}{:>11.2}%{:>10}{:>10}{:>8}\n",
            r.label,
            r.fair_premium_rs,
            100.0 * r.payout_probability,
            loading,
            years,
            r.n_cells
        ));
    }
    for e in excluded {
        text.push_str(&format!("excluded {} {}: {}\n", e.village_id, e.year, e.reason));
    }
    ctx.emit(&text, Some("pricing.csv"), &file)
}
