//! `greybox` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use greybox::experiment::{
    best_linear, degree_scan, generate, identify, nested_degree_sets, write_degree_scan, DataSource,
    Dataset, ExperimentConfig, Identification,
};
use greybox::model::GreyBoxModel;
use greybox::optimize::validate;
use greybox::physical::{physical_report, restoring_force_curve, write_coefficient_spectra, write_force_curve, RatioMap};
use greybox::signals::{estimate_frf, ExcitedBand, TimeRecord};
use greybox::simulate::{simulate_discrete, SimOptions};
use greybox::stats::{monte_carlo, write_correlation, write_stats_table};
use greybox::Error;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "greybox", version, about = "Grey-box nonlinear state-space identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Experiment manifest (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the manifest.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the configured truth-system data and write record CSVs.
    Generate(ConfigArgs),
    /// Subspace initialization, LM refinement and physical extraction.
    Identify {
        #[command(flatten)]
        args: ConfigArgs,
        /// Use this record instead of the manifest's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Stop after the subspace model.
        #[arg(long)]
        skip_lm: bool,
        /// Nested degree scan `lo:hi`, e.g. `2:5` fits {2}, {2,3}, ... {2..5}.
        #[arg(long, value_parser = parse_degrees)]
        degrees: Option<(u32, u32)>,
    },
    /// Simulate a saved model on the input of a record.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Record whose input drives the simulation.
        #[arg(long)]
        record: PathBuf,
        /// Output record CSV.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Modal parameters and nonlinear coefficients of a saved model.
    Extract {
        #[arg(long)]
        model: PathBuf,
        /// Band as `lo:hi` in Hz.
        #[arg(long, value_parser = parse_band)]
        band: (f64, f64),
        /// Samples per period, which fixes the frequency grid.
        #[arg(long = "samples")]
        n: usize,
        /// Ratio entries `row,col[,reference_row]`.
        #[arg(long, value_parser = parse_ratio_map)]
        ratio: Option<RatioMap>,
        /// Half-width of the displacement grid for the force curve.
        #[arg(long, default_value_t = 1.0)]
        span: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Monte-Carlo study over independent phase realizations.
    Montecarlo {
        #[command(flatten)]
        args: ConfigArgs,
        /// Number of realizations.
        #[arg(long, short = 'r', default_value_t = 20)]
        runs: usize,
    },
    /// Validation RMS of a saved model on a record.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        record: PathBuf,
        /// Band as `lo:hi` in Hz for the error spectrum.
        #[arg(long, value_parser = parse_band)]
        band: (f64, f64),
        /// Periods to drop from the start of the record.
        #[arg(long, default_value_t = 0)]
        transient: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn parse_pair<T: std::str::FromStr>(s: &str, sep: char) -> std::result::Result<(T, T), String> {
    let (a, b) = s.split_once(sep).ok_or_else(|| format!("expected `a{sep}b`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse `{v}`"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_degrees(s: &str) -> std::result::Result<(u32, u32), String> {
    let (lo, hi) = parse_pair::<u32>(s, ':')?;
    if lo == 0 || lo > hi {
        return Err(format!("degree range `{s}` must satisfy 1 <= lo <= hi"));
    }
    Ok((lo, hi))
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_pair::<f64>(s, ':')
}

/// `row,col` or `row,col,reference_row`.
fn parse_ratio_map(s: &str) -> std::result::Result<RatioMap, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| format!("cannot parse `{v}`")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [row, col] => Ok(RatioMap {
            row,
            col,
            reference_row: None,
        }),
        [row, col, r] => Ok(RatioMap {
            row,
            col,
            reference_row: Some(r),
        }),
        _ => Err(format!("expected `row,col` or `row,col,reference_row`, got `{s}`")),
    }
}

/// Marks a failure as caused by user input.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_input_error() { 2 } else { 3 };
        }
    }
    3
}

fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)
        .map_err(|e| InputError(format!("cannot create output directory {}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(args: &ConfigArgs) -> Result<()> {
    let (cfg, out) = load_config(args)?;
    let data = generate(&cfg)?;
    data.full.write_csv(out.join("record.csv"))?;
    data.validation.write_csv(out.join("validation.csv"))?;
    fs::write(out.join("config.json"), cfg.to_json()?)?;
    println!(
        "wrote {} periods of {} samples ({} outputs) to {}; periodicity error {:.3e}",
        data.full.periods(),
        cfg.n,
        data.full.l(),
        out.display(),
        data.steadiness
    );
    Ok(())
}

#[derive(Serialize)]
struct ValidationSummary {
    fnsi_rms: f64,
    final_rms: f64,
    best_linear_rms: Option<f64>,
    output_rms: f64,
    lm_status: Option<greybox::optimize::LmStatus>,
    lm_iterations: usize,
    fnsi: greybox::fnsi::FnsiDiagnostics,
}

/// Measured FRF next to the linear part of the identified model.
fn write_frf(id: &Identification, data: &Dataset, lines: &[usize], path: &Path) -> Result<()> {
    let rec = &data.estimation;
    let (u, y) = rec.spectra(0..rec.periods(), lines)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["freq_hz", "output", "measured_re", "measured_im", "model_re", "model_im"])?;
    if rec.m() != 1 {
        // Multi-input FRFs need a matrix inversion per line; only the model
        // side is meaningful without extra experiments.
        log::warn!("FRF export is limited to single-input records");
        w.flush()?;
        return Ok(());
    }
    let frf = estimate_frf(&u, &y, 1e-12)?;
    let freqs = y.freq_hz();
    for (j, &k) in lines.iter().enumerate() {
        let g = id.model.linear_part().transfer(greybox::signals::z_of(k, rec.n))?;
        for c in 0..rec.l() {
            let meas = frf.values[(c, j)];
            w.write_record([
                freqs[j].to_string(),
                rec.output_names[c].clone(),
                format!("{:e}", meas.re),
                format!("{:e}", meas.im),
                format!("{:e}", g[(c, 0)].re),
                format!("{:e}", g[(c, 0)].im),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_extraction(
    model: &GreyBoxModel,
    lines: &[usize],
    n: usize,
    ratio: Option<RatioMap>,
    span: f64,
    out: &Path,
) -> Result<greybox::physical::PhysicalReport> {
    let (report, terms) = physical_report(model, lines, n, ratio)?;
    report.save(out.join("physical.json"))?;
    write_coefficient_spectra(&terms, out.join("coefficients.csv"))?;
    let coefs: Vec<f64> = report.coefficients.iter().map(|c| c.average).collect();
    let single_channel = model.basis.nl_channels().len() == 1;
    if !coefs.is_empty() && single_channel {
        if let Ok((grid, force)) = force_curve(&coefs, model, span) {
            write_force_curve(&grid, &force, out.join("force_curve.csv"))?;
        }
    }
    Ok(report)
}

/// Restoring force on a symmetric 201-point grid over `[-span, span]`.
fn force_curve(coefs: &[f64], model: &GreyBoxModel, span: f64) -> greybox::Result<(Vec<f64>, Vec<f64>)> {
    let grid: Vec<f64> = (0..=200).map(|i| span * (i as f64 / 100.0 - 1.0)).collect();
    let force = restoring_force_curve(coefs, &model.basis, &grid)?;
    Ok((grid, force))
}

fn cmd_identify(args: &ConfigArgs, data_path: Option<&Path>, skip_lm: bool, degrees: Option<(u32, u32)>) -> Result<()> {
    let (mut cfg, out) = load_config(args)?;
    if let Some(path) = data_path {
        let rec = TimeRecord::read_csv(path)?;
        cfg.periods = rec.periods();
        cfg.source = DataSource::File { path: path.to_path_buf() };
        if matches!(cfg.validation, greybox::experiment::ValidationSplit::Realization { .. }) {
            cfg.validation = greybox::experiment::ValidationSplit::LastPeriod;
        }
        cfg.validate()?;
    }
    cfg.skip_lm |= skip_lm;
    let data = generate(&cfg)?;
    let lines = cfg.excited_band()?.lines();

    if let Some((lo, hi)) = degrees {
        let rows = degree_scan(&cfg, &data, &nested_degree_sets(lo, hi))?;
        write_degree_scan(&rows, out.join("degree_scan.csv"))?;
        println!("{:<12} {:>6} {:>14} {:>14}", "degrees", "params", "fnsi_rms", "final_rms");
        for r in &rows {
            let d: Vec<String> = r.degrees.iter().map(|p| p.to_string()).collect();
            println!("{:<12} {:>6} {:>14.6e} {:>14.6e}", d.join(","), r.parameters, r.fnsi_rms, r.validation_rms);
        }
        return Ok(());
    }

    let id = identify(&cfg, &data)?;
    id.fnsi.model.save(out.join("model_fnsi.json"), Some(&id.mask))?;
    id.model.save(out.join("model.json"), Some(&id.mask))?;
    if let Some(lm) = &id.lm {
        lm.write_trace(out.join("trace.csv"))?;
    }
    let linear = if cfg.skip_lm {
        None
    } else {
        match best_linear(&cfg, &data) {
            Ok(lin) => Some(lin),
            Err(e) => {
                log::warn!("best linear model failed: {e}");
                None
            }
        }
    };
    let summary = ValidationSummary {
        fnsi_rms: id.fnsi_validation.rms,
        final_rms: id.validation.rms,
        best_linear_rms: linear.as_ref().map(|l| l.validation.rms),
        output_rms: id.validation.output_rms,
        lm_status: id.lm.as_ref().map(|l| l.state.status),
        lm_iterations: id.lm.as_ref().map_or(0, |l| l.state.iterations),
        fnsi: id.fnsi.diagnostics.clone(),
    };
    write_json(&summary, &out.join("validation.json"))?;
    let names = &data.validation.output_names;
    id.fnsi_validation
        .error_spectrum
        .write_csv(out.join("error_spectrum_fnsi.csv"), names)?;
    id.validation.error_spectrum.write_csv(out.join("error_spectrum.csv"), names)?;
    if let Some(lin) = &linear {
        lin.validation
            .error_spectrum
            .write_csv(out.join("error_spectrum_linear.csv"), names)?;
    }
    write_frf(&id, &data, &lines, &out.join("frf.csv"))?;
    let span = id
        .model
        .basis
        .nl_channels()
        .first()
        .map_or(1.0, |&c| data.estimation.y.row(c).amax());
    let report = write_extraction(&id.model, &lines, cfg.n, cfg.ratio_map, span, &out)?;

    println!("validation rms: fnsi {:.6e}, final {:.6e}", id.fnsi_validation.rms, id.validation.rms);
    if let Some(lin) = &linear {
        println!("best linear model rms: {:.6e}", lin.validation.rms);
    }
    for (k, m) in report.modes.iter().enumerate() {
        println!("mode {}: f_n = {:.4} Hz, zeta = {:.4} %", k + 1, m.freq_hz, 100.0 * m.damping);
    }
    for c in &report.coefficients {
        println!(
            "{}: mean Re = {:.6e}, spread = {:.3e}, max |Im/Re| = {:.3e}",
            c.label,
            c.average,
            c.spread(),
            c.im_re_ratio
        );
    }
    Ok(())
}

fn cmd_simulate(model_path: &Path, record_path: &Path, out: &Path) -> Result<()> {
    let (model, _) = GreyBoxModel::load(model_path)?;
    let rec = TimeRecord::read_csv(record_path)?;
    if rec.m() != model.dims.m {
        return Err(InputError(format!("model has {} inputs, record has {}", model.dims.m, rec.m())).into());
    }
    let sim = simulate_discrete(&model, &rec.u, &vec![0.0; model.dims.n_s], &SimOptions::default())?;
    if let Some(index) = sim.diverged {
        return Err(Error::Diverged { index }.into());
    }
    let mut result = TimeRecord::new(rec.fs, rec.n, rec.u.clone(), sim.y)?;
    result.input_names = rec.input_names.clone();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    result.write_csv(out)?;
    println!("simulated {} samples to {}", rec.u.ncols(), out.display());
    Ok(())
}

fn band_lines((lo, hi): (f64, f64), fs: f64, n: usize) -> Result<Vec<usize>> {
    let b = ExcitedBand::from_hz(lo, hi, fs, n).map_err(|e| InputError(e.to_string()))?;
    Ok(b.lines())
}

fn cmd_extract(
    model_path: &Path,
    band: (f64, f64),
    n: usize,
    ratio: Option<RatioMap>,
    span: f64,
    out: &Path,
) -> Result<()> {
    let (model, _) = GreyBoxModel::load(model_path)?;
    fs::create_dir_all(out)?;
    let lines = band_lines(band, 1.0 / model.ts, n)?;
    let report = write_extraction(&model, &lines, n, ratio, span, out)?;
    for (k, m) in report.modes.iter().enumerate() {
        println!("mode {}: f_n = {:.4} Hz, zeta = {:.4} %", k + 1, m.freq_hz, 100.0 * m.damping);
    }
    for c in &report.coefficients {
        println!("{}: mean Re = {:.6e}, max |Im/Re| = {:.3e}", c.label, c.average, c.im_re_ratio);
    }
    Ok(())
}

fn cmd_montecarlo(args: &ConfigArgs, runs: usize) -> Result<()> {
    let (cfg, out) = load_config(args)?;
    let ensemble = monte_carlo(&cfg, runs, cfg.seed)?;
    let report = ensemble.report(&cfg.name)?;
    write_json(&report, &out.join("ensemble.json"))?;
    let mut table = report.parameters.clone();
    table.extend(report.modal.iter().cloned());
    table.extend(report.coefficients.iter().cloned());
    write_stats_table(&table, out.join("statistics.csv"))?;
    write_correlation(&ensemble.correlation()?, &ensemble.parameter_labels, out.join("correlation.csv"))?;
    println!(
        "{} of {} realizations succeeded; max off-diagonal |corr| = {}",
        report.succeeded,
        report.requested,
        report
            .max_off_diagonal_correlation
            .map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    for s in report.modal.iter().chain(&report.coefficients) {
        println!("{:<8} mean {:>14.6e}  std/mean {:>8.4} %", s.label, s.mean, s.ratio_percent);
    }
    Ok(())
}

fn cmd_validate(model_path: &Path, record_path: &Path, band: (f64, f64), transient: usize, out: Option<&Path>) -> Result<()> {
    let (model, _) = GreyBoxModel::load(model_path)?;
    let rec = TimeRecord::read_csv(record_path)?.steady(transient)?;
    if (1.0 / model.ts - rec.fs).abs() > 1e-9 * rec.fs {
        return Err(InputError(format!("model rate {} Hz differs from record rate {} Hz", 1.0 / model.ts, rec.fs)).into());
    }
    let lines = band_lines(band, rec.fs, rec.n)?;
    let v = validate(&model, &rec, &lines)?;
    println!("validation rms {:.6e} (output rms {:.6e})", v.rms, v.output_rms);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct Summary {
            rms: f64,
            output_rms: f64,
        }
        write_json(&Summary { rms: v.rms, output_rms: v.output_rms }, &dir.join("validation.json"))?;
        v.error_spectrum.write_csv(dir.join("error_spectrum.csv"), &rec.output_names)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Identify {
            args,
            data,
            skip_lm,
            degrees,
        } => cmd_identify(args, data.as_deref(), *skip_lm, *degrees),
        Command::Simulate { model, record, out } => cmd_simulate(model, record, out),
        Command::Extract {
            model,
            band,
            n,
            ratio,
            span,
            out,
        } => cmd_extract(model, *band, *n, *ratio, *span, out),
        Command::Montecarlo { args, runs } => cmd_montecarlo(args, *runs),
        Command::Validate {
            model,
            record,
            band,
            transient,
            out,
        } => cmd_validate(model, record, *band, *transient, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
