use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::json;

use diffreg_core::basis::{BasisSpec, BasisSystem, DataSet};
use diffreg_core::config::RunConfig;
use diffreg_core::io::{matrix_to_csv, read_dataset, write_dataset};
use diffreg_core::regress::{loglog_slope, Design};
use diffreg_core::sim::{self, gen_dataset, kde, kde_grid, McReport, MeanSe};
use diffreg_core::gof::bootstrap_test_with;
use diffreg_core::{rng, spectrum_diag};

use crate::output::{num, provenance, write_csv, write_csv_text, write_json};
use crate::{CliError, Context};

fn data_err(e: diffreg_core::Error) -> CliError {
    CliError::Data(e.to_string())
}

/// The data set named by `data`, with its basis.
fn load_data(cfg: &RunConfig) -> Result<(DataSet, BasisSystem), CliError> {
    let dir = cfg.data.as_ref().ok_or_else(|| CliError::Config("data: a data set directory is required".into()))?;
    let (data, basis, _) = read_dataset(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok((data, basis))
}

struct Prepared {
    data: DataSet,
    basis: BasisSystem,
    design: Design,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let (data, basis) = load_data(cfg)?;
    let km = cfg.kernel.assemble(&basis)?;
    let design = Design::new(&data, &km)?;
    Ok(Prepared { data, basis, design })
}

/// Configured `λ`, else the GCV-best value of the grid.
fn choose_lambda(fixed: Option<f64>, p: &Prepared, grid: &[f64]) -> Result<(f64, &'static str), CliError> {
    match fixed {
        Some(l) => Ok((l, "config")),
        None => Ok((p.design.sweep(p.data.f(), grid)?.best_lambda, "gcv")),
    }
}

fn progress_reporter(label: &str) -> impl Fn(usize, usize) + Sync + '_ {
    let tty = std::io::stderr().is_terminal();
    let last = AtomicUsize::new(0);
    move |done, total| {
        if tty && (done == total || done >= last.load(Ordering::Relaxed) + total.div_ceil(100)) {
            last.store(done, Ordering::Relaxed);
            eprint!("\r{label}: {done}/{total}");
            if done == total {
                eprintln!();
            }
        }
    }
}

fn summary_rows(label: &str, report: &McReport) -> Vec<Vec<String>> {
    let row = |metric: &str, lambda: Option<f64>, m: MeanSe| {
        vec![
            label.to_string(),
            metric.to_string(),
            lambda.map(num).unwrap_or_default(),
            num(m.mean),
            num(m.se),
            format!("{:.2} ({:.2})", m.mean, m.se),
        ]
    };
    let s = &report.summary;
    let mut rows = Vec::new();
    for c in &s.cells {
        rows.push(row("ess", Some(c.lambda), c.ess));
    }
    for c in &s.cells {
        rows.push(row("gcv", Some(c.lambda), c.gcv));
    }
    rows.push(row("ess_min", None, s.ess_min));
    rows.push(row("ess_theta", None, s.ess_theta));
    rows.push(row("theta_hat", None, s.theta_hat));
    rows.push(row("tss", None, s.tss));
    if let Some(r) = s.rejection_rate {
        rows.push(row("rejection_rate", None, MeanSe { mean: r, se: (r * (1.0 - r) / s.reps.max(1) as f64).sqrt() }));
    }
    rows
}

/// Density of the statistic across replications and of the bootstrap
/// replicates of the first `samples` replications, on a shared grid.
fn density_table(report: &McReport, samples: usize, points: usize) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let tests: Vec<_> = report.records.iter().filter_map(|r| r.test.as_ref()).collect();
    if tests.is_empty() {
        return None;
    }
    let stat: Vec<f64> = tests.iter().map(|t| t.q_n).collect();
    let reps: Vec<&Vec<f64>> = tests.iter().filter_map(|t| t.replicates.as_ref()).take(samples).collect();
    let all: Vec<f64> = stat.iter().chain(reps.iter().flat_map(|r| r.iter())).copied().collect();
    let grid = kde_grid(&all, points);
    let mut columns = vec![kde(&stat, &grid, None)];
    columns.extend(reps.iter().map(|r| kde(r, &grid, None)));
    let mut header = vec!["x".to_string(), "statistic".to_string()];
    header.extend((1..=reps.len()).map(|i| format!("sample_{i}")));
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| std::iter::once(num(x)).chain(columns.iter().map(|c| num(c[i]))).collect())
        .collect();
    Some((header, rows))
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let prov = provenance("simulate", cfg);
    let scenarios = cfg.simulation.resolve().map_err(|e| CliError::Config(e.to_string()))?;
    let mut summaries = Vec::new();
    let mut summary_csv = Vec::new();
    for (label, sc) in &scenarios {
        log::info!("scenario {label}: n={} snr={} omega={} reps={}", sc.n, sc.snr, sc.omega, sc.reps);
        let report = sim::run_mc_with_progress(sc, &progress_reporter(label))?;
        write_csv_text(&ctx.out.join(format!("records_{label}.csv")), &prov, &report.records_csv()?)?;
        summary_csv.extend(summary_rows(label, &report));
        if cfg.simulation.density_samples > 0 {
            if let Some((header, rows)) = density_table(&report, cfg.simulation.density_samples, cfg.test.kde_points) {
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                write_csv(&ctx.out.join(format!("density_{label}.csv")), &prov, &header, &rows)?;
            }
        }
        if cfg.simulation.emit_dataset {
            let spec = BasisSpec { p: sc.p, interval: (0.0, 1.0), n_quad: sc.n_quad, with_constant: false };
            let basis = spec.build()?;
            let sim_data = gen_dataset(sc, &basis, &mut rng::stream(sc.seed, 0))?;
            let meta = json!({ "provenance": prov, "scenario": label, "replication": 0, "sigma": sim_data.sigma });
            write_dataset(&ctx.out.join(format!("dataset_{label}")), &sim_data.data, &spec, meta)?;
        }
        summaries.push(json!({
            "label": label,
            "config": sc,
            "summary": report.summary,
            "failures": report.failures,
        }));
    }
    write_csv(
        &ctx.out.join("summary.csv"),
        &prov,
        &["scenario", "metric", "lambda", "mean", "se", "display"],
        &summary_csv,
    )?;
    write_json(&ctx.out.join("summary.json"), &json!({ "provenance": prov, "scenarios": summaries }))
}

pub fn fit(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let p = prepare(cfg)?;
    let (lambda, source) = choose_lambda(cfg.lambda, &p, &cfg.lambda_grid)?;
    let (row, fit) = p.design.sweep_row(p.data.f(), lambda)?;
    let prov = provenance("fit", cfg);
    write_csv_text(&ctx.out.join("fitted.csv"), &prov, &matrix_to_csv(&p.design.fitted(&fit)))?;
    write_json(
        &ctx.out.join("fit.json"),
        &json!({
            "provenance": prov,
            "lambda": lambda,
            "lambda_source": source,
            "rss": row.rss,
            "gcv": row.gcv,
            "trace": row.trace,
            "fit": fit,
        }),
    )
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let p = prepare(cfg)?;
    let result = p.design.sweep(p.data.f(), &cfg.lambda_grid)?;
    let prov = provenance("sweep", cfg);
    let rows: Vec<Vec<String>> =
        result.rows.iter().map(|r| vec![num(r.lambda), num(r.rss), num(r.gcv), num(r.trace)]).collect();
    write_csv(&ctx.out.join("sweep.csv"), &prov, &["lambda", "rss", "gcv", "trace"], &rows)?;
    write_json(
        &ctx.out.join("sweep.json"),
        &json!({ "provenance": prov, "best_lambda": result.best_lambda, "rows": result.rows }),
    )
}

pub fn test(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let p = prepare(cfg)?;
    let (lambda, source) = choose_lambda(cfg.test.lambda, &p, &cfg.lambda_grid)?;
    let family = cfg.test.family.build(&p.basis)?;
    let result = bootstrap_test_with(&p.design, &p.data, lambda, &family, cfg.test.b, cfg.test.strategy, cfg.seed)?;
    if result.theta_clipped {
        log::warn!("parametric estimate {} clipped at 0", result.theta_raw);
    }
    let prov = provenance("test", cfg);
    let rows: Vec<Vec<String>> =
        result.bootstrap_values.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), num(*v)]).collect();
    write_csv(&ctx.out.join("bootstrap.csv"), &prov, &["replicate", "q"], &rows)?;
    let grid = kde_grid(&result.bootstrap_values, cfg.test.kde_points);
    let density = kde(&result.bootstrap_values, &grid, None);
    let rows: Vec<Vec<String>> = grid.iter().zip(&density).map(|(x, d)| vec![num(*x), num(*d)]).collect();
    write_csv(&ctx.out.join("density.csv"), &prov, &["x", "density"], &rows)?;
    let alpha = cfg.test.alpha;
    write_json(
        &ctx.out.join("test.json"),
        &json!({
            "provenance": prov,
            "family": family.name(),
            "lambda_source": source,
            "alpha": alpha,
            "critical_value": result.critical_value(alpha),
            "reject": result.rejects(alpha),
            "result": result,
        }),
    )
}

pub fn spectrum(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let (data, basis) = load_data(cfg)?;
    let km = cfg.kernel.assemble(&basis)?;
    let pp = data.p() * data.p();
    let top = cfg.top_m.unwrap_or(pp);
    if top > pp {
        return Err(CliError::Config(format!("top_m: {top} exceeds p^2 = {pp}")));
    }
    let gamma = spectrum_diag(&data, &km, top)?;
    let prov = provenance("spectrum", cfg);
    let rows: Vec<Vec<String>> = gamma.iter().enumerate().map(|(i, g)| vec![(i + 1).to_string(), num(*g)]).collect();
    write_csv(&ctx.out.join("spectrum.csv"), &prov, &["index", "gamma"], &rows)?;
    write_json(
        &ctx.out.join("spectrum.json"),
        &json!({ "provenance": prov, "gamma": gamma, "loglog_slope_2_20": loglog_slope(&gamma, 2, 20) }),
    )
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let section = cfg.ingest.as_ref().ok_or_else(|| CliError::Config("ingest: section is required".into()))?;
    let input: &PathBuf =
        section.input.as_ref().ok_or_else(|| CliError::Config("ingest.input: an input file is required".into()))?;
    let basis = cfg.basis.build()?;
    let (data, report) = diffreg_core::ingest::ingest_file(input, &section.schema, &section.recipe, &basis, section.lenient)
        .map_err(|e| match e {
            diffreg_core::Error::Argument(_) | diffreg_core::Error::Capability(_) => CliError::Config(e.to_string()),
            other => data_err(other),
        })?;
    for s in &report.skipped {
        log::warn!("subject {} skipped: {}", s.id, s.reason);
    }
    let prov = provenance("ingest", cfg);
    let dir: &Path = &ctx.out.join("dataset");
    write_dataset(dir, &data, &cfg.basis, json!({ "provenance": prov, "ingest": report }))?;
    write_json(&ctx.out.join("ingest_report.json"), &json!({ "provenance": prov, "report": report }))
}
