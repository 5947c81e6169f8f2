//! Implementations of the five subcommands. Each is a thin wrapper over the
//! library: outputs are byte-identical to formatting the corresponding
//! library results directly.

use serde_json::json;
use std::path::{Path, PathBuf};

use msfa::error::{Error, Result};
use msfa::io;
use msfa::{
    build_modular_var, center_panel, child_seed, cov_to_corr, fit_global, implied_stationary_cov,
    rv_from_covariance, rv_matrix_clusters, rv_matrix_networks, rv_test, run_benchmark,
    simulate_series, standardize_panel, whole_network_cov_with_ceiling, BenchResult,
    FactorSelection, GlobalFactorFit, Level, RvMatrix, RvTestResult, TimeSeriesPanel,
};

use crate::artifacts::{render_f64, render_opt_f64, OutputSet};

pub enum PanelFormat {
    Csv,
    Bin,
}

fn level_name(level: Level) -> &'static str {
    match level {
        Level::Cluster => "cluster",
        Level::Network => "network",
    }
}

fn matrix_bytes(matrix: &ndarray::Array2<f64>, format: &PanelFormat) -> Result<Vec<u8>> {
    match format {
        PanelFormat::Csv => Ok(io::matrix_to_csv(matrix).into_bytes()),
        PanelFormat::Bin => {
            // Reuse the writer through a temp buffer-free path: serialize
            // by hand to keep the artifact helpers byte-oriented.
            let mut bytes = Vec::with_capacity(12 + matrix.len() * 8);
            bytes.extend_from_slice(b"MSFA");
            bytes.extend_from_slice(&(matrix.nrows() as u32).to_le_bytes());
            bytes.extend_from_slice(&(matrix.ncols() as u32).to_le_bytes());
            for v in matrix.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            Ok(bytes)
        }
    }
}

pub fn cmd_simulate(
    spec_path: &Path,
    t_samples: usize,
    seed: Option<u64>,
    burn_in: usize,
    format: PanelFormat,
    out_dir: &Path,
) -> Result<()> {
    let mut spec = io::read_simulation_spec(spec_path)?;
    let master_seed = resolve_master_seed(seed);
    if spec.seed.is_none() {
        spec.seed = Some(child_seed(master_seed, 0));
    }
    let series_seed = child_seed(master_seed, 1);

    let model = build_modular_var(&spec)?;
    let sigma = implied_stationary_cov(&model)?;
    let corr = cov_to_corr(&sigma)?;
    let truth_rv = rv_from_covariance(&sigma, &model.layout, Level::Cluster)?;
    let panel = simulate_series(&model, t_samples, burn_in, series_seed)?;

    let mut out = OutputSet::create(out_dir)?;
    out.write_json("layout.json", &model.layout)?;
    let panel_name = match format {
        PanelFormat::Csv => "panel.csv",
        PanelFormat::Bin => "panel.bin",
    };
    out.write(panel_name, &matrix_bytes(panel.data(), &format)?)?;
    out.write("phi.bin", &matrix_bytes(&model.phi, &PanelFormat::Bin)?)?;
    out.write_json(
        "model.json",
        &json!({
            "spec": spec,
            "phi_file": "phi.bin",
            "spectral_radius": spec.target_spectral_radius,
            "series_seed": series_seed,
            "burn_in": burn_in,
            "t_samples": t_samples,
        }),
    )?;
    out.write("truth_cov.csv", io::matrix_to_csv(&sigma).as_bytes())?;
    out.write("truth_corr.csv", io::matrix_to_csv(&corr).as_bytes())?;
    out.write("truth_rv.csv", io::matrix_to_csv(&truth_rv.values).as_bytes())?;
    out.finish_manifest(
        "simulate",
        Some(master_seed),
        json!({
            "spec_file": spec_path.display().to_string(),
            "resolved_spec": spec,
            "t_samples": t_samples,
            "burn_in": burn_in,
            "series_seed": series_seed,
        }),
        &[spec_path.to_path_buf()],
        json!({}),
    )?;
    println!("seed: {master_seed}");
    println!(
        "wrote {} ({} x {}) and ground truth to {}",
        panel_name,
        t_samples,
        model.layout.num_nodes,
        out_dir.display()
    );
    Ok(())
}

fn resolve_master_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        // Entropy-seeded once; printed and recorded so the run can be
        // reproduced exactly.
        rand::random::<u64>()
    })
}

pub struct FitOptions {
    pub selection: FactorSelection,
    pub center: bool,
    pub standardize: bool,
    pub dense_ceiling: usize,
}

pub fn cmd_fit(
    panel_path: &Path,
    layout_path: &Path,
    options: &FitOptions,
    out_dir: &Path,
) -> Result<()> {
    if options.standardize && !options.center {
        return Err(Error::Parameter {
            name: "standardize",
            reason: "per-node standardization requires centering".into(),
        });
    }
    let layout = io::read_layout_json(layout_path)?;
    layout.ensure_valid()?;
    let raw = TimeSeriesPanel::new(io::read_panel_auto(panel_path)?)?;
    raw.ensure_matches(&layout)?;
    let panel = if options.standardize {
        standardize_panel(&raw)?
    } else if options.center {
        center_panel(&raw)?
    } else {
        raw
    };
    let fit = fit_global(&panel, &layout, &options.selection)?;

    let mut out = OutputSet::create(out_dir)?;
    let artifact =
        io::FitArtifact::from_fit(&fit, &options.selection, options.center, options.standardize);
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    out.write("fit.json", text.as_bytes())?;
    out.write("sigma_ff.csv", io::matrix_to_csv(&fit.factor_cov).as_bytes())?;
    let spans: Vec<_> = fit
        .block_spans
        .iter()
        .zip(&layout.clusters)
        .map(|(span, cluster)| {
            json!({
                "cluster": cluster.name,
                "start": span.start,
                "len": span.len(),
            })
        })
        .collect();
    out.write_json("blocks.json", &json!({ "factor_spans": spans }))?;
    let dense_written = layout.num_nodes <= options.dense_ceiling;
    if dense_written {
        let cov = whole_network_cov_with_ceiling(&fit, options.dense_ceiling)?;
        out.write("sigma_yy.csv", io::matrix_to_csv(&cov).as_bytes())?;
        out.write("corr_yy.csv", io::matrix_to_csv(&cov_to_corr(&cov)?).as_bytes())?;
    }
    out.finish_manifest(
        "fit",
        None,
        json!({
            "panel_file": panel_path.display().to_string(),
            "layout_file": layout_path.display().to_string(),
            "selection": options.selection,
            "center": options.center,
            "standardize": options.standardize,
            "dense_ceiling": options.dense_ceiling,
            "dense_outputs_written": dense_written,
        }),
        &[panel_path.to_path_buf(), layout_path.to_path_buf()],
        json!({
            "num_samples": fit.num_samples(),
            "total_factors": fit.total_factors(),
            "factors_per_cluster": fit
                .local_fits
                .iter()
                .map(|f| f.num_factors)
                .collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "fit {} clusters, {} factors total -> {}",
        layout.num_clusters(),
        fit.total_factors(),
        out_dir.display()
    );
    Ok(())
}

fn load_fit(fit_dir: &Path) -> Result<(GlobalFactorFit, PathBuf)> {
    let path = fit_dir.join("fit.json");
    let artifact = io::read_fit_artifact(&path)?;
    Ok((artifact.into_fit()?, path))
}

/// Render an RV matrix and its JSON document exactly as the CLI writes them.
pub fn rv_csv(rv: &RvMatrix) -> String {
    io::matrix_to_csv(&rv.values)
}

pub fn cmd_connectivity(fit_dir: &Path, level: Level, out_dir: &Path) -> Result<()> {
    let (fit, fit_path) = load_fit(fit_dir)?;
    let rv = match level {
        Level::Cluster => rv_matrix_clusters(&fit)?,
        Level::Network => rv_matrix_networks(&fit)?,
    };
    let names: Vec<String> = match level {
        Level::Cluster => fit.layout.clusters.iter().map(|c| c.name.clone()).collect(),
        Level::Network => fit.layout.networks.iter().map(|n| n.name.clone()).collect(),
    };
    let mut out = OutputSet::create(out_dir)?;
    let base = format!("rv_{}", level_name(level));
    out.write(&format!("{base}.csv"), rv_csv(&rv).as_bytes())?;
    let values: Vec<Vec<f64>> = rv.values.rows().into_iter().map(|r| r.to_vec()).collect();
    out.write_json(
        &format!("{base}.json"),
        &json!({ "level": level_name(level), "names": names, "values": values }),
    )?;
    out.finish_manifest(
        "connectivity",
        None,
        json!({
            "fit_dir": fit_dir.display().to_string(),
            "level": level_name(level),
        }),
        &[fit_path],
        json!({}),
    )?;
    println!("wrote {base}.csv to {}", out_dir.display());
    Ok(())
}

/// Edge-list CSV for test results, one row per tested pair.
pub fn test_results_csv(results: &[RvTestResult]) -> String {
    let mut out =
        String::from("level,first,second,rv,e_null,var_null,z,threshold,significant\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            level_name(r.level),
            r.pair.0,
            r.pair.1,
            render_f64(r.rv),
            render_f64(r.e_null),
            render_f64(r.var_null),
            render_f64(r.z),
            render_f64(r.threshold),
            r.significant
        ));
    }
    out
}

pub fn cmd_test(
    fit_dir: &Path,
    level: Level,
    alpha: f64,
    d_override: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let (fit, fit_path) = load_fit(fit_dir)?;
    let results = rv_test(&fit, level, alpha, d_override)?;
    let significant = results.iter().filter(|r| r.significant).count();
    let mut out = OutputSet::create(out_dir)?;
    let base = format!("test_{}", level_name(level));
    out.write(&format!("{base}.csv"), test_results_csv(&results).as_bytes())?;
    out.write_json(
        &format!("{base}.json"),
        &json!({
            "level": level_name(level),
            "alpha": alpha,
            "d": d_override.unwrap_or(results.len()),
            "tested": results.len(),
            "significant": significant,
            "results": results,
        }),
    )?;
    out.finish_manifest(
        "test",
        None,
        json!({
            "fit_dir": fit_dir.display().to_string(),
            "level": level_name(level),
            "alpha": alpha,
            "d_override": d_override,
        }),
        &[fit_path],
        json!({ "tested": results.len(), "significant": significant }),
    )?;
    println!(
        "{significant} of {} pairs significant at alpha = {alpha}",
        results.len()
    );
    Ok(())
}

/// Deterministic summary CSV for a benchmark result. Wall-clock timing is
/// deliberately excluded; it lives in the manifest.
pub fn bench_csv(result: &BenchResult) -> String {
    let mut out = String::from(
        "estimator,t,replications,failures,corr_error_mean,corr_error_sd,rv_error_mean,rv_error_sd\n",
    );
    for row in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.estimator,
            row.t,
            row.replications,
            row.failures,
            render_opt_f64(row.corr_error.map(|s| s.mean)),
            render_opt_f64(row.corr_error.map(|s| s.sd)),
            render_opt_f64(row.rv_error.map(|s| s.mean)),
            render_opt_f64(row.rv_error.map(|s| s.sd)),
        ));
    }
    out
}

pub fn raw_errors_csv(result: &BenchResult) -> String {
    let mut out = String::from("estimator,t,replication,corr_error,rv_error\n");
    for r in &result.raw_errors {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.estimator,
            r.t,
            r.replication,
            render_opt_f64(r.corr_error),
            render_opt_f64(r.rv_error),
        ));
    }
    out
}

pub fn cmd_bench(
    config_path: &Path,
    seed: Option<u64>,
    raw: bool,
    out_dir: &Path,
) -> Result<()> {
    let mut config = io::read_bench_config(config_path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    let result = run_benchmark(&config)?;

    let mut out = OutputSet::create(out_dir)?;
    out.write("bench.csv", bench_csv(&result).as_bytes())?;
    // Deterministic JSON: rows without timing, plus the crossover flag.
    let rows: Vec<_> = result
        .rows
        .iter()
        .map(|r| {
            json!({
                "estimator": r.estimator,
                "t": r.t,
                "replications": r.replications,
                "failures": r.failures,
                "corr_error": r.corr_error,
                "rv_error": r.rv_error,
            })
        })
        .collect();
    out.write_json(
        "bench.json",
        &json!({
            "rows": rows,
            "sample_beats_msfa_at_largest_t": result.sample_beats_msfa_at_largest_t,
        }),
    )?;
    if raw {
        out.write("raw_errors.csv", raw_errors_csv(&result).as_bytes())?;
    }
    let timing: Vec<_> = result
        .rows
        .iter()
        .map(|r| json!({ "estimator": r.estimator, "t": r.t, "wall_secs_per_fit": r.wall_secs_per_fit }))
        .collect();
    out.finish_manifest(
        "bench",
        Some(config.master_seed),
        json!({
            "config_file": config_path.display().to_string(),
            "resolved_config": config,
        }),
        &[config_path.to_path_buf()],
        json!({ "timing": timing }),
    )?;
    println!(
        "benchmark complete: {} result rows -> {}",
        result.rows.len(),
        out_dir.display()
    );
    Ok(())
}
