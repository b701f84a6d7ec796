use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use beliefmix::encoder::ModelSpec;
use beliefmix::fitness::optimize_quantiles;
use beliefmix::graph::{validate_stats, PairwiseStats};
use beliefmix::mean_field::{mf_dkl_curve, phase_boundaries, write_mf_curve_csv, MFParams};
use beliefmix::mixture::MixtureModel;
use beliefmix::testbed::{census_scan, run_decimation, write_census_scan_csv};

use crate::config::{ExperimentConfig, MeanFieldBlock, PhaseBlock};
use crate::error::CliError;

pub type Outputs = Vec<String>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn csv_out(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(dir, name)?))
}

fn stats_for(cfg: &ExperimentConfig, stats_file: Option<&Path>) -> Result<(MixtureModel, PairwiseStats), CliError> {
    let mixture = cfg.build_mixture()?;
    let stats = match stats_file {
        Some(p) => PairwiseStats::read_csv(File::open(p)?)?,
        None => mixture.exact_pair_stats(),
    };
    Ok((mixture, stats))
}

pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Outputs, CliError> {
    let mixture = cfg.build_mixture()?;
    let mut w = csv_out(dir, "mixture.csv")?;
    w.write_record(["c", "i", "p"])?;
    for (c, row) in mixture.p.iter().enumerate() {
        for (i, p) in row.iter().enumerate() {
            w.write_record([c.to_string(), i.to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv_out(dir, "mixture_summary.csv")?;
    w.write_record(["n", "c", "h_max", "v", "v_empirical"])?;
    w.write_record([
        mixture.n.to_string(),
        mixture.c.to_string(),
        mixture.h_max.to_string(),
        mixture.v.to_string(),
        mixture.v_empirical.to_string(),
    ])?;
    w.flush()?;
    Ok(vec!["mixture.csv".into(), "mixture_summary.csv".into()])
}

pub fn stats(cfg: &ExperimentConfig, dir: &Path) -> Result<Outputs, CliError> {
    let (_, stats) = stats_for(cfg, None)?;
    stats.write_csv(create(dir, "stats.csv")?)?;
    let mut w = csv_out(dir, "violations.csv")?;
    w.write_record(["location", "kind", "residual"])?;
    for v in validate_stats(&stats) {
        w.write_record([format!("{:?}", v.location), format!("{:?}", v.kind), v.residual.to_string()])?;
    }
    w.flush()?;
    Ok(vec!["stats.csv".into(), "violations.csv".into()])
}

pub fn encode(cfg: &ExperimentConfig, dir: &Path, stats_file: Option<&Path>) -> Result<Outputs, CliError> {
    let (_, stats) = stats_for(cfg, stats_file)?;
    let spec = cfg.model_spec()?;
    let (pot, graph) = spec.build(&stats)?;
    let mut w = csv_out(dir, "nodes.csv")?;
    w.write_record(["i", "phi0", "phi1"])?;
    for i in 0..pot.num_variables() {
        let phi = pot.phi(i);
        w.write_record([i.to_string(), phi[0].to_string(), phi[1].to_string()])?;
    }
    w.flush()?;
    let mut w = csv_out(dir, "edges.csv")?;
    w.write_record(["i", "j", "psi00", "psi01", "psi10", "psi11"])?;
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let mut row = vec![i.to_string(), j.to_string()];
        row.extend(pot.psi(e).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    std::fs::write(dir.join("model.toml"), spec.to_toml()?)?;
    Ok(vec!["nodes.csv".into(), "edges.csv".into(), "model.toml".into()])
}

pub fn fixed_points(cfg: &ExperimentConfig, dir: &Path, stats_file: Option<&Path>) -> Result<Outputs, CliError> {
    let (mixture, stats) = stats_for(cfg, stats_file)?;
    let (alphas, scan) = cfg.census()?;
    let graph = match cfg.model.as_ref().and_then(|m| m.connectivity) {
        Some(k) => beliefmix::graph::prune(&stats, k)?,
        None => stats.full_graph(),
    };
    let records = census_scan(&mixture, &stats, &graph, &alphas, &scan)?;
    write_census_scan_csv(&records, create(dir, "census.csv")?)?;
    Ok(vec!["census.csv".into()])
}

pub fn decimate(cfg: &ExperimentConfig, dir: &Path, stats_file: Option<&Path>) -> Result<Outputs, CliError> {
    let (mixture, stats) = stats_for(cfg, stats_file)?;
    let spec = cfg.model_spec()?;
    let dec = cfg.decimation()?;
    let (pot, graph) = spec.build(&stats)?;
    let curve = run_decimation(&mixture, &graph, &pot, &dec)?;
    curve.write_csv(create(dir, "decimation.csv")?)?;
    Ok(vec!["decimation.csv".into()])
}

pub fn mean_field(block: &MeanFieldBlock, dir: &Path) -> Result<Outputs, CliError> {
    let mut base = MFParams::new(block.beta, block.eta, block.v).with_law(block.law()?);
    if let Some(scale) = block.field_scale {
        base.field_scale = scale;
    }
    let curve = mf_dkl_curve(&base, &block.grid(), block.form.into())?;
    write_mf_curve_csv(&curve, create(dir, "mf_dkl.csv")?)?;
    let mut w = csv_out(dir, "mf_states.csv")?;
    w.write_record(["rho", "mu", "q", "r", "converged", "iterations"])?;
    for p in &curve {
        w.write_record([
            p.rho.to_string(),
            p.state.mu[0].to_string(),
            p.state.q.to_string(),
            p.state.r.to_string(),
            p.state.converged.to_string(),
            p.state.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec!["mf_dkl.csv".into(), "mf_states.csv".into()])
}

pub fn phase(block: &PhaseBlock, dir: &Path) -> Result<Outputs, CliError> {
    let diagram = phase_boundaries(&block.etas)?;
    diagram.write_csv(create(dir, "phase.csv")?)?;
    Ok(vec!["phase.csv".into()])
}

pub fn optimize(cfg: &ExperimentConfig, dir: &Path, stats_file: Option<&Path>) -> Result<Outputs, CliError> {
    let (mixture, stats) = stats_for(cfg, stats_file)?;
    let opt = cfg.optimize()?;
    let res = optimize_quantiles(&mixture, &stats, &opt)?;
    res.trace.write_csv(create(dir, "trace.csv")?)?;
    std::fs::write(dir.join("best_model.toml"), ModelSpec::Quantile(res.model.clone()).to_toml()?)?;
    let mut w = csv_out(dir, "optimize.csv")?;
    w.write_record(["surrogate", "global", "evaluations"])?;
    w.write_record([res.surrogate.to_string(), res.global.to_string(), res.evaluations.to_string()])?;
    w.flush()?;
    Ok(vec!["trace.csv".into(), "best_model.toml".into(), "optimize.csv".into()])
}

fn read_column(path: &Path, column: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{} has no `{name}` column", path.display())))
    };
    let (ci, cv) = (find("rho")?, find(column)?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64, CliError> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("bad number in {}", path.display())))
        };
        out.push((parse(ci)?, parse(cv)?));
    }
    Ok(out)
}

/// Linear interpolation inside the tabulated range.
fn interpolate(curve: &[(f64, f64)], x: f64) -> Option<f64> {
    let k = curve.iter().position(|p| p.0 >= x - 1e-12)?;
    let (x1, y1) = curve[k];
    if (x1 - x).abs() <= 1e-12 {
        return Some(y1);
    }
    let (x0, y0) = *curve.get(k.checked_sub(1)?)?;
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

pub struct Comparison {
    pub rows: Vec<(f64, f64, f64)>,
    pub max_gap: f64,
    pub rho_at_max: f64,
}

pub fn join_curves(bp: &[(f64, f64)], mf: &[(f64, f64)], rho_min: f64) -> Comparison {
    let mut rows = Vec::new();
    let (mut max_gap, mut rho_at_max) = (0.0, f64::NAN);
    for &(rho, d) in bp {
        let Some(m) = interpolate(mf, rho) else { continue };
        rows.push((rho, d, m));
        let gap = (d - m).abs();
        if rho >= rho_min - 1e-12 && gap > max_gap {
            max_gap = gap;
            rho_at_max = rho;
        }
    }
    Comparison {
        rows,
        max_gap,
        rho_at_max,
    }
}

pub fn compare(bp: &Path, mf: &Path, rho_min: f64, dir: &Path) -> Result<Outputs, CliError> {
    let bp_curve = read_column(bp, "DKL")?;
    let mf_curve = read_column(mf, "dkl_mf")?;
    let cmp = join_curves(&bp_curve, &mf_curve, rho_min);
    let mut w = csv_out(dir, "compare.csv")?;
    w.write_record(["rho", "DKL", "dkl_mf", "gap"])?;
    for &(rho, d, m) in &cmp.rows {
        w.write_record([rho.to_string(), d.to_string(), m.to_string(), (d - m).abs().to_string()])?;
    }
    w.flush()?;
    let mut w = csv_out(dir, "compare_summary.csv")?;
    w.write_record(["rho_min", "max_gap", "rho_at_max", "n_points"])?;
    w.write_record([
        rho_min.to_string(),
        cmp.max_gap.to_string(),
        cmp.rho_at_max.to_string(),
        cmp.rows.len().to_string(),
    ])?;
    w.flush()?;
    Ok(vec!["compare.csv".into(), "compare_summary.csv".into()])
}

pub fn out_dir(flag: Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    flag.or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}
