//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pab_core::estimator::{estimate_with_graph, validate, EstimationResult, ValidationConfig};
use pab_core::experiments::{
    run_strategy_sweep, run_te_sweep, SweepSpec, SyntheticTopologySpec, TopologySource,
};
use pab_core::likelihood::{fit, read_training_csv};
use pab_core::sampling::StrategyKind;
use pab_core::topology::Topology;

use crate::config::ResolvedEstimate;
use crate::manifest::ManifestBuilder;
use crate::{ExitKind, SweepArgs, SweepWhat};

/// `estimate`: run the loop, write results.json / summary.csv /
/// measurements.csv / the echoed config / manifest.json, and optionally a
/// factor-graph dump with per-variable marginals.
pub fn run_estimate(
    resolved: &ResolvedEstimate,
    out: &Path,
    strict: bool,
    dump_graph: bool,
) -> Result<ExitKind> {
    let topology = resolved.load_topology()?;
    let cfg = resolved.estimator_config()?;
    let mut prober = resolved.prober(&topology)?;
    let mut manifest = ManifestBuilder::start("estimate", resolved.seed, resolved);

    let (result, graph) = estimate_with_graph(&topology, &cfg, prober.as_mut())?;
    manifest.write_output(out, "results.json", &result.to_json())?;
    manifest.write_output(out, "summary.csv", &result.summary_csv())?;
    manifest.write_output(out, "measurements.csv", &measurements_csv(&result)?)?;
    manifest.write_output(out, "resolved-config.toml", &resolved.to_toml())?;
    if dump_graph {
        if let Some(graph) = &graph {
            manifest.write_output(out, "graph.json", &graph_dump(graph)?)?;
        }
    }
    manifest.finish(out)?;

    report_paths(&result);
    if let Some(reason) = &result.aborted {
        eprintln!("aborted: {reason}");
        return Ok(ExitKind::ProberFailure);
    }
    if !result.converged {
        eprintln!(
            "stopped at the {}-iteration cap before all intervals reached beta",
            result.iterations
        );
        if strict {
            return Ok(ExitKind::NotConverged);
        }
    }
    Ok(ExitKind::Success)
}

fn report_paths(result: &EstimationResult) {
    for p in &result.paths {
        println!(
            "{}: [{}, {}] Mbps ({} measurements, {} bytes)",
            p.path, p.interval.lower, p.interval.upper, p.measurements, p.bytes
        );
    }
    println!(
        "{} iterations, converged: {}",
        result.iterations, result.converged
    );
}

fn graph_dump(graph: &pab_core::FactorGraph) -> Result<String> {
    let link_marginals: BTreeMap<&String, _> = graph
        .link_ids()
        .iter()
        .enumerate()
        .map(|(l, id)| (id, graph.link_marginal_at(l)))
        .collect();
    let path_marginals: BTreeMap<&String, _> = graph
        .path_ids()
        .iter()
        .enumerate()
        .map(|(p, id)| (id, graph.path_marginal_at(p)))
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "structure": graph.structure(),
        "link_marginals": link_marginals,
        "path_marginals": path_marginals,
    }))?)
}

fn measurements_csv(result: &EstimationResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "path_id",
        "rate_mbps",
        "z",
        "bytes_sent",
        "timestamp_ns",
        "train_rates",
        "valid_counts",
    ])?;
    for m in &result.measurements {
        let rates = m
            .train_rates
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join("|");
        let valids = m
            .valid_counts
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            m.path.as_str(),
            &m.rate.to_string(),
            if m.z { "1" } else { "0" },
            &m.bytes_sent.to_string(),
            &m.timestamp_ns.to_string(),
            &rates,
            &valids,
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `validate`: re-probe interval boundary rates on link-disjoint paths.
pub fn run_validate(
    resolved: &ResolvedEstimate,
    results_path: &Path,
    reps: u64,
    out: &Path,
) -> Result<ExitKind> {
    let topology = resolved.load_topology()?;
    let text = std::fs::read_to_string(results_path)
        .with_context(|| format!("reading results {}", results_path.display()))?;
    let result: EstimationResult = serde_json::from_str(&text).context("parsing results.json")?;
    let mut prober = resolved.prober(&topology)?;
    let mut manifest = ManifestBuilder::start("validate", resolved.seed, resolved);

    let report = validate(
        &topology,
        &result,
        prober.as_mut(),
        &ValidationConfig {
            paths: 4,
            repetitions: reps,
            epsilon: resolved.epsilon,
        },
    );
    for t in &report.tests {
        println!(
            "{} @ {} Mbps: {}/{} success ({:.2})",
            t.path, t.rate, t.successes, t.trials, t.frequency
        );
    }
    manifest.write_output(out, "validation.json", &serde_json::to_string_pretty(&report)?)?;
    manifest.finish(out)?;
    if report.tests.iter().all(|t| t.trials == 0) && !report.tests.is_empty() {
        return Ok(ExitKind::ProberFailure);
    }
    Ok(ExitKind::Success)
}

/// `sweep strategies` / `sweep te`.
pub fn run_sweep(args: &SweepArgs, out: &Path) -> Result<ExitKind> {
    let source = sweep_source(args)?;
    let mut spec = SweepSpec::new(source, args.seed);
    spec.replicates = args.replicates;
    spec.config.strategy.seed = args.seed;

    match args.what {
        SweepWhat::Strategies => {
            spec.strategies = parse_strategies(&args.strategies)?;
            let mut manifest = ManifestBuilder::start("sweep strategies", args.seed, args);
            let mut all_rows = String::new();
            for (i, &m) in args.m_list().iter().enumerate() {
                let mut spec = spec.clone();
                set_m(&mut spec, m)?;
                let sweep = run_strategy_sweep(&spec)?;
                let csv = sweep.to_csv();
                if i == 0 {
                    all_rows.push_str(&csv);
                } else {
                    // drop the repeated header row
                    all_rows.extend(csv.splitn(2, '\n').nth(1));
                }
                for &s in &spec.strategies {
                    println!(
                        "M={m} {s}: {:.2} measurements/path, accuracy {:.3}",
                        sweep.mean_measurements(s),
                        sweep.mean_accuracy(s)
                    );
                }
            }
            manifest.write_output(out, "strategies.csv", &all_rows)?;
            manifest.finish(out)?;
        }
        SweepWhat::Te => {
            spec.te_values = args
                .te
                .split(',')
                .map(|t| t.trim().parse::<f64>().context("parsing --te"))
                .collect::<Result<Vec<_>>>()?;
            spec.q_flip = match args.q_flip.as_str() {
                "auto" => None,
                other => Some(other.parse::<f64>().context("parsing --q-flip")?),
            };
            let mut manifest = ManifestBuilder::start("sweep te", args.seed, args);
            let mut spec_m = spec.clone();
            set_m(&mut spec_m, args.m_list()[0])?;
            let sweep = run_te_sweep(&spec_m)?;
            for &te in &spec_m.te_values {
                println!(
                    "te={te}: {:.2} measurements/path, accuracy {:.3}, jaccard {:.3}",
                    sweep.mean_measurements(te),
                    sweep.mean_accuracy(te),
                    sweep.mean_jaccard(te)
                );
            }
            manifest.write_output(out, "te.csv", &sweep.to_csv())?;
            manifest.finish(out)?;
        }
    }
    Ok(ExitKind::Success)
}

fn sweep_source(args: &SweepArgs) -> Result<TopologySource> {
    if let Some(path) = &args.topology {
        let topology = Topology::load(path)
            .with_context(|| format!("loading base topology {}", path.display()))?;
        Ok(TopologySource::Base {
            topology,
            m_paths: args.m_list()[0],
        })
    } else {
        Ok(TopologySource::Synthetic(SyntheticTopologySpec {
            n_nodes: args.nodes,
            n_endpoints: args.endpoints_count,
            m_paths: args.m_list()[0],
            ..SyntheticTopologySpec::default()
        }))
    }
}

fn set_m(spec: &mut SweepSpec, m: usize) -> Result<()> {
    match &mut spec.source {
        TopologySource::Base { m_paths, .. } => *m_paths = m,
        TopologySource::Synthetic(s) => s.m_paths = m,
    }
    Ok(())
}

fn parse_strategies(list: &str) -> Result<Vec<StrategyKind>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<StrategyKind>()
                .map_err(|e| anyhow::anyhow!(e))
        })
        .collect()
}

/// `fit-likelihood`: regress alpha and per-path PABs from a training CSV.
pub fn run_fit(samples_path: &Path, kappa: f64, gamma: f64, out: &Path) -> Result<ExitKind> {
    let file = std::fs::File::open(samples_path)
        .with_context(|| format!("reading samples {}", samples_path.display()))?;
    let samples = read_training_csv(file)?;
    if samples.is_empty() {
        bail!("no training samples in {}", samples_path.display());
    }
    let mut manifest = ManifestBuilder::start(
        "fit-likelihood",
        0,
        &serde_json::json!({
            "samples": samples_path,
            "kappa": kappa,
            "gamma": gamma,
            "n_samples": samples.len(),
        }),
    );
    let outcome = fit(&samples, kappa)?;
    println!(
        "alpha = {:.4}, mse = {:.3e}, {} paths",
        outcome.alpha,
        outcome.mse,
        outcome.path_pab.len()
    );
    let model = pab_core::LikelihoodModel::new(outcome.alpha, kappa, gamma)?;
    manifest.write_output(out, "model.json", &serde_json::to_string_pretty(&model)?)?;
    manifest.write_output(out, "fit.json", &serde_json::to_string_pretty(&outcome)?)?;
    manifest.finish(out)?;
    Ok(ExitKind::Success)
}

/// `recv`: run the receiver agent in the foreground.
pub fn run_recv(listen: &str) -> Result<ExitKind> {
    let addr = listen
        .parse()
        .with_context(|| format!("parsing listen address '{listen}'"))?;
    pab_core::probing::run_receiver(addr)?;
    Ok(ExitKind::Success)
}

pub fn default_out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("pab-out"))
}
