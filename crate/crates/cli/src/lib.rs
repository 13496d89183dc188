//! Command-line front end for the protograph pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use protograph_core::eval::read_report_csv;
use protograph_core::{
    build_knn_graph, emit_report, evaluate_fewshot, evaluate_zeroshot, generate_synthetic, gradient_check_suite,
    load_dataset, read_checkpoint, save_dataset, sensitivity_sweep, train, write_training_log, Dataset, EncoderParams,
    GnnParams, ModelParams, RelationEmbeddings, RelationGraph, RngStream,
};

use config::{Kind, RunConfig, OPTIONS};

/// Largest acceptable relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

const SYNTH_STREAM: u64 = 10;
const EVAL_STREAM: u64 = 11;
const INIT_STREAM: u64 = 0;

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("synth", "Generate a synthetic dataset and relation embeddings"),
    ("build-graph", "Build the k-NN relation graph from embeddings"),
    ("train", "Train the graph network and encoder episodically"),
    ("eval", "Few-shot evaluation"),
    ("zero-shot", "Zero-shot evaluation from graph summaries alone"),
    ("sweep", "Few-shot accuracy across chain counts or chain lengths"),
    ("grad-check", "Compare gradients against central differences"),
];

fn command() -> Command {
    let mut cmd = Command::new("protograph")
        .about("Few-shot relation classification with graph-informed Bayesian prototypes")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value file; flags take precedence"),
        );
        for (key, kind, help) in OPTIONS {
            let arg = Arg::new(*key).long(*key).help(*help);
            sub = sub.arg(match kind {
                Kind::Flag => arg.action(ArgAction::SetTrue),
                Kind::Value => arg.value_name("VALUE").allow_negative_numbers(true),
            });
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn resolve(matches: &ArgMatches) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Some(file) = matches.get_one::<String>("config") {
        cfg.load_file(Path::new(file))?;
    }
    for (key, kind, _) in OPTIONS {
        match kind {
            Kind::Flag if matches.get_flag(key) => cfg.set(key, "true")?,
            Kind::Value => {
                if let Some(v) = matches.get_one::<String>(key) {
                    cfg.set(key, v)?;
                }
            }
            _ => {}
        }
    }
    Ok(cfg)
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn write_run_config(cfg: &RunConfig) -> Result<PathBuf, String> {
    fs::create_dir_all(&cfg.out).map_err(|e| format!("{}: {e}", cfg.out.display()))?;
    let path = cfg.out.join("run_config.txt");
    fs::write(&path, cfg.render()).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

/// Dataset and graph from files, or synthesized from the seed when `--data` is absent.
fn load_inputs(cfg: &RunConfig) -> Result<(Dataset, RelationGraph), String> {
    let (dataset, embeddings) = match &cfg.data {
        Some(data) => {
            let registry = cfg.registry.as_ref().ok_or("--data needs --registry")?;
            let emb_path = cfg.embeddings.as_ref().ok_or("--data needs --embeddings")?;
            let dataset = load_dataset(data, registry).map_err(fail)?;
            (dataset, RelationEmbeddings::load(emb_path).map_err(fail)?)
        }
        None => generate_synthetic(&cfg.synth(), &RngStream::new(cfg.seed, SYNTH_STREAM)).map_err(fail)?,
    };
    let graph = match &cfg.graph {
        Some(edges) => RelationGraph::load_edges(embeddings, edges).map_err(fail)?,
        None => build_knn_graph(&embeddings, cfg.knn).map_err(fail)?,
    };
    Ok((dataset, graph))
}

fn load_params(cfg: &RunConfig, dataset: &Dataset, graph: &RelationGraph) -> Result<ModelParams, String> {
    if cfg.identity_maps {
        if dataset.dim() != graph.feature_dim() {
            return Err(format!(
                "identity maps need equal feature ({}) and embedding ({}) dimensions",
                dataset.dim(),
                graph.feature_dim()
            ));
        }
        return Ok(ModelParams {
            gnn: GnnParams::identity(dataset.dim()),
            encoder: EncoderParams::Identity { dim: dataset.dim() },
        });
    }
    match &cfg.checkpoint {
        Some(path) => Ok(read_checkpoint(path).map_err(fail)?.params),
        None => ModelParams::init(
            &cfg.model_spec(),
            dataset.dim(),
            graph.feature_dim(),
            &RngStream::new(cfg.seed, INIT_STREAM),
        )
        .map_err(fail),
    }
}

fn report_path(cfg: &RunConfig, stem: &str) -> PathBuf {
    cfg.out.join(format!("{stem}.{}", cfg.format))
}

fn run(name: &str, cfg: &RunConfig) -> Result<(), String> {
    write_run_config(cfg)?;
    let echo = cfg.entries();
    let eval_stream = RngStream::new(cfg.seed, EVAL_STREAM);
    match name {
        "synth" => {
            let (dataset, embeddings) =
                generate_synthetic(&cfg.synth(), &RngStream::new(cfg.seed, SYNTH_STREAM)).map_err(fail)?;
            let inst = cfg.out.join("instances.tsv");
            let reg = cfg.out.join("registry.tsv");
            let emb = cfg.out.join("embeddings.tsv");
            save_dataset(&dataset, &inst, &reg).map_err(fail)?;
            embeddings.save(&emb).map_err(fail)?;
            println!(
                "wrote {} relations to {}, {}, {}",
                dataset.num_relations(),
                inst.display(),
                reg.display(),
                emb.display()
            );
        }
        "build-graph" => {
            let emb = cfg.embeddings.as_ref().ok_or("build-graph needs --embeddings")?;
            let graph = build_knn_graph(&RelationEmbeddings::load(emb).map_err(fail)?, cfg.knn).map_err(fail)?;
            let path = cfg.out.join("graph.tsv");
            graph.save_edges(&path).map_err(fail)?;
            println!("wrote {} edges to {}", graph.edges().len(), path.display());
        }
        "train" => {
            let (dataset, graph) = load_inputs(cfg)?;
            let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.txt"));
            let outcome = train(&dataset, &graph, &cfg.train_config(ckpt.clone())).map_err(fail)?;
            let log = cfg.out.join("train_log.csv");
            write_training_log(&log, &outcome.log).map_err(fail)?;
            if let Some(last) = outcome.log.last() {
                println!("episode {} loss {:.6}", last.episode_index, last.loss);
            }
            println!("wrote {} and {}", ckpt.display(), log.display());
        }
        "eval" | "zero-shot" => {
            let (dataset, graph) = load_inputs(cfg)?;
            let params = load_params(cfg, &dataset, &graph)?;
            let spec = cfg.episode_spec();
            let report = if name == "eval" {
                evaluate_fewshot(&dataset, &graph, &params, &spec, &cfg.sampler(), &eval_stream)
            } else {
                evaluate_zeroshot(&dataset, &graph, &params, &spec, &cfg.sampler(), &eval_stream)
            }
            .map_err(fail)?;
            let path = report_path(cfg, if name == "eval" { "eval" } else { "zero_shot" });
            emit_report(std::slice::from_ref(&report), &path, cfg.format, &echo).map_err(fail)?;
            println!(
                "{} accuracy {:.6} ± {:.6} over {} episodes; wrote {}",
                report.setting.setting,
                report.accuracy,
                report.ci95,
                report.per_episode.len(),
                path.display()
            );
        }
        "sweep" => {
            let (dataset, graph) = load_inputs(cfg)?;
            let params = load_params(cfg, &dataset, &graph)?;
            let reports = sensitivity_sweep(
                cfg.axis,
                &cfg.values,
                &dataset,
                &graph,
                &params,
                &cfg.episode_spec(),
                &cfg.sampler(),
                &eval_stream,
            )
            .map_err(fail)?;
            let path = report_path(cfg, "sweep");
            emit_report(&reports, &path, cfg.format, &echo).map_err(fail)?;
            for (v, r) in cfg.values.iter().zip(&reports) {
                println!("{}={v} accuracy {:.6} ± {:.6}", cfg.axis, r.accuracy, r.ci95);
            }
            println!("wrote {}", path.display());
        }
        "grad-check" => {
            let checks = gradient_check_suite(cfg.cases, cfg.seed, &[cfg.d]).map_err(fail)?;
            let mut worst = 0.0f64;
            for c in &checks {
                println!("{:<30} max_rel_error {:.3e} over {} cases", c.component, c.max_rel_error, c.cases);
                worst = worst.max(c.max_rel_error);
            }
            if !(worst < GRAD_TOLERANCE) {
                return Err(format!("gradient check failed: {worst:.3e} >= {GRAD_TOLERANCE:e}"));
            }
        }
        other => return Err(format!("unknown subcommand {other}")),
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on validation or runtime failure,
/// 2 on usage errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let Some((name, sub)) = matches.subcommand() else {
        return 2;
    };
    let outcome = resolve(sub).and_then(|cfg| match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(fail)
            .and_then(|pool| pool.install(|| run(name, &cfg))),
        None => run(name, &cfg),
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Reads back a CSV report; used to check emitted files.
pub fn report_accuracies(path: &Path) -> Result<Vec<String>, String> {
    Ok(read_report_csv(path)
        .map_err(fail)?
        .into_iter()
        .map(|r| r.accuracy)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_command(["protograph", "bogus"]), 2);
        assert_eq!(run_command(["protograph", "train", "--bogus"]), 2);
        assert_eq!(run_command(["protograph", "train", "--help"]), 0);
    }

    #[test]
    fn validation_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run_command(["protograph", "eval", "--out", out, "--tau", "-1"]), 1);
        assert_eq!(run_command(["protograph", "eval", "--out", out, "--measure", "cosine"]), 1);
        assert_eq!(run_command(["protograph", "build-graph", "--out", out]), 1);
    }
}
