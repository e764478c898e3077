//! Batch front-end: `build`, `check`, `reduce`, `analyze` and `rigid`
//! subcommands with snapshot and registry persistence. Every report is UTF-8
//! JSON, and the process exits with 0 exactly when every check of the run
//! passed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::endorigid::{
    analyze_branch, build_rigid_system, check_rigid_invariants, endorigidity_search, RigidError,
    RigidSystem, TreeT,
};
use crate::groups::GroupElement;
use crate::keq::{encode_graph, GraphAdj, Point};
use crate::primes::{class_representative, ClassKey, PrimeError, PrimeRegistry};
use crate::reduction::{
    check_ei_preservation, embedding_iso, extract_pointwise_map, reduce, transfer_iso,
    validate_scalar, ReductionError,
};
use crate::report::Report;
use crate::system::{
    check_stage_invariants, check_support_condition, FullSystem, SupportOptions, SystemStage,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("graphs are not isomorphic")]
    NotIsomorphic,
    #[error("tree: {0}")]
    Tree(String),
    #[error(transparent)]
    Prime(#[from] PrimeError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Rigid(#[from] RigidError),
}

#[derive(Debug, Parser)]
#[command(
    name = "tfab",
    about = "Desk-scale checks for the torsion-free abelian group reduction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Output options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Output {
    /// File receiving the command's main artifact.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append-only prime registry log.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Print the full JSON report on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the system to a stage and write its snapshot.
    Build {
        #[arg(long, alias = "stage")]
        stages: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Run the stage invariants and the support condition on a snapshot.
    Check {
        #[arg(long, alias = "stage")]
        snapshot: PathBuf,
        /// Closure depth for the support condition.
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Reduce a graph to a stage-truncated presentation.
    Reduce {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        pad: usize,
        #[arg(long, alias = "stage")]
        stages: usize,
        /// An isomorphic graph; the transported candidate is written to
        /// `--candidate-out`.
        #[arg(long, requires = "candidate_out")]
        partner: Option<PathBuf>,
        #[arg(long)]
        candidate_out: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Analyze a candidate map on basis points.
    Analyze {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long, alias = "stage")]
        stages: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Tree-indexed systems.
    Rigid {
        #[command(subcommand)]
        action: RigidCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum RigidCommand {
    /// Build a system from a tree.
    Build {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, alias = "stage")]
        stages: usize,
        /// Spare points added per level.
        #[arg(long, default_value_t = 1)]
        growth: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Check the invariants of a built system.
    Check {
        #[arg(long)]
        snapshot: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Search for endomorphisms of the truncated group.
    Search {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, alias = "stage", default_value_t = 4)]
        stages: usize,
        #[arg(long, default_value_t = 3)]
        coeff_bound: i64,
        #[arg(long, default_value_t = 1)]
        growth: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Transport along a simulated infinite branch of the given length.
    Branch {
        #[arg(long, alias = "stage", default_value_t = 6)]
        stages: usize,
        #[command(flatten)]
        output: Output,
    },
}

/// A candidate map on basis points, optionally with the M-isomorphism whose
/// chain must be forced before the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDoc {
    pub images: BTreeMap<Point, GroupElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_iso: Option<BTreeMap<Point, Point>>,
}

/// The result of one command: the JSON report and whether every check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub passed: bool,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn open_registry(output: &Output) -> Result<PrimeRegistry, CliError> {
    Ok(match &output.registry {
        Some(p) => PrimeRegistry::open(p)?,
        None => PrimeRegistry::in_memory(),
    })
}

fn report_json(r: &Report) -> Value {
    serde_json::to_value(r).expect("reports serialize")
}

/// Registry injectivity and coprimality, recorded in every report.
fn registry_verdict(reg: &PrimeRegistry) -> Value {
    json!({ "assignments": reg.len(), "consistent": reg.check().is_ok(), "error": reg.check().err() })
}

/// Assigns unit-weight primes to every nontrivial class of arity one or two.
fn register_classes(stage: &SystemStage, reg: &mut PrimeRegistry) -> Result<usize, CliError> {
    let mut count = 0;
    for k in 1..=2 {
        for class in stage.tuple_classes(k).nontrivial_classes() {
            reg.assign_prime(&ClassKey::ClassTuple {
                k,
                rep: class_representative(stage, &class),
                q: vec![1; k],
            })?;
            count += 1;
        }
    }
    Ok(count)
}

fn load_tree(path: &Path) -> Result<TreeT, CliError> {
    let tree: TreeT = read_json(path)?;
    tree.check().map_err(|e| CliError::Tree(e.to_string()))?;
    Ok(tree)
}

/// Runs one parsed command.
pub fn execute(cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Build { stages, output } => {
            let mut sys = FullSystem::new();
            let stage = sys.build_to_stage(*stages).clone();
            let mut reg = open_registry(output)?;
            let classes = register_classes(&stage, &mut reg)?;
            if let Some(out) = &output.out {
                write_json(out, &stage)?;
            }
            let invariants = check_stage_invariants(&stage);
            let passed = invariants.passed() && reg.check().is_ok();
            let report = json!({
                "command": "build",
                "stage": stages,
                "n_of_m": stage.n_of_m(),
                "points": stage.y_set().len(),
                "registered_classes": classes,
                "invariants": report_json(&invariants),
                "registry": registry_verdict(&reg),
            });
            Ok(Outcome { report, passed })
        }
        Command::Check {
            snapshot,
            depth,
            output,
        } => {
            let stage: SystemStage = read_json(snapshot)?;
            let reg = open_registry(output)?;
            let invariants = check_stage_invariants(&stage);
            let mut opts = SupportOptions::default();
            opts.closure.depth = *depth;
            let support = check_support_condition(&stage, &opts);
            let passed = invariants.passed() && support.passed() && reg.check().is_ok();
            let report = json!({
                "command": "check",
                "invariants": report_json(&invariants),
                "support": support,
                "registry": registry_verdict(&reg),
            });
            if let Some(out) = &output.out {
                write_json(out, &report)?;
            }
            Ok(Outcome { report, passed })
        }
        Command::Reduce {
            graph,
            pad,
            stages,
            partner,
            candidate_out,
            output,
        } => {
            let g: GraphAdj = read_json(graph)?;
            let mut sys = FullSystem::new();
            let mut reg = open_registry(output)?;
            let pres = reduce(&mut sys, &mut reg, &g, *pad, *stages)?;
            if let Some(out) = &output.out {
                write_json(out, &pres)?;
            }
            let mut candidate = Value::Null;
            if let (Some(partner), Some(cout)) = (partner, candidate_out) {
                let h: GraphAdj = read_json(partner)?;
                let a = encode_graph(&g).pad_isolated(*pad);
                let b = encode_graph(&h).pad_isolated(*pad);
                let m_iso = embedding_iso(&a, &b).ok_or(CliError::NotIsomorphic)?;
                let t = transfer_iso(sys.build_to_stage(*stages), &m_iso)?;
                let doc = CandidateDoc {
                    images: t.point_candidate(),
                    m_iso: Some(m_iso),
                };
                write_json(cout, &doc)?;
                candidate = json!({ "points": doc.images.len() });
            }
            let passed = reg.check().is_ok();
            let report = json!({
                "command": "reduce",
                "stage": stages,
                "pad": pad,
                "u_label": pres.u_label,
                "generators": pres.generators.len(),
                "divisibility_facts": pres.divisibility_facts.len(),
                "prefix_points": pres.prefix_points,
                "candidate": candidate,
                "registry": registry_verdict(&reg),
            });
            Ok(Outcome { report, passed })
        }
        Command::Analyze {
            candidate,
            stages,
            output,
        } => {
            let doc: CandidateDoc = read_json(candidate)?;
            let mut sys = FullSystem::new();
            let base = sys.build_to_stage(*stages).clone();
            let stage = match &doc.m_iso {
                Some(h) => transfer_iso(&base, h)?.stage,
                None => base,
            };
            let reg = open_registry(output)?;
            let (report, passed) = match extract_pointwise_map(&stage, &doc.images) {
                Err(refutation) => (
                    json!({ "command": "analyze", "refutation": refutation }),
                    false,
                ),
                Ok(analysis) => {
                    let ei = check_ei_preservation(&analysis);
                    let scalar = validate_scalar(&analysis);
                    let passed = ei.report.passed() && scalar.passed() && reg.check().is_ok();
                    let report = json!({
                        "command": "analyze",
                        "q_star": analysis.q_star.map(|q| q.to_string()),
                        "hypothesis_met": analysis.hypothesis_met,
                        "ei_preservation": report_json(&ei.report),
                        "induced": ei.induced,
                        "scalar": report_json(&scalar),
                        "registry": registry_verdict(&reg),
                    });
                    (report, passed)
                }
            };
            if let Some(out) = &output.out {
                write_json(out, &report)?;
            }
            Ok(Outcome { report, passed })
        }
        Command::Rigid { action } => execute_rigid(action),
    }
}

fn execute_rigid(action: &RigidCommand) -> Result<Outcome, CliError> {
    match action {
        RigidCommand::Build {
            tree,
            stages,
            growth,
            output,
        } => {
            let r = build_rigid_system(&load_tree(tree)?, *growth, *stages);
            if let Some(out) = &output.out {
                write_json(out, &r)?;
            }
            let inv = check_rigid_invariants(&r);
            let report = json!({ "command": "rigid build", "x_sizes": r.x_sizes, "invariants": report_json(&inv) });
            Ok(Outcome {
                report,
                passed: inv.passed(),
            })
        }
        RigidCommand::Check { snapshot, output } => {
            let r: RigidSystem = read_json(snapshot)?;
            let inv = check_rigid_invariants(&r);
            let report = json!({ "command": "rigid check", "invariants": report_json(&inv) });
            if let Some(out) = &output.out {
                write_json(out, &report)?;
            }
            Ok(Outcome {
                report,
                passed: inv.passed(),
            })
        }
        RigidCommand::Search {
            tree,
            stages,
            coeff_bound,
            growth,
            output,
        } => {
            let r = build_rigid_system(&load_tree(tree)?, *growth, *stages);
            let mut reg = open_registry(output)?;
            let endo = endorigidity_search(&r, &mut reg, *coeff_bound)?;
            let expected: Vec<Rational64> = (-coeff_bound..=*coeff_bound)
                .map(Rational64::from_integer)
                .collect();
            let scalar_only = !endo.partial && endo.survivors == expected;
            let report = json!({
                "command": "rigid search",
                "search": {
                    "assumption": endo.assumption,
                    "level": endo.level,
                    "points": endo.points,
                    "unknowns": endo.unknowns,
                    "constraints": endo.constraints,
                    "solution_dimension": endo.solution_dimension,
                    "survivors": endo.survivors.iter().map(|q| q.to_string()).collect::<Vec<_>>(),
                    "partial": endo.partial,
                },
                "integer_scalars_only": scalar_only,
                "registry": registry_verdict(&reg),
            });
            if let Some(out) = &output.out {
                write_json(out, &report)?;
            }
            Ok(Outcome {
                report,
                passed: scalar_only && reg.check().is_ok(),
            })
        }
        RigidCommand::Branch { stages, output } => {
            let len = (*stages).max(1);
            let r = build_rigid_system(&TreeT::path(len), 1, len);
            let branch: Vec<usize> = (0..len).collect();
            let b = analyze_branch(&r, &branch)?;
            let passed = b.injective && b.non_scalar && b.misses_x0_multiples;
            let report = json!({ "command": "rigid branch", "length": len, "branch": b });
            if let Some(out) = &output.out {
                write_json(out, &report)?;
            }
            Ok(Outcome { report, passed })
        }
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 when every check passed, 1 when a check failed, 2 on errors.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let json = match &cli.command {
        Command::Build { output, .. }
        | Command::Check { output, .. }
        | Command::Reduce { output, .. }
        | Command::Analyze { output, .. } => output.json,
        Command::Rigid { action } => match action {
            RigidCommand::Build { output, .. }
            | RigidCommand::Check { output, .. }
            | RigidCommand::Search { output, .. }
            | RigidCommand::Branch { output, .. } => output.json,
        },
    };
    match execute(&cli.command) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            // a closed pipe downstream is not a failure of the run
            let _ = if json {
                writeln!(
                    stdout,
                    "{}",
                    serde_json::to_string_pretty(&outcome.report).expect("reports serialize")
                )
            } else {
                let name = outcome.report["command"].as_str().unwrap_or("command");
                writeln!(
                    stdout,
                    "{name}: {}",
                    if outcome.passed { "pass" } else { "fail" }
                )
            };
            ExitCode::from(if outcome.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
