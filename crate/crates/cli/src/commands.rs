use std::fmt;
use std::io::Write;
use std::path::Path;

use serde_json::json;
use unigraph::annotation::{parse_annotation_file, DocumentSet};
use unigraph::augment::Augmentation;
use unigraph::build::GraphBuilder;
use unigraph::graph::SemanticGraph;
use unigraph::harness::{
    generate, prepare_documents, train, BeamConfig, ToyTask, TrainConfig, TrainReport,
};
use unigraph::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use unigraph::selfcheck::{run_selfcheck, Fault, SelfCheckOptions};
use unigraph::stats::{graph_stats, length_buckets};

use crate::{AugmentFlags, Cli, Command, ModelFlags};

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            message: message.into(),
            code: 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<unigraph::Error> for CliError {
    fn from(e: unigraph::Error) -> Self {
        use unigraph::Error as E;
        let (kind, code) = match &e {
            E::Parse { .. } => ("parse", 1),
            E::Validation { .. } => ("validation", 1),
            E::Graph(_) => ("graph", 1),
            E::Model(_) => ("model", 1),
            E::Training(_) => ("training", 1),
            E::InvalidArgument(_) => ("usage", 2),
            E::Checkpoint(_) => ("checkpoint", 2),
            E::Io(_) => ("io", 2),
        };
        CliError {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    let message = if e.kind() == std::io::ErrorKind::NotFound {
        format!("no such input: {}", path.display())
    } else {
        format!("{}: {e}", path.display())
    };
    CliError {
        kind: "io",
        message,
        code: 2,
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError {
            kind: "io",
            message: format!("stdout: {e}"),
            code: 2,
        })
}

enum Input {
    Annotations(DocumentSet),
    Graph(SemanticGraph),
}

/// Annotation files have a top-level `documents` key; anything else is
/// read as graph JSON.
fn read_input(path: &Path) -> Result<Input> {
    let bytes = read(path)?;
    let is_graph = serde_json::from_slice::<serde_json::Value>(&bytes)
        .ok()
        .is_some_and(|v| v.get("nodes").is_some() && v.get("documents").is_none());
    if is_graph {
        let text = String::from_utf8_lossy(&bytes);
        Ok(Input::Graph(SemanticGraph::from_json(&text)?))
    } else {
        Ok(Input::Annotations(parse_annotation_file(&bytes)?))
    }
}

fn build(ds: &DocumentSet) -> SemanticGraph {
    let out = GraphBuilder::default().build(ds);
    for d in &out.diagnostics {
        log::warn!("sentence {}: {}", d.sentence, d.message);
    }
    out.graph
}

fn augmentation(flags: &AugmentFlags) -> Option<Augmentation> {
    flags.augment.then_some(Augmentation {
        reverse_and_self_loops: !flags.no_reverse,
        shortcuts: !flags.no_shortcuts,
        supernode: !flags.no_supernode,
    })
}

fn graph_of(input: Input, flags: &AugmentFlags) -> SemanticGraph {
    let g = match input {
        Input::Annotations(ds) => build(&ds),
        Input::Graph(g) => g,
    };
    match augmentation(flags) {
        Some(a) => a.apply(&g),
        None => g,
    }
}

fn model_config(flags: &ModelFlags, vocab_size: usize) -> Result<ModelConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let bytes = read(path)?;
            ModelConfig::parse(&String::from_utf8_lossy(&bytes))?
        }
        None => ModelConfig {
            max_len: 64,
            ..ModelConfig::default()
        },
    };
    cfg.vocab_size = vocab_size;
    if let Some(v) = flags.omega {
        cfg.omega = v;
    }
    if let Some(v) = flags.p {
        cfg.prop_steps = v;
    }
    if let Some(v) = flags.d_model {
        cfg.d_model = v;
    }
    if let Some(v) = flags.heads {
        cfg.n_heads = v;
    }
    if let Some(v) = flags.dropout {
        cfg.dropout_rate = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::BuildGraph {
            input,
            output,
            dot,
            augment,
        } => {
            let ds = match read_input(input)? {
                Input::Annotations(ds) => ds,
                Input::Graph(_) => {
                    return Err(CliError::usage(format!(
                        "{} is a graph, not an annotation file",
                        input.display()
                    )))
                }
            };
            let g = graph_of(Input::Annotations(ds), augment);
            let text = g.to_json() + "\n";
            if let Some(path) = dot {
                write(path, &g.to_dot())?;
            }
            match output {
                Some(path) => {
                    write(path, &text)?;
                    if cli.json {
                        print(&format!(
                            "{}\n",
                            json!({"output": path, "nodes": g.node_count(), "edges": g.edge_count()})
                        ))?;
                    } else {
                        print(&format!(
                            "wrote {} nodes and {} edges to {}\n",
                            g.node_count(),
                            g.edge_count(),
                            path.display()
                        ))?;
                    }
                }
                None => print(&text)?,
            }
            Ok(0)
        }
        Command::Stats { input, bucket_size } => {
            if *bucket_size == 0 {
                return Err(CliError::usage("--bucket-size must be positive"));
            }
            match read_input(input)? {
                Input::Graph(g) => {
                    let s = graph_stats(&g, 0);
                    if cli.json {
                        print(&format!(
                            "{}\n",
                            json!({"graph": s, "edge_node_ratio": s.edge_node_ratio()})
                        ))?;
                    } else {
                        print(&format!(
                            "nodes,edges,components\n{},{},{}\n",
                            s.node_count, s.edge_count, s.component_count
                        ))?;
                    }
                }
                Input::Annotations(ds) => {
                    let buckets = length_buckets(&ds, *bucket_size)?;
                    let unified = graph_stats(&build(&ds), ds.token_count());
                    if cli.json {
                        print(&format!(
                            "{}\n",
                            json!({"buckets": buckets, "unified": unified,
                                   "edge_node_ratio": unified.edge_node_ratio()})
                        ))?;
                    } else {
                        let mut s = String::from("tokens_from,documents,avg_nodes,avg_edges\n");
                        for b in &buckets {
                            s.push_str(&format!(
                                "{},{},{},{}\n",
                                b.lower, b.documents, b.avg_nodes, b.avg_edges
                            ));
                        }
                        s.push_str(&format!(
                            "# unified graph: {} tokens, {} nodes, {} edges, {} components\n",
                            unified.input_token_count,
                            unified.node_count,
                            unified.edge_count,
                            unified.component_count
                        ));
                        print(&s)?;
                    }
                }
            }
            Ok(0)
        }
        Command::ExportDot {
            input,
            output,
            augment,
        } => {
            let g = graph_of(read_input(input)?, augment);
            let dot = g.to_dot();
            match output {
                Some(path) => {
                    write(path, &dot)?;
                    if cli.json {
                        print(&format!("{}\n", json!({"output": path})))?;
                    }
                }
                None => print(&dot)?,
            }
            Ok(0)
        }
        Command::Selfcheck { inject_fault } => {
            let report = run_selfcheck(&SelfCheckOptions {
                seed: cli.seed,
                fault: inject_fault.then_some(Fault::PropagationSignFlip),
            });
            if cli.json {
                print(&format!(
                    "{}\n",
                    json!({"seed": report.seed, "passed": report.passed(), "properties": report.properties})
                ))?;
            } else {
                let mut s = String::new();
                for p in &report.properties {
                    let mark = if p.passed { "PASS" } else { "FAIL" };
                    s.push_str(&format!("{mark} {:<24} {}\n", p.name, p.detail));
                }
                let failed = report.properties.iter().filter(|p| !p.passed).count();
                s.push_str(&format!(
                    "{} properties, {failed} failed\n",
                    report.properties.len()
                ));
                print(&s)?;
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Train {
            output,
            steps,
            examples,
            lr,
            batch_size,
            loss_csv,
            model,
        } => {
            let task = ToyTask::planted(*examples, cli.seed)?;
            let cfg = model_config(model, task.vocab.len())?;
            let data = task.prepare(&cfg)?;
            let mut m = Model::new(cfg, cli.seed)?;
            let tc = TrainConfig {
                steps: *steps,
                learning_rate: *lr,
                batch_size: *batch_size,
                seed: cli.seed,
                ..TrainConfig::default()
            };
            let report = train(&mut m, &data, &tc)?;
            save_checkpoint(output, &m, &task.vocab)?;
            if let Some(path) = loss_csv {
                report.write_csv(path)?;
            }
            print_train_summary(cli.json, output, &report)?;
            Ok(0)
        }
        Command::Generate {
            checkpoint,
            input,
            examples,
            beam,
            length_penalty,
            greedy,
            no_trigram_blocking,
            max_len,
            omega,
            p,
            output,
        } => {
            if !checkpoint.exists() {
                return Err(io_error(
                    checkpoint,
                    std::io::Error::from(std::io::ErrorKind::NotFound),
                ));
            }
            let ck = load_checkpoint(checkpoint)?;
            let mut model = ck.model;
            if let Some(v) = omega {
                model.config.omega = *v;
            }
            if let Some(v) = p {
                model.config.prop_steps = *v;
            }
            model.config.validate()?;
            let data = match input {
                Some(path) => {
                    let ds = parse_annotation_file(&read(path)?)?;
                    prepare_documents(&ds, &ck.vocab, &model.config)?
                }
                None => ToyTask::planted(*examples, cli.seed)?.prepare(&model.config)?,
            };
            let cfg = BeamConfig {
                beam_size: *beam,
                length_penalty: *length_penalty,
                max_len: *max_len,
                trigram_blocking: !no_trigram_blocking,
                ..BeamConfig::default()
            };
            let records = generate(&model, &ck.vocab, &data, &cfg, *greedy)?;
            let mut lines = String::new();
            for r in &records {
                lines.push_str(&serde_json::to_string(r).expect("records serialize"));
                lines.push('\n');
            }
            match output {
                Some(path) => {
                    write(path, &lines)?;
                    if cli.json {
                        print(&format!(
                            "{}\n",
                            json!({"output": path, "generations": records.len()})
                        ))?;
                    } else {
                        print(&format!(
                            "wrote {} generations to {}\n",
                            records.len(),
                            path.display()
                        ))?;
                    }
                }
                None => print(&lines)?,
            }
            Ok(0)
        }
    }
}

fn print_train_summary(as_json: bool, output: &Path, report: &TrainReport) -> Result<()> {
    let max_clipped = report
        .steps
        .iter()
        .map(|s| s.clipped_norm)
        .fold(0.0_f64, f64::max);
    if as_json {
        print(&format!(
            "{}\n",
            json!({
                "checkpoint": output,
                "steps": report.steps.len(),
                "initial_loss": report.first_loss(),
                "final_loss": report.last_loss(),
                "max_clipped_grad_norm": max_clipped,
            })
        ))
    } else {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        print(&format!(
            "trained {} steps: loss {} -> {}, max clipped grad norm {max_clipped:.4}\ncheckpoint: {}\n",
            report.steps.len(),
            fmt(report.first_loss()),
            fmt(report.last_loss()),
            output.display()
        ))
    }
}
