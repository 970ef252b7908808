//! Command implementations. Each command validates its configuration and
//! inputs, checks its outputs, computes, then writes files atomically.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use deepstpp::discrete::{fit_discrete, granger_adjacency};
use deepstpp::graph::{fit_graph, graph_loss, influence_snapshots, CachedGraphModel, Graph, GraphFilter, GraphFilterKernel, GraphModel, ShiftKind};
use deepstpp::intensity::SttpModel;
use deepstpp::io::{self, Checkpoint, Corpus, GridTable, ModelPayload};
use deepstpp::kernel::{discretize_pair_forms, effective_rank, rank_demo_kernel, ExpHawkesSpec};
use deepstpp::model::{BasisWidths, EventSequence, SpatialDomain};
use deepstpp::optim::{evaluate, fit, fit_loss, FitReport, Termination};
use deepstpp::predict::predict_next;
use deepstpp::simulate::{simulate_many, ExpHawkes, PointProcess};
use deepstpp::Error;
use nalgebra::DMatrix;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ExportKind, FilterKind, RunConfig, ShiftChoice, Source};
use crate::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Simulation,
    Diverged,
    Io,
}

impl FailureKind {
    pub fn code(self) -> u8 {
        match self {
            FailureKind::Config => 2,
            FailureKind::Simulation => 3,
            FailureKind::Diverged => 4,
            FailureKind::Io => 5,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    fn new(kind: FailureKind, message: impl fmt::Display) -> Self {
        Self { kind, message: message.to_string() }
    }

    fn config(message: impl fmt::Display) -> Self {
        Self::new(FailureKind::Config, message)
    }

    fn simulation(e: Error) -> Self {
        match e {
            Error::Io(_) => e.into(),
            e => Self::new(FailureKind::Simulation, e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = if matches!(e, Error::Io(_)) { FailureKind::Io } else { FailureKind::Config };
        Self::new(kind, e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

pub struct Context {
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub overwrite: bool,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn load_config(&self) -> Outcome<RunConfig> {
        let mut config = match &self.config_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        Ok(config)
    }

    fn input(&self, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out(default_name))
    }

    /// Inputs must exist; outputs must not collide with inputs and may only
    /// replace existing files with `--overwrite`.
    fn check_paths(&self, inputs: &[&Path], outputs: &[&Path]) -> Outcome {
        for i in inputs {
            if !i.is_file() {
                return Err(Failure::config(format!("input file {} not found", i.display())));
            }
        }
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        for o in outputs {
            if inputs.iter().any(|i| abs(i) == abs(o)) {
                return Err(Failure::config(format!("output {} would overwrite an input", o.display())));
            }
            if o.exists() && !self.overwrite {
                return Err(Failure::config(format!("{} exists; pass --overwrite to replace it", o.display())));
            }
        }
        Ok(())
    }
}

pub fn run(command: Command, ctx: &Context) -> Outcome {
    let config = ctx.load_config()?;
    match command {
        Command::Simulate => cmd_simulate(&config, ctx),
        Command::Fit => cmd_fit(&config, ctx),
        Command::Predict => cmd_predict(&config, ctx),
        Command::RankDemo => cmd_rank_demo(&config, ctx),
        Command::GraphFit => cmd_graph_fit(&config, ctx),
        Command::GraphSnapshots => cmd_graph_snapshots(&config, ctx),
        Command::DiscreteFit => cmd_discrete_fit(&config, ctx),
        Command::Evaluate => cmd_evaluate(&config, ctx),
        Command::Export => cmd_export(&config, ctx),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Outcome<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::new(FailureKind::Io, e))?;
    s.push('\n');
    Ok(s)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    io::write_atomic(path, text.as_bytes()).map_err(|e| Failure::new(FailureKind::Io, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_corpus(path: &Path) -> Outcome<Corpus> {
    io::read_corpus(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Outcome<Checkpoint> {
    io::read_checkpoint(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_simulate(config: &RunConfig, ctx: &Context) -> Outcome {
    let s = &config.simulate;
    let corpus_path = ctx.out("corpus.csv");
    let manifest_path = ctx.out("manifest.json");
    let inputs: Vec<&Path> = s.checkpoint.iter().filter(|_| s.source == Source::Checkpoint).map(PathBuf::as_path).collect();
    ctx.check_paths(&inputs, &[&corpus_path, &manifest_path])?;
    let window = config.window()?;
    let domain = config.domain()?;
    let mut corpus = Corpus { window, domain: Some(domain), nodes: None, sequences: Vec::new() };
    let horizon = config.horizon;
    let (m, seed, opts) = (s.sequences, config.seed, &s.options);
    let kernel = match s.source {
        Source::Poisson => {
            let p = SttpModel::poisson(s.mu, window, domain)?;
            corpus.sequences = simulate_many(&p, m, horizon, seed, opts).map_err(Failure::simulation)?;
            json!({ "source": "poisson", "mu": s.mu })
        }
        Source::Reference => {
            let k = s.reference.to_kernel(config.model.tau_max, config.model.a_max)?;
            let p = SttpModel::new(s.mu, k, window, domain)?;
            corpus.sequences = simulate_many(&p, m, horizon, seed, opts).map_err(Failure::simulation)?;
            json!({ "source": "reference", "mu": s.mu, "params": s.reference,
                    "tau_max": config.model.tau_max, "a_max": config.model.a_max })
        }
        Source::ExpHawkes => {
            let p = ExpHawkes(ExpHawkesSpec::new(s.mu, s.hawkes_a, s.hawkes_b)?);
            corpus.domain = None;
            corpus.sequences = simulate_many(&p, m, horizon, seed, opts).map_err(Failure::simulation)?;
            json!({ "source": "exp_hawkes", "mu": s.mu, "a": s.hawkes_a, "b": s.hawkes_b })
        }
        Source::Checkpoint => {
            let path = s.checkpoint.as_ref().expect("validated");
            let ck = read_checkpoint(path)?;
            match ck.payload {
                ModelPayload::Sttp { model } => {
                    corpus.domain = Some(model.domain);
                    corpus.sequences = simulate_many(&model, m, horizon, seed, opts).map_err(Failure::simulation)?;
                }
                ModelPayload::Graph { model } => {
                    corpus.domain = None;
                    corpus.nodes = Some(model.nodes());
                    let p = CachedGraphModel::new(model);
                    corpus.sequences = simulate_many(&p, m, horizon, seed, opts).map_err(Failure::simulation)?;
                }
            }
            json!({ "source": "checkpoint", "path": path, "checksum": ck.checksum })
        }
    };
    let text = io::format_corpus(&corpus);
    let manifest = json!({
        "command": "simulate",
        "kernel": kernel,
        "seed": config.seed,
        "horizon": horizon,
        "sequences": corpus.sequences.len(),
        "events": corpus.event_count(),
        "corpus_sha256": sha256_hex(text.as_bytes()),
        "config": config,
    });
    write_text(&corpus_path, &text)?;
    write_text(&manifest_path, &to_json(&manifest)?)?;
    println!("simulated {} sequences, {} events", corpus.sequences.len(), corpus.event_count());
    Ok(())
}

fn corpus_domain(corpus: &Corpus, config: &RunConfig) -> Outcome<SpatialDomain> {
    Ok(match corpus.domain {
        Some(d) => d,
        None => config.domain()?,
    })
}

fn spatial_sequences(corpus: &Corpus) -> Outcome {
    if corpus.domain.is_none() || corpus.sequences.iter().flat_map(|s| &s.events).any(|e| e.s.is_none()) {
        return Err(Failure::config("this command needs a spatio-temporal corpus"));
    }
    Ok(())
}

fn cmd_fit(config: &RunConfig, ctx: &Context) -> Outcome {
    let corpus_path = ctx.input(&config.fit.corpus, "corpus.csv");
    let ck_path = ctx.out("checkpoint.json");
    let report_path = ctx.out("fit_report.json");
    ctx.check_paths(&[&corpus_path], &[&ck_path, &report_path])?;
    let corpus = read_corpus(&corpus_path)?;
    spatial_sequences(&corpus)?;
    let domain = corpus_domain(&corpus, config)?;
    let mc = config.model.model_config();
    mc.validate(corpus.window, &domain)?;
    let opts = deepstpp::optim::FitOptions { seed: config.seed, ..config.fit.options.clone() };
    let init = SttpModel::deep(&mc, corpus.window, domain, config.model.alpha0, config.seed)?;
    let (model, report) = fit(&init, &corpus.sequences, &opts)?;
    write_text(&report_path, &to_json(&report)?)?;
    if report.termination == Termination::Diverged {
        return Err(Failure::new(FailureKind::Diverged, "fit diverged; see the report"));
    }
    let ck = Checkpoint::new(ModelPayload::Sttp { model }, Some(mc))?;
    write_text(&ck_path, &ck.to_json()?)?;
    println!("fit {:?} after {} epochs, objective {}", report.termination, report.trace.len(), report.final_objective);
    Ok(())
}

fn cmd_evaluate(config: &RunConfig, ctx: &Context) -> Outcome {
    let e = &config.evaluate;
    let corpus_path = ctx.input(&e.corpus, "corpus.csv");
    let ck_path = ctx.input(&e.checkpoint, "checkpoint.json");
    let report_path = e.report.clone().or_else(|| Some(ctx.out("fit_report.json")).filter(|p| p.is_file()));
    let out_path = ctx.out("evaluation.json");
    let mut inputs: Vec<&Path> = vec![&corpus_path, &ck_path];
    inputs.extend(report_path.as_deref());
    ctx.check_paths(&inputs, &[&out_path])?;
    let corpus = read_corpus(&corpus_path)?;
    let ck = read_checkpoint(&ck_path)?;
    let report: Option<FitReport> = match &report_path {
        Some(p) => Some(
            serde_json::from_str(&fs::read_to_string(p).map_err(|e| Failure::new(FailureKind::Io, e))?)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let out = match ck.payload {
        ModelPayload::Sttp { model } => {
            let k = &model.kernel;
            let grid = config.fit.options.resolution.spec(model.window, &model.domain, k.tau_max, k.a_max)?;
            let ev = evaluate(&model, &corpus.sequences, &grid)?;
            let objective = match &report {
                Some(r) => Some(fit_loss(&model, &corpus.sequences, &config.fit.options, r.final_barrier_weight)?),
                None => None,
            };
            json!({ "model": "sttp", "evaluation": ev, "objective": objective })
        }
        ModelPayload::Graph { model } => {
            let o = &config.graph.options;
            let objective = match &report {
                Some(r) => Some(
                    graph_loss(&model, &corpus.sequences, o.objective, (r.final_barrier_weight, o.barrier.floor), o.resolution.spacetime[0], o.resolution.lag)?.0,
                ),
                None => None,
            };
            json!({ "model": "graph", "objective": objective })
        }
    };
    write_text(&out_path, &to_json(&out)?)?;
    println!("{}", serde_json::to_string(&out).expect("json value"));
    Ok(())
}

fn cmd_predict(config: &RunConfig, ctx: &Context) -> Outcome {
    let p = &config.predict;
    let corpus_path = ctx.input(&p.corpus, "corpus.csv");
    let pred_path = ctx.out("predictions.csv");
    let mae_path = ctx.out("mae.json");
    let mut inputs: Vec<&Path> = vec![&corpus_path];
    inputs.extend(p.checkpoint.as_deref());
    ctx.check_paths(&inputs, &[&pred_path, &mae_path])?;
    let corpus = read_corpus(&corpus_path)?;
    let model: Box<dyn PointProcess> = match &p.checkpoint {
        Some(path) => match read_checkpoint(path)?.payload {
            ModelPayload::Sttp { model } => Box::new(model),
            ModelPayload::Graph { model } => Box::new(CachedGraphModel::new(model)),
        },
        None => Box::new(SttpModel::poisson(p.mu, corpus.window, corpus_domain(&corpus, config)?)?),
    };
    let opts = p.forecast_options();
    let mut rows = String::from("seq_id,status,t_last,pred_t,pred_x,pred_y,true_t,true_x,true_y\n");
    let (mut time_err, mut loc_err, mut evaluated, mut excluded, mut has_loc) = (0.0, 0.0, 0usize, 0usize, false);
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (i, seq) in corpus.sequences.iter().enumerate() {
        let n = seq.len();
        if n < 2 {
            rows.push_str(&format!("{i},too_short,,,,,,,\n"));
            continue;
        }
        let (hist, target) = (&seq.events[..n - 1], &seq.events[n - 1]);
        let ts = target.s.map(|s| (s[0].to_string(), s[1].to_string())).unwrap_or_default();
        match predict_next(model.as_ref(), hist, &opts) {
            Ok(f) => {
                evaluated += 1;
                time_err += (f.time - target.t).abs();
                if let (Some(a), Some(b)) = (f.location, target.s) {
                    has_loc = true;
                    loc_err += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                }
                rows.push_str(&format!(
                    "{i},ok,{},{},{},{},{},{},{}\n",
                    hist[n - 2].t,
                    f.time,
                    fmt_opt(f.location.map(|l| l[0])),
                    fmt_opt(f.location.map(|l| l[1])),
                    target.t,
                    ts.0,
                    ts.1
                ));
            }
            Err(Error::TailMassTooLarge { .. }) => {
                excluded += 1;
                rows.push_str(&format!("{i},tail_mass,{},,,,{},{},{}\n", hist[n - 2].t, target.t, ts.0, ts.1));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let denom = evaluated.max(1) as f64;
    let mae = json!({
        "time_mae": time_err / denom,
        "location_mae": has_loc.then(|| loc_err / denom),
        "evaluated": evaluated,
        "excluded": excluded,
    });
    write_text(&pred_path, &rows)?;
    write_text(&mae_path, &to_json(&mae)?)?;
    println!("{}", serde_json::to_string(&mae).expect("json value"));
    Ok(())
}

fn cmd_rank_demo(config: &RunConfig, ctx: &Context) -> Outcome {
    let (orig_path, repar_path) = (ctx.out("rank_original.csv"), ctx.out("rank_reparam.csv"));
    ctx.check_paths(&[], &[&orig_path, &repar_path])?;
    let r = &config.rank_demo;
    let (orig, repar) = discretize_pair_forms(rank_demo_kernel, r.size);
    let (ro, rr) = (effective_rank(&orig, r.rel_tol), effective_rank(&repar, r.rel_tol));
    write_text(&orig_path, &io::format_matrix(&orig))?;
    write_text(&repar_path, &io::format_matrix(&repar))?;
    println!("rank_original={ro} rank_reparam={rr}");
    Ok(())
}

fn graph_corpus(corpus: &Corpus, nodes: usize) -> Outcome {
    for e in corpus.sequences.iter().flat_map(|s| &s.events) {
        match e.node {
            Some(v) if v < nodes => {}
            Some(v) => return Err(Error::NodeOutOfRange { node: v, nodes }.into()),
            None => return Err(Failure::config("graph commands need a corpus with a node column")),
        }
    }
    Ok(())
}

fn cmd_graph_fit(config: &RunConfig, ctx: &Context) -> Outcome {
    let g = &config.graph;
    let corpus_path = ctx.input(&g.corpus, "corpus.csv");
    let ck_path = ctx.out("graph_checkpoint.json");
    let report_path = ctx.out("graph_fit_report.json");
    let mut inputs: Vec<&Path> = vec![&corpus_path];
    inputs.extend(g.adjacency.as_deref());
    ctx.check_paths(&inputs, &[&ck_path, &report_path])?;
    let corpus = read_corpus(&corpus_path)?;
    let graph = match &g.adjacency {
        Some(p) => Some(Graph::new(io::read_matrix(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?, true)?),
        None => None,
    };
    let n = graph.as_ref().map(Graph::nodes).or(corpus.nodes).unwrap_or(g.nodes);
    graph_corpus(&corpus, n)?;
    let (filters, shift) = match g.filter {
        FilterKind::Free => ((0..g.graph_rank).map(|_| GraphFilter::Free(vec![1.0 / n as f64; n * n])).collect(), None),
        FilterKind::Poly => {
            let kind = match g.shift {
                ShiftChoice::Adjacency => ShiftKind::Adjacency,
                ShiftChoice::Laplacian => ShiftKind::Laplacian,
            };
            let s = graph.as_ref().expect("validated").shift(kind);
            let mut h = vec![0.0; g.degree];
            h[0] = 0.5;
            ((0..g.graph_rank).map(|_| GraphFilter::Poly(h.clone())).collect(), Some(s))
        }
    };
    let w = &g.widths;
    let widths = BasisWidths { psi: w.clone(), phi: w.clone(), u: w.clone(), v: w.clone(), mark: w.clone() };
    let kernel = GraphFilterKernel::deep(n, g.temporal_rank, filters, shift, g.tau_max, &widths, g.alpha0, config.seed)?;
    let mu = if g.per_node_mu { vec![g.mu; n] } else { vec![g.mu] };
    let init = GraphModel::new(mu, kernel, corpus.window)?;
    let opts = deepstpp::optim::FitOptions { seed: config.seed, ..g.options.clone() };
    let (model, report) = fit_graph(&init, &corpus.sequences, &opts)?;
    write_text(&report_path, &to_json(&report)?)?;
    if report.termination == Termination::Diverged {
        return Err(Failure::new(FailureKind::Diverged, "graph fit diverged; see the report"));
    }
    let ck = Checkpoint::new(ModelPayload::Graph { model }, None)?;
    write_text(&ck_path, &ck.to_json()?)?;
    println!("graph fit {:?} after {} epochs, objective {}", report.termination, report.trace.len(), report.final_objective);
    Ok(())
}

fn cmd_graph_snapshots(config: &RunConfig, ctx: &Context) -> Outcome {
    let g = &config.graph;
    let ck_path = ctx.input(&g.checkpoint, "graph_checkpoint.json");
    let names: Vec<PathBuf> = (0..g.snapshot_lags.len()).map(|i| ctx.out(&format!("snapshot_{i}.csv"))).collect();
    let summary_path = ctx.out("snapshots.json");
    let mut outputs: Vec<&Path> = names.iter().map(PathBuf::as_path).collect();
    outputs.push(&summary_path);
    ctx.check_paths(&[&ck_path], &outputs)?;
    let model = match read_checkpoint(&ck_path)?.payload {
        ModelPayload::Graph { model } => model,
        ModelPayload::Sttp { .. } => return Err(Failure::config("graph-snapshots needs a graph checkpoint")),
    };
    let snaps = influence_snapshots(&model, g.snapshot_time, &g.snapshot_lags)?;
    let mut summary = Vec::new();
    for ((m, path), lag) in snaps.iter().zip(&names).zip(&g.snapshot_lags) {
        write_text(path, &io::format_matrix(m))?;
        summary.push(json!({ "lag": lag, "file": path.file_name().map(|f| f.to_string_lossy()), "frobenius": m.norm() }));
    }
    let summary = json!({ "time": g.snapshot_time, "snapshots": summary });
    write_text(&summary_path, &to_json(&summary)?)?;
    Ok(())
}

fn cmd_discrete_fit(config: &RunConfig, ctx: &Context) -> Outcome {
    let d = &config.discrete;
    let panel_path = ctx.input(&d.panel, "panel.csv");
    let params_path = ctx.out("discrete_params.json");
    let adj_path = ctx.out("adjacency.csv");
    ctx.check_paths(&[&panel_path], &[&params_path, &adj_path])?;
    let panel = io::read_panel(&panel_path).map_err(|e| Failure::config(format!("{}: {e}", panel_path.display())))?;
    let fit = fit_discrete(&panel, d.depth, &d.options)?;
    let adj = granger_adjacency(&fit.params, d.threshold);
    let k = panel.locations();
    let m = DMatrix::from_fn(k, k, |l, kk| if adj[l][kk] { 1.0 } else { 0.0 });
    let out = json!({
        "ids": panel.ids,
        "params": fit.params,
        "residual": fit.residual,
        "iterations": fit.iterations,
        "degenerate": fit.degenerate,
        "threshold": d.threshold,
    });
    write_text(&params_path, &to_json(&out)?)?;
    write_text(&adj_path, &io::format_matrix(&m))?;
    println!("discrete fit: residual {}, {} iterations", fit.residual, fit.iterations);
    Ok(())
}

fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

fn cmd_export(config: &RunConfig, ctx: &Context) -> Outcome {
    let e = &config.export;
    let ck_path = ctx.input(&e.checkpoint, "checkpoint.json");
    let corpus_path = ctx.input(&e.corpus, "corpus.csv");
    let (out_path, inputs): (PathBuf, Vec<&Path>) = match e.kind {
        ExportKind::Kernel => (ctx.out("kernel_grid.csv"), vec![&ck_path]),
        ExportKind::Intensity => (ctx.out("intensity_grid.csv"), vec![&ck_path, &corpus_path]),
    };
    ctx.check_paths(&inputs, &[&out_path])?;
    let payload = read_checkpoint(&ck_path)?.payload;
    let [c0, c1, c2] = e.cells;
    let table = match (e.kind, payload) {
        (ExportKind::Kernel, ModelPayload::Sttp { model }) => {
            let k = &model.kernel;
            let lags = midpoints(0.0, k.tau_max, c0);
            let dx = midpoints(-k.a_max, k.a_max, c1);
            let dy = midpoints(-k.a_max, k.a_max, c2);
            let (t0, s0) = (e.source_time, e.source_location);
            let mut values = Vec::with_capacity(c0 * c1 * c2);
            for &l in &lags {
                for &x in &dx {
                    for &y in &dy {
                        values.push(k.eval_unchecked(t0, t0 + l, s0, [s0[0] + x, s0[1] + y]));
                    }
                }
            }
            GridTable::new(vec![("lag".into(), lags), ("dx".into(), dx), ("dy".into(), dy)], values)?
        }
        (ExportKind::Kernel, ModelPayload::Graph { model }) => {
            let n = model.nodes();
            let lags = midpoints(0.0, model.kernel.tau_max, c0);
            let t = e.source_time + model.kernel.tau_max;
            let lag_list: Vec<f64> = lags.clone();
            let snaps = influence_snapshots(&model, t, &lag_list)?;
            let values = snaps.iter().flat_map(|m| (0..n).flat_map(move |i| (0..n).map(move |j| m[(i, j)]))).collect();
            let nodes: Vec<f64> = (0..n).map(|v| v as f64).collect();
            GridTable::new(vec![("lag".into(), lags), ("source".into(), nodes.clone()), ("target".into(), nodes)], values)?
        }
        (ExportKind::Intensity, ModelPayload::Sttp { model }) => {
            let corpus = read_corpus(&corpus_path)?;
            let seq: &EventSequence = corpus
                .sequences
                .get(e.sequence)
                .ok_or_else(|| Failure::config(format!("corpus has no sequence {}", e.sequence)))?;
            let d = model.domain;
            let ts = midpoints(0.0, model.window.horizon(), c0);
            let xs = midpoints(d.x_lo, d.x_hi, c1);
            let ys = midpoints(d.y_lo, d.y_hi, c2);
            let mut values = Vec::with_capacity(c0 * c1 * c2);
            for &t in &ts {
                let hist = seq.history_before(t);
                for &x in &xs {
                    for &y in &ys {
                        values.push(model.mu + model.excitation(hist, t, [x, y]));
                    }
                }
            }
            GridTable::new(vec![("t".into(), ts), ("x".into(), xs), ("y".into(), ys)], values)?
        }
        (ExportKind::Intensity, ModelPayload::Graph { .. }) => {
            return Err(Failure::config("intensity export supports spatio-temporal checkpoints only"))
        }
    };
    let text = io::format_grid(&table).map_err(|e| Failure::new(FailureKind::Io, e))?;
    write_text(&out_path, &text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(FailureKind::Config.code(), 2);
        assert_eq!(FailureKind::Simulation.code(), 3);
        assert_eq!(FailureKind::Diverged.code(), 4);
        assert_eq!(FailureKind::Io.code(), 5);
        assert_eq!(Failure::from(Error::Io("disk".into())).kind, FailureKind::Io);
        assert_eq!(Failure::simulation(Error::BoundViolationLoop { t: 1.0, raises: 61 }).kind, FailureKind::Simulation);
    }

    #[test]
    fn reference_config_matches_defaults() {
        let text = include_str!("../../../configs/reference.toml");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
    }
}
