//! `has`: training, experiments and the hub/edge services.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when a run fails.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand, ValueEnum};

use has_core::activity::accuracy;
use has_core::dataset::{self, synth, DatasetError, Window};
use has_core::feedback::{run_repl, write_feedback_csv};
use has_core::harness::{
    denoise_errors, eval_stream, load_or_train_recognizer, prepare_data, pretrain_agent, run_fig4, run_fig5,
    AgentVariant, DataSource, ExperimentConfig, HarnessError, Manifest, Models,
};
use has_core::hub_edge::{hub_run, EdgeServer, EdgeState, HubConfig, ProtocolError};
use has_core::noise::{NoiseSpec, Scenario};
use has_core::pipeline::Preprocessor;
use has_core::text::Identity;

#[derive(Parser)]
#[command(name = "has", version, about = "Wearable health-alert pipeline")]
struct Cli {
    /// Experiment config (JSON). Defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured seeds with this one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prep {
    Diffusion,
    Wiener,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    S1,
    S2,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::S1 => Scenario::S1Uniform,
            ScenarioArg::S2 => Scenario::S2Gaussian,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse recordings and summarize them, or write the synthetic cohort.
    Ingest {
        /// Write the configured synthetic cohort as `.log` files instead.
        #[arg(long)]
        synthetic: bool,
        files: Vec<PathBuf>,
    },
    /// Train (or load) the diffusion denoiser and report held-out error.
    TrainDenoiser,
    /// Train (or load) the activity recognizer and report held-out accuracy.
    TrainRecognizer,
    /// Pretrain the gated expert's agents for every seed.
    TrainAgent,
    /// Error rates versus noise level for every method.
    Fig4,
    /// Per-block error rates while learning online.
    Fig5,
    /// Serve every registered expert over TCP.
    ServeEdge {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, value_enum, default_value = "diffusion")]
        preprocess: Prep,
        /// Noise level assumed by the denoiser.
        #[arg(long, default_value_t = 0.4)]
        delta: f64,
        #[arg(long, value_enum, default_value = "s2")]
        scenario: ScenarioArg,
    },
    /// Stream noisy evaluation windows to an edge server.
    RunHub {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 100)]
        slots: usize,
        #[arg(long, default_value_t = 0.4)]
        delta: f64,
        #[arg(long, value_enum, default_value = "s2")]
        scenario: ScenarioArg,
    },
    /// Show decisions and read feedback from stdin.
    Repl {
        #[arg(long, default_value_t = 10)]
        slots: usize,
        #[arg(long, default_value_t = 0.4)]
        delta: f64,
        #[arg(long, value_enum, default_value = "s2")]
        scenario: ScenarioArg,
    },
}

#[derive(Debug)]
enum CliError {
    Harness(HarnessError),
    Protocol(ProtocolError),
    Other(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Harness(e) => write!(f, "{e}"),
            CliError::Protocol(e) => write!(f, "{e}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl<E: Into<HarnessError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Harness(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_with_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(HarnessError::from)?;
    for (name, body) in files {
        std::fs::write(out.join(name), body).map_err(HarnessError::from)?;
    }
    let names: Vec<&str> = files.iter().map(|f| f.0).collect();
    Manifest::new(command, cfg, &names).write(&out.join(format!("{command}.manifest.json")))?;
    for (name, _) in files {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

/// Training commands cache into `model_dir`, defaulting to `<out>/models`.
fn training_config(mut cfg: ExperimentConfig, out: &Path) -> ExperimentConfig {
    cfg.train = true;
    if cfg.model_dir.is_none() {
        cfg.model_dir = Some(out.join("models"));
    }
    cfg
}

fn noisy_eval(cfg: &ExperimentConfig, data: &has_core::harness::PreparedData, scenario: Scenario, delta: f64, slots: usize) -> Result<Vec<Window>> {
    let mut stream = eval_stream(cfg, data, scenario, delta, cfg.seeds[0])?;
    stream.truncate(slots);
    Ok(stream)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match &cli.command {
        Command::Ingest { synthetic, files } => ingest(&cfg, &out, *synthetic, files),
        Command::TrainDenoiser => {
            let cfg = training_config(cfg, &out);
            let data = prepare_data(&cfg)?;
            let models = Models::prepare(&cfg, &data)?;
            let mut summary = String::from("scenario,delta,seed,mse_noisy,mse_wiener,mse_diffusion\n");
            for &scenario in &cfg.scenarios {
                for &delta in &cfg.deltas {
                    let r = denoise_errors(&cfg, &models, &data, scenario, delta, cfg.seeds[0])?;
                    summary += &format!(
                        "{},{delta},{},{},{},{}\n",
                        scenario.label(),
                        r.seed,
                        r.mse_noisy,
                        r.mse_wiener,
                        r.mse_diffusion
                    );
                }
            }
            write_with_manifest(&out, "train-denoiser", &cfg, &[("denoiser_mse.csv", summary)])
        }
        Command::TrainRecognizer => {
            let cfg = training_config(cfg, &out);
            let data = prepare_data(&cfg)?;
            let rec = load_or_train_recognizer(&cfg, &data)?;
            let acc = accuracy(&data.eval, &rec).map_err(|e| CliError::Other(e.to_string()))?;
            println!("held-out accuracy {acc:.4}");
            write_with_manifest(&out, "train-recognizer", &cfg, &[("recognizer.json", format!("{{\"heldout_accuracy\":{acc}}}\n"))])
        }
        Command::TrainAgent => {
            let cfg = training_config(cfg, &out);
            let data = prepare_data(&cfg)?;
            let models = Models::prepare(&cfg, &data)?;
            let mut summary = String::from("expert,variant,seed,thresholds\n");
            for &seed in &cfg.seeds {
                for v in [AgentVariant::Aware, AgentVariant::Pooled] {
                    let agent = pretrain_agent(&cfg, &models, &data, v, true, seed)?;
                    let th: Vec<String> = agent.thresholds.iter().map(|(a, t)| format!("{a}:{t:.4}")).collect();
                    summary += &format!("{},{},{seed},{}\n", models.expert_id, v.label(), th.join(" "));
                }
            }
            write_with_manifest(&out, "train-agent", &cfg, &[("agents.csv", summary)])
        }
        Command::Fig4 => {
            let data = prepare_data(&cfg)?;
            let models = Models::prepare(&cfg, &data)?;
            let res = run_fig4(&cfg, &models, &data)?;
            write_with_manifest(&out, "fig4", &cfg, &[("fig4.csv", res.to_csv_string())])
        }
        Command::Fig5 => {
            let data = prepare_data(&cfg)?;
            let models = Models::prepare(&cfg, &data)?;
            let res = run_fig5(&cfg, &models, &data)?;
            write_with_manifest(&out, "fig5", &cfg, &[("fig5.csv", res.to_csv_string())])
        }
        Command::ServeEdge { addr, preprocess, delta, scenario } => {
            let data = prepare_data(&cfg)?;
            let models = Models::prepare(&cfg, &data)?;
            let mut experts = BTreeMap::new();
            for id in cfg.registry.ids() {
                let m = models.for_expert(&cfg, id)?;
                let agent = pretrain_agent(&cfg, &m, &data, AgentVariant::Aware, true, cfg.seeds[0])?;
                experts.insert(id.to_string(), Arc::new(Mutex::new(m.runtime(&cfg, agent, AgentVariant::Aware, cfg.seeds[0]))));
            }
            let spec = NoiseSpec { scenario: (*scenario).into(), delta: *delta, seed: 0 };
            let preprocessor = match preprocess {
                Prep::Diffusion => Preprocessor::Diffusion { model: models.diffusion.clone(), delta_est: spec.relative_sd() },
                Prep::Wiener => Preprocessor::Wiener(cfg.wiener),
                Prep::None => Preprocessor::Identity,
            };
            let state = Arc::new(EdgeState { registry: cfg.registry.clone(), experts, preprocessor, gate_adapter: None });
            let server = EdgeServer::bind(addr.as_str(), state).map_err(CliError::Protocol)?;
            println!("listening on {}", server.local_addr().map_err(CliError::Protocol)?);
            std::io::stdout().flush().ok();
            server.serve(Arc::new(std::sync::atomic::AtomicBool::new(false)));
            Ok(())
        }
        Command::RunHub { addr, slots, delta, scenario } => {
            let data = prepare_data(&cfg)?;
            let stream = noisy_eval(&cfg, &data, (*scenario).into(), *delta, *slots)?;
            let hub = HubConfig::new(addr.clone(), cfg.user_description.clone(), cfg.embed_dim);
            let (decisions, wire) = hub_run(&hub, &cfg.record, &stream).map_err(CliError::Protocol)?;
            let wire_text = String::from_utf8_lossy(&wire);
            if !has_core::text::is_clean(&wire_text, &cfg.record.identity) && cfg.record.identity != Identity::default() {
                return Err(CliError::Other("identity token found on the wire".into()));
            }
            let mut csv = String::from("slot,activity,score,threshold,fired,truth\n");
            for (d, w) in decisions.iter().zip(&stream) {
                let truth = if w.episode.is_anomalous() { "anomalous" } else { "normal" };
                csv += &format!("{},{},{},{},{},{truth}\n", d.slot, d.activity, d.score, d.threshold, d.fired);
            }
            write_with_manifest(&out, "run-hub", &cfg, &[("hub_decisions.csv", csv)])
        }
        Command::Repl { slots, delta, scenario } => {
            let data = prepare_data(&cfg)?;
            let models = Models::prepare(&cfg, &data)?;
            let agent = pretrain_agent(&cfg, &models, &data, AgentVariant::Aware, true, cfg.seeds[0])?;
            let spec = NoiseSpec { scenario: (*scenario).into(), delta: *delta, seed: 0 };
            let prep = Preprocessor::Diffusion { model: models.diffusion.clone(), delta_est: spec.relative_sd() };
            let stream = prep.apply_many(&noisy_eval(&cfg, &data, spec.scenario, *delta, *slots)?).map_err(HarnessError::from)?;
            let mut rt = models.runtime(&cfg, agent, AgentVariant::Aware, cfg.seeds[0]);
            let mut decisions = Vec::new();
            for (slot, w) in stream.iter().enumerate() {
                decisions.push(rt.decide(slot as u64, &models.g, w, Some(w.episode)).map_err(HarnessError::from)?);
            }
            let stdin = std::io::stdin();
            let mut input = stdin.lock();
            let mut output = BufWriter::new(std::io::stdout());
            let events = run_repl(&decisions, &mut input, &mut output)?;
            for ev in &events {
                let o = rt.apply(ev).map_err(HarnessError::from)?;
                writeln!(output, "activity {}: threshold {:.3} -> {:.3}", o.activity, o.theta_before, o.theta_after).ok();
            }
            output.flush().ok();
            let mut buf = Vec::new();
            write_feedback_csv(&events, &mut buf)?;
            write_with_manifest(&out, "repl", &cfg, &[("feedback.csv", String::from_utf8_lossy(&buf).into_owned())])
        }
    }
}

fn ingest(cfg: &ExperimentConfig, out: &Path, synthetic: bool, files: &[PathBuf]) -> Result<()> {
    if synthetic {
        let DataSource::Synthetic { cohort } = &cfg.data else {
            return Err(CliError::Other("config data source is not synthetic".into()));
        };
        let dir = out.join("data");
        let paths = synth::write_cohort(&dir, cohort).map_err(HarnessError::from)?;
        let list: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        return write_with_manifest(out, "ingest", cfg, &[("ingest.txt", list.join("\n") + "\n")]);
    }
    if files.is_empty() {
        return Err(CliError::Other("no input files (pass paths or --synthetic)".into()));
    }
    let mut summary = String::from("file,subject,rows,windows,labels\n");
    for f in files {
        let s = dataset::load_subject(f)?;
        let windows = match dataset::windowize(&s, cfg.window_len, cfg.stride) {
            Ok(w) => w.len(),
            Err(DatasetError::WindowTooLong { .. }) => 0,
            Err(e) => return Err(e.into()),
        };
        let mut labels: Vec<u8> = s.labels.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let labels: Vec<String> = labels.iter().map(u8::to_string).collect();
        summary += &format!("{},{},{},{windows},{}\n", f.display(), s.subject_id, s.len(), labels.join(" "));
    }
    print!("{summary}");
    write_with_manifest(out, "ingest", cfg, &[("ingest.csv", summary)])
}
