//! Argument parsing and subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgebot_core::bridge::{Driver, Frame, LoopbackBridge, Reply, SimExecutor, TcpBridge, TcpClient};
use edgebot_core::calibration::{
    estimate_speed, fit_linear, fit_poly2, read_samples_csv, CalibrationSet, PWM_RANGE,
};
use edgebot_core::config::RobotConfig;
use edgebot_core::drivetrain::compile;
use edgebot_core::eval::{render_table, run_eval, Catalog, EvalOptions, JudgeOptions};
use edgebot_core::parse_sequence;
use edgebot_core::simulator::{write_trace_jsonl, Simulator};
use edgebot_core::translator::{translate, Backend, BackendConfig, PromptTemplate};

use crate::service::{self, ServiceOptions};

#[derive(Debug, Parser)]
#[command(name = "edgebot", version, about = "Natural-language control of a simulated mobile robot")]
pub struct Cli {
    /// Robot configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit calibration models from measurements.
    #[command(subcommand)]
    Calibrate(CalibrateCmd),
    /// Run command strings on the simulator.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Translate an utterance into a command string.
    Translate(TranslateArgs),
    /// Score a backend against the utterance catalog.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Translate, relay over the serial bridge and execute, in one process.
    Pipeline(PipelineArgs),
    /// Serial bridge over TCP.
    #[command(subcommand)]
    Bridge(BridgeCmd),
    /// Run the operator service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    Forward,
    Backward,
    Left,
    Right,
    RangeSensor,
}

#[derive(Debug, Subcommand)]
pub enum CalibrateCmd {
    /// Least-squares fit of a CSV with an `x,y` header.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        degree: u8,
        /// Calibration file to write. An existing file is updated in place.
        #[arg(long)]
        out: PathBuf,
        /// Model to replace; defaults to forward for degree 2 and the range
        /// sensor for degree 1.
        #[arg(long, value_enum)]
        model: Option<ModelName>,
    },
    /// Speed from a time,distance series.
    Speed {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// Execute a command string and print the final pose
    Run {
        #[arg(long)]
        commands: String,
        /// Write every simulator step as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Turn off sensor noise.
        #[arg(long)]
        noiseless: bool,
    },
}

#[derive(Debug, Args)]
pub struct BackendArg {
    /// rule, remote, local, or fixture:<path>. Defaults to the config file's backend.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub backend: BackendArg,
    /// Utterance to translate
    #[arg(long)]
    pub text: String,
    /// Print the full translation result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Run every catalog entry for a number of trials and print the verdict table
    Run {
        #[command(flatten)]
        backend: BackendArg,
        #[arg(long, default_value_t = edgebot_core::eval::DEFAULT_TRIALS)]
        trials: usize,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Catalog file; the built-in catalog otherwise.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Judging flag, e.g. mirrored_turns. Repeatable.
        #[arg(long = "flag")]
        flags: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run date recorded in the report; today by default.
        #[arg(long)]
        date: Option<String>,
        /// Concurrent requests for network backends.
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
    },
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub backend: BackendArg,
    /// Utterance to translate
    #[arg(long)]
    pub text: String,
}

#[derive(Debug, Subcommand)]
pub enum BridgeCmd {
    /// Accept one controller at a time and drive the simulator.
    Listen {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
    },
    /// Send one command string and print the reply.
    Send {
        #[arg(long)]
        addr: String,
        #[arg(long)]
        dsl: String,
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub host: IpAddr,
    #[command(flatten)]
    pub backend: BackendArg,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
}

fn load_config(path: Option<&Path>) -> Result<RobotConfig> {
    match path {
        Some(p) => Ok(RobotConfig::load(p)?),
        None => Ok(RobotConfig::default()),
    }
}

fn backend_for(arg: &BackendArg, cfg: &RobotConfig) -> Result<Arc<dyn Backend>> {
    let config = match &arg.backend {
        Some(s) => BackendConfig::from_shorthand(s)?,
        None => cfg.backend.clone(),
    };
    Ok(config.build()?)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Cmd::Calibrate(c) => calibrate(c),
        Cmd::Sim(SimCmd::Run { commands, trace, seed, noiseless }) => sim_run(&cfg, &commands, trace, seed, noiseless),
        Cmd::Translate(a) => translate_cmd(&cfg, &a),
        Cmd::Eval(EvalCmd::Run { backend, trials, out, catalog, flags, seed, date, max_in_flight }) => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let backend = backend_for(&backend, &cfg)?;
            let catalog = match catalog {
                Some(p) => Catalog::load(&p)?,
                None => Catalog::builtin(),
            };
            let judge = flags.iter().fold(JudgeOptions::default(), |j, f| j.with_flag(f));
            let opts = EvalOptions {
                trials,
                seed,
                date: date.unwrap_or_else(|| chrono::Local::now().format("%Y-%m-%d").to_string()),
                template: PromptTemplate::default(),
                judge,
                max_in_flight,
            };
            let report = run_eval(backend.as_ref(), &catalog, &opts);
            print!("{}", render_table(&report));
            if let Some(out) = out {
                std::fs::write(&out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(())
        }
        Cmd::Pipeline(a) => pipeline(&cfg, &a),
        Cmd::Bridge(b) => bridge(&cfg, b),
        Cmd::Serve(a) => {
            let backend = backend_for(&a.backend, &cfg)?;
            let addr = SocketAddr::new(a.host, a.port.unwrap_or(cfg.service_port));
            let mut opts = ServiceOptions::new(cfg, backend)?;
            opts.time_scale = a.time_scale;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(opts, addr))
        }
    }
}

fn calibrate(c: CalibrateCmd) -> Result<()> {
    match c {
        CalibrateCmd::Fit { input, degree, out, model } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let points = read_samples_csv(file)?;
            let mut set = if out.exists() { CalibrationSet::load(&out)? } else { CalibrationSet::default() };
            let model = model.unwrap_or(if degree == 1 { ModelName::RangeSensor } else { ModelName::Forward });
            let diag = match (degree, model) {
                (1, ModelName::RangeSensor) => {
                    let (m, d) = fit_linear(&points)?;
                    println!("range_sensor: y = {} x + {}", m.slope, m.intercept);
                    set.range_sensor = m;
                    d
                }
                (2, ModelName::RangeSensor) => bail!("the range sensor model is linear; use --degree 1"),
                (1, _) => bail!("motion models are quadratic; use --degree 2"),
                (_, name) => {
                    let (mut m, d) = fit_poly2(&points)?;
                    m.output_clamp = PWM_RANGE;
                    m.check()?;
                    let key = match name {
                        ModelName::Forward => "forward",
                        ModelName::Backward => "backward",
                        ModelName::Left => "left",
                        ModelName::Right => "right",
                        ModelName::RangeSensor => unreachable!("handled above"),
                    };
                    let [a, b, c] = m.coefficients;
                    println!("{key}: pwm = {a} s^2 + {b} s + {c} on [{}, {}]", m.domain.0, m.domain.1);
                    *set.poly_model_mut(key).expect("known model") = m;
                    d
                }
            };
            println!("samples: {}  rss: {:.6e}  r^2: {:.9}", diag.samples, diag.rss, diag.r_squared);
            set.save(&out)?;
            Ok(())
        }
        CalibrateCmd::Speed { input } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            println!("{}", estimate_speed(&read_samples_csv(file)?)?);
            Ok(())
        }
    }
}

fn sim_run(cfg: &RobotConfig, commands: &str, trace: Option<PathBuf>, seed: Option<u64>, noiseless: bool) -> Result<()> {
    let seq = parse_sequence(commands).map_err(|d| anyhow::anyhow!("invalid command string: {d}"))?;
    let cal = cfg.calibration()?;
    let plan = compile(&seq, &cal, &cfg.drive)?;
    let mut sim_cfg = cfg.sim;
    if let Some(s) = seed {
        sim_cfg.seed = s;
    }
    if noiseless {
        sim_cfg.noise = edgebot_core::ultrasonic::NoiseModel::off();
    }
    let mut sim = Simulator::new(cfg.arena.clone(), sim_cfg, cal)?;
    let summary = sim.run_plan(&plan)?;
    if let Some(path) = trace {
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_trace_jsonl(&summary.trace, BufWriter::new(file))?;
    }
    let p = summary.final_pose;
    println!(
        "final pose: x={:.3} y={:.3} heading={:.3}  t={:.3}s  steps={}",
        p.x,
        p.y,
        p.heading,
        summary.final_state.time,
        summary.trace.len()
    );
    Ok(())
}

fn translate_cmd(cfg: &RobotConfig, a: &TranslateArgs) -> Result<()> {
    let backend = backend_for(&a.backend, cfg)?;
    let result = translate(backend.as_ref(), &PromptTemplate::default(), &a.text)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    }
    match result.wire() {
        Some(w) => {
            if !a.json {
                println!("{w}");
            }
            Ok(())
        }
        None => {
            let why = result.diagnostics.first().map(|d| d.to_string()).unwrap_or_default();
            bail!("backend output {:?} is not a valid command string: {why}", result.raw_output)
        }
    }
}

fn sim_driver(cfg: &RobotConfig) -> Result<Driver<SimExecutor>> {
    let cal = cfg.calibration()?;
    let sim = Simulator::new(cfg.arena.clone(), cfg.sim, cal.clone())?;
    Ok(Driver::new(SimExecutor::new(sim), cal, cfg.drive))
}

fn pipeline(cfg: &RobotConfig, a: &PipelineArgs) -> Result<()> {
    let backend = backend_for(&a.backend, cfg)?;
    let result = translate(backend.as_ref(), &PromptTemplate::default(), &a.text)?;
    let Some(wire) = result.wire() else {
        bail!("backend output {:?} is not a valid command string", result.raw_output);
    };
    println!("command: {wire}");
    let mut bridge = LoopbackBridge::new(sim_driver(cfg)?, cfg.serial);
    let reply = bridge.send(&Frame::new(wire)?);
    println!("reply: {reply}");
    let exec = bridge.handler().executor();
    let p = exec.simulator().pose();
    println!("final pose: x={:.3} y={:.3} heading={:.3}  t={:.3}s", p.x, p.y, p.heading, exec.simulator().state().time);
    if reply != Reply::Ok {
        bail!("driver replied {reply}");
    }
    Ok(())
}

fn bridge(cfg: &RobotConfig, b: BridgeCmd) -> Result<()> {
    match b {
        BridgeCmd::Listen { port, host } => {
            let addr = SocketAddr::new(host, port.unwrap_or(cfg.bridge_port));
            let bridge = TcpBridge::bind(addr, sim_driver(cfg)?, cfg.serial)?;
            println!("bridge listening on {}", bridge.local_addr());
            std::io::stdout().flush()?;
            bridge.wait();
            Ok(())
        }
        BridgeCmd::Send { addr, dsl, timeout } => {
            let mut client = TcpClient::connect(&addr).with_context(|| format!("connecting to {addr}"))?;
            client.set_timeout(Some(Duration::from_secs_f64(timeout)))?;
            let reply = client.send(&Frame::new(dsl)?)?;
            println!("{reply}");
            if reply != Reply::Ok {
                bail!("driver replied {reply}");
            }
            Ok(())
        }
    }
}
