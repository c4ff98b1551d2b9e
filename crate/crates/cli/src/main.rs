use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use verispice::compare::{parse_expression, TolerancePolicy};
use verispice::llm::ExtractedAnswer;
use verispice::model::{load_problems, Target, TargetKind, Workspace};
use verispice::netlist::{lint_for, parse_netlist, Analysis};
use verispice::pipeline::{
    batch_run, build_context, list_tickets, report, resolve_ticket, run_problem, ticket_workspace,
    verify_targets, workspace_problem, BatchOptions, PipelineConfig, PipelineContext, Resolution,
    ResolutionKind, TicketStatus,
};
use verispice::sim::{parse_output, series_from_json, Ngspice, SimulationSeries, Simulator, DEFAULT_TIMEOUT};
use verispice::vision::{detect_dependent_sources, detect_independent_sources, encode_png, open_image};
use verispice_review::AppState;

const DEFAULT_CONFIG: &str = "verispice.toml";

#[derive(Parser)]
#[command(name = "verispice", version, about = "Simulator-verified solving of circuit-analysis problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (provider, simulator, detector, thresholds).
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, String> {
        let path = match &self.config {
            Some(p) => p.clone(),
            None if Path::new(DEFAULT_CONFIG).is_file() => PathBuf::from(DEFAULT_CONFIG),
            None => return Err(format!("no configuration: pass --config or create ./{DEFAULT_CONFIG}")),
        };
        PipelineConfig::load(&path).map_err(|e| e.to_string())
    }

    fn context(&self) -> Result<PipelineContext, String> {
        build_context(&self.load()?).map_err(|e| e.to_string())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Detect source symbols in a schematic image.
    Detect {
        image: PathBuf,
        /// Write each inset as a PNG into this directory.
        #[arg(long)]
        insets: Option<PathBuf>,
        /// Also query the external detector from this config for independent sources.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run ngspice in batch mode on a netlist and print the parsed outcome.
    Simulate {
        netlist: PathBuf,
        #[arg(long, env = "VERISPICE_NGSPICE")]
        ngspice: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
        timeout_secs: u64,
    },
    /// Compare an answer expression with a simulated column.
    Compare {
        /// Series JSON or captured ngspice stdout.
        series: PathBuf,
        /// Answer expression, e.g. "10 - 5*exp(-12.5*t)".
        #[arg(long)]
        expr: String,
        /// Column holding the simulated values (magnitude for network functions).
        #[arg(long)]
        var: String,
        /// Phase column in degrees for network functions.
        #[arg(long)]
        phase: Option<String>,
        #[arg(long)]
        tolerance_rel: Option<f64>,
        #[arg(long)]
        tolerance_abs: Option<f64>,
    },
    /// Parse and lint a netlist.
    Lint {
        netlist: PathBuf,
        /// Lint against the ac analysis template.
        #[arg(long)]
        ac: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run every problem under a directory through the pipeline.
    Run {
        problems: PathBuf,
        /// Workspace root receiving one directory per problem.
        #[arg(long, short, default_value = "workspace")]
        workspace: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallel: usize,
        #[arg(long)]
        tolerance_rel: Option<f64>,
        /// Continue problems that already have state instead of refusing.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Print the tier summary of a workspace.
    Report {
        workspace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// List review tickets.
    Tickets {
        workspace: PathBuf,
        #[arg(long)]
        status: Option<TicketStatus>,
    },
    /// Resolve a review ticket and optionally rerun the problem.
    Resolve {
        workspace: PathBuf,
        ticket: String,
        #[arg(long)]
        kind: ResolutionKind,
        #[arg(long, conflicts_with = "text_file")]
        text: Option<String>,
        #[arg(long)]
        text_file: Option<PathBuf>,
        /// Run the scheduled trial right away.
        #[arg(long)]
        rerun: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Serve the review API over a workspace.
    Serve {
        workspace: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        listen: SocketAddr,
        /// Bearer token required on every request.
        #[arg(long, env = "VERISPICE_REVIEW_TOKEN")]
        token: Option<String>,
        /// Enable POST /tickets/{id}/netlist.
        #[arg(long)]
        allow_netlist_override: bool,
        /// Without a config, resolutions update state but do not rerun.
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_series(path: &Path) -> Result<SimulationSeries, String> {
    let text = read(path)?;
    if text.trim_start().starts_with('{') {
        series_from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        parse_output(&text)
            .map(|p| p.series)
            .map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn detect(image: &Path, insets: Option<&Path>, config: Option<&Path>) -> Result<ExitCode, String> {
    let img = open_image(image).map_err(|e| e.to_string())?;
    let mut found = detect_dependent_sources(&img);
    if let Some(cfg) = config {
        let cfg = PipelineConfig::load(cfg).map_err(|e| e.to_string())?;
        let client = cfg.detector.ok_or("config has no [detector] section")?;
        found.extend(detect_independent_sources(image, &client).map_err(|e| e.to_string())?);
    }
    if let Some(dir) = insets {
        fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        for (i, d) in found.iter().enumerate() {
            let path = dir.join(format!("inset_{}.png", i + 1));
            fs::write(&path, encode_png(&d.inset)).map_err(|e| e.to_string())?;
        }
    }
    let boxes: Vec<_> = found.iter().map(|d| d.bbox).collect();
    println!("{}", pretty(&boxes));
    Ok(ExitCode::SUCCESS)
}

fn simulate(netlist: &Path, ngspice: Option<PathBuf>, timeout: u64) -> Result<ExitCode, String> {
    let sim = ngspice.map(Ngspice::new).unwrap_or_default();
    let outcome = sim
        .run(netlist, Duration::from_secs(timeout.max(1)))
        .map_err(|e| e.to_string())?;
    println!("{}", pretty(&outcome.status));
    Ok(if outcome.is_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn compare(
    series: &Path,
    expr: &str,
    var: &str,
    phase: Option<String>,
    rel: Option<f64>,
    abs: Option<f64>,
) -> Result<ExitCode, String> {
    let series = load_series(series)?;
    let expression = parse_expression(expr).map_err(|e| format!("expression: {e:?}"))?;
    let d = TolerancePolicy::default();
    let policy = TolerancePolicy {
        rel: rel.unwrap_or(d.rel),
        abs: abs.unwrap_or(d.abs),
        ..d
    };
    let network = expression.axis_kind() == verispice::compare::AxisKind::Frequency;
    let target = Target {
        name: var.to_string(),
        kind: if network { TargetKind::NetworkFunction } else { TargetKind::TimeSeries },
        magnitude: None,
        phase,
    };
    let answer = ExtractedAnswer {
        target: var.to_string(),
        text: expr.to_string(),
        expression,
    };
    let v = verify_targets(&series, &[answer], &[target], &policy);
    println!("{}", pretty(&v));
    Ok(if v.is_match() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn lint(netlist: &Path, ac: bool, json: bool) -> Result<ExitCode, String> {
    let n = parse_netlist(&read(netlist)?).map_err(|e| format!("{}: {e}", netlist.display()))?;
    let r = lint_for(&n, if ac { Analysis::Ac } else { Analysis::Tran });
    if json {
        println!("{}", r.to_json());
    } else if r.is_clean() {
        println!("clean");
    } else {
        println!("{r}");
    }
    Ok(if r.has_errors() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn run(
    problems: &Path,
    workspace: &Path,
    parallel: usize,
    rel: Option<f64>,
    resume: bool,
    config: &ConfigArg,
) -> Result<ExitCode, String> {
    let mut ctx = config.context()?;
    if let Some(r) = rel {
        ctx.tolerance.rel = r;
    }
    let problems = load_problems(problems).map_err(|e| e.to_string())?;
    let summary = batch_run(&ctx, &problems, workspace, BatchOptions { parallel, resume }).map_err(|e| e.to_string())?;
    print!("{}", summary.render());
    Ok(ExitCode::SUCCESS)
}

fn resolve(
    root: &Path,
    ticket: &str,
    kind: ResolutionKind,
    text: Option<String>,
    text_file: Option<PathBuf>,
    rerun: bool,
    config: &ConfigArg,
) -> Result<ExitCode, String> {
    let text = match text_file {
        Some(p) => Some(read(&p)?),
        None => text,
    };
    let ctx = if rerun { Some(config.context()?) } else { None };
    let resolution = Resolution::from_parts(kind, text.as_deref()).map_err(|e| e.to_string())?;
    let ws: Workspace = ticket_workspace(root, ticket).map_err(|e| e.to_string())?;
    let mut st = resolve_ticket(&ws, ticket, resolution).map_err(|e| e.to_string())?;
    if let (Some(ctx), false) = (ctx, st.stage.is_terminal()) {
        let problem = workspace_problem(&ws).map_err(|e| e.to_string())?;
        st = run_problem(&ctx, &problem, &ws).map_err(|e| e.to_string())?;
    }
    println!(
        "{}: {:?} at llm trial {}, sim trial {}",
        st.problem_id, st.stage, st.llm_trial, st.sim_trial
    );
    Ok(ExitCode::SUCCESS)
}

fn serve(
    root: PathBuf,
    listen: SocketAddr,
    token: Option<String>,
    allow_override: bool,
    config: &ConfigArg,
) -> Result<ExitCode, String> {
    let ctx = match config.config.is_some() || Path::new(DEFAULT_CONFIG).is_file() {
        true => Some(Arc::new(config.context()?)),
        false => None,
    };
    let app = Arc::new(
        AppState::new(root, ctx)
            .with_token(token)
            .with_netlist_override(allow_override),
    );
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    eprintln!("review API listening on http://{listen}");
    rt.block_on(verispice_review::serve(app, listen)).map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Detect { image, insets, config } => detect(&image, insets.as_deref(), config.as_deref()),
        Command::Simulate {
            netlist,
            ngspice,
            timeout_secs,
        } => simulate(&netlist, ngspice, timeout_secs),
        Command::Compare {
            series,
            expr,
            var,
            phase,
            tolerance_rel,
            tolerance_abs,
        } => compare(&series, &expr, &var, phase, tolerance_rel, tolerance_abs),
        Command::Lint { netlist, ac, json } => lint(&netlist, ac, json),
        Command::Run {
            problems,
            workspace,
            parallel,
            tolerance_rel,
            resume,
            config,
        } => run(&problems, &workspace, parallel, tolerance_rel, resume, &config),
        Command::Report { workspace, json } => {
            let s = report(&workspace).map_err(|e| e.to_string())?;
            if json {
                println!("{}", s.to_json());
            } else {
                print!("{}", s.render());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Tickets { workspace, status } => {
            let tickets: Vec<_> = list_tickets(&workspace)
                .map_err(|e| e.to_string())?
                .into_iter()
                .filter(|t| status.is_none_or(|s| t.status() == s))
                .collect();
            for t in &tickets {
                println!("{}\t{:?}\t{:?}\tllm{}/sim{}\t{}", t.id, t.status(), t.trigger, t.llm_trial, t.sim_trial, t.created_at);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Resolve {
            workspace,
            ticket,
            kind,
            text,
            text_file,
            rerun,
            config,
        } => resolve(&workspace, &ticket, kind, text, text_file, rerun, &config),
        Command::Serve {
            workspace,
            listen,
            token,
            allow_netlist_override,
            config,
        } => serve(workspace, listen, token, allow_netlist_override, &config),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
