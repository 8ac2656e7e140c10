use clap::{Args, Parser, Subcommand, ValueEnum};
use ctsnm_core::dgp::generate_subject;
use ctsnm_core::estimators::{ignorability_diagnostic, solve, DiagnosticTable, SolverOptions};
use ctsnm_core::panel::{read_panel_csv, write_panel, PanelRules};
use ctsnm_core::study::{run_study, simulate_panel, StudyConfig};
use ctsnm_core::{
    EstimateResult, EstimatorKind, EstimatorSpec, ModelConfig, ModelId, PanelSchema, RngStream,
};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Simulate, estimate and diagnose continuous-time treatment effects observed
/// at discrete visits.
#[derive(Parser)]
#[command(name = "ctsnm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a model and write the visit panel as CSV.
    Simulate(SimulateArgs),
    /// Fit estimators to a panel CSV.
    Estimate(EstimateArgs),
    /// Run a replicated simulation study from a config file.
    Montecarlo(MontecarloArgs),
    /// Treatment regressions on future untreated outcomes.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model config (TOML); overrides nothing by itself.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model to simulate when no config is given.
    #[arg(long, default_value = "M1")]
    model: ModelId,
    /// Number of subjects.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn resolve(&self) -> CliResult<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => ModelConfig::load(p)?,
            None => ModelConfig::for_model(self.model),
        };
        if let Some(n) = self.n {
            cfg.n_subjects = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Panel CSV destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the untreated outcome at each visit to this CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write one subject's full simulated path to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Subject whose path `--trace` writes.
    #[arg(long, default_value_t = 0)]
    trace_subject: u64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EstimatorChoice {
    Naive,
    Modified,
    ControllingFuture,
    All,
}

impl EstimatorChoice {
    fn kinds(self) -> Vec<EstimatorKind> {
        match self {
            Self::Naive => vec![EstimatorKind::Naive],
            Self::Modified => vec![EstimatorKind::Modified],
            Self::ControllingFuture => vec![EstimatorKind::ControllingFuture],
            Self::All => EstimatorKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Layout {
    /// Lagged treatment and outcome plus current outcome and covariates.
    History,
    /// Baseline and current covariates without lags.
    Current,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    estimator: EstimatorChoice,
    #[arg(long, value_enum, default_value = "history")]
    layout: Layout,
    /// Accept exposure that starts above zero or grows faster than the visit spacing.
    #[arg(long)]
    relaxed: bool,
    #[arg(long, default_value = "id")]
    id_col: String,
    #[arg(long, default_value = "visit")]
    visit_col: String,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value = "a")]
    a_col: String,
    #[arg(long, default_value = "cum_a")]
    cum_a_col: String,
    /// Report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MontecarloArgs {
    /// Study config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Report destination; overrides the config (stdout when neither is set).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    /// Subjects per replication; overrides the config.
    #[arg(long)]
    n: Option<usize>,
    /// Worker threads (default: CTSNM_WORKERS, else all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Also write per-replication estimates as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Treatment visit.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Outcome visit.
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Use this panel with putative untreated outcomes at `--psi` instead of simulating.
    #[arg(long, requires = "psi")]
    panel: Option<PathBuf>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    relaxed: bool,
    /// TOML destination for both tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = args.model.resolve()?;
    let (panel, y0) = simulate_panel(&cfg, args.model.seed)?;
    let mut buf = Vec::new();
    write_panel(&panel, &mut buf)?;
    emit(std::str::from_utf8(&buf)?, args.out.as_deref())?;
    if let Some(path) = &args.truth {
        let mut text = String::from("id,visit,y0\n");
        for (s, row) in panel.subjects.iter().zip(&y0) {
            for (k, v) in row.iter().enumerate() {
                text.push_str(&format!("{},{},{}\n", s.id, k, v));
            }
        }
        std::fs::write(path, text)?;
    }
    if let Some(path) = &args.trace {
        let p = generate_subject(&cfg, RngStream::new(args.model.seed, args.trace_subject))?;
        let mut text = String::from("t,y0,y,a,cum_a");
        text.push_str(if p.l_minus.is_some() { ",l\n" } else { "\n" });
        for i in 0..p.grid.len() {
            text.push_str(&format!("{},{},{},{},{}", p.grid.time(i), p.y0[i], p.y[i], p.a[i], p.cum_a[i]));
            if let Some(l) = &p.l_minus {
                text.push_str(&format!(",{}", l[i]));
            }
            text.push('\n');
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EstimateReport {
    panel: String,
    n_subjects: usize,
    visits: usize,
    layout: &'static str,
    estimates: Vec<EstimateResult>,
}

fn estimate(args: EstimateArgs) -> CliResult<()> {
    let schema = PanelSchema {
        id: args.id_col,
        visit: args.visit_col,
        y: args.y_col,
        a: args.a_col,
        cum_a: args.cum_a_col,
        rules: if args.relaxed { PanelRules::relaxed() } else { PanelRules::default() },
        ..PanelSchema::default()
    };
    let panel = read_panel_csv(&args.panel, &schema)
        .map_err(|e| format!("{}: {e}", args.panel.display()))?;
    let with_l = !panel.l_names.is_empty();
    let mut estimates = Vec::new();
    for kind in args.estimator.kinds() {
        let spec = match args.layout {
            Layout::History => EstimatorSpec::history(kind, with_l),
            Layout::Current => EstimatorSpec::current(kind),
        };
        let res = solve(&panel, &spec, None, &SolverOptions::default())?;
        match res.psi_se() {
            Some(se) if res.converged => eprintln!("{kind:>18}: psi = {:.6} (se {se:.6})", res.psi()),
            _ => eprintln!(
                "{kind:>18}: failed ({})",
                res.message.as_deref().unwrap_or("no standard error")
            ),
        }
        estimates.push(res);
    }
    let report = EstimateReport {
        panel: args.panel.display().to_string(),
        n_subjects: panel.n_subjects(),
        visits: panel.k_max + 1,
        layout: match args.layout {
            Layout::History => "history",
            Layout::Current => "current",
        },
        estimates,
    };
    emit(&toml::to_string(&report)?, args.out.as_deref())
}

fn montecarlo(args: MontecarloArgs) -> CliResult<()> {
    let mut cfg = StudyConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output = Some(out);
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(n) = args.n {
        cfg.model.n_subjects = n;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    let report = run_study(&cfg)?;
    if let Some(path) = &args.csv {
        std::fs::write(path, report.estimates_csv())?;
    }
    let s = &report.summary;
    eprintln!(
        "{} n={} R={} psi={}",
        s.model, s.n_subjects, s.replications, s.psi_true
    );
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for e in &s.estimators {
        eprintln!(
            "{:>18}: mean {} sd {} bias {} coverage {} failed {}",
            e.estimator.to_string(),
            fmt(e.mean_estimate),
            fmt(e.sd_estimates),
            fmt(e.abs_bias),
            fmt(e.coverage),
            e.n_failed
        );
    }
    if cfg.output.is_none() {
        emit(&report.to_toml()?, None)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnosticReport {
    source: String,
    without_future_control: DiagnosticTable,
    with_future_control: DiagnosticTable,
}

fn diagnose(args: DiagnoseArgs) -> CliResult<()> {
    let (panel, y0, source) = match (&args.panel, args.psi) {
        (Some(path), Some(psi)) => {
            let schema = PanelSchema {
                rules: if args.relaxed { PanelRules::relaxed() } else { PanelRules::default() },
                ..PanelSchema::default()
            };
            let panel = read_panel_csv(path, &schema).map_err(|e| format!("{}: {e}", path.display()))?;
            let y0 = panel.putative_untreated(psi);
            (panel, y0, format!("{} at psi = {psi}", path.display()))
        }
        _ => {
            let cfg = args.model.resolve()?;
            let (panel, y0) = simulate_panel(&cfg, args.model.seed)?;
            let source = format!("{} n={} seed={}", cfg.model, cfg.n_subjects, args.model.seed);
            (panel, y0, source)
        }
    };
    let plain = ignorability_diagnostic(&panel, &y0, args.k, args.m, false)?;
    let ctrl = ignorability_diagnostic(&panel, &y0, args.k, args.m, true)?;

    let mut text = format!("treatment at visit {}, untreated outcome at visit {} ({source})\n", args.k, args.m);
    text.push_str(&format!("{:<22}{:>24}{:>24}\n", "", "without next outcome", "with next outcome"));
    let cell = |t: &DiagnosticTable, name: &str| {
        t.coefficient(name)
            .map_or(String::new(), |r| format!("{:.4} (p={:.3e})", r.estimate, r.p_value))
    };
    for (label, name) in [("next untreated outcome", "y0_next"), ("untreated outcome at m", "y0_m")] {
        text.push_str(&format!("{label:<22}{:>24}{:>24}\n", cell(&plain, name), cell(&ctrl, name)));
    }
    for t in [&plain, &ctrl] {
        if t.separated || !t.converged {
            text.push_str("warning: a regression did not converge cleanly (separation)\n");
        }
    }
    print!("{text}");
    if let Some(out) = &args.out {
        let report = DiagnosticReport {
            source,
            without_future_control: plain,
            with_future_control: ctrl,
        };
        std::fs::write(out, toml::to_string(&report)?)?;
    }
    Ok(())
}
