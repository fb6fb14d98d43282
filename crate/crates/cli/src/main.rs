mod config;
mod output;
mod presets;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use matchtrial::design::{approx_se_stage1, futility_probability, implied_pi_t};
use matchtrial::harness::{estimator_study, find_fixed_n, futility_table, FixedNResult, FutilityGrid};
use matchtrial::{run_scenario, CpTable, ScenarioConfig, StudyDesign};

use config::{ConfigFile, Overrides, Source};
use output::{RunManifest, CP_FILE, MANIFEST_FILE, RESULTS_FILE};

#[derive(Parser)]
#[command(name = "matchtrial", version, about = "Simulate and plan adaptive single-arm trials with matched historical controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every scenario of a configuration.
    Simulate(RunArgs),
    /// Print the analytical futility table and the conditional power lookup.
    Plan(PlanArgs),
    /// Bias, RMSE and CI coverage of the estimators over a grid of effects.
    Estimators(RunArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Input {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario file; see `matchtrial presets`.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Write CSV and manifest here instead of printing CSV to stdout.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Input,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long, conflicts_with = "paper_scale")]
    replications: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// 100,000 replications per scenario.
    #[arg(long)]
    paper_scale: bool,
    /// Skip the fixed-design sample size search even if configured.
    #[arg(long)]
    no_fixed_n: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    source: Input,
    /// Matched stage I patients.
    #[arg(long, value_delimiter = ',')]
    n_eff: Option<Vec<f64>>,
    /// Controls per matched patient.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta_stop: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pi_t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pi_c: Option<Vec<f64>>,
    /// Stage I size of the design behind the conditional power lookup.
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n_controls: Option<usize>,
}

/// Exit code 1: the input was rejected. Exit code 2: the run failed.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Estimators(a) => estimators(&a),
        Command::Plan(a) => plan(&a),
        Command::Presets => {
            for n in presets::names() {
                println!("{n}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

struct Run {
    file: ConfigFile,
    source: Source,
    overrides: Overrides,
    started: Instant,
    started_unix: u64,
}

fn start(args: &RunArgs) -> Result<Run, Failure> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Failure::Validation(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring worker threads")
            .runtime()?;
    }
    if args.replications == Some(0) {
        return Err(Failure::Validation(anyhow!("--replications must be at least 1")));
    }
    let (file, source) = config::load(args.source.config.as_deref(), args.source.preset.as_deref()).invalid()?;
    Ok(Run {
        file,
        source,
        overrides: Overrides {
            replications: args.replications,
            base_seed: args.base_seed,
            paper_scale: args.paper_scale,
        },
        started: Instant::now(),
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    })
}

impl Run {
    fn manifest(&self, command: &str, threads: Option<usize>, outputs: &[&str], scenarios: Vec<ScenarioConfig>) -> RunManifest {
        RunManifest {
            schema_version: output::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: self.source.to_string(),
            base_seed: self.file.base_seed(&self.overrides),
            replications: self.file.replications(&self.overrides),
            threads,
            started_unix_seconds: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            fixed_n: None,
            estimators: None,
            grid: None,
            scenarios,
        }
    }
}

fn emit(dir: Option<&Path>, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    match dir {
        Some(dir) => {
            let path = dir.join(file);
            let f = std::fs::File::create(&path)
                .with_context(|| format!("cannot write {}", path.display()))
                .runtime()?;
            output::write_csv(f, header, rows)
                .with_context(|| format!("cannot write {}", path.display()))
                .runtime()
        }
        None => output::write_csv(std::io::stdout().lock(), header, rows).context("writing to stdout").runtime(),
    }
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<(), Failure> {
    let text = m.to_toml().context("serializing manifest").runtime()?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display())).runtime()
}

fn prepare(dir: Option<&Path>) -> Result<(), Failure> {
    if let Some(d) = dir {
        output::prepare_dir(d).with_context(|| format!("cannot create {}", d.display())).runtime()?;
    }
    Ok(())
}

/// Fixed-design search at the planning effect. Scenarios that differ only
/// in stage I size or recalculation mode share one search.
fn fixed_n_for(
    cfg: &ScenarioConfig,
    spec: &config::FixedNSpec,
    cache: &mut Vec<(String, FixedNResult)>,
) -> Result<FixedNResult, Failure> {
    let mut c = cfg.clone();
    c.model.theta = c.design.theta_plan;
    let key = format!(
        "{:?}|{}|{}|{}|{}|{:?}|{:?}|{}|{}",
        c.model, c.n_controls, c.design.tau, c.design.m_max, c.design.alpha, c.options, c.pool_mode, c.base_seed, c.replications
    );
    if let Some((_, r)) = cache.iter().find(|(k, _)| *k == key) {
        return Ok(*r);
    }
    let target = spec.target_power.unwrap_or(1.0 - c.design.beta);
    let r = find_fixed_n(&c, target, spec.n_min, spec.n_max)
        .with_context(|| format!("fixed-design search for `{}`", cfg.name))
        .runtime()?;
    cache.push((key, r));
    Ok(r)
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let run = start(args)?;
    let scenarios = run.file.resolve(&run.overrides).invalid()?;
    let fixed_spec = run.file.fixed_n.filter(|_| !args.no_fixed_n);
    let dir = args.source.output_dir.as_deref();
    prepare(dir)?;

    let mut rows = Vec::with_capacity(scenarios.len());
    let mut cache = Vec::new();
    let total = scenarios.len();
    for (i, cfg) in scenarios.iter().enumerate() {
        let t = Instant::now();
        let stats = run_scenario(cfg).with_context(|| format!("scenario `{}`", cfg.name)).runtime()?;
        let fixed = match (&fixed_spec, cfg.study) {
            (Some(spec), StudyDesign::Adaptive) => Some(fixed_n_for(cfg, spec, &mut cache)?),
            _ => None,
        };
        eprintln!("[{}/{total}] {} ({:.1}s)", i + 1, cfg.name, t.elapsed().as_secs_f64());
        rows.push(output::result_record(cfg, &stats, fixed.as_ref()));
    }
    emit(dir, RESULTS_FILE, output::RESULT_COLUMNS, &rows)?;
    if let Some(dir) = dir {
        let mut m = run.manifest("simulate", args.threads, &[RESULTS_FILE], scenarios);
        m.fixed_n = fixed_spec;
        write_manifest(dir, &m)?;
    }
    Ok(())
}

fn estimators(args: &RunArgs) -> Result<(), Failure> {
    let run = start(args)?;
    let spec = run
        .file
        .estimators
        .clone()
        .ok_or_else(|| anyhow!("{}: missing [estimators] section with `thetas`", run.source))
        .invalid()?;
    if spec.thetas.is_empty() {
        return Err(Failure::Validation(anyhow!("{}: estimators.thetas must not be empty", run.source)));
    }
    let scenarios = run.file.resolve(&run.overrides).invalid()?;
    let [cfg] = scenarios.as_slice() else {
        return Err(Failure::Validation(anyhow!(
            "{}: the estimator study needs exactly one scenario, got {}",
            run.source,
            scenarios.len()
        )));
    };
    let dir = args.source.output_dir.as_deref();
    prepare(dir)?;
    let table = estimator_study(cfg, &spec.thetas).invalid()?;
    let rows: Vec<_> = table.iter().map(output::estimator_record).collect();
    emit(dir, RESULTS_FILE, output::ESTIMATOR_COLUMNS, &rows)?;
    if let Some(dir) = dir {
        let mut m = run.manifest("estimators", args.threads, &[RESULTS_FILE], scenarios.clone());
        m.estimators = Some(spec);
        write_manifest(dir, &m)?;
    }
    Ok(())
}

fn plan(args: &PlanArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let loaded = match (&args.source.config, &args.source.preset) {
        (None, None) => None,
        (c, p) => Some(config::load(c.as_deref(), p.as_deref()).invalid()?),
    };
    let spec = loaded.as_ref().and_then(|(f, _)| f.plan.clone());
    let mut grid = spec.as_ref().map(|s| s.grid.clone()).unwrap_or_else(FutilityGrid::default);
    for (axis, flag) in [
        (&mut grid.n_eff, &args.n_eff),
        (&mut grid.m, &args.m),
        (&mut grid.theta, &args.theta),
        (&mut grid.theta_stop, &args.theta_stop),
        (&mut grid.pi_t, &args.pi_t),
        (&mut grid.pi_c, &args.pi_c),
    ] {
        if let Some(v) = flag {
            *axis = v.clone();
        }
    }
    let mut plan_spec = spec.unwrap_or(config::PlanSpec {
        grid: FutilityGrid::default(),
        n1: None,
        n_controls: None,
        max_total: None,
        design: toml::Table::new(),
    });
    plan_spec.n1 = args.n1.or(plan_spec.n1);
    plan_spec.n_controls = args.n_controls.or(plan_spec.n_controls);
    let design = plan_spec.design().invalid()?;
    design.validate().invalid()?;

    let table = futility_table(&grid).invalid()?;
    let rows: Vec<_> = table.iter().map(output::futility_record).collect();

    let cp = CpTable::plan(&design);
    let pi_c = design.planning_pi_c;
    let pi_t = implied_pi_t(design.theta_plan, pi_c);
    let n_eff = design.n1 as f64 * design.planning_match_rate;
    let cp_rows: Vec<Vec<String>> = cp
        .entries()
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let m = (k + 1) as f64;
            let se = approx_se_stage1(n_eff, m, pi_t, pi_c);
            let (_, p_continue) = futility_probability(design.theta_plan, design.theta_stop, se);
            vec![(k + 1).to_string(), output::fmt_f64(p_continue), output::fmt_f64(c)]
        })
        .collect();

    let dir = args.source.output_dir.as_deref();
    prepare(dir)?;
    emit(dir, RESULTS_FILE, output::FUTILITY_COLUMNS, &rows)?;
    if dir.is_none() {
        println!();
        std::io::stdout().flush().ok();
    }
    emit(dir, CP_FILE, output::CP_COLUMNS, &cp_rows)?;
    if let Some(dir) = dir {
        let source = loaded.map(|(_, s)| s.to_string()).unwrap_or_else(|| "flags".into());
        let m = RunManifest {
            schema_version: output::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: "plan".into(),
            config: source,
            base_seed: 0,
            replications: 0,
            threads: None,
            started_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            outputs: vec![RESULTS_FILE.into(), CP_FILE.into()],
            fixed_n: None,
            estimators: None,
            grid: Some(grid),
            scenarios: Vec::new(),
        };
        write_manifest(dir, &m)?;
    }
    Ok(())
}
