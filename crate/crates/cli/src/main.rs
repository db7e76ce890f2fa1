mod svg;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use hfl_core::balance::{edge_histograms, l1_to_global, ReferenceKind};
use hfl_core::eara::{Assignment, AssignmentFile, EaraConfig};
use hfl_core::experiment::{
    distance_rows, distance_sweep, parse_participation, participation_rows, participation_sweep, skewed_training_config,
    summarize, tail_mean_accuracy, write_sweep_csv, ReportRow, Strategy, SweepRow, TaskSpec,
};
use hfl_core::fixtures::{table2_scenario, table3_scenario};
use hfl_core::flsim::{centralized_train, hierarchical_train, read_records, RoundRecord, TrainConfig, TrainTrace};
use hfl_core::scenario::Scenario;
use hfl_core::Error;

use svg::{line_chart, Chart, Series};

#[derive(Parser)]
#[command(name = "hfl", version, about = "Class-balanced hierarchical federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign users to edges and report per-edge class balance.
    Assign(AssignArgs),
    /// Train hierarchical models (and optionally a centralized benchmark).
    Train(TrainArgs),
    /// Rerun strategies over a range of one parameter.
    Sweep(SweepArgs),
    /// Summarize trace CSVs against a baseline.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Uniform,
    Global,
}

#[derive(Args)]
struct ScenarioOpts {
    /// Scenario JSON, or `fixture:table2` / `fixture:table3[:DIVISOR]`.
    #[arg(long)]
    scenario: String,
    /// Output directory.
    #[arg(long, default_value = "hfl-out")]
    out: PathBuf,
    /// Dual-connectivity threshold ν.
    #[arg(long, default_value_t = 0.25)]
    nu: f64,
    /// Reference bandwidth in Hz for the link budgets.
    #[arg(long)]
    bf: Option<f64>,
    /// Skip the local-search refinement of the rounded assignment.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, value_enum, default_value = "uniform")]
    reference: Reference,
}

impl ScenarioOpts {
    fn eara(&self) -> EaraConfig {
        EaraConfig {
            dual_threshold: self.nu,
            reference_bandwidth: self.bf,
            reference: self.reference(),
            refine: !self.no_refine,
            ..EaraConfig::default()
        }
    }

    fn reference(&self) -> ReferenceKind {
        match self.reference {
            Reference::Uniform => ReferenceKind::Uniform,
            Reference::Global => ReferenceKind::Global,
        }
    }
}

#[derive(Args)]
struct TrainOpts {
    /// Training configuration JSON; defaults to the skewed-fixture settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic task JSON.
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Parameter count used for traffic accounting.
    #[arg(long)]
    traffic_params: Option<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct AssignArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "eara-sca", value_parser = parse_strategy)]
    strategy: Vec<Strategy>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, value_delimiter = ',', default_value = "eara-sca,dba", value_parser = parse_strategy)]
    strategy: Vec<Strategy>,
    /// Train this assignment file instead of computing one.
    #[arg(long, conflicts_with = "strategy")]
    assignment: Option<PathBuf>,
    /// Also train the centralized benchmark.
    #[arg(long)]
    centralized: bool,
    /// Accuracy target; defaults to 95% of the centralized plateau.
    #[arg(long)]
    target: Option<f64>,
    /// Participation: a fraction, `scd` or `dcd`.
    #[arg(long)]
    upp: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, value_delimiter = ',', default_value = "eara-sca,eara-dca,dba", value_parser = parse_strategy)]
    strategy: Vec<Strategy>,
    /// `distance_scale=v1,v2,...` or `upp=v1,v2,...`.
    #[arg(long)]
    sweep: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace CSVs; each is named by its file stem.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Trace the reductions are measured against; `dba` when present.
    #[arg(long)]
    baseline: Option<String>,
    /// Accuracy target; defaults to 95% of a `centralized` trace's plateau.
    #[arg(long)]
    target: Option<f64>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.trim().parse().map_err(|e: Error| e.to_string())
}

/// Exit code 1: a budget or target could not be met.
/// Exit code 2: bad input or IO.
/// Exit code 3: an internal invariant broke.
enum Failure {
    Unmet(String),
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InfeasiblePartition { .. }
            | Error::DeadlineInfeasible(_)
            | Error::StructurallyInfeasibleUser { .. } => Failure::Unmet(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn load_scenario(spec: &str) -> Result<Scenario, Failure> {
    if let Some(name) = spec.strip_prefix("fixture:") {
        let mut parts = name.split(':');
        return match (parts.next(), parts.next()) {
            (Some("table2"), None) => Ok(table2_scenario()),
            (Some("table3"), div) => {
                let div = div.map_or(Ok(1), str::parse).map_err(|_| Failure::Usage(format!("bad divisor in `{spec}`")))?;
                if div == 0 {
                    return Err(Failure::Usage("fixture divisor must be positive".into()));
                }
                Ok(table3_scenario(div))
            }
            _ => Err(Failure::Usage(format!("unknown fixture `{spec}`"))),
        };
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(Failure::Usage(format!("scenario file {} does not exist", path.display())));
    }
    Scenario::from_path(path).map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn prepare_out(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.filter(|x| x.is_finite()).map_or("-".into(), |x| format!("{x:.digits$}"))
}

fn checked_assign(st: Strategy, s: &Scenario, eara: &EaraConfig) -> Result<Assignment, Failure> {
    let a = st.assign(s, eara)?;
    a.check(s).map_err(|e| Failure::Internal(format!("{st} produced an invalid assignment: {e}")))?;
    for d in &a.diagnostics {
        warn!("{st}: {d}");
    }
    Ok(a)
}

fn cmd_assign(args: &AssignArgs) -> Outcome {
    let opts = &args.scenario;
    let s = load_scenario(&opts.scenario)?;
    let eara = opts.eara();
    eara.validate()?;
    prepare_out(&opts.out)?;
    let users = s.user_histograms();
    let global: Vec<f64> = s.global_histogram().as_f64();
    let mut unserved = 0;
    for &st in &args.strategy {
        let a = checked_assign(st, &s, &eara)?;
        let report = a.kld_report(&s, opts.reference())?;
        let file: AssignmentFile = a.to_file(&s, opts.reference())?;
        let json = serde_json::to_string_pretty(&file).map_err(|e| Failure::Internal(e.to_string()))?;
        write_file(&opts.out.join(format!("assignment-{st}.json")), json + "\n")?;

        let hist = edge_histograms(&a.lambda, &users);
        let mut csv = String::from("edge,users,samples,kld_nats,l1_to_global,bandwidth_hz,budget_hz\n");
        println!(
            "{st}: total KLD {:.6} nats, {}/{} users served, {} dual",
            report.total,
            a.num_served(),
            s.num_users(),
            a.dual_users().len()
        );
        println!("{:>5} {:>6} {:>9} {:>10} {:>10} {:>12}", "edge", "users", "samples", "kld", "l1", "bandwidth");
        for j in 0..s.num_edges() {
            let samples: f64 = hist[j].iter().sum();
            let l1 = l1_to_global(&hist[j], &global).ok();
            let bw: f64 = a.bandwidth.iter().map(|r| r[j]).sum();
            let n_users = a.lambda.users_of(j).len();
            let kld = (!report.empty_edges.contains(&j)).then_some(report.per_edge[j]);
            println!(
                "{j:>5} {n_users:>6} {samples:>9} {:>10} {:>10} {bw:>12.0}",
                fmt_opt(kld, 6),
                fmt_opt(l1, 6)
            );
            csv.push_str(&format!(
                "{j},{n_users},{samples},{},{},{bw},{}\n",
                kld.map_or(String::new(), |v| v.to_string()),
                l1.map_or(String::new(), |v| v.to_string()),
                s.edges[j].bandwidth_budget
            ));
        }
        write_file(&opts.out.join(format!("edges-{st}.csv")), csv)?;
        unserved += s.num_users() - a.num_served();
    }
    if unserved > 0 {
        return Err(Failure::Unmet(format!("{unserved} user links could not be served")));
    }
    Ok(())
}

fn train_setup(opts: &TrainOpts) -> Result<(TrainConfig, TaskSpec), Failure> {
    let mut config = match &opts.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => skewed_training_config(),
    };
    if let Some(r) = opts.rounds {
        config.max_central_rounds = r;
    }
    if opts.traffic_params.is_some() {
        config.traffic_param_count = opts.traffic_params;
    }
    config.seed = opts.seed;
    config.validate()?;
    let task = match &opts.task {
        Some(p) => read_json::<TaskSpec>(p)?,
        None => TaskSpec::default(),
    };
    Ok((config, task.with_seed(opts.seed)))
}

fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::Internal(e.to_string()))
}

fn accuracy_series(name: &str, records: &[RoundRecord]) -> Series {
    Series {
        name: name.into(),
        points: records.iter().map(|r| (r.round as f64, r.accuracy)).collect(),
    }
}

fn print_report(rows: &[ReportRow], baseline: &str, target: f64) {
    println!("target accuracy {target:.4}, baseline {baseline}");
    println!(
        "{:<16} {:>8} {:>9} {:>12} {:>14} {:>14} {:>10}",
        "curve", "rounds", "final", "bytes/round", "bytes@target", "bytes total", "reduction"
    );
    for r in rows {
        println!(
            "{:<16} {:>8} {:>9.4} {:>12.0} {:>14} {:>14.0} {:>10}",
            r.name,
            r.rounds_to_target.map_or("-".into(), |x| x.to_string()),
            r.final_accuracy,
            r.bytes_per_round,
            fmt_opt(r.bytes_to_target, 0),
            r.total_bytes_up,
            r.round_reduction
                .map_or("n/c".into(), |x| format!("{:.1}%", 100.0 * x))
        );
    }
}

fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("name,rounds_to_target,final_accuracy,bytes_per_round,bytes_to_target,total_bytes_up,round_reduction\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            r.rounds_to_target.map_or(String::new(), |x| x.to_string()),
            r.final_accuracy,
            r.bytes_per_round,
            opt(r.bytes_to_target),
            r.total_bytes_up,
            opt(r.round_reduction)
        ));
    }
    out
}

fn cmd_train(args: &TrainArgs) -> Outcome {
    let opts = &args.scenario;
    let s = load_scenario(&opts.scenario)?;
    let eara = opts.eara();
    eara.validate()?;
    let (mut config, task_spec) = train_setup(&args.train)?;
    config.reference = opts.reference();
    if let Some(u) = &args.upp {
        config = parse_participation(u, s.num_classes)?.apply(&config);
    }
    prepare_out(&opts.out)?;
    let task = task_spec.build(&s)?;

    let runs: Vec<(String, Assignment)> = match &args.assignment {
        Some(p) => {
            let a = Assignment::from_file(&read_json::<AssignmentFile>(p)?)?;
            a.check(&s).map_err(|e| io_err(p, e))?;
            let name = p.file_stem().map_or("assignment".into(), |x| x.to_string_lossy().into_owned());
            vec![(name, a)]
        }
        None => args
            .strategy
            .iter()
            .map(|&st| Ok((st.label().to_string(), checked_assign(st, &s, &eara)?)))
            .collect::<Result<_, Failure>>()?,
    };

    let pool = worker_pool(args.train.jobs)?;
    let (centralized, traces) = pool.install(|| {
        rayon::join(
            || {
                args.centralized
                    .then(|| centralized_train(&task.pool, &task.test, s.num_classes, s.num_edges(), &config))
                    .transpose()
            },
            || {
                runs.par_iter()
                    .map(|(name, a)| {
                        info!("training {name}");
                        Ok((name.clone(), hierarchical_train(&s, a, &task.shards, &task.test, &config)?))
                    })
                    .collect::<hfl_core::Result<Vec<(String, TrainTrace)>>>()
            },
        )
    });
    let centralized = centralized?;
    let traces = traces?;

    let mut curves: Vec<(String, Vec<RoundRecord>)> = Vec::new();
    for (name, t) in &traces {
        write_file(&opts.out.join(format!("{name}.csv")), t.to_csv_string())?;
        curves.push((name.clone(), t.records.clone()));
    }
    if let Some(c) = &centralized {
        write_file(&opts.out.join("centralized.csv"), c.to_csv_string())?;
    }
    let mut series: Vec<Series> = curves.iter().map(|(n, r)| accuracy_series(n, r)).collect();
    if let Some(c) = &centralized {
        series.push(accuracy_series("centralized", &c.records));
    }
    let chart = Chart {
        title: "Test accuracy",
        x_label: "central round",
        y_label: "accuracy",
        categories: None,
    };
    write_file(&opts.out.join("accuracy.svg"), line_chart(&chart, &series))?;

    let target = args
        .target
        .or_else(|| centralized.as_ref().map(|c| 0.95 * tail_mean_accuracy(&c.records, 5)));
    if let Some(target) = target {
        let baseline = if curves.iter().any(|c| c.0 == "dba") { "dba".to_string() } else { curves[0].0.clone() };
        let rows = summarize(&curves, &baseline, target)?;
        print_report(&rows, &baseline, target);
        let missed: Vec<&str> = rows
            .iter()
            .filter(|r| r.rounds_to_target.is_none())
            .map(|r| r.name.as_str())
            .collect();
        if !missed.is_empty() {
            return Err(Failure::Unmet(format!("target {target:.4} not reached by {}", missed.join(", "))));
        }
    } else {
        for (name, recs) in &curves {
            println!("{name}: final accuracy {:.4}", recs.last().map_or(f64::NAN, |r| r.accuracy));
        }
    }
    Ok(())
}

fn sweep_chart(rows: &[SweepRow], metric: &str, numeric: bool, title: &str, x_label: &str) -> String {
    let mut values: Vec<String> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if !values.contains(&r.value) {
            values.push(r.value.clone());
        }
        if !names.contains(&r.strategy) {
            names.push(r.strategy.clone());
        }
    }
    let series: Vec<Series> = names
        .iter()
        .map(|n| Series {
            name: n.clone(),
            points: rows
                .iter()
                .filter(|r| r.metric == metric && &r.strategy == n)
                .map(|r| {
                    let x = if numeric {
                        r.value.parse().unwrap_or(f64::NAN)
                    } else {
                        values.iter().position(|v| v == &r.value).unwrap_or(0) as f64
                    };
                    (x, r.metric_value)
                })
                .collect(),
        })
        .collect();
    let chart = Chart {
        title,
        x_label,
        y_label: metric,
        categories: (!numeric).then_some(values.as_slice()),
    };
    line_chart(&chart, &series)
}

fn cmd_sweep(args: &SweepArgs) -> Outcome {
    let opts = &args.scenario;
    let (param, values) = args
        .sweep
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("sweep `{}` is not PARAM=v1,v2,...", args.sweep)))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::Usage("sweep needs at least one value".into()));
    }
    if param != "distance_scale" && param != "upp" {
        return Err(Failure::Usage(format!("unknown sweep parameter `{param}` (expected distance_scale or upp)")));
    }
    let s = load_scenario(&opts.scenario)?;
    let eara = opts.eara();
    eara.validate()?;
    prepare_out(&opts.out)?;

    let (rows, svg) = if param == "distance_scale" {
        let scales = values
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Failure::Usage(format!("distance scale `{v}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        let points = distance_sweep(&s, &scales, &args.strategy, &eara, args.train.jobs)?;
        for p in &points {
            let parts: Vec<String> = p.kld.iter().map(|(st, k)| format!("{st} {k:.6}")).collect();
            println!("scale {}: {}", p.scale, parts.join(", "));
        }
        let rows = distance_rows(&points);
        let svg = sweep_chart(&rows, "kld_total", true, "Total KLD vs distance", "distance scale");
        (rows, svg)
    } else {
        let presets = values
            .iter()
            .map(|v| parse_participation(v, s.num_classes))
            .collect::<hfl_core::Result<Vec<_>>>()?;
        let (mut config, task_spec) = train_setup(&args.train)?;
        config.reference = opts.reference();
        let task = task_spec.build(&s)?;
        let mut rows = Vec::new();
        for &st in &args.strategy {
            let a = checked_assign(st, &s, &eara)?;
            let results = participation_sweep(&s, &a, &task, &config, &presets, args.train.jobs)?;
            for (p, t) in &results {
                println!("{st} {}: final accuracy {:.4}", p.label(), t.final_accuracy().unwrap_or(f64::NAN));
            }
            rows.extend(participation_rows(st, &results));
        }
        let svg = sweep_chart(&rows, "final_accuracy", false, "Final accuracy vs participation", "participation");
        (rows, svg)
    };

    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    write_file(&opts.out.join("sweep.csv"), csv)?;
    write_file(&opts.out.join("sweep.svg"), svg)?;
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Outcome {
    let mut curves = Vec::new();
    for p in &args.traces {
        let file = fs::File::open(p).map_err(|e| io_err(p, e))?;
        let recs = read_records(file).map_err(|e| io_err(p, format!("format error: {e}")))?;
        if recs.is_empty() {
            return Err(io_err(p, "trace has no rounds"));
        }
        let name = p.file_stem().map_or_else(|| p.display().to_string(), |x| x.to_string_lossy().into_owned());
        curves.push((name, recs));
    }
    let target = match args.target {
        Some(t) => t,
        None => curves
            .iter()
            .find(|c| c.0 == "centralized")
            .map(|c| 0.95 * tail_mean_accuracy(&c.1, 5))
            .ok_or_else(|| Failure::Usage("no --target given and no `centralized` trace to derive one".into()))?,
    };
    let baseline = match &args.baseline {
        Some(b) => b.clone(),
        None if curves.iter().any(|c| c.0 == "dba") => "dba".into(),
        None => curves[0].0.clone(),
    };
    let rows = summarize(&curves, &baseline, target)?;
    print_report(&rows, &baseline, target);
    if let Some(out) = &args.out {
        write_file(out, report_csv(&rows))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Assign(a) => cmd_assign(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HFL_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = catch_unwind(AssertUnwindSafe(|| run(&cli)))
        .unwrap_or_else(|_| Err(Failure::Internal("unexpected panic".into())));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unmet(m)) => {
            eprintln!("hfl: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("hfl: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("hfl: internal error: {m}");
            ExitCode::from(3)
        }
    }
}
