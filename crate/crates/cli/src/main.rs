use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use detsched::combinability::{
    brute_force_conflicts, cfk_solution_space, csk_solution_spaces, gcd_periods, hyperperiod,
    pairwise_conflict_class, predict_existence, verify_noncollision_k, ConflictSolutionSpace,
};
use detsched::experiment::{run_experiment, write_flows_csv, write_summary_csv, ExperimentRow, ExperimentSpec};
use detsched::flow::{EdgeSpec, Flow, FlowSet, Ticks};
use detsched::nds::{compute_static_schedule, emit_gcl, Limits, QueueAssignment, ScheduleMode};
use detsched::sim::{run_simulation, Policy, ScenarioFile};
use detsched::Error;

/// Deterministic scheduling of time-sensitive traffic on one egress port.
#[derive(Parser)]
#[command(name = "detsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report divisibility, unavoidable conflicts and conflict solution spaces.
    Analyze {
        #[arg(long)]
        input: PathBuf,
    },
    /// Enumerate colliding packets over one hyperperiod at the arrival offsets.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = Limits::default().hyperperiod_cap)]
        hyperperiod_cap: Ticks,
    },
    /// Synthesise a schedule and its gate control list.
    Schedule {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Run one scenario file through the port simulator.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's best-effort policy.
        #[arg(long)]
        policy: Option<Policy>,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Run the seeded policy comparison over the standard workloads.
    Experiment {
        /// Experiment specification (JSON); omitted fields take defaults.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Runs this single seed instead of the specified list.
        #[arg(long)]
        seed: Option<u64>,
        /// Restricts the comparison to these policies.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<Policy>,
        /// Best-effort load as a fraction of the link rate.
        #[arg(long)]
        be_load: Option<f64>,
        #[command(flatten)]
        limits: LimitArgs,
    },
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value_t = 10.0)]
    timeout_s: f64,
    #[arg(long, default_value_t = Limits::default().hyperperiod_cap)]
    hyperperiod_cap: Ticks,
}

impl LimitArgs {
    fn limits(&self) -> anyhow::Result<Limits> {
        let timeout = Duration::try_from_secs_f64(self.timeout_s)
            .ok()
            .filter(|d| !d.is_zero())
            .context("--timeout-s must be a positive number of seconds")?;
        Ok(Limits {
            hyperperiod_cap: self.hyperperiod_cap,
            timeout,
        })
    }
}

/// Failures that are a property of the input flows rather than of its form.
#[derive(Debug)]
struct Unschedulable(String);

impl std::fmt::Display for Unschedulable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unschedulable: {}", self.0)
    }
}

impl std::error::Error for Unschedulable {}

fn domain(e: Error) -> anyhow::Error {
    match e {
        Error::Timeout { .. }
        | Error::HyperperiodOverflow { .. }
        | Error::RelaxationExhausted { .. }
        | Error::PinnedCollision { .. } => Unschedulable(e.to_string()).into(),
        other => other.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Unschedulable>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Analyze { input } => analyze(&input),
        Command::Predict {
            input,
            out_dir,
            hyperperiod_cap,
        } => predict(&input, &out_dir, hyperperiod_cap),
        Command::Schedule { input, out_dir, limits } => schedule(&input, &out_dir, &limits.limits()?),
        Command::Simulate {
            input,
            out_dir,
            seed,
            policy,
            limits,
        } => simulate(&input, &out_dir, seed, policy, &limits.limits()?),
        Command::Experiment {
            input,
            out_dir,
            seed,
            policy,
            be_load,
            limits,
        } => {
            let mut spec = match &input {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => ExperimentSpec::default(),
            };
            if let Some(s) = seed {
                spec.seeds = vec![s];
            }
            if !policy.is_empty() {
                spec.policies = policy;
            }
            if let Some(l) = be_load {
                if !(0.0..=1.0).contains(&l) {
                    bail!("--be-load must lie in [0, 1]");
                }
                spec.be_load = l;
            }
            experiment(&spec, &out_dir, &limits.limits()?)
        }
    }
}

fn load_flowset(path: &Path) -> anyhow::Result<FlowSet> {
    FlowSet::load(path).with_context(|| format!("loading flow set {}", path.display()))
}

/// The time-sensitive flows of a set; there must be at least one.
fn ts_flows(set: &FlowSet, path: &Path) -> anyhow::Result<Vec<Flow>> {
    let flows = set.time_sensitive();
    if flows.is_empty() {
        bail!("{} contains no time-sensitive flows", path.display());
    }
    Ok(flows)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn tuple(v: &[i128]) -> String {
    let parts: Vec<String> = v.iter().map(i128::to_string).collect();
    format!("({})", parts.join(","))
}

fn print_space(label: &str, space: &ConflictSolutionSpace) -> anyhow::Result<()> {
    let times = space.start_times(0)?;
    println!(
        "  {label}: base {} step {} overlaps {} first starts {}",
        tuple(&space.base),
        tuple(&space.step),
        tuple(&space.overlaps),
        tuple(&times)
    );
    Ok(())
}

fn analyze(input: &Path) -> anyhow::Result<()> {
    let set = load_flowset(input)?;
    let flows = ts_flows(&set, input)?;
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_, _>>()?;
    let offsets: Vec<Ticks> = flows.iter().map(|f| f.arrival).collect();
    let g = gcd_periods(&periods)?;
    let total: u128 = flows.iter().map(|f| u128::from(f.service_time)).sum();

    println!("time-sensitive flows: {}", flows.len());
    println!("g = {g} ns");
    println!("sum of service times = {total} ns");
    match hyperperiod(&periods) {
        Ok(h) => println!("hyperperiod = {h} ns"),
        Err(e) => println!("hyperperiod: {e}"),
    }
    if g > 1 && total < u128::from(g) {
        println!("ideal path available: g={g} ns, Σ τ < g");
    } else {
        println!("ideal path unavailable: needs g > 1 and Σ τ < g");
    }

    if flows.len() >= 2 {
        let prediction = predict_existence(&flows)?;
        let yes = |b: bool| if b { "certain" } else { "not certain" };
        println!("CFK {}", yes(prediction.cfk_certain));
        println!("CSK {}", yes(prediction.csk_certain));
    }

    println!("pairwise conflicts at arrival offsets:");
    let mut pair_conflicts = 0;
    for i in 0..flows.len() {
        for j in i + 1..flows.len() {
            let c = pairwise_conflict_class(&flows[i], &flows[j], offsets[i], offsets[j])?;
            if let Some(kind) = c.kind {
                pair_conflicts += 1;
                let at = c
                    .witness
                    .map(|w| format!(" first at {} ns, packets {:?}", w.time, w.packets))
                    .unwrap_or_default();
                println!("  flows {} and {}: {}{at}", flows[i].id, flows[j].id, kind.label());
            }
        }
    }
    if pair_conflicts == 0 {
        println!("  none");
    }
    let spaced = verify_noncollision_k(&flows, &offsets)?;
    println!(
        "common-divisor spacing at arrival offsets: {}",
        if spaced { "holds (collision-free)" } else { "does not hold" }
    );

    if flows.len() >= 2 && !spaced {
        println!("solution spaces at arrival offsets:");
        match cfk_solution_space(&flows, &offsets) {
            Ok(space) => print_space("CFK", &space)?,
            Err(Error::NoSolution) => println!("  CFK: none"),
            Err(e) => println!("  CFK: {e}"),
        }
        match csk_solution_spaces(&flows, &offsets) {
            Ok(spaces) => {
                println!("  CSK spaces: {}", spaces.len());
                for s in spaces.iter().take(5) {
                    print_space("CSK", s)?;
                }
            }
            Err(Error::InvalidSpec(_)) => println!("  CSK: too many overlap geometries to enumerate"),
            Err(e) => println!("  CSK: {e}"),
        }
    }
    Ok(())
}

fn predict(input: &Path, out_dir: &Path, cap: Ticks) -> anyhow::Result<()> {
    let set = load_flowset(input)?;
    let flows = ts_flows(&set, input)?;
    let periods: Vec<Ticks> = flows.iter().map(Flow::period).collect::<Result<_, _>>()?;
    let offsets: Vec<Ticks> = flows.iter().map(|f| f.arrival).collect();
    let h = hyperperiod(&periods)?;
    if h > u128::from(cap) {
        bail!("hyperperiod {h} ns exceeds the cap of {cap} ns");
    }
    if flows.len() >= 2 {
        let p = predict_existence(&flows)?;
        println!("CFK certain: {}, CSK certain: {}", p.cfk_certain, p.csk_certain);
    }
    let conflicts = brute_force_conflicts(&flows, &offsets, h as Ticks)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_text(out_dir, "conflicts.json", &conflicts.to_json()?)?;
    conflicts.write_csv(create(out_dir, "conflicts.csv")?)?;
    println!("{} conflicting packet pairs over {h} ns", conflicts.len());
    Ok(())
}

fn schedule(input: &Path, out_dir: &Path, limits: &Limits) -> anyhow::Result<()> {
    let set = load_flowset(input)?;
    ts_flows(&set, input)?;
    let (schedule, verdict) = compute_static_schedule(&set.flows, &set.link, limits).map_err(domain)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_text(out_dir, "verdict.json", &verdict.to_json()?)?;
    let Some(schedule) = schedule else {
        let first = verdict
            .violations
            .first()
            .map(|v| format!("{v:?}"))
            .unwrap_or_else(|| "no offsets found".into());
        return Err(Unschedulable(first).into());
    };
    let assignment = QueueAssignment::by_period(&set.flows, set.link.queue_count)?;
    let gcl = emit_gcl(&schedule, &assignment)?;
    write_text(out_dir, "gcl.json", &gcl.to_json()?)?;
    gcl.write_csv(create(out_dir, "gcl.csv")?)?;
    schedule.write_csv(create(out_dir, "schedule.csv")?)?;
    let mode = match schedule.mode {
        ScheduleMode::IdealOffsets => "fixed offsets",
        ScheduleMode::PerPacketTable => "per-packet table",
    };
    println!("schedulable ({mode}), GCL cycle {} ns, {} rows", gcl.cycle, gcl.rows.len());
    Ok(())
}

fn simulate(
    input: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    policy: Option<Policy>,
    limits: &Limits,
) -> anyhow::Result<()> {
    let mut file = ScenarioFile::load(input).with_context(|| format!("loading scenario {}", input.display()))?;
    if let Some(s) = seed {
        file.seed = s;
    }
    if let Some(p) = policy {
        file.policy = p;
    }
    let base = input.parent().unwrap_or(Path::new("."));
    let Some(scenario) = file.resolve(base, limits).map_err(domain)? else {
        return Err(Unschedulable("no schedule for the time-sensitive flows".into()).into());
    };
    let (log, report) = run_simulation(&scenario)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    log.write_csv(create(out_dir, "events.csv")?)?;
    write_text(out_dir, "metrics.json", &report.to_json()?)?;
    report.write_csv(create(out_dir, "metrics.csv")?)?;
    println!(
        "{}: utilization {:.4}, transmitted {}, dropped {}, queued {}, misses {}",
        scenario.policy, report.utilization, report.transmitted, report.dropped, report.queued, report.misses
    );
    Ok(())
}

fn experiment(spec: &ExperimentSpec, out_dir: &Path, limits: &Limits) -> anyhow::Result<()> {
    let rows = run_experiment(spec, EdgeSpec::gigabit(), limits)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_summary_csv(&rows, create(out_dir, "summary.csv")?)?;
    write_flows_csv(&rows, create(out_dir, "flows.csv")?)?;
    println!("count  policy            runs  schedulable  utilization  drops");
    for &count in &spec.counts {
        for &policy in &spec.policies {
            let group: Vec<&ExperimentRow> = rows.iter().filter(|r| r.count == count && r.policy == policy).collect();
            let ok: Vec<&&ExperimentRow> = group.iter().filter(|r| r.schedulable).collect();
            let n = ok.len().max(1) as f64;
            println!(
                "{count:>5}  {:<16}  {:>4}  {:>11}  {:>11.5}  {:>5.1}",
                policy.name(),
                group.len(),
                ok.len(),
                ok.iter().map(|r| r.utilization).sum::<f64>() / n,
                ok.iter().map(|r| r.drops as f64).sum::<f64>() / n,
            );
        }
    }
    println!("{} rows written to {}", rows.len(), out_dir.display());
    Ok(())
}
