//! Command-line front end: analyze, transform, run, verify, explain.

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::cfg::dot;
use crate::frontend::{load, TypedProgram};
use crate::harness::{self, check_equivalence, compile, Compiled, Mode, Options, Outcome, RandomChooser};
use crate::pairing::report::{PackageReport, Report};
use crate::pairing::{analyze, explain, Profile};
use crate::rewrite::diff::apply_patch;
use crate::rewrite::transform_source;
use crate::runtime::Config;

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Analysis or verification finished, but rejected everything it looked at.
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "elide", version, about = "Lock elision for .mgo programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report lock/unlock pairs and why each was accepted or rejected.
    Analyze {
        /// Source files or directories (searched for *.mgo).
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Print each function's CFG and region tree as graphviz.
        #[arg(long)]
        dump_cfg: bool,
        /// Print points-to sets of every lock site as JSON.
        #[arg(long)]
        dump_pts: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Rewrite accepted pairs to optimistic locks and print a unified diff.
    Transform {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Write the patch to a file instead of stdout.
        #[arg(short = 'o', long = "output", conflicts_with = "in_place")]
        output: Option<PathBuf>,
        /// Rewrite the files in place.
        #[arg(long)]
        in_place: bool,
    },
    /// Execute a program under the deterministic scheduler.
    Run {
        file: PathBuf,
        #[command(flatten)]
        sched: SchedArgs,
    },
    /// Check that a patch preserves a program's observable behavior.
    Verify {
        original: PathBuf,
        patch: PathBuf,
        #[command(flatten)]
        sched: SchedArgs,
    },
    /// Explain the decision for the lock or unlock call at FILE:LINE.
    Explain {
        location: String,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SchedArgs {
    /// Processors available to the runtime (1 disables elision).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random schedules to try when not exhaustive.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Enumerate every schedule.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, default_value_t = harness::sched::DEFAULT_MAX_STEPS)]
    max_steps: u64,
    #[arg(long, default_value_t = harness::sched::DEFAULT_MAX_INTERLEAVINGS)]
    max_interleavings: u64,
    /// Engine configuration JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}")]
    Msg(String),
}

type R<T> = Result<T, CliError>;

fn read(path: &Path) -> R<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn write_file(path: &Path, text: &str) -> R<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn load_file(path: &Path) -> R<(String, TypedProgram)> {
    let src = read(path)?;
    let tp = load(&src).map_err(|e| CliError::Msg(e.with_file(&path.display().to_string())))?;
    Ok((src, tp))
}

fn load_profile(path: &Option<PathBuf>) -> R<Option<Profile>> {
    path.as_ref()
        .map(|p| Profile::load(p).map_err(|e| CliError::Msg(e.to_string())))
        .transpose()
}

/// Files named on the command line, with directories expanded to their
/// `.mgo` files in sorted order.
fn collect(paths: &[PathBuf]) -> R<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> R<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::Io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|x| x == "mgo") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Msg("no .mgo files found".into()));
    }
    Ok(out)
}

struct Ui {
    color: bool,
}

impl Ui {
    fn paint(&self, text: &str, code: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }
}

/// Run the command line `args` (program name first); returns the exit
/// status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let ui = Ui {
        color: std::env::var_os("ELIDE_NO_COLOR").is_none() && std::io::stdout().is_terminal(),
    };
    match dispatch(cli.command, &ui, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command, ui: &Ui, out: &mut dyn Write) -> R<i32> {
    let io = |e: std::io::Error| CliError::Io("stdout".into(), e);
    match cmd {
        Command::Analyze {
            paths,
            profile,
            dump_cfg,
            dump_pts,
            json,
        } => {
            let profile = load_profile(&profile)?;
            let mut report = Report::default();
            for file in collect(&paths)? {
                let (_, tp) = load_file(&file)?;
                let a = analyze(&tp, profile.as_ref());
                if dump_cfg {
                    for b in &a.bodies {
                        write!(out, "{}", dot::render(&tp, &b.cfg)).map_err(io)?;
                    }
                }
                if dump_pts {
                    let v = serde_json::json!({ "file": file.display().to_string(), "sites": a.pts.dump(&tp) });
                    writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json")).map_err(io)?;
                }
                report.packages.push(PackageReport {
                    package: tp.program.package.clone(),
                    file: file.display().to_string(),
                    counters: a.counters(&tp),
                });
            }
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report.to_json()).expect("json")).map_err(io)?;
            } else {
                write!(out, "{}", report.render_text()).map_err(io)?;
            }
            let t = report.total();
            Ok(if t.transformed_after_profile == 0 && t.lu_points > 0 {
                EXIT_REJECTED
            } else {
                EXIT_OK
            })
        }
        Command::Transform {
            paths,
            profile,
            output,
            in_place,
        } => {
            let profile = load_profile(&profile)?;
            let mut patch = String::new();
            let mut edits = 0;
            let mut lu_points = 0;
            let mut rewrites = Vec::new();
            for file in collect(&paths)? {
                let src = read(&file)?;
                let name = file.display().to_string();
                let (t, _, tp) = transform_source(&name, &src, profile.as_ref()).map_err(|e| match e {
                    crate::rewrite::TransformError::Frontend(fe) => CliError::Msg(fe.with_file(&name)),
                    other => CliError::Msg(format!("{name}: {other}")),
                })?;
                lu_points += tp.res.mutex_exprs.len();
                if !t.plan.is_empty() {
                    edits += 1;
                }
                patch.push_str(&t.diff);
                rewrites.push((file, t.rewritten));
            }
            if in_place {
                for (file, text) in &rewrites {
                    write_file(file, text)?;
                }
            } else if let Some(o) = output {
                write_file(&o, &patch)?;
            } else {
                write!(out, "{patch}").map_err(io)?;
            }
            Ok(if edits == 0 && lu_points > 0 { EXIT_REJECTED } else { EXIT_OK })
        }
        Command::Run { file, sched } => {
            let (_, tp) = load_file(&file)?;
            let prog = compile(&tp).map_err(|e| CliError::Msg(format!("{}: {e}", file.display())))?;
            let opts = sched_options(&sched)?;
            run_command(&prog, &opts, &sched, ui, out)
        }
        Command::Verify { original, patch, sched } => {
            let (src, tp) = load_file(&original)?;
            let diff = read(&patch)?;
            let rewritten = apply_patch(&src, &diff).map_err(|e| CliError::Msg(format!("{}: {e}", patch.display())))?;
            let ttp = load(&rewritten).map_err(|e| CliError::Msg(format!("patched program: {e}")))?;
            let o = compile(&tp).map_err(|e| CliError::Msg(e.to_string()))?;
            let t = compile(&ttp).map_err(|e| CliError::Msg(e.to_string()))?;
            let opts = sched_options(&sched)?;
            let mode = if sched.exhaustive {
                Mode::Exhaustive
            } else {
                Mode::Random {
                    seed: sched.seed,
                    runs: sched.runs.max(1),
                }
            };
            let eq = check_equivalence(&o, &t, &opts, mode);
            writeln!(
                out,
                "original: {} runs, {} footprints; transformed: {} runs, {} footprints",
                eq.original.runs,
                eq.original.footprints.len(),
                eq.transformed.runs,
                eq.transformed.footprints.len()
            )
            .map_err(io)?;
            if !eq.complete() {
                writeln!(out, "note: exploration hit a bound; the verdict covers explored schedules only").map_err(io)?;
            }
            for (v, trace) in &eq.transformed.violations {
                writeln!(out, "violation: {v} (trace {})", render_trace(trace)).map_err(io)?;
            }
            for (f, trace) in eq.divergent.iter().take(1) {
                writeln!(out, "divergent footprint: {}", f.summary()).map_err(io)?;
                writeln!(out, "trace: {}", render_trace(trace)).map_err(io)?;
            }
            if eq.equivalent() {
                writeln!(out, "{}", ui.paint("EQUIVALENT", "32")).map_err(io)?;
                Ok(EXIT_OK)
            } else {
                writeln!(out, "{}", ui.paint("NOT EQUIVALENT", "31")).map_err(io)?;
                Ok(EXIT_REJECTED)
            }
        }
        Command::Explain { location, profile } => {
            let (file, line) = location
                .rsplit_once(':')
                .and_then(|(f, l)| Some((f, l.parse::<usize>().ok()?)))
                .ok_or_else(|| CliError::Msg(format!("expected FILE:LINE, got `{location}`")))?;
            let profile = load_profile(&profile)?;
            let (_, tp) = load_file(Path::new(file))?;
            let a = analyze(&tp, profile.as_ref());
            match explain(&tp, &a, line) {
                Some(text) => {
                    write!(out, "{text}").map_err(io)?;
                    Ok(EXIT_OK)
                }
                None => Err(CliError::Msg(format!("{file}:{line}: no lock or unlock call on this line"))),
            }
        }
    }
}

fn sched_options(s: &SchedArgs) -> R<Options> {
    let mut config = match &s.config {
        Some(p) => Config::from_json(&read(p)?).map_err(|e| CliError::Msg(format!("{}: {e}", p.display())))?,
        None => Config::default(),
    };
    if let Some(w) = s.workers {
        config.worker_count = w;
    }
    config.validate().map_err(|e| CliError::Msg(e.to_string()))?;
    Ok(Options {
        config,
        max_steps: s.max_steps,
        max_interleavings: s.max_interleavings,
        ..Options::default()
    })
}

fn render_trace(trace: &[usize]) -> String {
    trace.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ")
}

fn outcome_text(o: &Outcome) -> String {
    match o {
        Outcome::Completed => "completed".into(),
        Outcome::Panic(m) => format!("panic: {m}"),
        Outcome::Deadlock => "deadlock".into(),
        Outcome::StepLimit => "step limit reached".into(),
    }
}

fn run_command(prog: &Compiled, opts: &Options, s: &SchedArgs, ui: &Ui, out: &mut dyn Write) -> R<i32> {
    let io = |e: std::io::Error| CliError::Io("stdout".into(), e);
    if s.exhaustive {
        let ex = harness::explore(prog, opts, Mode::Exhaustive);
        writeln!(
            out,
            "runs: {}{}",
            ex.runs,
            if ex.complete { "" } else { " (bound exceeded)" }
        )
        .map_err(io)?;
        for f in ex.footprints.keys() {
            writeln!(out, "footprint {} {}", f.hash(), outcome_text(&f.outcome)).map_err(io)?;
        }
        for (v, trace) in &ex.violations {
            writeln!(out, "{} {v} (trace {})", ui.paint("violation:", "31"), render_trace(trace)).map_err(io)?;
        }
        writeln!(out, "{}", serde_json::to_string_pretty(&ex.stats).expect("json")).map_err(io)?;
        let failed = !ex.violations.is_empty() || ex.footprints.keys().any(|f| f.outcome != Outcome::Completed);
        return Ok(if failed { EXIT_ERROR } else { EXIT_OK });
    }
    let mut chooser = RandomChooser::new(s.seed);
    let mut status = EXIT_OK;
    for i in 0..s.runs.max(1) {
        let (run, _) = harness::run_once(prog, opts, &mut chooser);
        if s.runs > 1 {
            writeln!(out, "run {i}").map_err(io)?;
        }
        for line in &run.footprint.output {
            writeln!(out, "| {line}").map_err(io)?;
        }
        writeln!(out, "footprint {}", run.footprint.hash()).map_err(io)?;
        writeln!(out, "outcome: {}", outcome_text(&run.footprint.outcome)).map_err(io)?;
        if let Some(d) = &run.deadlock {
            writeln!(out, "deadlock: {d}").map_err(io)?;
        }
        for v in &run.violations {
            writeln!(out, "{} {v}", ui.paint("violation:", "31")).map_err(io)?;
        }
        writeln!(out, "{}", serde_json::to_string_pretty(&run.stats).expect("json")).map_err(io)?;
        if run.footprint.outcome != Outcome::Completed || !run.violations.is_empty() {
            status = EXIT_ERROR;
        }
    }
    Ok(status)
}
