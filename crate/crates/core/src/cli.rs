//! Command-line front end: `build`, `sim`, `graph` and `cosim`.
//!
//! Settings come from built-in defaults, then the flat `key = value` file
//! named by `HDLKIT_CONFIG`, then command-line flags.
//!
//! Failures print one first line of the form
//! `error code=<n> kind=<kind>: <message>` on stderr, followed by detail
//! lines where the error carries a list.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{self, InputDelay, RandomFifoTb, StreamDelayOne};
use crate::cosim;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::export::{self, Format};
use crate::sim::{SimConfig, SimReport, Simulator};
use crate::vhdl;

pub const CONFIG_ENV: &str = "HDLKIT_CONFIG";

pub mod exit {
    pub const OK: i32 = 0;
    pub const NO_PROGRESS: i32 = 2;
    pub const ELABORATION: i32 = 3;
    pub const OSCILLATION: i32 = 4;
    pub const CONVERSION: i32 = 5;
    pub const SIMULATION: i32 = 6;
    pub const CONFIG: i32 = 7;
    pub const IO: i32 = 8;
    pub const SETUP: i32 = 9;
    pub const USAGE: i32 = 64;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectConfig {
    pub top: Option<String>,
    pub out_dir: PathBuf,
    pub cycles: u64,
    pub vcd: Option<PathBuf>,
    pub trace: Vec<String>,
    pub seed: u64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            top: None,
            out_dir: PathBuf::from("gen"),
            cycles: 1000,
            vcd: None,
            trace: Vec::new(),
            seed: 0,
        }
    }
}

impl ProjectConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// `trace` takes a comma-separated list.
    pub fn parse(text: &str) -> Result<ProjectConfig> {
        let mut cfg = ProjectConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Config(format!("line {}: {m}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "top" => cfg.top = Some(value.to_string()),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "cycles" => cfg.cycles = value.parse().map_err(|e| bad(format!("cycles: {e}")))?,
                "vcd" => cfg.vcd = Some(PathBuf::from(value)),
                "trace" => {
                    cfg.trace = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
                other => return Err(bad(format!("unknown key {other}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ProjectConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ProjectConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn top(&self) -> Result<&str> {
        self.top
            .as_deref()
            .ok_or_else(|| Error::Config("no top entity given (use --top or top = ... in the config)".into()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "hdlkit", version, about = "Elaborate, simulate and convert hardware designs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert the design to VHDL and write a manifest.
    Build {
        #[arg(long)]
        top: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Simulate, writing a VCD file and a JSON report.
    Sim {
        #[arg(long)]
        top: Option<String>,
        #[arg(long)]
        cycles: Option<u64>,
        #[arg(long)]
        vcd: Option<PathBuf>,
        /// Report path; defaults to the VCD path with a `.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Node path patterns to trace (`*` and `?` wildcards); repeatable.
        #[arg(long)]
        trace: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Export the connection diagram.
    Graph {
        #[arg(long)]
        top: Option<String>,
        #[arg(long, default_value = "dot")]
        format: Format,
        /// Output path, `-` for stdout; defaults to `<out_dir>/<top>.<format>`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Serve a stream design over TCP.
    Cosim {
        #[arg(long)]
        top: Option<String>,
        #[arg(long, default_value_t = cosim::DEFAULT_PORT)]
        cosim_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

/// Top names accepted by `sim`, `build` and `graph` beyond the corpus list.
pub const EXTRA_TOPS: &[&str] = &["random_fifo"];

/// Stream designs accepted by `cosim`.
pub const COSIM_TOPS: &[&str] = &["stream_delay_one", "InputDelay"];

fn short_name(top: &str) -> &str {
    top.rsplit("::").next().unwrap_or(top)
}

/// Elaborates a top given by name or module path (`corpus::counter_tb`).
pub fn load_top(top: &str, seed: u64) -> Result<Design> {
    let result = match short_name(top) {
        "random_fifo" => Design::elaborate(RandomFifoTb { seed }),
        name if corpus::DESIGNS.contains(&name) => corpus::build(name),
        _ => {
            let known: Vec<&str> = corpus::DESIGNS.iter().chain(EXTRA_TOPS).copied().collect();
            return Err(Error::Elaboration(format!(
                "cannot load top {top}: no such entity (known: {})",
                known.join(", ")
            )));
        }
    };
    result.map_err(|e| match e {
        Error::NoProgress(_) | Error::Oscillation { .. } => e,
        other => Error::Elaboration(format!("{top}: {other}")),
    })
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoProgress(_) => exit::NO_PROGRESS,
        Error::Oscillation { .. } => exit::OSCILLATION,
        Error::Conversion(_) | Error::Grammar(_) => exit::CONVERSION,
        Error::Config(_) => exit::CONFIG,
        Error::Io(_) => exit::IO,
        Error::Setup(_) => exit::SETUP,
        Error::Elaboration(_)
        | Error::Naming(_)
        | Error::Connection(_)
        | Error::PipelineShape(_)
        | Error::Template(_)
        | Error::SingleDriver(_) => exit::ELABORATION,
        Error::Range { .. }
        | Error::Width(_)
        | Error::Type(_)
        | Error::Storage(_)
        | Error::Comparison(_)
        | Error::Truthiness(_)
        | Error::State(_)
        | Error::Protocol(_) => exit::SIMULATION,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Range { .. } => "range",
        Error::Width(_) => "width",
        Error::Type(_) => "type",
        Error::Storage(_) => "storage",
        Error::Comparison(_) => "comparison",
        Error::SingleDriver(_) => "single-driver",
        Error::Elaboration(_) => "elaboration",
        Error::Naming(_) => "naming",
        Error::PipelineShape(_) => "pipeline-shape",
        Error::Connection(_) => "connection",
        Error::Template(_) => "template",
        Error::Truthiness(_) => "truthiness",
        Error::Conversion(_) => "conversion",
        Error::Grammar(_) => "conversion-grammar",
        Error::NoProgress(_) => "no-progress",
        Error::Oscillation { .. } => "oscillation",
        Error::State(_) => "state",
        Error::Config(_) => "config",
        Error::Setup(_) => "setup",
        Error::Protocol(_) => "protocol",
        Error::Io(_) => "io",
    }
}

/// The diagnostic block for `e`: one summary line, then one line per listed item.
pub fn diagnostic(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    let mut out = format!("error code={} kind={}: {msg}\n", exit_code(e), kind(e));
    match e {
        Error::NoProgress(sigs) => {
            for s in sigs {
                out.push_str(&format!("  unsatisfied: {s}\n"));
            }
        }
        Error::Oscillation { nodes, .. } => {
            for n in nodes {
                out.push_str(&format!("  cycling: {n}\n"));
            }
        }
        _ => {}
    }
    out
}

#[derive(Serialize)]
struct SimOutput<'a> {
    top: &'a str,
    cycles: u64,
    seed: u64,
    vcd: String,
    #[serde(flatten)]
    report: &'a SimReport,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    }
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn file_stem(top: &str) -> String {
    short_name(top).to_string()
}

/// Restricts tracing to nodes whose hierarchy path matches one of `patterns`.
pub fn apply_trace(d: &mut Design, patterns: &[String]) -> Result<()> {
    if patterns.is_empty() {
        return Ok(());
    }
    let pats = patterns
        .iter()
        .map(|p| glob::Pattern::new(p).map_err(|e| Error::Config(format!("trace pattern {p}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..d.nodes.len() {
        let path = d.node_path(crate::signals::NodeId(i as u32));
        d.meta[i].trace = pats.iter().any(|p| p.matches(&path));
    }
    Ok(())
}

/// Simulates an elaborated design for `cycles` clock cycles and returns the
/// VCD text and the report.
pub fn simulate(d: Design, cycles: u64) -> Result<(String, SimReport)> {
    let mut sim = Simulator::new(d, SimConfig::default())?;
    sim.enable_trace()?;
    sim.run_cycles(cycles)?;
    let vcd = sim.trace().map(|t| t.render()).unwrap_or_default();
    Ok((vcd, sim.report()))
}

fn run_command(cmd: Command, cfg: ProjectConfig, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Build { top, out_dir } => {
            let cfg = ProjectConfig {
                top: top.or(cfg.top),
                out_dir: out_dir.unwrap_or(cfg.out_dir),
                ..cfg
            };
            let top = cfg.top()?;
            let mut d = load_top(top, cfg.seed)?;
            let conv = vhdl::convert(&mut d)?;
            conv.write_to(&cfg.out_dir)?;
            for f in &conv.files {
                writeln!(out, "{}", cfg.out_dir.join(&f.file).display())?;
            }
            writeln!(out, "{}", cfg.out_dir.join("manifest.json").display())?;
        }
        Command::Sim {
            top,
            cycles,
            vcd,
            report,
            trace,
            seed,
            out_dir,
        } => {
            let cfg = ProjectConfig {
                top: top.or(cfg.top),
                out_dir: out_dir.unwrap_or(cfg.out_dir),
                cycles: cycles.unwrap_or(cfg.cycles),
                vcd: vcd.or(cfg.vcd),
                trace: if trace.is_empty() { cfg.trace } else { trace },
                seed: seed.unwrap_or(cfg.seed),
            };
            let top = cfg.top()?;
            let mut d = load_top(top, cfg.seed)?;
            apply_trace(&mut d, &cfg.trace)?;
            let vcd_path = cfg
                .vcd
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join(format!("{}.vcd", file_stem(top))));
            let report_path = report.unwrap_or_else(|| vcd_path.with_extension("json"));
            let (vcd_text, rep) = simulate(d, cfg.cycles)?;
            write_file(&vcd_path, &vcd_text)?;
            let doc = SimOutput {
                top,
                cycles: cfg.cycles,
                seed: cfg.seed,
                vcd: vcd_path.display().to_string(),
                report: &rep,
            };
            let mut json = serde_json::to_string_pretty(&doc).expect("report serializes");
            json.push('\n');
            write_file(&report_path, &json)?;
            writeln!(out, "{}", vcd_path.display())?;
            writeln!(out, "{}", report_path.display())?;
        }
        Command::Graph {
            top,
            format,
            output,
            out_dir,
        } => {
            let cfg = ProjectConfig {
                top: top.or(cfg.top),
                out_dir: out_dir.unwrap_or(cfg.out_dir),
                ..cfg
            };
            let top = cfg.top()?;
            let d = load_top(top, cfg.seed)?;
            let text = export::graph(&d)?.render(format);
            let ext = match format {
                Format::Dot => "dot",
                Format::Json => "json",
            };
            let path = output.unwrap_or_else(|| cfg.out_dir.join(format!("{}.{ext}", file_stem(top))));
            if path.as_os_str() == "-" {
                out.write_all(text.as_bytes())?;
            } else {
                write_file(&path, &text)?;
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Cosim { top, cosim_port, host } => {
            let top = top.or(cfg.top).unwrap_or_else(|| "stream_delay_one".into());
            let addr = format!("{host}:{cosim_port}");
            let bridge = match short_name(&top) {
                "stream_delay_one" => cosim::serve(StreamDelayOne, addr.as_str())?,
                "InputDelay" => cosim::serve(InputDelay::default(), addr.as_str())?,
                _ => {
                    return Err(Error::Setup(format!(
                        "cannot serve {top}: not a stream design (known: {})",
                        COSIM_TOPS.join(", ")
                    )))
                }
            };
            writeln!(out, "listening on {}", bridge.local_addr())?;
            out.flush()?;
            bridge.wait();
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, config: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return exit::OK;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error code={} kind=usage: {first}", exit::USAGE);
            let _ = write!(err, "{}", e.render());
            return exit::USAGE;
        }
    };
    let result = match config {
        Some(p) => ProjectConfig::load(p),
        None => Ok(ProjectConfig::default()),
    }
    .and_then(|cfg| run_command(cli.command, cfg, out));
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = write!(err, "{}", diagnostic(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let c = ProjectConfig::parse("").unwrap();
        assert_eq!(c, ProjectConfig::default());
        assert_eq!(c.out_dir, PathBuf::from("gen"));
        assert_eq!((c.cycles, c.seed), (1000, 0));
        let c = ProjectConfig::parse("# project\ntop = axi_chain\ncycles=20\ntrace = tb/cnt/*, tb/clk\n").unwrap();
        assert_eq!(c.top.as_deref(), Some("axi_chain"));
        assert_eq!(c.cycles, 20);
        assert_eq!(c.trace, vec!["tb/cnt/*", "tb/clk"]);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let e = ProjectConfig::parse("top = x\ncolour = blue\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("line 2") && m.contains("colour")));
    }

    #[test]
    fn exit_codes_are_distinct_per_kind() {
        let samples = [
            Error::NoProgress(vec!["a".into()]),
            Error::Elaboration("x".into()),
            Error::Oscillation {
                tick: 0,
                deltas: 1,
                nodes: vec!["n".into()],
            },
            Error::Conversion("x".into()),
            Error::State("x".into()),
            Error::Config("x".into()),
            Error::Io(std::io::Error::other("x")),
            Error::Setup("x".into()),
        ];
        let mut codes: Vec<i32> = samples.iter().map(exit_code).collect();
        assert_eq!(&codes[..3], &[2, 3, 4]);
        codes.push(exit::USAGE);
        let n = codes.len();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), n);
        assert!(!codes.contains(&exit::OK));
    }

    #[test]
    fn diagnostic_first_line_is_parseable() {
        let d = diagnostic(&Error::NoProgress(vec!["f(a)".into(), "g(b)".into()]));
        let mut lines = d.lines();
        assert!(lines.next().unwrap().starts_with("error code=2 kind=no-progress: "));
        assert_eq!(
            lines.collect::<Vec<_>>(),
            vec!["  unsatisfied: f(a)", "  unsatisfied: g(b)"]
        );
    }
}
