//! `pacc` — translate, analyze, filter, run, simulate, and report on
//! directive-annotated kernel programs.

use anyhow::Context;
use clap::{Parser, Subcommand};
use pacc_core::config::SimConfig;
use pacc_core::gen::{generate, GenOptions};
use pacc_core::interp::{self, HostState};
use pacc_core::pipeline;
use pacc_core::runtime::machine::{simulate, SimOptions};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pacc",
    about = "Directive-based kernel workbench: source translation, predicate filtering, and a deterministic multi-device simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the lowered runtime-call sequence as JSON lines
    Translate {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump per-kernel access descriptors and guard sets as JSON
    Analyze {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit predicated kernel sources and the split plan as JSON
    Filter {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        devices: usize,
        /// JSON document binding scalar parameters and array contents
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sequential interpreter
    Run {
        file: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute on the simulated multi-device machine, emitting a JSON
    /// trace and the final host state
    Simulate {
        file: PathBuf,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Insert the specialization event after this many kernel
        /// executions
        #[arg(long)]
        optimize_after: Option<u64>,
        /// Also write the event trace to this file
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Disable the adaptive controller (always distribute)
        #[arg(long)]
        no_adaptive: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a deterministic corpus of valid programs
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Directory to write gen_NNN.pacc files into (stdout otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        max_extent: usize,
    },
    /// Simulate and print a fixed-width per-kernel summary table
    Report {
        file: PathBuf,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage problems are input errors
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => {
            eprintln!("internal invariant violation");
            ExitCode::from(2)
        }
    }
}

fn read_program(path: &PathBuf) -> anyhow::Result<pacc_core::ast::Program> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(pacc_core::parser::parse(&text)?)
}

fn read_inputs(
    program: &pacc_core::ast::Program,
    path: &Option<PathBuf>,
) -> anyhow::Result<HostState> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(pipeline::inputs_from_json(program, &text)?)
        }
        None => Ok(HostState::default()),
    }
}

fn read_config(path: &Option<PathBuf>) -> anyhow::Result<SimConfig> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(SimConfig::from_json(&text)?)
        }
        None => Ok(SimConfig::default()),
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            fs::write(p, content).with_context(|| format!("writing {}", p.display()))?;
        }
        None => {
            print!("{content}");
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Translate { file, out } => {
            let program = read_program(&file)?;
            let calls = pipeline::translate_json(&program)?;
            let mut text = String::new();
            for c in calls {
                text.push_str(&serde_json::to_string(&c)?);
                text.push('\n');
            }
            emit(&out, &text)
        }
        Cmd::Analyze { file, out } => {
            let program = read_program(&file)?;
            let doc = pipeline::analyze_json(&program)?;
            emit(&out, &format!("{}\n", serde_json::to_string_pretty(&doc)?))
        }
        Cmd::Filter {
            file,
            devices,
            input,
            out,
        } => {
            let program = read_program(&file)?;
            let inputs = read_inputs(&program, &input)?;
            let doc = pipeline::filter_json(&program, devices, &inputs)?;
            emit(&out, &format!("{}\n", serde_json::to_string_pretty(&doc)?))
        }
        Cmd::Run { file, input, out } => {
            let program = read_program(&file)?;
            let inputs = read_inputs(&program, &input)?;
            let state = interp::run(&program, &inputs)?;
            let doc = pipeline::state_to_json(&state);
            emit(&out, &format!("{}\n", serde_json::to_string(&doc)?))
        }
        Cmd::Simulate {
            file,
            devices,
            config,
            input,
            optimize_after,
            trace,
            no_adaptive,
            out,
        } => {
            let program = read_program(&file)?;
            let inputs = read_inputs(&program, &input)?;
            let cfg = read_config(&config)?;
            let opts = SimOptions {
                devices,
                optimize_after,
                adaptive: !no_adaptive,
                ..Default::default()
            };
            let result = simulate(&program, &cfg, &inputs, &opts)?;
            let mut text = String::new();
            for e in &result.trace {
                text.push_str(&serde_json::to_string(e)?);
                text.push('\n');
            }
            text.push_str(&serde_json::to_string(
                &serde_json::json!({ "summary": result.summary }),
            )?);
            text.push('\n');
            text.push_str(&serde_json::to_string(&serde_json::json!({
                "final_state": pipeline::state_to_json(&result.host)
            }))?);
            text.push('\n');
            if let Some(tp) = trace {
                let mut ttext = String::new();
                for e in &result.trace {
                    ttext.push_str(&serde_json::to_string(e)?);
                    ttext.push('\n');
                }
                fs::write(&tp, ttext).with_context(|| format!("writing {}", tp.display()))?;
            }
            emit(&out, &text)
        }
        Cmd::Gen {
            seed,
            count,
            out,
            max_extent,
        } => {
            let opts = GenOptions {
                max_extent,
                ..Default::default()
            };
            let programs = generate(seed, count, &opts);
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                    for (i, src) in programs.iter().enumerate() {
                        let path = dir.join(format!("gen_{i:03}.pacc"));
                        fs::write(&path, src)
                            .with_context(|| format!("writing {}", path.display()))?;
                    }
                    println!("wrote {} programs to {}", programs.len(), dir.display());
                    Ok(())
                }
                None => {
                    for (i, src) in programs.iter().enumerate() {
                        println!("// ==== program {i} ====");
                        print!("{src}");
                    }
                    Ok(())
                }
            }
        }
        Cmd::Report {
            file,
            devices,
            config,
            input,
        } => {
            let program = read_program(&file)?;
            let inputs = read_inputs(&program, &input)?;
            let cfg = read_config(&config)?;
            let opts = SimOptions {
                devices,
                ..Default::default()
            };
            let result = simulate(&program, &cfg, &inputs, &opts)?;
            print_report(&result);
            Ok(())
        }
    }
}

fn print_report(result: &pacc_core::runtime::machine::SimResult) {
    let color = std::env::var("PACC_COLOR").map(|v| v != "0").unwrap_or(true);
    let (bold, reset) = if color { ("\x1b[1m", "\x1b[0m") } else { ("", "") };
    // aggregate per kernel
    struct Row {
        launches: u64,
        kernel_s: f64,
        comm_s: f64,
        bytes: u64,
    }
    let mut rows: std::collections::BTreeMap<String, Row> = std::collections::BTreeMap::new();
    for e in &result.trace {
        if e.event != "kernel" {
            continue;
        }
        let id = e.kernel_id.clone().unwrap_or_default();
        let row = rows.entry(id).or_insert(Row {
            launches: 0,
            kernel_s: 0.0,
            comm_s: 0.0,
            bytes: 0,
        });
        row.launches += 1;
        row.kernel_s += e.t_kernel_s;
        row.comm_s += e.t_comm_s;
        row.bytes += e.bytes_exchanged;
    }
    println!(
        "{bold}{:<20} {:>8} {:>14} {:>12} {:>12} {:>14}{reset}",
        "kernel", "launches", "mode", "kernel [s]", "comm [s]", "exchanged [B]"
    );
    for (id, row) in &rows {
        let mode = result
            .summary
            .per_kernel_modes
            .get(id)
            .copied()
            .unwrap_or("-");
        println!(
            "{:<20} {:>8} {:>14} {:>12.6} {:>12.6} {:>14}",
            id, row.launches, mode, row.kernel_s, row.comm_s, row.bytes
        );
    }
    println!(
        "{bold}{:<20} {:>8} {:>14} {:>12.6} {:>12.6} {:>14}{reset}",
        "total",
        "",
        "",
        result.summary.total_kernel_s,
        result.summary.total_comm_s,
        ""
    );
}
