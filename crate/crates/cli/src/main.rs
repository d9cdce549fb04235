use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dyntree::alphacoder::{decode_sequence, encode_sequence};
use dyntree_cli::gen::{generate, Dist};
use dyntree_cli::report::{run, Audit, RunConfig, Structure};
use dyntree_cli::trace;

#[derive(Parser)]
#[command(
    name = "dyntree",
    about = "Dynamic almost-optimal search trees: workloads, replay and coding"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Flat,
    Hier,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditArg {
    Off,
    Final,
    EveryOp,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlphabetArg {
    /// All 256 byte values.
    Bytes,
    /// Only the byte values present in the input.
    Present,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a workload trace.
    Gen {
        #[arg(long)]
        dist: String,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        len: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trace and write a JSON report.
    Run {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        structure: StructureArg,
        #[arg(long, default_value_t = 1)]
        f: u32,
        #[arg(long, value_enum, default_value = "off")]
        audit: AuditArg,
        #[arg(long, default_value_t = 8)]
        c: u32,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compress a file.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "bytes")]
        alphabet: AlphabetArg,
    },
    /// Decompress a file.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const VIOLATION: u8 = 1;
const USAGE: u8 = 2;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("dyntree: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match cli.cmd {
        Cmd::Gen {
            dist,
            s,
            n,
            len,
            seed,
            out,
        } => {
            let ops = match Dist::parse(&dist, s).and_then(|d| generate(d, n, len, seed)) {
                Ok(ops) => ops,
                Err(e) => return fail(USAGE, e),
            };
            if let Err(e) = std::fs::write(&out, trace::render(&ops)) {
                return fail(USAGE, format!("{}: {e}", out.display()));
            }
        }
        Cmd::Run {
            trace: path,
            structure,
            f,
            audit,
            c,
            report,
        } => {
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => return fail(USAGE, format!("{}: {e}", path.display())),
            };
            let ops = match trace::parse(&text) {
                Ok(ops) => ops,
                Err(e) => return fail(USAGE, format!("{}: {e}", path.display())),
            };
            let cfg = RunConfig {
                structure: match structure {
                    StructureArg::Flat => Structure::Flat,
                    StructureArg::Hier => Structure::Hier,
                },
                f,
                audit: match audit {
                    AuditArg::Off => Audit::Off,
                    AuditArg::Final => Audit::Final,
                    AuditArg::EveryOp => Audit::EveryOp,
                },
                c: c as f64,
            };
            let stats = match run(&ops, cfg) {
                Ok(s) => s,
                Err(e) => return fail(USAGE, e),
            };
            let json = serde_json::to_string_pretty(&stats).expect("report serializes");
            if let Err(e) = std::fs::write(&report, json + "\n") {
                return fail(USAGE, format!("{}: {e}", report.display()));
            }
            if let Some(v) = stats.violation {
                return fail(VIOLATION, v);
            }
        }
        Cmd::Encode {
            input,
            out,
            alphabet,
        } => {
            let data = match std::fs::read(&input) {
                Ok(d) => d,
                Err(e) => return fail(USAGE, format!("{}: {e}", input.display())),
            };
            let mut present = [false; 256];
            match alphabet {
                AlphabetArg::Bytes => present = [true; 256],
                AlphabetArg::Present => {
                    for &b in &data {
                        present[b as usize] = true;
                    }
                    // the coder needs two symbols
                    for b in 0..256 {
                        if present.iter().filter(|&&p| p).count() >= 2 {
                            break;
                        }
                        present[b] = true;
                    }
                }
            }
            let symbols: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
            let mut rank = [0u32; 256];
            for (i, &b) in symbols.iter().enumerate() {
                rank[b as usize] = i as u32;
            }
            let ranks: Vec<u32> = data.iter().map(|&b| rank[b as usize]).collect();
            let alphabet = symbols.iter().map(|&b| vec![b]).collect();
            let bytes = match encode_sequence(alphabet, &ranks) {
                Ok(b) => b,
                Err(e) => return fail(USAGE, e),
            };
            if let Err(e) = std::fs::write(&out, bytes) {
                return fail(USAGE, format!("{}: {e}", out.display()));
            }
        }
        Cmd::Decode { input, out } => {
            let data = match std::fs::read(&input) {
                Ok(d) => d,
                Err(e) => return fail(USAGE, format!("{}: {e}", input.display())),
            };
            let decoded = match decode_sequence(&data) {
                Ok(d) => d,
                Err(e) => return fail(USAGE, format!("{}: {e}", input.display())),
            };
            if let Err(e) = std::fs::write(&out, decoded.bytes()) {
                return fail(USAGE, format!("{}: {e}", out.display()));
            }
        }
    }
    ExitCode::SUCCESS
}
