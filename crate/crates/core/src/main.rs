use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evm2rbr::asm::{disassemble, listing, parse_hex, AsmError};
use evm2rbr::cfg::{emit_dot, resolve_cfg_with, split_blocks, Cfg, ResolveOptions, DEFAULT_CLONE_CAP};
use evm2rbr::emit::{emit_rbr, export_saco, EmitOptions};
use evm2rbr::oracle::{check_program, detect_loops};
use evm2rbr::rbr::{translate_cfg, Program, TranslateError, TranslateOptions};

#[derive(Parser)]
#[command(name = "evm2rbr", version, about = "Lift EVM bytecode into guarded rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the instruction listing.
    Disasm {
        /// Hex bytecode file, or `-` for standard input.
        input: String,
    },
    /// Print the recovered control-flow graph.
    Cfg {
        input: String,
        /// Emit Graphviz DOT instead of the block summary.
        #[arg(long)]
        dot: bool,
        /// Maximum number of clones per original block.
        #[arg(long, default_value_t = DEFAULT_CLONE_CAP)]
        clone_cap: usize,
    },
    /// Print or write the rule-based representation.
    Rbr {
        input: String,
        /// Keep `nop(OPCODE)` annotations.
        #[arg(long)]
        nops: bool,
        #[arg(short = 'o', value_name = "OUT")]
        output: Option<PathBuf>,
    },
    /// Print or write the export with bit operations abstracted away.
    Saco {
        input: String,
        #[arg(short = 'o', value_name = "OUT")]
        output: Option<PathBuf>,
    },
    /// Print the loops of the rule call graph.
    Loops { input: String },
    /// Compare the translation against the reference interpreter.
    Check {
        input: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// A diagnostic and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn pipeline(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<AsmError> for Failure {
    fn from(e: AsmError) -> Self {
        match e {
            AsmError::TruncatedPush(_) => Failure::pipeline(e),
            e => Failure::input(e),
        }
    }
}

impl From<TranslateError> for Failure {
    fn from(e: TranslateError) -> Self {
        Failure::pipeline(e)
    }
}

fn read_code(input: &str) -> Result<Vec<u8>, Failure> {
    let text = if input == "-" {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Failure::input(format!("stdin: {e}")))?;
        s
    } else {
        fs::read_to_string(input).map_err(|e| Failure::input(format!("{input}: {e}")))?
    };
    Ok(parse_hex(&text)?)
}

fn recover(code: &[u8], clone_cap: usize) -> Result<Cfg, Failure> {
    let cfg = resolve_cfg_with(&split_blocks(&disassemble(code)?), ResolveOptions { clone_cap });
    for u in &cfg.unresolved {
        eprintln!("warning: unresolved jump in block {}: {}", u.block, u.reason);
    }
    Ok(cfg)
}

fn lift(code: &[u8], nops: bool) -> Result<Program, Failure> {
    let t = translate_cfg(&recover(code, DEFAULT_CLONE_CAP)?, TranslateOptions { nops })?;
    for w in &t.warnings {
        eprintln!("warning: {w}");
    }
    Ok(t.program)
}

fn write_out(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::input(format!("stdout: {e}"))),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Disasm { input } => write_out(None, &listing(&disassemble(&read_code(&input)?)?))?,
        Command::Cfg { input, dot, clone_cap } => {
            let cfg = recover(&read_code(&input)?, clone_cap)?;
            write_out(None, &if dot { emit_dot(&cfg) } else { cfg.summary() })?;
        }
        Command::Rbr { input, nops, output } => {
            let text = emit_rbr(&lift(&read_code(&input)?, nops)?, EmitOptions { nops });
            write_out(output.as_deref(), &text)?;
        }
        Command::Saco { input, output } => {
            write_out(output.as_deref(), &export_saco(&lift(&read_code(&input)?, false)?))?;
        }
        Command::Loops { input } => write_out(None, &detect_loops(&lift(&read_code(&input)?, false)?).to_string())?,
        Command::Check { input, runs, seed } => {
            let code = read_code(&input)?;
            let report = check_program(&code, &lift(&code, false)?, runs, seed);
            write_out(None, &report.to_string())?;
            if report.divergent > 0 {
                return Ok(3);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are input errors; `--help` and `--version` succeed.
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
