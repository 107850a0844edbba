use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cake_core::cake::Piece;
use cake_core::core_protocol::query_bound_q_big;
use cake_core::error::CakeError;
use cake_core::main_protocol::{ConstPolicy, Engine, Options};
use cake_core::oracle::{parse_instance, Oracle, Valuation};
use cake_core::significance::Constants;
use cake_core::verify::{allocation_to_json, check_complete, check_envy_free, check_proportional, envy_report, parse_allocation};
use clap::{Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use serde_json::json;

#[derive(Parser)]
#[command(name = "cake", about = "Bounded envy-free cake cutting with exact arithmetic")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstKind {
    Paper,
    Custom,
}

#[derive(Subcommand)]
enum Cmd {
    /// Divide the cake among the instance's agents.
    Run {
        #[arg(long)]
        instance: PathBuf,
        /// Comma-separated subset of agent ids.
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<u32>>,
        #[arg(long, value_enum, default_value = "paper")]
        constants: ConstKind,
        #[arg(long = "C")]
        c: Option<BigUint>,
        #[arg(long = "Cprime")]
        cprime: Option<BigUint>,
        #[arg(long = "B")]
        b: Option<BigUint>,
        #[arg(long)]
        check_invariants: bool,
        #[arg(long)]
        fast_degenerate: bool,
        /// Charge every eval instead of deriving values from cut broadcasts.
        #[arg(long)]
        no_full_info: bool,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Recorded in the stats; the protocol itself is deterministic.
        #[arg(long)]
        seed: Option<u64>,
        /// Allocation output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stats output file (stderr when absent).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Check an allocation against an instance.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
    },
    /// Print the constants and SubCore bounds for `n` agents.
    Bounds {
        #[arg(long)]
        n: usize,
    },
}

enum Failure {
    Input(String),
    Protocol(String),
    Verify(String),
}

impl From<CakeError> for Failure {
    fn from(e: CakeError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Protocol(e.to_string())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load(path: &Path, subset: Option<&[u32]>) -> Result<BTreeMap<u32, Valuation>, Failure> {
    let mut vals = parse_instance(&read(path)?)?;
    if let Some(ids) = subset {
        for id in ids {
            if !vals.contains_key(id) {
                return Err(Failure::Input(format!("agent {id} is not in the instance")));
            }
        }
        vals.retain(|id, _| ids.contains(id));
    }
    Ok(vals)
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run { instance, agents, constants, c, cprime, b, check_invariants, fast_degenerate, no_full_info, trace, seed, out, stats } => {
            let vals = load(&instance, agents.as_deref())?;
            let policy = match constants {
                ConstKind::Paper => ConstPolicy::Paper,
                ConstKind::Custom => {
                    let (Some(c), Some(cp)) = (c, cprime) else {
                        return Err(Failure::Input("--constants custom needs --C and --Cprime".into()));
                    };
                    ConstPolicy::Custom { c, cp, b }
                }
            };
            let n = vals.len();
            let opts = Options { constants: policy, check_invariants, fast_degenerate, trace: trace.is_some() };
            let mut eng = Engine::new(Oracle::new(vals, !no_full_info), opts);
            let result = eng.run();
            if let Some(path) = &trace {
                let mut buf = Vec::new();
                eng.trace.write_jsonl(&mut buf).map_err(|e| Failure::Input(e.to_string()))?;
                write(path, &String::from_utf8_lossy(&buf))?;
            }
            let alloc = result?;
            let ledger = eng.oracle.ledger();
            let cuts = ledger.cut_count;
            let report = json!({
                "seed": seed,
                "n": n,
                "cut_count": cuts,
                "eval_count": ledger.eval_count,
                "derived_evals": ledger.derived_evals,
                "eval_bound": (n as u64).saturating_sub(1) * cuts + n as u64,
                "protocol": eng.stats,
                "recursion": eng.recursion_tree(),
            });
            let text = serde_json::to_string_pretty(&allocation_to_json(&alloc)).expect("serialisable");
            match out {
                Some(path) => write(&path, &text)?,
                None => println!("{text}"),
            }
            let stats_text = serde_json::to_string_pretty(&report).expect("serialisable");
            match stats {
                Some(path) => write(&path, &stats_text)?,
                None => eprintln!("{stats_text}"),
            }
            Ok(())
        }
        Cmd::Verify { instance, allocation } => {
            let vals = load(&instance, None)?;
            let alloc = parse_allocation(&read(&allocation)?)?;
            let mut problems = Vec::new();
            let envy = check_envy_free(&alloc, &vals);
            if !envy.is_empty() {
                problems.push(envy_report(&envy));
            }
            if !check_complete(&alloc, &Piece::whole()) {
                problems.push("shares do not partition the cake".to_string());
            }
            for (a, short) in check_proportional(&alloc, &vals) {
                problems.push(format!("agent {a} is short of proportional by {}", cake_core::cake::fmt_rat(&short)));
            }
            if problems.is_empty() {
                println!("ok: complete, envy-free, proportional");
                Ok(())
            } else {
                Err(Failure::Verify(problems.join("\n")))
            }
        }
        Cmd::Bounds { n } => {
            if n < 1 {
                return Err(Failure::Input("--n must be at least 1".into()));
            }
            if n >= 3 {
                let k = Constants::paper(n)?;
                println!("C digits: {}", k.c.to_string().len());
                println!("C' digits: {}", k.cp.to_string().len());
                println!("B = {} ({} digits)", k.b, k.b.to_string().len());
            }
            for m in 1..=n {
                println!("Q({m}) = {}", query_bound_q_big(m));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Protocol(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}
