//! Command-line front end: spec ingestion, experiment orchestration,
//! deterministic seeding, and CSV/JSON report emission.
//!
//! Exit codes: 0 success, 2 parse/validation errors, 3 runtime assertion
//! failure (the failure report is still written), 4 exact-mode capacity
//! exceeded, 5 inconsistent pipeline schedule.

use crate::attack::{
    self, bias_protocol, bias_protocol_multibit, family_common_set, kkl_greedy,
    semi_random_process, AttackError, AttackParams, ParamMode,
};
use crate::boolfn::{BoolFnError, BooleanFunction, CoordSet};
use crate::construct::{self, default_schedule, BadVotes, ConstructError, VoteEncoding};
use crate::dyadic::Dyadic;
use crate::protocol::{
    monte_carlo_value, resilience_check, EvalMode, OutcomeTarget, ProtocolError, ProtocolSpec,
};
use crate::specio::{self, SpecIoError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write as _;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    BoolFn(#[from] BoolFnError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error(transparent)]
    SpecIo(#[from] SpecIoError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Attack(AttackError::RuntimeAssert { .. }) => 3,
            CliError::Attack(AttackError::Protocol(e)) | CliError::Protocol(e) => match e {
                ProtocolError::BudgetExceeded { .. } | ProtocolError::Capacity(_) => 4,
                _ => 2,
            },
            CliError::SpecIo(SpecIoError::Construct(e)) | CliError::Construct(e) => match e {
                ConstructError::Schedule { .. } | ConstructError::BetaTooLarge { .. } => 5,
                _ => 2,
            },
            CliError::Io(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "coinflip-lab",
    about = "Collective coin flipping and leader election laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-coordinate influences and the acceptance probability of a boolean
    /// function (e.g. `parity:4`, `majority:9`, `tribes:3:2`).
    Influence {
        /// Function spec, `name:args` form.
        spec: String,
    },
    /// Coalition-finding attacks; every report is re-verified by the exact
    /// protocol oracle.
    Attack {
        #[command(subcommand)]
        which: AttackCmd,
    },
    /// Build a lightest-bin pipeline protocol and emit its spec document.
    Build {
        /// Number of rounds.
        #[arg(long)]
        k: usize,
        /// Number of players.
        #[arg(long)]
        players: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Honest Monte Carlo trials on the built protocol (0 = skip).
        #[arg(long, default_value_t = 0)]
        simulate: u64,
        /// Where to write the protocol spec JSON (`-` for stdout).
        #[arg(long)]
        out: Option<String>,
        /// Dump the per-stage assembly snapshots to this JSON file.
        #[arg(long)]
        dump_assemblies: Option<PathBuf>,
    },
    /// Check (b, gamma)-resilience of a protocol.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        /// Coalition size bound.
        #[arg(long)]
        b: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = CliEvalMode::Exact)]
        mode: CliEvalMode,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliEvalMode {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliParamMode {
    Paper,
    Desk,
}

#[derive(Args, Clone)]
struct AttackFlags {
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// Heavy-set size bound (desk default 4).
    #[arg(long)]
    h: Option<u32>,
    /// Chisel floor: target container size (desk default 1).
    #[arg(long)]
    c: Option<u32>,
    /// Step budget of the semi-random process (desk default: the arity).
    #[arg(long)]
    r: Option<u32>,
    /// Allowed family failure fraction (desk default 1/3).
    #[arg(long)]
    delta: Option<f64>,
    /// Number of sampled common-set candidates (default 50).
    #[arg(long)]
    candidates: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `paper` derives h, c, r from the asymptotic formulas (errors when they
    /// degenerate); `desk` uses small explicit values.
    #[arg(long, value_enum, default_value_t = CliParamMode::Desk)]
    mode: CliParamMode,
    /// Full JSON report destination (`-` for stdout).
    #[arg(long)]
    out: Option<String>,
}

impl AttackFlags {
    fn params(&self, k: usize, arity: u32) -> Result<AttackParams> {
        let mut p = match self.mode {
            CliParamMode::Desk => AttackParams::desk(self.gamma, arity),
            CliParamMode::Paper => {
                AttackParams::paper_formula(k, arity, self.gamma, self.delta.unwrap_or(1.0 / 3.0))?
            }
        };
        if let Some(h) = self.h {
            p.h = h;
        }
        if let Some(c) = self.c {
            p.c = c;
        }
        if let Some(r) = self.r {
            p.r = r;
        }
        if let Some(d) = self.delta {
            p.delta = d;
        }
        if let Some(n) = self.candidates {
            p.candidates = n;
        }
        Ok(p)
    }
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Greedy influence biasing of a single boolean function.
    Kkl {
        #[arg(long = "fn")]
        func: String,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Semi-random heavy/random restriction process on one function.
    Process {
        #[arg(long = "fn")]
        func: String,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Common random set for a family of functions (repeat --fn).
    Family {
        #[arg(long = "fn", required = true)]
        funcs: Vec<String>,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Full k-round protocol biasing with the chiseling loop.
    Protocol {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        flags: AttackFlags,
    },
    /// Protocol biasing through the multi-bit flattening wrapper.
    Multibit {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        flags: AttackFlags,
    },
}

/// Parallelism cap from COINFLIP_LAB_THREADS (default 1).
fn threads() -> usize {
    std::env::var("COINFLIP_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Honest-run Monte Carlo split across threads; trial `t` always uses the
/// ChaCha8 stream `(seed, t)`, so the estimate is independent of the split.
fn parallel_honest_hits(
    p: &ProtocolSpec,
    target: &OutcomeTarget,
    trials: u64,
    seed: u64,
    threads: usize,
) -> u64 {
    let n = threads.min(trials.max(1) as usize).max(1);
    if n == 1 {
        return monte_carlo_value(p, None, target, trials, seed)
            .map(|e| e.hits)
            .unwrap_or(0);
    }
    let chunk = trials.div_ceil(n as u64);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n as u64)
            .map(|w| {
                let (lo, hi) = (w * chunk, ((w + 1) * chunk).min(trials));
                s.spawn(move || {
                    let mut hits = 0u64;
                    for trial in lo..hi {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(trial);
                        if target.matches(&crate::protocol::honest_run(p, &mut rng)) {
                            hits += 1;
                        }
                    }
                    hits
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).sum()
    })
}

fn emit_json<T: Serialize>(out: &Option<String>, value: &T) -> Result<()> {
    let Some(dest) = out else { return Ok(()) };
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    if dest == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.write_all(b"\n")?;
    } else {
        std::fs::write(dest, text + "\n")?;
    }
    Ok(())
}

const CSV_HEADER: &str = "protocol,l,k,coalition,outcome,value_num,value_den,mode,trials,seed";

#[allow(clippy::too_many_arguments)]
fn csv_row(
    protocol: &str,
    l: u32,
    k: usize,
    coalition: &CoordSet,
    outcome: &str,
    value_num: u128,
    value_den: u128,
    mode: &str,
    trials: Option<u64>,
    seed: u64,
) -> String {
    format!(
        "{protocol},{l},{k},\"{coalition}\",{outcome},{value_num},{value_den},{mode},{},{seed}",
        trials.map(|t| t.to_string()).unwrap_or_default()
    )
}

fn print_rows(rows: &[String]) {
    println!("{CSV_HEADER}");
    for row in rows {
        println!("{row}");
    }
}

fn mode_tag(mode: ParamMode) -> &'static str {
    match mode {
        ParamMode::PaperFormula => "paper-exact",
        ParamMode::DeskOverride => "desk-exact",
    }
}

fn cmd_influence(spec: &str) -> Result<()> {
    let f = BooleanFunction::from_name(spec)?;
    println!("coordinate,influence_num,influence_den");
    for (i, inf) in f.influences().iter().enumerate() {
        println!("{},{},{}", i + 1, inf.numerator(), inf.denominator());
    }
    let prob = f.prob(true);
    println!("prob,{},{}", prob.numerator(), prob.denominator());
    Ok(())
}

/// Wraps a failing attack so the report still lands on disk before the
/// process exits with code 3.
#[derive(Serialize)]
struct FailureReport<'a> {
    status: &'a str,
    what: &'a str,
    trace: &'a [String],
    seed: u64,
    params: &'a AttackParams,
}

fn with_failure_report<T>(
    res: attack::Result<T>,
    out: &Option<String>,
    seed: u64,
    params: &AttackParams,
) -> Result<T> {
    match res {
        Ok(v) => Ok(v),
        Err(AttackError::RuntimeAssert { what, trace }) => {
            emit_json(
                out,
                &FailureReport {
                    status: "runtime-assert-failed",
                    what: &what,
                    trace: &trace,
                    seed,
                    params,
                },
            )?;
            Err(AttackError::RuntimeAssert { what, trace }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_attack(which: &AttackCmd) -> Result<()> {
    match which {
        AttackCmd::Kkl { func, flags } => {
            let f = BooleanFunction::from_name(func)?;
            let res = kkl_greedy(&f, true, flags.gamma)?;
            // independent oracle: optimally restrict the reported coalition
            let verified = f.restrict_optimal(&res.coalition, true)?.prob(true);
            emit_json(&flags.out, &res)?;
            println!("claimed,{}", res.final_prob);
            println!("verified,{verified}");
            print_rows(&[csv_row(
                func,
                f.arity(),
                1,
                &res.coalition,
                "1",
                verified.numerator(),
                verified.denominator(),
                "desk-exact",
                None,
                flags.seed,
            )]);
            Ok(())
        }
        AttackCmd::Process { func, flags } => {
            let f = BooleanFunction::from_name(func)?;
            let params = flags.params(1, f.arity())?;
            let mut rng = ChaCha8Rng::seed_from_u64(flags.seed);
            let res = with_failure_report(
                semi_random_process(&f, true, &params, &mut rng),
                &flags.out,
                flags.seed,
                &params,
            )?;
            let coalition = res.b_r.union(&res.b_h);
            let verified = f.restrict_optimal(&coalition, true)?.prob(true);
            emit_json(&flags.out, &res)?;
            println!("claimed,{}", res.final_prob);
            println!("verified,{verified}");
            println!("success,{}", res.success);
            print_rows(&[csv_row(
                func,
                f.arity(),
                1,
                &coalition,
                "1",
                verified.numerator(),
                verified.denominator(),
                mode_tag(params.mode),
                None,
                flags.seed,
            )]);
            Ok(())
        }
        AttackCmd::Family { funcs, flags } => {
            let family: Vec<(BooleanFunction, bool)> = funcs
                .iter()
                .map(|s| BooleanFunction::from_name(s).map(|f| (f, true)))
                .collect::<std::result::Result<_, _>>()?;
            let arity = family[0].0.arity();
            let params = flags.params(1, arity)?;
            let res = with_failure_report(
                family_common_set(&family, &params, flags.seed),
                &flags.out,
                flags.seed,
                &params,
            )?;
            emit_json(&flags.out, &res)?;
            println!("coverage,{}", res.coverage);
            let mut rows = Vec::new();
            for ((name, (f, _)), assignment) in funcs.iter().zip(&family).zip(&res.assignments) {
                let (coalition, outcome) = match assignment {
                    Some(b_h) => (res.b_r.union(b_h), "1"),
                    None => (CoordSet::empty(), "uncovered"),
                };
                let v = if coalition.len() as u32 >= f.arity() {
                    Dyadic::ONE
                } else if coalition.is_empty() {
                    f.prob(true)
                } else {
                    f.restrict_optimal(&coalition, true)?.prob(true)
                };
                rows.push(csv_row(
                    name,
                    arity,
                    1,
                    &coalition,
                    outcome,
                    v.numerator(),
                    v.denominator(),
                    mode_tag(params.mode),
                    None,
                    flags.seed,
                ));
            }
            print_rows(&rows);
            Ok(())
        }
        AttackCmd::Protocol { spec, flags } => {
            let loaded = specio::load(spec)?;
            let p = loaded.protocol;
            let params = flags.params(p.rounds(), p.players())?;
            let rep = with_failure_report(
                bias_protocol(&p, &params, flags.seed),
                &flags.out,
                flags.seed,
                &params,
            )?;
            emit_json(&flags.out, &rep)?;
            println!("claimed,{}", rep.claimed_value);
            println!("verified,{}", rep.verified_value);
            println!("b_r,\"{}\"", rep.b_r);
            println!("b_h,\"{}\"", rep.b_h);
            println!("b_i,\"{}\"", rep.b_i);
            print_rows(&[csv_row(
                p.name(),
                p.players(),
                p.rounds(),
                &rep.coalition,
                "1",
                rep.verified_value.numerator(),
                rep.verified_value.denominator(),
                mode_tag(params.mode),
                None,
                flags.seed,
            )]);
            Ok(())
        }
        AttackCmd::Multibit { spec, flags } => {
            let loaded = specio::load(spec)?;
            let p = loaded.protocol;
            let max_r = p.bits_per_round().iter().max().copied().unwrap_or(1);
            let params = flags.params(p.rounds(), p.players() * max_r)?;
            let rep = with_failure_report(
                bias_protocol_multibit(&p, &params, flags.seed),
                &flags.out,
                flags.seed,
                &params,
            )?;
            emit_json(&flags.out, &rep)?;
            println!("claimed,{}", rep.bit_report.claimed_value);
            println!("verified,{}", rep.verified_value);
            print_rows(&[csv_row(
                p.name(),
                p.players(),
                p.rounds(),
                &rep.coalition,
                "1",
                rep.verified_value.numerator(),
                rep.verified_value.denominator(),
                mode_tag(params.mode),
                None,
                flags.seed,
            )]);
            Ok(())
        }
    }
}

fn cmd_build(
    k: usize,
    players: u32,
    seed: u64,
    simulate: u64,
    out: &Option<String>,
    dump_assemblies: &Option<PathBuf>,
) -> Result<()> {
    let (cfg, warnings) = default_schedule(k, players)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let doc = specio::pipeline_doc(&cfg, players)?;
    let (p, shape) = construct::build_pipeline(&cfg, players)?;
    emit_json(out, &doc)?;
    println!("protocol,{}", p.name());
    println!("final_sets,{}", shape.final_sets);
    println!("resilient_arity,{}", shape.resilient_arity);
    if let Some(path) = dump_assemblies {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assemblies = construct::run_pipeline_assemblies(
            &cfg,
            players,
            &CoordSet::empty(),
            BadVotes::Honest,
            VoteEncoding::Mod,
            &mut rng,
        )?;
        #[derive(Serialize)]
        struct Snapshot {
            stage: usize,
            sets: Vec<Vec<u32>>,
            bad_sets: usize,
        }
        let snaps: Vec<Snapshot> = assemblies
            .iter()
            .enumerate()
            .map(|(i, a)| Snapshot {
                stage: i + 1,
                sets: a.sets().iter().map(|s| s.members().to_vec()).collect(),
                bad_sets: a.bad_set_count(),
            })
            .collect();
        std::fs::write(
            path,
            serde_json::to_string_pretty(&snaps).expect("serializes"),
        )?;
    }
    if simulate > 0 {
        let target = OutcomeTarget::Coin(true);
        let hits = parallel_honest_hits(&p, &target, simulate, seed, threads());
        let ci = crate::stats::hoeffding_halfwidth(simulate, crate::protocol::MC_CONFIDENCE)?;
        println!("bias_estimate,{}", hits as f64 / simulate as f64);
        println!("ci_halfwidth,{ci}");
        print_rows(&[csv_row(
            p.name(),
            players,
            k,
            &CoordSet::empty(),
            "1",
            hits as u128,
            simulate as u128,
            "mc",
            Some(simulate),
            seed,
        )]);
    } else {
        print_rows(&[]);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    spec: &std::path::Path,
    b: usize,
    gamma: f64,
    mode: CliEvalMode,
    trials: u64,
    seed: u64,
    out: &Option<String>,
) -> Result<()> {
    let loaded = specio::load(spec)?;
    let p = loaded.protocol;
    let mode = match mode {
        CliEvalMode::Exact => EvalMode::Exact,
        CliEvalMode::Mc => EvalMode::Mc,
    };
    let rep = resilience_check(&p, b, gamma, mode, trials, seed)?;
    emit_json(out, &rep)?;
    println!("resilient,{}", rep.resilient);
    println!("worst_target,{}", rep.worst_target);
    let (num, den, tag) = match (&rep.exact_value, mode) {
        (Some(v), _) => (v.numerator(), v.denominator(), "exact"),
        (None, _) => (
            (rep.value * trials as f64).round() as u128,
            trials as u128,
            "mc-lower-bound",
        ),
    };
    print_rows(&[csv_row(
        p.name(),
        p.players(),
        p.rounds(),
        &rep.worst_coalition,
        &rep.worst_target,
        num,
        den,
        tag,
        rep.trials,
        seed,
    )]);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Influence { spec } => cmd_influence(spec),
        Command::Attack { which } => cmd_attack(which),
        Command::Build {
            k,
            players,
            seed,
            simulate,
            out,
            dump_assemblies,
        } => cmd_build(*k, *players, *seed, *simulate, out, dump_assemblies),
        Command::Verify {
            spec,
            b,
            gamma,
            mode,
            trials,
            seed,
            out,
        } => cmd_verify(spec, *b, *gamma, *mode, *trials, *seed, out),
    }
}

pub fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_build_desk_params_with_overrides() {
        let flags = AttackFlags {
            gamma: 0.25,
            h: Some(8),
            c: None,
            r: Some(10),
            delta: None,
            candidates: Some(5),
            seed: 1,
            mode: CliParamMode::Desk,
            out: None,
        };
        let p = flags.params(2, 12).unwrap();
        assert_eq!(p.h, 8);
        assert_eq!(p.c, 1);
        assert_eq!(p.r, 10);
        assert_eq!(p.candidates, 5);
        assert_eq!(p.mode, ParamMode::DeskOverride);
    }

    #[test]
    fn paper_mode_surfaces_degenerate_schedules() {
        let flags = AttackFlags {
            gamma: 0.25,
            h: None,
            c: None,
            r: None,
            delta: None,
            candidates: None,
            seed: 0,
            mode: CliParamMode::Paper,
            out: None,
        };
        assert!(flags.params(2, 4096).is_err());
    }

    #[test]
    fn exit_codes_by_error_class() {
        let parse: CliError = BoolFnError::Parse("x".into()).into();
        assert_eq!(parse.exit_code(), 2);
        let assert_fail: CliError = AttackError::RuntimeAssert {
            what: "x".into(),
            trace: vec![],
        }
        .into();
        assert_eq!(assert_fail.exit_code(), 3);
        let capacity: CliError = ProtocolError::Capacity("x".into()).into();
        assert_eq!(capacity.exit_code(), 4);
        let schedule: CliError = ConstructError::Schedule {
            stage: "round 1".into(),
            reason: "x".into(),
        }
        .into();
        assert_eq!(schedule.exit_code(), 5);
    }

    #[test]
    fn parallel_mc_matches_sequential() {
        let p = crate::protocol::half_majority(8).unwrap();
        let target = OutcomeTarget::Coin(true);
        let seq = monte_carlo_value(&p, None, &target, 500, 3).unwrap().hits;
        let par = parallel_honest_hits(&p, &target, 500, 3, 4);
        assert_eq!(seq, par);
    }

    #[test]
    fn csv_row_shape() {
        let row = csv_row(
            "p",
            8,
            2,
            &CoordSet::singleton(3),
            "1",
            3,
            4,
            "desk-exact",
            None,
            7,
        );
        assert_eq!(row, "p,8,2,\"{3}\",1,3,4,desk-exact,,7");
        assert_eq!(CSV_HEADER.split(',').count(), row.split(',').count());
    }
}
