//! `orbac`: validate policies, script delegations, answer access queries.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use orbac::ast::{format_timestamp, parse_timestamp, Symbol, Timestamp, Value};
use orbac::decision::{explain, is_permitted};
use orbac::delegation::*;
use orbac::oracle::differential_check;
use orbac::orbac::{builtin_program, EngineConfig, MultiDelegationMode, PolicyState};
use orbac::persist::{load_state_with, save_state};
use orbac::policy_lang::{parse_str, parse_with_origin, validate_program, SourcePolicy};
use orbac::Error;

const EXIT_ALLOW: u8 = 0;
const EXIT_DENY: u8 = 1;
const EXIT_POLICY: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "orbac", version, about = "Contextual access control with delegation and revocation")]
struct Cli {
    /// Compare every ground decision of the state with the reference
    /// evaluator after the command.
    #[arg(long, global = true)]
    check_oracle: bool,

    /// Audit log path; defaults to `<state>.audit`.
    #[arg(long, global = true)]
    audit: Option<PathBuf>,

    /// Count only equivalent delegations against `max_multi_delegation`.
    #[arg(long, global = true)]
    equiv_multi_delegation: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a policy file.
    Check { file: PathBuf },
    /// Build a state from a policy file, replaying its events.
    Load {
        file: PathBuf,
        #[arg(long, env = "ORBAC_STATE")]
        state: PathBuf,
    },
    /// Decide an access request: `query [STATE] SUBJECT ACTION OBJECT`.
    Query {
        #[arg(num_args = 3..=4, required = true)]
        args: Vec<String>,
        #[arg(long)]
        at: Option<String>,
        /// Print the derivation of the decision.
        #[arg(long)]
        trace: bool,
    },
    /// Delegate a license or a role.
    Delegate(DelegateArgs),
    /// Transfer a license: the grantor loses it while its context holds.
    Transfer(DelegateArgs),
    /// Grant the right to delegate a license further.
    GrantOption(GrantArgs),
    /// Revoke a delegated object.
    Revoke(RevokeArgs),
    /// Print the state as policy text.
    Dump {
        #[arg(env = "ORBAC_STATE")]
        state: PathBuf,
    },
}

#[derive(Args, Debug)]
struct DelegateArgs {
    #[arg(env = "ORBAC_STATE")]
    state: PathBuf,
    #[arg(long)]
    grantor: String,
    #[arg(long)]
    view: String,
    #[arg(long)]
    grantee: Option<String>,
    #[arg(long)]
    privilege: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = "nominal")]
    context: String,
    #[arg(long)]
    assignee: Option<String>,
    #[arg(long)]
    assignment: Option<String>,
    #[arg(long)]
    at: Option<String>,
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args, Debug)]
struct GrantArgs {
    #[arg(env = "ORBAC_STATE")]
    state: PathBuf,
    #[arg(long)]
    grantor: String,
    #[arg(long)]
    grantee: String,
    #[arg(long)]
    target: String,
    #[arg(long, allow_hyphen_values = true)]
    level: i64,
    #[arg(long, default_value = "nominal")]
    context: String,
    #[arg(long)]
    at: Option<String>,
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args, Debug)]
struct RevokeArgs {
    #[arg(env = "ORBAC_STATE")]
    state: PathBuf,
    #[arg(long)]
    actor: String,
    #[arg(long)]
    object: String,
    #[arg(long)]
    at: Option<String>,
}

enum Failure {
    Usage(String),
    Policy(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Policy(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Policy(Error::from(e))
    }
}

type CliResult<T> = Result<T, Failure>;

fn timestamp(arg: &Option<String>) -> CliResult<Timestamp> {
    match arg {
        None => Ok(DateTime::<Utc>::from(SystemTime::now())),
        Some(s) => parse_timestamp(s).ok_or_else(|| Failure::Usage(format!("invalid timestamp `{s}` (expected YYYY-MM-DDTHH:MM:SSZ)"))),
    }
}

fn context_value(text: &str) -> CliResult<Value> {
    let probe = parse_str(&format!("ctx({text}).")).map_err(|e| Failure::Usage(format!("invalid context `{text}`: {e}")))?;
    let value = probe.facts().next().and_then(|a| a.args.first()).and_then(|t| t.to_value());
    value.ok_or_else(|| Failure::Usage(format!("context `{text}` must be ground")))
}

/// Holds an advisory lock on `<state>.lock` for the life of the value.
struct StateLock {
    _file: File,
}

impl StateLock {
    fn acquire(state: &Path, exclusive: bool) -> CliResult<Self> {
        let mut name = state.as_os_str().to_owned();
        name.push(".lock");
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(PathBuf::from(name))?;
        if exclusive {
            file.lock()?;
        } else {
            file.lock_shared()?;
        }
        Ok(StateLock { _file: file })
    }
}

struct Audit {
    path: PathBuf,
}

impl Audit {
    fn new(explicit: &Option<PathBuf>, state: &Path) -> Self {
        let path = explicit.clone().unwrap_or_else(|| {
            let mut name = state.as_os_str().to_owned();
            name.push(".audit");
            PathBuf::from(name)
        });
        Audit { path }
    }

    fn next_seq(&self) -> io::Result<u64> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(1),
            Err(e) => return Err(e),
        };
        let last = text.lines().filter_map(|l| l.split('\t').next()?.parse::<u64>().ok()).max().unwrap_or(0);
        Ok(last + 1)
    }

    /// Appends one record with a single write, so a crash leaves either the
    /// whole line or nothing.
    fn append(&self, actor: &str, op: &str, object: &str, outcome: &str) -> io::Result<()> {
        let seq = self.next_seq()?;
        let now = format_timestamp(&DateTime::<Utc>::from(SystemTime::now()));
        let line = format!("{seq}\t{now}\t{actor}\t{op}\t{object}\t{outcome}\n");
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }
}

fn config(cli: &Cli) -> EngineConfig {
    let mut c = EngineConfig::default();
    if cli.equiv_multi_delegation {
        c.multi_delegation = MultiDelegationMode::Equiv;
    }
    c
}

fn load(path: &Path, cli: &Cli) -> CliResult<PolicyState> {
    Ok(load_state_with(path, config(cli))?)
}

fn oracle_report(state: &PolicyState, at: Timestamp) -> CliResult<u8> {
    let (n, mismatches) = differential_check(state, at)?;
    println!("oracle: {n} queries, {} mismatches", mismatches.len());
    for m in &mismatches {
        println!("  {} {} {}: engine {}, oracle {}", m.subject, m.action, m.object, m.engine, m.oracle);
    }
    Ok(if mismatches.is_empty() { EXIT_ALLOW } else { EXIT_POLICY })
}

/// Runs one mutation under the state lock, saves on success and appends
/// one audit record either way.
fn mutate(
    cli: &Cli,
    state_path: &Path,
    actor: &str,
    op: &str,
    fallback_object: &str,
    at: Timestamp,
    f: impl FnOnce(&mut PolicyState) -> orbac::Result<Option<Symbol>>,
) -> CliResult<u8> {
    let _lock = StateLock::acquire(state_path, true)?;
    let audit = Audit::new(&cli.audit, state_path);
    let mut state = load(state_path, cli)?;
    match f(&mut state) {
        Ok(made) => {
            save_state(&state, state_path)?;
            let object = made.as_deref().unwrap_or(fallback_object).to_string();
            audit.append(actor, op, &object, "ok")?;
            println!("ok {object}");
            if cli.check_oracle {
                return oracle_report(&state, at);
            }
            Ok(EXIT_ALLOW)
        }
        Err(e) => {
            audit.append(actor, op, fallback_object, &format!("err:{}", e.code()))?;
            Err(Failure::Policy(e))
        }
    }
}

fn license_request(a: &DelegateArgs) -> CliResult<DelegationRequest> {
    let at = timestamp(&a.at)?;
    let need = |v: &Option<String>, flag: &str| v.clone().ok_or_else(|| Failure::Usage(format!("missing --{flag}")));
    let req = if a.assignee.is_some() || a.assignment.is_some() {
        DelegationRequest::role(&a.grantor, &a.view, &need(&a.assignee, "assignee")?, &need(&a.assignment, "assignment")?, at)
    } else {
        DelegationRequest::license(
            &a.grantor,
            &a.view,
            &need(&a.grantee, "grantee")?,
            &need(&a.privilege, "privilege")?,
            &need(&a.target, "target")?,
            context_value(&a.context)?,
            at,
        )
    };
    Ok(match &a.id {
        Some(id) => req.with_id(id),
        None => req,
    })
}

fn run(cli: &Cli) -> CliResult<u8> {
    match &cli.command {
        Command::Check { file } => {
            let text = fs::read_to_string(file)?;
            let program = parse_with_origin(&SourcePolicy::new(text, file.display().to_string()))?;
            let mut combined = builtin_program(config(cli).multi_delegation);
            combined.extend(&program);
            let report = validate_program(&combined);
            if report.is_empty() {
                println!("ok");
                Ok(EXIT_ALLOW)
            } else {
                print!("{report}");
                Ok(EXIT_POLICY)
            }
        }
        Command::Load { file, state } => {
            let _lock = StateLock::acquire(state, true)?;
            let audit = Audit::new(&cli.audit, state);
            let text = fs::read_to_string(file)?;
            let built = PolicyState::from_source(&SourcePolicy::new(text, file.display().to_string()), config(cli));
            let name = file.display().to_string();
            match built {
                Ok(st) => {
                    save_state(&st, state)?;
                    audit.append("-", "load", &name, "ok")?;
                    println!("ok {}", state.display());
                    if cli.check_oracle {
                        return oracle_report(&st, DateTime::<Utc>::from(SystemTime::now()));
                    }
                    Ok(EXIT_ALLOW)
                }
                Err(e) => {
                    audit.append("-", "load", &name, &format!("err:{}", e.code()))?;
                    Err(e.into())
                }
            }
        }
        Command::Query { args, at, trace } => {
            match args.len() {
                3 | 4 => {}
                n => return Err(Failure::Usage(format!("query takes SUBJECT ACTION OBJECT with an optional leading STATE, got {n} arguments"))),
            };
            let (state_path, rest) = match args.len() {
                4 => (PathBuf::from(&args[0]), &args[1..]),
                _ => match std::env::var_os("ORBAC_STATE") {
                    Some(p) => (PathBuf::from(p), &args[..]),
                    None => return Err(Failure::Usage("no state file given and ORBAC_STATE is not set".into())),
                },
            };
            let at = timestamp(at)?;
            let _lock = StateLock::acquire(&state_path, false)?;
            let state = load(&state_path, cli)?;
            let d = is_permitted(&rest[0], &rest[1], &rest[2], at, &state.snapshot())?;
            println!("{}", d.verdict);
            if *trace {
                print!("{}", explain(&d));
            }
            if cli.check_oracle {
                let code = oracle_report(&state, at)?;
                if code != EXIT_ALLOW {
                    return Ok(code);
                }
            }
            Ok(if d.is_allow() { EXIT_ALLOW } else { EXIT_DENY })
        }
        Command::Delegate(a) | Command::Transfer(a) => {
            let transfer = matches!(cli.command, Command::Transfer(_));
            let req = license_request(a)?;
            let op = if transfer { "transfer" } else { "delegate" };
            if transfer && a.assignee.is_some() {
                return Err(Failure::Policy(Error::Unsupported("role transfer".into())));
            }
            let fallback = a.id.clone().unwrap_or_else(|| "-".into());
            mutate(cli, &a.state, &a.grantor, op, &fallback, req.at, |st| {
                let made = match (&req.attrs, transfer) {
                    (orbac::ast::ObjectAttrs::Role { .. }, _) => delegate_role(st, &req)?,
                    (_, true) => transfer_license(st, &req)?,
                    (_, false) => delegate_license(st, &req)?,
                };
                Ok(Some(made))
            })
        }
        Command::GrantOption(g) => {
            let at = timestamp(&g.at)?;
            let mut req = GrantOptionRequest::new(&g.grantor, &g.grantee, &g.target, g.level, context_value(&g.context)?, at);
            if let Some(id) = &g.id {
                req = req.with_id(id);
            }
            let fallback = g.id.clone().unwrap_or_else(|| "-".into());
            mutate(cli, &g.state, &g.grantor, "grant-option", &fallback, at, |st| grant_delegation_right(st, &req).map(Some))
        }
        Command::Revoke(r) => {
            let at = timestamp(&r.at)?;
            let req = RevocationRequest::new(&r.actor, &r.object, at);
            mutate(cli, &r.state, &r.actor, "revoke", &r.object, at, |st| revoke(st, &req).map(|_| None))
        }
        Command::Dump { state } => {
            let _lock = StateLock::acquire(state, false)?;
            let st = load(state, cli)?;
            print!("{}", st.to_policy_text());
            if cli.check_oracle {
                return oracle_report(&st, DateTime::<Utc>::from(SystemTime::now()));
            }
            Ok(EXIT_ALLOW)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_ALLOW };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Policy(e)) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(EXIT_POLICY)
        }
    }
}
