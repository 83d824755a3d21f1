//! Acceptance criteria. Prints one line per criterion and fails if any
//! criterion fails. Tolerances are pinned below.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use orbac::ast::*;
use orbac::decision::{is_permitted, Priority, Verdict};
use orbac::delegation::*;
use orbac::oracle::OracleWorld;
use orbac::orbac::*;
use orbac::persist::{load_state, save_state};
use orbac::policy_lang::{format_policy, parse_str, validate_program, SourcePolicy};
use orbac::Error;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

const SCENARIO_BUDGET: Duration = Duration::from_secs(1);
const DIFFERENTIAL_UNIVERSES: u64 = 200;
const DIFFERENTIAL_BUDGET: Duration = Duration::from_secs(60);
const INVERSE_PAIRS: u64 = 100;
const SCALE_SIZES: [usize; 4] = [50, 100, 200, 400];
const SCALE_BUDGET: Duration = Duration::from_secs(10);
/// Largest allowed runtime ratio when the number of delegations doubles:
/// a cubic trend gives 8.
const SCALE_MAX_RATIO: f64 = 10.0;
/// Timings below this floor are treated as equal to it, so that ratios of
/// very short runs do not measure noise.
const SCALE_FLOOR: Duration = Duration::from_millis(20);

const NOTES: &str = include_str!("../../../policies/notes.orb");
const SINGLE: &str = include_str!("../../../policies/single_delegation.orb");
const CASCADE: &str = include_str!("../../../policies/cascade.orb");
const ROLES: &str = include_str!("../../../policies/roles.orb");
const MUTUAL_NEGATION: &str = include_str!("../../../policies/invalid/mutual_negation.orb");
const COUNT_CYCLE: &str = include_str!("../../../policies/invalid/count_cycle.orb");

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn load(text: &str) -> PolicyState {
    PolicyState::from_source(&SourcePolicy::inline(text), EngineConfig::default()).unwrap()
}

fn verdict(state: &PolicyState, s: &str, a: &str, o: &str, at: Timestamp) -> Verdict {
    is_permitted(s, a, o, at, &state.snapshot()).unwrap().verdict
}

fn now() -> Timestamp {
    ts("2007-05-01T10:00:00Z")
}

fn timed(name: &str, f: impl FnOnce() -> Result<(), String>) -> Result<Duration, String> {
    let start = Instant::now();
    f().map_err(|e| format!("{name}: {e}"))?;
    let took = start.elapsed();
    check(took < SCENARIO_BUDGET, format!("{name} took {took:?}"))?;
    Ok(took)
}

fn note_delegation(state: &mut PolicyState, grantee: &str, target: &str, ctx: &str) -> orbac::Result<Symbol> {
    delegate_license(
        state,
        &DelegationRequest::license("john", "note_delegation", grantee, "update", target, Value::sym(ctx), now()),
    )
}

fn scenarios() -> Outcome {
    let mut times = Vec::new();
    times.push(timed("(a)", || {
        let mut st = load(NOTES);
        note_delegation(&mut st, "mary", "john_stud_notes", NOMINAL).map_err(|e| e.to_string())?;
        let p = [Value::sym("mary"), Value::sym("update"), Value::sym("john_stud_notes"), Value::sym(NOMINAL)];
        check(st.snapshot().holds("permission", &p).unwrap(), "permission(mary, update, john_stud_notes, nominal) missing")?;
        check(verdict(&st, "mary", "update", "note1", now()) == Verdict::Allow, "mary denied on note1")
    })?);
    times.push(timed("(b)", || {
        let mut st = load(NOTES);
        note_delegation(&mut st, "mary", "john_stud_notes", "during_john_vacation").map_err(|e| e.to_string())?;
        for (t, want) in [
            ("2007-06-30T23:59:59Z", Verdict::Deny),
            ("2007-07-01T00:00:00Z", Verdict::Allow),
            ("2007-07-20T12:00:00Z", Verdict::Allow),
            ("2007-07-31T23:59:59Z", Verdict::Allow),
            ("2007-08-01T00:00:00Z", Verdict::Deny),
        ] {
            check(verdict(&st, "mary", "update", "note1", ts(t)) == want, format!("mary at {t}"))?;
        }
        Ok(())
    })?);
    times.push(timed("(c)", || {
        let mut st = load(NOTES);
        transfer_license(
            &mut st,
            &DelegationRequest::license("john", "license_transfer", "mary", "update", "john_stud_notes", Value::sym("during_john_vacation"), now()),
        )
        .map_err(|e| e.to_string())?;
        let d = is_permitted("john", "update", "note1", ts("2007-07-10T00:00:00Z"), &st.snapshot()).unwrap();
        check(d.verdict == Verdict::Deny && d.priority == Priority::Max, format!("john: {} at {}", d.verdict, d.priority))?;
        check(verdict(&st, "john", "update", "note1", ts("2007-09-10T00:00:00Z")) == Verdict::Allow, "john after vacation")
    })?);
    times.push(timed("(d)", || {
        let mut st = load(SINGLE);
        note_delegation(&mut st, "mary", "john_stud_notes", NOMINAL).map_err(|e| e.to_string())?;
        for target in ["master_stud_notes", "john_stud_notes"] {
            let r = note_delegation(&mut st, "alice", target, NOMINAL);
            check(matches!(r, Err(Error::MultiDelegationExceeded(1))), format!("second delegation of {target}: {r:?}"))?;
        }
        Ok(())
    })?);
    times.push(timed("(e)", || {
        let mut st = load(NOTES);
        let l1 = note_delegation(&mut st, "mary", "john_stud_notes", NOMINAL).map_err(|e| e.to_string())?;
        grant_delegation_right(&mut st, &GrantOptionRequest::new("john", "mary", &l1, 3, Value::sym(NOMINAL), now()))
            .map_err(|e| e.to_string())?;
        for level in 0..=2 {
            let mut s = st.clone();
            grant_delegation_right(&mut s, &GrantOptionRequest::new("mary", "alice", &l1, level, Value::sym(NOMINAL), now()))
                .map_err(|e| format!("level {level}: {e}"))?;
        }
        for level in 3..=5 {
            let r = grant_delegation_right(&mut st, &GrantOptionRequest::new("mary", "alice", &l1, level, Value::sym(NOMINAL), now()));
            check(matches!(r, Err(Error::InvalidLevel(_))), format!("level {level}: {r:?}"))?;
        }
        Ok(())
    })?);
    let slowest = times.iter().max().unwrap();
    Ok(format!("(a)-(e) reproduced, slowest {slowest:?} (budget {SCENARIO_BUDGET:?})"))
}

fn differential() -> Outcome {
    let start = Instant::now();
    let (mut queries, mut events) = (0usize, 0usize);
    for seed in 0..DIFFERENTIAL_UNIVERSES {
        let mut rng = StdRng::seed_from_u64(seed);
        let u = random_universe(&mut rng, EngineConfig::default());
        events += u.applied;
        let world = OracleWorld::new(&u.state).map_err(|e| format!("seed {seed}: {e}"))?;
        let snap = u.state.snapshot();
        for at in query_times() {
            for s in &u.subjects {
                for a in &u.actions {
                    for o in &u.objects {
                        let engine = is_permitted(s, a, o, at, &snap).map(|d| d.verdict);
                        let oracle = world.decide(s, a, o, at);
                        let agree = match (&engine, &oracle) {
                            (Ok(x), Ok(y)) => x == y,
                            (Err(_), Err(_)) => true,
                            _ => false,
                        };
                        check(agree, format!("seed {seed}: {s} {a} {o}: {engine:?} vs {oracle:?}"))?;
                        queries += 1;
                    }
                }
            }
        }
    }
    let took = start.elapsed();
    check(took < DIFFERENTIAL_BUDGET, format!("took {took:?}"))?;
    Ok(format!("{DIFFERENTIAL_UNIVERSES} universes, {events} applied events, {queries} queries, 100% agreement in {took:.2?}"))
}

fn stratification() -> Outcome {
    for mode in [MultiDelegationMode::Strict, MultiDelegationMode::Equiv] {
        let report = validate_program(&builtin_program(mode));
        check(report.is_empty(), format!("built-in rules ({mode:?}): {report}"))?;
    }
    let mut witnesses = Vec::new();
    for (name, text) in [("mutual negation", MUTUAL_NEGATION), ("count cycle", COUNT_CYCLE)] {
        let report = validate_program(&parse_str(text).unwrap());
        match &report.stratification {
            Err(w) if !w.edges.is_empty() => witnesses.push(format!("{name}: {w}")),
            _ => return Err(format!("{name} accepted")),
        }
        let refused = PolicyState::from_source(&SourcePolicy::inline(text), EngineConfig::default());
        check(matches!(refused, Err(Error::NonStratifiable(_))), format!("{name} loaded"))?;
    }
    Ok(format!("built-ins clean; rejected {}", witnesses.join(" | ")))
}

fn chain(len: usize) -> (PolicyState, Vec<Symbol>) {
    let mut st = load(CASCADE);
    let ids = (0..len)
        .map(|k| {
            delegate_license(
                &mut st,
                &DelegationRequest::license(&format!("u{k}"), "cascading_delegation", &format!("u{}", k + 1), "read", "reports", Value::sym(NOMINAL), now()),
            )
            .unwrap()
        })
        .collect();
    (st, ids)
}

fn cascading() -> Outcome {
    let mut cases = 0;
    for len in 1..=6 {
        for k in 0..len {
            let (mut st, ids) = chain(len);
            let before: Vec<Verdict> = (0..=len).map(|j| verdict(&st, &format!("u{j}"), "read", "doc", now())).collect();
            check(before.iter().all(|v| *v == Verdict::Allow), format!("chain {len} not fully allowed"))?;
            revoke(&mut st, &RevocationRequest::new(&format!("u{k}"), &ids[k], now())).map_err(|e| e.to_string())?;
            for j in 0..=len {
                let after = verdict(&st, &format!("u{j}"), "read", "doc", now());
                let want = if j > k { Verdict::Deny } else { before[j] };
                check(after == want, format!("chain {len}, revoke {k}: u{j} is {after}"))?;
            }
            cases += 1;
        }
    }
    let mut cycles = 0;
    for len in 2..=6 {
        let mut st = load(CASCADE);
        for k in 1..=len {
            let next = if k == len { 1 } else { k + 1 };
            delegate_license(
                &mut st,
                &DelegationRequest::license(&format!("u{k}"), "cascading_delegation", &format!("u{next}"), "read", "reports", Value::sym(NOMINAL), now()),
            )
            .map_err(|e| e.to_string())?;
        }
        for k in 1..=len {
            check(verdict(&st, &format!("u{k}"), "read", "doc", now()) == Verdict::Deny, format!("cycle {len}: u{k} allowed"))?;
        }
        cycles += 1;
    }
    Ok(format!("{cases} chain revocations (lengths 1-6) and {cycles} ungrounded cycles behave as required"))
}

fn inverse() -> Outcome {
    let subjects = ["john", "peter", "mary", "alice"];
    let actions = ["update", "write", "delegate", "revoke"];
    let objects = ["note1", "note2", "master_stud_notes"];
    let targets = ["john_stud_notes", "master_stud_notes", "note1", "stud_notes", "note2"];
    let table = |st: &PolicyState| -> Vec<Result<Verdict, String>> {
        let snap = st.snapshot();
        let mut out = Vec::new();
        for at in [now(), ts("2007-07-15T00:00:00Z")] {
            for s in subjects {
                for a in actions {
                    for o in objects {
                        out.push(is_permitted(s, a, o, at, &snap).map(|d| d.verdict).map_err(|e| e.code().to_string()));
                    }
                }
            }
        }
        out
    };
    let mut rng = StdRng::seed_from_u64(7);
    let mut base = load(NOTES);
    note_delegation(&mut base, "alice", "note2", NOMINAL).unwrap();
    let reference = table(&base);
    for i in 0..INVERSE_PAIRS {
        let mut st = base.clone();
        let grantee = *["mary", "alice", "peter"].choose(&mut rng).unwrap();
        let target = *targets.choose(&mut rng).unwrap();
        let ctx = if rng.gen_bool(0.5) { NOMINAL } else { "during_john_vacation" };
        let id = note_delegation(&mut st, grantee, target, ctx).map_err(|e| format!("pair {i}: {e}"))?;
        revoke(&mut st, &RevocationRequest::new("john", &id, now())).map_err(|e| format!("pair {i}: {e}"))?;
        check(table(&st) == reference, format!("pair {i}: delegate {grantee} {target} then revoke changed decisions"))?;
    }
    Ok(format!("{INVERSE_PAIRS} delegate/revoke pairs restore all {} decisions", reference.len()))
}

fn scale_policy(n: usize) -> String {
    let mut t = String::from(
        "permission(staff, delegate, license_delegation, nominal).\n#view v1 sub_view_of v0.\n#view v2 sub_view_of v0.\n#view v3 sub_view_of v1.\n",
    );
    for i in 0..20 {
        t.push_str(&format!("use(o{i}, v{}).\n", i % 4));
    }
    for i in 0..n {
        let id = format!("l{i}");
        t.push_str(&format!("empower(s{}, staff).\n", i % 40));
        t.push_str(&format!("use({id}, license_delegation). grantor({id}, s{}). grantee({id}, s{}).\n", i % 40, (i * 7 + 3) % 40));
        let target = if i % 3 == 0 { format!("v{}", i % 4) } else { format!("o{}", i % 20) };
        let ctx = ["nominal", "day", "day & night"][i % 3];
        t.push_str(&format!("privilege({id}, {}). target({id}, {target}). context({id}, {ctx}).\n", ["read", "write"][i % 2]));
    }
    t.push_str("#context day temporal 2024-01-01T08:00:00Z 2024-01-01T18:00:00Z.\n");
    t.push_str("#context night temporal 2024-01-01T18:00:01Z 2024-01-02T07:59:59Z.\n");
    t
}

fn complexity() -> Outcome {
    let mut times = Vec::new();
    for n in SCALE_SIZES {
        let program = parse_str(&scale_policy(n)).unwrap();
        let start = Instant::now();
        let st = PolicyState::new(program, EngineConfig::default()).map_err(|e| format!("n={n}: {e}"))?;
        let took = start.elapsed();
        check(took < SCALE_BUDGET, format!("n={n} took {took:?}"))?;
        check(st.snapshot().model().len() > n, "empty model")?;
        times.push(took);
    }
    let mut ratios = Vec::new();
    for w in times.windows(2) {
        let (a, b) = (w[0].max(SCALE_FLOOR), w[1].max(SCALE_FLOOR));
        let r = b.as_secs_f64() / a.as_secs_f64();
        check(r <= SCALE_MAX_RATIO, format!("doubling ratio {r:.2} exceeds {SCALE_MAX_RATIO}: {times:?}"))?;
        ratios.push(format!("{r:.2}"));
    }
    let shown: Vec<String> = SCALE_SIZES.iter().zip(&times).map(|(n, t)| format!("n={n}: {t:.2?}")).collect();
    Ok(format!("{}; doubling ratios {} (max {SCALE_MAX_RATIO})", shown.join(", "), ratios.join(", ")))
}

fn round_trips() -> Outcome {
    let corpus = [("notes", NOTES), ("single_delegation", SINGLE), ("cascade", CASCADE), ("roles", ROLES), ("mutual_negation", MUTUAL_NEGATION), ("count_cycle", COUNT_CYCLE)];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut states = 0;
    for (name, text) in corpus {
        let p = parse_str(text).map_err(|e| format!("{name}: {e}"))?;
        let again = parse_str(&format_policy(&p)).map_err(|e| format!("{name}: {e}"))?;
        check(again == p, format!("{name}: format/parse changed the program"))?;
        let Ok(mut st) = PolicyState::from_source(&SourcePolicy::inline(text), EngineConfig::default()) else { continue };
        if name == "notes" {
            note_delegation(&mut st, "mary", "john_stud_notes", NOMINAL).unwrap();
        }
        let path = dir.path().join(format!("{name}.orb"));
        save_state(&st, &path).map_err(|e| e.to_string())?;
        let back = load_state(&path).map_err(|e| format!("{name}: {e}"))?;
        check(back.program() == st.program() && back.next_id() == st.next_id(), format!("{name}: state changed"))?;
        let (a, b) = (OracleWorld::new(&st).unwrap(), OracleWorld::new(&back).unwrap());
        check(a.model().atoms() == b.model().atoms(), format!("{name}: model changed"))?;
        states += 1;
    }
    Ok(format!("{} corpus files round-trip through format/parse; {states} states through save/load", corpus.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("scenario suite", scenarios),
        ("differential testing against the oracle", differential),
        ("stratification", stratification),
        ("cascading revocation", cascading),
        ("delegate/revoke inverse", inverse),
        ("polynomial scaling", complexity),
        ("round-trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
