#![allow(dead_code)]

use orbac::ast::*;
use orbac::delegation::*;
use orbac::orbac::*;
use orbac::policy_lang::SourcePolicy;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub const DAY_START: &str = "2024-01-01T08:00:00Z";
pub const DAY_END: &str = "2024-01-01T18:00:00Z";

pub fn ts(s: &str) -> Timestamp {
    parse_timestamp(s).unwrap()
}

/// A random small universe: up to six constants per sort and up to twelve
/// delegation events, applied through the delegation API. Refused events
/// are dropped.
pub struct Universe {
    pub state: PolicyState,
    pub subjects: Vec<String>,
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub applied: usize,
}

fn pick<'a>(rng: &mut StdRng, xs: &'a [String]) -> &'a str {
    xs.choose(rng).unwrap()
}

pub fn random_policy(rng: &mut StdRng) -> (String, Vec<String>, Vec<String>, Vec<String>, Vec<String>) {
    let subjects: Vec<String> = (0..rng.gen_range(3..=6)).map(|i| format!("u{i}")).collect();
    let roles: Vec<String> = (0..rng.gen_range(1..=3)).map(|i| format!("r{i}")).collect();
    let objects: Vec<String> = (0..rng.gen_range(2..=4)).map(|i| format!("o{i}")).collect();
    let views: Vec<String> = (0..rng.gen_range(1..=3)).map(|i| format!("v{i}")).collect();
    let actions: Vec<String> = ["read", "write"].iter().map(|s| s.to_string()).collect();
    let contexts = ["nominal", "nominal", "day", "night"];
    let mut t = String::new();
    t.push_str(&format!("#context day temporal {DAY_START} {DAY_END}.\n"));
    t.push_str("#context night temporal 2024-01-01T18:00:01Z 2024-01-02T07:59:59Z.\n");
    if views.len() > 1 && rng.gen_bool(0.5) {
        t.push_str(&format!("#view {} sub_view_of {}.\n", views[1], views[0]));
    }
    if rng.gen_bool(0.3) {
        t.push_str("consider(write, read).\n");
    }
    for s in &subjects {
        let home = pick(rng, &roles).to_string();
        for r in &roles {
            if *r == home || rng.gen_bool(0.3) {
                t.push_str(&format!("empower({s}, {r}).\n"));
            }
        }
    }
    for o in &objects {
        t.push_str(&format!("use({o}, {}).\n", pick(rng, &views)));
    }
    let holder = |rng: &mut StdRng| -> String {
        if rng.gen_bool(0.6) {
            pick(rng, &roles).to_string()
        } else {
            pick(rng, &subjects).to_string()
        }
    };
    for _ in 0..rng.gen_range(1..=4) {
        let target = if rng.gen_bool(0.6) { pick(rng, &views).to_string() } else { pick(rng, &objects).to_string() };
        let h = holder(rng);
        let a = pick(rng, &actions).to_string();
        let c = contexts.choose(rng).unwrap();
        if rng.gen_bool(0.3) {
            t.push_str(&format!("permission({h}, {a}, {target}, {c}, {}).\n", rng.gen_range(0..4)));
        } else {
            t.push_str(&format!("permission({h}, {a}, {target}, {c}).\n"));
        }
    }
    for _ in 0..rng.gen_range(0..=2) {
        let target = if rng.gen_bool(0.5) { pick(rng, &views).to_string() } else { pick(rng, &objects).to_string() };
        let h = holder(rng);
        let a = pick(rng, &actions).to_string();
        let c = contexts.choose(rng).unwrap();
        t.push_str(&format!("prohibition({h}, {a}, {target}, {c}, {}).\n", rng.gen_range(0..4)));
    }
    let admin = ["license_delegation", "cascading_delegation", "license_transfer", "grant_option_license", "role_delegation"];
    for _ in 0..rng.gen_range(2..=5) {
        let h = if rng.gen_bool(0.8) { pick(rng, &roles).to_string() } else { pick(rng, &subjects).to_string() };
        let v = admin.choose(rng).unwrap();
        let c = if rng.gen_bool(0.2) {
            format!("max_multi_delegation({})", rng.gen_range(1..=2))
        } else {
            contexts.choose(rng).unwrap().to_string()
        };
        t.push_str(&format!("permission({h}, delegate, {v}, {c}).\n"));
    }
    for v in ["license_delegation", "grant_option_license", "role_delegation"] {
        if rng.gen_bool(0.6) {
            let c = match v {
                "role_delegation" => ["gdr", "gidr"].choose(rng).unwrap(),
                _ => ["gd", "gid"].choose(rng).unwrap(),
            };
            t.push_str(&format!("permission({}, revoke, {v}, {c}).\n", holder(rng)));
        }
    }
    (t, subjects, roles, objects, views)
}

pub fn random_universe(rng: &mut StdRng, config: EngineConfig) -> Universe {
    let (text, subjects, roles, objects, views) = random_policy(rng);
    let mut state = PolicyState::from_source(&SourcePolicy::inline(text.clone()), config).unwrap_or_else(|e| panic!("{e}\n{text}"));
    let now = ts("2024-01-01T12:00:00Z");
    let actions = vec!["read".to_string(), "write".to_string(), DELEGATE.to_string(), REVOKE.to_string()];
    let mut applied = 0;
    let mut licenses: Vec<Symbol> = Vec::new();
    let mut objects_made: Vec<Symbol> = Vec::new();
    for _ in 0..rng.gen_range(4..=12) {
        let grantor = pick(rng, &subjects).to_string();
        let grantee = pick(rng, &subjects).to_string();
        let target = if rng.gen_bool(0.5) { pick(rng, &views).to_string() } else { pick(rng, &objects).to_string() };
        let privilege = pick(rng, &actions[..2]).to_string();
        let ctx = Value::sym(["nominal", "nominal", "day"].choose(rng).unwrap());
        let r = match rng.gen_range(0..6) {
            0 | 1 => delegate_license(
                &mut state,
                &DelegationRequest::license(&grantor, "license_delegation", &grantee, &privilege, &target, ctx, now),
            ),
            2 => delegate_license(
                &mut state,
                &DelegationRequest::license(&grantor, "cascading_delegation", &grantee, &privilege, &target, ctx, now),
            ),
            3 => transfer_license(
                &mut state,
                &DelegationRequest::license(&grantor, "license_transfer", &grantee, &privilege, &target, ctx, now),
            ),
            4 if !licenses.is_empty() => {
                let lic = licenses.choose(rng).unwrap().to_string();
                grant_delegation_right(
                    &mut state,
                    &GrantOptionRequest::new(&grantor, &grantee, &lic, rng.gen_range(0..=3), ctx, now),
                )
            }
            4 => delegate_role(
                &mut state,
                &DelegationRequest::role(&grantor, "role_delegation", &grantee, pick(rng, &roles), now),
            ),
            _ if !objects_made.is_empty() => {
                let id = objects_made.choose(rng).unwrap().to_string();
                revoke(&mut state, &RevocationRequest::new(&grantor, &id, now)).map(|_| sym(&id))
            }
            _ => continue,
        };
        if let Ok(id) = r {
            applied += 1;
            if !(*id).is_empty() && !objects_made.contains(&id) {
                objects_made.push(id.clone());
                if state.snapshot().attribute(&id, "privilege").is_some() {
                    licenses.push(id);
                }
            }
        }
    }
    let mut all_objects = objects.clone();
    all_objects.extend(objects_made.iter().take(2).map(|s| s.to_string()));
    Universe { state, subjects, actions, objects: all_objects, applied }
}

pub fn query_times() -> [Timestamp; 2] {
    [ts("2024-01-01T12:00:00Z"), ts("2024-01-01T22:00:00Z")]
}
