use std::collections::BTreeSet;
use std::fmt;

use crate::ast::{display_tuple, Literal, PredKey, Value};
use crate::error::Result;

use super::compile::{match_term, pattern_of, plan, undo, BodyEval, CLit, Db, Env};
use super::facts::{FactBase, Tuple};
use super::RuleSet;

/// How a proof step was justified.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Justification {
    /// Stored fact.
    Fact,
    /// Derived by the named rule from the children.
    Rule(String),
    /// Negation, comparison or count checked against the model.
    Check,
    /// Not derivable further within the depth bound.
    Elided,
}

/// A derivation tree for one ground atom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofNode {
    pub atom: String,
    pub why: Justification,
    pub children: Vec<ProofNode>,
}

impl ProofNode {
    pub fn leaf(atom: impl Into<String>, why: Justification) -> Self {
        ProofNode { atom: atom.into(), why, children: Vec::new() }
    }

    /// Nodes in post-order (premises before conclusions) with their depth.
    pub fn post_order(&self) -> Vec<(usize, &ProofNode)> {
        fn walk<'a>(n: &'a ProofNode, depth: usize, out: &mut Vec<(usize, &'a ProofNode)>) {
            for c in &n.children {
                walk(c, depth + 1, out);
            }
            out.push((depth, n));
        }
        let mut out = Vec::new();
        walk(self, 0, &mut out);
        out
    }
}

impl fmt::Display for ProofNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(n: &ProofNode, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let why = match &n.why {
                Justification::Fact => "fact".to_string(),
                Justification::Rule(r) => format!("by {r}"),
                Justification::Check => "check".to_string(),
                Justification::Elided => "...".to_string(),
            };
            writeln!(f, "{:indent$}{} [{why}]", "", n.atom, indent = depth * 2)?;
            n.children.iter().try_for_each(|c| walk(c, depth + 1, f))
        }
        walk(self, 0, f)
    }
}

const MAX_PROOF_DEPTH: usize = 48;

struct RankDb<'m> {
    model: &'m FactBase,
    below: u32,
}

impl Db for RankDb<'_> {
    fn scan(&mut self, _pos: usize, key: &PredKey, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        Ok(witnesses(self.model, key, pattern, self.below))
    }

    fn contains(&mut self, key: &PredKey, tuple: &[Value]) -> Result<bool> {
        Ok(self.model.contains_key(key, tuple))
    }
}

fn witnesses(model: &FactBase, key: &PredKey, pattern: &[Option<Value>], below: u32) -> Vec<Tuple> {
    match model.relation(key) {
        Some(rel) => rel
            .select(pattern, 0..rel.len())
            .into_iter()
            .map(|i| rel.get(i))
            .filter(|(_, r)| *r < below)
            .map(|(t, _)| t.clone())
            .collect(),
        None => Vec::new(),
    }
}

/// Builds a derivation of `tuple` from the saturated `model`. Each rule
/// application only uses premises derived in earlier rounds, so the proof is
/// well-founded.
pub(crate) fn prove(rules: &RuleSet, model: &FactBase, key: &PredKey, tuple: &[Value]) -> Option<ProofNode> {
    prove_at(rules, model, key, tuple, 0)
}

fn prove_at(rules: &RuleSet, model: &FactBase, key: &PredKey, tuple: &[Value], depth: usize) -> Option<ProofNode> {
    let atom = display_tuple(&key.name, tuple);
    let rank = model.relation(key)?.rank(tuple)?;
    if rank == 0 {
        return Some(ProofNode::leaf(atom, Justification::Fact));
    }
    if depth >= MAX_PROOF_DEPTH {
        return Some(ProofNode::leaf(atom, Justification::Elided));
    }
    for &ri in rules.by_head.get(key).map(Vec::as_slice).unwrap_or(&[]) {
        let rule = &rules.rules[ri];
        let mut env: Env = vec![None; rule.nvars()];
        let mut trail = Vec::new();
        if !rule.head.args.iter().zip(tuple).all(|(t, v)| match_term(t, v, &mut env, &mut trail)) {
            continue;
        }
        let bound: BTreeSet<usize> = (0..env.len()).filter(|&i| env[i].is_some()).collect();
        let order = plan(&rule.body, &bound, None);
        let mut db = RankDb { model, below: rank };
        let mut found: Option<Env> = None;
        let mut eval = BodyEval::new(rule);
        let ok = eval.run(&order, &mut env, &mut db, &mut |env| {
            found = Some(env.clone());
            Ok(false)
        });
        undo(&mut env, &mut trail, 0);
        let (Ok(_), Some(env)) = (ok, found) else { continue };
        let mut children = Vec::new();
        for (lit, src) in rule.body.iter().zip(&rule.source.body) {
            match lit {
                CLit::Pos(a) => {
                    let pattern = pattern_of(a, &env);
                    let w = witnesses(model, &a.key, &pattern, rank);
                    let child = w
                        .first()
                        .and_then(|t| prove_at(rules, model, &a.key, t, depth + 1))
                        .unwrap_or_else(|| ProofNode::leaf(super::compile::instantiate(src, rule, &env), Justification::Elided));
                    children.push(child);
                }
                _ => children.push(ProofNode::leaf(check_text(src, rule, &env), Justification::Check)),
            }
        }
        return Some(ProofNode { atom, why: Justification::Rule(rule.source.describe()), children });
    }
    None
}

fn check_text(src: &Literal, rule: &super::compile::CRule, env: &Env) -> String {
    super::compile::instantiate(src, rule, env)
}
