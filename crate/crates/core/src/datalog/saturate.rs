use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;

use crate::ast::{PredKey, Value};
use crate::error::{Error, Result};

use super::compile::{head_tuple, plan, BodyEval, CLit, CRule, Db, Env, Plan};
use super::facts::{FactBase, Tuple};
use super::stratify::Strata;

/// Default cap on the number of derived facts.
pub const DEFAULT_FACT_LIMIT: usize = 1_000_000;

struct SatDb<'m> {
    model: &'m FactBase,
    delta_pos: Option<usize>,
    delta: &'m HashMap<PredKey, Range<usize>>,
}

impl Db for SatDb<'_> {
    fn scan(&mut self, pos: usize, key: &PredKey, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        let Some(rel) = self.model.relation(key) else {
            return Ok(Vec::new());
        };
        let range = if Some(pos) == self.delta_pos {
            self.delta.get(key).cloned().unwrap_or(0..0)
        } else {
            0..rel.len()
        };
        Ok(rel.select(pattern, range).into_iter().map(|i| rel.get(i).0.clone()).collect())
    }

    fn contains(&mut self, key: &PredKey, tuple: &[Value]) -> Result<bool> {
        Ok(self.model.contains_key(key, tuple))
    }
}

struct RulePlans {
    full: Plan,
    /// One plan per body position holding a same-stratum positive literal.
    deltas: Vec<(usize, Plan)>,
}

/// Stratum-by-stratum semi-naive fixpoint over `model`, in place. Rules whose
/// head is in `skip` are ignored. Each new tuple is tagged with the global
/// round that produced it, so any derived tuple only depends on tuples of
/// strictly smaller rank.
pub(crate) fn saturate_in_place(
    rules: &[CRule],
    strata: &Strata,
    model: &mut FactBase,
    skip: &HashSet<PredKey>,
    limit: usize,
) -> Result<()> {
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); strata.len().max(1)];
    for (i, r) in rules.iter().enumerate() {
        if !skip.contains(&r.head.key) {
            by_stratum[strata.get(&r.head.key)].push(i);
        }
    }
    let mut round: u32 = 0;
    let mut derived = 0usize;
    for members in by_stratum {
        if members.is_empty() {
            continue;
        }
        let heads: HashSet<PredKey> = members.iter().map(|&i| rules[i].head.key.clone()).collect();
        let plans: Vec<RulePlans> = members
            .iter()
            .map(|&i| {
                let body = &rules[i].body;
                let deltas = body
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| matches!(l, CLit::Pos(a) if heads.contains(&a.key)))
                    .map(|(p, _)| (p, plan(body, &BTreeSet::new(), Some(p))))
                    .collect();
                RulePlans { full: plan(body, &BTreeSet::new(), None), deltas }
            })
            .collect();

        let mut delta: HashMap<PredKey, Range<usize>> = HashMap::new();
        let mut first = true;
        loop {
            round += 1;
            let mut fresh: Vec<(PredKey, Tuple)> = Vec::new();
            let mut fresh_set: HashSet<(PredKey, Tuple)> = HashSet::new();
            for (&ri, rp) in members.iter().zip(&plans) {
                let rule = &rules[ri];
                let runs: Vec<(Option<usize>, &Plan)> = if first {
                    vec![(None, &rp.full)]
                } else {
                    rp.deltas
                        .iter()
                        .filter(|(p, _)| match &rule.body[*p] {
                            CLit::Pos(a) => delta.get(&a.key).is_some_and(|r| !r.is_empty()),
                            _ => false,
                        })
                        .map(|(p, pl)| (Some(*p), pl))
                        .collect()
                };
                for (delta_pos, pl) in runs {
                    let mut db = SatDb { model, delta_pos, delta: &delta };
                    let mut env: Env = vec![None; rule.nvars()];
                    let mut eval = BodyEval::new(rule);
                    let key = &rule.head.key;
                    eval.run(pl, &mut env, &mut db, &mut |env| {
                        let t = head_tuple(&rule.head, env).ok_or_else(|| {
                            Error::NotRangeRestricted(format!("head of `{}` has unbound variables", rule.source))
                        })?;
                        if !model.contains_key(key, &t) && fresh_set.insert((key.clone(), t.clone())) {
                            fresh.push((key.clone(), t));
                        }
                        Ok(true)
                    })?;
                }
            }
            first = false;
            if fresh.is_empty() {
                break;
            }
            derived += fresh.len();
            if derived > limit {
                return Err(Error::ResourceLimit { limit });
            }
            let starts: HashMap<PredKey, usize> =
                heads.iter().map(|k| (k.clone(), model.relation(k).map_or(0, |r| r.len()))).collect();
            for (k, t) in fresh {
                model.insert_key(k, t, round);
            }
            delta = starts
                .into_iter()
                .map(|(k, s)| {
                    let end = model.relation(&k).map_or(0, |r| r.len());
                    (k, s..end)
                })
                .collect();
        }
    }
    Ok(())
}
