//! Goal-directed evaluation with answer tables.
//!
//! Each call pattern (predicate plus bound arguments) gets a table. Tables of
//! one stratum that call each other form a group evaluated to a local
//! fixpoint; calls into strictly lower strata (always the case for negation
//! and counting) are completed first, so non-monotone literals only ever see
//! complete tables.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::rc::Rc;

use crate::ast::{PredKey, Value, CONTEXT_PREDICATE};
use crate::error::{Error, Result};

use super::compile::{head_tuple, match_term, plan, undo, BodyEval, CRule, Db, Env, Plan};
use super::facts::{FactBase, Tuple};
use super::stratify::Strata;

type TableKey = (PredKey, Vec<Option<Value>>);

#[derive(Default)]
struct Table {
    answers: Vec<Tuple>,
    set: HashSet<Tuple>,
    complete: bool,
}

impl Table {
    fn add(&mut self, t: Tuple) -> bool {
        if self.set.insert(t.clone()) {
            self.answers.push(t);
            true
        } else {
            false
        }
    }
}

pub(crate) struct Solver<'a> {
    rules: &'a [CRule],
    by_head: &'a HashMap<PredKey, Vec<usize>>,
    strata: &'a Strata,
    base: &'a FactBase,
    tabled: &'a HashSet<PredKey>,
    tables: HashMap<TableKey, Table>,
    group: Vec<TableKey>,
    group_stratum: Option<usize>,
    plans: HashMap<(usize, Vec<bool>), Rc<Plan>>,
    limit: usize,
    answers: usize,
}

impl<'a> Solver<'a> {
    pub fn new(
        rules: &'a [CRule],
        by_head: &'a HashMap<PredKey, Vec<usize>>,
        strata: &'a Strata,
        base: &'a FactBase,
        tabled: &'a HashSet<PredKey>,
        limit: usize,
    ) -> Self {
        Solver {
            rules,
            by_head,
            strata,
            base,
            tabled,
            tables: HashMap::new(),
            group: Vec::new(),
            group_stratum: None,
            plans: HashMap::new(),
            limit,
            answers: 0,
        }
    }

    fn base_scan(&self, key: &PredKey, pattern: &[Option<Value>]) -> Vec<Tuple> {
        match self.base.relation(key) {
            Some(rel) => rel.select(pattern, 0..rel.len()).into_iter().map(|i| rel.get(i).0.clone()).collect(),
            None => Vec::new(),
        }
    }

    fn check_context(key: &PredKey, pattern: &[Option<Value>]) -> Result<()> {
        if key.name.as_ref() == CONTEXT_PREDICATE && pattern.iter().any(Option::is_none) {
            let shown: Vec<String> = pattern.iter().map(|p| p.as_ref().map_or("_".into(), |v| v.to_string())).collect();
            return Err(Error::UninstantiatedContext(format!("{}({})", key.name, shown.join(", "))));
        }
        Ok(())
    }

    /// Complete answers for a call pattern.
    pub fn solve(&mut self, key: &PredKey, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        Self::check_context(key, pattern)?;
        if !self.tabled.contains(key) {
            return Ok(self.base_scan(key, pattern));
        }
        let tk: TableKey = (key.clone(), pattern.to_vec());
        if let Some(t) = self.tables.get(&tk) {
            if t.complete {
                return Ok(t.answers.clone());
            }
        }
        let saved_group = std::mem::take(&mut self.group);
        let saved_stratum = self.group_stratum.replace(self.strata.get(key));
        self.register(tk.clone());
        let result = self.fixpoint();
        let group = std::mem::replace(&mut self.group, saved_group);
        self.group_stratum = saved_stratum;
        result?;
        for k in group {
            if let Some(t) = self.tables.get_mut(&k) {
                t.complete = true;
            }
        }
        Ok(self.tables[&tk].answers.clone())
    }

    fn register(&mut self, tk: TableKey) {
        if self.tables.contains_key(&tk) {
            return;
        }
        let mut table = Table::default();
        for t in self.base_scan(&tk.0, &tk.1) {
            table.add(t);
        }
        self.tables.insert(tk.clone(), table);
        self.group.push(tk);
    }

    fn fixpoint(&mut self) -> Result<()> {
        loop {
            let mut changed = false;
            let mut i = 0;
            while i < self.group.len() {
                let tk = self.group[i].clone();
                let rule_ids = self.by_head.get(&tk.0).cloned().unwrap_or_default();
                for ri in rule_ids {
                    for t in self.eval_rule(ri, &tk.1)? {
                        let table = self.tables.get_mut(&tk).expect("registered");
                        if table.add(t) {
                            changed = true;
                            self.answers += 1;
                            if self.answers > self.limit {
                                return Err(Error::ResourceLimit { limit: self.limit });
                            }
                        }
                    }
                }
                i += 1;
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn eval_rule(&mut self, ri: usize, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        let rules = self.rules;
        let rule = &rules[ri];
        let mut env: Env = vec![None; rule.nvars()];
        let mut trail = Vec::new();
        for (t, p) in rule.head.args.iter().zip(pattern) {
            if let Some(v) = p {
                let mark = trail.len();
                if !match_term(t, v, &mut env, &mut trail) {
                    undo(&mut env, &mut trail, mark);
                    return Ok(Vec::new());
                }
            }
        }
        let bound_mask: Vec<bool> = env.iter().map(Option::is_some).collect();
        let plan = match self.plans.get(&(ri, bound_mask.clone())) {
            Some(p) => p.clone(),
            None => {
                let bound: BTreeSet<usize> = (0..env.len()).filter(|&i| bound_mask[i]).collect();
                let p = Rc::new(plan(&rule.body, &bound, None));
                self.plans.insert((ri, bound_mask), p.clone());
                p
            }
        };
        let mut out = Vec::new();
        let mut eval = BodyEval::new(rule);
        eval.run(&plan, &mut env, self, &mut |env| {
            let t = head_tuple(&rule.head, env).ok_or_else(|| {
                Error::NotRangeRestricted(format!("head of `{}` has unbound variables", rule.source))
            })?;
            if t.iter().zip(pattern).all(|(v, p)| p.as_ref().is_none_or(|p| p == v)) {
                out.push(t);
            }
            Ok(true)
        })?;
        Ok(out)
    }
}

impl Db for Solver<'_> {
    fn scan(&mut self, _pos: usize, key: &PredKey, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        Self::check_context(key, pattern)?;
        if !self.tabled.contains(key) {
            return Ok(self.base_scan(key, pattern));
        }
        let tk: TableKey = (key.clone(), pattern.to_vec());
        if let Some(t) = self.tables.get(&tk) {
            if t.complete || self.group.contains(&tk) {
                return Ok(t.answers.clone());
            }
        }
        let stratum = self.strata.get(key);
        match self.group_stratum {
            Some(g) if stratum >= g => {
                self.register(tk.clone());
                Ok(self.tables[&tk].answers.clone())
            }
            _ => self.solve(key, pattern),
        }
    }
}
