use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, OnceLock};

use crate::ast::*;
use crate::datalog::{FactBase, RuleSet, Tuple};
use crate::error::{Error, Result};
use crate::policy_lang::{format_policy, parse_with_origin, validate_program, SourcePolicy};

use super::builtins::*;
use super::{EngineConfig, EntityRegistry};

/// Everything derived from the rules and directives of a policy. Shared by
/// all snapshots until the rules change.
#[derive(Debug)]
pub(crate) struct Compiled {
    pub rules: RuleSet,
    pub tabled: HashSet<PredKey>,
    pub temporal: HashMap<Symbol, (Timestamp, Timestamp)>,
    pub default_priority: u64,
    /// Views defined by restriction rules, mapped to the view they restrict.
    pub derived_views: HashMap<Symbol, Symbol>,
    /// Facts of the built-in program.
    pub builtin_facts: Vec<Atom>,
    /// Declared `#view` hierarchy edges.
    pub view_edges: Vec<(Symbol, Symbol)>,
    pub hold_names: HashSet<Symbol>,
    pub generic_hold: bool,
    pub config: EngineConfig,
}

fn const_arg(t: &Term) -> Option<&Symbol> {
    match t {
        Term::Sym(s) => Some(s),
        _ => None,
    }
}

impl Compiled {
    fn new(program: &PolicyProgram, config: EngineConfig) -> Result<Self> {
        let mut combined = builtin_program(config.multi_delegation);
        let builtin_facts: Vec<Atom> = combined.facts().cloned().collect();
        combined.extend(program);
        combined.retain(|s| !matches!(s, Statement::Directive(_)));
        let report = validate_program(&combined);
        if !report.is_empty() {
            if report.safety_violations.is_empty() && report.definedness_violations.is_empty() {
                if let Err(w) = report.stratification {
                    return Err(Error::NonStratifiable(w));
                }
            }
            return Err(Error::InvalidProgram(Box::new(report)));
        }
        let rules = RuleSet::new(combined.rules())?;
        let tabled = rules.dependents(&[PredKey::new(CONTEXT_PREDICATE, 4)]);

        let mut temporal = HashMap::new();
        let mut default_priority = 1;
        let mut view_edges = Vec::new();
        for d in program.directives() {
            match d {
                Directive::View { name, parent } => view_edges.push((name.clone(), parent.clone())),
                Directive::Temporal { name, start, end } => {
                    temporal.insert(name.clone(), (*start, *end));
                }
                Directive::DefaultPriority(n) => default_priority = *n,
                _ => {}
            }
        }

        let mut derived_views = HashMap::new();
        for r in program.rules() {
            if &*r.head.pred != "use" || r.head.args.len() != 2 {
                continue;
            }
            let Some(view) = const_arg(&r.head.args[1]) else { continue };
            let parent = r.body.iter().find_map(|l| match l {
                Literal::Pos(a) if &*a.pred == "use" && a.args.len() == 2 && a.args[0] == r.head.args[0] => {
                    const_arg(&a.args[1])
                }
                _ => None,
            });
            if let Some(parent) = parent {
                derived_views.entry(view.clone()).or_insert_with(|| parent.clone());
            }
        }

        let mut hold_names = HashSet::new();
        let mut generic_hold = false;
        let heads = combined.rules().map(|r| &r.head).chain(combined.facts());
        for head in heads.filter(|a| a.is_context_literal() && a.args.len() == 4) {
            match &head.args[3] {
                Term::Sym(n) | Term::Param(n, _) => {
                    hold_names.insert(n.clone());
                }
                Term::Var(_) => generic_hold = true,
                _ => {}
            }
        }
        Ok(Compiled { rules, tabled, temporal, default_priority, derived_views, builtin_facts, view_edges, hold_names, generic_hold, config })
    }
}

/// An immutable, saturated view of a policy state. Cheap to share between
/// threads; every decision query reads one snapshot.
#[derive(Debug)]
pub struct Snapshot {
    pub(crate) compiled: Arc<Compiled>,
    model: FactBase,
    registry: OnceLock<EntityRegistry>,
}

/// Context values mentioned by the stored facts, decomposed into conjuncts
/// for the context refinement rules.
fn context_facts(base: &mut FactBase) {
    let mut values: BTreeSet<Value> = BTreeSet::new();
    values.extend(base.tuples("context", 2).map(|t| t[1].clone()));
    values.extend(base.tuples("sub_context", 2).flat_map(|t| [t[0].clone(), t[1].clone()]));
    for v in values {
        for c in v.conjuncts() {
            base.insert(CONJUNCT, vec![v.clone(), c.clone()]);
        }
        base.insert(CONTEXT_VALUE, vec![v]);
    }
}

impl Snapshot {
    fn build(compiled: Arc<Compiled>, program: &PolicyProgram, extra: &[Atom]) -> Result<Self> {
        let mut base = FactBase::from_atoms(compiled.builtin_facts.iter().chain(program.facts()).chain(extra))?;
        for (view, parent) in compiled.derived_views.iter().chain(compiled.view_edges.iter().map(|(a, b)| (a, b))) {
            base.insert("sub_view", vec![Value::Sym(view.clone()), Value::Sym(parent.clone())]);
        }
        context_facts(&mut base);
        let model = compiled.rules.saturate(base, &compiled.tabled, compiled.config.fact_limit)?;
        Ok(Snapshot { compiled, model, registry: OnceLock::new() })
    }

    /// The saturated model. Predicates that depend on `hold` are absent:
    /// they are answered on demand by [`Snapshot::lookup`].
    pub fn model(&self) -> &FactBase {
        &self.model
    }

    pub fn config(&self) -> &EngineConfig {
        &self.compiled.config
    }

    pub fn rules(&self) -> &RuleSet {
        &self.compiled.rules
    }

    pub fn default_priority(&self) -> u64 {
        self.compiled.default_priority
    }

    /// Declared interval of a temporal context.
    pub fn temporal(&self, name: &str) -> Option<(Timestamp, Timestamp)> {
        self.compiled.temporal.get(name).copied()
    }

    /// True if some rule, fact or the engine itself gives meaning to the
    /// context name.
    pub fn knows_context(&self, name: &str) -> bool {
        name == NOMINAL
            || name == VALID_DELEG
            || self.compiled.temporal.contains_key(name)
            || self.compiled.hold_names.contains(name)
            || self.compiled.generic_hold
    }

    pub(crate) fn is_tabled(&self, key: &PredKey) -> bool {
        self.compiled.tabled.contains(key)
    }

    /// Tuples of `pred` matching `pattern`, from the model or, for
    /// predicates depending on `hold`, by goal-directed evaluation.
    pub fn lookup(&self, pred: &str, pattern: &[Option<Value>]) -> Result<Vec<Tuple>> {
        let key = PredKey::new(pred, pattern.len());
        if self.compiled.tabled.contains(&key) {
            self.compiled.rules.solve(&self.model, &self.compiled.tabled, &key, pattern, self.compiled.config.fact_limit)
        } else {
            Ok(self.model.matching(pred, pattern))
        }
    }

    /// Whether a ground atom holds.
    pub fn holds(&self, pred: &str, args: &[Value]) -> Result<bool> {
        let pattern: Vec<Option<Value>> = args.iter().cloned().map(Some).collect();
        Ok(!self.lookup(pred, &pattern)?.is_empty())
    }

    /// Second arguments of `pred(first, _)` facts in the model.
    pub(crate) fn successors(&self, pred: &str, first: &Value) -> Vec<Value> {
        self.model.matching(pred, &[Some(first.clone()), None]).iter().map(|t| t[1].clone()).collect()
    }

    /// Value of a functional attribute of a view object.
    pub fn attribute(&self, id: &str, name: &str) -> Option<Value> {
        self.successors(name, &Value::sym(id)).into_iter().next()
    }

    pub fn registry(&self) -> &EntityRegistry {
        self.registry.get_or_init(|| EntityRegistry::from_model(&self.model))
    }
}

/// The mutable policy: user statements, stored view objects and the
/// identifier counter. Every mutation yields a fresh [`Snapshot`].
#[derive(Clone, Debug)]
pub struct PolicyState {
    program: PolicyProgram,
    next_id: u64,
    compiled: Arc<Compiled>,
    snapshot: Arc<Snapshot>,
}

impl PolicyState {
    /// Builds a state from a program. `#next-id` sets the identifier
    /// counter; delegation directives are replayed in order, each checked
    /// like the corresponding API call.
    pub fn new(program: PolicyProgram, config: EngineConfig) -> Result<Self> {
        let mut events = Vec::new();
        let mut next_id = 1;
        let mut stored = program;
        stored.retain(|s| match s {
            Statement::Directive(Directive::Event(e)) => {
                events.push(e.clone());
                false
            }
            Statement::Directive(Directive::NextId(n)) => {
                next_id = *n;
                false
            }
            _ => true,
        });
        let compiled = Arc::new(Compiled::new(&stored, config)?);
        let snapshot = Arc::new(Snapshot::build(compiled.clone(), &stored, &[])?);
        let mut state = PolicyState { program: stored, next_id, compiled, snapshot };
        for event in &events {
            crate::delegation::apply_event(&mut state, event)?;
        }
        Ok(state)
    }

    pub fn empty(config: EngineConfig) -> Result<Self> {
        Self::new(PolicyProgram::new(), config)
    }

    /// Parses and builds; syntax errors carry the source origin.
    pub fn from_source(src: &SourcePolicy, config: EngineConfig) -> Result<Self> {
        Self::new(parse_with_origin(src)?, config)
    }

    /// Stored statements: facts (view objects included), rules and
    /// declarations.
    pub fn program(&self) -> &PolicyProgram {
        &self.program
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.clone()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.compiled.config
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub(crate) fn set_next_id(&mut self, n: u64) {
        self.next_id = n;
    }

    /// The state as policy text: the stored statements followed by the
    /// identifier counter. Loading it reproduces the state.
    pub fn to_policy_text(&self) -> String {
        let mut p = self.program.clone();
        p.push(Statement::Directive(Directive::NextId(self.next_id)));
        format_policy(&p)
    }

    /// Snapshot of the state with extra facts, leaving the state untouched.
    pub(crate) fn hypothetical(&self, extra: &[Atom]) -> Result<Snapshot> {
        Snapshot::build(self.compiled.clone(), &self.program, extra)
    }

    pub(crate) fn commit(&mut self, facts: Vec<Atom>, snapshot: Snapshot) {
        for f in facts {
            self.program.push_fact(f);
        }
        self.snapshot = Arc::new(snapshot);
    }

    /// Deletes every object fact about `id` and resaturates.
    pub(crate) fn remove_object(&mut self, id: &Symbol) -> Result<()> {
        let mut program = self.program.clone();
        program.retain(|s| match s {
            Statement::Fact(a) => {
                !(OBJECT_PREDICATES.contains(&&*a.pred) && a.args.first() == Some(&Term::Sym(id.clone())))
            }
            _ => true,
        });
        let snapshot = Snapshot::build(self.compiled.clone(), &program, &[])?;
        self.program = program;
        self.snapshot = Arc::new(snapshot);
        Ok(())
    }

    /// A fresh object identifier `prefix<n>` not used anywhere in the state.
    pub(crate) fn fresh_id(&mut self, prefix: &str) -> Symbol {
        loop {
            let id = sym(&format!("{prefix}{}", self.next_id));
            self.next_id += 1;
            if !self.mentions(&id) {
                return id;
            }
        }
    }

    /// True if `id` occurs as a constant in any stored fact.
    pub(crate) fn mentions(&self, id: &Symbol) -> bool {
        let needle = Term::Sym(id.clone());
        self.program.facts().any(|a| a.args.contains(&needle))
    }

    /// The stored view that receives objects inserted in `view`: derived
    /// views store their objects in the view they restrict.
    pub(crate) fn storage_view(&self, view: &Symbol) -> Symbol {
        let mut v = view.clone();
        let mut seen = HashSet::new();
        while let Some(parent) = self.compiled.derived_views.get(&v) {
            if !seen.insert(v.clone()) {
                break;
            }
            v = parent.clone();
        }
        v
    }
}
