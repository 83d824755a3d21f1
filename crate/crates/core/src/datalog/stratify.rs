//! Predicate dependency graph, SCCs and minimal stratification.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::ast::{PredKey, Rule};

/// `from` (a rule head) depends on `to`; `negative` for negation or counting.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepEdge {
    pub from: PredKey,
    pub to: PredKey,
    pub negative: bool,
}

/// A simple dependency cycle containing at least one negative edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleWitness {
    pub edges: Vec<DepEdge>,
}

impl CycleWitness {
    pub fn predicates(&self) -> BTreeSet<PredKey> {
        self.edges.iter().map(|e| e.from.clone()).collect()
    }
}

impl fmt::Display for CycleWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.predicates().iter().map(|p| p.to_string()).collect();
        write!(f, "{{{}}}", names.join(", "))?;
        for e in &self.edges {
            let arrow = if e.negative { "-not->" } else { "->" };
            write!(f, " {} {arrow} {};", e.from, e.to)?;
        }
        Ok(())
    }
}

/// Stratum index per predicate; predicates without rules sit at 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Strata {
    map: BTreeMap<PredKey, usize>,
}

impl Strata {
    pub fn get(&self, pred: &PredKey) -> usize {
        self.map.get(pred).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.map.values().max().map_or(0, |m| m + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PredKey, usize)> {
        self.map.iter().map(|(k, v)| (k, *v))
    }
}

pub(crate) struct DepGraph {
    pub nodes: Vec<PredKey>,
    index: HashMap<PredKey, usize>,
    /// adjacency: node -> (dependency, negative)
    pub adj: Vec<Vec<(usize, bool)>>,
}

impl DepGraph {
    pub fn new<'a>(rules: impl IntoIterator<Item = &'a Rule>) -> Self {
        let mut g = DepGraph { nodes: Vec::new(), index: HashMap::new(), adj: Vec::new() };
        for rule in rules {
            let h = g.node(rule.head.key());
            for lit in &rule.body {
                for (atom, negative) in lit.dependencies() {
                    let d = g.node(atom.key());
                    if !g.adj[h].contains(&(d, negative)) {
                        g.adj[h].push((d, negative));
                    }
                }
            }
        }
        g
    }

    fn node(&mut self, key: PredKey) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(key.clone(), i);
        self.nodes.push(key);
        self.adj.push(Vec::new());
        i
    }

    pub fn index_of(&self, key: &PredKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Tarjan's algorithm; components come out dependencies-first.
    pub fn sccs(&self) -> Vec<Vec<usize>> {
        struct State {
            index: Vec<Option<usize>>,
            low: Vec<usize>,
            on_stack: Vec<bool>,
            stack: Vec<usize>,
            next: usize,
            out: Vec<Vec<usize>>,
        }
        fn visit(g: &DepGraph, v: usize, st: &mut State) {
            st.index[v] = Some(st.next);
            st.low[v] = st.next;
            st.next += 1;
            st.stack.push(v);
            st.on_stack[v] = true;
            for &(w, _) in &g.adj[v] {
                match st.index[w] {
                    None => {
                        visit(g, w, st);
                        st.low[v] = st.low[v].min(st.low[w]);
                    }
                    Some(iw) if st.on_stack[w] => st.low[v] = st.low[v].min(iw),
                    _ => {}
                }
            }
            if Some(st.low[v]) == st.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = st.stack.pop().unwrap();
                    st.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                st.out.push(comp);
            }
        }
        let n = self.nodes.len();
        let mut st = State {
            index: vec![None; n],
            low: vec![0; n],
            on_stack: vec![false; n],
            stack: Vec::new(),
            next: 0,
            out: Vec::new(),
        };
        for v in 0..n {
            if st.index[v].is_none() {
                visit(self, v, &mut st);
            }
        }
        st.out
    }

    /// Shortest path `from ⇝ to` staying inside `members`.
    fn path_within(&self, from: usize, to: usize, members: &BTreeSet<usize>) -> Option<Vec<(usize, usize, bool)>> {
        let mut prev: HashMap<usize, (usize, bool)> = HashMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                let mut path = Vec::new();
                let mut cur = to;
                while cur != from {
                    let (p, neg) = prev[&cur];
                    path.push((p, cur, neg));
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for &(w, neg) in &self.adj[v] {
                if members.contains(&w) && seen.insert(w) {
                    prev.insert(w, (v, neg));
                    queue.push_back(w);
                }
            }
        }
        None
    }
}

/// Minimal stratification: each predicate at the lowest stratum such that
/// positive dependencies point at the same or a lower stratum and negative
/// (negation or counting) dependencies point strictly lower.
pub fn stratify_rules<'a>(rules: impl IntoIterator<Item = &'a Rule>) -> Result<Strata, CycleWitness> {
    let g = DepGraph::new(rules);
    let sccs = g.sccs();
    let mut comp_of = vec![0usize; g.nodes.len()];
    for (ci, comp) in sccs.iter().enumerate() {
        for &v in comp {
            comp_of[v] = ci;
        }
    }
    for comp in &sccs {
        let members: BTreeSet<usize> = comp.iter().copied().collect();
        for &u in comp {
            for &(v, neg) in &g.adj[u] {
                if neg && members.contains(&v) {
                    let mut edges = vec![DepEdge { from: g.nodes[u].clone(), to: g.nodes[v].clone(), negative: true }];
                    if u != v {
                        let back = g.path_within(v, u, &members).expect("same component");
                        edges.extend(back.into_iter().map(|(a, b, n)| DepEdge {
                            from: g.nodes[a].clone(),
                            to: g.nodes[b].clone(),
                            negative: n,
                        }));
                    }
                    return Err(CycleWitness { edges });
                }
            }
        }
    }
    let mut comp_stratum = vec![0usize; sccs.len()];
    for (ci, comp) in sccs.iter().enumerate() {
        let mut s = 0;
        for &u in comp {
            for &(v, neg) in &g.adj[u] {
                let cv = comp_of[v];
                if cv != ci {
                    s = s.max(comp_stratum[cv] + usize::from(neg));
                }
            }
        }
        comp_stratum[ci] = s;
    }
    let map = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), comp_stratum[comp_of[i]]))
        .collect();
    Ok(Strata { map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_lang::parse_str;

    fn rules(src: &str) -> Vec<Rule> {
        parse_str(src).unwrap().rules().cloned().collect()
    }

    #[test]
    fn pure_datalog_is_single_stratum() {
        let r = rules("path(X, Y) :- edge(X, Y). path(X, Z) :- path(X, Y), edge(Y, Z).");
        let s = stratify_rules(&r).unwrap();
        assert_eq!(s.get(&PredKey::new("path", 2)), 0);
        assert_eq!(s.get(&PredKey::new("edge", 2)), 0);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn negation_raises_stratum() {
        let r = rules("a(X) :- d(X), not b(X). b(X) :- d(X), not c(X). c(X) :- d(X).");
        let s = stratify_rules(&r).unwrap();
        assert_eq!(s.get(&PredKey::new("c", 1)), 0);
        assert_eq!(s.get(&PredKey::new("b", 1)), 1);
        assert_eq!(s.get(&PredKey::new("a", 1)), 2);
    }

    #[test]
    fn mutual_negation_witness() {
        let r = rules("p(X) :- not q(X), d(X). q(X) :- not p(X), d(X).");
        let w = stratify_rules(&r).unwrap_err();
        let preds: Vec<String> = w.predicates().iter().map(|p| p.name.to_string()).collect();
        assert_eq!(preds, vec!["p", "q"]);
        assert_eq!(w.edges.len(), 2);
    }

    #[test]
    fn count_cycle_rejected() {
        let r = rules("n(X, N) :- d(X), count(Y, m(Y), N). m(Y) :- n(Y, _).");
        assert!(stratify_rules(&r).is_err());
    }

    #[test]
    fn self_negation() {
        let r = rules("p(X) :- d(X), not p(X).");
        let w = stratify_rules(&r).unwrap_err();
        assert_eq!(w.edges.len(), 1);
    }
}
