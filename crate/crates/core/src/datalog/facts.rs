use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use crate::ast::{display_tuple, Atom, PredKey, Value};
use crate::error::{Error, Result};

pub type Tuple = Arc<[Value]>;

/// A set of ground tuples of one arity, with per-column hash indexes and the
/// evaluation round in which each tuple first appeared (0 for input facts).
#[derive(Clone, Debug, Default)]
pub struct Relation {
    arity: usize,
    tuples: Vec<Tuple>,
    ranks: Vec<u32>,
    lookup: HashMap<Tuple, u32>,
    index: Vec<HashMap<Value, Vec<u32>>>,
}

impl Relation {
    pub fn new(arity: usize) -> Self {
        Relation { arity, index: vec![HashMap::new(); arity], ..Default::default() }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn contains(&self, tuple: &[Value]) -> bool {
        self.lookup.contains_key(tuple)
    }

    pub fn rank(&self, tuple: &[Value]) -> Option<u32> {
        self.lookup.get(tuple).map(|&i| self.ranks[i as usize])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tuple> {
        self.tuples.iter()
    }

    pub(crate) fn get(&self, i: usize) -> (&Tuple, u32) {
        (&self.tuples[i], self.ranks[i])
    }

    pub fn insert(&mut self, tuple: Tuple, rank: u32) -> bool {
        debug_assert_eq!(tuple.len(), self.arity);
        if self.lookup.contains_key(&tuple) {
            return false;
        }
        let i = self.tuples.len() as u32;
        for (col, v) in tuple.iter().enumerate() {
            self.index[col].entry(v.clone()).or_default().push(i);
        }
        self.lookup.insert(tuple.clone(), i);
        self.tuples.push(tuple);
        self.ranks.push(rank);
        true
    }

    /// Positions in `range` whose tuples agree with every bound column of
    /// `pattern`, in insertion order.
    pub(crate) fn select(&self, pattern: &[Option<Value>], range: Range<usize>) -> Vec<usize> {
        let range = range.start..range.end.min(self.tuples.len());
        if range.is_empty() {
            return Vec::new();
        }
        let mut best: Option<&[u32]> = None;
        for (col, v) in pattern.iter().enumerate() {
            if let Some(v) = v {
                let bucket = self.index[col].get(v).map_or(&[][..], |b| b.as_slice());
                if best.is_none_or(|b| bucket.len() < b.len()) {
                    best = Some(bucket);
                }
            }
        }
        let agrees = |i: usize| {
            let t = &self.tuples[i];
            pattern.iter().zip(t.iter()).all(|(p, v)| p.as_ref().is_none_or(|p| p == v))
        };
        match best {
            Some(bucket) => {
                let lo = bucket.partition_point(|&i| (i as usize) < range.start);
                let hi = bucket.partition_point(|&i| (i as usize) < range.end);
                bucket[lo..hi].iter().map(|&i| i as usize).filter(|&i| agrees(i)).collect()
            }
            None => range.collect(),
        }
    }
}

/// Ground atoms grouped by predicate. Equality is set equality of atoms.
#[derive(Clone, Debug, Default)]
pub struct FactBase {
    relations: HashMap<PredKey, Relation>,
}

impl FactBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a fact base from ground atoms.
    pub fn from_atoms<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> Result<Self> {
        let mut fb = FactBase::new();
        for atom in atoms {
            let values = atom
                .to_values()
                .ok_or_else(|| Error::NotRangeRestricted(format!("fact `{atom}.` contains variables")))?;
            fb.insert_key(atom.key(), values.into(), 0);
        }
        Ok(fb)
    }

    pub fn insert(&mut self, pred: &str, tuple: Vec<Value>) -> bool {
        let key = PredKey::new(pred, tuple.len());
        self.insert_key(key, tuple.into(), 0)
    }

    pub(crate) fn insert_key(&mut self, key: PredKey, tuple: Tuple, rank: u32) -> bool {
        let arity = key.arity;
        self.relations.entry(key).or_insert_with(|| Relation::new(arity)).insert(tuple, rank)
    }

    pub fn contains(&self, pred: &str, tuple: &[Value]) -> bool {
        self.contains_key(&PredKey::new(pred, tuple.len()), tuple)
    }

    pub fn contains_key(&self, key: &PredKey, tuple: &[Value]) -> bool {
        self.relations.get(key).is_some_and(|r| r.contains(tuple))
    }

    pub fn relation(&self, key: &PredKey) -> Option<&Relation> {
        self.relations.get(key)
    }

    /// Tuples of `pred/arity` matching the bound positions of `pattern`.
    pub fn matching(&self, pred: &str, pattern: &[Option<Value>]) -> Vec<Tuple> {
        match self.relations.get(&PredKey::new(pred, pattern.len())) {
            Some(rel) => rel.select(pattern, 0..rel.len()).into_iter().map(|i| rel.get(i).0.clone()).collect(),
            None => Vec::new(),
        }
    }

    pub fn tuples<'a>(&'a self, pred: &str, arity: usize) -> impl Iterator<Item = &'a Tuple> + 'a {
        self.relations.get(&PredKey::new(pred, arity)).into_iter().flat_map(|r| r.iter())
    }

    pub fn predicates(&self) -> impl Iterator<Item = &PredKey> {
        self.relations.iter().filter(|(_, r)| !r.is_empty()).map(|(k, _)| k)
    }

    pub fn len(&self) -> usize {
        self.relations.values().map(Relation::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All atoms, ordered by predicate then tuple.
    pub fn atoms(&self) -> BTreeSet<(PredKey, Vec<Value>)> {
        self.relations
            .iter()
            .flat_map(|(k, r)| r.iter().map(move |t| (k.clone(), t.to_vec())))
            .collect()
    }

    /// Restriction to the given predicate names.
    pub fn project(&self, names: &[&str]) -> FactBase {
        let mut out = FactBase::new();
        for (k, r) in &self.relations {
            if names.contains(&&*k.name) {
                for t in r.iter() {
                    out.insert_key(k.clone(), t.clone(), 0);
                }
            }
        }
        out
    }

    pub fn extend(&mut self, other: &FactBase) {
        for (k, r) in &other.relations {
            for t in r.iter() {
                self.insert_key(k.clone(), t.clone(), 0);
            }
        }
    }
}

impl PartialEq for FactBase {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len() && self.atoms() == other.atoms()
    }
}

impl Eq for FactBase {}

impl fmt::Display for FactBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, t) in self.atoms() {
            writeln!(f, "{}.", display_tuple(&k.name, &t))?;
        }
        Ok(())
    }
}
