//! Finite relational structures, their Gaifman-graph topology, neighborhood
//! types, and Hanf threshold signatures.
//!
//! Universes are always `{0..n-1}`. Interpretations are stored as sorted tuple
//! sets, which gives deterministic serialization and cheap structural
//! equality. All values here are immutable after construction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("relation `{0}` is not in the vocabulary")]
    UnknownRelation(String),
    #[error("relation `{rel}` expects arity {expected}, got a tuple of length {got}")]
    ArityMismatch {
        rel: String,
        expected: usize,
        got: usize,
    },
    #[error("element {element} out of range for domain of size {size}")]
    ElementOutOfRange { element: usize, size: usize },
    #[error("duplicate relation name `{0}` in vocabulary")]
    DuplicateRelation(String),
    #[error("relation `{0}` must have arity at least 1")]
    ZeroArity(String),
    #[error("`{0}` is not a valid relation name (identifiers only)")]
    BadRelationName(String),
    #[error("structures have different vocabularies")]
    VocabularyMismatch,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A finite relational vocabulary: named relation symbols with arities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vocabulary {
    relations: Vec<(String, usize)>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(relations: Vec<(S, usize)>) -> Result<Self, StructureError> {
        let relations: Vec<(String, usize)> = relations
            .into_iter()
            .map(|(n, a)| (n.into(), a))
            .collect();
        let mut seen = BTreeSet::new();
        for (name, arity) in &relations {
            if !is_identifier(name) {
                return Err(StructureError::BadRelationName(name.clone()));
            }
            if *arity == 0 {
                return Err(StructureError::ZeroArity(name.clone()));
            }
            if !seen.insert(name.clone()) {
                return Err(StructureError::DuplicateRelation(name.clone()));
            }
        }
        Ok(Vocabulary { relations })
    }

    /// The empty vocabulary.
    pub fn empty() -> Self {
        Vocabulary { relations: vec![] }
    }

    pub fn relations(&self) -> &[(String, usize)] {
        &self.relations
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.relations
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| *a)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|(n, _)| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn max_arity(&self) -> usize {
        self.relations.iter().map(|(_, a)| *a).max().unwrap_or(0)
    }

    /// Vocabulary extended with additional symbols (for expansions).
    pub fn extended<S: Into<String>>(
        &self,
        extra: Vec<(S, usize)>,
    ) -> Result<Vocabulary, StructureError> {
        let mut rels: Vec<(String, usize)> = self.relations.clone();
        rels.extend(extra.into_iter().map(|(n, a)| (n.into(), a)));
        Vocabulary::new(rels)
    }
}

/// Distance in the Gaifman graph. Disconnected pairs are `Infinite`,
/// never a sentinel integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distance {
    Finite(usize),
    Infinite,
}

impl Distance {
    pub fn is_finite(self) -> bool {
        matches!(self, Distance::Finite(_))
    }

    pub fn at_most(self, r: usize) -> bool {
        match self {
            Distance::Finite(d) => d <= r,
            Distance::Infinite => false,
        }
    }
}

impl PartialOrd for Distance {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Distance {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use Distance::*;
        match (self, other) {
            (Finite(a), Finite(b)) => a.cmp(b),
            (Finite(_), Infinite) => std::cmp::Ordering::Less,
            (Infinite, Finite(_)) => std::cmp::Ordering::Greater,
            (Infinite, Infinite) => std::cmp::Ordering::Equal,
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(d) => write!(f, "{d}"),
            Distance::Infinite => write!(f, "infinite"),
        }
    }
}

/// A finite structure: universe `{0..n-1}` plus one tuple set per relation.
#[derive(Debug, Clone)]
pub struct Structure {
    vocab: Arc<Vocabulary>,
    size: usize,
    interps: Vec<BTreeSet<Vec<usize>>>,
}

impl PartialEq for Structure {
    fn eq(&self, other: &Self) -> bool {
        *self.vocab == *other.vocab && self.size == other.size && self.interps == other.interps
    }
}

impl Eq for Structure {}

impl std::hash::Hash for Structure {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.vocab.hash(state);
        self.size.hash(state);
        self.interps.hash(state);
    }
}

impl Structure {
    pub fn new(vocab: Arc<Vocabulary>, size: usize) -> Self {
        let interps = vec![BTreeSet::new(); vocab.relations().len()];
        Structure {
            vocab,
            size,
            interps,
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn add_tuple(&mut self, rel: &str, tuple: Vec<usize>) -> Result<(), StructureError> {
        let pos = self
            .vocab
            .position(rel)
            .ok_or_else(|| StructureError::UnknownRelation(rel.to_string()))?;
        let arity = self.vocab.relations()[pos].1;
        if tuple.len() != arity {
            return Err(StructureError::ArityMismatch {
                rel: rel.to_string(),
                expected: arity,
                got: tuple.len(),
            });
        }
        for &e in &tuple {
            if e >= self.size {
                return Err(StructureError::ElementOutOfRange {
                    element: e,
                    size: self.size,
                });
            }
        }
        self.interps[pos].insert(tuple);
        Ok(())
    }

    pub fn tuples(&self, rel: &str) -> Option<&BTreeSet<Vec<usize>>> {
        self.vocab.position(rel).map(|p| &self.interps[p])
    }

    pub fn tuples_by_index(&self, idx: usize) -> &BTreeSet<Vec<usize>> {
        &self.interps[idx]
    }

    pub fn holds(&self, rel: &str, tuple: &[usize]) -> bool {
        self.tuples(rel).map_or(false, |t| t.contains(tuple))
    }

    /// Reduct to a sub-vocabulary (drops the other relations).
    pub fn reduct(&self, vocab: Arc<Vocabulary>) -> Result<Structure, StructureError> {
        let mut out = Structure::new(vocab.clone(), self.size);
        for (i, (name, _)) in vocab.relations().iter().enumerate() {
            let pos = self
                .vocab
                .position(name)
                .ok_or_else(|| StructureError::UnknownRelation(name.clone()))?;
            out.interps[i] = self.interps[pos].clone();
        }
        Ok(out)
    }

    /// Applies a bijective relabeling `perm[old] = new` to every tuple.
    pub fn relabel(&self, perm: &[usize]) -> Structure {
        let mut out = Structure::new(self.vocab.clone(), self.size);
        for (i, tuples) in self.interps.iter().enumerate() {
            out.interps[i] = tuples
                .iter()
                .map(|t| t.iter().map(|&e| perm[e]).collect())
                .collect();
        }
        out
    }

    /// Symmetric, irreflexive Gaifman adjacency.
    pub fn gaifman(&self) -> GaifmanGraph {
        let mut adj = vec![BTreeSet::new(); self.size];
        for tuples in &self.interps {
            for t in tuples {
                for (i, &a) in t.iter().enumerate() {
                    for &b in t.iter().skip(i + 1) {
                        if a != b {
                            adj[a].insert(b);
                            adj[b].insert(a);
                        }
                    }
                }
            }
        }
        GaifmanGraph { adj }
    }

    pub fn distance(&self, a: usize, b: usize) -> Result<Distance, StructureError> {
        self.check_element(a)?;
        self.check_element(b)?;
        let g = self.gaifman();
        Ok(match g.distances_from(a)[b] {
            Some(d) => Distance::Finite(d),
            None => Distance::Infinite,
        })
    }

    /// Ball and sphere of radius `r` around `a`.
    pub fn ball_and_sphere(
        &self,
        a: usize,
        r: usize,
    ) -> Result<(BTreeSet<usize>, BTreeSet<usize>), StructureError> {
        self.check_element(a)?;
        let dists = self.gaifman().distances_from(a);
        let mut ball = BTreeSet::new();
        let mut sphere = BTreeSet::new();
        for (v, d) in dists.iter().enumerate() {
            if let Some(d) = d {
                if *d <= r {
                    ball.insert(v);
                }
                if *d == r {
                    sphere.insert(v);
                }
            }
        }
        Ok((ball, sphere))
    }

    fn check_element(&self, a: usize) -> Result<(), StructureError> {
        if a >= self.size {
            return Err(StructureError::ElementOutOfRange {
                element: a,
                size: self.size,
            });
        }
        Ok(())
    }

    /// Induced substructure on `b`, with the index remapping that was applied.
    pub fn restrict(&self, b: &BTreeSet<usize>) -> Result<Restriction, StructureError> {
        for &e in b {
            self.check_element(e)?;
        }
        let old_of_new: Vec<usize> = b.iter().copied().collect();
        let mut new_of_old = BTreeMap::new();
        for (new, &old) in old_of_new.iter().enumerate() {
            new_of_old.insert(old, new);
        }
        let mut out = Structure::new(self.vocab.clone(), old_of_new.len());
        for (i, tuples) in self.interps.iter().enumerate() {
            for t in tuples {
                if t.iter().all(|e| new_of_old.contains_key(e)) {
                    out.interps[i].insert(t.iter().map(|e| new_of_old[e]).collect());
                }
            }
        }
        Ok(Restriction {
            structure: out,
            old_of_new,
            new_of_old,
        })
    }

    /// The `r`-neighborhood type of `a`: canonical form of the induced ball
    /// with `a` distinguished. Types compare equal exactly when the pointed
    /// neighborhoods are isomorphic.
    pub fn neighborhood_type(&self, a: usize, r: usize) -> Result<NeighborhoodType, StructureError> {
        let (ball, _) = self.ball_and_sphere(a, r)?;
        let restriction = self.restrict(&ball)?;
        let center = restriction.new_of_old[&a];
        let (enc, _) = canon::canonical(&restriction.structure, Some(center));
        Ok(NeighborhoodType {
            radius: r,
            encoding: enc,
        })
    }

    /// Per-type element counts capped at `t`; zero entries are omitted.
    pub fn hanf_signature(&self, r: usize, t: usize) -> Result<HanfSignature, StructureError> {
        let mut counts: BTreeMap<NeighborhoodType, usize> = BTreeMap::new();
        for a in 0..self.size {
            let ty = self.neighborhood_type(a, r)?;
            *counts.entry(ty).or_insert(0) += 1;
        }
        for c in counts.values_mut() {
            *c = (*c).min(t);
        }
        Ok(HanfSignature {
            radius: r,
            threshold: t,
            counts,
        })
    }

    pub fn hanf_equivalent(
        &self,
        other: &Structure,
        r: usize,
        t: usize,
    ) -> Result<bool, StructureError> {
        if *self.vocab != *other.vocab {
            return Err(StructureError::VocabularyMismatch);
        }
        Ok(self.hanf_signature(r, t)? == other.hanf_signature(r, t)?)
    }

    /// Canonical encoding of the whole structure (no distinguished point).
    pub fn canonical_encoding(&self) -> canon::CanonEncoding {
        canon::canonical(self, None).0
    }

    pub fn is_isomorphic(&self, other: &Structure) -> Result<bool, StructureError> {
        Ok(self.isomorphism(other)?.is_some())
    }

    /// A witness bijection `f: self -> other` preserving all relations both
    /// ways, if one exists.
    pub fn isomorphism(&self, other: &Structure) -> Result<Option<Vec<usize>>, StructureError> {
        if *self.vocab != *other.vocab {
            return Err(StructureError::VocabularyMismatch);
        }
        if self.size != other.size {
            return Ok(None);
        }
        let (enc1, lab1) = canon::canonical(self, None);
        let (enc2, lab2) = canon::canonical(other, None);
        if enc1 != enc2 {
            return Ok(None);
        }
        // lab maps old -> canonical; compose lab1 with lab2^{-1}.
        let mut inv2 = vec![0; self.size];
        for (old, &new) in lab2.iter().enumerate() {
            inv2[new] = old;
        }
        let witness: Vec<usize> = (0..self.size).map(|v| inv2[lab1[v]]).collect();
        Ok(Some(witness))
    }

    /// Gaifman-graph diameter and maximum degree.
    pub fn diameter_and_degree(&self) -> (Distance, usize) {
        let g = self.gaifman();
        let max_degree = g.adj.iter().map(|n| n.len()).max().unwrap_or(0);
        let mut diameter = 0usize;
        for a in 0..self.size {
            for (b, d) in g.distances_from(a).iter().enumerate() {
                match d {
                    Some(d) => diameter = diameter.max(*d),
                    None => {
                        let _ = b;
                        return (Distance::Infinite, max_degree);
                    }
                }
            }
        }
        (Distance::Finite(diameter), max_degree)
    }

    /// Disjoint union, re-indexing the right block after the left.
    pub fn disjoint_union(&self, other: &Structure) -> Result<Structure, StructureError> {
        if *self.vocab != *other.vocab {
            return Err(StructureError::VocabularyMismatch);
        }
        let mut out = Structure::new(self.vocab.clone(), self.size + other.size);
        for (i, tuples) in self.interps.iter().enumerate() {
            out.interps[i] = tuples.clone();
        }
        for (i, tuples) in other.interps.iter().enumerate() {
            for t in tuples {
                out.interps[i].insert(t.iter().map(|&e| e + self.size).collect());
            }
        }
        Ok(out)
    }

    /// Parses the line-oriented structure file format.
    pub fn parse(text: &str) -> Result<Structure, StructureError> {
        let mut vocab: Option<Arc<Vocabulary>> = None;
        let mut structure: Option<Structure> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| StructureError::Parse { line: line_no, msg };
            if let Some(rest) = line.strip_prefix("vocab") {
                if vocab.is_some() {
                    return Err(err("duplicate vocab line".into()));
                }
                let mut rels = Vec::new();
                for part in rest.split_whitespace() {
                    let (name, arity) = part
                        .split_once('/')
                        .ok_or_else(|| err(format!("expected NAME/ARITY, got `{part}`")))?;
                    let arity: usize = arity
                        .parse()
                        .map_err(|_| err(format!("bad arity in `{part}`")))?;
                    rels.push((name.to_string(), arity));
                }
                vocab = Some(Arc::new(Vocabulary::new(rels)?));
            } else if let Some(rest) = line.strip_prefix("domain") {
                let v = vocab
                    .clone()
                    .ok_or_else(|| err("domain before vocab".into()))?;
                if structure.is_some() {
                    return Err(err("duplicate domain line".into()));
                }
                let n: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad domain size `{}`", rest.trim())))?;
                structure = Some(Structure::new(v, n));
            } else if let Some(rest) = line.strip_prefix("rel") {
                let s = structure
                    .as_mut()
                    .ok_or_else(|| err("rel before domain".into()))?;
                let (name, tuples) = rest
                    .split_once(':')
                    .ok_or_else(|| err("expected `rel NAME: tuples`".into()))?;
                let name = name.trim();
                for tup in tuples.split(',') {
                    let tup = tup.trim();
                    if tup.is_empty() {
                        continue;
                    }
                    let elems: Result<Vec<usize>, _> =
                        tup.split_whitespace().map(|x| x.parse::<usize>()).collect();
                    let elems =
                        elems.map_err(|_| err(format!("bad tuple `{tup}` for `{name}`")))?;
                    s.add_tuple(name, elems).map_err(|e| match e {
                        StructureError::Parse { .. } => e,
                        other => err(other.to_string()),
                    })?;
                }
            } else {
                return Err(err(format!("unrecognized line `{line}`")));
            }
        }
        structure.ok_or(StructureError::Parse {
            line: 0,
            msg: "missing vocab/domain".into(),
        })
    }

    /// Serializes in the file format: relations in vocabulary order, tuples in
    /// lexicographic order. `parse(serialize(s)) == s`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("vocab");
        for (name, arity) in self.vocab.relations() {
            out.push_str(&format!(" {name}/{arity}"));
        }
        out.push('\n');
        out.push_str(&format!("domain {}\n", self.size));
        for (i, (name, _)) in self.vocab.relations().iter().enumerate() {
            if self.interps[i].is_empty() {
                continue;
            }
            let tuples: Vec<String> = self.interps[i]
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            out.push_str(&format!("rel {name}: {}\n", tuples.join(", ")));
        }
        out
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.serialize())
    }
}

/// Result of restricting a structure to a subset of its universe.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub structure: Structure,
    /// `old_of_new[new] = old`, ascending.
    pub old_of_new: Vec<usize>,
    pub new_of_old: BTreeMap<usize, usize>,
}

/// Symmetric irreflexive adjacency derived from tuple co-occurrence.
#[derive(Debug, Clone)]
pub struct GaifmanGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl GaifmanGraph {
    pub fn neighbors(&self, a: usize) -> &BTreeSet<usize> {
        &self.adj[a]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn size(&self) -> usize {
        self.adj.len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ns) in self.adj.iter().enumerate() {
            for &b in ns {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn distances_from(&self, a: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.adj.len()];
        let mut queue = VecDeque::new();
        dist[a] = Some(0);
        queue.push_back(a);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &self.adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// A pointed structure: a base structure with one distinguished element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointedStructure {
    pub base: Structure,
    pub point: usize,
}

impl PointedStructure {
    pub fn new(base: Structure, point: usize) -> Result<Self, StructureError> {
        if point >= base.size() {
            return Err(StructureError::ElementOutOfRange {
                element: point,
                size: base.size(),
            });
        }
        Ok(PointedStructure { base, point })
    }
}

/// Canonical form of a pointed `r`-neighborhood.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeighborhoodType {
    radius: usize,
    encoding: canon::CanonEncoding,
}

impl NeighborhoodType {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn size(&self) -> usize {
        self.encoding.size
    }

    /// Rebuilds the canonical pointed structure this type denotes.
    pub fn canonical(&self) -> PointedStructure {
        let s = self.encoding.to_structure();
        PointedStructure {
            point: self.encoding.center.expect("neighborhood types are pointed"),
            base: s,
        }
    }
}

/// Capped per-type counts `min(count, t)`, with zero entries omitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HanfSignature {
    pub radius: usize,
    pub threshold: usize,
    pub counts: BTreeMap<NeighborhoodType, usize>,
}

impl HanfSignature {
    /// Signature as a vector indexed by a fixed type enumeration. Types not
    /// in the enumeration are an error on the caller's side; types absent
    /// from this structure get count 0.
    pub fn as_vector(&self, types: &[NeighborhoodType]) -> Option<Vec<usize>> {
        let mut vec = vec![0; types.len()];
        for (ty, count) in &self.counts {
            let idx = types.iter().position(|t| t == ty)?;
            vec[idx] = *count;
        }
        Some(vec)
    }
}

pub mod canon {
    //! Canonical labeling by color refinement with backtracking over
    //! refinement-stable cells. Exact and adequate at desk scale.

    use super::{Structure, Vocabulary};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    /// Order- and hash-comparable canonical encoding of a (possibly pointed)
    /// structure. Two structures have equal encodings iff they are isomorphic
    /// (pointed isomorphism when centers are present).
    #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
    pub struct CanonEncoding {
        pub size: usize,
        pub center: Option<usize>,
        pub relations: Vec<(String, usize)>,
        pub tuples: Vec<Vec<Vec<usize>>>,
    }

    impl CanonEncoding {
        pub fn to_structure(&self) -> Structure {
            let vocab = Arc::new(
                Vocabulary::new(self.relations.clone()).expect("canonical vocab is valid"),
            );
            let mut s = Structure::new(vocab, self.size);
            for (i, tuples) in self.tuples.iter().enumerate() {
                let name = self.relations[i].0.clone();
                for t in tuples {
                    s.add_tuple(&name, t.clone()).expect("canonical tuples valid");
                }
            }
            s
        }
    }

    /// Returns the canonical encoding and the relabeling `old -> new`
    /// achieving it.
    pub fn canonical(s: &Structure, center: Option<usize>) -> (CanonEncoding, Vec<usize>) {
        let n = s.size();
        if n == 0 {
            return (
                CanonEncoding {
                    size: 0,
                    center: None,
                    relations: s.vocab().relations().to_vec(),
                    tuples: vec![vec![]; s.vocab().relations().len()],
                },
                vec![],
            );
        }
        let mut init = vec![0usize; n];
        if let Some(c) = center {
            init[c] = 1;
        }
        let mut best: Option<(CanonEncoding, Vec<usize>)> = None;
        search(s, center, refine(s, &init), &mut best);
        best.expect("at least one labeling exists")
    }

    fn search(
        s: &Structure,
        center: Option<usize>,
        colors: Vec<usize>,
        best: &mut Option<(CanonEncoding, Vec<usize>)>,
    ) {
        let n = s.size();
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (v, &c) in colors.iter().enumerate() {
            classes.entry(c).or_default().push(v);
        }
        if let Some((_, cell)) = classes.iter().find(|(_, vs)| vs.len() > 1) {
            let cell = cell.clone();
            let max = *colors.iter().max().unwrap();
            for v in cell {
                let mut next = colors.clone();
                next[v] = max + 1;
                search(s, center, refine(s, &next), best);
            }
            return;
        }
        // Discrete: order elements by color.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&v| colors[v]);
        let mut relabel = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            relabel[old] = new;
        }
        let enc = encode(s, center, &relabel);
        match best {
            Some((b, _)) if *b <= enc => {}
            _ => *best = Some((enc, relabel)),
        }
    }

    fn encode(s: &Structure, center: Option<usize>, relabel: &[usize]) -> CanonEncoding {
        let relations = s.vocab().relations().to_vec();
        let mut tuples = Vec::with_capacity(relations.len());
        for i in 0..relations.len() {
            let mut ts: Vec<Vec<usize>> = s
                .tuples_by_index(i)
                .iter()
                .map(|t| t.iter().map(|&e| relabel[e]).collect())
                .collect();
            ts.sort();
            tuples.push(ts);
        }
        CanonEncoding {
            size: s.size(),
            center: center.map(|c| relabel[c]),
            relations,
            tuples,
        }
    }

    fn refine(s: &Structure, colors: &[usize]) -> Vec<usize> {
        let n = s.size();
        let mut colors = colors.to_vec();
        loop {
            // Signature of v: its color plus, per relation, the sorted list
            // of tuples containing v viewed through current colors with v's
            // own slots marked.
            let mut sigs: Vec<(usize, Vec<Vec<usize>>)> = (0..n).map(|v| (colors[v], vec![])).collect();
            for (r_idx, _) in s.vocab().relations().iter().enumerate() {
                for t in s.tuples_by_index(r_idx) {
                    for &v in t.iter().collect::<std::collections::BTreeSet<_>>() {
                        let view: Vec<usize> = std::iter::once(r_idx)
                            .chain(t.iter().map(|&u| {
                                if u == v {
                                    usize::MAX
                                } else {
                                    colors[u]
                                }
                            }))
                            .collect();
                        sigs[v].1.push(view);
                    }
                }
            }
            for sig in sigs.iter_mut() {
                sig.1.sort();
            }
            let mut sorted: Vec<&(usize, Vec<Vec<usize>>)> = sigs.iter().collect();
            sorted.sort();
            sorted.dedup();
            let rank: BTreeMap<&(usize, Vec<Vec<usize>>), usize> = sorted
                .iter()
                .enumerate()
                .map(|(i, s)| (*s, i))
                .collect();
            let next: Vec<usize> = (0..n).map(|v| rank[&sigs[v]]).collect();
            if next == colors {
                return colors;
            }
            colors = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    pub fn graph_vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(vec![("E", 2)]).unwrap())
    }

    /// Undirected path 0-1-...-(n-1).
    pub fn path(n: usize) -> Structure {
        let mut s = Structure::new(graph_vocab(), n);
        for i in 0..n.saturating_sub(1) {
            s.add_tuple("E", vec![i, i + 1]).unwrap();
            s.add_tuple("E", vec![i + 1, i]).unwrap();
        }
        s
    }

    /// Undirected cycle on n >= 3 vertices.
    pub fn cycle(n: usize) -> Structure {
        let mut s = Structure::new(graph_vocab(), n);
        for i in 0..n {
            let j = (i + 1) % n;
            s.add_tuple("E", vec![i, j]).unwrap();
            s.add_tuple("E", vec![j, i]).unwrap();
        }
        s
    }

    #[test]
    fn parse_p3() {
        let s = Structure::parse("vocab E/2\ndomain 3\nrel E: 0 1, 1 2").unwrap();
        assert_eq!(s.size(), 3);
        assert!(s.holds("E", &[0, 1]));
        assert!(s.holds("E", &[1, 2]));
        assert!(!s.holds("E", &[0, 2]));
    }

    #[test]
    fn parse_unary() {
        let s = Structure::parse("vocab P/1\ndomain 2\nrel P: 1").unwrap();
        assert_eq!(s.size(), 2);
        assert!(s.holds("P", &[1]));
        assert!(!s.holds("P", &[0]));
    }

    #[test]
    fn parse_out_of_range() {
        let err = Structure::parse("vocab E/2\ndomain 2\nrel E: 0 5").unwrap_err();
        match err {
            StructureError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("out of range"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_arity_mismatch() {
        assert!(Structure::parse("vocab E/2\ndomain 2\nrel E: 0").is_err());
    }

    #[test]
    fn serialize_round_trip() {
        let s = cycle(5);
        let t = Structure::parse(&s.serialize()).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn gaifman_from_ternary() {
        let vocab = Arc::new(Vocabulary::new(vec![("R", 3)]).unwrap());
        let mut s = Structure::new(vocab, 3);
        s.add_tuple("R", vec![0, 1, 2]).unwrap();
        let g = s.gaifman();
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn gaifman_directed_symmetrizes() {
        let mut s = Structure::new(graph_vocab(), 2);
        s.add_tuple("E", vec![0, 1]).unwrap();
        let g = s.gaifman();
        assert!(g.are_adjacent(0, 1));
        assert!(g.are_adjacent(1, 0));
    }

    #[test]
    fn gaifman_empty() {
        let s = Structure::new(graph_vocab(), 3);
        assert!(s.gaifman().edges().is_empty());
    }

    #[test]
    fn distance_path() {
        let p4 = path(4);
        assert_eq!(p4.distance(0, 3).unwrap(), Distance::Finite(3));
        assert_eq!(p4.distance(2, 2).unwrap(), Distance::Finite(0));
    }

    #[test]
    fn distance_disconnected() {
        let mut s = Structure::new(graph_vocab(), 4);
        s.add_tuple("E", vec![0, 1]).unwrap();
        s.add_tuple("E", vec![2, 3]).unwrap();
        assert_eq!(s.distance(0, 3).unwrap(), Distance::Infinite);
    }

    #[test]
    fn distance_out_of_range() {
        assert!(path(3).distance(0, 7).is_err());
    }

    #[test]
    fn ball_and_sphere_path() {
        let p4 = path(4);
        let (ball, sphere) = p4.ball_and_sphere(1, 1).unwrap();
        assert_eq!(ball, BTreeSet::from([0, 1, 2]));
        assert_eq!(sphere, BTreeSet::from([0, 2]));
    }

    #[test]
    fn ball_radius_zero() {
        let p4 = path(4);
        let (ball, sphere) = p4.ball_and_sphere(2, 0).unwrap();
        assert_eq!(ball, BTreeSet::from([2]));
        assert_eq!(sphere, BTreeSet::from([2]));
    }

    #[test]
    fn ball_c6_r3() {
        let c6 = cycle(6);
        let (ball, sphere) = c6.ball_and_sphere(0, 3).unwrap();
        assert_eq!(ball.len(), 6);
        assert_eq!(sphere, BTreeSet::from([3]));
    }

    #[test]
    fn sphere_is_ball_difference() {
        let c6 = cycle(6);
        for a in 0..6 {
            for r in 1..5 {
                let (ball_r, sphere_r) = c6.ball_and_sphere(a, r).unwrap();
                let (ball_prev, _) = c6.ball_and_sphere(a, r - 1).unwrap();
                let diff: BTreeSet<usize> = ball_r.difference(&ball_prev).copied().collect();
                assert_eq!(sphere_r, diff);
            }
        }
    }

    #[test]
    fn neighborhood_types_on_cycles() {
        let c6 = cycle(6);
        let t0 = c6.neighborhood_type(0, 1).unwrap();
        for a in 1..6 {
            assert_eq!(t0, c6.neighborhood_type(a, 1).unwrap());
        }
        let c3 = cycle(3);
        assert_ne!(t0, c3.neighborhood_type(0, 1).unwrap());
    }

    #[test]
    fn radius_zero_types_split_by_atoms() {
        let vocab = Arc::new(Vocabulary::new(vec![("P", 1)]).unwrap());
        let mut s = Structure::new(vocab, 3);
        s.add_tuple("P", vec![0]).unwrap();
        let t0 = s.neighborhood_type(0, 0).unwrap();
        let t1 = s.neighborhood_type(1, 0).unwrap();
        let t2 = s.neighborhood_type(2, 0).unwrap();
        assert_ne!(t0, t1);
        assert_eq!(t1, t2);
    }

    /// Brute-force pointed isomorphism by permutation search.
    pub fn pointed_iso_brute(s1: &Structure, p1: usize, s2: &Structure, p2: usize) -> bool {
        if s1.size() != s2.size() {
            return false;
        }
        let n = s1.size();
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            if perm[p1] == p2 && s1.relabel(&perm) == *s2 {
                return true;
            }
            if !next_permutation(&mut perm) {
                return false;
            }
        }
    }

    pub fn next_permutation(p: &mut [usize]) -> bool {
        let n = p.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && p[i - 1] >= p[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while p[j] <= p[i - 1] {
            j -= 1;
        }
        p.swap(i - 1, j);
        p[i..].reverse();
        true
    }

    #[test]
    fn type_equality_matches_brute_force() {
        // All pointed comparisons across a few structures of size <= 6.
        let structures = vec![path(3), path(4), cycle(3), cycle(4), cycle(6), path(6)];
        for s1 in &structures {
            for s2 in &structures {
                for a in 0..s1.size() {
                    for b in 0..s2.size() {
                        for r in 0..3 {
                            let t1 = s1.neighborhood_type(a, r).unwrap();
                            let t2 = s2.neighborhood_type(b, r).unwrap();
                            let r1 = s1.restrict(&s1.ball_and_sphere(a, r).unwrap().0).unwrap();
                            let r2 = s2.restrict(&s2.ball_and_sphere(b, r).unwrap().0).unwrap();
                            let brute = pointed_iso_brute(
                                &r1.structure,
                                r1.new_of_old[&a],
                                &r2.structure,
                                r2.new_of_old[&b],
                            );
                            assert_eq!(t1 == t2, brute, "r={r} a={a} b={b}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hanf_signature_c6() {
        let c6 = cycle(6);
        let sig = c6.hanf_signature(1, 3).unwrap();
        assert_eq!(sig.counts.len(), 1);
        assert_eq!(*sig.counts.values().next().unwrap(), 3);
        let sig10 = c6.hanf_signature(1, 10).unwrap();
        assert_eq!(*sig10.counts.values().next().unwrap(), 6);
    }

    #[test]
    fn hanf_signature_empty() {
        let s = Structure::new(graph_vocab(), 0);
        assert!(s.hanf_signature(1, 3).unwrap().counts.is_empty());
    }

    #[test]
    fn hanf_equivalence_cycles() {
        let c6 = cycle(6);
        let c7 = cycle(7);
        assert!(c6.hanf_equivalent(&c7, 1, 6).unwrap());
        assert!(!c6.hanf_equivalent(&c7, 1, 7).unwrap());
        assert!(c6.hanf_equivalent(&c6, 2, 4).unwrap());
    }

    #[test]
    fn hanf_vocabulary_mismatch() {
        let s = path(3);
        let vocab = Arc::new(Vocabulary::new(vec![("P", 1)]).unwrap());
        let t = Structure::new(vocab, 3);
        assert!(s.hanf_equivalent(&t, 1, 1).is_err());
    }

    #[test]
    fn isomorphism_relabeled_cycle() {
        let c6 = cycle(6);
        let relabeled = c6.relabel(&[3, 0, 4, 1, 5, 2]);
        let w = c6.isomorphism(&relabeled).unwrap().unwrap();
        // Verify the witness really is an isomorphism.
        assert_eq!(c6.relabel(&w), relabeled);
    }

    #[test]
    fn non_isomorphic_same_counts() {
        let c6 = cycle(6);
        let c3c3 = cycle(3).disjoint_union(&cycle(3)).unwrap();
        assert!(!c6.is_isomorphic(&c3c3).unwrap());
    }

    #[test]
    fn empty_structures_isomorphic() {
        let a = Structure::new(graph_vocab(), 0);
        let b = Structure::new(graph_vocab(), 0);
        assert!(a.is_isomorphic(&b).unwrap());
    }

    #[test]
    fn diameter_and_degree_examples() {
        let p4 = path(4);
        assert_eq!(p4.diameter_and_degree(), (Distance::Finite(3), 2));
        let single = Structure::new(graph_vocab(), 1);
        assert_eq!(single.diameter_and_degree(), (Distance::Finite(0), 0));
        let mut two = Structure::new(graph_vocab(), 2);
        assert_eq!(two.diameter_and_degree(), (Distance::Infinite, 0));
        two.add_tuple("E", vec![0, 1]).unwrap();
        assert_eq!(two.diameter_and_degree(), (Distance::Finite(1), 1));
    }

    #[test]
    fn restrict_examples() {
        let p4 = path(4);
        let r = p4.restrict(&BTreeSet::from([0, 1])).unwrap();
        assert_eq!(r.structure.size(), 2);
        assert!(r.structure.holds("E", &[0, 1]));

        let full = p4.restrict(&(0..4).collect()).unwrap();
        assert!(full.structure.is_isomorphic(&p4).unwrap());

        let empty = p4.restrict(&BTreeSet::new()).unwrap();
        assert_eq!(empty.structure.size(), 0);

        assert!(p4.restrict(&BTreeSet::from([9])).is_err());
    }

    #[test]
    fn distance_symmetry_and_triangle() {
        let structures = vec![path(5), cycle(6), cycle(3).disjoint_union(&path(2)).unwrap()];
        for s in &structures {
            for a in 0..s.size() {
                for b in 0..s.size() {
                    let dab = s.distance(a, b).unwrap();
                    assert_eq!(dab, s.distance(b, a).unwrap());
                    for c in 0..s.size() {
                        if let (Distance::Finite(x), Distance::Finite(y), Distance::Finite(z)) =
                            (dab, s.distance(b, c).unwrap(), s.distance(a, c).unwrap())
                        {
                            assert!(z <= x + y);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn neighborhood_type_isomorphism_invariant() {
        let c5 = cycle(5);
        let perm = [2, 4, 0, 1, 3];
        let relabeled = c5.relabel(&perm);
        for a in 0..5 {
            for r in 0..3 {
                assert_eq!(
                    c5.neighborhood_type(a, r).unwrap(),
                    relabeled.neighborhood_type(perm[a], r).unwrap()
                );
            }
        }
    }
}
