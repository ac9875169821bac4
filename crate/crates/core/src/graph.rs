//! Causal DAGs: a small edge-list format, reachability and d-separation
//! queries, and back-door adjustment set validation and enumeration.
//!
//! Nodes marked `constant` are observed variables that do not vary in the
//! data. Holding a variable constant is conditioning on it, so constants are
//! always part of the conditioning set in [`CausalDag::d_separated`] and in
//! the back-door check, and never need to appear in an adjustment set.
//! Nodes marked `latent` are unobserved and may not be adjusted for.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The shipped farm-system graph.
pub const FARM_GRAPH: &str = include_str!("../../../data/farm.graph");

/// Adjustment set reported for the farm graph, in graph node names.
pub const FARM_ADJUSTMENT_SET: [&str; 8] = ["WS", "SoC", "SM", "G", "SP", "AbS", "AdS", "SV"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalDag {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    treatment: usize,
    outcome: usize,
    constants: BTreeSet<usize>,
    latents: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentSet {
    pub nodes: BTreeSet<String>,
    pub valid: bool,
    pub minimal: bool,
}

impl CausalDag {
    /// Build a DAG from node names and `(cause, effect)` pairs.
    pub fn new(
        nodes: &[&str],
        edges: &[(&str, &str)],
        treatment: &str,
        outcome: &str,
    ) -> Result<Self> {
        let mut b = Builder::default();
        for n in nodes {
            b.add_node(n);
        }
        for (a, c) in edges {
            b.add_node(a);
            b.add_node(c);
            b.add_edge(a, c).map_err(Error::invalid)?;
        }
        b.treatment = Some(treatment.to_string());
        b.outcome = Some(outcome.to_string());
        b.finish()
    }

    /// Mark nodes as observed constants.
    pub fn with_constants(mut self, names: &[&str]) -> Result<Self> {
        for n in names {
            let i = self.require(n)?;
            self.constants.insert(i);
        }
        Ok(self)
    }

    /// Parse the line-oriented graph format:
    ///
    /// ```text
    /// # comment
    /// treatment T
    /// outcome Y
    /// constant C      # observed, held constant
    /// latent U        # unobserved
    /// node X          # optional; once any is given, edges must use declared nodes
    /// A -> B
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut b = Builder::default();
        let mut directives: Vec<(usize, usize, &str, String)> = Vec::new();
        let mut edges: Vec<(usize, usize, String, String)> = Vec::new();
        let mut strict = false;

        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let tokens = tokenize(content);
            let syntax = |column: usize, message: String| Error::Syntax {
                line: line_no,
                column,
                message,
            };
            match tokens.as_slice() {
                [(c, kw), (nc, name)] if is_keyword(kw) => {
                    check_name(name).map_err(|m| syntax(*nc, m))?;
                    if *kw == "node" {
                        strict = true;
                        b.add_node(name);
                    } else {
                        directives.push((line_no, *c, kw, name.to_string()));
                    }
                }
                [(ac, a), (oc, arrow), (bc, c)] if *arrow == "->" => {
                    check_name(a).map_err(|m| syntax(*ac, m))?;
                    check_name(c).map_err(|m| syntax(*bc, m))?;
                    let _ = oc;
                    edges.push((line_no, *ac, a.to_string(), c.to_string()));
                }
                [(c, first), ..] => {
                    let message = if is_keyword(first) {
                        format!("`{first}` takes exactly one node name")
                    } else {
                        format!("expected `<A> -> <B>` or a directive, found `{}`", content.trim())
                    };
                    return Err(syntax(*c, message));
                }
                [] => unreachable!(),
            }
        }

        for (line, column, a, c) in &edges {
            for n in [a, c] {
                if strict && !b.index.contains_key(n.as_str()) {
                    return Err(Error::UnknownNode(n.clone()));
                }
                b.add_node(n);
            }
            b.add_edge(a, c).map_err(|message| Error::Syntax {
                line: *line,
                column: *column,
                message,
            })?;
        }

        for (line, column, kw, name) in directives {
            let slot = match kw {
                "treatment" => &mut b.treatment,
                "outcome" => &mut b.outcome,
                "constant" => {
                    b.constants.push(name);
                    continue;
                }
                "latent" => {
                    b.add_node(&name);
                    b.latents.push(name);
                    continue;
                }
                _ => unreachable!(),
            };
            if slot.is_some() {
                return Err(Error::Syntax {
                    line,
                    column,
                    message: format!("duplicate `{kw}` declaration"),
                });
            }
            *slot = Some(name);
        }
        b.finish()
    }

    /// Canonical text: directives, then every node, then edges, all sorted.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "treatment {}", self.names[self.treatment]);
        let _ = writeln!(out, "outcome {}", self.names[self.outcome]);
        for n in self.sorted_names(&self.constants) {
            let _ = writeln!(out, "constant {n}");
        }
        for n in self.sorted_names(&self.latents) {
            let _ = writeln!(out, "latent {n}");
        }
        let mut names: Vec<&str> = self.names.iter().map(String::as_str).collect();
        names.sort_unstable();
        for n in names {
            let _ = writeln!(out, "node {n}");
        }
        let mut edges: Vec<(&str, &str)> = self.edges().collect();
        edges.sort_unstable();
        for (a, c) in edges {
            let _ = writeln!(out, "{a} -> {c}");
        }
        out
    }

    fn sorted_names(&self, set: &BTreeSet<usize>) -> Vec<&str> {
        let mut v: Vec<&str> = set.iter().map(|&i| self.names[i].as_str()).collect();
        v.sort_unstable();
        v
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.children.iter().enumerate().flat_map(move |(a, cs)| {
            cs.iter().map(move |&c| (self.names[a].as_str(), self.names[c].as_str()))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn treatment(&self) -> &str {
        &self.names[self.treatment]
    }

    pub fn outcome(&self) -> &str {
        &self.names[self.outcome]
    }

    pub fn constants(&self) -> BTreeSet<String> {
        self.constants.iter().map(|&i| self.names[i].clone()).collect()
    }

    pub fn latents(&self) -> BTreeSet<String> {
        self.latents.iter().map(|&i| self.names[i].clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    fn require_all<'a, I: IntoIterator<Item = &'a str>>(&self, names: I) -> Result<Vec<usize>> {
        names.into_iter().map(|n| self.require(n)).collect()
    }

    fn descendants_mask(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.names.len()];
        let mut stack = self.children[start].clone();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(&self.children[v]);
            }
        }
        seen
    }

    /// Nodes reachable from `node` along directed edges, excluding itself.
    pub fn descendants(&self, node: &str) -> Result<BTreeSet<String>> {
        let i = self.require(node)?;
        Ok(self.names_of_mask(&self.descendants_mask(i)))
    }

    /// Nodes with a directed path into `node`, excluding itself.
    pub fn ancestors(&self, node: &str) -> Result<BTreeSet<String>> {
        let i = self.require(node)?;
        let mut seen = vec![false; self.names.len()];
        let mut stack = self.parents[i].clone();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(&self.parents[v]);
            }
        }
        Ok(self.names_of_mask(&seen))
    }

    fn names_of_mask(&self, mask: &[bool]) -> BTreeSet<String> {
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.names[i].clone())
            .collect()
    }

    /// True iff every path between `xs` and `ys` is blocked by `zs` plus the
    /// graph's constants.
    pub fn d_separated(&self, xs: &[&str], ys: &[&str], zs: &[&str]) -> Result<bool> {
        let x = self.require_all(xs.iter().copied())?;
        let y = self.require_all(ys.iter().copied())?;
        let z = self.require_all(zs.iter().copied())?;
        for (a, b, label) in [(&x, &y, "X and Y"), (&x, &z, "X and Z"), (&y, &z, "Y and Z")] {
            if a.iter().any(|i| b.contains(i)) {
                return Err(Error::OverlappingSets(label.to_string()));
            }
        }
        Ok(self.d_separated_idx(&x, &y, &z))
    }

    fn d_separated_idx(&self, x: &[usize], y: &[usize], z: &[usize]) -> bool {
        let n = self.names.len();
        let mut in_z = vec![false; n];
        for &i in z.iter().chain(self.constants.iter()) {
            in_z[i] = true;
        }
        for &i in x.iter().chain(y) {
            in_z[i] = false;
        }
        !self.reachable(x, &in_z).iter().enumerate().any(|(i, &r)| r && y.contains(&i))
    }

    /// Nodes connected to `x` by an active trail given the conditioning mask.
    fn reachable(&self, x: &[usize], in_z: &[bool]) -> Vec<bool> {
        let n = self.names.len();
        // nodes that are in Z or have a descendant in Z: colliders there are open
        let mut anc_z = in_z.to_vec();
        let mut stack: Vec<usize> = (0..n).filter(|&i| in_z[i]).collect();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if !anc_z[p] {
                    anc_z[p] = true;
                    stack.push(p);
                }
            }
        }

        const UP: usize = 0; // arrived from a child
        const DOWN: usize = 1; // arrived from a parent
        let mut visited = vec![[false; 2]; n];
        let mut reach = vec![false; n];
        let mut queue: VecDeque<(usize, usize)> = x.iter().map(|&v| (v, UP)).collect();
        while let Some((v, dir)) = queue.pop_front() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if !in_z[v] {
                reach[v] = true;
            }
            if dir == UP && !in_z[v] {
                queue.extend(self.parents[v].iter().map(|&p| (p, UP)));
                queue.extend(self.children[v].iter().map(|&c| (c, DOWN)));
            } else if dir == DOWN {
                if !in_z[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, DOWN)));
                }
                if anc_z[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, UP)));
                }
            }
        }
        reach
    }

    /// Copy of the graph with every edge out of `node` removed.
    fn without_out_edges(&self, node: usize) -> CausalDag {
        let mut g = self.clone();
        for c in std::mem::take(&mut g.children[node]) {
            g.parents[c].retain(|&p| p != node);
        }
        g
    }

    fn backdoor_valid(&self, cut: &CausalDag, desc_t: &[bool], z: &[usize]) -> bool {
        !z.iter().any(|&i| desc_t[i]) && cut.d_separated_idx(&[self.treatment], &[self.outcome], z)
    }

    /// Check `z` against the back-door criterion for (treatment, outcome) and
    /// report whether it is minimal (no proper subset is also valid).
    pub fn is_backdoor_set<S: AsRef<str>>(&self, z: &[S]) -> Result<AdjustmentSet> {
        let idx = self.require_all(z.iter().map(AsRef::as_ref))?;
        if idx.contains(&self.treatment) || idx.contains(&self.outcome) {
            return Err(Error::OverlappingSets(
                "adjustment set contains the treatment or outcome".into(),
            ));
        }
        if let Some(&l) = idx.iter().find(|i| self.latents.contains(i)) {
            return Err(Error::invalid(format!(
                "latent node `{}` cannot be adjusted for",
                self.names[l]
            )));
        }
        let mut idx: Vec<usize> = idx.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        idx.sort_unstable();
        let cut = self.without_out_edges(self.treatment);
        let desc_t = self.descendants_mask(self.treatment);
        let valid = self.backdoor_valid(&cut, &desc_t, &idx);
        let minimal = valid
            && (0..(1u64 << idx.len()) - 1).all(|mask| {
                let sub: Vec<usize> = bits(mask).map(|b| idx[b]).collect();
                !self.backdoor_valid(&cut, &desc_t, &sub)
            });
        Ok(AdjustmentSet {
            nodes: idx.iter().map(|&i| self.names[i].clone()).collect(),
            valid,
            minimal,
        })
    }

    /// All valid back-door sets over observed, non-constant non-descendants of
    /// the treatment, ordered by size then lexicographically, truncated to
    /// `max_results`. An empty result means the effect is not identifiable
    /// by back-door adjustment.
    pub fn enumerate_backdoor_sets(&self, max_results: usize) -> Vec<AdjustmentSet> {
        let desc_t = self.descendants_mask(self.treatment);
        let mut candidates: Vec<usize> = (0..self.names.len())
            .filter(|&i| {
                i != self.treatment
                    && i != self.outcome
                    && !desc_t[i]
                    && !self.constants.contains(&i)
                    && !self.latents.contains(&i)
            })
            .collect();
        candidates.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        assert!(candidates.len() < 31, "too many candidate nodes for exhaustive search");

        let cut = self.without_out_edges(self.treatment);
        let valid_masks: Vec<u32> = (0..(1u32 << candidates.len()))
            .filter(|&mask| {
                let z: Vec<usize> = bits(mask as u64).map(|b| candidates[b]).collect();
                self.backdoor_valid(&cut, &desc_t, &z)
            })
            .collect();

        let mut sets: Vec<(Vec<&str>, u32)> = valid_masks
            .iter()
            .map(|&m| (bits(m as u64).map(|b| self.names[candidates[b]].as_str()).collect(), m))
            .collect();
        sets.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        sets.truncate(max_results);
        sets.into_iter()
            .map(|(names, m)| AdjustmentSet {
                nodes: names.into_iter().map(str::to_string).collect(),
                valid: true,
                minimal: !valid_masks.iter().any(|&o| o != m && o & m == o),
            })
            .collect()
    }
}

fn bits(mask: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |b| mask >> b & 1 == 1)
}

const KEYWORDS: [&str; 5] = ["node", "treatment", "outcome", "constant", "latent"];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

fn check_name(s: &str) -> std::result::Result<(), String> {
    let mut chars = s.chars();
    let ok = chars
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_');
    if ok && !is_keyword(s) {
        Ok(())
    } else {
        Err(format!("invalid node name `{s}`"))
    }
}

/// Split on whitespace, separating `->`; columns are 1-based char offsets.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let col_of = |byte: usize| line[..byte].chars().count() + 1;
    let mut i = 0;
    while i < chars.len() {
        let (b, c) = chars[i];
        let arrow = c == '-' && chars.get(i + 1).is_some_and(|&(_, n)| n == '>');
        if c.is_whitespace() || arrow {
            if let Some(s) = start.take() {
                out.push((col_of(s), &line[s..b]));
            }
            if arrow {
                out.push((col_of(b), &line[b..b + 2]));
                i += 2;
                continue;
            }
        } else if start.is_none() {
            start = Some(b);
        }
        i += 1;
    }
    if let Some(s) = start {
        out.push((col_of(s), &line[s..]));
    }
    out
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    treatment: Option<String>,
    outcome: Option<String>,
    constants: Vec<String>,
    latents: Vec<String>,
}

impl Builder {
    fn add_node(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    fn add_edge(&mut self, a: &str, c: &str) -> std::result::Result<(), String> {
        let (ia, ic) = (self.index[a], self.index[c]);
        if self.edges.contains(&(ia, ic)) {
            return Err(format!("duplicate edge `{a} -> {c}`"));
        }
        self.edges.push((ia, ic));
        Ok(())
    }

    fn finish(self) -> Result<CausalDag> {
        let n = self.names.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(a, c) in &self.edges {
            children[a].push(c);
            parents[c].push(a);
        }
        if let Some(cycle) = find_cycle(&children) {
            return Err(Error::Cycle(cycle.into_iter().map(|i| self.names[i].clone()).collect()));
        }
        let lookup = |name: &str| {
            self.index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        let treatment = lookup(self.treatment.as_deref().ok_or(Error::MissingDeclaration("treatment"))?)?;
        let outcome = lookup(self.outcome.as_deref().ok_or(Error::MissingDeclaration("outcome"))?)?;
        if treatment == outcome {
            return Err(Error::invalid("treatment and outcome must differ"));
        }
        let constants = self.constants.iter().map(|c| lookup(c)).collect::<Result<BTreeSet<_>>>()?;
        let latents = self.latents.iter().map(|c| lookup(c)).collect::<Result<BTreeSet<_>>>()?;
        for i in [treatment, outcome] {
            if constants.contains(&i) || latents.contains(&i) {
                return Err(Error::invalid(format!(
                    "`{}` cannot be both designated and constant/latent",
                    self.names[i]
                )));
            }
        }
        if let Some(&i) = constants.intersection(&latents).next() {
            return Err(Error::invalid(format!("`{}` is both constant and latent", self.names[i])));
        }
        Ok(CausalDag {
            names: self.names,
            index: self.index,
            parents,
            children,
            treatment,
            outcome,
            constants,
            latents,
        })
    }
}

/// One directed cycle as a closed node walk, if any exists.
fn find_cycle(children: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = children.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut path = vec![root];
        let mut next = vec![0usize];
        mark[root] = Mark::Active;
        while let Some(&v) = path.last() {
            let k = next.last_mut().unwrap();
            if let Some(&c) = children[v].get(*k) {
                *k += 1;
                match mark[c] {
                    Mark::Active => {
                        let start = path.iter().position(|&p| p == c).unwrap();
                        let mut cycle = path[start..].to_vec();
                        cycle.push(c);
                        return Some(cycle);
                    }
                    Mark::New => {
                        mark[c] = Mark::Active;
                        path.push(c);
                        next.push(0);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                path.pop();
                next.pop();
            }
        }
    }
    None
}
