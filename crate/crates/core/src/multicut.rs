//! Minimum-cost multicut (correlation clustering).
//!
//! Positive edges attract, negative edges repel; the objective is the total
//! weight of edges whose endpoints end up in different clusters. Two solvers:
//! an exact branch-and-bound over set partitions for small graphs, and greedy
//! additive edge contraction followed by local node moves.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest graph accepted by [`solve_exact`].
pub const EXACT_MAX_NODES: usize = 12;

const EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MulticutError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) given twice")]
    Duplicate(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfRange(usize, usize, usize),
    #[error("edge ({0}, {1}) has non-finite weight")]
    NonFinite(usize, usize),
    #[error("exact solver supports at most {EXACT_MAX_NODES} nodes, got {0}")]
    TooLarge(usize),
    #[error("graph file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Sparse undirected graph; absent pairs have weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    /// Endpoints are normalized to `u < v`.
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, MulticutError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (a, b, w) in edges {
            if a == b {
                return Err(MulticutError::SelfLoop(a));
            }
            let (u, v) = (a.min(b), a.max(b));
            if v >= n {
                return Err(MulticutError::OutOfRange(u, v, n));
            }
            if !w.is_finite() {
                return Err(MulticutError::NonFinite(u, v));
            }
            if !seen.insert((u, v)) {
                return Err(MulticutError::Duplicate(u, v));
            }
            out.push((u, v, w));
        }
        Ok(WeightedGraph { n, edges: out })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }

    /// Text format: `n m`, then `m` lines of `u v w`.
    pub fn parse(text: &str) -> Result<Self, MulticutError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, message: &str| MulticutError::Parse {
            line,
            message: message.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| err(1, "missing `n m` header"))?;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(hl, "bad node count"))?;
        let m: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(hl, "bad edge count"))?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, line) = lines.next().ok_or_else(|| err(hl, "fewer edge lines than declared"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err(ln, "expected `u v w`"));
            }
            let u = parts[0].parse().map_err(|_| err(ln, "bad endpoint"))?;
            let v = parts[1].parse().map_err(|_| err(ln, "bad endpoint"))?;
            let w = parts[2].parse().map_err(|_| err(ln, "bad weight"))?;
            edges.push((u, v, w));
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "more edge lines than declared"));
        }
        WeightedGraph::new(n, edges)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.edges.len());
        for (u, v, w) in &self.edges {
            let _ = writeln!(s, "{u} {v} {w}");
        }
        s
    }
}

/// Dense clustering of nodes; labels are numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    /// Any labeling; ids are densified in order of first appearance.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = BTreeMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Partition { labels }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            labels: (0..n).collect(),
        }
    }

    pub fn one_cluster(n: usize) -> Self {
        Partition { labels: vec![0; n] }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Total weight of edges between different clusters.
pub fn cut_cost(g: &WeightedGraph, p: &Partition) -> f64 {
    g.edges
        .iter()
        .filter(|(u, v, _)| p.labels[*u] != p.labels[*v])
        .map(|(_, _, w)| w)
        .sum()
}

/// Node sets of each cluster, ordered by their smallest member.
pub fn clusters_of(p: &Partition) -> Vec<Vec<usize>> {
    let canon = Partition::from_labels(&p.labels);
    let mut out = vec![Vec::new(); canon.num_clusters()];
    for (node, &l) in canon.labels.iter().enumerate() {
        out[l].push(node);
    }
    out
}

/// Exact minimum by depth-first enumeration of restricted growth strings,
/// pruned with the bound "every remaining negative edge gets cut".
pub fn solve_exact(g: &WeightedGraph) -> Result<Partition, MulticutError> {
    let n = g.n;
    if n > EXACT_MAX_NODES {
        return Err(MulticutError::TooLarge(n));
    }
    if n == 0 {
        return Ok(Partition { labels: vec![] });
    }
    let mut w = vec![vec![0.0; n]; n];
    for &(u, v, x) in &g.edges {
        w[u][v] = x;
        w[v][u] = x;
    }
    // neg_tail[i]: sum of negative weights on edges with max endpoint >= i
    let mut neg_tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let neg_here: f64 = (0..i).map(|j| w[i][j].min(0.0)).sum();
        neg_tail[i] = neg_tail[i + 1] + neg_here;
    }

    struct Search<'a> {
        w: &'a [Vec<f64>],
        neg_tail: &'a [f64],
        labels: Vec<usize>,
        best: f64,
        best_labels: Vec<usize>,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, used: usize, cost: f64) {
            let n = self.labels.len();
            if i == n {
                if cost < self.best - EPS {
                    self.best = cost;
                    self.best_labels.clone_from(&self.labels);
                }
                return;
            }
            if cost + self.neg_tail[i] >= self.best - EPS {
                return;
            }
            let row_total: f64 = (0..i).map(|j| self.w[i][j]).sum();
            for c in 0..=used {
                let same: f64 = (0..i)
                    .filter(|&j| self.labels[j] == c)
                    .map(|j| self.w[i][j])
                    .sum();
                self.labels[i] = c;
                let next_used = if c == used { used + 1 } else { used };
                self.go(i + 1, next_used, cost + row_total - same);
            }
        }
    }

    let mut search = Search {
        w: &w,
        neg_tail: &neg_tail,
        labels: vec![0; n],
        best: f64::INFINITY,
        best_labels: vec![0; n],
    };
    search.labels[0] = 0;
    search.go(1, 1, 0.0);
    Ok(Partition::from_labels(&search.best_labels))
}

#[derive(PartialEq)]
struct Candidate {
    weight: f64,
    u: usize,
    v: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then_with(|| Reverse(self.u).cmp(&Reverse(other.u)))
            .then_with(|| Reverse(self.v).cmp(&Reverse(other.v)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy additive edge contraction: repeatedly merge the endpoints of the
/// heaviest positive edge, summing parallel edges. Ties go to the lowest
/// node pair.
pub fn greedy_additive_contraction(g: &WeightedGraph) -> Partition {
    let n = g.n;
    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for &(u, v, w) in &g.edges {
        adj[u].insert(v, w);
        adj[v].insert(u, w);
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut heap = BinaryHeap::new();
    for &(u, v, w) in &g.edges {
        if w > 0.0 {
            heap.push(Candidate { weight: w, u, v });
        }
    }
    let mut alive = vec![true; n];
    while let Some(Candidate { weight, u, v }) = heap.pop() {
        if !(alive[u] && alive[v]) {
            continue;
        }
        match adj[u].get(&v) {
            Some(w) if w.to_bits() == weight.to_bits() => {}
            _ => continue,
        }
        // contract v into u (u < v)
        alive[v] = false;
        parent[v] = u;
        let moved = std::mem::take(&mut adj[v]);
        adj[u].remove(&v);
        for (k, w) in moved {
            if k == u {
                continue;
            }
            adj[k].remove(&v);
            let merged = {
                let e = adj[u].entry(k).or_insert(0.0);
                *e += w;
                *e
            };
            adj[k].insert(u, merged);
            if merged > 0.0 {
                heap.push(Candidate {
                    weight: merged,
                    u: u.min(k),
                    v: u.max(k),
                });
            }
        }
    }
    let root = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let labels: Vec<usize> = (0..n).map(root).collect();
    Partition::from_labels(&labels)
}

/// Improve a partition by single-node moves and pairwise cluster joins, with
/// Kernighan-Lin move sequences once those stall, until nothing lowers the cost.
pub fn local_search(g: &WeightedGraph, start: &Partition) -> Partition {
    const MAX_ROUNDS: usize = 1000;
    let n = g.n;
    let adj = g.adjacency();
    let mut labels = start.labels.clone();
    let mut next_label = labels.iter().max().map_or(0, |m| m + 1);

    for _ in 0..MAX_ROUNDS {
        let mut changed = false;

        for i in 0..n {
            let mut attach: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, w) in &adj[i] {
                *attach.entry(labels[j]).or_insert(0.0) += w;
            }
            let own = labels[i];
            let here = attach.get(&own).copied().unwrap_or(0.0);
            let mut best_gain = EPS;
            let mut target = None;
            for (&c, &s) in &attach {
                if c != own && s - here > best_gain {
                    best_gain = s - here;
                    target = Some(c);
                }
            }
            // leaving for a fresh singleton gains `-here`
            let alone = labels.iter().enumerate().all(|(j, &l)| j == i || l != own);
            if !alone && -here > best_gain {
                target = Some(next_label);
                next_label += 1;
            }
            if let Some(c) = target {
                labels[i] = c;
                changed = true;
            }
        }

        let mut between: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(u, v, w) in &g.edges {
            let (a, b) = (labels[u], labels[v]);
            if a != b {
                *between.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
            }
        }
        let best_join = between
            .iter()
            .filter(|(_, &w)| w > EPS)
            .max_by(|x, y| x.1.total_cmp(y.1).then_with(|| y.0.cmp(x.0)));
        if let Some((&(a, b), _)) = best_join {
            for l in labels.iter_mut() {
                if *l == b {
                    *l = a;
                }
            }
            changed = true;
        }

        if !changed && !kernighan_lin_round(&adj, &mut labels, &mut next_label) {
            break;
        }
    }
    Partition::from_labels(&labels)
}

/// One Kernighan-Lin style sequence: repeatedly apply the best move of a node
/// that has not moved yet (to any cluster or to a new one), even when it
/// loses, then keep the best prefix. Returns whether the cost dropped.
fn kernighan_lin_round(adj: &[Vec<(usize, f64)>], labels: &mut [usize], next_label: &mut usize) -> bool {
    let n = labels.len();
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels.iter() {
        *size.entry(l).or_insert(0) += 1;
    }
    let mut moved = vec![false; n];
    let mut history: Vec<(usize, usize)> = Vec::with_capacity(n);
    let (mut total, mut best, mut best_len) = (0.0, EPS, 0);
    for _ in 0..n {
        let mut pick: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| !moved[i]) {
            let mut attach: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, w) in &adj[i] {
                *attach.entry(labels[j]).or_insert(0.0) += w;
            }
            let own = labels[i];
            let here = attach.get(&own).copied().unwrap_or(0.0);
            let mut consider = |c: usize, gain: f64| {
                if pick.is_none_or(|(_, _, g)| gain > g) {
                    pick = Some((i, c, gain));
                }
            };
            for (&c, &s) in &attach {
                if c != own {
                    consider(c, s - here);
                }
            }
            if size[&own] > 1 {
                consider(*next_label, -here);
            }
        }
        let Some((i, c, gain)) = pick else { break };
        if c == *next_label {
            *next_label += 1;
        }
        let old = labels[i];
        *size.get_mut(&old).expect("own cluster") -= 1;
        *size.entry(c).or_insert(0) += 1;
        labels[i] = c;
        moved[i] = true;
        history.push((i, old));
        total += gain;
        if total > best {
            best = total;
            best_len = history.len();
        }
    }
    for &(i, old) in history[best_len..].iter().rev() {
        labels[i] = old;
    }
    best_len > 0
}

/// Perturbation rounds of [`solve_heuristic`] per node. The total is capped
/// by a work budget measured in node-edge products, so large graphs get few.
const KICKS_PER_NODE: usize = 2;
const KICK_BUDGET: usize = 8192;

/// Deterministic heuristic: local search started from the contraction result,
/// from all singletons and from a single cluster, then a bounded number
/// of seeded single-node kicks each followed by local search. Only strict
/// improvements are kept.
pub fn solve_heuristic(g: &WeightedGraph) -> Partition {
    let starts = [
        greedy_additive_contraction(g),
        Partition::singletons(g.n),
        Partition::one_cluster(g.n),
    ];
    let mut best = Partition::singletons(g.n);
    let mut best_cost = f64::INFINITY;
    for start in &starts {
        let p = local_search(g, start);
        let c = cut_cost(g, &p);
        if c < best_cost - EPS {
            best = p;
            best_cost = c;
        }
    }
    if g.n < 3 {
        return best;
    }
    let adj = g.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(g.n as u64);
    let kicks = (KICKS_PER_NODE * g.n).min(KICK_BUDGET / (g.n * g.edges.len()).max(1));
    for _ in 0..kicks {
        let mut labels = best.labels.clone();
        let i = rng.gen_range(0..g.n);
        let fresh = g.n;
        labels[i] = match adj[i].len() {
            0 => fresh,
            d => {
                let k = rng.gen_range(0..=d);
                if k == d || labels[adj[i][k].0] == labels[i] {
                    fresh
                } else {
                    labels[adj[i][k].0]
                }
            }
        };
        let p = local_search(g, &Partition::from_labels(&labels));
        let c = cut_cost(g, &p);
        if c < best_cost - EPS {
            best = p;
            best_cost = c;
        }
    }
    best
}
