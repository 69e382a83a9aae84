//! Random directed graphs: `G(n,p)`, a one-round reciprocity model and a
//! two-round model that favours closing undirected 2-paths.

use std::collections::VecDeque;
use std::fmt::Write as _;

use fixedbitset::FixedBitSet;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::neuroid::{Memory, Network, NeuroidId, NeuroidState, SynapseMemory};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphGenParams {
    pub n: usize,
    /// Probability of each single-direction-only arc of a pair.
    pub p: f64,
    /// Probability that a pair is connected both ways.
    pub q: f64,
    /// Round-two multiplier.
    pub r: f64,
    pub seed: u64,
}

impl GraphGenParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q), ("r", self.r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Params(format!("{name}={v} is not a probability")));
            }
        }
        if 2.0 * self.p + self.q >= 1.0 {
            return Err(Error::Params(format!("2p+q = {} must be below 1", 2.0 * self.p + self.q)));
        }
        Ok(())
    }
}

/// Directed graph with sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Digraph {
    out: Vec<Vec<u32>>,
}

impl Digraph {
    pub fn empty(n: usize) -> Self {
        Self { out: vec![Vec::new(); n] }
    }

    fn from_unsorted(mut out: Vec<Vec<u32>>) -> Self {
        for adj in &mut out {
            adj.sort_unstable();
            adj.dedup();
        }
        Self { out }
    }

    pub fn n(&self) -> usize {
        self.out.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[i].iter().map(|&j| j as usize)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out.iter().enumerate().flat_map(|(i, adj)| adj.iter().map(move |&j| (i, j as usize)))
    }

    /// Neighbours `j` with both `i -> j` and `j -> i`.
    pub fn reciprocal_neighbors(&self, i: usize) -> Vec<usize> {
        self.out_neighbors(i).filter(|&j| self.has_edge(j, i)).collect()
    }

    /// Undirected projection as one bitset per vertex.
    fn undirected(&self) -> Vec<FixedBitSet> {
        let n = self.n();
        let mut adj = vec![FixedBitSet::with_capacity(n); n];
        for (i, j) in self.edges() {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        adj
    }

    /// Neuroid network with one resting neuroid per vertex and a synapse of
    /// the given weight per arc.
    pub fn to_network(&self, threshold: f64, weight: f64, seed: u64) -> Network {
        let mut net = Network::new(seed);
        for _ in 0..self.n() {
            net.add_neuroid(NeuroidState::new(threshold, Memory::Null));
        }
        for (i, j) in self.edges() {
            net.add_synapse(i, j, weight, SynapseMemory::Null);
        }
        net
    }

    /// Edge-list text: a `#` header carrying `n` and free-form parameters,
    /// then one `src dst` line per arc.
    pub fn to_edge_list(&self, params: &str) -> String {
        let mut s = format!("# digraph n={} edges={}", self.n(), self.edge_count());
        if !params.is_empty() {
            s.push(' ');
            s.push_str(params);
        }
        s.push('\n');
        for (i, j) in self.edges() {
            writeln!(s, "{i} {j}").unwrap();
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("edge list: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let n = header
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix("n="))
            .ok_or_else(|| bad("header lacks n="))?
            .parse::<usize>()
            .map_err(|_| bad("bad n"))?;
        let mut out = vec![Vec::new(); n];
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad("expected `src dst`"));
            };
            let a: usize = a.parse().map_err(|_| bad("bad src"))?;
            let b: usize = b.parse().map_err(|_| bad("bad dst"))?;
            if a >= n || b >= n || a == b {
                return Err(bad("arc out of range or self loop"));
            }
            out[a].push(b as u32);
        }
        Ok(Self::from_unsorted(out))
    }
}

pub fn gen_gnp(n: usize, p: f64, seed: u64) -> Result<Digraph> {
    if n == 0 {
        return Err(Error::Params("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Params(format!("p={p} is not a probability")));
    }
    let mut rng = rng::seeded(seed);
    let mut out = vec![Vec::new(); n];
    for (i, adj) in out.iter_mut().enumerate() {
        for j in 0..n {
            if i != j && rng.gen_bool(p) {
                adj.push(j as u32);
            }
        }
    }
    Ok(Digraph::from_unsorted(out))
}

/// Which unordered pairs are close enough to be wired at all.
pub trait Proximity: Sync {
    fn proximal(&self, i: usize, j: usize) -> bool;
}

/// Every pair is proximal.
#[derive(Clone, Copy, Debug, Default)]
pub struct AllPairs;

impl Proximity for AllPairs {
    fn proximal(&self, _i: usize, _j: usize) -> bool {
        true
    }
}

pub fn gen_reciprocal(params: &GraphGenParams) -> Result<Digraph> {
    gen_reciprocal_with(params, &AllPairs)
}

pub fn gen_reciprocal_with(params: &GraphGenParams, prox: &impl Proximity) -> Result<Digraph> {
    params.validate()?;
    let mut rng = rng::seeded(params.seed);
    let mut out = vec![Vec::new(); params.n];
    round_one(&mut out, params, prox, &mut rng);
    Ok(Digraph::from_unsorted(out))
}

fn round_one(out: &mut [Vec<u32>], params: &GraphGenParams, prox: &impl Proximity, rng: &mut rng::Rng) {
    let n = params.n;
    for i in 0..n {
        for j in i + 1..n {
            if !prox.proximal(i, j) {
                continue;
            }
            place_pair(out, i, j, rng.gen::<f64>(), params.p, params.q);
        }
    }
}

/// Splits `[0,1)` into i→j only, j→i only, both, neither.
fn place_pair(out: &mut [Vec<u32>], i: usize, j: usize, u: f64, p: f64, q: f64) {
    if u < p {
        out[i].push(j as u32);
    } else if u < 2.0 * p {
        out[j].push(i as u32);
    } else if u < 2.0 * p + q {
        out[i].push(j as u32);
        out[j].push(i as u32);
    }
}

pub fn gen_two_round(params: &GraphGenParams) -> Result<Digraph> {
    gen_two_round_with(params, &AllPairs)
}

/// Round one as [`gen_reciprocal_with`] on the same seed; round two runs
/// once over pairs with no arc that share an undirected neighbour.
pub fn gen_two_round_with(params: &GraphGenParams, prox: &impl Proximity) -> Result<Digraph> {
    let first = gen_reciprocal_with(params, prox)?;
    if params.r == 0.0 {
        return Ok(first);
    }
    let total = 2.0 * params.p + params.q;
    if total == 0.0 {
        return Ok(first);
    }
    let (p2, q2) = (params.r * params.p / total, params.r * params.q / total);
    let und = first.undirected();
    let mut rng = rng::seeded(rng::derive(params.seed, 2));
    let mut out = first.out.clone();
    let n = params.n;
    for i in 0..n {
        for j in i + 1..n {
            if und[i].contains(j) || !prox.proximal(i, j) || und[i].is_disjoint(&und[j]) {
                continue;
            }
            place_pair(&mut out, i, j, rng.gen::<f64>(), p2, q2);
        }
    }
    Ok(Digraph::from_unsorted(out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReciprocityStats {
    pub fraction_unidirectional: f64,
    pub fraction_bidirectional: f64,
    pub fraction_null: f64,
    /// P(connected | endpoints of an undirected 2-path) / P(connected).
    /// NaN when either side is undefined.
    pub transitivity_ratio: f64,
}

pub fn measure_reciprocity(g: &Digraph) -> ReciprocityStats {
    let n = g.n();
    let und = g.undirected();
    let (mut uni, mut bi, mut pairs) = (0u64, 0u64, 0u64);
    let (mut path_pairs, mut path_connected) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            let (a, b) = (g.has_edge(i, j), g.has_edge(j, i));
            match (a, b) {
                (true, true) => bi += 1,
                (true, false) | (false, true) => uni += 1,
                _ => {}
            }
            if !und[i].is_disjoint(&und[j]) {
                path_pairs += 1;
                if a || b {
                    path_connected += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return ReciprocityStats {
            fraction_unidirectional: 0.0,
            fraction_bidirectional: 0.0,
            fraction_null: 1.0,
            transitivity_ratio: f64::NAN,
        };
    }
    let total = pairs as f64;
    let connected = (uni + bi) as f64 / total;
    let transitivity_ratio = if path_pairs == 0 || connected == 0.0 {
        f64::NAN
    } else {
        (path_connected as f64 / path_pairs as f64) / connected
    };
    ReciprocityStats {
        fraction_unidirectional: uni as f64 / total,
        fraction_bidirectional: bi as f64 / total,
        fraction_null: (pairs - uni - bi) as f64 / total,
        transitivity_ratio,
    }
}

/// Lowest-id neuroid joined to every member of `item` by reciprocal paths of
/// length at most `max_depth`.
pub fn find_root(g: &Digraph, item: &[NeuroidId], max_depth: usize) -> Result<Option<NeuroidId>> {
    if item.is_empty() {
        return Err(Error::Input("find_root on an empty item".into()));
    }
    let n = g.n();
    if let Some(&bad) = item.iter().find(|&&v| v >= n) {
        return Err(Error::Input(format!("item member {bad} not in graph")));
    }
    let mut hits = vec![0usize; n];
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let mut seen = Vec::new();
    for &start in item {
        for &v in &seen {
            dist[v] = usize::MAX;
        }
        seen.clear();
        dist[start] = 0;
        seen.push(start);
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            hits[v] += 1;
            if dist[v] == max_depth {
                continue;
            }
            for w in g.reciprocal_neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    seen.push(w);
                    queue.push_back(w);
                }
            }
        }
    }
    Ok(hits.iter().position(|&h| h == item.len()))
}

/// `((r-1)/r) * ln n / ln(qn)`: depth within which a root is expected.
pub fn root_bound(n: f64, q: f64, item_size: f64) -> Result<f64> {
    if q * n <= 1.0 {
        return Err(Error::Input(format!("qn = {} must exceed 1", q * n)));
    }
    if item_size <= 0.0 {
        return Err(Error::Input("item size must be positive".into()));
    }
    Ok((item_size - 1.0) / item_size * n.ln() / (q * n).ln())
}
