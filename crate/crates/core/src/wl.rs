//! 1-WL color refinement, brute-force isomorphism on small graphs, and
//! generators for graphs that separate collective models from plain
//! message passing. Every generated graph comes with machine-checked facts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;

/// Largest graph the isomorphism search accepts.
pub const MAX_ISO_NODES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coloring {
    /// Dense color ids in `0..num_colors`.
    pub colors: Vec<usize>,
    pub num_colors: usize,
    /// Rounds that strictly refined the partition.
    pub rounds: usize,
}

/// Re-indexes arbitrary keys to dense ids in sorted key order.
fn densify<K: Ord + Clone>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    let ids = keys
        .iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect();
    (ids, sorted.len())
}

/// Colors from labels and feature rows: nodes share a color iff they have
/// the same label (or both none) and bitwise equal features.
pub fn initial_colors(g: &Graph) -> Vec<usize> {
    let keys: Vec<(Option<usize>, Vec<u64>)> = (0..g.num_nodes())
        .map(|v| {
            let bits = g.features().row(v).iter().map(|x| x.to_bits()).collect();
            (g.labels()[v], bits)
        })
        .collect();
    densify(&keys).0
}

/// One refinement round: the new color of `v` is the rank of
/// `(color(v), sorted neighbor colors)` among all such keys.
pub fn wl_round(g: &Graph, colors: &[usize]) -> Vec<usize> {
    let keys: Vec<(usize, Vec<usize>)> = (0..g.num_nodes())
        .map(|v| {
            let mut nb: Vec<usize> = g.neighbors(v).iter().map(|&w| colors[w]).collect();
            nb.sort_unstable();
            (colors[v], nb)
        })
        .collect();
    densify(&keys).0
}

/// Refines `init` to the stable coloring.
pub fn wl_refine(g: &Graph, init: &[usize]) -> Coloring {
    assert_eq!(init.len(), g.num_nodes(), "one initial color per node");
    let (mut colors, mut num_colors) = densify(init);
    let mut rounds = 0;
    loop {
        let next = wl_round(g, &colors);
        let count = next.iter().max().map_or(0, |&c| c + 1);
        if count == num_colors {
            // refinement never merges, so an equal count means an equal partition
            return Coloring {
                colors: next,
                num_colors,
                rounds,
            };
        }
        colors = next;
        num_colors = count;
        rounds += 1;
    }
}

/// Colors after exactly `d` rounds from [`initial_colors`]. Two nodes that
/// share a round-`d` color cannot be told apart by `d` rounds of message
/// passing over the same initial features.
pub fn wl_node_equivalence(g: &Graph, d: usize) -> Vec<usize> {
    wl_rounds(g, &initial_colors(g), d)
}

pub fn wl_rounds(g: &Graph, init: &[usize], d: usize) -> Vec<usize> {
    let mut colors = densify(init).0;
    for _ in 0..d {
        colors = wl_round(g, &colors);
    }
    colors
}

fn node_signature(g: &Graph, v: usize) -> (usize, Option<usize>, Vec<u64>) {
    let bits = g.features().row(v).iter().map(|x| x.to_bits()).collect();
    (g.degree(v), g.labels()[v], bits)
}

/// Backtracking search for a bijection `a -> b` preserving adjacency,
/// degree, label and features, restricted by `allowed(i, j)` for mapping
/// `a`-node `i` to `b`-node `j`.
fn search_isomorphism(a: &Graph, b: &Graph, allowed: &dyn Fn(usize, usize) -> bool) -> Result<Option<Vec<usize>>> {
    let n = a.num_nodes();
    for g in [a, b] {
        if g.num_nodes() > MAX_ISO_NODES {
            return Err(Error::SizeBound(g.num_nodes(), MAX_ISO_NODES));
        }
    }
    if n != b.num_nodes() || a.num_edges() != b.num_edges() || a.num_classes() != b.num_classes() {
        return Ok(None);
    }
    let sig_a: Vec<_> = (0..n).map(|v| node_signature(a, v)).collect();
    let sig_b: Vec<_> = (0..n).map(|v| node_signature(b, v)).collect();
    let mut sorted_a = sig_a.clone();
    let mut sorted_b = sig_b.clone();
    sorted_a.sort();
    sorted_b.sort();
    if sorted_a != sorted_b {
        return Ok(None);
    }
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| sig_a[i] == sig_b[j] && allowed(i, j)).collect())
        .collect();
    // most constrained nodes first
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| candidates[i].len());

    fn extend(
        pos: usize,
        order: &[usize],
        candidates: &[Vec<usize>],
        a: &Graph,
        b: &Graph,
        map: &mut [Option<usize>],
        used: &mut [bool],
    ) -> bool {
        let Some(&i) = order.get(pos) else {
            return true;
        };
        for &j in &candidates[i] {
            if used[j] {
                continue;
            }
            let consistent = order[..pos].iter().all(|&k| {
                let mk = map[k].expect("assigned earlier");
                a.has_edge(i, k) == b.has_edge(j, mk)
            });
            if !consistent {
                continue;
            }
            map[i] = Some(j);
            used[j] = true;
            if extend(pos + 1, order, candidates, a, b, map, used) {
                return true;
            }
            map[i] = None;
            used[j] = false;
        }
        false
    }

    let mut map = vec![None; n];
    let mut used = vec![false; n];
    if extend(0, &order, &candidates, a, b, &mut map, &mut used) {
        Ok(Some(map.into_iter().map(|x| x.expect("complete")).collect()))
    } else {
        Ok(None)
    }
}

/// Exact isomorphism test for graphs with at most [`MAX_ISO_NODES`] nodes,
/// respecting labels and features. With `anchors = Some((x, y))` the map
/// must send `x` to `y`. The witness maps node `i` of `a` to `witness[i]`
/// of `b`.
pub fn graphs_isomorphic(a: &Graph, b: &Graph, anchors: Option<(usize, usize)>) -> Result<Option<Vec<usize>>> {
    search_isomorphism(a, b, &|i, j| match anchors {
        Some((x, y)) => (i == x) == (j == y),
        None => true,
    })
}

/// An automorphism of `g` mapping the set `from` onto the set `to`, if any.
pub fn find_set_automorphism(g: &Graph, from: &[usize], to: &[usize]) -> Result<Option<Vec<usize>>> {
    if from.len() != to.len() {
        return Ok(None);
    }
    search_isomorphism(g, g, &|i, j| !from.contains(&i) || to.contains(&j))
}

/// Checks that `perm` maps the edge set of `a` exactly onto that of `b`.
pub fn is_edge_preserving(a: &Graph, b: &Graph, perm: &[usize]) -> bool {
    let mut mapped: Vec<(usize, usize)> = a
        .edges()
        .map(|(u, v)| {
            let (x, y) = (perm[u], perm[v]);
            (x.min(y), x.max(y))
        })
        .collect();
    mapped.sort_unstable();
    let mut target: Vec<(usize, usize)> = b.edges().collect();
    target.sort_unstable();
    mapped == target
}

/// Serializable copy of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            edges: g.edges().collect(),
            features: g.features().clone(),
            labels: g.labels().to_vec(),
            num_classes: g.num_classes(),
        }
    }
}

impl GraphRecord {
    pub fn to_graph(&self) -> Result<Graph> {
        Graph::new(
            self.num_nodes,
            self.edges.iter().copied(),
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedFact {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCertificate {
    pub graph: GraphRecord,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    /// Egonet radius for radius certificates.
    pub d: Option<usize>,
    /// Labeled nodes near the pair whose radius-`d` views differ.
    pub label_pair: Option<(usize, usize)>,
    /// Witness permutations keyed by fact name.
    pub witnesses: BTreeMap<String, Vec<usize>>,
    pub facts: Vec<CertifiedFact>,
}

impl SeparationCertificate {
    pub fn all_hold(&self) -> bool {
        self.facts.iter().all(|f| f.holds)
    }

    pub fn graph(&self) -> Result<Graph> {
        self.graph.to_graph()
    }

    fn push(&mut self, name: &str, holds: bool, detail: String) {
        self.facts.push(CertifiedFact {
            name: name.to_string(),
            holds,
            detail,
        });
    }

    fn into_checked(self) -> Result<Self> {
        match self.facts.iter().find(|f| !f.holds) {
            Some(f) => Err(Error::Certification(format!("{}: {}", f.name, f.detail))),
            None => Ok(self),
        }
    }
}

pub const THM2_CLASSES: usize = 3;
pub const THM2_HUB_CLASS: usize = 2;

/// Ten nodes: unlabeled groups A = {0,1,2,3} and B = {4,5,6,7}, labeled hubs
/// 8 and 9. Each white node has one white neighbor and one hub neighbor, so
/// 1-WL cannot split the whites. A-pairs attach both members to the same
/// hub and close a triangle; B-pairs attach to different hubs. No
/// automorphism can therefore carry A onto B.
pub fn make_thm2_graph() -> Result<SeparationCertificate> {
    let edges = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7),
        (0, 8),
        (1, 8),
        (2, 9),
        (3, 9),
        (4, 8),
        (5, 9),
        (6, 8),
        (7, 9),
        (8, 9),
    ];
    let mut labels = vec![None; 10];
    labels[8] = Some(THM2_HUB_CLASS);
    labels[9] = Some(THM2_HUB_CLASS);
    let g = Graph::new(10, edges, Matrix::filled(10, 1, 1.0), labels, THM2_CLASSES)?;
    certify_thm2(&g, vec![0, 1, 2, 3], vec![4, 5, 6, 7])
}

fn certify_thm2(g: &Graph, group_a: Vec<usize>, group_b: Vec<usize>) -> Result<SeparationCertificate> {
    let mut cert = SeparationCertificate {
        graph: g.into(),
        group_a,
        group_b,
        d: None,
        label_pair: None,
        witnesses: BTreeMap::new(),
        facts: Vec::new(),
    };
    let union: Vec<usize> = cert.group_a.iter().chain(&cert.group_b).copied().collect();
    let stable = wl_refine(g, &initial_colors(g));
    let shared = union.iter().all(|&v| stable.colors[v] == stable.colors[union[0]]);
    cert.push(
        "shared_stable_color",
        shared,
        format!("stable colors {:?} after {} rounds", stable.colors, stable.rounds),
    );
    let auto = find_set_automorphism(g, &cert.group_a, &cert.group_b)?;
    cert.push(
        "groups_not_automorphic",
        auto.is_none(),
        match &auto {
            None => "exhaustive search found no automorphism mapping A onto B".into(),
            Some(p) => format!("automorphism {p:?} maps A onto B"),
        },
    );
    cert.into_checked()
}

/// Pair-level facts for a candidate radius certificate on an unlabeled graph.
fn prop2_facts(g: &Graph, u: usize, v: usize, d: usize) -> Result<Option<(Vec<usize>, (usize, usize))>> {
    let eu = g.d_hop_egonet(u, d);
    let ev = g.d_hop_egonet(v, d);
    let Some(witness) = graphs_isomorphic(&eu.graph, &ev.graph, Some((eu.center, ev.center)))? else {
        return Ok(None);
    };
    let wider_u = g.d_hop_egonet(u, 2 * d);
    let wider_v = g.d_hop_egonet(v, 2 * d);
    if wider_u.graph.num_nodes() > MAX_ISO_NODES || wider_v.graph.num_nodes() > MAX_ISO_NODES {
        return Ok(None);
    }
    if graphs_isomorphic(&wider_u.graph, &wider_v.graph, Some((wider_u.center, wider_v.center)))?.is_some() {
        return Ok(None);
    }
    let wl = wl_node_equivalence(g, d + 1);
    if wl[u] != wl[v] {
        return Ok(None);
    }
    let du = g.bfs_distances(u);
    let dv = g.bfs_distances(v);
    for a in 0..g.num_nodes() {
        let Some(da) = du[a].filter(|&x| x >= 1 && x <= d) else {
            continue;
        };
        for b in 0..g.num_nodes() {
            if dv[b] != Some(da) || a == b {
                continue;
            }
            let ea = g.d_hop_egonet(a, d);
            let eb = g.d_hop_egonet(b, d);
            if wl[a] != wl[b] && graphs_isomorphic(&ea.graph, &eb.graph, Some((ea.center, eb.center)))?.is_none() {
                let mut full = vec![0; eu.nodes.len()];
                for (i, &j) in witness.iter().enumerate() {
                    full[i] = ev.nodes[j];
                }
                return Ok(Some((full, (a, b))));
            }
        }
    }
    Ok(None)
}

/// Searches paths with one or two pendant nodes (at most 12 nodes), where
/// the last path node may also close a cycle onto an earlier one, for a
/// pair `(u, v)` whose radius-`d` egonets are isomorphic while their
/// radius-`2d` egonets are not, that share a 1-WL color after `d + 1`
/// rounds, and that have nodes `a`, `b` at equal distance whose radius-`d`
/// egonets differ. The smallest graph in search order is returned, without
/// labels and with two classes.
pub fn make_prop2_graph(d: usize) -> Result<SeparationCertificate> {
    if !(1..=2).contains(&d) {
        return Err(Error::Parameter(format!("radius certificates are built for d in 1..=2, got {d}")));
    }
    for total in 4..=MAX_ISO_NODES {
        for pendants in 1..=2usize {
            let len = total - pendants;
            if len < 2 {
                continue;
            }
            let spots: Vec<Vec<usize>> = if pendants == 1 {
                (0..len).map(|q| vec![q]).collect()
            } else {
                (0..len).flat_map(|q| (q..len).map(move |r| vec![q, r])).collect()
            };
            // the last path node may close a cycle onto an earlier one
            let chords = std::iter::once(None).chain((0..len.saturating_sub(2)).map(Some));
            for (chord, spot) in chords.flat_map(|c| spots.iter().map(move |s| (c, s))) {
                let mut edges: Vec<(usize, usize)> = (0..len - 1).map(|i| (i, i + 1)).collect();
                if let Some(c) = chord {
                    edges.push((len - 1, c));
                }
                edges.extend(spot.iter().enumerate().map(|(k, &q)| (q, len + k)));
                let g = Graph::new(total, edges, Matrix::filled(total, 1, 1.0), vec![None; total], 2)?;
                for u in 0..total {
                    for v in u + 1..total {
                        if let Some((witness, pair)) = prop2_facts(&g, u, v, d)? {
                            return certify_prop2(&g, u, v, d, pair, witness);
                        }
                    }
                }
            }
        }
    }
    Err(Error::Certification(format!("no radius-{d} certificate in the searched family")))
}

fn certify_prop2(
    g: &Graph,
    u: usize,
    v: usize,
    d: usize,
    (a, b): (usize, usize),
    witness: Vec<usize>,
) -> Result<SeparationCertificate> {
    let mut cert = SeparationCertificate {
        graph: g.into(),
        group_a: vec![u],
        group_b: vec![v],
        d: Some(d),
        label_pair: Some((a, b)),
        witnesses: BTreeMap::new(),
        facts: Vec::new(),
    };
    let (eu, ev) = (g.d_hop_egonet(u, d), g.d_hop_egonet(v, d));
    let iso = graphs_isomorphic(&eu.graph, &ev.graph, Some((eu.center, ev.center)))?;
    cert.push(
        "d_hop_egonets_isomorphic",
        iso.is_some(),
        format!("radius {d} egonets of {u} and {v}, {} nodes each", eu.nodes.len()),
    );
    cert.witnesses.insert("d_hop_egonets_isomorphic".into(), witness);
    let (wu, wv) = (g.d_hop_egonet(u, 2 * d), g.d_hop_egonet(v, 2 * d));
    let wide = graphs_isomorphic(&wu.graph, &wv.graph, Some((wu.center, wv.center)))?;
    cert.push(
        "two_d_hop_egonets_differ",
        wide.is_none(),
        format!("radius {} egonets have {} and {} nodes", 2 * d, wu.nodes.len(), wv.nodes.len()),
    );
    let wl = wl_node_equivalence(g, d + 1);
    cert.push(
        "shared_color_after_d_plus_one_rounds",
        wl[u] == wl[v],
        format!("colors {} and {}", wl[u], wl[v]),
    );
    let (ea, eb) = (g.d_hop_egonet(a, d), g.d_hop_egonet(b, d));
    let du = g.bfs_distances(u)[a];
    let dv = g.bfs_distances(v)[b];
    let differ = graphs_isomorphic(&ea.graph, &eb.graph, Some((ea.center, eb.center)))?.is_none();
    cert.push(
        "label_pair_views_differ",
        du == dv && du.is_some_and(|x| x <= d) && differ && wl[a] != wl[b],
        format!("nodes {a} and {b} at distance {du:?} and {dv:?}"),
    );
    cert.into_checked()
}
