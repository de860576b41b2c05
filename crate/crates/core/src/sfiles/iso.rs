use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::hash::{Hash, Hasher};

use super::graph::FlowsheetGraph;

type TagPair = (BTreeSet<String>, BTreeSet<String>);

struct Prepared<'g> {
    g: &'g FlowsheetGraph,
    /// Edge tag multisets keyed by ordered node pair.
    between: HashMap<(usize, usize), Vec<&'g TagPair>>,
    colors: Vec<u64>,
    neighbors: Vec<Vec<usize>>,
}

fn hash_of<T: Hash>(value: &T) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

impl<'g> Prepared<'g> {
    fn new(g: &'g FlowsheetGraph, pairs: &'g [TagPair]) -> Self {
        let n = g.nodes.len();
        let mut between: HashMap<(usize, usize), Vec<&TagPair>> = HashMap::new();
        let mut neighbors = vec![Vec::new(); n];
        for (e, tags) in g.edges.iter().zip(pairs) {
            between.entry((e.src, e.dst)).or_default().push(tags);
            neighbors[e.src].push(e.dst);
            neighbors[e.dst].push(e.src);
        }
        for list in between.values_mut() {
            list.sort();
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let group_size = |i: usize| {
            g.nodes[i]
                .heat_group
                .map(|grp| g.nodes.iter().filter(|m| m.heat_group == Some(grp)).count())
                .unwrap_or(0)
        };
        let mut colors: Vec<u64> = (0..n)
            .map(|i| hash_of(&(g.nodes[i].category.name(), group_size(i))))
            .collect();
        // A few rounds of colour refinement over tagged in/out edges.
        for _ in 0..4 {
            let next: Vec<u64> = (0..n)
                .map(|i| {
                    let mut outs: Vec<(u64, &TagPair)> = Vec::new();
                    let mut ins: Vec<(u64, &TagPair)> = Vec::new();
                    for (e, tags) in g.edges.iter().zip(pairs) {
                        if e.src == i {
                            outs.push((colors[e.dst], tags));
                        }
                        if e.dst == i {
                            ins.push((colors[e.src], tags));
                        }
                    }
                    outs.sort();
                    ins.sort();
                    hash_of(&(colors[i], outs, ins))
                })
                .collect();
            colors = next;
        }
        Self { g, between, colors, neighbors }
    }

    fn edges(&self, a: usize, b: usize) -> &[&TagPair] {
        self.between.get(&(a, b)).map_or(&[], Vec::as_slice)
    }

    fn same_group(&self, a: usize, b: usize) -> bool {
        let (x, y) = (self.g.nodes[a].heat_group, self.g.nodes[b].heat_group);
        x.is_some() && x == y
    }
}

fn tag_pairs(g: &FlowsheetGraph) -> Vec<TagPair> {
    g.edges.iter().map(|e| (e.src_tags.clone(), e.dst_tags.clone())).collect()
}

/// Exact isomorphism test preserving categories, tagged edges (with
/// multiplicity) and the heat-group partition. Node ids are ignored.
pub fn isomorphic(a: &FlowsheetGraph, b: &FlowsheetGraph) -> bool {
    let n = a.nodes.len();
    if n != b.nodes.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    if a.edges.iter().chain(&b.edges).any(|e| e.src >= n || e.dst >= n) {
        return false;
    }
    let (pa, pb) = (tag_pairs(a), tag_pairs(b));
    let pa = Prepared::new(a, &pa);
    let pb = Prepared::new(b, &pb);
    let mut ca = pa.colors.clone();
    let mut cb = pb.colors.clone();
    ca.sort_unstable();
    cb.sort_unstable();
    if ca != cb {
        return false;
    }

    // Visit order: rarest colour first, then grow along neighbours.
    let mut freq: HashMap<u64, usize> = HashMap::new();
    for &c in &pa.colors {
        *freq.entry(c).or_default() += 1;
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !placed[i])
            .min_by_key(|&i| (freq[&pa.colors[i]], i))
            .expect("unplaced node exists");
        let mut queue = std::collections::VecDeque::from([seed]);
        placed[seed] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &pa.neighbors[u] {
                if !placed[v] {
                    placed[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    search(&pa, &pb, &order, 0, &mut map, &mut used)
}

fn search(
    pa: &Prepared,
    pb: &Prepared,
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let x = order[depth];
    for y in 0..map.len() {
        if used[y] || pa.colors[x] != pb.colors[y] {
            continue;
        }
        if pa.edges(x, x) != pb.edges(y, y) {
            continue;
        }
        let consistent = order[..depth].iter().all(|&xp| {
            let yp = map[xp];
            pa.edges(x, xp) == pb.edges(y, yp)
                && pa.edges(xp, x) == pb.edges(yp, y)
                && pa.same_group(x, xp) == pb.same_group(y, yp)
        });
        if !consistent {
            continue;
        }
        map[x] = y;
        used[y] = true;
        if search(pa, pb, order, depth + 1, map, used) {
            return true;
        }
        map[x] = usize::MAX;
        used[y] = false;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfiles::{fixtures, parse, Mode, UnitCategory};

    #[test]
    fn permuted_ordinals_are_isomorphic() {
        let g = fixtures::two_train_graph();
        let mut permuted = g.clone();
        permuted.nodes.reverse();
        let n = g.nodes.len();
        for e in &mut permuted.edges {
            e.src = n - 1 - e.src;
            e.dst = n - 1 - e.dst;
        }
        permuted.edges.reverse();
        assert!(isomorphic(&g, &permuted));
    }

    #[test]
    fn different_lengths_are_not() {
        let a = parse("(raw)(prod)", Mode::Strict).unwrap();
        let b = parse("(raw)(hex)(prod)", Mode::Strict).unwrap();
        assert!(!isomorphic(&a, &b));
    }

    #[test]
    fn tags_and_heat_groups_matter() {
        let a = parse("(raw)(dist)[{tout}(prod)]{bout}(prod)", Mode::Strict).unwrap();
        let b = parse("(raw)(dist)[{tout}(prod)]{tout}(prod)", Mode::Strict).unwrap();
        assert!(!isomorphic(&a, &b));

        let x = parse("(raw)(hex){1}(hex){1}(hex)(prod)", Mode::Strict).unwrap();
        let y = parse("(raw)(hex)(hex){1}(hex){1}(prod)", Mode::Strict).unwrap();
        let z = parse("(raw)(hex){3}(hex){3}(hex)(prod)", Mode::Strict).unwrap();
        assert!(!isomorphic(&x, &y));
        assert!(isomorphic(&x, &z));
    }

    #[test]
    fn parallel_edges_count() {
        let mut a = parse("(raw)(splt)(prod)", Mode::Strict).unwrap();
        let b = a.clone();
        a.connect(1, 2);
        assert!(!isomorphic(&a, &b));
        let mut c = b.clone();
        c.connect(1, 2);
        assert!(isomorphic(&a, &c));
        assert_eq!(a.count_category(&UnitCategory::Splitter), 1);
    }

    #[test]
    fn symmetric_structures() {
        // Many interchangeable products; the search must still succeed.
        let s = "(raw)(splt)[(prod)][(prod)][(prod)][(prod)][(prod)](prod)";
        let a = parse(s, Mode::Strict).unwrap();
        let mut b = a.clone();
        b.nodes.swap(2, 5);
        for e in &mut b.edges {
            for end in [&mut e.src, &mut e.dst] {
                if *end == 2 {
                    *end = 5;
                } else if *end == 5 {
                    *end = 2;
                }
            }
        }
        assert!(isomorphic(&a, &b));
    }
}
