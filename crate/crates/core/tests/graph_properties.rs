use proptest::prelude::*;
use sowcause::graph::{CausalDag, FARM_ADJUSTMENT_SET, FARM_GRAPH};

/// Random DAG as (node count, edges i -> j with i < j in a shuffled order).
fn dag_strategy(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_nodes).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let m = pairs.len();
        (
            Just(n),
            proptest::collection::vec(any::<bool>(), m),
            Just(pairs),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
            .prop_map(|(n, keep, pairs, order)| {
                let edges = pairs
                    .into_iter()
                    .zip(keep)
                    .filter(|(_, k)| *k)
                    .map(|((i, j), _)| (order[i], order[j]))
                    .collect();
                (n, edges)
            })
    })
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("N{i}")).collect()
}

fn build(n: usize, edges: &[(usize, usize)]) -> CausalDag {
    let names = names(n);
    let nodes: Vec<&str> = names.iter().map(String::as_str).collect();
    let e: Vec<(&str, &str)> = edges.iter().map(|&(a, b)| (nodes[a], nodes[b])).collect();
    CausalDag::new(&nodes, &e, nodes[0], nodes[n - 1]).unwrap()
}

/// Open-path search over simple paths of the skeleton.
fn connected(n: usize, edges: &[(usize, usize)], x: usize, y: usize, z: &[bool]) -> bool {
    let has = |a: usize, b: usize| edges.contains(&(a, b));
    let desc_in_z = |v: usize| {
        let mut seen = vec![false; n];
        let mut stack = vec![v];
        while let Some(a) = stack.pop() {
            if seen[a] {
                continue;
            }
            seen[a] = true;
            stack.extend((0..n).filter(|&b| has(a, b)));
        }
        (0..n).any(|d| seen[d] && z[d])
    };
    fn walk(
        path: &mut Vec<usize>,
        y: usize,
        n: usize,
        adj: &dyn Fn(usize, usize) -> bool,
        ok: &dyn Fn(&[usize]) -> bool,
    ) -> bool {
        let last = *path.last().unwrap();
        if last == y {
            return ok(path);
        }
        for next in 0..n {
            if path.contains(&next) || !adj(last, next) {
                continue;
            }
            path.push(next);
            let found = walk(path, y, n, adj, ok);
            path.pop();
            if found {
                return true;
            }
        }
        false
    }
    let adj = |a: usize, b: usize| has(a, b) || has(b, a);
    let ok = |p: &[usize]| {
        p.windows(3).all(|w| {
            if has(w[0], w[1]) && has(w[2], w[1]) {
                desc_in_z(w[1])
            } else {
                !z[w[1]]
            }
        })
    };
    walk(&mut vec![x], y, n, &adj, &ok)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_text_round_trips((n, edges) in dag_strategy(9)) {
        let g = build(n, &edges);
        let text = g.to_canonical_string();
        let back = CausalDag::parse(&text).unwrap();
        prop_assert_eq!(back.to_canonical_string(), text);
        prop_assert_eq!(back.node_count(), n);
        prop_assert_eq!(back.edge_count(), edges.len());
    }

    #[test]
    fn d_separation_matches_path_search((n, edges) in dag_strategy(6), mask in any::<u32>()) {
        let g = build(n, &edges);
        let names = names(n);
        for x in 0..n {
            for y in x + 1..n {
                let z: Vec<bool> = (0..n).map(|v| v != x && v != y && mask >> v & 1 == 1).collect();
                let zs: Vec<&str> = (0..n).filter(|&v| z[v]).map(|v| names[v].as_str()).collect();
                let got = g.d_separated(&[&names[x]], &[&names[y]], &zs).unwrap();
                prop_assert_eq!(got, !connected(n, &edges, x, y, &z), "{} {} {:?}", x, y, zs);
                let swapped = g.d_separated(&[&names[y]], &[&names[x]], &zs).unwrap();
                prop_assert_eq!(got, swapped);
            }
        }
    }

    #[test]
    fn valid_sets_never_contain_descendants((n, edges) in dag_strategy(7)) {
        let g = build(n, &edges);
        let desc = g.descendants(g.treatment()).unwrap();
        for s in g.enumerate_backdoor_sets(50) {
            prop_assert!(s.valid);
            prop_assert!(s.nodes.iter().all(|v| !desc.contains(v)));
            let again = g.is_backdoor_set(&s.nodes.iter().collect::<Vec<_>>()).unwrap();
            prop_assert!(again.valid);
        }
    }
}

#[test]
fn farm_set_blocks_every_backdoor_path() {
    let farm = CausalDag::parse(FARM_GRAPH).unwrap();
    assert_eq!(farm.node_count(), 15);
    let verdict = farm.is_backdoor_set(&FARM_ADJUSTMENT_SET).unwrap();
    assert!(verdict.valid);

    // the farm set minus constants must separate T and Y once T's outgoing
    // edges are gone; check it by path search on the cut graph
    let names: Vec<&str> = farm.nodes().collect();
    let idx = |s: &str| names.iter().position(|n| *n == s).unwrap();
    let edges: Vec<(usize, usize)> = farm
        .edges()
        .filter(|(a, _)| *a != "T")
        .map(|(a, b)| (idx(a), idx(b)))
        .collect();
    let constants = farm.constants();
    let z: Vec<bool> = names
        .iter()
        .map(|n| FARM_ADJUSTMENT_SET.contains(n) || constants.contains(*n))
        .collect();
    assert!(!connected(names.len(), &edges, idx("T"), idx("Y"), &z));
}
