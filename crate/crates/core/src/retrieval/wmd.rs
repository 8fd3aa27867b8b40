use std::collections::BTreeMap;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

/// Normalized bag of words as (word id, count) in ascending id order.
pub fn nbow(doc: &[u32]) -> Vec<(u32, u64)> {
    let mut counts = BTreeMap::new();
    for &w in doc {
        *counts.entry(w).or_insert(0u64) += 1;
    }
    counts.into_iter().collect()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Word Mover's Distance between two documents of word ids.
///
/// Exact optimal transport between the normalized bags of words with
/// Euclidean ground cost between embedding rows.
pub fn wmd(a: &[u32], b: &[u32], table: &EmbeddingTable) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedDistance);
    }
    let (na, nb) = (nbow(a), nbow(b));
    // Scale both sides to the common total |a|·|b| so flows stay integral.
    let supply: Vec<u64> = na.iter().map(|&(_, c)| c * b.len() as u64).collect();
    let demand: Vec<u64> = nb.iter().map(|&(_, c)| c * a.len() as u64).collect();
    let cost: Vec<Vec<f64>> = na
        .iter()
        .map(|&(u, _)| nb.iter().map(|&(v, _)| euclidean(table.row(u), table.row(v))).collect())
        .collect();
    let total = (a.len() * b.len()) as f64;
    Ok(transport(&supply, &demand, &cost) / total)
}

struct Edge {
    to: usize,
    cap: u64,
    cost: f64,
}

/// Minimum cost of shipping integral `supply` to `demand` (equal totals)
/// over a complete bipartite graph, by successive shortest paths.
pub fn transport(supply: &[u64], demand: &[u64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let (source, sink) = (0, n + m + 1);
    let nodes = n + m + 2;
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut add = |edges: &mut Vec<Edge>, from: usize, to: usize, cap: u64, cost: f64| {
        adj[from].push(edges.len());
        edges.push(Edge { to, cap, cost });
        adj[to].push(edges.len());
        edges.push(Edge { to: from, cap: 0, cost: -cost });
    };
    for (i, &s) in supply.iter().enumerate() {
        add(&mut edges, source, 1 + i, s, 0.0);
    }
    let first_arc = edges.len();
    for i in 0..n {
        for j in 0..m {
            add(&mut edges, 1 + i, 1 + n + j, u64::MAX, cost[i][j]);
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        add(&mut edges, 1 + n + j, sink, d, 0.0);
    }

    const EPS: f64 = 1e-12;
    loop {
        // Bellman-Ford: residual arcs carry negative costs.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via = vec![usize::MAX; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - EPS {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut push = u64::MAX;
        let mut v = sink;
        while v != source {
            let e = via[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = via[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
    }

    (0..n * m)
        .map(|k| {
            let e = first_arc + 2 * k;
            edges[e ^ 1].cap as f64 * edges[e].cost
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingKind;
    use crate::numerics::Tensor;
    use proptest::prelude::*;

    fn table(rows: &[[f64; 2]]) -> EmbeddingTable {
        EmbeddingTable {
            kind: EmbeddingKind::Word,
            rows: Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
        }
    }

    #[test]
    fn identical_documents_cost_nothing() {
        let t = table(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]);
        assert_eq!(wmd(&[1, 2, 2], &[2, 1, 2], &t).unwrap(), 0.0);
    }

    #[test]
    fn single_words_cost_their_distance() {
        let t = table(&[[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]);
        assert_eq!(wmd(&[1], &[2], &t).unwrap(), 5.0);
    }

    #[test]
    fn two_by_two_takes_the_cheaper_matching() {
        let t = table(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [0.0, 1.5], [10.0, 0.5]]);
        // u=1 pairs with x=3 (0.5), v=2 pairs with y=4 (0.5).
        let d = wmd(&[1, 2], &[3, 4], &t).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "{d}");
    }

    #[test]
    fn unequal_lengths_split_mass() {
        let t = table(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]);
        // {1} against {2,3}: half the mass travels 1, half travels 3.
        assert!((wmd(&[1], &[2, 3], &t).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_document_is_undefined() {
        let t = table(&[[0.0, 0.0]]);
        assert!(matches!(wmd(&[], &[0], &t), Err(Error::UndefinedDistance)));
    }

    proptest! {
        #[test]
        fn symmetric_and_scale_equivariant(
            points in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 6),
            a in prop::collection::vec(0u32..6, 1..8),
            b in prop::collection::vec(0u32..6, 1..8),
            lambda in 0.1f64..5.0,
        ) {
            let rows: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x, y]).collect();
            let scaled: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] * lambda, r[1] * lambda]).collect();
            let (t, ts) = (table(&rows), table(&scaled));
            let ab = wmd(&a, &b, &t).unwrap();
            let ba = wmd(&b, &a, &t).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((wmd(&a, &b, &ts).unwrap() - lambda * ab).abs() < 1e-9 * (1.0 + lambda * ab));
            prop_assert_eq!(wmd(&a, &a, &t).unwrap(), 0.0);
        }
    }
}
