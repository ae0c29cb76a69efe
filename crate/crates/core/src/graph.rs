//! Graph metrics over the reservoir's weighted adjacency matrix.
//!
//! Convention: entry `(i, j)` of the matrix is a directed edge from node
//! `j` to node `i` (it feeds state `j` into the update of node `i`), which
//! matches how the recurrent matrix multiplies the state vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, CoreResult};

fn require_square(m: &DMatrix<f64>) -> CoreResult<usize> {
    if m.nrows() != m.ncols() {
        return Err(CoreError::invalid("adjacency matrix must be square"));
    }
    Ok(m.nrows())
}

/// Total degree per node: incoming plus outgoing nonzero off-diagonal
/// weights.
pub fn degrees(m: &DMatrix<f64>) -> CoreResult<Vec<usize>> {
    let n = require_square(m)?;
    let mut deg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                deg[i] += 1; // incoming for i
                deg[j] += 1; // outgoing for j
            }
        }
    }
    Ok(deg)
}

/// Neighbor lists of the undirected support graph (an edge exists when
/// either direction carries a nonzero weight).
pub fn undirected_support(m: &DMatrix<f64>) -> CoreResult<Vec<Vec<usize>>> {
    let n = require_square(m)?;
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != 0.0 || m[(j, i)] != 0.0 {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    Ok(adj)
}

/// Local clustering coefficient on the undirected support graph: the
/// fraction of neighbor pairs that are themselves connected. Nodes with
/// fewer than two neighbors score zero.
pub fn clustering_coefficients(m: &DMatrix<f64>) -> CoreResult<Vec<f64>> {
    let adj = undirected_support(m)?;
    let n = adj.len();
    let mut connected = vec![false; n * n];
    for (i, nbrs) in adj.iter().enumerate() {
        for &j in nbrs {
            connected[i * n + j] = true;
        }
    }
    let mut out = Vec::with_capacity(n);
    for nbrs in &adj {
        let k = nbrs.len();
        if k < 2 {
            out.push(0.0);
            continue;
        }
        let mut triangles = 0usize;
        for a in 0..k {
            for b in (a + 1)..k {
                if connected[nbrs[a] * n + nbrs[b]] {
                    triangles += 1;
                }
            }
        }
        out.push(2.0 * triangles as f64 / (k * (k - 1)) as f64);
    }
    Ok(out)
}

/// Weighted PageRank on the directed graph with the given damping.
///
/// Transition probabilities are |weight| normalized over each node's
/// outgoing edges; dangling nodes redistribute uniformly. Solved as a
/// dense linear system, which is exact at reservoir sizes; the scores sum
/// to one.
pub fn pagerank(m: &DMatrix<f64>, damping: f64) -> CoreResult<Vec<f64>> {
    let n = require_square(m)?;
    if n == 0 {
        return Err(CoreError::invalid("empty graph"));
    }
    if !(0.0..1.0).contains(&damping) {
        return Err(CoreError::invalid("damping must be in [0, 1)"));
    }
    // Column j holds node j's outgoing weights.
    let mut system = DMatrix::identity(n, n);
    for j in 0..n {
        let colsum: f64 = (0..n).filter(|&i| i != j).map(|i| m[(i, j)].abs()).sum();
        if colsum > 0.0 {
            for i in 0..n {
                if i != j {
                    system[(i, j)] -= damping * m[(i, j)].abs() / colsum;
                }
            }
        } else {
            for i in 0..n {
                system[(i, j)] -= damping / n as f64;
            }
        }
    }
    let rhs = DVector::from_element(n, (1.0 - damping) / n as f64);
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Singular("PageRank system did not solve".into()))?;
    let total: f64 = solution.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::Singular(
            "PageRank scores are not normalizable".into(),
        ));
    }
    Ok(solution.iter().map(|v| v / total).collect())
}


#[cfg(test)]
mod tests {
    use super::test_oracles::pagerank_power_iteration;
    use super::*;

    fn star4() -> DMatrix<f64> {
        // Node 0 at the center, edges 0 -> {1,2,3}: m[(i,0)] nonzero.
        let mut m = DMatrix::zeros(4, 4);
        m[(1, 0)] = 0.5;
        m[(2, 0)] = 1.5;
        m[(3, 0)] = -1.0;
        m
    }

    #[test]
    fn star_pagerank_matches_power_iteration() {
        let m = star4();
        let got = pagerank(&m, 0.85).unwrap();
        let want = pagerank_power_iteration(&m, 0.85, 500);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
        let total: f64 = got.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_and_path_clustering() {
        let mut triangle = DMatrix::zeros(3, 3);
        triangle[(0, 1)] = 1.0;
        triangle[(1, 2)] = 1.0;
        triangle[(2, 0)] = 1.0;
        let c = clustering_coefficients(&triangle).unwrap();
        assert!(c.iter().all(|v| *v == 1.0));

        let mut path = DMatrix::zeros(3, 3);
        path[(1, 0)] = 1.0;
        path[(2, 1)] = 1.0;
        let c = clustering_coefficients(&path).unwrap();
        assert_eq!(c[1], 0.0); // middle node: two unconnected neighbors
        assert_eq!(c[0], 0.0); // one neighbor only
    }

    #[test]
    fn degree_counts_both_directions() {
        let m = star4();
        let deg = degrees(&m).unwrap();
        assert_eq!(deg, vec![3, 1, 1, 1]);
    }

    #[test]
    fn pagerank_rejects_bad_damping() {
        assert!(pagerank(&star4(), 1.0).is_err());
    }

    #[test]
    fn random_graphs_match_oracles() {
        use rand::Rng;
        let mut rng = crate::seeding::rng_from_seed(404);
        for _ in 0..20 {
            let n = rng.random_range(3..=30);
            let m = DMatrix::from_fn(n, n, |i, j| {
                if i != j && rng.random_bool(0.2) {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            });
            let got = pagerank(&m, 0.85).unwrap();
            let want = pagerank_power_iteration(&m, 0.85, 2000);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
            let clustering = clustering_coefficients(&m).unwrap();
            assert!(clustering.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
