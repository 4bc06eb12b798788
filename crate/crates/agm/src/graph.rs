//! Rooted trees over label nodes.
//!
//! Nodes are numbered `1..=n`; node `0` is a dummy parent of the root with a
//! single label state, so every real node has a well-defined edge to its
//! parent and the root needs no special casing in the solvers.

use crate::error::{AgmError, Result};

/// Dummy parent of the root. Its label space has exactly one state.
pub const DUMMY_NODE: usize = 0;

/// A rooted tree over `n` label nodes.
///
/// Immutable after construction; traversal orders are precomputed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeGraph {
    n: usize,
    root: usize,
    /// `parent[i-1]` is the parent of node `i`; the root maps to [`DUMMY_NODE`].
    parent: Vec<usize>,
    /// `children[i-1]` lists the children of node `i` in ascending order.
    children: Vec<Vec<usize>>,
    /// Real edges as `(parent, child)` pairs, ordered by child index.
    edges: Vec<(usize, usize)>,
    /// Leaves-first order: every node appears after all of its children.
    topo: Vec<usize>,
}

impl TreeGraph {
    /// Builds a rooted tree from an undirected edge list.
    ///
    /// Edges are oriented away from `root`. Fails on cycles, disconnected
    /// input, duplicate edges, self-loops, or out-of-range node indices.
    pub fn build(n: usize, edges: &[(usize, usize)], root: usize) -> Result<Self> {
        if n == 0 {
            return Err(AgmError::InvalidTree("node count must be at least 1".into()));
        }
        if root == 0 || root > n {
            return Err(AgmError::InvalidTree(format!(
                "root {root} out of range 1..={n}"
            )));
        }
        if edges.len() != n - 1 {
            return Err(AgmError::InvalidTree(format!(
                "expected {} edges for {} nodes, got {}",
                n - 1,
                n,
                edges.len()
            )));
        }

        let mut adjacency = vec![Vec::new(); n + 1];
        let mut seen = std::collections::BTreeSet::new();
        for &(u, v) in edges {
            if u == 0 || u > n || v == 0 || v > n {
                return Err(AgmError::InvalidTree(format!(
                    "edge ({u},{v}) out of range 1..={n}"
                )));
            }
            if u == v {
                return Err(AgmError::InvalidTree(format!("self-loop at node {u}")));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(AgmError::InvalidTree(format!(
                    "duplicate edge ({},{})",
                    key.0, key.1
                )));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable();
        }

        // Orient away from the root with an explicit stack; a revisited node
        // means a cycle, an unvisited node means a disconnected component.
        let mut parent = vec![usize::MAX; n];
        let mut visited = vec![false; n + 1];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        visited[root] = true;
        parent[root - 1] = DUMMY_NODE;
        while let Some(u) = stack.pop() {
            order.push(u);
            for &v in &adjacency[u] {
                if v == parent[u - 1] {
                    continue;
                }
                if visited[v] {
                    return Err(AgmError::InvalidTree(format!(
                        "cycle detected through edge ({u},{v})"
                    )));
                }
                visited[v] = true;
                parent[v - 1] = u;
                stack.push(v);
            }
        }
        if order.len() != n {
            return Err(AgmError::InvalidTree(format!(
                "graph is disconnected: reached {} of {} nodes from root {root}",
                order.len(),
                n
            )));
        }

        let mut children = vec![Vec::new(); n];
        for i in 1..=n {
            if i != root {
                children[parent[i - 1] - 1].push(i);
            }
        }
        for ch in children.iter_mut() {
            ch.sort_unstable();
        }

        let mut oriented: Vec<(usize, usize)> = (1..=n)
            .filter(|&i| i != root)
            .map(|i| (parent[i - 1], i))
            .collect();
        oriented.sort_unstable_by_key(|&(_, c)| c);

        let topo = leaves_first_order(n, root, &children);

        Ok(Self {
            n,
            root,
            parent,
            children,
            edges: oriented,
            topo,
        })
    }

    /// Builds a chain `1 - 2 - ... - n` rooted at node 1.
    pub fn chain(n: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        Self::build(n, &edges, 1)
    }

    /// Builds a star with `center` connected to every other node.
    pub fn star(n: usize, center: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (1..=n).filter(|&i| i != center).map(|i| (center, i)).collect();
        Self::build(n, &edges, center)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Parent of `node`; [`DUMMY_NODE`] for the root.
    pub fn parent(&self, node: usize) -> usize {
        self.parent[node - 1]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node - 1]
    }

    pub fn is_root(&self, node: usize) -> bool {
        node == self.root
    }

    /// Real edges `(parent, child)`, ordered by child index.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Leaves-first traversal: every node appears after all its children.
    /// Ties are broken by ascending node index.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Nodes `1..=n` in index order.
    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        1..=self.n
    }
}

fn leaves_first_order(n: usize, root: usize, children: &[Vec<usize>]) -> Vec<usize> {
    // Iterative post-order; children are expanded in ascending index order.
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<(usize, bool)> = vec![(root, false)];
    while let Some((u, expanded)) = stack.pop() {
        if expanded {
            order.push(u);
        } else {
            stack.push((u, true));
            for &c in children[u - 1].iter().rev() {
                stack.push((c, false));
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_orientation() {
        let t = TreeGraph::build(3, &[(1, 2), (2, 3)], 1).unwrap();
        assert_eq!(t.parent(1), DUMMY_NODE);
        assert_eq!(t.parent(2), 1);
        assert_eq!(t.parent(3), 2);
        assert_eq!(t.edges(), &[(1, 2), (2, 3)]);
        assert_eq!(t.children(1), &[2]);
        assert_eq!(t.children(3), &[] as &[usize]);
    }

    #[test]
    fn single_node() {
        let t = TreeGraph::build(1, &[], 1).unwrap();
        assert_eq!(t.parent(1), DUMMY_NODE);
        assert_eq!(t.topo_order(), &[1]);
        assert!(t.edges().is_empty());
    }

    #[test]
    fn cycle_rejected() {
        let err = TreeGraph::build(3, &[(1, 2), (2, 3), (3, 1)], 1).unwrap_err();
        assert!(matches!(err, AgmError::InvalidTree(_)));
    }

    #[test]
    fn disconnected_rejected() {
        let err = TreeGraph::build(4, &[(1, 2), (3, 4), (1, 2)], 1).unwrap_err();
        assert!(matches!(err, AgmError::InvalidTree(_)));
    }

    #[test]
    fn duplicate_edge_rejected() {
        let err = TreeGraph::build(3, &[(1, 2), (2, 1)], 1).unwrap_err();
        assert!(matches!(err, AgmError::InvalidTree(_)));
    }

    #[test]
    fn topo_order_chain() {
        let t = TreeGraph::build(3, &[(1, 2), (2, 3)], 1).unwrap();
        assert_eq!(t.topo_order(), &[3, 2, 1]);
    }

    #[test]
    fn topo_order_star() {
        let t = TreeGraph::star(4, 1).unwrap();
        let order = t.topo_order();
        assert_eq!(order.last(), Some(&1));
        let mut leaves: Vec<usize> = order[..3].to_vec();
        leaves.sort_unstable();
        assert_eq!(leaves, vec![2, 3, 4]);
    }

    #[test]
    fn topo_children_precede_parent() {
        let t = TreeGraph::build(7, &[(1, 2), (1, 3), (3, 4), (3, 5), (5, 6), (2, 7)], 3).unwrap();
        let pos: std::collections::HashMap<usize, usize> =
            t.topo_order().iter().enumerate().map(|(p, &n)| (n, p)).collect();
        for i in t.nodes() {
            for &c in t.children(i) {
                assert!(pos[&c] < pos[&i], "child {c} must precede parent {i}");
            }
        }
        assert_eq!(t.topo_order().len(), 7);
    }

    #[test]
    fn rerooting_preserves_edge_set() {
        let edges = [(1, 2), (2, 3), (2, 4)];
        let a = TreeGraph::build(4, &edges, 1).unwrap();
        let b = TreeGraph::build(4, &edges, 3).unwrap();
        let undirected = |t: &TreeGraph| {
            let mut e: Vec<(usize, usize)> =
                t.edges().iter().map(|&(u, v,)| (u.min(v), u.max(v))).collect();
            e.sort_unstable();
            e
        };
        assert_eq!(undirected(&a), undirected(&b));
    }
}
