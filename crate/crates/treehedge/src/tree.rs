//! Event-tree sample space: nodes carry nominal prices and a numeraire, the
//! terminal nodes enumerate the paths, and conditional expectations are
//! exposed in multiplied-through `(mass, moment)` form so downstream
//! constraint assembly never divides by a zero-mass node.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("duplicate node id {0}")]
    DuplicateId(usize),
    #[error("no root: exactly one depth-0 node is required")]
    MissingRoot,
    #[error("multiple roots: nodes {0} and {1} both have depth 0")]
    MultipleRoots(usize, usize),
    #[error("node {0}: root must not declare a parent")]
    RootWithParent(usize),
    #[error("node {0}: non-root node is missing a parent")]
    OrphanNode(usize),
    #[error("node {child}: parent id {parent} does not exist")]
    UnknownParent { child: usize, parent: usize },
    #[error("node {child}: depth {child_depth} is not parent depth {parent_depth} + 1")]
    DepthGap {
        child: usize,
        child_depth: usize,
        parent_depth: usize,
    },
    #[error("node {node}: depth {depth} exceeds horizon {horizon}")]
    DepthBeyondHorizon {
        node: usize,
        depth: usize,
        horizon: usize,
    },
    #[error("node {0}: nonpositive numeraire")]
    NonpositiveNumeraire(usize),
    #[error("node {node}: negative price for asset {asset}")]
    NegativeRiskyPrice { node: usize, asset: usize },
    #[error("node {node}: price is not finite for asset {asset}")]
    NonFinitePrice { node: usize, asset: usize },
    #[error("node {node}: price vector has {got} entries, expected {want}")]
    PriceVectorLength {
        node: usize,
        got: usize,
        want: usize,
    },
    #[error("root numeraire must equal 1, got {0}")]
    RootNumeraire(f64),
    #[error("node {node}: non-terminal leaf at depth {depth} < horizon {horizon}")]
    NonTerminalLeaf {
        node: usize,
        depth: usize,
        horizon: usize,
    },
    #[error("tree has no nodes")]
    Empty,
    #[error("unknown node index {0}")]
    UnknownNode(usize),
    #[error("unknown asset {0}")]
    UnknownAsset(usize),
    #[error("path vector has {got} entries, tree has {want} paths")]
    PathLength { got: usize, want: usize },
}

/// One real value per terminal path, ordered like the tree's terminal list.
///
/// Used for payoffs, trading gains and (when the entries are nonnegative and
/// sum to one) probability measures.
#[derive(Debug, Clone, PartialEq)]
pub struct PathVector(Vec<f64>);

impl PathVector {
    pub fn new(values: Vec<f64>) -> Self {
        PathVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        PathVector(vec![0.0; len])
    }

    pub fn constant(value: f64, len: usize) -> Self {
        PathVector(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &PathVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nonnegative entries summing to one within `tol`.
    pub fn is_probability(&self, tol: f64) -> bool {
        self.0.iter().all(|&p| p >= -tol) && (self.sum() - 1.0).abs() <= tol
    }

    pub fn scale(&self, factor: f64) -> PathVector {
        PathVector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &PathVector) -> PathVector {
        debug_assert_eq!(self.len(), other.len());
        PathVector(self.0.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &PathVector) -> PathVector {
        debug_assert_eq!(self.len(), other.len());
        PathVector(self.0.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn shift(&self, constant: f64) -> PathVector {
        PathVector(self.0.iter().map(|v| v + constant).collect())
    }

    pub fn neg(&self) -> PathVector {
        PathVector(self.0.iter().map(|v| -v).collect())
    }
}

impl std::ops::Index<usize> for PathVector {
    type Output = f64;
    fn index(&self, idx: usize) -> &f64 {
        &self.0[idx]
    }
}

impl From<Vec<f64>> for PathVector {
    fn from(values: Vec<f64>) -> Self {
        PathVector(values)
    }
}

impl FromIterator<f64> for PathVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        PathVector(iter.into_iter().collect())
    }
}

/// Node description as supplied by the caller. Ids are arbitrary distinct
/// labels; `prices` lists the numeraire first, then the risky assets.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    /// Number of trading periods T.
    pub horizon: usize,
    /// Number of risky assets J (the numeraire is asset 0).
    pub assets: usize,
    pub nodes: Vec<NodeSpec>,
}

/// A validated node. `parent` and `children` hold internal indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// The id the node had in the original [`NodeSpec`].
    pub spec_id: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// `prices[0]` is the numeraire, `prices[j]` the nominal price of asset j.
    pub prices: Vec<f64>,
    path_range: (usize, usize),
}

impl Node {
    /// Contiguous half-open range of terminal path indices passing through
    /// this node. Contiguity is guaranteed by the depth-first ordering.
    pub fn path_range(&self) -> (usize, usize) {
        self.path_range
    }

    pub fn numeraire(&self) -> f64 {
        self.prices[0]
    }

    pub fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }
}

/// Immutable event tree. Nodes are addressed by internal index (root first);
/// terminal nodes are listed depth-first by spec id, which fixes the path
/// order used by every [`PathVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    assets: usize,
    nodes: Vec<Node>,
    root: usize,
    terminal: Vec<usize>,
    non_terminal: Vec<usize>,
    non_terminal_rank: Vec<Option<usize>>,
}

pub fn build_tree(spec: &TreeSpec) -> Result<ScenarioTree, TreeError> {
    if spec.nodes.is_empty() {
        return Err(TreeError::Empty);
    }
    let want_prices = spec.assets + 1;

    let mut by_id: HashMap<usize, usize> = HashMap::new();
    for (idx, node) in spec.nodes.iter().enumerate() {
        if by_id.insert(node.id, idx).is_some() {
            return Err(TreeError::DuplicateId(node.id));
        }
    }

    let mut root_spec: Option<usize> = None;
    for node in &spec.nodes {
        if node.depth == 0 {
            match root_spec {
                None => root_spec = Some(node.id),
                Some(prev) => return Err(TreeError::MultipleRoots(prev, node.id)),
            }
            if node.parent.is_some() {
                return Err(TreeError::RootWithParent(node.id));
            }
        } else if node.parent.is_none() {
            return Err(TreeError::OrphanNode(node.id));
        }
    }
    let root_id = root_spec.ok_or(TreeError::MissingRoot)?;

    for node in &spec.nodes {
        if node.prices.len() != want_prices {
            return Err(TreeError::PriceVectorLength {
                node: node.id,
                got: node.prices.len(),
                want: want_prices,
            });
        }
        for (asset, &price) in node.prices.iter().enumerate() {
            if !price.is_finite() {
                return Err(TreeError::NonFinitePrice {
                    node: node.id,
                    asset,
                });
            }
        }
        if node.prices[0] <= 0.0 {
            return Err(TreeError::NonpositiveNumeraire(node.id));
        }
        for (asset, &price) in node.prices.iter().enumerate().skip(1) {
            if price < 0.0 {
                return Err(TreeError::NegativeRiskyPrice {
                    node: node.id,
                    asset,
                });
            }
        }
        if node.depth > spec.horizon {
            return Err(TreeError::DepthBeyondHorizon {
                node: node.id,
                depth: node.depth,
                horizon: spec.horizon,
            });
        }
        if let Some(parent_id) = node.parent {
            let parent = spec
                .nodes
                .get(*by_id.get(&parent_id).ok_or(TreeError::UnknownParent {
                    child: node.id,
                    parent: parent_id,
                })?)
                .expect("indexed");
            if node.depth != parent.depth + 1 {
                return Err(TreeError::DepthGap {
                    child: node.id,
                    child_depth: node.depth,
                    parent_depth: parent.depth,
                });
            }
        }
    }
    let root_numeraire = spec.nodes[by_id[&root_id]].prices[0];
    if root_numeraire != 1.0 {
        return Err(TreeError::RootNumeraire(root_numeraire));
    }

    // Internal index = position in a depth-first walk (children by spec id),
    // so a node's subtree occupies a contiguous index range.
    let mut children_of: HashMap<usize, Vec<usize>> = HashMap::new();
    for node in &spec.nodes {
        if let Some(parent) = node.parent {
            children_of.entry(parent).or_default().push(node.id);
        }
    }
    for ids in children_of.values_mut() {
        ids.sort_unstable();
    }

    let mut order: Vec<usize> = Vec::with_capacity(spec.nodes.len());
    let mut stack = vec![root_id];
    while let Some(id) = stack.pop() {
        order.push(id);
        if let Some(kids) = children_of.get(&id) {
            for &kid in kids.iter().rev() {
                stack.push(kid);
            }
        }
    }
    if order.len() != spec.nodes.len() {
        // Unreachable under the parent/depth checks above, but keep the
        // invariant explicit.
        let missing = spec
            .nodes
            .iter()
            .find(|n| !order.contains(&n.id))
            .map(|n| n.id)
            .unwrap_or(0);
        return Err(TreeError::OrphanNode(missing));
    }

    let index_of: HashMap<usize, usize> = order
        .iter()
        .enumerate()
        .map(|(idx, &id)| (id, idx))
        .collect();

    let mut nodes: Vec<Node> = order
        .iter()
        .map(|&id| {
            let s = &spec.nodes[by_id[&id]];
            Node {
                spec_id: id,
                depth: s.depth,
                parent: s.parent.map(|p| index_of[&p]),
                children: children_of
                    .get(&id)
                    .map(|kids| kids.iter().map(|k| index_of[k]).collect())
                    .unwrap_or_default(),
                prices: s.prices.clone(),
                path_range: (0, 0),
            }
        })
        .collect();

    for node in &nodes {
        if node.is_terminal() && node.depth < spec.horizon {
            return Err(TreeError::NonTerminalLeaf {
                node: node.spec_id,
                depth: node.depth,
                horizon: spec.horizon,
            });
        }
    }

    // Terminal order = DFS order restricted to leaves; path ranges by a
    // reverse sweep (children precede nothing: DFS order puts a subtree
    // contiguously, so accumulate from the deepest indices backwards).
    let terminal: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].is_terminal()).collect();
    let path_index_of: HashMap<usize, usize> = terminal
        .iter()
        .enumerate()
        .map(|(p, &n)| (n, p))
        .collect();
    for idx in (0..nodes.len()).rev() {
        if nodes[idx].is_terminal() {
            let p = path_index_of[&idx];
            nodes[idx].path_range = (p, p + 1);
        } else {
            let lo = nodes[idx]
                .children
                .iter()
                .map(|&c| nodes[c].path_range.0)
                .min()
                .expect("non-terminal has children");
            let hi = nodes[idx]
                .children
                .iter()
                .map(|&c| nodes[c].path_range.1)
                .max()
                .expect("non-terminal has children");
            nodes[idx].path_range = (lo, hi);
        }
    }

    let non_terminal: Vec<usize> = (0..nodes.len()).filter(|&i| !nodes[i].is_terminal()).collect();
    let mut non_terminal_rank = vec![None; nodes.len()];
    for (rank, &idx) in non_terminal.iter().enumerate() {
        non_terminal_rank[idx] = Some(rank);
    }

    Ok(ScenarioTree {
        horizon: spec.horizon,
        assets: spec.assets,
        nodes,
        root: 0,
        terminal,
        non_terminal,
        non_terminal_rank,
    })
}

impl ScenarioTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of risky assets J; asset indices run 1..=J, asset 0 is the
    /// numeraire.
    pub fn num_assets(&self) -> usize {
        self.assets
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn try_node(&self, idx: usize) -> Result<&Node, TreeError> {
        self.nodes.get(idx).ok_or(TreeError::UnknownNode(idx))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Terminal node indices in path order.
    pub fn terminal_nodes(&self) -> &[usize] {
        &self.terminal
    }

    pub fn non_terminal_nodes(&self) -> &[usize] {
        &self.non_terminal
    }

    pub fn num_non_terminal(&self) -> usize {
        self.non_terminal.len()
    }

    /// Rank of a node within the non-terminal list, if it is non-terminal.
    pub fn non_terminal_rank(&self, node: usize) -> Option<usize> {
        self.non_terminal_rank.get(node).copied().flatten()
    }

    /// Discounted price of `asset` at `node`; identity 1 for the numeraire.
    pub fn discounted_price(&self, asset: usize, node: usize) -> Result<f64, TreeError> {
        let n = self.try_node(node)?;
        if asset > self.assets {
            return Err(TreeError::UnknownAsset(asset));
        }
        if asset == 0 {
            return Ok(1.0);
        }
        Ok(n.prices[asset] / n.prices[0])
    }

    /// Node indices along the path with the given index, from root to leaf.
    pub fn path_nodes(&self, path: usize) -> Vec<usize> {
        let mut chain = Vec::with_capacity(self.horizon + 1);
        let mut cur = self.terminal[path];
        chain.push(cur);
        while let Some(parent) = self.nodes[cur].parent {
            chain.push(parent);
            cur = parent;
        }
        chain.reverse();
        chain
    }

    /// Ancestor of a path at a given depth.
    pub fn node_at_depth(&self, path: usize, depth: usize) -> usize {
        let mut cur = self.terminal[path];
        while self.nodes[cur].depth > depth {
            cur = self.nodes[cur].parent.expect("depth decreases to 0");
        }
        cur
    }

    /// Per-path discounted price of `asset` at time `depth`.
    pub fn discounted_at_depth(&self, asset: usize, depth: usize) -> Result<PathVector, TreeError> {
        if asset > self.assets {
            return Err(TreeError::UnknownAsset(asset));
        }
        if depth > self.horizon {
            return Err(TreeError::DepthBeyondHorizon {
                node: usize::MAX,
                depth,
                horizon: self.horizon,
            });
        }
        Ok((0..self.num_paths())
            .map(|p| {
                let n = self.node_at_depth(p, depth);
                self.discounted_price(asset, n).expect("validated")
            })
            .collect())
    }

    /// Terminal discounted prices of `asset`.
    pub fn terminal_discounted(&self, asset: usize) -> Result<PathVector, TreeError> {
        self.discounted_at_depth(asset, self.horizon)
    }

    /// Mass and moment of a weighting `p` against terminal values `v` at a
    /// node: `mass = Σ_{ω through node} p(ω)` and
    /// `moment = Σ_{ω through node} p(ω) v(ω)`.
    ///
    /// The conditional expectation of `v` given the node equals
    /// `moment / mass` whenever `mass > 0`; callers choose the zero-mass
    /// convention, which keeps constraint assembly linear in `p`.
    pub fn node_mass_and_cond_expectation(
        &self,
        p: &PathVector,
        v: &PathVector,
        node: usize,
    ) -> Result<(f64, f64), TreeError> {
        let n = self.try_node(node)?;
        if p.len() != self.num_paths() {
            return Err(TreeError::PathLength {
                got: p.len(),
                want: self.num_paths(),
            });
        }
        if v.len() != self.num_paths() {
            return Err(TreeError::PathLength {
                got: v.len(),
                want: self.num_paths(),
            });
        }
        let (lo, hi) = n.path_range;
        let mut mass = 0.0;
        let mut moment = 0.0;
        for omega in lo..hi {
            mass += p[omega];
            moment += p[omega] * v[omega];
        }
        Ok((mass, moment))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn binomial_spec(up: f64, down: f64) -> TreeSpec {
        TreeSpec {
            horizon: 1,
            assets: 1,
            nodes: vec![
                NodeSpec {
                    id: 0,
                    depth: 0,
                    parent: None,
                    prices: vec![1.0, 1.0],
                },
                NodeSpec {
                    id: 1,
                    depth: 1,
                    parent: Some(0),
                    prices: vec![1.0, up],
                },
                NodeSpec {
                    id: 2,
                    depth: 1,
                    parent: Some(0),
                    prices: vec![1.0, down],
                },
            ],
        }
    }

    #[test]
    fn builds_minimal_binomial() {
        let tree = build_tree(&binomial_spec(2.0, 0.5)).unwrap();
        assert_eq!(tree.num_paths(), 2);
        assert_eq!(tree.horizon(), 1);
        assert_eq!(tree.num_assets(), 1);
        // DFS by spec id: the up node (id 1) comes first.
        let s_t = tree.terminal_discounted(1).unwrap();
        assert_eq!(s_t.values(), &[2.0, 0.5]);
    }

    #[test]
    fn discounting_divides_by_numeraire() {
        let mut spec = binomial_spec(2.0, 0.5);
        spec.nodes[1].prices[0] = 1.1;
        spec.nodes[2].prices[0] = 1.1;
        let tree = build_tree(&spec).unwrap();
        let s_t = tree.terminal_discounted(1).unwrap();
        assert!((s_t[0] - 2.0 / 1.1).abs() < 1e-15);
        assert!((s_t[1] - 0.5 / 1.1).abs() < 1e-15);
        assert!((s_t[0] - 1.8181818181818181).abs() < 1e-12);
        // Numeraire is identically one after discounting.
        for node in 0..tree.num_nodes() {
            assert_eq!(tree.discounted_price(0, node).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_price_discounts_to_zero() {
        let tree = build_tree(&binomial_spec(2.0, 0.0)).unwrap();
        let s_t = tree.terminal_discounted(1).unwrap();
        assert_eq!(s_t[1], 0.0);
    }

    #[test]
    fn rejects_nonpositive_numeraire() {
        let mut spec = binomial_spec(2.0, 0.5);
        spec.nodes[2].prices[0] = 0.0;
        assert_eq!(
            build_tree(&spec).unwrap_err(),
            TreeError::NonpositiveNumeraire(2)
        );
    }

    #[test]
    fn rejects_negative_risky_price() {
        let mut spec = binomial_spec(2.0, 0.5);
        spec.nodes[1].prices[1] = -0.25;
        assert_eq!(
            build_tree(&spec).unwrap_err(),
            TreeError::NegativeRiskyPrice { node: 1, asset: 1 }
        );
    }

    #[test]
    fn rejects_orphans_and_depth_gaps() {
        let mut spec = binomial_spec(2.0, 0.5);
        spec.nodes[2].parent = Some(77);
        assert_eq!(
            build_tree(&spec).unwrap_err(),
            TreeError::UnknownParent {
                child: 2,
                parent: 77
            }
        );

        let mut spec = binomial_spec(2.0, 0.5);
        spec.horizon = 2;
        spec.nodes.push(NodeSpec {
            id: 3,
            depth: 2,
            parent: Some(1),
            prices: vec![1.0, 2.0],
        });
        spec.nodes.push(NodeSpec {
            id: 4,
            depth: 2,
            parent: Some(2),
            prices: vec![1.0, 0.5],
        });
        spec.nodes[4].depth = 1; // gap: depth 1 child of a depth-1 node
        let err = build_tree(&spec).unwrap_err();
        assert_eq!(
            err,
            TreeError::DepthGap {
                child: 4,
                child_depth: 1,
                parent_depth: 1
            }
        );
    }

    #[test]
    fn rejects_short_leaf() {
        let mut spec = binomial_spec(2.0, 0.5);
        spec.horizon = 2;
        spec.nodes.push(NodeSpec {
            id: 3,
            depth: 2,
            parent: Some(1),
            prices: vec![1.0, 2.0],
        });
        // node 2 now stops at depth 1 < horizon 2
        assert_eq!(
            build_tree(&spec).unwrap_err(),
            TreeError::NonTerminalLeaf {
                node: 2,
                depth: 1,
                horizon: 2
            }
        );
    }

    #[test]
    fn mass_and_moment_examples() {
        let tree = build_tree(&binomial_spec(2.0, 0.5)).unwrap();
        let uniform = PathVector::new(vec![0.5, 0.5]);
        let s_t = tree.terminal_discounted(1).unwrap();

        // At the root the pair is (total mass, plain expectation).
        let (mass, moment) = tree
            .node_mass_and_cond_expectation(&uniform, &s_t, tree.root())
            .unwrap();
        assert!((mass - 1.0).abs() < 1e-15);
        assert!((moment - 1.25).abs() < 1e-15);

        // At a terminal node it degenerates to (p(ω), p(ω)x(ω)).
        let x = PathVector::new(vec![3.0, -1.0]);
        let up = tree.terminal_nodes()[0];
        let (mass, moment) = tree.node_mass_and_cond_expectation(&uniform, &x, up).unwrap();
        assert_eq!((mass, moment), (0.5, 1.5));

        // Zero-mass node yields (0, 0).
        let degenerate = PathVector::new(vec![1.0, 0.0]);
        let down = tree.terminal_nodes()[1];
        let (mass, moment) = tree
            .node_mass_and_cond_expectation(&degenerate, &x, down)
            .unwrap();
        assert_eq!((mass, moment), (0.0, 0.0));
    }

    #[test]
    fn masses_are_conserved_across_depths() {
        // 2-period, mixed branching.
        let spec = TreeSpec {
            horizon: 2,
            assets: 1,
            nodes: vec![
                NodeSpec { id: 0, depth: 0, parent: None, prices: vec![1.0, 1.0] },
                NodeSpec { id: 1, depth: 1, parent: Some(0), prices: vec![1.0, 2.0] },
                NodeSpec { id: 2, depth: 1, parent: Some(0), prices: vec![1.0, 0.5] },
                NodeSpec { id: 3, depth: 2, parent: Some(1), prices: vec![1.0, 3.0] },
                NodeSpec { id: 4, depth: 2, parent: Some(1), prices: vec![1.0, 1.0] },
                NodeSpec { id: 5, depth: 2, parent: Some(2), prices: vec![1.0, 0.75] },
                NodeSpec { id: 6, depth: 2, parent: Some(2), prices: vec![1.0, 0.25] },
                NodeSpec { id: 7, depth: 2, parent: Some(2), prices: vec![1.0, 0.0] },
            ],
        };
        let tree = build_tree(&spec).unwrap();
        assert_eq!(tree.num_paths(), 5);
        let p = PathVector::new(vec![0.1, 0.2, 0.3, 0.15, 0.25]);
        let v = tree.terminal_discounted(1).unwrap();

        let (root_mass, root_moment) = tree
            .node_mass_and_cond_expectation(&p, &v, tree.root())
            .unwrap();
        assert!((root_mass - 1.0).abs() < 1e-12);

        // Tower property in multiplied-through form: children sums equal the
        // parent pair exactly.
        for &n in tree.non_terminal_nodes() {
            let (mass, moment) = tree.node_mass_and_cond_expectation(&p, &v, n).unwrap();
            let mut child_mass = 0.0;
            let mut child_moment = 0.0;
            for &c in &tree.node(n).children {
                let (cm, cmo) = tree.node_mass_and_cond_expectation(&p, &v, c).unwrap();
                child_mass += cm;
                child_moment += cmo;
            }
            assert!((mass - child_mass).abs() < 1e-12);
            assert!((moment - child_moment).abs() < 1e-12);
        }
        let _ = (root_mass, root_moment);
    }

    #[test]
    fn path_nodes_walk_root_to_leaf() {
        let tree = build_tree(&binomial_spec(2.0, 0.5)).unwrap();
        assert_eq!(tree.path_nodes(0), vec![0, 1]);
        assert_eq!(tree.path_nodes(1), vec![0, 2]);
        assert_eq!(tree.node_at_depth(1, 0), 0);
    }
}
