//! Explicit response-tree DTMC: construction, accepted-weight labeling and
//! synthesis of the reachability property over the leaves.
//!
//! Level `k` of the tree (root = level 0) models the response of organization
//! `k`. Every internal node has two children: the acceptance child (left,
//! probability `1 - p_k`) and the refusal child (right, probability `p_k`).
//! Nodes are stored in depth-first preorder with the acceptance child first,
//! so the root is index 0 and leaf `L1` is the all-accept outcome.

use std::fmt::Write as _;

use thiserror::Error;

use crate::policy::Policy;

/// Largest number of organizations for which the explicit tree is built.
pub const DEFAULT_MAX_ORGANIZATIONS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DtmcError {
    #[error(
        "policy has {organizations} organizations; explicit models are capped at {cap} \
         (2^{organizations}+1 - 1 nodes), use on-the-fly simulation or the exact oracle instead"
    )]
    TooLarge { organizations: usize, cap: usize },
}

pub type NodeIndex = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reply {
    Accept,
    Refuse,
    /// The root has no parent reply.
    None,
}

impl Reply {
    pub fn as_str(self) -> &'static str {
        match self {
            Reply::Accept => "accept",
            Reply::Refuse => "refuse",
            Reply::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtmcNode {
    pub id: String,
    /// Organization whose response the outgoing transitions model; `None` on leaves.
    pub org_index: Option<usize>,
    pub parent: Option<NodeIndex>,
    pub parent_reply: Reply,
    /// Probability of the transition from the parent (1 for the root).
    pub in_prob: f64,
    /// Accepted weight along the path from the root; zero until labeled.
    pub total_weight: u64,
    pub depth: usize,
    /// `(acceptance child, refusal child)`.
    pub children: Option<(NodeIndex, NodeIndex)>,
}

impl DtmcNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtmcModel {
    nodes: Vec<DtmcNode>,
    leaves: Vec<NodeIndex>,
    org_ids: Vec<String>,
    weights: Vec<u64>,
    labeled: bool,
}

impl DtmcModel {
    pub fn root(&self) -> &DtmcNode {
        &self.nodes[0]
    }

    /// All nodes in depth-first preorder, acceptance child first.
    pub fn nodes(&self) -> &[DtmcNode] {
        &self.nodes
    }

    pub fn node(&self, idx: NodeIndex) -> &DtmcNode {
        &self.nodes[idx]
    }

    /// Leaf indices from left to right.
    pub fn leaves(&self) -> &[NodeIndex] {
        &self.leaves
    }

    pub fn organization_count(&self) -> usize {
        self.org_ids.len()
    }

    pub fn organization_ids(&self) -> &[String] {
        &self.org_ids
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn find(&self, id: &str) -> Option<NodeIndex> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Node indices from the root down to `idx`, inclusive.
    pub fn path(&self, idx: NodeIndex) -> Vec<NodeIndex> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Product of transition probabilities from the root to `idx`.
    pub fn path_probability(&self, idx: NodeIndex) -> f64 {
        self.path(idx)
            .iter()
            .map(|&i| self.nodes[i].in_prob)
            .product()
    }

    /// Accept/refuse outcome of each organization on the path to a leaf.
    pub fn outcomes(&self, leaf: NodeIndex) -> Vec<bool> {
        self.path(leaf)
            .iter()
            .skip(1)
            .map(|&i| self.nodes[i].parent_reply == Reply::Accept)
            .collect()
    }

    fn path_weight(&self, idx: NodeIndex, reply: Reply) -> u64 {
        let mut sum = 0;
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            if self.nodes[cur].parent_reply == reply {
                sum += self.weights[self.nodes[p].org_index.expect("parent is internal")];
            }
            cur = p;
        }
        sum
    }

    /// Accepted weight of `idx`: its label once labeled, otherwise computed from the path.
    pub fn accepted_weight(&self, idx: NodeIndex) -> u64 {
        if self.labeled {
            self.nodes[idx].total_weight
        } else {
            self.path_weight(idx, Reply::Accept)
        }
    }

    /// Sum of weights of ancestors that refused on the path to `idx`.
    pub fn refused_weight(&self, idx: NodeIndex) -> u64 {
        self.path_weight(idx, Reply::Refuse)
    }

    /// Figure-style display label: leaves `O_l<m>` numbered with the refusal
    /// branch first, internal nodes the organization id with one prime per
    /// position inside their level.
    pub fn display_label(&self, idx: NodeIndex) -> String {
        let node = &self.nodes[idx];
        // position inside the level counted from the all-refuse side
        let mut pos_from_refuse = 0usize;
        for (bit, &i) in self.path(idx).iter().skip(1).enumerate() {
            if self.nodes[i].parent_reply == Reply::Accept {
                pos_from_refuse |= 1 << (node.depth - 1 - bit);
            }
        }
        match node.org_index {
            None => format!("O_l{}", pos_from_refuse + 1),
            Some(org) => format!("{}{}", self.org_ids[org], "'".repeat(pos_from_refuse)),
        }
    }

    /// Deterministic listing, one node per line in preorder:
    /// `id parent reply in_prob total_weight`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let parent = n.parent.map_or("-", |p| self.nodes[p].id.as_str());
            writeln!(
                out,
                "{} {} {} {} {}",
                n.id,
                parent,
                n.parent_reply.as_str(),
                n.in_prob,
                n.total_weight
            )
            .unwrap();
        }
        out
    }
}

/// Builds the full response tree with the default organization cap.
pub fn build_dtmc(policy: &Policy) -> Result<DtmcModel, DtmcError> {
    build_dtmc_with_cap(policy, DEFAULT_MAX_ORGANIZATIONS)
}

pub fn build_dtmc_with_cap(policy: &Policy, cap: usize) -> Result<DtmcModel, DtmcError> {
    let n = policy.len();
    if n > cap {
        return Err(DtmcError::TooLarge {
            organizations: n,
            cap,
        });
    }
    let mut b = Builder {
        policy,
        nodes: Vec::with_capacity((1usize << (n + 1)) - 1),
        leaves: Vec::with_capacity(1usize << n),
    };
    b.grow(0, None, Reply::None, 1.0);
    Ok(DtmcModel {
        nodes: b.nodes,
        leaves: b.leaves,
        org_ids: policy
            .organizations()
            .iter()
            .map(|o| o.id().to_owned())
            .collect(),
        weights: policy.organizations().iter().map(|o| o.weight()).collect(),
        labeled: false,
    })
}

struct Builder<'a> {
    policy: &'a Policy,
    nodes: Vec<DtmcNode>,
    leaves: Vec<NodeIndex>,
}

impl Builder<'_> {
    // Each recursive call sees the organizations from `level` on; the
    // sibling subtree gets the same remaining set.
    fn grow(
        &mut self,
        level: usize,
        parent: Option<NodeIndex>,
        reply: Reply,
        in_prob: f64,
    ) -> NodeIndex {
        let idx = self.nodes.len();
        let org = self.policy.organizations().get(level);
        let id = match org {
            Some(_) => format!("n{idx}"),
            None => format!("L{}", self.leaves.len() + 1),
        };
        self.nodes.push(DtmcNode {
            id,
            org_index: org.map(|_| level),
            parent,
            parent_reply: reply,
            in_prob,
            total_weight: 0,
            depth: level,
            children: None,
        });
        match org {
            None => self.leaves.push(idx),
            Some(o) => {
                let (accept, refuse) = (o.acceptance_prob(), o.refusal_prob());
                let a = self.grow(level + 1, Some(idx), Reply::Accept, accept);
                let r = self.grow(level + 1, Some(idx), Reply::Refuse, refuse);
                self.nodes[idx].children = Some((a, r));
            }
        }
        idx
    }
}

/// Assigns every node the accepted weight of its ancestors, depth-first from
/// the root (whose weight is 0).
pub fn label_weights(mut model: DtmcModel) -> DtmcModel {
    model.nodes[0].total_weight = 0;
    let mut stack = vec![0];
    while let Some(idx) = stack.pop() {
        let Some((a, r)) = model.nodes[idx].children else {
            continue;
        };
        let base = model.nodes[idx].total_weight;
        let w = model.weights[model.nodes[idx].org_index.expect("internal node")];
        model.nodes[a].total_weight = base + w;
        model.nodes[r].total_weight = base;
        stack.push(r);
        stack.push(a);
    }
    model.labeled = true;
    model
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    /// Targets are leaves whose accepted weight meets the threshold.
    Acceptance,
    /// Targets are leaves whose refused weight meets the threshold.
    Rejection,
}

/// `P > bound [ F (t1 | t2 | ...) ]` over leaf ids. The comparison is always strict.
#[derive(Debug, Clone, PartialEq)]
pub struct PltlSpec {
    pub bound: f64,
    pub targets: Vec<String>,
    pub kind: SpecKind,
}

impl PltlSpec {
    pub fn render(&self) -> String {
        format!(
            "P > {} [ F {} ]",
            self.bound,
            disjunction(&self.targets, " | ")
        )
    }

    /// Same formula with figure-style leaf labels.
    pub fn render_display(&self, model: &DtmcModel) -> String {
        let mut labels: Vec<(String, String)> = self
            .targets
            .iter()
            .map(|t| {
                let label = model
                    .find(t)
                    .map_or_else(|| t.clone(), |i| model.display_label(i));
                (label_key(&label), label)
            })
            .collect();
        labels.sort();
        let labels: Vec<String> = labels.into_iter().map(|(_, l)| l).collect();
        format!("P > {} F {}", self.bound, disjunction(&labels, " OR "))
    }
}

// zero-padded numeric sort key so O_l10 follows O_l9
fn label_key(label: &str) -> String {
    match label
        .strip_prefix("O_l")
        .and_then(|n| n.parse::<u64>().ok())
    {
        Some(n) => format!("O_l{n:020}"),
        None => label.to_owned(),
    }
}

fn disjunction(items: &[String], sep: &str) -> String {
    if items.is_empty() {
        "false".to_owned()
    } else {
        format!("({})", items.join(sep))
    }
}

/// Target leaves are those whose accepted weight is at least the policy's
/// weight threshold. An empty target set is legal and denotes probability 0.
pub fn generate_spec(model: &DtmcModel, policy: &Policy) -> PltlSpec {
    let th = policy.weight_threshold();
    PltlSpec {
        bound: policy.probability_threshold(),
        targets: model
            .leaves
            .iter()
            .filter(|&&l| model.accepted_weight(l) >= th)
            .map(|&l| model.nodes[l].id.clone())
            .collect(),
        kind: SpecKind::Acceptance,
    }
}

/// Like [`generate_spec`] but over refused weight.
pub fn generate_rejection_spec(model: &DtmcModel, policy: &Policy) -> PltlSpec {
    let th = policy.weight_threshold();
    PltlSpec {
        bound: policy.probability_threshold(),
        targets: model
            .leaves
            .iter()
            .filter(|&&l| model.refused_weight(l) >= th)
            .map(|&l| model.nodes[l].id.clone())
            .collect(),
        kind: SpecKind::Rejection,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{total_weight, Organization};

    fn paper_policy(th: u64) -> Policy {
        Policy::new(
            vec![
                Organization::new("O1", 1, 0.07).unwrap(),
                Organization::new("O2", 3, 0.01).unwrap(),
                Organization::new("O3", 2, 0.02).unwrap(),
            ],
            th,
            0.95,
        )
        .unwrap()
    }

    #[test]
    fn paper_tree_shape() {
        let m = build_dtmc(&paper_policy(5)).unwrap();
        assert_eq!(m.nodes().len(), 15);
        assert_eq!(m.leaves().len(), 8);
        assert_eq!(m.nodes().iter().filter(|n| !n.is_leaf()).count(), 7);
        for &l in m.leaves() {
            assert_eq!(m.node(l).depth, 3);
        }
        for n in m.nodes().iter().filter(|n| !n.is_leaf()) {
            let (a, r) = n.children.unwrap();
            assert!((m.node(a).in_prob + m.node(r).in_prob - 1.0).abs() < 1e-15);
            assert_eq!(m.node(a).parent_reply, Reply::Accept);
        }
        let ids: Vec<_> = m.leaves().iter().map(|&l| m.node(l).id.as_str()).collect();
        assert_eq!(ids, ["L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8"]);
    }

    #[test]
    fn single_org_split() {
        let p = Policy::new(vec![Organization::new("A", 1, 0.3).unwrap()], 1, 0.5).unwrap();
        let m = build_dtmc(&p).unwrap();
        assert_eq!(m.nodes().len(), 3);
        let (a, r) = m.root().children.unwrap();
        assert_eq!(m.node(r).in_prob, 0.3);
        assert_eq!(m.node(a).in_prob, 0.7);
    }

    #[test]
    fn two_org_leaf_probabilities_match_enumeration() {
        let p = Policy::new(
            vec![
                Organization::new("A", 2, 0.25).unwrap(),
                Organization::new("B", 1, 0.6).unwrap(),
            ],
            2,
            0.5,
        )
        .unwrap();
        let m = build_dtmc(&p).unwrap();
        // leaves in order AA, AR, RA, RR
        let expected = [0.75 * 0.4, 0.75 * 0.6, 0.25 * 0.4, 0.25 * 0.6];
        for (&leaf, want) in m.leaves().iter().zip(expected) {
            assert!((m.path_probability(leaf) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn labels_cover_subset_sums() {
        let p = paper_policy(5);
        let m = label_weights(build_dtmc(&p).unwrap());
        let mut got: Vec<u64> = m.leaves().iter().map(|&l| m.node(l).total_weight).collect();
        got.sort();
        assert_eq!(got, [0, 1, 2, 3, 3, 4, 5, 6]);
        let first = m.leaves()[0];
        let last = *m.leaves().last().unwrap();
        assert_eq!(m.node(first).total_weight, total_weight(&p));
        assert_eq!(m.node(last).total_weight, 0);
        // labels agree with path recomputation
        let unlabeled = build_dtmc(&p).unwrap();
        for i in 0..m.nodes().len() {
            assert_eq!(m.accepted_weight(i), unlabeled.accepted_weight(i));
        }
    }

    #[test]
    fn paper_spec_targets() {
        let p = paper_policy(5);
        let m = label_weights(build_dtmc(&p).unwrap());
        let spec = generate_spec(&m, &p);
        assert_eq!(spec.targets, ["L1", "L5"]);
        assert_eq!(spec.render(), "P > 0.95 [ F (L1 | L5) ]");
        assert_eq!(spec.render_display(&m), "P > 0.95 F (O_l4 OR O_l8)");
        // L5: O1 refuses, O2 and O3 accept
        assert_eq!(m.outcomes(m.find("L5").unwrap()), [false, true, true]);
    }

    #[test]
    fn spec_threshold_edges() {
        let m = label_weights(build_dtmc(&paper_policy(0)).unwrap());
        assert_eq!(generate_spec(&m, &paper_policy(0)).targets.len(), 8);
        let spec = generate_spec(&m, &paper_policy(7));
        assert!(spec.targets.is_empty());
        assert_eq!(spec.render(), "P > 0.95 [ F false ]");
    }

    #[test]
    fn rejection_spec_targets() {
        let p = paper_policy(5);
        let m = build_dtmc(&p).unwrap();
        let spec = generate_rejection_spec(&m, &p);
        // refuse O2 & O3 (O1 accepts) and all-refuse
        assert_eq!(spec.targets, ["L4", "L8"]);
        assert_eq!(spec.kind, SpecKind::Rejection);
        assert_eq!(
            generate_rejection_spec(&m, &paper_policy(0)).targets.len(),
            8
        );
    }

    #[test]
    fn display_labels_follow_figure_convention() {
        let m = build_dtmc(&paper_policy(5)).unwrap();
        assert_eq!(m.display_label(0), "O1");
        let (a, r) = m.root().children.unwrap();
        assert_eq!(m.display_label(r), "O2");
        assert_eq!(m.display_label(a), "O2'");
        assert_eq!(m.display_label(m.leaves()[7]), "O_l1");
        assert_eq!(m.display_label(m.leaves()[0]), "O_l8");
    }

    #[test]
    fn node_cap() {
        let orgs = (0..21)
            .map(|i| Organization::new(format!("o{i}"), 1, 0.1).unwrap())
            .collect();
        let p = Policy::new(orgs, 1, 0.5).unwrap();
        assert_eq!(
            build_dtmc(&p).unwrap_err(),
            DtmcError::TooLarge {
                organizations: 21,
                cap: 20
            }
        );
        assert!(build_dtmc_with_cap(&paper_policy(5), 2).is_err());
    }

    #[test]
    fn dump_is_stable() {
        let m = label_weights(build_dtmc(&paper_policy(5)).unwrap());
        let dump = m.dump();
        let lines: Vec<_> = dump.lines().collect();
        assert_eq!(lines.len(), 15);
        assert_eq!(lines[0], "n0 - none 1 0");
        assert_eq!(lines[1], "n1 n0 accept 0.9299999999999999 1");
        assert_eq!(lines[3], "L1 n2 accept 0.98 6");
        assert_eq!(dump, m.clone().dump());
    }
}
