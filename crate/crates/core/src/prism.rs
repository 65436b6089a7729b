//! PRISM model and property text for the response tree.
//!
//! States are numbered in the model's depth-first preorder (acceptance child
//! first), so the root is state 0. Leaves are absorbing. A comment block after
//! the `dtmc` keyword maps every state to its node id and accepted weight;
//! [`parse_model`] reads that block back.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dtmc::{DtmcModel, PltlSpec, DEFAULT_MAX_ORGANIZATIONS};
use crate::oracle::OutcomeDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrismError {
    #[error("model with {0} organizations exceeds the explicit-model cap")]
    TooLarge(usize),
    #[error("target {0:?} is not a state of the exported model")]
    UnknownTarget(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrismArtifacts {
    pub model_text: String,
    pub property_text: String,
    pub state_map: BTreeMap<String, usize>,
}

/// Node id to state index; a bijection onto `0..node_count`.
pub fn state_map(model: &DtmcModel) -> BTreeMap<String, usize> {
    model
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), i))
        .collect()
}

/// Probabilities are printed with at most 12 decimals, trailing zeros
/// trimmed; values too small for that fall back to exponent notation.
pub fn format_prob(x: f64) -> String {
    let fixed = format!("{x:.12}");
    let trimmed = fixed.trim_end_matches('0').trim_end_matches('.');
    let back: f64 = trimmed.parse().unwrap_or(0.0);
    if x != 0.0 && ((back - x) / x).abs() > 1e-9 {
        format!("{x:e}")
    } else {
        trimmed.to_owned()
    }
}

pub fn export_model(model: &DtmcModel) -> Result<String, PrismError> {
    if model.organization_count() > DEFAULT_MAX_ORGANIZATIONS {
        return Err(PrismError::TooLarge(model.organization_count()));
    }
    let nodes = model.nodes();
    let last = nodes.len() - 1;
    let mut out = String::new();
    out.push_str("dtmc\n\n");
    out.push_str("// organizations (tree level order):");
    for id in model.organization_ids() {
        write!(out, " {id}").unwrap();
    }
    out.push('\n');
    out.push_str("// state node total_weight\n");
    for (i, n) in nodes.iter().enumerate() {
        writeln!(out, "// s={i} {} {}", n.id, model.accepted_weight(i)).unwrap();
    }
    out.push_str("\nmodule endorsement\n\n");
    writeln!(out, "  s : [0..{last}] init 0;\n").unwrap();
    for (i, n) in nodes.iter().enumerate() {
        match n.children {
            Some((a, r)) => writeln!(
                out,
                "  [] s={i} -> {}:(s'={a}) + {}:(s'={r});",
                format_prob(nodes[a].in_prob),
                format_prob(nodes[r].in_prob)
            )
            .unwrap(),
            None => writeln!(out, "  [] s={i} -> 1:(s'={i});").unwrap(),
        }
    }
    out.push_str("\nendmodule\n");
    Ok(out)
}

/// `P>{bound} [ F (s=i1 | s=i2 | ...) ]`, or `F false` for no targets.
pub fn export_property(
    spec: &PltlSpec,
    state_map: &BTreeMap<String, usize>,
) -> Result<String, PrismError> {
    let mut states = spec
        .targets
        .iter()
        .map(|t| {
            state_map
                .get(t)
                .copied()
                .ok_or_else(|| PrismError::UnknownTarget(t.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    states.sort_unstable();
    let goal = if states.is_empty() {
        "false".to_owned()
    } else {
        let atoms: Vec<String> = states.iter().map(|s| format!("s={s}")).collect();
        format!("({})", atoms.join(" | "))
    };
    let mut out = String::new();
    for t in &spec.targets {
        writeln!(out, "// s={} {t}", state_map[t]).unwrap();
    }
    writeln!(out, "P>{} [ F {goal} ]", spec.bound).unwrap();
    Ok(out)
}

pub fn export(model: &DtmcModel, spec: &PltlSpec) -> Result<PrismArtifacts, PrismError> {
    let map = state_map(model);
    Ok(PrismArtifacts {
        model_text: export_model(model)?,
        property_text: export_property(spec, &map)?,
        state_map: map,
    })
}

/// A DTMC read back from [`export_model`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedModel {
    pub state_count: usize,
    /// Accepted weight per state, from the comment block.
    pub weights: Vec<u64>,
    pub ids: Vec<String>,
    /// Outgoing `(probability, target)` pairs per state.
    pub transitions: Vec<Vec<(f64, usize)>>,
}

impl ParsedModel {
    pub fn is_absorbing(&self, s: usize) -> bool {
        self.transitions[s].iter().all(|&(_, t)| t == s)
    }

    /// Probability of being absorbed in each state, starting from state 0.
    /// Non-self transitions must point to higher state indices.
    pub fn absorption(&self) -> Result<Vec<f64>, PrismError> {
        let mut reach = vec![0.0; self.state_count];
        reach[0] = 1.0;
        let mut absorbed = vec![0.0; self.state_count];
        for s in 0..self.state_count {
            if self.is_absorbing(s) {
                absorbed[s] = reach[s];
                continue;
            }
            for &(p, t) in &self.transitions[s] {
                if t <= s {
                    return Err(PrismError::Parse {
                        line: 0,
                        msg: format!("transition {s} -> {t} is not forward"),
                    });
                }
                reach[t] += reach[s] * p;
            }
        }
        Ok(absorbed)
    }

    /// Distribution of the accepted weight at absorption.
    pub fn leaf_weight_distribution(&self) -> Result<OutcomeDistribution, PrismError> {
        let absorbed = self.absorption()?;
        let max = self.weights.iter().copied().max().unwrap_or(0) as usize;
        let mut masses = vec![0.0; max + 1];
        for (s, &m) in absorbed.iter().enumerate() {
            masses[self.weights[s] as usize] += m;
        }
        Ok(OutcomeDistribution::from_masses(masses))
    }
}

/// Reads the subset of PRISM syntax emitted by [`export_model`].
pub fn parse_model(text: &str) -> Result<ParsedModel, PrismError> {
    let err = |line: usize, msg: &str| PrismError::Parse {
        line: line + 1,
        msg: msg.to_owned(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "dtmc")) => {}
        _ => return Err(err(0, "expected `dtmc`")),
    }
    let mut state_count = None;
    let mut labels: BTreeMap<usize, (String, u64)> = BTreeMap::new();
    let mut transitions: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
    for (ln, raw) in lines {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix("// s=") {
            let mut parts = rest.split_whitespace();
            let (Some(s), Some(id), Some(w), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err(ln, "bad state comment"));
            };
            let s = s.parse().map_err(|_| err(ln, "bad state index"))?;
            let w = w.parse().map_err(|_| err(ln, "bad weight"))?;
            labels.insert(s, (id.to_owned(), w));
        } else if line.is_empty()
            || line.starts_with("//")
            || line.starts_with("module")
            || line == "endmodule"
        {
            continue;
        } else if let Some(rest) = line.strip_prefix("s : [0..") {
            let hi = rest
                .split(']')
                .next()
                .and_then(|h| h.parse::<usize>().ok())
                .ok_or_else(|| err(ln, "bad state range"))?;
            if !rest.ends_with("init 0;") {
                return Err(err(ln, "state must start at 0"));
            }
            state_count = Some(hi + 1);
        } else if let Some(rest) = line.strip_prefix("[] s=") {
            let (src, updates) = rest
                .split_once(" -> ")
                .ok_or_else(|| err(ln, "missing `->`"))?;
            let src: usize = src.parse().map_err(|_| err(ln, "bad source state"))?;
            let updates = updates
                .strip_suffix(';')
                .ok_or_else(|| err(ln, "missing `;`"))?;
            let mut outs = Vec::new();
            for upd in updates.split(" + ") {
                let (p, target) = upd
                    .split_once(":(s'=")
                    .ok_or_else(|| err(ln, "bad update"))?;
                let p: f64 = p.parse().map_err(|_| err(ln, "bad probability"))?;
                let t: usize = target
                    .strip_suffix(')')
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(ln, "bad target"))?;
                outs.push((p, t));
            }
            if transitions.insert(src, outs).is_some() {
                return Err(err(ln, "duplicate command for state"));
            }
        } else {
            return Err(err(ln, "unrecognized line"));
        }
    }
    let n = state_count.ok_or_else(|| err(0, "missing state variable"))?;
    if transitions.len() != n || transitions.keys().next_back() != Some(&(n - 1)) {
        return Err(err(0, "every state needs exactly one command"));
    }
    if labels.len() != n || labels.keys().next_back() != Some(&(n - 1)) {
        return Err(err(0, "every state needs a comment entry"));
    }
    if transitions.values().flatten().any(|&(_, t)| t >= n) {
        return Err(err(0, "transition target out of range"));
    }
    let (ids, weights) = labels.into_values().unzip();
    Ok(ParsedModel {
        state_count: n,
        weights,
        ids,
        transitions: transitions.into_values().collect(),
    })
}
