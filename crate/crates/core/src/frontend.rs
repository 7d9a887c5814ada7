//! Ownership annotation and forward propagation.
//!
//! Every tensor carries the set of parties that may recover its value. The
//! full party set means public, a singleton means privately held plaintext,
//! and the empty set means a joint secret that neither party may open.
//! Owner sets flow forward through the graph with intersection where flows
//! meet; operators whose output does not depend on input values produce
//! public results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{topo_order, validate, Graph, OpFamily, OpKind};

pub const NUM_PARTIES: u8 = 2;

pub type PartyId = u8;

/// Subset of the two parties, as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OwnerSet(u8);

impl OwnerSet {
    pub const EMPTY: OwnerSet = OwnerSet(0);

    pub fn public() -> OwnerSet {
        OwnerSet((1 << NUM_PARTIES) - 1)
    }

    pub fn only(party: PartyId) -> OwnerSet {
        assert!(party < NUM_PARTIES);
        OwnerSet(1 << party)
    }

    pub fn from_parties(parties: &[PartyId]) -> Result<OwnerSet> {
        let mut s = OwnerSet::EMPTY;
        for &p in parties {
            if p >= NUM_PARTIES {
                return Err(Error::Config(format!("party id {p} out of range")));
            }
            s.0 |= 1 << p;
        }
        Ok(s)
    }

    pub fn intersect(self, other: OwnerSet) -> OwnerSet {
        OwnerSet(self.0 & other.0)
    }

    pub fn union(self, other: OwnerSet) -> OwnerSet {
        OwnerSet(self.0 | other.0)
    }

    pub fn contains(self, party: PartyId) -> bool {
        self.0 & (1 << party) != 0
    }

    pub fn is_public(self) -> bool {
        self == OwnerSet::public()
    }

    /// Anything short of fully public must be protected.
    pub fn is_secret(self) -> bool {
        !self.is_public()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn sole_owner(self) -> Option<PartyId> {
        match self.0 {
            0b01 => Some(0),
            0b10 => Some(1),
            _ => None,
        }
    }

    pub fn parties(self) -> Vec<PartyId> {
        (0..NUM_PARTIES).filter(|&p| self.contains(p)).collect()
    }
}

impl Serialize for OwnerSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.parties().serialize(s)
    }
}

impl<'de> Deserialize<'de> for OwnerSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let parties = Vec::<PartyId>::deserialize(d)?;
        OwnerSet::from_parties(&parties).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for OwnerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_public() {
            write!(f, "public")
        } else if self.is_empty() {
            write!(f, "{{}}")
        } else {
            write!(f, "{{{}}}", self.parties().iter().map(u8::to_string).collect::<Vec<_>>().join(","))
        }
    }
}

/// User-supplied ownership of graph inputs.
///
/// JSON form mirrors the programming-model shape:
/// `{"secrets": {"x": [0], "weights": [1]}, "public": ["mask"]}`.
/// Every graph input must appear in exactly one of the two groups.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub secrets: BTreeMap<String, Vec<PartyId>>,
    #[serde(default)]
    pub public: Vec<String>,
}

impl Annotation {
    pub fn secret(mut self, name: &str, parties: &[PartyId]) -> Annotation {
        self.secrets.insert(name.to_string(), parties.to_vec());
        self
    }

    pub fn mark_public(mut self, name: &str) -> Annotation {
        self.public.push(name.to_string());
        self
    }

    pub fn owner_of(&self, name: &str) -> Result<OwnerSet> {
        if let Some(parties) = self.secrets.get(name) {
            let owner = OwnerSet::from_parties(parties)?;
            if owner.is_public() {
                return Err(Error::Config(format!(
                    "input \"{name}\" marked secret but owned by all parties"
                )));
            }
            return Ok(owner);
        }
        if self.public.iter().any(|n| n == name) {
            return Ok(OwnerSet::public());
        }
        Err(Error::MissingAnnotation(name.to_string()))
    }

    /// The default reveal target: the owner of the first annotated secret
    /// input, falling back to party 0.
    pub fn default_reveal_to(&self, graph: &Graph) -> PartyId {
        for (name, _) in &graph.inputs {
            if let Some(parties) = self.secrets.get(name) {
                if let Ok(o) = OwnerSet::from_parties(parties) {
                    if let Some(p) = o.sole_owner() {
                        return p;
                    }
                }
            }
        }
        0
    }
}

fn owner_rule(op: &OpKind, input_owners: &[OwnerSet]) -> OwnerSet {
    match op.family() {
        OpFamily::Const => OwnerSet::public(),
        // Output does not depend on the input values, only on shape/type.
        OpFamily::ValueFree => OwnerSet::public(),
        _ => input_owners
            .iter()
            .copied()
            .fold(OwnerSet::public(), OwnerSet::intersect),
    }
}

/// Attach owners to every node: inputs from the annotation, the rest by
/// forward propagation. Also assigns stable site ids
/// (`"op-tag/position-in-topo-order"`) that later rewrites preserve.
pub fn propagate_ownership(graph: &Graph, ann: &Annotation) -> Result<Graph> {
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(Error::InvalidGraph(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    let mut g = graph.clone();
    let order = topo_order(&g)?;
    for (pos, id) in order.iter().enumerate() {
        let node = &g.nodes[id];
        let owner = match node.op {
            OpKind::Input => {
                let name = g
                    .inputs
                    .iter()
                    .find(|(_, i)| i == id)
                    .map(|(n, _)| n.clone())
                    .ok_or_else(|| Error::InvalidGraph(format!("unnamed input node {id}")))?;
                ann.owner_of(&name)?
            }
            _ => {
                let owners: Vec<OwnerSet> = node
                    .inputs
                    .iter()
                    .map(|i| g.nodes[i].owner.expect("topo order guarantees owner"))
                    .collect();
                owner_rule(&node.op, &owners)
            }
        };
        let node = g.nodes.get_mut(id).unwrap();
        node.owner = Some(owner);
        if node.site_id.is_none() {
            node.site_id = Some(format!("{}/{}", node.op.tag(), pos));
        }
    }
    Ok(g)
}

/// Re-run owner propagation using the owners already stored on input nodes.
/// Used by the rewrite engine to fill in owners of freshly created nodes.
pub(crate) fn repropagate(g: &mut Graph) -> Result<()> {
    let order = topo_order(g)?;
    for id in order {
        let node = &g.nodes[&id];
        let owner = match node.op {
            OpKind::Input => node
                .owner
                .ok_or_else(|| Error::InvalidGraph(format!("input node {id} lost its owner")))?,
            _ => {
                let owners: Vec<OwnerSet> = node
                    .inputs
                    .iter()
                    .map(|i| g.nodes[i].owner.expect("topo order"))
                    .collect();
                owner_rule(&node.op, &owners)
            }
        };
        g.nodes.get_mut(&id).unwrap().owner = Some(owner);
    }
    Ok(())
}

/// True when every node carries exactly one owner set.
pub fn fully_annotated(g: &Graph) -> bool {
    g.nodes.values().all(|n| n.owner.is_some())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, GraphBuilder};

    #[test]
    fn owner_propagation_rules() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let y = b.input("y", vec![2], DType::F64);
        let c = b.float_const(1.0);
        let xc = b.add(x, c);
        let xy = b.add(x, y);
        let z = b.op(OpKind::ZerosLike, &[x]).unwrap();
        b.mark_output(xc);
        b.mark_output(xy);
        b.mark_output(z);
        let g = b.finish().unwrap();

        let ann = Annotation::default().secret("x", &[0]).secret("y", &[1]);
        let g = propagate_ownership(&g, &ann).unwrap();
        assert_eq!(g.nodes[&xc].owner.unwrap(), OwnerSet::only(0), "x+c owned by party 0");
        assert_eq!(g.nodes[&xy].owner.unwrap(), OwnerSet::EMPTY, "x+y owned by neither");
        assert!(g.nodes[&z].owner.unwrap().is_public(), "zeros_like is public");
        assert!(fully_annotated(&g));
    }

    #[test]
    fn missing_annotation_names_input() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        b.reveal(x);
        let g = b.finish().unwrap();
        let err = propagate_ownership(&g, &Annotation::default()).unwrap_err();
        assert!(matches!(err, Error::MissingAnnotation(ref n) if n == "x"), "{err}");
    }

    #[test]
    fn idempotent_fixed_point() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let y = b.input("y", vec![2], DType::F64);
        let s = b.add(x, y);
        b.reveal(s);
        let g = b.finish().unwrap();
        let ann = Annotation::default().secret("x", &[0]).secret("y", &[1]);
        let once = propagate_ownership(&g, &ann).unwrap();
        let twice = propagate_ownership(&once, &ann).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn annotated_graph_round_trips_with_owners() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let r = b.relu(x);
        b.reveal(r);
        let g = b.finish().unwrap();
        let g = propagate_ownership(&g, &Annotation::default().secret("x", &[0])).unwrap();
        let back = crate::graph::Graph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back, "owner and site annotations survive serialization");
        assert_eq!(back.nodes[&x].owner.unwrap(), OwnerSet::only(0));
    }

    #[test]
    fn site_ids_are_kind_slash_position() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", vec![2], DType::F64);
        let r = b.relu(x);
        b.reveal(r);
        let g = b.finish().unwrap();
        let g = propagate_ownership(&g, &Annotation::default().secret("x", &[0])).unwrap();
        assert_eq!(g.nodes[&x].site_id.as_deref(), Some("input/0"));
        assert_eq!(g.nodes[&r].site_id.as_deref(), Some("relu/1"));
    }
}
