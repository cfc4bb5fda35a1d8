//! Node and edge types of the urban region graph.
//!
//! Eight node types and six edge types. Every edge type has a fixed
//! (source, target) signature, and each ordered pair of node types admits
//! at most one edge type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Region,
    Poi,
    PoiCategory,
    Brand,
    Road,
    RoadCategory,
    Junction,
    JunctionCategory,
}

impl NodeType {
    /// Canonical order; also the slot order of the readout concatenation.
    pub const ALL: [NodeType; 8] = [
        NodeType::Region,
        NodeType::Poi,
        NodeType::PoiCategory,
        NodeType::Brand,
        NodeType::Road,
        NodeType::RoadCategory,
        NodeType::Junction,
        NodeType::JunctionCategory,
    ];
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Region => "region",
            NodeType::Poi => "poi",
            NodeType::PoiCategory => "poi_category",
            NodeType::Brand => "brand",
            NodeType::Road => "road",
            NodeType::RoadCategory => "road_category",
            NodeType::Junction => "junction",
            NodeType::JunctionCategory => "junction_category",
        }
    }

    /// Entities contained in a region that carry exactly one category.
    pub fn is_entity(self) -> bool {
        matches!(self, NodeType::Poi | NodeType::Road | NodeType::Junction)
    }

    /// The category type attached to an entity type.
    pub fn category_of(self) -> Option<NodeType> {
        match self {
            NodeType::Poi => Some(NodeType::PoiCategory),
            NodeType::Road => Some(NodeType::RoadCategory),
            NodeType::Junction => Some(NodeType::JunctionCategory),
            _ => None,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NodeType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Schema(format!("unknown node type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    NearBy,
    Contains,
    BrandOf,
    CateOf,
    JCateOf,
    RCateOf,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::NearBy,
        EdgeType::Contains,
        EdgeType::BrandOf,
        EdgeType::CateOf,
        EdgeType::JCateOf,
        EdgeType::RCateOf,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::NearBy => "NearBy",
            EdgeType::Contains => "Contains",
            EdgeType::BrandOf => "BrandOf",
            EdgeType::CateOf => "CateOf",
            EdgeType::JCateOf => "JCateOf",
            EdgeType::RCateOf => "RCateOf",
        }
    }

    pub fn source_type(self) -> NodeType {
        match self {
            EdgeType::NearBy | EdgeType::Contains => NodeType::Region,
            EdgeType::BrandOf => NodeType::Brand,
            EdgeType::CateOf => NodeType::PoiCategory,
            EdgeType::JCateOf => NodeType::JunctionCategory,
            EdgeType::RCateOf => NodeType::RoadCategory,
        }
    }

    pub fn accepts_target(self, target: NodeType) -> bool {
        match self {
            EdgeType::NearBy => target == NodeType::Region,
            EdgeType::Contains => target.is_entity(),
            EdgeType::BrandOf | EdgeType::CateOf => target == NodeType::Poi,
            EdgeType::JCateOf => target == NodeType::Junction,
            EdgeType::RCateOf => target == NodeType::Road,
        }
    }

    pub fn accepts(self, source: NodeType, target: NodeType) -> bool {
        self.source_type() == source && self.accepts_target(target)
    }

    /// The unique edge type allowed between two node types, if any.
    pub fn between(source: NodeType, target: NodeType) -> Option<EdgeType> {
        EdgeType::ALL.into_iter().find(|e| e.accepts(source, target))
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Schema(format!("unknown edge type `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_node_types_six_edge_types() {
        assert_eq!(NodeType::ALL.len(), 8);
        assert_eq!(EdgeType::ALL.len(), 6);
        for (i, t) in NodeType::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
        }
    }

    #[test]
    fn each_type_pair_has_at_most_one_edge_type() {
        for s in NodeType::ALL {
            for t in NodeType::ALL {
                let n = EdgeType::ALL.iter().filter(|e| e.accepts(s, t)).count();
                assert!(n <= 1, "{s}->{t} admits {n} edge types");
            }
        }
    }

    #[test]
    fn signatures() {
        assert!(EdgeType::BrandOf.accepts(NodeType::Brand, NodeType::Poi));
        assert!(!EdgeType::Contains.accepts(NodeType::Poi, NodeType::Region));
        for t in [NodeType::Poi, NodeType::Road, NodeType::Junction] {
            assert!(EdgeType::Contains.accepts(NodeType::Region, t));
        }
        assert!(EdgeType::NearBy.accepts(NodeType::Region, NodeType::Region));
    }

    #[test]
    fn parse_round_trip() {
        for t in NodeType::ALL {
            assert_eq!(t.as_str().parse::<NodeType>().unwrap(), t);
        }
        for e in EdgeType::ALL {
            assert_eq!(e.as_str().parse::<EdgeType>().unwrap(), e);
        }
        assert!("street".parse::<NodeType>().is_err());
    }
}
