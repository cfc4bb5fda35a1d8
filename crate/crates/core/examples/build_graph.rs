//! Builds a hand-made graph, shows validation, and round-trips it through CSV.

use urbanprompt::graph::{load_graph_dir, FlowRecord, Node};
use urbanprompt::{EdgeType, GraphBuilder, GraphConfig, NodeType};

fn main() -> urbanprompt::Result<()> {
    let mut b = GraphBuilder::new();
    for (id, lon) in [("r0", 0.0), ("r1", 0.01)] {
        let mut n = Node::new(id, NodeType::Region, id);
        n.position = Some((lon, 0.0));
        b.push_node(n);
    }
    b.node("cafe", NodeType::PoiCategory)
        .node("acme", NodeType::Brand)
        .node("p0", NodeType::Poi)
        .node("p1", NodeType::Poi)
        .edge("r0", "r1", EdgeType::NearBy)
        .edge("r0", "p0", EdgeType::Contains)
        .edge("r1", "p1", EdgeType::Contains)
        .edge("cafe", "p0", EdgeType::CateOf)
        .edge("cafe", "p1", EdgeType::CateOf)
        .edge("acme", "p0", EdgeType::BrandOf)
        .flow(FlowRecord {
            origin: "r0".into(),
            destination: "r1".into(),
            interval: 8,
            trips: 3,
        });

    let cfg = GraphConfig::default();
    let graph = b.build(&cfg)?;
    println!("built: {} nodes, {} edges (NearBy symmetrized)", graph.node_count(), graph.edge_count());
    println!("neighbors of p0: {:?}", graph.neighbors("p0", None)?);

    // a POI with no category is rejected
    let mut bad = b.clone();
    bad.node("p2", NodeType::Poi).edge("r1", "p2", EdgeType::Contains);
    match bad.build(&cfg) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("p2 has no category"),
    }
    print!("{}", bad.build_unchecked(&cfg)?.validate());

    let dir = tempfile_dir();
    graph.save(&dir, None)?;
    let back = load_graph_dir(&dir, &cfg)?;
    assert_eq!(back.nodes(), graph.nodes());
    assert_eq!(back.flows(), graph.flows());
    println!("round trip through {} ok", dir.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("urbanprompt_graph_{}", std::process::id()))
}
