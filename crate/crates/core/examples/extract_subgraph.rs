//! Extracts a region's subgraph under each shipped pattern.

use urbanprompt::subgraph::{extract, subsample, GraphPattern};
use urbanprompt::synth::{region_id, synth_city, SynthSpec};

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(3, 3), 3)?;
    let root = region_id(1, 1);
    for name in ["full", "P1", "P2", "P3", "P4"] {
        let pattern = GraphPattern::preset(name)?;
        let sub = extract(&city.graph, &root, &pattern)?;
        let counts: Vec<String> = sub
            .type_counts()
            .iter()
            .map(|(t, n)| format!("{}={n}", t.as_str()))
            .collect();
        println!("{name:<5} {:>3} nodes {:>3} edges  {}", sub.len(), sub.edges.len(), counts.join(" "));
    }

    let full = extract(&city.graph, &root, &GraphPattern::full())?;
    let small = subsample(&full, 20, 0)?;
    println!("subsampled to {} nodes, root kept: {}", small.len(), small.root_id() == root);

    // custom patterns use the same key-value format as the presets
    let roads_only = GraphPattern::parse(
        r#"
node_types = ["region", "road", "road_category"]
edge_types = ["Contains", "RCateOf"]
terminals = ["road_category"]
"#,
    )?;
    let sub = extract(&city.graph, &root, &roads_only)?;
    println!("roads-only pattern: {} nodes", sub.len());
    print!("{}", roads_only.to_toml());
    Ok(())
}
