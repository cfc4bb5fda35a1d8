//! Generates a small synthetic city and writes its CSVs.
//!
//! cargo run --example synth_city -- [RxC] [seed] [out_dir]

use std::path::PathBuf;

use urbanprompt::synth::{synth_city, SynthSpec};
use urbanprompt::NodeType;

fn main() -> urbanprompt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (rows, cols) = SynthSpec::parse_grid(args.first().map_or("3x3", String::as_str))?;
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let out = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("urbanprompt_city"));

    let city = synth_city(&SynthSpec::grid(rows, cols), seed)?;
    let g = &city.graph;
    println!("{rows}x{cols} city, seed {seed}");
    for ty in NodeType::ALL {
        let n = g.nodes().iter().filter(|n| n.ty == ty).count();
        println!("  {:<18} {n}", ty.as_str());
    }
    println!("  edges {}, flow records {}", g.edge_count(), g.flows().len());
    for t in &city.tasks {
        let v: Vec<f64> = t.values.values().copied().collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!("  task {:<14} mean {mean:.3}", t.name);
    }
    city.write(&out, Some("example"))?;
    println!("wrote {}", out.display());
    Ok(())
}
