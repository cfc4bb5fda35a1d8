//! Trains TransR node features on a synthetic city and reports link scores.

use urbanprompt::kg::{train_transr_logged, transr_score, TransRConfig};
use urbanprompt::synth::{synth_city, SynthSpec};
use urbanprompt::EdgeType;

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(3, 3), 1)?;
    let g = &city.graph;
    let cfg = TransRConfig {
        dim: 32,
        epochs: 100,
        lr: 0.05,
        ..TransRConfig::default()
    };
    let (state, log) = train_transr_logged(g, &cfg, 0)?;
    for (e, l) in log.iter().enumerate().step_by(20) {
        println!("epoch {e:>3}  margin loss {l:.5}");
    }
    println!("max entity norm {:.4}", state.max_entity_norm());

    // true edges should score lower than a random swap of the tail
    let (mut pos, mut neg) = (0.0, 0.0);
    let edges = g.edges();
    for (i, e) in edges.iter().enumerate() {
        let other = &edges[(i * 7 + 3) % edges.len()];
        let ent = |i: usize| state.entities.row(i);
        pos += transr_score(ent(e.src), e.ty, ent(e.dst), &state)?;
        neg += transr_score(ent(e.src), e.ty, ent(other.dst), &state)?;
    }
    let n = edges.len() as f64;
    println!("mean score: true {:.4}, corrupted {:.4}", pos / n, neg / n);
    let r = state.relation(EdgeType::Contains);
    println!("Contains relation norm {:.4}", r.dot(&r).sqrt());
    Ok(())
}
