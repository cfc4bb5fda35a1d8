//! Manual prompts: embeddings under each preset and the deletion rule.

use urbanprompt::encoder::EncoderConfig;
use urbanprompt::kg::TransRConfig;
use urbanprompt::pretrain::{pretrain, PretrainConfig};
use urbanprompt::prompt::{adjust, deletion_count, manual_embeddings, TaskWeights, PROMPT_PRESETS};
use urbanprompt::subgraph::{extract, GraphPattern};
use urbanprompt::synth::{region_id, synth_city, SynthSpec};
use urbanprompt::NodeType;

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(3, 3), 4)?;
    let cfg = PretrainConfig {
        epochs: 10,
        encoder: EncoderConfig {
            dim: 16,
            heads: 2,
            ..EncoderConfig::default()
        },
        transr: TransRConfig {
            dim: 16,
            ..TransRConfig::default()
        },
        ..PretrainConfig::default()
    };
    let (model, _) = pretrain(&city.graph, Some(&city.images), &cfg, 0)?;
    let base = model.embed(&city.graph)?;

    for name in PROMPT_PRESETS {
        let w = TaskWeights::preset(name)?;
        let h = manual_embeddings(&model, &city.graph, &w, 0)?;
        let shift = (&h - &base).mapv(|x| x * x).sum().sqrt();
        println!("{name}: weights {:?}, shift from unprompted {shift:.4}", w.weights());
    }

    let sub = extract(&city.graph, &region_id(1, 1), &GraphPattern::full())?;
    let w = TaskWeights::new([(NodeType::Poi, 0.5)])?;
    let n = sub.count_of(NodeType::Poi);
    let out = adjust(&sub, &w, 0);
    println!(
        "deleting half of {n} POIs: floor rule says {}, kept {}",
        deletion_count(0.5, n),
        out.count_of(NodeType::Poi)
    );
    Ok(())
}
