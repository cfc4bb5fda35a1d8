//! Encodes one region with a freshly initialized encoder and readout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urbanprompt::encoder::{encode_nodes, encode_region, EncoderConfig, EncoderParams, ReadoutParams};
use urbanprompt::kg::{TransRConfig, TransRState};
use urbanprompt::subgraph::{extract, FeatureTable, GraphPattern};
use urbanprompt::synth::{region_id, synth_city, SynthSpec};
use urbanprompt::tape::ParamStore;

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(2, 2), 5)?;
    let dim = 16;
    let features = TransRState::init(
        &city.graph,
        &TransRConfig {
            dim,
            ..TransRConfig::default()
        },
        0,
    );
    let table = FeatureTable::from_transr(&features);
    let mut sub = extract(&city.graph, &region_id(0, 0), &GraphPattern::full())?;
    sub.attach_features(&table)?;

    let cfg = EncoderConfig {
        dim,
        heads: 2,
        layers: 2,
        layer_norm: false,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoder = EncoderParams::register(&mut store, &cfg, &mut rng)?;
    let readout = ReadoutParams::register(&mut store, dim, &mut rng);

    let nodes = encode_nodes(&store, &sub, &encoder)?;
    for (id, v) in nodes.iter().take(4) {
        println!("{id:<16} |h| = {:.4}", v.dot(v).sqrt());
    }
    let h = encode_region(&store, &sub, &encoder, &readout)?;
    println!("region {} ({} nodes) -> {} dims, first {:?}", sub.root_id(), sub.len(), h.len(), &h.as_slice().unwrap()[..4]);
    Ok(())
}
