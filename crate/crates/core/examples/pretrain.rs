//! Pre-trains the region encoder on a small city and prints the loss curve.

use urbanprompt::encoder::EncoderConfig;
use urbanprompt::kg::TransRConfig;
use urbanprompt::pretrain::{pretrain, PretrainConfig};
use urbanprompt::synth::{synth_city, SynthSpec};

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(3, 3), 2)?;
    let dim = 32;
    let cfg = PretrainConfig {
        epochs: 30,
        lr: 5e-3,
        encoder: EncoderConfig {
            dim,
            ..EncoderConfig::default()
        },
        transr: TransRConfig {
            dim,
            ..TransRConfig::default()
        },
        ..PretrainConfig::default()
    };
    let (model, log) = pretrain(&city.graph, Some(&city.images), &cfg, 0)?;
    println!("epoch    total  spatial  imagery     flow   fusion");
    for (e, l) in log.iter().enumerate().step_by(5) {
        println!(
            "{e:>5} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            l.total, l.spatial, l.imagery, l.flow, l.fusion
        );
    }
    let h = model.embed(&city.graph)?;
    println!("embeddings {}x{}", h.nrows(), h.ncols());
    Ok(())
}
