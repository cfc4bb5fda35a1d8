//! Saves a model checkpoint, inspects its manifest and reloads it.

use urbanprompt::checkpoint::{load_model, save_model, Checkpoint};
use urbanprompt::encoder::EncoderConfig;
use urbanprompt::kg::TransRConfig;
use urbanprompt::pretrain::{pretrain, PretrainConfig};
use urbanprompt::synth::{synth_city, SynthSpec};

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(2, 3), 8)?;
    let cfg = PretrainConfig {
        epochs: 3,
        encoder: EncoderConfig {
            dim: 8,
            heads: 2,
            ..EncoderConfig::default()
        },
        transr: TransRConfig {
            dim: 8,
            ..TransRConfig::default()
        },
        ..PretrainConfig::default()
    };
    let (model, _) = pretrain(&city.graph, Some(&city.images), &cfg, 0)?;
    let path = std::env::temp_dir().join(format!("urbanprompt_{}.ckpt", std::process::id()));
    save_model(&model, &path, "example")?;

    let ck = Checkpoint::load(&path)?;
    println!("sections: {:?}", ck.sections());
    for entry in ck.manifest().arrays.iter().take(6) {
        println!("  {:<40} {:?}", entry.name, entry.shape);
    }
    let (back, hash) = load_model(&path)?;
    let same = back.embed(&city.graph)? == model.embed(&city.graph)?;
    println!("reloaded (config_hash={hash}); identical embeddings: {same}");
    std::fs::remove_file(&path).ok();
    Ok(())
}
