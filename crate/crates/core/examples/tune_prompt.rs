//! Tunes a learnable prompt on a planted task with the backbone frozen.

use urbanprompt::encoder::EncoderConfig;
use urbanprompt::kg::TransRConfig;
use urbanprompt::pretrain::{pretrain, PretrainConfig};
use urbanprompt::prompt::{frozen_head_mse, tune_prompt, PromptConfig, PromptTask};
use urbanprompt::synth::{synth_city, SynthSpec};

fn main() -> urbanprompt::Result<()> {
    let city = synth_city(&SynthSpec::grid(5, 5), 6)?;
    let dim = 8;
    let cfg = PretrainConfig {
        epochs: 20,
        encoder: EncoderConfig {
            dim,
            heads: 2,
            ..EncoderConfig::default()
        },
        transr: TransRConfig {
            dim,
            ..TransRConfig::default()
        },
        ..PretrainConfig::default()
    };
    let (model, _) = pretrain(&city.graph, Some(&city.images), &cfg, 0)?;
    let labels = city.task("poi_affine").expect("planted task");
    let task = PromptTask::from_backbone(&model, &city.graph, labels)?;

    let baseline = frozen_head_mse(&task.embeddings, &task.targets)?;
    let pcfg = PromptConfig {
        epochs: 100,
        ..PromptConfig::default()
    };
    let (state, log) = tune_prompt(&task, &pcfg, 0)?;
    println!("frozen-head MSE  {baseline:.5}");
    for (e, m) in log.mse.iter().enumerate().step_by(20) {
        println!("epoch {e:>3}      {m:.5}");
    }
    println!("best iterate {} with MSE {:.5}, {} prompt graphs", log.best, log.best_mse(), state.m());
    Ok(())
}
