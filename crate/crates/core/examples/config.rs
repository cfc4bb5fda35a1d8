//! Layered configuration: defaults, a TOML file, then key=value overrides.

use urbanprompt::config::RunConfig;

fn main() -> urbanprompt::Result<()> {
    let path = std::env::temp_dir().join(format!("urbanprompt_cfg_{}.toml", std::process::id()));
    std::fs::write(&path, "seed = 3\n[pretrain]\nepochs = 12\n[synth]\nrows = 4\ncols = 4\n").unwrap();
    let cfg = RunConfig::resolve(Some(&path), &["pretrain.lr=0.01".into(), "eval.folds=3".into()])?;
    println!(
        "seed {} epochs {} lr {} folds {} grid {}x{}",
        cfg.seed, cfg.pretrain.epochs, cfg.pretrain.lr, cfg.eval.folds, cfg.synth.rows, cfg.synth.cols
    );
    println!("config_hash={}", cfg.hash());
    match RunConfig::resolve(None, &["pretrain.temperature=0".into()]) {
        Err(e) => println!("rejected: [{}] {e}", e.kind()),
        Ok(_) => unreachable!(),
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
