use urbanprompt::checkpoint::{load_model, load_transr, save_model, save_transr};
use urbanprompt::encoder::EncoderConfig;
use urbanprompt::graph::load_graph_dir;
use urbanprompt::harness::Labels;
use urbanprompt::kg::{train_transr, TransRConfig, TransRState};
use urbanprompt::pretrain::{pretrain, ImageSet, ModelState, PretrainConfig};
use urbanprompt::synth::{synth_city, SynthSpec};
use urbanprompt::GraphConfig;

fn small_config(epochs: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        encoder: EncoderConfig {
            dim: 8,
            heads: 2,
            ..EncoderConfig::default()
        },
        transr: TransRConfig {
            dim: 8,
            epochs: 10,
            ..TransRConfig::default()
        },
        ..PretrainConfig::default()
    }
}

#[test]
fn city_csvs_round_trip() {
    let city = synth_city(&SynthSpec::grid(3, 2), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    city.write(dir.path(), Some("test")).unwrap();

    let g = load_graph_dir(dir.path(), &GraphConfig::default()).unwrap();
    assert_eq!(g.nodes(), city.graph.nodes());
    assert_eq!(g.edges(), city.graph.edges());
    assert_eq!(g.flows(), city.graph.flows());
    assert!(g.validate().is_empty());

    let images = ImageSet::load(&dir.path().join("images.csv")).unwrap();
    assert_eq!(images, city.images);
    for t in &city.tasks {
        let back = Labels::load(&dir.path().join(format!("tasks/{}.csv", t.name))).unwrap();
        assert_eq!(&back, t);
    }
}

#[test]
fn transr_checkpoint_round_trip() {
    let city = synth_city(&SynthSpec::grid(2, 2), 12).unwrap();
    let state = train_transr(&city.graph, &TransRConfig { dim: 6, epochs: 5, ..TransRConfig::default() }, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transr.ckpt");
    save_transr(&state, &path, serde_json::json!({ "seed": 3 })).unwrap();
    let back: TransRState = load_transr(&path).unwrap();
    assert_eq!(back.node_ids, state.node_ids);
    // stored as f32
    assert_eq!(back.entities, state.entities.mapv(|x| x as f32 as f64));
    assert_eq!(back.projections.len(), state.projections.len());
}

#[test]
fn model_checkpoint_reproduces_embeddings() {
    let city = synth_city(&SynthSpec::grid(2, 3), 13).unwrap();
    let (model, log) = pretrain(&city.graph, Some(&city.images), &small_config(2), 5).unwrap();
    assert_eq!(log.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_model(&model, &path, "abc").unwrap();
    let (back, hash) = load_model(&path).unwrap();
    assert_eq!(hash, "abc");
    assert_eq!(back.embed(&city.graph).unwrap(), model.embed(&city.graph).unwrap());
}

#[test]
fn zero_epochs_leaves_the_initialization() {
    let city = synth_city(&SynthSpec::grid(2, 2), 14).unwrap();
    let cfg = small_config(0);
    let (trained, log) = pretrain(&city.graph, Some(&city.images), &cfg, 9).unwrap();
    let init = ModelState::init(&city.graph, Some(&city.images), &cfg, 9).unwrap();
    assert!(log.is_empty());
    assert_eq!(trained.embed(&city.graph).unwrap(), init.embed(&city.graph).unwrap());
}
