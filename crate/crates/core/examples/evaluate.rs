//! k-fold, few-shot and zero-shot evaluation of embeddings.

use urbanprompt::harness::{
    few_shot_eval, kfold_eval, zero_shot_eval, EmbeddingMatrix, EmbeddingSource, EvalReport, ProbedLabels,
};
use urbanprompt::synth::{synth_city, SynthSpec};
use urbanprompt::tape::Mat;
use urbanprompt::NodeType;

/// Per-region category counts: a simple hand-made embedding.
fn count_embedding(city: &urbanprompt::synth::City) -> urbanprompt::Result<EmbeddingMatrix> {
    let g = &city.graph;
    let cats: Vec<usize> = (0..g.node_count())
        .filter(|&i| g.node_type(i) == NodeType::PoiCategory)
        .collect();
    let mut m = Mat::zeros((g.regions().len(), cats.len()));
    for (k, &r) in g.regions().iter().enumerate() {
        for (c, n) in g.category_counts(r) {
            if let Ok(col) = cats.binary_search(&c) {
                m[[k, col]] = n as f64;
            }
        }
    }
    EmbeddingMatrix::new(g.region_ids(), m, EmbeddingSource::TransrNode)
}

fn main() -> urbanprompt::Result<()> {
    let src = synth_city(&SynthSpec::grid(6, 6), 0)?;
    let dst = synth_city(&SynthSpec::grid(5, 5), 1)?;
    let emb = count_embedding(&src)?;
    let labels = src.task("poi_affine").expect("planted");
    let random = EmbeddingMatrix::random(src.graph.region_ids(), emb.dim(), 0);

    let mut reports = vec![
        kfold_eval(&emb, labels, 5, 0, 1.0)?,
        kfold_eval(&random, labels, 5, 0, 1.0)?,
        few_shot_eval(&emb, labels, 0.3, 5, 0, 1.0)?,
    ];
    let dst_labels = dst.task("poi_affine").expect("planted");
    let probe = ProbedLabels::new(dst_labels);
    // the planted coefficients differ per city, so transfer is expected to be poor
    let zs = zero_shot_eval((&emb, labels), &count_embedding(&dst)?, &probe, 1.0)?;
    println!(
        "zero-shot: {} target labels read while fitting, {} while scoring",
        zs.meta["target_label_reads_during_fit"],
        probe.reads()
    );
    reports.push(zs);
    print!("{}", EvalReport::table(&reports));
    Ok(())
}
