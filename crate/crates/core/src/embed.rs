//! Region embeddings from every supported source.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::graph::UrbanGraph;
use crate::harness::{EmbeddingMatrix, EmbeddingSource};
use crate::pretrain::ModelState;
use crate::prompt::{learnable_embeddings, manual_embeddings, PromptState, TaskWeights};
use crate::tape::Mat;

/// Each region's own node-feature (TransR) vector.
pub fn transr_node(model: &ModelState, graph: &UrbanGraph) -> Result<Mat> {
    let table = model.feature_table(graph)?;
    let ids = graph.region_ids();
    let mut m = Mat::zeros((ids.len(), table.dim()));
    for (k, id) in ids.iter().enumerate() {
        let row = table
            .get(id)
            .ok_or_else(|| Error::UnknownNode(format!("no feature vector for `{id}`")))?;
        m.row_mut(k).assign(&row);
    }
    Ok(m)
}

/// Mean node-feature vector over each region's subgraph.
pub fn transr_graph(model: &ModelState, graph: &UrbanGraph) -> Result<Mat> {
    let subs = model.subgraphs(graph)?;
    let mut m = Mat::zeros((subs.len(), model.dim()));
    for (k, s) in subs.iter().enumerate() {
        m.row_mut(k)
            .assign(&s.features.mean_axis(Axis(0)).expect("subgraph has its root"));
    }
    Ok(m)
}

/// Embeddings of every region of `graph` for `source`. The learnable source
/// needs a tuned prompt; `seed` drives manual-prompt deletions and random
/// embeddings.
pub fn build_embeddings(
    source: &EmbeddingSource,
    model: &ModelState,
    graph: &UrbanGraph,
    prompt: Option<&PromptState>,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let ids = graph.region_ids();
    let values = match source {
        EmbeddingSource::Pretrained => model.embed(graph)?,
        EmbeddingSource::Manual(preset) => {
            manual_embeddings(model, graph, &TaskWeights::preset(preset)?, seed)?
        }
        EmbeddingSource::Learnable => {
            let state = prompt.ok_or_else(|| {
                Error::InvalidArgument("the learnable source needs a tuned prompt".into())
            })?;
            learnable_embeddings(model, graph, state)?
        }
        EmbeddingSource::TransrNode => transr_node(model, graph)?,
        EmbeddingSource::TransrGraph => transr_graph(model, graph)?,
        EmbeddingSource::Random => return Ok(EmbeddingMatrix::random(ids, model.dim(), seed)),
    };
    EmbeddingMatrix::new(ids, values, source.clone())
}
