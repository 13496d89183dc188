//! Fixtures shared by the benchmarks under `benches/`.

use protograph_core::likelihood::{encode, Encoded};
use protograph_core::*;

pub struct Fixture {
    pub dataset: Dataset,
    pub embeddings: RelationEmbeddings,
    pub graph: RelationGraph,
    pub params: ModelParams,
    pub episode: Episode,
}

/// Synthetic task with `relations` relations of dimension `dim`, a 10-NN
/// graph, linear-encoder parameters and one 5-way 1-shot training episode.
pub fn fixture(relations: usize, dim: usize) -> Fixture {
    let synth = SynthConfig {
        num_relations: relations,
        dim,
        train_relations: relations / 2,
        val_relations: relations / 4,
        ..SynthConfig::default()
    };
    let (dataset, embeddings) = generate_synthetic(&synth, &RngStream::new(1, 0)).expect("valid synth config");
    let graph = build_knn_graph(&embeddings, 10.min(relations - 1)).expect("valid k");
    let spec = ModelSpec {
        encoder: EncoderMode::Linear,
        ..ModelSpec::default()
    };
    let params = ModelParams::init(&spec, dim, dim, &RngStream::new(1, 1)).expect("valid dims");
    let episode = sample_episode(&dataset, Split::Train, 5, 1, 5, &RngStream::new(1, 2)).expect("enough relations");
    Fixture {
        dataset,
        embeddings,
        graph,
        params,
        episode,
    }
}

impl Fixture {
    /// Encoded support set and target summaries for the fixture episode.
    pub fn sampler_inputs(&self) -> (Vec<Encoded>, Mat<f64>) {
        let support = self
            .episode
            .support
            .iter()
            .map(|item| Encoded {
                slot: item.slot,
                encoding: encode(&item.features, &self.params.encoder).expect("encodes"),
            })
            .collect();
        let h = relation_summaries(&self.graph, &self.params.gnn).expect("summaries");
        let rows: Vec<usize> = self.episode.targets.iter().map(|r| r.0).collect();
        (support, h.select_rows(&rows))
    }
}
