//! Concept vectors: refinement from contrastive pairs, cross-model maps and
//! reformulation, and their on-disk form.

mod linear_map;
mod pairs;
pub mod store;
pub(crate) mod vector;

pub use linear_map::{
    collect_paired_activations, fit_linear_map, least_squares, reformulate, ActivationCorpus,
    LayerCorrespondence, LayerMap, LeastSquares, LinearMapSet, PairedLayer, DEFAULT_CUTOFF,
};
pub use pairs::{ExamplePair, ExamplePairSet, PromptTemplate, TemplateSet, PLACEHOLDER};
pub use store::{load_maps, load_vector, save_maps, save_vector};
pub use vector::{cosine, last_token_states, refine_concept, steered_last_token_states, ConceptVector};
