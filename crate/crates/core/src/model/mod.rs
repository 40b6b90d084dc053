//! The networks: stand-in encoder, gazetteer network, projection heads,
//! integration and the backend classifiers, bundled in [`ModelBundle`].

mod bundle;
mod classifier;
mod crf;
mod encoder;
mod integrate;

pub use bundle::{
    AdaptationLoss, L1Source, ModelBundle, ModelConfig, Stage, Stage2Loss, Stage2Options,
};
pub use classifier::{
    pair_spans, softmax_decode, span_decode, span_targets, ClassifierHead, ClassifierKind, DEFAULT_SPAN_WIDTH,
    SPAN_CLASSES,
};
pub use crf::{crf_nll, CrfScores};
pub use encoder::{Encoder, GazNet, Vocab, UNK};
pub use integrate::{Integration, IntegrationMode};
