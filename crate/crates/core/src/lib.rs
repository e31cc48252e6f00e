//! Submodular ensembling of feature attribution maps.
//!
//! A monotone deep submodular function (DSF) is learned from a handful of
//! real-valued attribution heatmaps and their top-t binarizations. Features
//! are then re-attributed by their marginal gain under the learned function,
//! in the context of the features already selected by a greedy pass. The
//! result favours discriminative yet non-redundant features.
//!
//! Module map:
//! - [`dsf`]: the network, its concave extension, gradients and Lipschitz bounds
//! - [`submax`]: greedy cardinality-constrained maximization and an exhaustive oracle
//! - [`resample`]: heatmaps, top-t binarization, grid down/up-sampling
//! - [`trainer`]: the hinge-regularized learning objective and its projected Adagrad solver
//! - [`attribution`]: marginal-gain attribution, top-p selection, aggregation, pipeline
//! - [`baselines`]: a small MLP classifier with manual backprop and VG/IG/SG/IxG maps
//! - [`evaluation`]: perturbation curves, top-k Jaccard, robustness IoU
//! - [`io`] and [`config`]: bit-exact file formats, rendering and JSON configuration

pub mod attribution;
pub mod baselines;
pub mod config;
pub mod dsf;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod resample;
pub mod submax;
pub mod trainer;

pub use attribution::{agg_mean, sea_attribute, sea_pipeline, top_p_select, AttributionMap};
pub use dsf::{Activation, DsfArchitecture, DsfNetwork, WeightGradient};
pub use error::{Error, Result};
pub use resample::{BinaryMap, Heatmap};
pub use submax::{greedy_maximize, GreedyChain, SetFunction};
pub use trainer::{train, TrainConfig, TrainReport, TrainingSet};
