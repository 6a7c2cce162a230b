//! Complaint-hotspot prediction from signalling records.
//!
//! The pipeline turns per-event control-plane and user-plane records into
//! per-(user, window) feature rows and trains a weighted gradient-boosted
//! tree classifier on them:
//!
//! 1. [`schema`] — field catalogue for the record formats.
//! 2. [`ingest`] — CSV parsing, consistency checks, mean imputation,
//!    derived-field materialization.
//! 3. [`featurize`] — one-hot counts, six-statistic window aggregates,
//!    plane join, first/second-order differences.
//! 4. [`gbdt`] — histogram gradient boosting with softmax loss, positive
//!    class weighting, gradient-based one-side sampling and exclusive
//!    feature bundling.
//! 5. [`metrics`] — precision/recall/F1, ROC and PR curves, weight sweep.
//! 6. [`synth`] — seeded generator of labelled normal/affected user data.
//! 7. [`split`] — deterministic by-user train/test partitioning.

pub mod featurize;
pub mod gbdt;
pub mod ingest;
pub mod metrics;
pub mod schema;
pub mod split;
pub mod synth;
pub mod util;

pub use featurize::{FeatureMatrix, WindowRow};
pub use gbdt::{Ensemble, TrainParams};
pub use ingest::IngestReport;
pub use metrics::{ConfusionCounts, Curve, EvalReport};
pub use schema::{
    default_schema, CleanRecord, DerivedFieldSpec, FieldId, FieldKind, FieldSpec, FieldValue,
    Plane, RawRecord, SchemaRegistry,
};
pub use synth::{LabeledDataset, SynthConfig};
