//! Synthetic hierarchical data, label construction, evaluation metrics, and
//! file formats.

pub mod io;
pub mod metrics;
pub mod synth;

pub use io::{load_labels, load_term_doc, read_matrix_csv, read_matrix_market, write_labels_csv, write_matrix_csv, TermDoc};
pub use metrics::{class_accuracy, fit_classifier, predict, recon_error, recon_error_parts, top_keywords};
pub use synth::{make_labels, one_hot, synth_hier, synth_hier_with, BlockSpec, SyntheticDataset, DEFAULT_LAMBDA};
