//! Synthetic semi-supervised datasets with analytically known class
//! posteriors and instance-dependent noise, plus small CSV/IDX loaders.

mod csv;
mod dataset;
mod idx;
mod mixture;
mod noise_field;

pub use self::csv::{load_csv, load_labeled_csv, write_csv, CsvSchema};
pub use dataset::{generate, LabeledExample, LatentLabels, Provenance, SslDataset};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxOptions, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use mixture::MixtureSpec;
pub use noise_field::{sample_noisy_label, NoiseField, NoiseKind};
