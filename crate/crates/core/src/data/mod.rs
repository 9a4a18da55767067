//! Point-by-point match data: CSV parsing and cleaning, serve-speed
//! imputation, normalization, feature extraction, match sequencing, dataset
//! splits and a synthetic match generator.

pub mod features;
pub mod impute;
pub mod ingest;
pub mod normalize;
pub mod record;
pub mod schema;
pub mod sequence;
pub mod split;
pub mod synth;

pub use features::{extract_momentum_features, Modality, PlayerFeatureVector, FEATURE_DIM, FEATURE_NAMES};
pub use impute::impute_serve_speed;
pub use ingest::{ingest_file, ingest_records, Ingested};
pub use normalize::{normalize_serve_speed, zscore_distance_run, NormalizationMeta};
pub use record::{clean_points, load_points_csv, parse_point_csv, write_points_csv, PlayerPoint, PointRecord, RawRecord};
pub use sequence::{build_match_sequences, GameSpan, MatchSequence, SetSpan};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{generate_synthetic_matches, generate_synthetic_records, SynthConfig};
