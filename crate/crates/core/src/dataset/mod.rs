//! Dataset fabrication: lossless corpora, encoding assignment, external
//! transcoding, splits and JSON-lines manifests.

pub mod build;
pub mod corpus;
pub mod encoding;
pub mod manifest;
pub mod split;
pub mod transcode;
pub mod verify;

pub use build::{build_dataset, BuildOptions, Seeds};
pub use corpus::{generate_synthetic_corpus, ingest_corpus, IngestReport, SourceTrack};
pub use encoding::{assign_encoding, Bitrate, Codec, DatasetId, EncodingMatrix, EncodingSpec};
pub use manifest::{Label, Manifest, TrackRecord};
pub use split::{split_assign, Split};
pub use transcode::Transcoder;
