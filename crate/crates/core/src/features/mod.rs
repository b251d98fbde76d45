//! Feature schema, record parsing, batching and embedding lookup.

mod embed;
mod sample;
mod schema;

pub use embed::{lookup_embeddings, pad_and_mask, Batch, CategoryEmbeddings, EmbeddingTables};
pub use sample::{encode_sample, vocab_index, EncodedSample, RawBehavior, RawSample};
pub use schema::{FeatureSchema, FieldSpec, SchemaConfig};
