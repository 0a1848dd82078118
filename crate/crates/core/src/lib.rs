//! Information-bottleneck sentence summarization toolkit.
//!
//! * [`textprep`]: segmentation, tokenization and sentence-pair extraction
//! * [`lm`]: language-model scoring (n-gram, remote HTTP, LRU cache)
//! * [`ibsearch`]: extractive deletion search and its reconstruction baseline
//! * [`decoder`]: beam-search decoding for abstractive summaries
//! * [`selfsup`]: fine-tuning corpus construction and statistics
//! * [`rouge`]: ROUGE-1/2/L evaluation
//! * [`pipeline`]: batch commands behind the `ibsum` binary

pub mod decoder;
pub mod ibsearch;
pub mod lm;
pub mod pipeline;
pub mod rouge;
pub mod selfsup;
pub mod textprep;
