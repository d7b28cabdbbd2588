//! Electronic voting with plaintext ballots and homomorphically encrypted
//! voter demographics.
//!
//! Votes are recorded in the clear on a hash-chained, replicated ledger and
//! tallied directly. Each voter's questionnaire answers are one-hot packed and
//! encrypted under Paillier, so per-candidate demographic histograms can be
//! computed over ciphertexts and only the final aggregates are decrypted.

pub mod analysis;
pub mod bench;
pub mod election;
pub mod he;
pub mod ledger;
pub mod schema;
pub mod simulate;
