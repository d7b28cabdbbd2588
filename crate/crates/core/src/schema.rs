//! Demographic questionnaire definition and one-hot exponent packing.
//!
//! An answer with category index `k` is encoded as `B^k` with
//! `B = 2^pack_base_bits`. Summing encodings (in the clear or under
//! homomorphic addition) yields a number whose base-`B` digits are the
//! per-category counts, as long as no count reaches `B`.

use std::collections::HashSet;

use num_bigint::BigUint;
use num_traits::One;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he::{Ciphertext, HeError, PublicKey};

pub const MAX_FACTORS: usize = 16;
pub const MIN_CATEGORIES: usize = 2;
pub const MAX_CATEGORIES: usize = 64;
pub const DEFAULT_PACK_BASE_BITS: u32 = 32;

const DEFAULT_SCHEMA: &str = include_str!("../profiles/default_schema.json");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Malformed(String),
    #[error("schema must have between 1 and {MAX_FACTORS} factors, got {0}")]
    FactorCount(usize),
    #[error("factor {factor:?} has {count} categories; allowed range is {MIN_CATEGORIES}..={MAX_CATEGORIES}")]
    CategoryCount { factor: String, count: usize },
    #[error("duplicate label {label:?} in factor {factor:?}")]
    DuplicateLabel { factor: String, label: String },
    #[error("duplicate factor name {0:?}")]
    DuplicateFactor(String),
    #[error("pack_base_bits must be between 1 and 64, got {0}")]
    PackBase(u32),
    #[error("factor index {0} out of range")]
    FactorIndex(usize),
    #[error("category index {category} out of range for factor {factor:?}")]
    CategoryIndex { factor: String, category: usize },
    #[error("packed value has more digits than factor {factor:?} has categories")]
    DigitOverflow { factor: String },
    #[error("packed value exceeds the key modulus")]
    PackedOutOfRange,
    #[error(
        "key too small: factor {factor:?} needs more than {needed} bits, modulus has {available}"
    )]
    Capacity {
        factor: String,
        needed: u64,
        available: u64,
    },
    #[error("invalid answers: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidAnswers(Vec<Violation>),
    #[error("batch length mismatch: expected {expected}, got {got}")]
    BatchLength { expected: usize, got: usize },
    #[error(transparent)]
    He(#[from] HeError),
}

pub type Result<T> = std::result::Result<T, SchemaError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub categories: Vec<String>,
}

impl Factor {
    pub fn category_count(&self) -> usize {
        self.categories.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSchema {
    pub schema_id: String,
    #[serde(default = "default_pack_base_bits")]
    pub pack_base_bits: u32,
    pub factors: Vec<Factor>,
}

fn default_pack_base_bits() -> u32 {
    DEFAULT_PACK_BASE_BITS
}

/// One voter's answers: a category index per factor, in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub schema_id: String,
    pub answers: Vec<usize>,
}

/// One ciphertext per factor, in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedBatch {
    pub schema_id: String,
    pub ciphertexts: Vec<Ciphertext>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SchemaMismatch {
        expected: String,
        got: String,
    },
    AnswerCount {
        expected: usize,
        got: usize,
    },
    CategoryOutOfRange {
        factor: String,
        index: usize,
        category_count: usize,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::SchemaMismatch { expected, got } => {
                write!(f, "schema mismatch (expected {expected:?}, got {got:?})")
            }
            Violation::AnswerCount { expected, got } => {
                write!(f, "expected {expected} answers, got {got}")
            }
            Violation::CategoryOutOfRange {
                factor,
                index,
                category_count,
            } => write!(
                f,
                "factor {factor:?}: category {index} out of range (has {category_count})"
            ),
        }
    }
}

/// Per-category counts for one factor.
pub type CategoryCounts = Vec<u64>;

/// Parses and validates a schema document.
pub fn load_schema(document: &str) -> Result<FactorSchema> {
    let schema: FactorSchema =
        serde_json::from_str(document).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    schema.validate()?;
    Ok(schema)
}

impl FactorSchema {
    /// The shipped five-factor profile (sex, residence, age, income, education).
    pub fn default_profile() -> Self {
        load_schema(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() || self.factors.len() > MAX_FACTORS {
            return Err(SchemaError::FactorCount(self.factors.len()));
        }
        if !(1..=64).contains(&self.pack_base_bits) {
            return Err(SchemaError::PackBase(self.pack_base_bits));
        }
        let mut names = HashSet::new();
        for factor in &self.factors {
            if !names.insert(factor.name.as_str()) {
                return Err(SchemaError::DuplicateFactor(factor.name.clone()));
            }
            let count = factor.category_count();
            if !(MIN_CATEGORIES..=MAX_CATEGORIES).contains(&count) {
                return Err(SchemaError::CategoryCount {
                    factor: factor.name.clone(),
                    count,
                });
            }
            let mut labels = HashSet::new();
            for label in &factor.categories {
                if !labels.insert(label.as_str()) {
                    return Err(SchemaError::DuplicateLabel {
                        factor: factor.name.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    fn factor(&self, factor_index: usize) -> Result<&Factor> {
        self.factors
            .get(factor_index)
            .ok_or(SchemaError::FactorIndex(factor_index))
    }

    /// Largest per-category count a packed sum can hold: `B - 1`.
    pub fn max_count_per_category(&self) -> u64 {
        u64::MAX >> (64 - self.pack_base_bits)
    }

    /// Bits needed to hold every packed digit of the widest factor.
    pub fn required_modulus_bits(&self) -> u64 {
        let widest = self
            .factors
            .iter()
            .map(Factor::category_count)
            .max()
            .unwrap_or(0);
        widest as u64 * self.pack_base_bits as u64
    }

    /// Every factor's `category_count * pack_base_bits` must be strictly
    /// below the modulus bit length, so any packed sum with digits `< B`
    /// stays below `n`.
    pub fn check_capacity(&self, key: &PublicKey) -> Result<()> {
        let available = key.bits();
        for factor in &self.factors {
            let needed = factor.category_count() as u64 * self.pack_base_bits as u64;
            if needed >= available {
                return Err(SchemaError::Capacity {
                    factor: factor.name.clone(),
                    needed,
                    available,
                });
            }
        }
        Ok(())
    }

    /// `B^category_index` with `B = 2^pack_base_bits`.
    pub fn encode_answer(&self, factor_index: usize, category_index: usize) -> Result<BigUint> {
        let factor = self.factor(factor_index)?;
        if category_index >= factor.category_count() {
            return Err(SchemaError::CategoryIndex {
                factor: factor.name.clone(),
                category: category_index,
            });
        }
        Ok(BigUint::one() << (category_index as u64 * self.pack_base_bits as u64))
    }

    /// Splits `packed` into base-`B` digits, zero padded to the factor's
    /// category count.
    pub fn decode_counts(&self, factor_index: usize, packed: &BigUint) -> Result<CategoryCounts> {
        let factor = self.factor(factor_index)?;
        let width = self.pack_base_bits as u64;
        if packed.bits() > factor.category_count() as u64 * width {
            return Err(SchemaError::DigitOverflow {
                factor: factor.name.clone(),
            });
        }
        let mask = self.max_count_per_category();
        let counts = (0..factor.category_count() as u64)
            .map(|k| {
                let digit = packed >> (k * width);
                digit.iter_u64_digits().next().unwrap_or(0) & mask
            })
            .collect();
        Ok(counts)
    }

    /// Like [`FactorSchema::decode_counts`], also rejecting values at or
    /// above the key modulus.
    pub fn decode_counts_under(
        &self,
        key: &PublicKey,
        factor_index: usize,
        packed: &BigUint,
    ) -> Result<CategoryCounts> {
        if packed >= key.modulus() {
            return Err(SchemaError::PackedOutOfRange);
        }
        self.decode_counts(factor_index, packed)
    }

    /// Returns every violation; an empty list means the answers are valid.
    pub fn validate_answers(&self, answers: &AnswerSet) -> Vec<Violation> {
        let mut violations = Vec::new();
        if answers.schema_id != self.schema_id {
            violations.push(Violation::SchemaMismatch {
                expected: self.schema_id.clone(),
                got: answers.schema_id.clone(),
            });
        }
        if answers.answers.len() != self.factors.len() {
            violations.push(Violation::AnswerCount {
                expected: self.factors.len(),
                got: answers.answers.len(),
            });
        }
        for (factor, &index) in self.factors.iter().zip(&answers.answers) {
            if index >= factor.category_count() {
                violations.push(Violation::CategoryOutOfRange {
                    factor: factor.name.clone(),
                    index,
                    category_count: factor.category_count(),
                });
            }
        }
        violations
    }

    pub fn encrypt_batch(&self, key: &PublicKey, answers: &AnswerSet) -> Result<EncryptedBatch> {
        self.encrypt_batch_with_rng(key, answers, &mut rand::rngs::OsRng)
    }

    pub fn encrypt_batch_with_rng<R: RngCore + CryptoRng>(
        &self,
        key: &PublicKey,
        answers: &AnswerSet,
        rng: &mut R,
    ) -> Result<EncryptedBatch> {
        let violations = self.validate_answers(answers);
        if !violations.is_empty() {
            return Err(SchemaError::InvalidAnswers(violations));
        }
        self.check_capacity(key)?;
        let ciphertexts = answers
            .answers
            .iter()
            .enumerate()
            .map(|(i, &category)| {
                let encoded = self.encode_answer(i, category)?;
                Ok(key.encrypt_with_rng(&encoded, rng)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncryptedBatch {
            schema_id: self.schema_id.clone(),
            ciphertexts,
        })
    }

    /// Structural and cryptographic checks on a batch received from a client.
    pub fn check_batch(&self, key: &PublicKey, batch: &EncryptedBatch) -> Result<()> {
        if batch.schema_id != self.schema_id {
            return Err(SchemaError::InvalidAnswers(vec![
                Violation::SchemaMismatch {
                    expected: self.schema_id.clone(),
                    got: batch.schema_id.clone(),
                },
            ]));
        }
        if batch.ciphertexts.len() != self.factors.len() {
            return Err(SchemaError::BatchLength {
                expected: self.factors.len(),
                got: batch.ciphertexts.len(),
            });
        }
        for ct in &batch.ciphertexts {
            key.check(ct)?;
        }
        Ok(())
    }
}
