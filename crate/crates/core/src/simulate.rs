//! Headless election driver: registers voters, answers the questionnaire with
//! client-side encryption, casts random votes, closes and tallies. The
//! generated answers and votes are kept so callers can recount them
//! independently.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisReport;
use crate::bench::random_answers;
use crate::election::{
    auth, ElectionService, ElectionState, ServiceConfig, ServiceError, TallyResult,
};
use crate::he::{generate_keypair_seeded, op_counts, reset_op_counts, HeError, Keypair, OpCounts};
use crate::ledger::CandidateId;
use crate::schema::{FactorSchema, SchemaError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimulationError>;

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub voters: usize,
    pub candidates: Vec<CandidateId>,
    pub schema: FactorSchema,
    pub key_bits: u64,
    pub seed: u64,
    /// A fresh temporary directory when absent.
    pub data_dir: Option<PathBuf>,
    pub password_iterations: u32,
    pub sync_writes: bool,
    /// Use this key instead of generating one from `seed`.
    pub keypair: Option<Keypair>,
    /// Also run the encrypted analysis after tallying.
    pub analyze: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            voters: 1024,
            candidates: vec!["A".into(), "B".into(), "C".into()],
            schema: FactorSchema::default_profile(),
            key_bits: 1024,
            seed: 0,
            data_dir: None,
            // simulated passwords guard nothing; keep registration cheap
            password_iterations: 1_000,
            sync_writes: false,
            keypair: None,
            analyze: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub voter_id: String,
    pub answers: Vec<usize>,
    pub vote: CandidateId,
}

pub struct SimulationOutcome {
    pub keypair: Keypair,
    pub admin_token: String,
    pub tally: TallyResult,
    /// Homomorphic operations performed while tallying.
    pub tally_op_counts: OpCounts,
    pub report: Option<AnalysisReport>,
    pub voters: Vec<GroundTruth>,
    pub data_dir: PathBuf,
    pub service: ElectionService,
    _tmp: Option<tempfile::TempDir>,
}

impl std::fmt::Debug for SimulationOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulationOutcome")
            .field("tally", &self.tally)
            .field("voters", &self.voters.len())
            .field("data_dir", &self.data_dir)
            .finish_non_exhaustive()
    }
}

pub fn simulate(config: SimulationConfig) -> Result<SimulationOutcome> {
    let keypair = match config.keypair {
        Some(kp) => kp,
        None => generate_keypair_seeded(config.key_bits, config.seed)?,
    };
    let (tmp, data_dir) = match config.data_dir {
        Some(dir) => (None, dir),
        None => {
            let tmp = tempfile::tempdir()?;
            let dir = tmp.path().to_path_buf();
            (Some(tmp), dir)
        }
    };
    let admin_token = auth::random_token();
    let mut service_config = ServiceConfig::new(
        format!("sim-{}", config.seed),
        config.candidates.clone(),
        config.schema.clone(),
        keypair.public_key().clone(),
        &data_dir,
        admin_token.clone(),
    );
    service_config.password_iterations = config.password_iterations;
    service_config.sync_writes = config.sync_writes;
    let service = ElectionService::open(service_config)?;
    service.transition_election(&admin_token, ElectionState::Open)?;

    // the voter devices' randomness, separate from the key's
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5eed_0fba_1107);
    let mut voters = Vec::with_capacity(config.voters);
    for i in 0..config.voters {
        let voter_id = format!("voter-{i:05}");
        let password = format!("pw-{}", auth::random_token());
        service.register_voter(&voter_id, &password)?;
        let session = service.verify_voter(&voter_id, &password)?;

        let answers = random_answers(&config.schema, &mut rng);
        let batch =
            config
                .schema
                .encrypt_batch_with_rng(keypair.public_key(), &answers, &mut rng)?;
        service.collect_voter(&session.token, batch)?;

        let vote = config.candidates[rng.gen_range(0..config.candidates.len())].clone();
        service.cast_vote(&session.token, &vote)?;
        voters.push(GroundTruth {
            voter_id,
            answers: answers.answers,
            vote,
        });
    }

    service.transition_election(&admin_token, ElectionState::Closed)?;
    reset_op_counts();
    let tally = service.tally_vote(&admin_token)?;
    let tally_op_counts = op_counts();
    let report = if config.analyze {
        Some(service.analyze(&keypair)?)
    } else {
        None
    };
    Ok(SimulationOutcome {
        keypair,
        admin_token,
        tally,
        tally_op_counts,
        report,
        voters,
        data_dir,
        service,
        _tmp: tmp,
    })
}
