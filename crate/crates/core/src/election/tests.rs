use super::*;
use crate::he::{generate_keypair_seeded, op_counts, reset_op_counts};
use crate::schema::AnswerSet;
use std::sync::OnceLock;

const ADMIN: &str = "admin-token-0123456789";

fn keypair() -> &'static Keypair {
    static KP: OnceLock<Keypair> = OnceLock::new();
    KP.get_or_init(|| generate_keypair_seeded(1024, 5).unwrap())
}

fn config(dir: &std::path::Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(
        "e1",
        vec!["A".into(), "B".into(), "C".into()],
        FactorSchema::default_profile(),
        keypair().public_key().clone(),
        dir,
        ADMIN,
    );
    c.password_iterations = 1000;
    c.sync_writes = false;
    c
}

fn answers(a: [usize; 5]) -> AnswerSet {
    AnswerSet {
        schema_id: FactorSchema::default_profile().schema_id,
        answers: a.to_vec(),
    }
}

fn open_service() -> (tempfile::TempDir, ElectionService) {
    let dir = tempfile::tempdir().unwrap();
    let svc = ElectionService::open(config(dir.path())).unwrap();
    (dir, svc)
}

fn voter(svc: &ElectionService, id: &str) -> String {
    svc.register_voter(id, "password-123").unwrap();
    svc.verify_voter(id, "password-123").unwrap().token
}

fn staged_voter(svc: &ElectionService, id: &str) -> String {
    let token = voter(svc, id);
    svc.collect_voter_plain(&token, answers([0, 3, 2, 1, 4]))
        .unwrap();
    token
}

fn opened() -> (tempfile::TempDir, ElectionService) {
    let (dir, svc) = open_service();
    svc.transition_election(ADMIN, ElectionState::Open).unwrap();
    (dir, svc)
}

#[test]
fn registration_rules() {
    let (_d, svc) = open_service();
    let rec = svc.register_voter("alice", "password-123").unwrap();
    assert!(rec.eligible && !rec.has_voted && rec.staged_batch.is_none());
    assert!(matches!(
        svc.register_voter("alice", "other-password"),
        Err(ServiceError::DuplicateVoter)
    ));
    assert!(matches!(
        svc.register_voter("bob", "short"),
        Err(ServiceError::WeakPassword)
    ));
    assert_eq!(ServiceError::DuplicateVoter.to_string(), "duplicate voter");
}

#[test]
fn authentication_failures_are_uniform() {
    let (_d, svc) = open_service();
    svc.register_voter("alice", "password-123").unwrap();
    let wrong = svc.verify_voter("alice", "password-124").unwrap_err();
    let unknown = svc.verify_voter("nobody", "password-123").unwrap_err();
    svc.set_eligibility(ADMIN, "alice", false).unwrap();
    let ineligible = svc.verify_voter("alice", "password-123").unwrap_err();
    for e in [wrong, unknown, ineligible] {
        assert!(matches!(e, ServiceError::AuthenticationFailed));
        assert_eq!(e.to_string(), "authentication failed");
    }
}

#[test]
fn sessions_expire() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.session_ttl = Duration::ZERO;
    let svc = ElectionService::open(c).unwrap();
    svc.register_voter("alice", "password-123").unwrap();
    let token = svc.verify_voter("alice", "password-123").unwrap();
    assert!(matches!(
        svc.authenticate(&token.token),
        Err(ServiceError::SessionExpired)
    ));
    assert!(matches!(
        svc.authenticate("not-a-token"),
        Err(ServiceError::InvalidSession)
    ));
}

#[test]
fn state_machine_is_forward_only() {
    let (_d, svc) = open_service();
    assert!(matches!(
        svc.transition_election("wrong-token-0000000000", ElectionState::Open),
        Err(ServiceError::BadCredential)
    ));
    assert!(matches!(
        svc.transition_election(ADMIN, ElectionState::Closed),
        Err(ServiceError::IllegalTransition { .. })
    ));
    assert!(svc.election_view().schema.is_none());
    svc.transition_election(ADMIN, ElectionState::Open).unwrap();
    let view = svc.election_view();
    assert_eq!(view.state, ElectionState::Open);
    assert_eq!(
        view.public_key.unwrap().fingerprint,
        keypair().public_key().fingerprint().to_hex()
    );
    assert!(matches!(
        svc.transition_election(ADMIN, ElectionState::Setup),
        Err(ServiceError::IllegalTransition { .. })
    ));
    assert!(matches!(
        svc.tally_vote(ADMIN),
        Err(ServiceError::ElectionNotClosed)
    ));
    svc.transition_election(ADMIN, ElectionState::Closed)
        .unwrap();
    svc.transition_election(ADMIN, ElectionState::Tallied)
        .unwrap();
    assert!(matches!(
        svc.transition_election(ADMIN, ElectionState::Open),
        Err(ServiceError::IllegalTransition { .. })
    ));
}

#[test]
fn cast_requires_questionnaire_and_open_election() {
    let (_d, svc) = open_service();
    let token = voter(&svc, "alice");
    assert!(matches!(
        svc.cast_vote(&token, "A"),
        Err(ServiceError::ElectionNotOpen)
    ));
    svc.transition_election(ADMIN, ElectionState::Open).unwrap();
    let err = svc.cast_vote(&token, "A").unwrap_err();
    assert_eq!(err.to_string(), "questionnaire required first");
    svc.collect_voter_plain(&token, answers([1, 0, 0, 0, 0]))
        .unwrap();
    assert!(matches!(
        svc.cast_vote(&token, "Z"),
        Err(ServiceError::UnknownCandidate(_))
    ));
    let receipt = svc.cast_vote(&token, "A").unwrap();
    assert_eq!(receipt.block_index, 1);
    assert_eq!(
        svc.cast_vote(&token, "B").unwrap_err().to_string(),
        "already voted"
    );
    svc.transition_election(ADMIN, ElectionState::Closed)
        .unwrap();
    let late = staged_voter_after_close(&svc);
    assert_eq!(
        svc.cast_vote(&late, "A").unwrap_err().to_string(),
        "election closed"
    );
}

fn staged_voter_after_close(svc: &ElectionService) -> String {
    // registration is closed now, so reuse an existing account
    svc.verify_voter("alice", "password-123").unwrap().token
}

#[test]
fn questionnaire_validation() {
    let (_d, svc) = opened();
    let token = voter(&svc, "alice");
    let err = svc
        .collect_voter_plain(&token, answers([0, 17, 0, 0, 0]))
        .unwrap_err();
    assert!(matches!(&err, ServiceError::InvalidAnswers(v) if v.len() == 1));
    let mut wrong = answers([0, 0, 0, 0, 0]);
    wrong.schema_id = "other".into();
    assert!(matches!(
        svc.collect_voter_plain(&token, wrong),
        Err(ServiceError::SchemaMismatch)
    ));

    let schema = FactorSchema::default_profile();
    let mut batch = schema
        .encrypt_batch(keypair().public_key(), &answers([0, 0, 0, 0, 0]))
        .unwrap();
    batch.ciphertexts.pop();
    assert!(matches!(
        svc.collect_voter(&token, batch),
        Err(ServiceError::InvalidBatch(_))
    ));

    // a batch under some other key
    let other = generate_keypair_seeded(1024, 99).unwrap();
    let foreign = schema
        .encrypt_batch(other.public_key(), &answers([0, 0, 0, 0, 0]))
        .unwrap();
    assert!(matches!(
        svc.collect_voter(&token, foreign),
        Err(ServiceError::InvalidBatch(_))
    ));
}

#[test]
fn restaging_replaces_batch() {
    let (_d, svc) = opened();
    let token = voter(&svc, "alice");
    svc.collect_voter_plain(&token, answers([0, 0, 0, 0, 0]))
        .unwrap();
    svc.collect_voter_plain(&token, answers([1, 1, 1, 1, 1]))
        .unwrap();
    let staged = svc.voter("alice").unwrap().staged_batch.unwrap();
    let schema = FactorSchema::default_profile();
    for (f, ct) in staged.ciphertexts.iter().enumerate() {
        let counts = schema
            .decode_counts(f, &keypair().decrypt(ct).unwrap())
            .unwrap();
        assert_eq!(counts[1], 1, "factor {f}");
    }
}

#[test]
fn check_vote_roundtrip_and_tamper() {
    let (_d, svc) = opened();
    let alice = staged_voter(&svc, "alice");
    let bob = staged_voter(&svc, "bob");
    assert_eq!(
        svc.check_vote(&alice).unwrap_err().to_string(),
        "no vote on record"
    );
    let receipt = svc.cast_vote(&alice, "B").unwrap();
    svc.cast_vote(&bob, "C").unwrap();
    let view = svc.check_vote(&alice).unwrap();
    assert_eq!(view.vote, "B");
    assert_eq!(view.receipt, receipt);
    assert_eq!(svc.check_vote(&bob).unwrap().vote, "C");

    // flip a byte inside alice's vote on the admin chain
    let path = svc.ledger().admin_path().to_path_buf();
    let mut bytes = std::fs::read(&path).unwrap();
    let needle = b"\x00\x00\x00\x01B";
    let at = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .unwrap();
    bytes[at + 4] = b'C';
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        svc.check_vote(&alice),
        Err(ServiceError::DigestMismatch)
    ));
}

#[test]
fn tally_counts_and_uses_no_homomorphic_operations() {
    let (_d, svc) = opened();
    let votes = ["A", "B", "A", "C", "A"];
    for (i, v) in votes.iter().enumerate() {
        let t = staged_voter(&svc, &format!("v{i}"));
        svc.cast_vote(&t, v).unwrap();
    }
    assert_eq!(svc.running_counts()["A"], 3);
    svc.transition_election(ADMIN, ElectionState::Closed)
        .unwrap();
    reset_op_counts();
    let tally = svc.tally_vote(ADMIN).unwrap();
    assert_eq!(op_counts(), Default::default());
    assert_eq!(tally.total, 5);
    assert_eq!(tally.counts["A"], 3);
    assert_eq!(tally.counts["B"], 1);
    assert_eq!(tally.counts["C"], 1);
    assert_eq!(svc.tally_vote(ADMIN).unwrap(), tally);
    assert_eq!(svc.state(), ElectionState::Tallied);
}

#[test]
fn analysis_requires_tally_and_matching_key() {
    let (_d, svc) = opened();
    let t = staged_voter(&svc, "alice");
    svc.cast_vote(&t, "A").unwrap();
    assert!(matches!(
        svc.analyze(keypair()),
        Err(ServiceError::NotTallied)
    ));
    svc.transition_election(ADMIN, ElectionState::Closed)
        .unwrap();
    svc.tally_vote(ADMIN).unwrap();
    let other = generate_keypair_seeded(1024, 77).unwrap();
    assert!(matches!(
        svc.analyze(&other),
        Err(ServiceError::KeyMismatch)
    ));
    assert!(svc.analysis_report().is_none());
    reset_op_counts();
    let report = svc.analyze(keypair()).unwrap();
    assert_eq!(op_counts().decryptions, 3 * 5 + 5);
    assert_eq!(report.per_candidate["A"]["residence"][3], 1);
    assert_eq!(report.turnout_by_factor["education"], vec![0, 0, 0, 0, 1]);
    assert_eq!(svc.analysis_report(), Some(report));
}

#[test]
fn concurrent_duplicate_casts_commit_once() {
    let (_d, svc) = opened();
    let token = staged_voter(&svc, "alice");
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..16)
            .map(|_| s.spawn(|| svc.cast_vote(&token, "A")))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .all(|e| matches!(e, ServiceError::AlreadyVoted)));
    assert_eq!(svc.ledger().record_count(), 1);
}

#[test]
fn replication_failure_leaves_voter_able_to_retry() {
    let (_d, svc) = opened();
    let token = staged_voter(&svc, "alice");
    svc.ledger().set_node_online("node-0", false).unwrap();
    svc.ledger().set_node_online("node-1", false).unwrap();
    assert!(matches!(
        svc.cast_vote(&token, "A"),
        Err(ServiceError::ReplicationFailed)
    ));
    assert!(!svc.voter("alice").unwrap().has_voted);
    svc.ledger().set_node_online("node-1", true).unwrap();
    svc.cast_vote(&token, "A").unwrap();
    assert!(svc.voter("alice").unwrap().has_voted);
}

#[test]
fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let receipt = {
        let svc = ElectionService::open(config(dir.path())).unwrap();
        svc.transition_election(ADMIN, ElectionState::Open).unwrap();
        let a = staged_voter(&svc, "alice");
        staged_voter(&svc, "bob");
        svc.cast_vote(&a, "C").unwrap()
    };
    let svc = ElectionService::open(config(dir.path())).unwrap();
    assert!(matches!(
        ElectionService::open(config(dir.path())),
        Err(ServiceError::DataDirInUse)
    ));
    assert_eq!(svc.state(), ElectionState::Open);
    let alice = svc.voter("alice").unwrap();
    assert!(alice.has_voted);
    assert_eq!(alice.receipt, Some(receipt));
    assert!(alice.staged_batch.is_none());
    let bob = svc.voter("bob").unwrap();
    assert!(!bob.has_voted && bob.staged_batch.is_some());
    assert_eq!(svc.running_counts()["C"], 1);

    let token = svc.verify_voter("alice", "password-123").unwrap().token;
    assert_eq!(svc.check_vote(&token).unwrap().vote, "C");
    assert!(matches!(
        svc.cast_vote(&token, "A"),
        Err(ServiceError::AlreadyVoted)
    ));

    drop(svc);
    let mut other = config(dir.path());
    other.election_id = "e2".into();
    assert!(matches!(
        ElectionService::open(other),
        Err(ServiceError::Config(_))
    ));
}

#[test]
fn rejects_small_keys_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.public_key = generate_keypair_seeded(512, 1)
        .unwrap()
        .public_key()
        .clone();
    assert!(matches!(
        ElectionService::open(c),
        Err(ServiceError::Config(_))
    ));
    let mut c = config(dir.path());
    c.candidates = vec!["A".into(), "A".into()];
    assert!(ElectionService::open(c).is_err());
    let mut c = config(dir.path());
    c.candidates.clear();
    assert!(ElectionService::open(c).is_err());
}

#[test]
fn data_dir_holds_no_secrets() {
    let (dir, svc) = opened();
    let t = voter(&svc, "alice");
    svc.collect_voter_plain(&t, answers([1, 16, 5, 4, 3]))
        .unwrap();
    svc.cast_vote(&t, "A").unwrap();
    let mut blob = Vec::new();
    for entry in walk(dir.path()) {
        blob.extend(std::fs::read(entry).unwrap());
    }
    let text = String::from_utf8_lossy(&blob);
    assert!(!text.contains("password-123"));
    assert!(!text.contains("\"answers\""));
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
