//! HTTP/JSON front end for [`ElectionService`].
//!
//! Voter endpoints take `Authorization: Bearer <token>` from `/api/login`;
//! the admin endpoint takes `X-Admin-Token`. Errors are `{"error": "..."}`.
//! Service calls hash passwords, encrypt and fsync, so they run on the
//! blocking pool.

use std::sync::Arc;

use axum::extract::{FromRequestParts, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evote_core::election::{ElectionService, ElectionState, ServiceError};
use evote_core::schema::{AnswerSet, EncryptedBatch};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const ADMIN_HEADER: &str = "x-admin-token";

pub type AppState = Arc<ElectionService>;

pub fn router(service: AppState) -> Router {
    Router::new()
        .route("/api/register", post(register))
        .route("/api/login", post(login))
        .route("/api/election", get(election))
        .route("/api/questionnaire", post(questionnaire))
        .route("/api/questionnaire/plain", post(questionnaire_plain))
        .route("/api/vote", post(cast_vote).get(check_vote))
        .route("/api/tally", get(tally))
        .route("/api/admin/state", post(admin_state))
        .route("/api/analysis", get(analysis))
        .with_state(service)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use ServiceError::*;
        let status = match &e {
            WeakPassword | UnknownCandidate(_) | SchemaMismatch | InvalidAnswers(_)
            | InvalidBatch(_) | KeyMismatch => StatusCode::BAD_REQUEST,
            AuthenticationFailed | InvalidSession | SessionExpired => StatusCode::UNAUTHORIZED,
            BadCredential => StatusCode::FORBIDDEN,
            UnknownVoter | NoVoteOnRecord => StatusCode::NOT_FOUND,
            DuplicateVoter
            | ElectionNotOpen
            | ElectionClosed
            | RegistrationClosed
            | ElectionNotClosed
            | NotTallied
            | IllegalTransition { .. }
            | QuestionnaireRequired
            | AlreadyVoted => StatusCode::CONFLICT,
            ReplicationFailed => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

/// The bearer token of a voter session.
pub struct Bearer(pub String);

impl<S: Send + Sync> FromRequestParts<S> for Bearer {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(|t| Bearer(t.trim().to_string()))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))
    }
}

pub struct AdminToken(pub String);

impl<S: Send + Sync> FromRequestParts<S> for AdminToken {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        parts
            .headers
            .get(ADMIN_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(|t| AdminToken(t.to_string()))
            .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, "missing admin token"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Credentials {
    pub voter_id: String,
    pub password: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionnaireBody {
    pub batch: EncryptedBatch,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlainQuestionnaireBody {
    pub answers: Vec<usize>,
    /// Defaults to the election's schema.
    #[serde(default)]
    pub schema_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VoteBody {
    pub candidate: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateBody {
    pub target: ElectionState,
}

async fn register(
    State(svc): State<AppState>,
    Json(body): Json<Credentials>,
) -> ApiResult<impl IntoResponse> {
    let record = blocking(move || svc.register_voter(&body.voter_id, &body.password)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "voter_id": record.voter_id })),
    ))
}

async fn login(
    State(svc): State<AppState>,
    Json(body): Json<Credentials>,
) -> ApiResult<impl IntoResponse> {
    let session = blocking(move || svc.verify_voter(&body.voter_id, &body.password)).await?;
    Ok(Json(json!({
        "token": session.token,
        "expires_at": session.expires_at,
    })))
}

async fn election(State(svc): State<AppState>) -> impl IntoResponse {
    Json(svc.election_view())
}

async fn questionnaire(
    State(svc): State<AppState>,
    Bearer(token): Bearer,
    Json(body): Json<QuestionnaireBody>,
) -> ApiResult<StatusCode> {
    blocking(move || svc.collect_voter(&token, body.batch)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn questionnaire_plain(
    State(svc): State<AppState>,
    Bearer(token): Bearer,
    Json(body): Json<PlainQuestionnaireBody>,
) -> ApiResult<StatusCode> {
    blocking(move || {
        let answers = AnswerSet {
            schema_id: body
                .schema_id
                .unwrap_or_else(|| svc.schema().schema_id.clone()),
            answers: body.answers,
        };
        svc.collect_voter_plain(&token, answers)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn cast_vote(
    State(svc): State<AppState>,
    Bearer(token): Bearer,
    Json(body): Json<VoteBody>,
) -> ApiResult<impl IntoResponse> {
    let receipt = blocking(move || svc.cast_vote(&token, &body.candidate)).await?;
    Ok(Json(receipt))
}

async fn check_vote(
    State(svc): State<AppState>,
    Bearer(token): Bearer,
) -> ApiResult<impl IntoResponse> {
    let view = blocking(move || svc.check_vote(&token)).await?;
    Ok(Json(view))
}

async fn tally(State(svc): State<AppState>) -> ApiResult<impl IntoResponse> {
    svc.tally()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not tallied yet"))
}

async fn admin_state(
    State(svc): State<AppState>,
    AdminToken(admin): AdminToken,
    Json(body): Json<StateBody>,
) -> ApiResult<impl IntoResponse> {
    let view = blocking(move || svc.transition_election(&admin, body.target)).await?;
    Ok(Json(view))
}

async fn analysis(State(svc): State<AppState>) -> ApiResult<impl IntoResponse> {
    let report = blocking(move || Ok(svc.analysis_report())).await?;
    report
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no analysis produced yet"))
}
