//! JSON-over-HTTP front end for browser clients and scripted respondents.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::geometry::{tessellate, DesignVector};
use crate::overall::FunctionProfile;

use super::engine::{Answer, Order, Question, QuestionKind};
use super::service::{Service, Study};

pub const DEFAULT_MESH_RESOLUTION: usize = 8;
const MAX_MESH_RESOLUTION: usize = 64;

/// Error body `{"error": kind, "message": ..., "path"?: ...}` with a matching status.
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            Error::Config { .. } | Error::Json(_) => (StatusCode::BAD_REQUEST, "config"),
            Error::Domain(_) => (StatusCode::BAD_REQUEST, "domain"),
            Error::State(_) => (StatusCode::CONFLICT, "state"),
            Error::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            Error::Numerical(_) => (StatusCode::INTERNAL_SERVER_ERROR, "numerical"),
            Error::Io(_) | Error::Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        let mut body = json!({ "error": kind, "message": self.0.to_string() });
        if let Error::Config { path, .. } = &self.0 {
            body["path"] = json!(path);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePayload {
    pub levels: Vec<usize>,
    pub labels: Vec<String>,
}

/// What a client needs to render one question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionPayload {
    pub session: String,
    pub seq: usize,
    pub round: usize,
    pub order: Order,
    pub question_type: QuestionKind,
    pub form_pair: [String; 2],
    pub designs: [DesignVector; 2],
    pub mesh: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_profiles: Option<[ProfilePayload; 2]>,
}

pub fn payload(service: &Service, study: &Study, session: &str, q: &Question) -> QuestionPayload {
    let ids = q.designs.map(|d| service.register_design(&d));
    let label = |p: &FunctionProfile| ProfilePayload {
        levels: p.levels.clone(),
        labels: p
            .levels
            .iter()
            .zip(&study.config.attributes)
            .map(|(&l, a)| a.levels.get(l - 1).cloned().unwrap_or_default())
            .collect(),
    };
    QuestionPayload {
        session: session.to_string(),
        seq: q.seq,
        round: q.round,
        order: q.order,
        question_type: q.kind,
        mesh: ids.clone().map(|id| format!("/designs/{id}/mesh")),
        form_pair: ids,
        designs: q.designs,
        function_profiles: q.profiles.as_ref().map(|[a, b]| [label(a), label(b)]),
    }
}

/// Runs blocking work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(Error::state(format!("worker failed: {e}")))),
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_study(State(svc): State<Arc<Service>>, body: String) -> ApiResult<(StatusCode, Json<Value>)> {
    let st = svc.create_study_json(&body)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "study": st.id,
            "config": st.config,
            "validation_questions": st.validation.len(),
        })),
    ))
}

async fn create_session(State(svc): State<Arc<Service>>, Path(study): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    let st = svc.study(&study)?;
    let s = st.create_session()?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session": s.id,
            "respondent": s.respondent,
            "eta": st.config.eta.schedule(s.respondent),
            "status": s.status,
        })),
    ))
}

async fn next(State(svc): State<Arc<Service>>, Path(session): Path<String>) -> ApiResult<Json<QuestionPayload>> {
    blocking(move || {
        let st = svc.study_of_session(&session)?;
        let q = st.next_question(&session)?;
        Ok(Json(payload(&svc, &st, &session, &q)))
    })
    .await
}

async fn answer(
    State(svc): State<Arc<Service>>,
    Path(session): Path<String>,
    body: String,
) -> ApiResult<Json<Value>> {
    let answer: Answer = crate::config::from_json_with_path(&body)?;
    blocking(move || {
        let st = svc.study_of_session(&session)?;
        let summary = st.submit_answer(&session, answer)?;
        Ok(Json(serde_json::to_value(summary)?))
    })
    .await
}

#[derive(Deserialize)]
struct MeshQuery {
    resolution: Option<usize>,
}

async fn mesh(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<MeshQuery>,
) -> ApiResult<Response> {
    let r = q.resolution.unwrap_or(DEFAULT_MESH_RESOLUTION);
    if !(1..=MAX_MESH_RESOLUTION).contains(&r) {
        return Err(Error::config("resolution", format!("must lie in 1..={MAX_MESH_RESOLUTION}")).into());
    }
    let d = svc.design(&id)?;
    let body = blocking(move || Ok(tessellate(&d, r).to_json())).await?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn finalize(State(svc): State<Arc<Service>>, Path(study): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let st = svc.study(&study)?;
        let (_, report) = st.finalize()?;
        Ok(Json(serde_json::to_value(report)?))
    })
    .await
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/studies", post(create_study))
        .route("/studies/{id}/sessions", post(create_session))
        .route("/studies/{id}/finalize", post(finalize))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/answer", post(answer))
        .route("/designs/{id}/mesh", get(mesh))
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<Service>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
