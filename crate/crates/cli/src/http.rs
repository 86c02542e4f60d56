//! JSON-over-HTTP binding of [`Service`].
//!
//! | method | path                              | request            |
//! |--------|-----------------------------------|--------------------|
//! | POST   | `/experiments`                    | create             |
//! | POST   | `/experiments/{id}/assign`        | assign             |
//! | POST   | `/experiments/{id}/rewards`       | rewards            |
//! | GET    | `/experiments/{id}`               | state              |
//! | GET    | `/experiments/{id}/prob-optimal`  | prob-optimal       |
//!
//! Mutations honour an `Idempotency-Key` header.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use batchbandit::engine::Store;
use serde::Deserialize;

use crate::service::{CreateRequest, ResponseStatus, RewardEntry, Service, ServiceRequest, ServiceResponse};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub fn router<S: Store + 'static>(service: Arc<Service<S>>) -> Router {
    Router::new()
        .route("/experiments", post(create::<S>))
        .route("/experiments/{id}", get(state::<S>))
        .route("/experiments/{id}/assign", post(assign::<S>))
        .route("/experiments/{id}/rewards", post(rewards::<S>))
        .route("/experiments/{id}/prob-optimal", get(prob_optimal::<S>))
        .with_state(service)
}

pub async fn serve<S: Store + 'static>(service: Arc<Service<S>>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}

impl IntoResponse for ServiceResponse {
    fn into_response(self) -> Response {
        let code = match self.status {
            ResponseStatus::Ok => StatusCode::OK,
            ResponseStatus::ClientError if self.body["error"]["code"] == "not_found" => StatusCode::NOT_FOUND,
            ResponseStatus::ClientError => StatusCode::BAD_REQUEST,
            ResponseStatus::Conflict => StatusCode::CONFLICT,
            ResponseStatus::ServerError => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(self)).into_response()
    }
}

fn key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
}

fn rejected(e: JsonRejection) -> ServiceResponse {
    ServiceResponse::error(ResponseStatus::ClientError, "malformed_input", e.body_text())
}

/// Run the blocking service call off the async executor.
async fn call<S: Store + 'static>(service: Arc<Service<S>>, request: ServiceRequest) -> ServiceResponse {
    tokio::task::spawn_blocking(move || service.handle(request))
        .await
        .unwrap_or_else(|e| ServiceResponse::error(ResponseStatus::ServerError, "internal", e.to_string()))
}

async fn create<S: Store + 'static>(
    State(service): State<Arc<Service<S>>>,
    headers: HeaderMap,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> ServiceResponse {
    match body {
        Ok(Json(mut req)) => {
            req.idempotency_key = key(&headers).or(req.idempotency_key);
            call(service, ServiceRequest::Create(req)).await
        }
        Err(e) => rejected(e),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignBody {
    participants: Vec<String>,
}

async fn assign<S: Store + 'static>(
    State(service): State<Arc<Service<S>>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<AssignBody>, JsonRejection>,
) -> ServiceResponse {
    match body {
        Ok(Json(b)) => {
            let req = ServiceRequest::Assign {
                experiment: id,
                participants: b.participants,
                idempotency_key: key(&headers),
            };
            call(service, req).await
        }
        Err(e) => rejected(e),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardsBody {
    rewards: Vec<RewardEntry>,
}

async fn rewards<S: Store + 'static>(
    State(service): State<Arc<Service<S>>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<RewardsBody>, JsonRejection>,
) -> ServiceResponse {
    match body {
        Ok(Json(b)) => {
            let req = ServiceRequest::Rewards {
                experiment: id,
                rewards: b.rewards,
                idempotency_key: key(&headers),
            };
            call(service, req).await
        }
        Err(e) => rejected(e),
    }
}

async fn state<S: Store + 'static>(State(service): State<Arc<Service<S>>>, Path(id): Path<String>) -> ServiceResponse {
    call(service, ServiceRequest::State { experiment: id }).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PaQuery {
    draws: Option<u64>,
    seed: Option<u64>,
}

async fn prob_optimal<S: Store + 'static>(
    State(service): State<Arc<Service<S>>>,
    Path(id): Path<String>,
    query: Result<Query<PaQuery>, QueryRejection>,
) -> ServiceResponse {
    let q = match query {
        Ok(Query(q)) => q,
        Err(e) => return ServiceResponse::error(ResponseStatus::ClientError, "malformed_input", e.body_text()),
    };
    let req = ServiceRequest::ProbOptimal {
        experiment: id,
        draws: q.draws,
        seed: q.seed,
    };
    call(service, req).await
}
