//! Transport-independent request handling over a [`Store`].
//!
//! Every request maps to one engine call. Mutating requests may carry an
//! idempotency key; a repeated key with the same payload returns the stored
//! response without touching the experiment.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use batchbandit::allocation::{prob_optimal, DEFAULT_DRAWS};
use batchbandit::engine::{create_experiment, ArmCounts, Store};
use batchbandit::rng;
use batchbandit::{
    AllocationPolicy, AssignmentRecord, BetaParams, Error, ExperimentConfig, ExperimentState, Reward, Status,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum ServiceRequest {
    Create(CreateRequest),
    Assign {
        experiment: String,
        participants: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    Rewards {
        experiment: String,
        rewards: Vec<RewardEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    State {
        experiment: String,
    },
    ProbOptimal {
        experiment: String,
        #[serde(default)]
        draws: Option<u64>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub id: String,
    /// Explicit labels; otherwise `arms` labels `arm1..armK`.
    #[serde(default)]
    pub arm_labels: Option<Vec<String>>,
    #[serde(default)]
    pub arms: Option<usize>,
    pub policy: AllocationPolicy,
    #[serde(default)]
    pub batches: Option<u32>,
    #[serde(default)]
    pub prior: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl CreateRequest {
    pub fn config(&self) -> batchbandit::Result<ExperimentConfig> {
        let mut cfg = match (&self.arm_labels, self.arms) {
            (Some(labels), None) => {
                let mut c = ExperimentConfig::with_arms(self.id.clone(), labels.len(), self.policy);
                c.arm_labels = labels.clone();
                c
            }
            (None, Some(k)) => ExperimentConfig::with_arms(self.id.clone(), k, self.policy),
            _ => return Err(Error::InvalidArgument("give exactly one of `arms` or `arm_labels`".into())),
        };
        if let Some(b) = self.batches {
            cfg.batches_planned = b;
        }
        if let Some((a, b)) = self.prior {
            cfg.prior = BetaParams::new(a, b)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub participant_id: String,
    pub clicked: Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseStatus {
    Ok,
    ClientError,
    Conflict,
    ServerError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceResponse {
    pub status: ResponseStatus,
    pub body: Value,
}

impl ServiceResponse {
    pub fn ok(body: Value) -> Self {
        ServiceResponse {
            status: ResponseStatus::Ok,
            body,
        }
    }

    pub fn error(status: ResponseStatus, code: &str, message: impl Into<String>) -> Self {
        ServiceResponse {
            status,
            body: json!({ "error": { "code": code, "message": message.into() } }),
        }
    }

    pub fn from_error(e: &Error) -> Self {
        Self::error(status_of(e), e.code(), e.to_string())
    }

    pub fn is_ok(&self) -> bool {
        self.status == ResponseStatus::Ok
    }
}

/// Response class for an engine error.
pub fn status_of(e: &Error) -> ResponseStatus {
    match e {
        Error::Busy(_) | Error::InvalidState(_) | Error::BatchBudgetExhausted(_) | Error::DuplicateExperiment(_) => {
            ResponseStatus::Conflict
        }
        Error::Io(_) | Error::Snapshot(_) => ResponseStatus::ServerError,
        _ => ResponseStatus::ClientError,
    }
}

/// JSON view of an experiment shared by the CLI and the service.
pub fn state_view(state: &ExperimentState) -> Value {
    let cfg = state.config();
    json!({
        "id": state.id(),
        "status": status_name(state.status()),
        "batch_index": state.batch_index(),
        "batches_planned": cfg.batches_planned,
        "seed": state.seed(),
        "policy": cfg.policy,
        "arm_labels": cfg.arm_labels,
        "prior": cfg.prior,
        "posteriors": state.posteriors(),
        "counts": counts_view(state.counts()),
        "pending": state.pending().len(),
    })
}

fn counts_view(counts: &[ArmCounts]) -> Value {
    counts
        .iter()
        .map(|c| {
            let t = c.total();
            json!({
                "assigned": t.assigned,
                "clicked": t.clicked,
                "assigned_uniform": c.uniform.assigned,
                "clicked_uniform": c.uniform.clicked,
                "assigned_ts": c.ts.assigned,
                "clicked_ts": c.ts.clicked,
            })
        })
        .collect()
}

pub fn status_name(s: Status) -> &'static str {
    match s {
        Status::Open => "open",
        Status::BatchPending => "batch-pending",
        Status::Closed => "closed",
    }
}

pub fn assignments_view(state: &ExperimentState, records: &[AssignmentRecord]) -> Value {
    json!({
        "experiment": state.id(),
        "batch": state.batch_index() + 1,
        "assignments": records
            .iter()
            .map(|r| json!({
                "participant_id": r.participant_id,
                "arm": r.arm,
                "label": state.config().arm_labels[r.arm.zero_based()],
                "source": r.source.as_str(),
            }))
            .collect::<Vec<_>>(),
    })
}

pub fn rewards_view(state: &ExperimentState) -> Value {
    json!({
        "experiment": state.id(),
        "closed_batch": state.batch_index(),
        "status": status_name(state.status()),
        "posteriors": state.posteriors(),
    })
}

/// PA of the stored posteriors. `seed` defaults to a fresh one, which is
/// echoed in the result.
pub fn prob_optimal_view(state: &ExperimentState, draws: u64, seed: u64) -> batchbandit::Result<Value> {
    let pa = prob_optimal(state.posteriors(), draws, &mut rng::stream(seed))?;
    Ok(json!({
        "experiment": state.id(),
        "batch_index": state.batch_index(),
        "draws": draws,
        "seed": seed,
        "probs": pa.probs,
        "favored": pa.favored(),
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct KeyId {
    op: &'static str,
    experiment: String,
    key: String,
}

#[derive(Default)]
struct KeyCache {
    done: HashMap<KeyId, (ServiceRequest, ServiceResponse)>,
    in_flight: HashSet<KeyId>,
}

pub struct Service<S> {
    store: S,
    keys: Mutex<KeyCache>,
}

impl<S: Store> Service<S> {
    pub fn new(store: S) -> Self {
        Service {
            store,
            keys: Mutex::new(KeyCache::default()),
        }
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn handle(&self, request: ServiceRequest) -> ServiceResponse {
        let Some(id) = key_id(&request) else {
            return self.execute(&request);
        };
        {
            let mut cache = self.keys.lock().expect("key cache poisoned");
            if let Some((original, response)) = cache.done.get(&id) {
                if *original != request {
                    return ServiceResponse::error(
                        ResponseStatus::ClientError,
                        "idempotency_key_reused",
                        format!("idempotency key `{}` was used for a different request", id.key),
                    );
                }
                return response.clone();
            }
            if !cache.in_flight.insert(id.clone()) {
                return ServiceResponse::error(
                    ResponseStatus::Conflict,
                    "busy",
                    format!("a request with idempotency key `{}` is in progress", id.key),
                );
            }
        }
        let response = self.execute(&request);
        let mut cache = self.keys.lock().expect("key cache poisoned");
        cache.in_flight.remove(&id);
        // Conflicts and server errors are transient; let the client retry them.
        if matches!(response.status, ResponseStatus::Ok | ResponseStatus::ClientError) {
            cache.done.insert(id, (request, response.clone()));
        }
        response
    }

    fn execute(&self, request: &ServiceRequest) -> ServiceResponse {
        let result = match request {
            ServiceRequest::Create(c) => self.create(c),
            ServiceRequest::Assign {
                experiment,
                participants,
                ..
            } => self.store.mutate(experiment, |s| {
                let recs = s.open_batch(participants)?;
                Ok(assignments_view(s, &recs))
            }),
            ServiceRequest::Rewards {
                experiment, rewards, ..
            } => {
                let list: Vec<(String, Reward)> =
                    rewards.iter().map(|r| (r.participant_id.clone(), r.clicked)).collect();
                self.store.mutate(experiment, |s| {
                    s.record_rewards(&list)?;
                    Ok(rewards_view(s))
                })
            }
            ServiceRequest::State { experiment } => self.store.load(experiment).map(|s| {
                let mut v = state_view(&s);
                v["snapshot"] = serde_json::to_value(s.snapshot()).expect("snapshot serializes");
                v
            }),
            ServiceRequest::ProbOptimal {
                experiment,
                draws,
                seed,
            } => self.store.load(experiment).and_then(|s| {
                prob_optimal_view(&s, draws.unwrap_or(DEFAULT_DRAWS), seed.unwrap_or_else(rng::fresh_seed))
            }),
        };
        match result {
            Ok(body) => ServiceResponse::ok(body),
            Err(e) => ServiceResponse::from_error(&e),
        }
    }

    fn create(&self, c: &CreateRequest) -> batchbandit::Result<Value> {
        let cfg = c.config()?;
        let seed = c.seed.unwrap_or_else(|| {
            let s = rng::fresh_seed();
            log::info!("experiment `{}`: no seed given, using {s}", cfg.id);
            s
        });
        let state = create_experiment(cfg, seed)?;
        self.store.create(&state)?;
        Ok(state_view(&state))
    }
}

fn key_id(request: &ServiceRequest) -> Option<KeyId> {
    let (op, experiment, key) = match request {
        ServiceRequest::Create(c) => ("create", &c.id, c.idempotency_key.as_ref()?),
        ServiceRequest::Assign {
            experiment,
            idempotency_key,
            ..
        } => ("assign", experiment, idempotency_key.as_ref()?),
        ServiceRequest::Rewards {
            experiment,
            idempotency_key,
            ..
        } => ("rewards", experiment, idempotency_key.as_ref()?),
        _ => return None,
    };
    Some(KeyId {
        op,
        experiment: experiment.clone(),
        key: key.clone(),
    })
}
