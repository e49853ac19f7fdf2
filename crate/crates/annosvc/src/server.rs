//! HTTP front end: next task, judgment submission and the accuracy report.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::campaign::{Judgment, SystemAccuracy};
use crate::error::{Error, Rejection};
use crate::store::Store;

/// Request lines (`METHOD path?query status`) in arrival order.
#[derive(Debug, Default)]
pub struct AccessLog {
    lines: Mutex<Vec<String>>,
    file: Option<Mutex<File>>,
}

impl AccessLog {
    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            lines: Mutex::default(),
            file: Some(Mutex::new(file)),
        })
    }

    fn record(&self, line: String) {
        if let Some(f) = &self.file {
            let mut f = f.lock().expect("access log lock");
            // The access log is diagnostic; a failed write must not fail the request.
            let _ = writeln!(f, "{line}");
        }
        self.lines.lock().expect("access log lock").push(line);
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("access log lock").clone()
    }
}

#[derive(Debug, Default)]
pub struct AppState {
    pub campaigns: Mutex<BTreeMap<String, Store>>,
    pub access: AccessLog,
}

impl AppState {
    pub fn new(access: AccessLog) -> Self {
        Self {
            campaigns: Mutex::default(),
            access,
        }
    }

    pub fn insert(&self, store: Store) {
        let id = store.campaign.id.clone();
        self.campaigns.lock().expect("campaign lock").insert(id, store);
    }
}

pub type Shared = Arc<AppState>;

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

/// Judgment as posted; the server stamps the time when none is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentBody {
    pub task_id: String,
    pub annotator_id: String,
    pub factually_correct: bool,
    pub natural_sounding: bool,
    pub self_contained: bool,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub campaign: String,
    pub judged: usize,
    pub total: usize,
    pub systems: BTreeMap<String, SystemAccuracy>,
}

fn unknown_campaign(id: &str) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": format!("unknown campaign {id:?}") }))).into_response()
}

async fn next_task(State(s): State<Shared>, UrlPath(id): UrlPath<String>, Query(q): Query<NextQuery>) -> Response {
    let campaigns = s.campaigns.lock().expect("campaign lock");
    match campaigns.get(&id) {
        Some(store) => Json(store.campaign.next_task(&q.annotator)).into_response(),
        None => unknown_campaign(&id),
    }
}

async fn submit(State(s): State<Shared>, UrlPath(id): UrlPath<String>, Json(body): Json<JudgmentBody>) -> Response {
    let mut campaigns = s.campaigns.lock().expect("campaign lock");
    let Some(store) = campaigns.get_mut(&id) else {
        return unknown_campaign(&id);
    };
    let j = Judgment {
        task_id: body.task_id,
        annotator_id: body.annotator_id,
        factually_correct: body.factually_correct,
        natural_sounding: body.natural_sounding,
        self_contained: body.self_contained,
        timestamp: body
            .timestamp
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
    };
    match store.submit(j) {
        Ok(()) => Json(json!({ "accepted": true })).into_response(),
        Err(Error::Rejected(r)) => {
            let status = match r {
                Rejection::AlreadyJudged => StatusCode::CONFLICT,
                Rejection::UnknownTask => StatusCode::NOT_FOUND,
            };
            (status, Json(json!({ "accepted": false, "reason": r.to_string() }))).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn report(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    let campaigns = s.campaigns.lock().expect("campaign lock");
    let Some(store) = campaigns.get(&id) else {
        return unknown_campaign(&id);
    };
    let c = &store.campaign;
    Json(Report {
        campaign: c.id.clone(),
        judged: c.judged_count(),
        total: c.tasks.len(),
        systems: c.compute_accuracy().unwrap_or_default(),
    })
    .into_response()
}

async fn access_log(State(s): State<Shared>, req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let target = req.uri().path_and_query().map_or_else(|| req.uri().path().to_string(), |p| p.to_string());
    let resp = next.run(req).await;
    s.access.record(format!("{method} {target} {}", resp.status().as_u16()));
    resp
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/campaigns/{id}/next", get(next_task))
        .route("/campaigns/{id}/judgments", post(submit))
        .route("/campaigns/{id}/report", get(report))
        .layer(middleware::from_fn_with_state(state.clone(), access_log))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
