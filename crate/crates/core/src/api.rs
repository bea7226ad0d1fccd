//! REST query service: model/function catalogs, single and stream inference
//! queries served from the data store, and archive-based deployment.
//!
//! Handlers take short locks on the shared runtime; stream subscribers
//! receive records over bounded buffers and are disconnected on overflow
//! rather than blocking the pipeline.

use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;

use crate::manifest::parse_bundle;
use crate::runtime::{DeployError, Runtime};
use crate::store::StoreError;

pub type SharedRuntime = Arc<Mutex<Runtime>>;

pub fn shared(runtime: Runtime) -> SharedRuntime {
    Arc::new(Mutex::new(runtime))
}

pub fn router(state: SharedRuntime) -> Router {
    Router::new()
        .route("/models", get(models))
        .route("/functions", get(functions))
        .route("/inference/{query_type}/{function_id}", get(inference))
        .route("/deploy", post(deploy))
        .with_state(state)
}

/// Bind and serve until the task is dropped.
pub async fn serve(state: SharedRuntime, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

fn error_body(status: StatusCode, code: &str, detail: String) -> Response {
    (status, axum::Json(json!({ "error": code, "detail": detail }))).into_response()
}

async fn models(State(state): State<SharedRuntime>) -> Response {
    let models = state.lock().unwrap().list_models();
    axum::Json(models).into_response()
}

async fn functions(State(state): State<SharedRuntime>) -> Response {
    let functions = state.lock().unwrap().list_functions();
    axum::Json(functions).into_response()
}

async fn inference(
    State(state): State<SharedRuntime>,
    Path((query_type, function_id)): Path<(String, String)>,
) -> Response {
    match query_type.as_str() {
        "single" => {
            let result = state.lock().unwrap().query_single(&function_id);
            match result {
                Ok(record) => axum::Json(record).into_response(),
                Err(StoreError::UnknownSource(s)) => error_body(
                    StatusCode::NOT_FOUND,
                    "UnknownFunction",
                    format!("`{s}` is not a deployed model or function"),
                ),
                Err(StoreError::NoDataYet(s)) => error_body(
                    StatusCode::NOT_FOUND,
                    "NoDataYet",
                    format!("no output stored yet for `{s}`"),
                ),
            }
        }
        "stream" => {
            let rx = state.lock().unwrap().subscribe(&function_id, 64);
            match rx {
                Ok(rx) => {
                    // Chunked delivery: one JSON record per line as results
                    // are produced, until the client disconnects.
                    let stream = futures::stream::unfold(rx, |mut rx| async move {
                        rx.recv().await.map(|record| {
                            let mut line = serde_json::to_string(&record).expect("serializable");
                            line.push('\n');
                            (Ok::<_, std::convert::Infallible>(line), rx)
                        })
                    });
                    Response::builder()
                        .status(StatusCode::OK)
                        .header("content-type", "application/x-ndjson")
                        .body(Body::from_stream(stream))
                        .unwrap()
                }
                Err(StoreError::UnknownSource(s)) => error_body(
                    StatusCode::NOT_FOUND,
                    "UnknownFunction",
                    format!("`{s}` is not a deployed model or function"),
                ),
                Err(StoreError::NoDataYet(_)) => unreachable!("subscribe does not report NoDataYet"),
            }
        }
        other => error_body(
            StatusCode::BAD_REQUEST,
            "UnknownQueryType",
            format!("`{other}` is not one of single, stream"),
        ),
    }
}

async fn deploy(State(state): State<SharedRuntime>, body: axum::body::Bytes) -> Response {
    let bundle = match parse_bundle(&body[..]) {
        Ok(b) => b,
        Err(e) => {
            return error_body(StatusCode::BAD_REQUEST, "MalformedArchive", e.to_string());
        }
    };
    let result = state.lock().unwrap().deploy(&bundle);
    match result {
        Ok(report) => (StatusCode::OK, axum::Json(report)).into_response(),
        Err(DeployError::ValidationFailed(report)) => (
            StatusCode::BAD_REQUEST,
            axum::Json(json!({ "error": "ValidationFailed", "report": report })),
        )
            .into_response(),
        Err(e @ DeployError::PlacementFailed(_)) => {
            error_body(StatusCode::CONFLICT, "PlacementFailed", e.to_string())
        }
        Err(e) => error_body(StatusCode::BAD_REQUEST, "DeployFailed", e.to_string()),
    }
}

/// Map virtual time onto the wall clock: sleeps until each event is due,
/// then lets the runtime process it. Used by `serve`.
pub fn run_realtime(
    state: SharedRuntime,
    shutdown: Arc<std::sync::atomic::AtomicBool>,
) {
    use std::sync::atomic::Ordering;
    let wall_start = std::time::Instant::now();
    while !shutdown.load(Ordering::Relaxed) {
        let next = {
            let rt = state.lock().unwrap();
            rt.next_event_time()
        };
        match next {
            None => std::thread::sleep(std::time::Duration::from_millis(20)),
            Some(at) => {
                let due = std::time::Duration::from_nanos(at.as_nanos());
                let elapsed = wall_start.elapsed();
                if due > elapsed {
                    let wait = (due - elapsed).min(std::time::Duration::from_millis(50));
                    std::thread::sleep(wait);
                    continue;
                }
                let mut rt = state.lock().unwrap();
                if let Err(e) = rt.step() {
                    eprintln!("runtime error: {e}");
                }
            }
        }
    }
}
