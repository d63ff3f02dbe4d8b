use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use xaistudy::study::{
    ApiError, AttentionAnswers, ConsentRequest, DecisionSubmission, ErrorKind, StudyApi, StudyConfig, StudyService,
    SurveySubmission,
};

use crate::{AttentionReply, ExportFormat, OpenSessionRequest};

type Shared = Arc<StudyService>;

struct HttpError(ApiError);

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.kind.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(kind = ?self.0.kind, message = %self.0.message, "request failed");
        }
        (status, Json(self.0)).into_response()
    }
}

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        HttpError(e)
    }
}

type Reply<T> = Result<T, HttpError>;

/// Runs a store-touching call off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, HttpError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HttpError(ApiError::new(ErrorKind::Internal, e.to_string())))?
        .map_err(HttpError)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, HttpError> {
    serde_json::from_slice(body)
        .map_err(|e| HttpError(ApiError::new(ErrorKind::Validation, format!("request body: {e}"))))
}

async fn create_study(State(api): State<Shared>, body: Bytes) -> Reply<impl IntoResponse> {
    let config: StudyConfig = parse(&body)?;
    let created = blocking(move || api.create_study(config)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn study_info(State(api): State<Shared>, Path(study): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(move || api.study_info(&study)).await?))
}

async fn open_session(State(api): State<Shared>, Path(study): Path<String>, body: Bytes) -> Reply<impl IntoResponse> {
    let req: OpenSessionRequest = parse(&body)?;
    let session = blocking(move || api.open_session(&study, &req.participant_id)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn find_session(
    State(api): State<Shared>,
    Path((study, participant)): Path<(String, String)>,
) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(move || api.find_session(&study, &participant)).await?))
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    format: ExportFormat,
}

async fn export(
    State(api): State<Shared>,
    Path(study): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Reply<Response> {
    blocking(move || {
        let set = api.export(&study)?;
        let csv = |write: &dyn Fn(&mut Vec<u8>) -> Result<(), xaistudy::study::ExportError>| {
            let mut buf = Vec::new();
            write(&mut buf).map_err(|e| ApiError::new(ErrorKind::Internal, e.to_string()))?;
            Ok::<_, ApiError>(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
        };
        match q.format {
            ExportFormat::Json => Ok(Json(set).into_response()),
            ExportFormat::DecisionsCsv => csv(&|buf| set.write_decisions_csv(buf)),
            ExportFormat::SurveysCsv => {
                let bank = api.study(&study)?.survey_bank.clone();
                csv(&|buf| set.write_surveys_csv(buf, &bank))
            }
        }
    })
    .await
}

async fn get_session(State(api): State<Shared>, Path(session): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(move || api.get_session(&session)).await?))
}

async fn consent(State(api): State<Shared>, Path(session): Path<String>, body: Bytes) -> Reply<impl IntoResponse> {
    let req: ConsentRequest = parse(&body)?;
    Ok(Json(blocking(move || api.consent(&session, req.agree)).await?))
}

async fn attention_check(
    State(api): State<Shared>,
    Path(session): Path<String>,
    body: Bytes,
) -> Reply<impl IntoResponse> {
    let answers: AttentionAnswers = parse(&body)?;
    let outcome = blocking(move || api.attention_check(&session, &answers)).await?;
    Ok(Json(AttentionReply { outcome }))
}

async fn next_task(State(api): State<Shared>, Path(session): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(move || api.next_task(&session)).await?))
}

async fn submit_decision(
    State(api): State<Shared>,
    Path(session): Path<String>,
    body: Bytes,
) -> Reply<impl IntoResponse> {
    let decision: DecisionSubmission = parse(&body)?;
    Ok(Json(blocking(move || api.submit_decision(&session, &decision)).await?))
}

async fn submit_survey(
    State(api): State<Shared>,
    Path(session): Path<String>,
    body: Bytes,
) -> Reply<impl IntoResponse> {
    let survey: SurveySubmission = parse(&body)?;
    Ok(Json(blocking(move || api.submit_survey(&session, &survey)).await?))
}

async fn not_found() -> HttpError {
    HttpError(ApiError::new(ErrorKind::NotFound, "no such endpoint"))
}

pub fn router(service: Arc<StudyService>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/studies", post(create_study))
        .route("/studies/{study}", get(study_info))
        .route("/studies/{study}/sessions", post(open_session))
        .route("/studies/{study}/participants/{participant}", get(find_session))
        .route("/studies/{study}/export", get(export))
        .route("/sessions/{session}", get(get_session))
        .route("/sessions/{session}/consent", post(consent))
        .route("/sessions/{session}/attention-check", post(attention_check))
        .route("/sessions/{session}/next-task", post(next_task))
        .route("/sessions/{session}/decisions", post(submit_decision))
        .route("/sessions/{session}/survey", post(submit_survey))
        .fallback(not_found)
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<StudyService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server on its own runtime thread. Stops when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn_server(service: Arc<StudyService>, addr: SocketAddr) -> io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let thread = std::thread::Builder::new()
        .name("study-server".into())
        .spawn(move || {
            runtime.block_on(serve(listener, service, async {
                let _ = rx.await;
            }))
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
