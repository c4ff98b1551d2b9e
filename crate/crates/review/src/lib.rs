//! HTTP façade over the review queue of a verispice workspace.
//!
//! Every state change goes through the pipeline's ticket operations; this
//! crate never writes workspace files itself. Retrials after a resolution run
//! on a blocking worker and are reported through `trial_status`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use similar::TextDiff;
use thiserror::Error;
use verispice::model::{valid_name, Workspace};
use verispice::pipeline::{
    list_tickets, override_netlist, resolve_ticket, run_problem, ticket_workspace, workspace_problem,
    PipelineContext, PipelineError, PipelineState, Resolution, ResolutionKind, ReviewTicket, Stage,
    TicketStatus,
};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("refusing to bind {0} without an access token; use a loopback address or set a token")]
    OpenBind(SocketAddr),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Progress of the retrial a resolution scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum TrialStatus {
    Idle,
    Running,
    Finished { stage: Stage, llm_trial: u8, sim_trial: u8 },
    Error { message: String },
}

pub struct AppState {
    pub root: PathBuf,
    /// Context for retrials; without one, resolutions only update state.
    pub context: Option<Arc<PipelineContext>>,
    pub token: Option<String>,
    pub allow_netlist_override: bool,
    trials: Mutex<HashMap<String, TrialStatus>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>, context: Option<Arc<PipelineContext>>) -> Self {
        AppState {
            root: root.into(),
            context,
            token: None,
            allow_netlist_override: false,
            trials: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_netlist_override(mut self, enabled: bool) -> Self {
        self.allow_netlist_override = enabled;
        self
    }

    pub fn trial_status(&self, problem: &str) -> TrialStatus {
        self.trials
            .lock()
            .unwrap()
            .get(problem)
            .cloned()
            .unwrap_or(TrialStatus::Idle)
    }

    fn set_trial(&self, problem: &str, status: TrialStatus) {
        self.trials.lock().unwrap().insert(problem.to_string(), status);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactLink {
    pub name: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketView {
    #[serde(flatten)]
    pub ticket: ReviewTicket,
    pub status: TicketStatus,
    pub links: Vec<ArtifactLink>,
    /// Unified diff between the two latest description versions.
    pub description_diff: Option<String>,
    pub problem_stage: Stage,
    pub trial_status: TrialStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionResponse {
    pub ticket: TicketView,
    pub stage: Stage,
    pub llm_trial: u8,
    pub sim_trial: u8,
    pub trial_status: TrialStatus,
}

#[derive(Debug, Deserialize)]
pub struct ResolutionBody {
    pub kind: String,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct NetlistBody {
    pub text: String,
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::NotFound(_) => StatusCode::NOT_FOUND,
            PipelineError::State(_) => StatusCode::CONFLICT,
            PipelineError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PipelineError::Model(_) | PipelineError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn artifact_url(problem: &str, name: &str) -> String {
    format!("/problems/{problem}/artifacts/{name}")
}

fn desc_version(name: &str) -> Option<u32> {
    name.strip_prefix("desc_v")?.strip_suffix(".txt")?.parse().ok()
}

fn description_diff(ws: &Workspace, artifacts: &[String]) -> Option<String> {
    let mut versions: Vec<(u32, &String)> = artifacts.iter().filter_map(|a| Some((desc_version(a)?, a))).collect();
    versions.sort();
    let [.., (_, old), (_, new)] = versions.as_slice() else {
        return None;
    };
    let (a, b) = (ws.read_text(old).ok()?, ws.read_text(new).ok()?);
    Some(TextDiff::from_lines(&a, &b).unified_diff().header(old, new).to_string())
}

fn view(app: &AppState, ticket: ReviewTicket, st: &PipelineState) -> TicketView {
    let ws = Workspace {
        root: app.root.join(&ticket.problem_id),
    };
    let mut names: Vec<String> = st.diagram.iter().cloned().collect();
    for a in &ticket.artifacts {
        if !names.contains(a) {
            names.push(a.clone());
        }
    }
    let links = names
        .into_iter()
        .filter(|n| ws.artifact_path(n).is_some_and(|p| p.is_file()))
        .map(|name| ArtifactLink {
            url: artifact_url(&ticket.problem_id, &name),
            name,
        })
        .collect();
    TicketView {
        status: ticket.status(),
        description_diff: description_diff(&ws, &ticket.artifacts),
        problem_stage: st.stage,
        trial_status: app.trial_status(&ticket.problem_id),
        links,
        ticket,
    }
}

fn load_state(ws: &Workspace) -> ApiResult<PipelineState> {
    PipelineState::load(ws)?.ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no state at {}", ws.root.display())))
}

fn ticket_view(app: &AppState, id: &str) -> ApiResult<TicketView> {
    let ws = ticket_workspace(&app.root, id)?;
    let st = load_state(&ws)?;
    let ticket = st
        .tickets
        .iter()
        .find(|t| t.id == id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("ticket {id}")))?;
    Ok(view(app, ticket, &st))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn get_tickets(
    State(app): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<TicketView>>> {
    let filter = match q.get("status").map(|s| s.parse::<TicketStatus>()) {
        None => None,
        Some(Ok(s)) => Some(s),
        Some(Err(e)) => return Err(ApiError(StatusCode::BAD_REQUEST, e)),
    };
    blocking(move || {
        let mut states: HashMap<String, PipelineState> = HashMap::new();
        let mut out = Vec::new();
        for t in list_tickets(&app.root)? {
            if filter.is_some_and(|f| f != t.status()) {
                continue;
            }
            if !states.contains_key(&t.problem_id) {
                let st = load_state(&Workspace {
                    root: app.root.join(&t.problem_id),
                })?;
                states.insert(t.problem_id.clone(), st);
            }
            let st = &states[&t.problem_id];
            out.push(view(&app, t, st));
        }
        Ok(Json(out))
    })
    .await
}

async fn get_ticket(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<TicketView>> {
    blocking(move || ticket_view(&app, &id).map(Json)).await
}

/// Runs the problem again off the request path after a resolution.
fn schedule_retrial(app: &Arc<AppState>, ws: Workspace, st: &PipelineState) {
    let Some(ctx) = app.context.clone() else { return };
    if st.stage.is_terminal() {
        return;
    }
    let problem_id = st.problem_id.clone();
    app.set_trial(&problem_id, TrialStatus::Running);
    let app = app.clone();
    tokio::task::spawn_blocking(move || {
        let status = match workspace_problem(&ws).and_then(|p| run_problem(&ctx, &p, &ws)) {
            Ok(st) => TrialStatus::Finished {
                stage: st.stage,
                llm_trial: st.llm_trial,
                sim_trial: st.sim_trial,
            },
            Err(e) => TrialStatus::Error { message: e.to_string() },
        };
        app.set_trial(&problem_id, status);
    });
}

fn respond(app: &Arc<AppState>, id: &str, ws: Workspace, st: PipelineState) -> ApiResult<Json<ResolutionResponse>> {
    schedule_retrial(app, ws, &st);
    let ticket = st
        .tickets
        .iter()
        .find(|t| t.id == id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("ticket {id}")))?;
    Ok(Json(ResolutionResponse {
        ticket: view(app, ticket, &st),
        stage: st.stage,
        llm_trial: st.llm_trial,
        sim_trial: st.sim_trial,
        trial_status: app.trial_status(&st.problem_id),
    }))
}

async fn post_resolution(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<ResolutionBody>,
) -> ApiResult<Json<ResolutionResponse>> {
    let kind: ResolutionKind = body
        .kind
        .parse()
        .map_err(|e: String| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    if kind == ResolutionKind::NetlistOverride {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "netlist overrides use POST /tickets/{id}/netlist".into(),
        ));
    }
    blocking(move || {
        let ws = ticket_workspace(&app.root, &id)?;
        let resolution = Resolution::from_parts(kind, body.text.as_deref())?;
        let st = resolve_ticket(&ws, &id, resolution)?;
        respond(&app, &id, ws, st)
    })
    .await
}

async fn post_netlist(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<NetlistBody>,
) -> ApiResult<Json<ResolutionResponse>> {
    blocking(move || {
        let ws = ticket_workspace(&app.root, &id)?;
        let st = override_netlist(&ws, &id, &body.text)?;
        respond(&app, &id, ws, st)
    })
    .await
}

pub fn content_type(name: &str) -> &'static str {
    let ext = Path::new(name).extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "svg" => "image/svg+xml",
        "json" => "application/json",
        "jsonl" => "application/x-ndjson",
        "txt" | "cir" | "sp" | "log" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn get_artifact(
    State(app): State<Arc<AppState>>,
    UrlPath((problem, name)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    if !valid_name(&problem) || !valid_name(&name) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "invalid path segment".into()));
    }
    let ws = Workspace {
        root: app.root.join(&problem),
    };
    let path = ws.artifact_path(&name).expect("validated");
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("{problem}/{name}")))?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static(content_type(&name)))], bytes).into_response())
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(&format!("Bearer {token}")) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong access token".into()).into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<AppState>) -> Router {
    let mut r = Router::new()
        .route("/tickets", get(get_tickets))
        .route("/tickets/{id}", get(get_ticket))
        .route("/tickets/{id}/resolution", post(post_resolution))
        .route("/problems/{id}/artifacts/{name}", get(get_artifact));
    if app.allow_netlist_override {
        r = r.route("/tickets/{id}/netlist", post(post_netlist));
    }
    r.layer(middleware::from_fn_with_state(app.clone(), require_token))
        .with_state(app)
}

/// Serves until the process ends. Non-loopback addresses need a token.
pub async fn serve(app: Arc<AppState>, addr: SocketAddr) -> Result<(), ServeError> {
    if !addr.ip().is_loopback() && app.token.is_none() {
        return Err(ServeError::OpenBind(addr));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app)).await?;
    Ok(())
}
