use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use crowdms_core::assembler::{assemble_project, publish, AssemblyOptions, LocalDirectory};
use crowdms_core::model::{
    AssignmentId, ClientId, ClientRequest, Contribution, FunctionArtifact, IssueId, IssueResolution, LogicalTime,
    MicrotaskId, MicrotaskKind, Notification, Question, Answer, QuestionId, Submission, SubmissionPayload, WorkerId,
};
use crowdms_core::sandbox::{bundle_for, run_tests, TestRunReport};
use crowdms_core::scheduler::FetchOutcome;
use crowdms_core::scoring::{leaderboard, LeaderboardRow};
use crowdms_core::workflow::FunctionStatus;
use crowdms_core::Project;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::Principal;
use crate::error::ApiError;
use crate::store::lock;
use crate::{reply, AppState};

type ApiResult = Result<Response, ApiError>;

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/projects", post(create_project))
        .route("/projects/{id}/dashboard", get(dashboard))
        .route("/projects/{id}/microtasks/fetch", post(fetch))
        .route("/assignments/{id}/submit", post(submit))
        .route("/assignments/{id}/skip", post(skip))
        .route("/assignments/{id}/run-tests", post(run_tests_route))
        .route("/projects/{id}/leaderboard", get(leaderboard_route))
        .route("/projects/{id}/questions", post(post_question).get(list_questions))
        .route("/questions/{id}/answers", post(post_answer))
        .route("/workers/{id}/notifications", get(notifications))
        .route("/projects/{id}/issues/{issue}/resolve", post(resolve_issue))
        .route("/projects/{id}/publish", post(publish_route))
        .route("/tutorials", get(tutorial_index))
        .route("/tutorials/{name}", get(tutorial))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such route") })
        .with_state(app)
}

fn principal(app: &AppState, headers: &HeaderMap) -> Result<Principal, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(ApiError::unauthenticated)?;
    app.0.auth.authenticate(token.trim()).ok_or_else(ApiError::unauthenticated)
}

fn worker(app: &AppState, headers: &HeaderMap) -> Result<WorkerId, ApiError> {
    match principal(app, headers)? {
        Principal::Worker(w) => Ok(w),
        Principal::Client(_) => Err(ApiError::forbidden("this route requires a worker")),
    }
}

fn client(app: &AppState, headers: &HeaderMap) -> Result<ClientId, ApiError> {
    match principal(app, headers)? {
        Principal::Client(c) => Ok(c),
        Principal::Worker(_) => Err(ApiError::forbidden("this route requires the project client")),
    }
}

/// Parses a JSON body; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

/// `proj-1.as-3` for assignment 3 of project `proj-1`.
pub fn external_id(project: &str, local: impl std::fmt::Display) -> String {
    format!("{project}.{local}")
}

/// Splits an external id into its project and local number. The local part
/// may omit its prefix.
fn split_id<'a>(text: &'a str, prefix: &str) -> Result<(&'a str, u64), ApiError> {
    let (project, local) = text.rsplit_once('.').ok_or_else(|| ApiError::not_found(text))?;
    Ok((project, local_id(local, prefix).ok_or_else(|| ApiError::not_found(text))?))
}

fn local_id(text: &str, prefix: &str) -> Option<u64> {
    text.strip_prefix(prefix).unwrap_or(text).parse().ok()
}

fn read<T>(app: &AppState, id: &str, f: impl FnOnce(&Project) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let handle = app.0.store.get(id).ok_or_else(|| ApiError::not_found(format!("project {id}")))?;
    let entry = lock(&handle);
    f(&entry.project)
}

/// Runs a command against one project: the clock is advanced first, then
/// whatever was appended is written out whether or not the command succeeded.
fn command<T>(
    app: &AppState,
    id: &str,
    f: impl FnOnce(&mut Project, LogicalTime) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let handle = app.0.store.get(id).ok_or_else(|| ApiError::not_found(format!("project {id}")))?;
    let mut entry = lock(&handle);
    let now = app.0.clock.now();
    let ticked = entry.project.tick(now).map_err(ApiError::from);
    let result = ticked.and_then(|_| f(&mut entry.project, now));
    app.0.store.persist(id, &mut entry).map_err(|e| ApiError::internal(e.to_string()))?;
    result
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Created {
    project_id: String,
}

async fn create_project(State(app): State<AppState>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let caller = client(&app, &headers)?;
    let request: ClientRequest = body(&bytes)?;
    let policy = app.0.config.project.policy();
    let project = Project::create(caller, request, policy, app.0.clock.now())?;
    let project_id = app.0.store.insert(project).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(reply(StatusCode::CREATED, &Created { project_id }))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Dashboard {
    project_id: String,
    project_name: String,
    project_description: String,
    functions: Vec<FunctionStatus>,
    available_microtasks: usize,
    leaderboard: Vec<LeaderboardRow>,
    complete: bool,
}

async fn dashboard(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    principal(&app, &headers)?;
    let view = read(&app, &id, |p| {
        let state = p.state();
        let request = state.request.as_ref().ok_or_else(|| ApiError::internal("project has no request"))?;
        let status = p.status();
        Ok(Dashboard {
            project_id: id.clone(),
            project_name: request.project_name.clone(),
            project_description: request.project_description.clone(),
            functions: status.functions,
            available_microtasks: state.queue.len(),
            leaderboard: leaderboard(&state.ledger),
            complete: status.complete,
        })
    })?;
    Ok(reply(StatusCode::OK, &view))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase", tag = "status")]
enum FetchView {
    #[serde(rename_all = "camelCase")]
    Assigned {
        assignment_id: String,
        microtask_id: MicrotaskId,
        kind: MicrotaskKind,
        assigned_at: LogicalTime,
        warning_at: LogicalTime,
        deadline: LogicalTime,
        /// The function as it stands; for a review, the version the
        /// submission was written against.
        function: FunctionArtifact,
        #[serde(skip_serializing_if = "Option::is_none")]
        submission: Option<Submission>,
    },
    NoneAvailable,
}

async fn fetch(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = worker(&app, &headers)?;
    let view = command(&app, &id, |p, now| {
        let FetchOutcome::Assigned(a) = p.fetch(&who, now)? else { return Ok(FetchView::NoneAvailable) };
        let state = p.state();
        let record = &state.assignments[&a.assignment];
        let function = state.functions[&a.kind.function_id()].clone();
        let submission = match &a.kind {
            MicrotaskKind::Review { submission_id, .. } => state.submissions.get(submission_id).cloned(),
            MicrotaskKind::ImplementFunctionBehavior { .. } => None,
        };
        Ok(FetchView::Assigned {
            assignment_id: external_id(&id, a.assignment),
            microtask_id: a.microtask_id,
            kind: a.kind,
            assigned_at: record.assigned_at,
            warning_at: record.assigned_at.plus_secs(state.policy.warning_at),
            deadline: a.deadline,
            function,
            submission,
        })
    })?;
    Ok(reply(StatusCode::OK, &view))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ReviewBody {
    stars: u8,
    #[serde(default)]
    feedback: Option<String>,
}

/// Exactly one of `work` (IFB) or `review`.
#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SubmitBody {
    #[serde(default)]
    work: Option<SubmissionPayload>,
    #[serde(default)]
    test_report: Option<TestRunReport>,
    #[serde(default)]
    review: Option<ReviewBody>,
}

async fn submit(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let who = worker(&app, &headers)?;
    let (project, n) = split_id(&id, "as-")?;
    let request: SubmitBody = body(&bytes)?;
    let outcome = command(&app, project, |p, now| match (request.work, request.review) {
        (Some(work), None) => Ok(p.submit_work(&who, AssignmentId(n), work, request.test_report, now)?),
        (None, Some(r)) => Ok(p.submit_review(&who, AssignmentId(n), r.stars, r.feedback, now)?),
        _ => Err(ApiError::bad_request("body must contain exactly one of `work` or `review`")),
    })?;
    Ok(reply(StatusCode::OK, &outcome))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Skipped {
    assignment_id: String,
    skipped: bool,
}

async fn skip(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = worker(&app, &headers)?;
    let (project, n) = split_id(&id, "as-")?;
    command(&app, project, |p, now| Ok(p.skip(&who, AssignmentId(n), now)?))?;
    Ok(reply(StatusCode::OK, &Skipped { assignment_id: id.clone(), skipped: true }))
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RunTestsBody {
    #[serde(default)]
    draft: Option<Contribution>,
}

/// Runs the function's tests, overlaid with the caller's draft. A reviewer
/// runs the submission under review instead. Nothing is recorded.
async fn run_tests_route(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let who = worker(&app, &headers)?;
    let (project, n) = split_id(&id, "as-")?;
    let request: RunTestsBody = body(&bytes)?;
    let config = &app.0.config;
    let bundle = command(&app, project, |p, now| {
        let state = p.state();
        let (microtask_id, _) = state.live_assignment(&who, AssignmentId(n), now)?;
        let kind = &state.microtasks[&microtask_id].kind;
        let draft = match kind {
            MicrotaskKind::ImplementFunctionBehavior { .. } => request.draft,
            MicrotaskKind::Review { submission_id, .. } => match &state.submissions[submission_id].payload {
                SubmissionPayload::BehaviorContribution(c) => Some(c.clone()),
                _ => None,
            },
        };
        bundle_for(
            state,
            kind.function_id(),
            draft.as_ref(),
            config.persistence_seed.clone(),
            config.project.executor.limits(),
        )
        .ok_or_else(|| ApiError::not_found(kind.function_id()))
    })?;
    let executor = app.0.executor.clone();
    let report = tokio::task::spawn_blocking(move || run_tests(&bundle, executor.as_ref()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(reply(StatusCode::OK, &report))
}

async fn leaderboard_route(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    principal(&app, &headers)?;
    let rows = read(&app, &id, |p| Ok(leaderboard(&p.state().ledger)))?;
    Ok(reply(StatusCode::OK, &rows))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextBody {
    text: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct QuestionView {
    question_id: String,
    question: Question,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct AnswerView {
    answer_id: String,
    answer: Answer,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ThreadView {
    question_id: String,
    question: Question,
    answers: Vec<Answer>,
}

async fn post_question(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let who = worker(&app, &headers)?;
    let TextBody { text } = body(&bytes)?;
    let question = command(&app, &id, |p, now| Ok(p.post_question(&who, &text, now)?))?;
    Ok(reply(StatusCode::CREATED, &QuestionView { question_id: external_id(&id, question.id), question }))
}

async fn list_questions(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    principal(&app, &headers)?;
    let threads = read(&app, &id, |p| {
        Ok(p.threads()
            .into_iter()
            .map(|t| ThreadView { question_id: external_id(&id, t.question.id), question: t.question, answers: t.answers })
            .collect::<Vec<_>>())
    })?;
    Ok(reply(StatusCode::OK, &threads))
}

async fn post_answer(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let who = worker(&app, &headers)?;
    let (project, n) = split_id(&id, "q-")?;
    let TextBody { text } = body(&bytes)?;
    let answer = command(&app, project, |p, now| Ok(p.post_answer(&who, QuestionId(n), &text, now)?))?;
    Ok(reply(StatusCode::CREATED, &AnswerView { answer_id: external_id(project, answer.id), answer }))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct NotificationView {
    project_id: String,
    #[serde(flatten)]
    notification: Notification,
}

/// The worker's notifications from every project, oldest first within each
/// project.
async fn notifications(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let who = worker(&app, &headers)?;
    if who.0 != id {
        return Err(ApiError::forbidden("workers may only read their own notifications"));
    }
    let mut out = Vec::new();
    for project_id in app.0.store.ids() {
        read(&app, &project_id, |p| {
            out.extend(p.state().notifications.iter().filter(|n| n.recipient == who).map(|n| NotificationView {
                project_id: project_id.clone(),
                notification: n.clone(),
            }));
            Ok(())
        })?;
    }
    Ok(reply(StatusCode::OK, &out))
}

async fn resolve_issue(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((id, issue)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult {
    let caller = client(&app, &headers)?;
    let n = local_id(&issue, "issue-").ok_or_else(|| ApiError::not_found(&issue))?;
    let resolution: IssueResolution = body(&bytes)?;
    let events = command(&app, &id, |p, now| Ok(p.resolve_issue(&caller, IssueId(n), &resolution, now)?))?;
    Ok(reply(StatusCode::OK, &events))
}

async fn publish_route(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let caller = client(&app, &headers)?;
    let options: AssemblyOptions = if bytes.iter().all(u8::is_ascii_whitespace) {
        app.0.config.project.assembly.clone()
    } else {
        body(&bytes)?
    };
    let target = LocalDirectory(app.0.config.deploy_dir.join(&id));
    let publication = command(&app, &id, |p, now| {
        if p.state().client.as_ref() != Some(&caller) {
            return Err(ApiError::forbidden("only the project client may publish"));
        }
        let tree = assemble_project(p.state(), &options)?;
        Ok(publish(p, &caller, &tree, &target, now)?)
    })?;
    Ok(reply(StatusCode::OK, &publication))
}

#[derive(Serialize)]
struct Tutorial {
    name: &'static str,
    title: &'static str,
    body: &'static str,
}

const TUTORIALS: [Tutorial; 3] = [
    Tutorial {
        name: "welcome",
        title: "Welcome",
        body: "The dashboard lists the project description, every function and the microtasks \
               available right now. Fetch a microtask to start; you have 15 minutes to finish it \
               and will be warned shortly before time runs out.",
    },
    Tutorial {
        name: "implement-function-behavior",
        title: "Implement a function behavior",
        body: "Pick one behavior from the function description that is not yet implemented. \
               Write a test for it, run the tests, then edit the code until they pass. Calls to \
               functions that have no code yet need a stub: give the value the call should \
               return. You may also report an issue with the function, or mark it complete \
               when every behavior is implemented.",
    },
    Tutorial {
        name: "review",
        title: "Review a contribution",
        body: "Compare the submitted code and tests with the previous version and rate the work \
               from 1 to 5 stars. Ratings of 3 or fewer send the work back for revision and \
               need written feedback.",
    },
];

async fn tutorial_index() -> Response {
    let names: Vec<_> = TUTORIALS.iter().map(|t| t.name).collect();
    reply(StatusCode::OK, &names)
}

async fn tutorial(Path(name): Path<String>) -> ApiResult {
    let t = TUTORIALS.iter().find(|t| t.name == name).ok_or_else(|| ApiError::not_found(format!("tutorial {name}")))?;
    Ok(reply(StatusCode::OK, t))
}
