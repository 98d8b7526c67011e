use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use secrisk_core::delphi::{
    ConsensusReport, DelphiSession, Estimate, EstimateSet, MissingCell, QuantityRef, RoundStatus, SessionState,
};
use secrisk_core::model::ImpactMatrix;
use secrisk_core::registry::{
    AssessmentInputs, AssessmentSnapshot, CountermeasureCatalog, DocKind, Document, EstimatesDocument,
    OrganizationProfile, RiskRegister, SessionDocument, TreatmentInputs,
};
use secrisk_core::report::{DisplayedEvaluation, RoundingMode};
use secrisk_core::treatment::{OptimizeMode, PlanEvaluation, ReductionMatrix, TreatmentContext};
use serde::{Deserialize, Serialize};

use crate::config::Role;
use crate::envelope::{created, ok, parse_body, respond, ApiError, ApiResult, ErrorCode};
use crate::state::{AppState, Caller, Ctx, SessionSlot, StatusEvent, StoredSession};

pub const API_VERSION: &str = "v1";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

const ANY: &[Role] = &[Role::Moderator, Role::Participant, Role::Viewer];
const MODERATOR: &[Role] = &[Role::Moderator];
const PARTICIPANT: &[Role] = &[Role::Participant];

/// `(method, path, roles)` for every endpoint, as served by `/v1/schema`.
pub const ENDPOINTS: &[(&str, &str, &str)] = &[
    ("GET", "/v1/health", "none"),
    ("GET", "/v1/schema", "none"),
    ("GET", "/v1/profiles", "any"),
    ("GET", "/v1/profiles/{key}", "any"),
    ("PUT", "/v1/profiles/{key}", "moderator"),
    ("DELETE", "/v1/profiles/{key}", "moderator"),
    ("GET", "/v1/registers", "any"),
    ("GET", "/v1/registers/{key}", "any"),
    ("PUT", "/v1/registers/{key}", "moderator"),
    ("DELETE", "/v1/registers/{key}", "moderator"),
    ("GET", "/v1/catalogs", "any"),
    ("GET", "/v1/catalogs/{key}", "any"),
    ("PUT", "/v1/catalogs/{key}", "moderator"),
    ("DELETE", "/v1/catalogs/{key}", "moderator"),
    ("GET", "/v1/sessions", "any"),
    ("POST", "/v1/sessions", "moderator"),
    ("GET", "/v1/sessions/{id}", "any (role-scoped)"),
    ("GET", "/v1/sessions/{id}/status?since={seq}&timeout_ms={ms}", "any"),
    ("POST", "/v1/sessions/{id}/rounds", "session moderator"),
    ("POST", "/v1/sessions/{id}/rounds/{n}/close", "session moderator"),
    ("GET", "/v1/sessions/{id}/rounds/{n}/report", "any"),
    ("GET", "/v1/sessions/{id}/rounds/{n}/estimates", "session moderator"),
    ("POST", "/v1/sessions/{id}/estimates", "participant (own estimates, Idempotency-Key)"),
    ("POST", "/v1/sessions/{id}/estimates/confirm", "participant (own estimates)"),
    ("POST", "/v1/sessions/{id}/finalize", "session moderator"),
    ("GET", "/v1/assessments", "any"),
    ("POST", "/v1/assessments", "moderator"),
    ("GET", "/v1/assessments/{id}", "any"),
    ("POST", "/v1/treatment/evaluate", "any"),
    ("POST", "/v1/treatment/optimize", "any"),
    ("POST", "/v1/treatment/what-if", "any"),
    ("POST", "/v1/monitoring/diff", "any"),
];

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/profiles", get(list_docs::<Profiles>))
        .route("/profiles/{key}", get(get_doc::<Profiles>).put(put_doc::<Profiles>).delete(delete_doc::<Profiles>))
        .route("/registers", get(list_docs::<Registers>))
        .route("/registers/{key}", get(get_doc::<Registers>).put(put_doc::<Registers>).delete(delete_doc::<Registers>))
        .route("/catalogs", get(list_docs::<Catalogs>))
        .route("/catalogs/{key}", get(get_doc::<Catalogs>).put(put_doc::<Catalogs>).delete(delete_doc::<Catalogs>))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(session_view))
        .route("/sessions/{id}/status", get(session_status))
        .route("/sessions/{id}/rounds", post(open_round))
        .route("/sessions/{id}/rounds/{n}/close", post(close_round))
        .route("/sessions/{id}/rounds/{n}/report", get(round_report))
        .route("/sessions/{id}/rounds/{n}/estimates", get(raw_estimates))
        .route("/sessions/{id}/estimates", post(submit_estimate))
        .route("/sessions/{id}/estimates/confirm", post(confirm_estimate))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/assessments", get(list_assessments).post(run_assessment))
        .route("/assessments/{id}", get(get_assessment))
        .route("/treatment/evaluate", post(treatment_evaluate))
        .route("/treatment/optimize", post(treatment_optimize))
        .route("/treatment/what-if", post(treatment_what_if))
        .route("/monitoring/diff", post(monitoring_diff))
        .method_not_allowed_fallback(method_not_allowed);
    Router::new()
        .nest(&format!("/{API_VERSION}"), v1)
        .fallback(unknown_route)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

async fn unknown_route(ctx: Ctx) -> Response {
    respond(&ctx.request_id, Err(ApiError::not_found("no such endpoint")))
}

async fn method_not_allowed(ctx: Ctx) -> Response {
    respond(&ctx.request_id, Err(ApiError::new(ErrorCode::MalformedRequest, "method not allowed on this endpoint")))
}

async fn health(ctx: Ctx) -> Response {
    respond(&ctx.request_id, ok(&serde_json::json!({ "status": "ok", "version": API_VERSION })))
}

#[derive(Serialize)]
struct EndpointInfo {
    method: &'static str,
    path: &'static str,
    roles: &'static str,
}

#[derive(Serialize)]
struct Schema {
    version: &'static str,
    formats: BTreeMap<&'static str, &'static str>,
    rounding_modes: [RoundingMode; 2],
    optimize_methods: [OptimizeMode; 2],
    roles: [Role; 3],
    error_codes: Vec<ErrorCode>,
    endpoints: Vec<EndpointInfo>,
}

async fn schema(ctx: Ctx) -> Response {
    let schema = Schema {
        version: API_VERSION,
        formats: BTreeMap::from([
            ("profile", OrganizationProfile::FORMAT),
            ("register", RiskRegister::FORMAT),
            ("catalog", CountermeasureCatalog::FORMAT),
            ("session", SessionDocument::FORMAT),
            ("estimates", EstimatesDocument::FORMAT),
            ("snapshot", AssessmentSnapshot::FORMAT),
        ]),
        rounding_modes: [RoundingMode::Full, RoundingMode::PaperCompat],
        optimize_methods: [OptimizeMode::Exact, OptimizeMode::Greedy],
        roles: [Role::Moderator, Role::Participant, Role::Viewer],
        error_codes: ErrorCode::ALL.to_vec(),
        endpoints: ENDPOINTS.iter().map(|&(method, path, roles)| EndpointInfo { method, path, roles }).collect(),
    };
    respond(&ctx.request_id, ok(&schema))
}

// ---------------------------------------------------------------------------
// stored documents

trait Kind: Send + Sync + 'static {
    const KIND: DocKind;
    type Doc: Document + Send + 'static;
}

struct Profiles;
struct Registers;
struct Catalogs;

impl Kind for Profiles {
    const KIND: DocKind = DocKind::Profile;
    type Doc = OrganizationProfile;
}
impl Kind for Registers {
    const KIND: DocKind = DocKind::Register;
    type Doc = RiskRegister;
}
impl Kind for Catalogs {
    const KIND: DocKind = DocKind::Catalog;
    type Doc = CountermeasureCatalog;
}

#[derive(Serialize)]
struct StoredDoc<T> {
    key: String,
    version: u64,
    document: T,
}

/// `If-Match: n` requires version n; `If-None-Match: *` requires absence.
fn precondition(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    if let Some(v) = headers.get(axum::http::header::IF_MATCH) {
        let text = v.to_str().map_err(|_| ApiError::malformed("If-Match is not text"))?;
        let n = text
            .trim()
            .trim_start_matches("W/")
            .trim_matches('"')
            .parse::<u64>()
            .map_err(|_| ApiError::malformed(format!("If-Match `{text}` is not a version number")))?;
        return Ok(Some(n));
    }
    match headers.get(axum::http::header::IF_NONE_MATCH) {
        Some(v) if v.as_bytes() == b"*" => Ok(Some(0)),
        Some(_) => Err(ApiError::malformed("only `If-None-Match: *` is supported")),
        None => Ok(None),
    }
}

/// Syntax errors are malformed requests; everything else is validation.
fn parse_document<T: Document>(body: &[u8]) -> Result<T, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::malformed("body is not UTF-8"))?;
    serde_json::from_str::<serde::de::IgnoredAny>(text).map_err(|e| ApiError::malformed(e.to_string()))?;
    Ok(T::from_json(text)?)
}

async fn list_docs<K: Kind>(ctx: Ctx, State(app): State<AppState>) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        ok(&app.store().list(K::KIND)?)
    })();
    respond(&ctx.request_id, result)
}

async fn get_doc<K: Kind>(ctx: Ctx, State(app): State<AppState>, Path(key): Path<String>) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        let v = app.store().get_document::<K::Doc>(K::KIND, &key)?;
        ok(&StoredDoc { key: key.clone(), version: v.version, document: v.document })
    })();
    respond(&ctx.request_id, result)
}

async fn put_doc<K: Kind>(
    ctx: Ctx,
    State(app): State<AppState>,
    Path(key): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let result = async {
        ctx.require(MODERATOR)?;
        let expected = precondition(&headers)?;
        let doc = parse_document::<K::Doc>(&body)?;
        let _guard = app.lock_key(K::KIND, &key).await;
        let version = app.store().put(K::KIND, &key, &doc, expected)?;
        let reply = StoredDoc { key: key.clone(), version, document: doc };
        if version == 1 {
            created(&reply)
        } else {
            ok(&reply)
        }
    }
    .await;
    respond(&ctx.request_id, result)
}

async fn delete_doc<K: Kind>(
    ctx: Ctx,
    State(app): State<AppState>,
    Path(key): Path<String>,
    headers: HeaderMap,
) -> Response {
    let result = async {
        ctx.require(MODERATOR)?;
        let expected = precondition(&headers)?;
        let _guard = app.lock_key(K::KIND, &key).await;
        app.store().delete(K::KIND, &key, expected)?;
        ok(&serde_json::json!({ "key": key, "deleted": true }))
    }
    .await;
    respond(&ctx.request_id, result)
}

// ---------------------------------------------------------------------------
// sessions

enum Access<'a> {
    Moderator,
    Participant(&'a str),
    Viewer,
}

fn access<'a>(caller: &'a Caller, session: &DelphiSession) -> Result<Access<'a>, ApiError> {
    match caller.role {
        Role::Moderator if caller.handle == session.moderator() => Ok(Access::Moderator),
        Role::Moderator | Role::Viewer => Ok(Access::Viewer),
        Role::Participant if session.is_participant(&caller.handle) => Ok(Access::Participant(&caller.handle)),
        Role::Participant => Err(ApiError::forbidden(format!("`{}` is not on this session's roster", caller.handle))),
    }
}

fn require_session_moderator(caller: &Caller, session: &DelphiSession) -> Result<(), ApiError> {
    match access(caller, session)? {
        Access::Moderator => Ok(()),
        _ => Err(ApiError::forbidden("only this session's moderator may do this")),
    }
}

/// Role-scoped projection of a session.
#[derive(Serialize)]
struct SessionView<'a> {
    session_id: &'a str,
    state: SessionState,
    seq: u64,
    rounds: u32,
    active_round: Option<u32>,
    max_rounds: u32,
    consensus_threshold: f64,
    agreement_band: f64,
    quantities: &'a [QuantityRef],
    participant_count: usize,
    missing_count: usize,
    reports: Vec<&'a ConsensusReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a EstimateSet>,
    /// Moderator only.
    #[serde(skip_serializing_if = "Option::is_none")]
    roster: Option<&'a [String]>,
    /// Moderator only.
    #[serde(skip_serializing_if = "Option::is_none")]
    missing: Option<Vec<MissingCell>>,
    /// Participant only: the caller's own cells in the latest round.
    #[serde(skip_serializing_if = "Option::is_none")]
    own_estimates: Option<BTreeMap<QuantityRef, Estimate>>,
}

fn view<'a>(session: &'a DelphiSession, access: &Access<'_>) -> Result<SessionView<'a>, ApiError> {
    let missing = session.missing_cells();
    let active_round = session.current_round().filter(|r| r.status == RoundStatus::Collecting).map(|r| r.number);
    let mut reports = Vec::new();
    for n in 1..=session.round_count() {
        if let Some(r) = session.report(n)? {
            reports.push(r);
        }
    }
    let (roster, missing_detail, own) = match access {
        Access::Moderator => (Some(session.roster()), Some(missing.clone()), None),
        Access::Participant(handle) => (None, None, Some(session.own_estimates(handle)?)),
        Access::Viewer => (None, None, None),
    };
    Ok(SessionView {
        session_id: session.id(),
        state: session.state(),
        seq: StatusEvent::of(session).seq,
        rounds: session.round_count(),
        active_round,
        max_rounds: session.max_rounds(),
        consensus_threshold: session.threshold(),
        agreement_band: session.band(),
        quantities: session.quantities(),
        participant_count: session.roster().len(),
        missing_count: missing.len(),
        reports,
        result: session.result(),
        roster,
        missing: missing_detail,
        own_estimates: own,
    })
}

async fn list_sessions(ctx: Ctx, State(app): State<AppState>) -> Response {
    let result = match ctx.require(ANY) {
        Ok(_) => ok(&app.session_ids().await),
        Err(e) => Err(e),
    };
    respond(&ctx.request_id, result)
}

async fn create_session(ctx: Ctx, State(app): State<AppState>, body: Bytes) -> Response {
    let result = async {
        let caller = ctx.require(MODERATOR)?;
        let doc = parse_document::<SessionDocument>(&body)?;
        if doc.definition.moderator != caller.handle {
            return Err(ApiError::forbidden("a session's moderator must be the caller"));
        }
        let session = DelphiSession::create(doc.definition)?;
        let slot = app.insert_session(session).await?;
        let data = slot.data.lock().await;
        created(&view(&data.stored.session, &Access::Moderator)?)
    }
    .await;
    respond(&ctx.request_id, result)
}

async fn session_view(ctx: Ctx, State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let result = async {
        let caller = ctx.require(ANY)?;
        let slot = app.session(&id).await?;
        let data = slot.data.lock().await;
        let session = &data.stored.session;
        let access = access(caller, session)?;
        ok(&view(session, &access)?)
    }
    .await;
    respond(&ctx.request_id, result)
}

#[derive(Debug, Deserialize)]
struct StatusQuery {
    #[serde(default)]
    since: Option<u64>,
    #[serde(default)]
    timeout_ms: Option<u64>,
}

/// Long-poll: answers as soon as the sequence number passes `since`, or with
/// the unchanged status once the timeout expires.
async fn session_status(
    ctx: Ctx,
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<StatusQuery>, axum::extract::rejection::QueryRejection>,
) -> Response {
    let result = async {
        let caller = ctx.require(ANY)?;
        let Query(query) = query.map_err(|e| ApiError::malformed(e.body_text()))?;
        let slot = app.session(&id).await?;
        let mut rx = slot.status.subscribe();
        {
            let data = slot.data.lock().await;
            access(caller, &data.stored.session)?;
        }
        if let Some(since) = query.since {
            let limit = app.long_poll();
            let wait = query.timeout_ms.map(std::time::Duration::from_millis).unwrap_or(limit).min(limit);
            let _ = tokio::time::timeout(wait, rx.wait_for(|e| e.seq > since)).await;
        }
        let event = *rx.borrow();
        ok(&event)
    }
    .await;
    respond(&ctx.request_id, result)
}

/// Applies `change` to a copy of the session, persists it, then swaps it in.
async fn mutate<T>(
    app: &AppState,
    slot: &SessionSlot,
    change: impl FnOnce(&mut StoredSession) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let mut data = slot.data.lock().await;
    let mut next = data.stored.clone();
    let out = change(&mut next)?;
    if next != data.stored {
        app.persist(slot, &mut data, next)?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct RoundOpened {
    round: u32,
    status: StatusEvent,
}

async fn open_round(ctx: Ctx, State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let result = async {
        let caller = ctx.require(MODERATOR)?;
        let slot = app.session(&id).await?;
        let round = mutate(&app, &slot, |s| {
            require_session_moderator(caller, &s.session)?;
            Ok(s.session.open_round()?)
        })
        .await?;
        let status = *slot.status.borrow();
        created(&RoundOpened { round, status })
    }
    .await;
    respond(&ctx.request_id, result)
}

async fn close_round(ctx: Ctx, State(app): State<AppState>, Path((id, n)): Path<(String, u32)>) -> Response {
    let result = async {
        let caller = ctx.require(MODERATOR)?;
        let slot = app.session(&id).await?;
        let report = mutate(&app, &slot, |s| {
            require_session_moderator(caller, &s.session)?;
            let active = s.session.current_round().filter(|r| r.status == RoundStatus::Collecting).map(|r| r.number);
            match active {
                Some(a) if a == n => Ok(s.session.close_round()?),
                _ if n >= 1 && n <= s.session.round_count() => {
                    Err(ApiError::conflict(format!("round {n} is already closed")))
                }
                _ => Err(ApiError::not_found(format!("round {n} does not exist"))),
            }
        })
        .await?;
        ok(&report)
    }
    .await;
    respond(&ctx.request_id, result)
}

async fn round_report(ctx: Ctx, State(app): State<AppState>, Path((id, n)): Path<(String, u32)>) -> Response {
    let result = async {
        let caller = ctx.require(ANY)?;
        let slot = app.session(&id).await?;
        let data = slot.data.lock().await;
        access(caller, &data.stored.session)?;
        match data.stored.session.report(n)? {
            Some(report) => ok(report),
            None => Err(ApiError::conflict(format!("round {n} is still collecting estimates"))),
        }
    }
    .await;
    respond(&ctx.request_id, result)
}

async fn raw_estimates(ctx: Ctx, State(app): State<AppState>, Path((id, n)): Path<(String, u32)>) -> Response {
    let result = async {
        let caller = ctx.require(ANY)?;
        let slot = app.session(&id).await?;
        let data = slot.data.lock().await;
        let session = &data.stored.session;
        match access(caller, session)? {
            Access::Moderator => ok(session.raw_estimates(n)?),
            _ => Err(ApiError::forbidden("raw estimates are visible to the session moderator only")),
        }
    }
    .await;
    respond(&ctx.request_id, result)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitRequest {
    quantity: QuantityRef,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfirmRequest {
    quantity: QuantityRef,
}

#[derive(Debug, Serialize)]
struct EstimateAccepted {
    round: u32,
    quantity: QuantityRef,
    value: f64,
}

fn idempotency_key(headers: &HeaderMap) -> Result<Option<String>, ApiError> {
    match headers.get(IDEMPOTENCY_HEADER) {
        None => Ok(None),
        Some(v) => {
            let key = v.to_str().map_err(|_| ApiError::malformed("Idempotency-Key is not text"))?.trim();
            if key.is_empty() || key.len() > 200 {
                return Err(ApiError::malformed("Idempotency-Key must be 1 to 200 characters"));
            }
            Ok(Some(key.to_string()))
        }
    }
}

async fn submit_estimate(
    ctx: Ctx,
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let result = async {
        let caller = ctx.require(PARTICIPANT)?;
        let key = idempotency_key(&headers)?;
        let req: SubmitRequest = parse_body(&body)?;
        let fingerprint = serde_json::to_string(&req).expect("request serializes");
        let slot = app.session(&id).await?;
        let payload = mutate(&app, &slot, |s| {
            let handle = match access(caller, &s.session)? {
                Access::Participant(h) => h,
                _ => return Err(ApiError::forbidden("only roster participants submit estimates")),
            };
            let reply_key = key.as_ref().map(|k| format!("{handle}\n{k}"));
            if let Some(prior) = reply_key.as_ref().and_then(|k| s.replies.get(k)) {
                return if prior.fingerprint == fingerprint {
                    Ok(prior.payload.clone())
                } else {
                    Err(ApiError::conflict("idempotency key was already used for a different estimate"))
                };
            }
            let round = s.session.submit_estimate(handle, &req.quantity, req.value)?;
            let accepted = EstimateAccepted { round, quantity: req.quantity.clone(), value: req.value };
            let payload = serde_json::to_value(&accepted).expect("reply serializes");
            if let Some(k) = reply_key {
                s.replies.insert(k, crate::state::IdempotentReply { fingerprint, payload: payload.clone() });
            }
            Ok(payload)
        })
        .await?;
        Ok((StatusCode::OK, payload))
    }
    .await;
    respond(&ctx.request_id, result)
}

async fn confirm_estimate(ctx: Ctx, State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let result = async {
        let caller = ctx.require(PARTICIPANT)?;
        let req: ConfirmRequest = parse_body(&body)?;
        let slot = app.session(&id).await?;
        let accepted = mutate(&app, &slot, |s| {
            let handle = match access(caller, &s.session)? {
                Access::Participant(h) => h,
                _ => return Err(ApiError::forbidden("only roster participants confirm estimates")),
            };
            let value = s.session.confirm_estimate(handle, &req.quantity)?;
            Ok(EstimateAccepted { round: s.session.round_count(), quantity: req.quantity.clone(), value })
        })
        .await?;
        ok(&accepted)
    }
    .await;
    respond(&ctx.request_id, result)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinalizeRequest {
    #[serde(default)]
    force: bool,
    #[serde(default)]
    reason: Option<String>,
}

async fn finalize(ctx: Ctx, State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let result = async {
        let caller = ctx.require(MODERATOR)?;
        let req: FinalizeRequest =
            if body.iter().all(u8::is_ascii_whitespace) { FinalizeRequest::default() } else { parse_body(&body)? };
        let slot = app.session(&id).await?;
        let set = mutate(&app, &slot, |s| {
            require_session_moderator(caller, &s.session)?;
            if req.force {
                let reason = req.reason.as_deref().map(str::trim).filter(|r| !r.is_empty());
                let reason = reason.ok_or_else(|| ApiError::invalid("a forced finalization needs a `reason`"))?;
                Ok(s.session.force_finalize(&caller.handle, reason)?)
            } else {
                Ok(s.session.finalize(&caller.handle)?)
            }
        })
        .await?;
        app.store().put(DocKind::Estimates, &id, &EstimatesDocument::new(set.clone()), None)?;
        ok(&set)
    }
    .await;
    respond(&ctx.request_id, result)
}

// ---------------------------------------------------------------------------
// assessments, treatment, monitoring

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssessmentRequest {
    profile: String,
    register: String,
    /// Falls back to the register's embedded matrix.
    #[serde(default)]
    impacts: Option<ImpactMatrix>,
    #[serde(default)]
    alpha_override: Option<f64>,
    /// Supplies costs for countermeasures the treatment section leaves out.
    #[serde(default)]
    catalog: Option<String>,
    #[serde(default)]
    treatment: Option<TreatmentInputs>,
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn catalog_costs(app: &AppState, key: Option<&str>) -> Result<BTreeMap<String, f64>, ApiError> {
    match key {
        Some(k) => Ok(app.store().get_document::<CountermeasureCatalog>(DocKind::Catalog, k)?.document.costs()),
        None => Ok(BTreeMap::new()),
    }
}

async fn run_assessment(ctx: Ctx, State(app): State<AppState>, body: Bytes) -> Response {
    let result = (|| {
        ctx.require(MODERATOR)?;
        let req: AssessmentRequest = parse_body(&body)?;
        let profile = app.store().get_document::<OrganizationProfile>(DocKind::Profile, &req.profile)?;
        let register = app.store().get_document::<RiskRegister>(DocKind::Register, &req.register)?.document;
        if register.org_id != profile.document.org_id {
            return Err(ApiError::invalid(format!(
                "register belongs to `{}`, profile to `{}`",
                register.org_id, profile.document.org_id
            )));
        }
        let impacts = req
            .impacts
            .or(register.impacts)
            .ok_or_else(|| ApiError::invalid("impacts: the register has no impact matrix and none was supplied"))?;
        let treatment = match req.treatment {
            Some(mut t) => {
                for (id, cost) in catalog_costs(&app, req.catalog.as_deref())? {
                    t.costs.entry(id).or_insert(cost);
                }
                Some(t)
            }
            None => None,
        };
        let inputs = AssessmentInputs {
            objectives: profile.document.objectives,
            risks: register.risks,
            impacts,
            alpha: req.alpha_override.unwrap_or(profile.document.tolerance),
            treatment,
        };
        let snapshot = app.engine().assess(&profile.document.org_id, profile.version, inputs, timestamp())?;
        if app.store().version(DocKind::Snapshot, &snapshot.id)? != 0 {
            return ok(&app.store().snapshot(&snapshot.id)?);
        }
        app.store().record_snapshot(&snapshot)?;
        created(&snapshot)
    })();
    respond(&ctx.request_id, result)
}

async fn list_assessments(ctx: Ctx, State(app): State<AppState>) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        ok(&app.store().list(DocKind::Snapshot)?)
    })();
    respond(&ctx.request_id, result)
}

async fn get_assessment(ctx: Ctx, State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        ok(&app.store().snapshot(&id)?)
    })();
    respond(&ctx.request_id, result)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreatmentRequest {
    snapshot: String,
    /// Defaults to the snapshot's own reduction matrix.
    #[serde(default)]
    reductions: Option<ReductionMatrix>,
    #[serde(default)]
    catalog: Option<String>,
    #[serde(default)]
    costs: BTreeMap<String, f64>,
    #[serde(default)]
    plan: Vec<String>,
    #[serde(default)]
    toggle: Option<String>,
    #[serde(default)]
    method: Option<OptimizeMode>,
    #[serde(default)]
    mode: RoundingMode,
}

#[derive(Debug, Serialize)]
pub struct TreatmentReply {
    pub snapshot: String,
    pub evaluation: PlanEvaluation,
    pub display: DisplayedEvaluation,
}

fn treatment_context(app: &AppState, req: &TreatmentRequest) -> Result<TreatmentContext, ApiError> {
    let snapshot = app.store().snapshot(&req.snapshot)?;
    let stored = snapshot.inputs.treatment.as_ref();
    let reductions =
        req.reductions.clone().or_else(|| stored.map(|t| t.reductions.clone())).ok_or_else(|| {
            ApiError::invalid("reductions: the snapshot has no reduction matrix and none was supplied")
        })?;
    let mut costs = catalog_costs(app, req.catalog.as_deref())?;
    if let Some(t) = stored {
        costs.extend(t.costs.clone());
    }
    costs.extend(req.costs.clone());
    let levels = snapshot.results.levels.iter().map(|l| (l.risk.clone(), l.level)).collect();
    Ok(TreatmentContext::new(levels, reductions, costs, snapshot.alpha())?)
}

fn treatment_reply(app: &AppState, req: &TreatmentRequest, evaluation: PlanEvaluation) -> ApiResult {
    let display = app.engine().display(&evaluation, req.mode);
    ok(&TreatmentReply { snapshot: req.snapshot.clone(), evaluation, display })
}

async fn treatment_evaluate(ctx: Ctx, State(app): State<AppState>, body: Bytes) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        let req: TreatmentRequest = parse_body(&body)?;
        let ctx_ = treatment_context(&app, &req)?;
        let eval = app.engine().evaluate(&ctx_, &req.plan)?;
        treatment_reply(&app, &req, eval)
    })();
    respond(&ctx.request_id, result)
}

async fn treatment_optimize(ctx: Ctx, State(app): State<AppState>, body: Bytes) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        let req: TreatmentRequest = parse_body(&body)?;
        let method = req.method.ok_or_else(|| ApiError::invalid("method: required (exact or greedy)"))?;
        let ctx_ = treatment_context(&app, &req)?;
        let eval = app.engine().optimize(&ctx_, method)?;
        treatment_reply(&app, &req, eval)
    })();
    respond(&ctx.request_id, result)
}

async fn treatment_what_if(ctx: Ctx, State(app): State<AppState>, body: Bytes) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        let req: TreatmentRequest = parse_body(&body)?;
        let toggle = req.toggle.clone().ok_or_else(|| ApiError::invalid("toggle: required"))?;
        let ctx_ = treatment_context(&app, &req)?;
        let current = app.engine().evaluate(&ctx_, &req.plan)?;
        let eval = app.engine().what_if(&ctx_, &current, &toggle)?;
        treatment_reply(&app, &req, eval)
    })();
    respond(&ctx.request_id, result)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffRequest {
    from: String,
    to: String,
}

async fn monitoring_diff(ctx: Ctx, State(app): State<AppState>, body: Bytes) -> Response {
    let result = (|| {
        ctx.require(ANY)?;
        let req: DiffRequest = parse_body(&body)?;
        let from = app.store().snapshot(&req.from)?;
        let to = app.store().snapshot(&req.to)?;
        ok(&app.engine().diff(&from, &to)?)
    })();
    respond(&ctx.request_id, result)
}
