//! Fixture store and HTTP helpers shared by the service tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use reqwest::{Method, StatusCode};
use secrisk_core::registry::{
    parse_impact_matrix, parse_reduction_matrix, CountermeasureCatalog, DocKind, Document, OrganizationProfile,
    RiskRegister, SessionDocument, Store,
};
use secrisk_core::treatment::ReductionMatrix;
use secrisk_service::{RunningServer, ServiceConfig, TokenGrant};
use serde_json::{json, Value};

pub const MODERATOR: &str = "tok-moderator";
pub const VIEWER: &str = "tok-viewer";
pub const OUTSIDER: &str = "tok-outsider";

pub fn participant(n: usize) -> String {
    format!("tok-expert-{n}")
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/at")
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub struct Fixture {
    pub profile: OrganizationProfile,
    /// With the impact matrix embedded.
    pub register: RiskRegister,
    pub catalog: CountermeasureCatalog,
    pub reductions: ReductionMatrix,
    pub session: SessionDocument,
    pub round1: String,
}

pub fn at() -> Fixture {
    let profile = OrganizationProfile::from_json(&read("profile.json")).unwrap();
    let mut register = RiskRegister::from_json(&read("risks.json")).unwrap();
    register.impacts = Some(parse_impact_matrix(&read("impact.csv"), &profile, &register).unwrap());
    Fixture {
        catalog: CountermeasureCatalog::from_json(&read("catalog.json")).unwrap(),
        reductions: parse_reduction_matrix(&read("reductions.csv"), None, None).unwrap(),
        session: SessionDocument::from_json(&read("session.json")).unwrap(),
        round1: read("round1.csv"),
        profile,
        register,
    }
}

/// Writes the fixture profile, register and catalog under the key `at`.
pub fn seed(root: &Path) {
    let f = at();
    let store = Store::open(root).unwrap();
    store.put(DocKind::Profile, "at", &f.profile, Some(0)).unwrap();
    store.put(DocKind::Register, "at", &f.register, Some(0)).unwrap();
    store.put(DocKind::Catalog, "at", &f.catalog, Some(0)).unwrap();
}

pub fn config(root: &Path) -> ServiceConfig {
    let f = at();
    let mut config = ServiceConfig::new(root);
    config.bind = "127.0.0.1:0".parse().unwrap();
    config.long_poll_ms = 5_000;
    config.tokens.push(TokenGrant {
        token: MODERATOR.into(),
        role: secrisk_service::Role::Moderator,
        handle: f.session.definition.moderator.clone(),
    });
    config.tokens.push(TokenGrant {
        token: VIEWER.into(),
        role: secrisk_service::Role::Viewer,
        handle: "auditor".into(),
    });
    config.tokens.push(TokenGrant {
        token: OUTSIDER.into(),
        role: secrisk_service::Role::Participant,
        handle: "outsider".into(),
    });
    for (i, handle) in f.session.definition.roster.iter().enumerate() {
        config.tokens.push(TokenGrant {
            token: participant(i + 1),
            role: secrisk_service::Role::Participant,
            handle: handle.clone(),
        });
    }
    config
}

pub struct Client {
    http: reqwest::Client,
    pub base: String,
}

pub struct Reply {
    pub status: StatusCode,
    pub request_id: Option<String>,
    pub body: Value,
}

impl Reply {
    pub fn payload(&self) -> &Value {
        assert!(self.body.get("error").is_none(), "unexpected error: {}", self.body);
        &self.body["payload"]
    }

    pub fn code(&self) -> &str {
        self.body["error"]["code"].as_str().unwrap_or_else(|| panic!("expected an error, got {}", self.body))
    }
}

impl Client {
    pub fn new(server: &RunningServer) -> Self {
        Self { http: reqwest::Client::new(), base: server.base_url() }
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        self.call_with(method, path, token, body, &[]).await
    }

    pub async fn call_with(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Value>,
        headers: &[(&str, &str)],
    ) -> Reply {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b.to_string());
        }
        let resp = req.send().await.expect("request reaches the server");
        let status = resp.status();
        let request_id = resp.headers().get("x-request-id").map(|v| v.to_str().unwrap().to_string());
        let text = resp.text().await.unwrap();
        let body = serde_json::from_str(&text).unwrap_or_else(|_| panic!("non-JSON body: {text}"));
        Reply { status, request_id, body }
    }

    pub async fn get(&self, path: &str, token: &str) -> Reply {
        self.call(Method::GET, path, Some(token), None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Reply {
        self.call(Method::POST, path, Some(token), Some(body)).await
    }
}

/// Creates the fixture session through the API.
pub async fn create_session(client: &Client) -> Value {
    let doc = serde_json::to_value(&at().session).unwrap();
    let r = client.post("/sessions", MODERATOR, doc).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    r.payload().clone()
}

/// Submits every cell of the fixture's first round file.
pub async fn submit_round_file(client: &Client, session: &str) {
    let f = at();
    let mut lines = f.round1.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let idx = f.session.definition.roster.iter().position(|h| h == cells[0]).unwrap();
        let token = participant(idx + 1);
        for (q, v) in header[1..].iter().zip(&cells[1..]) {
            let value: f64 = v.parse().unwrap();
            let r = client
                .post(&format!("/sessions/{session}/estimates"), &token, json!({ "quantity": q, "value": value }))
                .await;
            assert_eq!(r.status, StatusCode::OK, "{}", r.body);
        }
    }
}
