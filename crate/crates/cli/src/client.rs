//! Task operations against either the local store or a workflow service.

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use catchrelease_core::archive::Archive;
use catchrelease_core::workflow::{
    CollectionTask, Decision, LedgerEntry, PaymentRequest, ResultKind, ResultReceipt, ReviewItem,
};
use catchrelease_service::ErrorBody;

use crate::Failure;

pub trait TaskBackend {
    fn create(&self, taxon: &str) -> Result<CollectionTask, Failure>;
    fn tasks(&self) -> Result<Vec<CollectionTask>, Failure>;
    fn task(&self, id: &str) -> Result<CollectionTask, Failure>;
    fn advance(&self, id: &str, to: u8, note: &str) -> Result<CollectionTask, Failure>;
    fn link(&self, id: &str, video_id: &str) -> Result<CollectionTask, Failure>;
    fn pay(&self, id: &str, req: &PaymentRequest) -> Result<LedgerEntry, Failure>;
    fn ledger(&self, id: Option<&str>) -> Result<Vec<LedgerEntry>, Failure>;
    fn attach(&self, id: &str, kind: ResultKind, doc: Vec<u8>) -> Result<ResultReceipt, Failure>;
    fn reviews(&self, unresolved: bool) -> Result<Vec<ReviewItem>, Failure>;
    fn resolve(&self, item_id: &str, d: Decision) -> Result<ReviewItem, Failure>;
}

pub struct Local<'a> {
    pub archive: &'a Archive,
    pub actor: String,
}

impl TaskBackend for Local<'_> {
    fn create(&self, taxon: &str) -> Result<CollectionTask, Failure> {
        Ok(self.archive.workflow().create_task(taxon, &self.actor)?)
    }

    fn tasks(&self) -> Result<Vec<CollectionTask>, Failure> {
        Ok(self.archive.workflow().tasks())
    }

    fn task(&self, id: &str) -> Result<CollectionTask, Failure> {
        Ok(self.archive.workflow().task(id)?)
    }

    fn advance(&self, id: &str, to: u8, note: &str) -> Result<CollectionTask, Failure> {
        Ok(self.archive.advance(id, to, &self.actor, note)?)
    }

    fn link(&self, id: &str, video_id: &str) -> Result<CollectionTask, Failure> {
        let v = self.archive.video(video_id)?;
        Ok(self.archive.workflow().link_video(id, &v.video_id, &self.actor)?)
    }

    fn pay(&self, id: &str, req: &PaymentRequest) -> Result<LedgerEntry, Failure> {
        Ok(self.archive.workflow().record_payment(id, req, &self.actor)?)
    }

    fn ledger(&self, id: Option<&str>) -> Result<Vec<LedgerEntry>, Failure> {
        if let Some(id) = id {
            self.archive.workflow().task(id)?;
        }
        Ok(self.archive.workflow().ledger(id))
    }

    fn attach(&self, id: &str, kind: ResultKind, doc: Vec<u8>) -> Result<ResultReceipt, Failure> {
        Ok(self.archive.attach_result(id, kind, &doc, &self.actor)?)
    }

    fn reviews(&self, unresolved: bool) -> Result<Vec<ReviewItem>, Failure> {
        Ok(self.archive.workflow().reviews(unresolved))
    }

    fn resolve(&self, item_id: &str, d: Decision) -> Result<ReviewItem, Failure> {
        Ok(self.archive.resolve_review(item_id, d, &self.actor)?)
    }
}

pub struct Remote {
    base: String,
    token: Option<String>,
    actor: String,
    http: Client,
}

impl Remote {
    pub fn new(endpoint: &str, token: Option<String>, actor: &str) -> Self {
        Self {
            base: endpoint.trim_end_matches('/').to_string(),
            token,
            actor: actor.to_string(),
            http: Client::new(),
        }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let mut rb = self
            .http
            .request(method, format!("{}{path}", self.base))
            .header("x-actor", &self.actor);
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        rb
    }

    fn send<T: DeserializeOwned>(&self, rb: RequestBuilder) -> Result<T, Failure> {
        let resp = rb
            .send()
            .map_err(|e| Failure::new("ServiceUnreachable", format!("{}: {e}", self.base)))?;
        let status = resp.status();
        let body = resp
            .bytes()
            .map_err(|e| Failure::new("ServiceUnreachable", e.to_string()))?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorBody>(&body) {
                Ok(e) => Failure::new(&e.code, e.message),
                Err(_) => Failure::new("ServiceError", format!("HTTP {status}: {}", String::from_utf8_lossy(&body))),
            });
        }
        serde_json::from_slice(&body).map_err(|e| Failure::new("ServiceError", format!("unexpected response: {e}")))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, Failure> {
        self.send(self.request(Method::GET, path))
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: Value) -> Result<T, Failure> {
        self.send(self.request(Method::POST, path).json(&body))
    }
}

fn kind_name(kind: ResultKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl TaskBackend for Remote {
    fn create(&self, taxon: &str) -> Result<CollectionTask, Failure> {
        self.post("/tasks", json!({ "target_taxon": taxon }))
    }

    fn tasks(&self) -> Result<Vec<CollectionTask>, Failure> {
        self.get("/tasks")
    }

    fn task(&self, id: &str) -> Result<CollectionTask, Failure> {
        self.get(&format!("/tasks/{id}"))
    }

    fn advance(&self, id: &str, to: u8, note: &str) -> Result<CollectionTask, Failure> {
        self.post(&format!("/tasks/{id}/advance"), json!({ "to_state": to, "note": note }))
    }

    fn link(&self, id: &str, video_id: &str) -> Result<CollectionTask, Failure> {
        self.post(&format!("/tasks/{id}/videos"), json!({ "video_id": video_id }))
    }

    fn pay(&self, id: &str, req: &PaymentRequest) -> Result<LedgerEntry, Failure> {
        self.post(
            &format!("/tasks/{id}/payments"),
            json!({
                "harvester_id": req.harvester_id,
                "amount_usd": req.amount_usd.to_string(),
                "fx_rate": req.fx_rate.to_string(),
                "confirmation_ref": req.confirmation_ref,
            }),
        )
    }

    fn ledger(&self, id: Option<&str>) -> Result<Vec<LedgerEntry>, Failure> {
        match id {
            Some(id) => self.get(&format!("/tasks/{id}/payments")),
            None => {
                let mut all = Vec::new();
                for t in self.tasks()? {
                    all.extend(self.ledger(Some(&t.task_id))?);
                }
                all.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
                Ok(all)
            }
        }
    }

    fn attach(&self, id: &str, kind: ResultKind, doc: Vec<u8>) -> Result<ResultReceipt, Failure> {
        let rb = self
            .request(Method::POST, &format!("/tasks/{id}/results?kind={}", kind_name(kind)))
            .header("content-type", "application/octet-stream")
            .body(doc);
        self.send(rb)
    }

    fn reviews(&self, unresolved: bool) -> Result<Vec<ReviewItem>, Failure> {
        self.get(if unresolved { "/review?state=unresolved" } else { "/review?state=all" })
    }

    fn resolve(&self, item_id: &str, d: Decision) -> Result<ReviewItem, Failure> {
        let body = serde_json::to_value(&d).map_err(|e| Failure::new("BadRequest", e.to_string()))?;
        self.post(&format!("/review/{item_id}/resolve"), body)
    }
}
