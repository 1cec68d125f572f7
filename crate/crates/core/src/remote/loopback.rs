//! A minimal local server speaking the scoring protocol.
//!
//! [`LoopbackServer::for_model`] puts an in-process [`ScoringBackend`] behind
//! HTTP so the remote path can be checked against direct scoring. Tests use
//! [`LoopbackServer::with_handler`] to script arbitrary responses.

use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Response, Server};

use super::{Payload, ScoreMode, ScoreRequest, ScoreResponse, SCORE_PATH};
use crate::error::{Error, Result};
use crate::lm::{NGramModel, ScoringBackend};

/// What a handler sees of an incoming request.
#[derive(Debug, Clone)]
pub struct LoopbackRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

pub struct LoopbackServer {
    server: Arc<Server>,
    url: String,
    worker: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Serve requests with `handler`, which returns `(status, body)`.
    pub fn with_handler<F>(handler: F) -> Result<Self>
    where
        F: Fn(&LoopbackRequest) -> (u16, String) + Send + 'static,
    {
        let server =
            Server::http("127.0.0.1:0").map_err(|e| Error::Config(format!("cannot bind loopback server: {e}")))?;
        let addr =
            server.server_addr().to_ip().ok_or_else(|| Error::Config("loopback server has no IP address".into()))?;
        let server = Arc::new(server);
        let srv = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for mut rq in srv.incoming_requests() {
                let mut body = String::new();
                let _ = rq.as_reader().read_to_string(&mut body);
                let authorization =
                    rq.headers().iter().find(|h| h.field.equiv("Authorization")).map(|h| h.value.as_str().to_string());
                let req = LoopbackRequest { path: rq.url().to_string(), authorization, body };
                let (status, text) =
                    if *rq.method() != Method::Post { (405, "method not allowed".to_string()) } else { handler(&req) };
                let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
                let _ = rq.respond(Response::from_string(text).with_status_code(status).with_header(header));
            }
        });
        Ok(LoopbackServer { server, url: format!("http://{addr}"), worker: Some(worker) })
    }

    /// Expose `model` over the scoring protocol. Text mode tokenizes on
    /// whitespace with the model vocabulary.
    pub fn for_model(model: Arc<NGramModel>) -> Result<Self> {
        Self::with_handler(move |req| handle_score(&model, req))
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_error(status: u16, message: impl std::fmt::Display) -> (u16, String) {
    (status, serde_json::json!({ "error": message.to_string() }).to_string())
}

fn handle_score(model: &NGramModel, req: &LoopbackRequest) -> (u16, String) {
    if req.path != SCORE_PATH {
        return json_error(404, format!("unknown path {}", req.path));
    }
    let request: ScoreRequest = match serde_json::from_str(&req.body) {
        Ok(r) => r,
        Err(e) => return json_error(400, e),
    };
    let tokens = |p: &Payload| -> Result<Vec<u32>> {
        match (request.mode, p) {
            (ScoreMode::TokenIds, Payload::Tokens(t)) => Ok(t.clone()),
            (ScoreMode::Text, Payload::Text(s)) => model.vocab().encode(s).map(|t| t.into_inner()),
            _ => Err(Error::invalid("payload type does not match mode")),
        }
    };
    let scored = tokens(&request.context).and_then(|ctx| {
        let cont = tokens(&request.continuation)?;
        if cont.is_empty() {
            return Err(Error::invalid("empty continuation"));
        }
        model.continuation_logprobs(&ctx, &cont)
    });
    match scored {
        Ok(logprobs) => {
            let resp = ScoreResponse { model: model.model_id().to_string(), logprobs };
            (200, serde_json::to_string(&resp).expect("response serializes"))
        }
        Err(e) => json_error(400, e),
    }
}
