//! Serves a simulator spec over the executor protocol.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use formprobe_core::constraint::Bindings;
use formprobe_core::simulator::FormSpec;
use formprobe_core::submission::Page;
use tiny_http::{Header, Method, Response, Server};

use crate::protocol::{Action, ErrorKind, ErrorResponse, ExecutorRequest, ExecutorResponse};

const WORKERS: usize = 4;

#[derive(Debug, thiserror::Error)]
#[error("cannot listen on {addr}: {message}")]
pub struct BindError {
    pub addr: String,
    pub message: String,
}

#[derive(Default)]
struct Session {
    values: Bindings,
    page: Option<Page>,
}

struct State {
    spec: Arc<FormSpec>,
    sessions: Mutex<HashMap<String, Session>>,
}

type Reply = Result<ExecutorResponse, (u16, ErrorResponse)>;

fn err(status: u16, kind: ErrorKind, error: impl Into<String>) -> (u16, ErrorResponse) {
    (status, ErrorResponse { kind, error: error.into() })
}

impl State {
    fn handle(&self, req: ExecutorRequest) -> Reply {
        let key = req.session.unwrap_or_default();
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let session = sessions.entry(key).or_default();
        let spec = &self.spec;
        match req.action {
            Action::Navigate => {
                let url = req.target.unwrap_or_default();
                if url != spec.url() {
                    return Err(err(404, ErrorKind::Navigation, format!("no form at {url}")));
                }
                session.values = Bindings::default();
                let page = Page { url, html: spec.render_form(&session.values, None) };
                session.page = Some(page.clone());
                Ok(ExecutorResponse { html: page.html, url: page.url })
            }
            Action::Fill => {
                let page = session.page.clone().ok_or_else(|| err(409, ErrorKind::NoPage, "no page loaded"))?;
                let field = req.target.unwrap_or_default();
                if spec.field(&field).is_none() {
                    return Err(err(404, ErrorKind::UnknownField, field));
                }
                session.values.set(field, req.value.unwrap_or_default());
                Ok(ExecutorResponse { html: page.html, url: page.url })
            }
            Action::Submit => {
                if session.page.is_none() {
                    return Err(err(409, ErrorKind::NoPage, "no page loaded"));
                }
                let r = spec.handle_submission(&session.values);
                session.page = Some(Page { url: r.url.clone(), html: r.html.clone() });
                Ok(ExecutorResponse { html: r.html, url: r.url })
            }
            Action::Page => session
                .page
                .clone()
                .map(|p| ExecutorResponse { html: p.html, url: p.url })
                .ok_or_else(|| err(409, ErrorKind::NoPage, "no page loaded")),
        }
    }
}

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn serve_one(state: &State, mut request: tiny_http::Request) {
    let reply = if *request.method() != Method::Post {
        Err(err(405, ErrorKind::BadRequest, "POST a JSON action"))
    } else {
        let mut body = String::new();
        match request.as_reader().read_to_string(&mut body) {
            Err(e) => Err(err(400, ErrorKind::BadRequest, e.to_string())),
            Ok(_) => match serde_json::from_str::<ExecutorRequest>(&body) {
                Err(e) => Err(err(400, ErrorKind::BadRequest, e.to_string())),
                Ok(req) => state.handle(req),
            },
        }
    };
    let response = match reply {
        Ok(r) => json_response(200, serde_json::to_string(&r).expect("serializable")),
        Err((status, e)) => json_response(status, serde_json::to_string(&e).expect("serializable")),
    };
    // A client that hung up is not our problem.
    let _ = request.respond(response);
}

/// A listening simulator. Dropping the handle stops it.
pub struct SimServer {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl SimServer {
    pub fn start(spec: Arc<FormSpec>, addr: &str) -> Result<SimServer, BindError> {
        let server = Server::http(addr).map_err(|e| BindError { addr: addr.into(), message: e.to_string() })?;
        let server = Arc::new(server);
        let state = Arc::new(State { spec, sessions: Mutex::new(HashMap::new()) });
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let state = Arc::clone(&state);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        serve_one(&state, request);
                    }
                })
            })
            .collect();
        Ok(SimServer { server, workers })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.server.server_addr().to_ip()
    }

    /// Endpoint URL for a remote executor.
    pub fn endpoint(&self) -> String {
        match self.local_addr() {
            Some(a) => format!("http://{a}/"),
            None => String::new(),
        }
    }

    /// Blocks until the workers exit.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
