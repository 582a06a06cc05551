//! A small in-memory pet store with planted defects, used as a fuzzing
//! target in tests and demos.

mod handler;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

pub use handler::{handle, MockState, Reply, SeededVuln, ROUTES};

const WORKERS: usize = 4;

/// OpenAPI document describing the mock API.
pub fn oas_document() -> &'static str {
    include_str!("openapi.yaml")
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("cannot bind mock server to {addr}: {reason}")]
    Bind { addr: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockOptions {
    /// Echoed by `/ping`; responses do not otherwise depend on it.
    pub seed: u64,
    /// Plant the defects. Off gives a well-behaved API.
    pub vulnerable: bool,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            seed: 0,
            vulnerable: true,
        }
    }
}

/// A running mock server. Dropping it shuts it down.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and waits for the workers to finish.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    /// Blocks until the server is shut down from elsewhere.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

const BIND_RETRY: Duration = Duration::from_secs(5);

/// Starts the mock on `127.0.0.1:port` (0 picks a free port) with a fresh
/// store. A fixed port that is still held by a just-stopped server is
/// retried for a few seconds.
pub fn serve(port: u16, options: MockOptions) -> Result<MockServer, MockError> {
    let addr = format!("127.0.0.1:{port}");
    let started = std::time::Instant::now();
    loop {
        match serve_on(&addr, options) {
            Err(_) if port != 0 && started.elapsed() < BIND_RETRY => {
                std::thread::sleep(Duration::from_millis(50))
            }
            other => return other,
        }
    }
}

/// Listener with Nagle disabled; accepted connections inherit the flag, so
/// multi-write responses are not held back waiting for an ACK.
fn listen(addr: &str) -> std::io::Result<std::net::TcpListener> {
    let addr: SocketAddr = addr
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let socket = socket2::Socket::new(
        socket2::Domain::for_address(addr),
        socket2::Type::STREAM,
        None,
    )?;
    socket.set_reuse_address(true)?;
    socket.set_nodelay(true)?;
    socket.bind(&addr.into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

pub fn serve_on(addr: &str, options: MockOptions) -> Result<MockServer, MockError> {
    let bind_err = |reason: String| MockError::Bind {
        addr: addr.to_string(),
        reason,
    };
    let listener = listen(addr).map_err(|e| bind_err(e.to_string()))?;
    let server =
        tiny_http::Server::from_listener(listener, None).map_err(|e| bind_err(e.to_string()))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| MockError::Bind {
            addr: addr.to_string(),
            reason: "not an IP listener".to_string(),
        })?;
    let server = Arc::new(server);
    let state = Arc::new(Mutex::new(MockState::new(options.seed, options.vulnerable)));
    let shutdown = Arc::new(AtomicBool::new(false));
    let workers = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            let shutdown = Arc::clone(&shutdown);
            std::thread::spawn(move || worker(&server, &state, &shutdown))
        })
        .collect();
    Ok(MockServer {
        addr: bound,
        shutdown,
        workers,
    })
}

fn worker(server: &tiny_http::Server, state: &Mutex<MockState>, shutdown: &AtomicBool) {
    while !shutdown.load(Ordering::SeqCst) {
        let mut request = match server.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(_) => break,
        };
        let mut raw = Vec::new();
        let _ = request.as_reader().read_to_end(&mut raw);
        let body = String::from_utf8_lossy(&raw);
        let reply = {
            let mut st = state.lock().unwrap_or_else(|p| p.into_inner());
            handle(&mut st, request.method().as_str(), request.url(), &body)
        };
        let header = tiny_http::Header::from_bytes("Content-Type", reply.content_type)
            .expect("static header is valid");
        let response = tiny_http::Response::from_string(reply.body)
            .with_status_code(reply.status)
            .with_header(header);
        let _ = request.respond(response);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oas::{parse_oas, path_placeholders, DocumentFormat};
    use crate::value::DataType;
    use std::collections::BTreeSet;

    #[test]
    fn document_parses_cleanly() {
        let spec = parse_oas(oas_document(), DocumentFormat::Yaml).unwrap();
        assert!(spec.functions.len() >= 12);
        assert!(spec.warnings.is_empty(), "{:?}", spec.warnings);
    }

    #[test]
    fn document_matches_router() {
        let spec = parse_oas(oas_document(), DocumentFormat::Yaml).unwrap();
        let documented: BTreeSet<(String, String)> = spec
            .functions
            .iter()
            .map(|f| (f.method.as_str().to_string(), f.path_template.clone()))
            .collect();
        let served: BTreeSet<(String, String)> = ROUTES
            .iter()
            .map(|(m, p)| (m.to_string(), p.to_string()))
            .collect();
        assert_eq!(documented, served);

        // and every served route answers something other than "no such route"
        let mut st = MockState::new(0, true);
        for (method, template) in ROUTES {
            let mut url = template.to_string();
            for p in path_placeholders(template) {
                url = url.replace(&format!("{{{p}}}"), "1");
            }
            let r = handle(&mut st, method, &url, "{}");
            assert!(!r.body.contains("No such route"), "{method} {url}");
        }
    }

    #[test]
    fn document_declares_every_datatype() {
        let spec = parse_oas(oas_document(), DocumentFormat::Yaml).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut seen = BTreeSet::new();
        for f in &spec.functions {
            let inst = f.instantiate(&mut rng, &Default::default()).unwrap();
            seen.extend(inst.slots().into_iter().map(|s| s.datatype));
        }
        assert_eq!(seen, DataType::ALL.into_iter().collect());
    }

    #[test]
    fn serves_over_http() {
        let server = serve(0, MockOptions::default()).unwrap();
        let exec = crate::executor::HttpExecutor::new(2000, vec![]);
        let req = crate::executor::HttpRequest {
            method: crate::oas::HttpMethod::Get,
            url: format!("{}/ping", server.base_url()),
            headers: vec![],
            body: None,
        };
        let ex = crate::executor::Transport::execute(&exec, &req);
        assert_eq!(ex.observation, crate::executor::Observation::Status(200));
        let port = server.addr().port();
        server.shutdown();
        let again = serve(port, MockOptions::default()).unwrap();
        assert_eq!(again.addr().port(), port);
    }
}
