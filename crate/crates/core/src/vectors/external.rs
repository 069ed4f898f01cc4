//! Line-delimited JSON client for an out-of-process embedding service.
//!
//! Request: `{"ids":[...],"texts":[...]}` followed by `\n`.
//! Reply:   `{"vectors":[[...],...]}` followed by `\n`, exactly one row of
//! `dim` floats per id.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::provider::{EmbeddingProvider, EmbeddingRequest, ProviderConfig};
use super::Vector;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct WireRequest {
    ids: Vec<u64>,
    texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireReply {
    vectors: Vec<Vec<f32>>,
}

trait Duplex: Read + Write + Send {}
impl<T: Read + Write + Send> Duplex for T {}

struct Connection {
    reader: BufReader<Box<dyn Duplex>>,
}

pub struct ExternalProvider {
    endpoint: String,
    dim: usize,
    max_batch: usize,
    timeout: Duration,
    retries: u32,
    conn: Mutex<Option<Connection>>,
}

impl std::fmt::Debug for ExternalProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalProvider")
            .field("endpoint", &self.endpoint)
            .field("dim", &self.dim)
            .finish()
    }
}

impl ExternalProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::InvalidArgument("external provider needs an endpoint".into()))?;
        Ok(Self {
            endpoint,
            dim: config.dim,
            max_batch: config.max_batch.max(1),
            timeout: Duration::from_millis(config.timeout_ms.max(1)),
            retries: config.retries,
            conn: Mutex::new(None),
        })
    }

    fn open(&self) -> std::io::Result<Connection> {
        let stream: Box<dyn Duplex> = if let Some(addr) = self.endpoint.strip_prefix("tcp://") {
            let s = TcpStream::connect(addr)?;
            s.set_read_timeout(Some(self.timeout))?;
            s.set_write_timeout(Some(self.timeout))?;
            s.set_nodelay(true)?;
            Box::new(s)
        } else if let Some(path) = self.endpoint.strip_prefix("unix://") {
            open_unix(path, self.timeout)?
        } else {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("unsupported endpoint {:?} (use tcp:// or unix://)", self.endpoint),
            ));
        };
        Ok(Connection {
            reader: BufReader::new(stream),
        })
    }

    fn round_trip(&self, line: &[u8]) -> std::io::Result<String> {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(self.open()?);
        }
        let conn = guard.as_mut().expect("connection just opened");
        let res = (|| {
            let w = conn.reader.get_mut();
            w.write_all(line)?;
            w.flush()?;
            let mut reply = String::new();
            let n = conn.reader.read_line(&mut reply)?;
            if n == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "provider closed the connection",
                ));
            }
            Ok(reply)
        })();
        if res.is_err() {
            *guard = None;
        }
        res
    }
}

#[cfg(unix)]
fn open_unix(path: &str, timeout: Duration) -> std::io::Result<Box<dyn Duplex>> {
    let s = std::os::unix::net::UnixStream::connect(path)?;
    s.set_read_timeout(Some(timeout))?;
    s.set_write_timeout(Some(timeout))?;
    Ok(Box::new(s))
}

#[cfg(not(unix))]
fn open_unix(_path: &str, _timeout: Duration) -> std::io::Result<Box<dyn Duplex>> {
    Err(std::io::Error::new(
        std::io::ErrorKind::Unsupported,
        "unix sockets are not available on this platform",
    ))
}

impl EmbeddingProvider for ExternalProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed(&self, requests: &[EmbeddingRequest<'_>]) -> Result<Vec<Vector>> {
        let req = WireRequest {
            ids: requests.iter().map(|r| r.item_id).collect(),
            texts: requests
                .iter()
                .map(|r| String::from_utf8_lossy(r.content).into_owned())
                .collect(),
        };
        let mut line = serde_json::to_vec(&req).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push(b'\n');

        let mut last_err = None;
        let mut reply = None;
        for _attempt in 0..=self.retries {
            match self.round_trip(&line) {
                Ok(r) => {
                    reply = Some(r);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let reply = reply.ok_or_else(|| Error::Transport {
            retries: self.retries,
            detail: last_err.map(|e| e.to_string()).unwrap_or_default(),
        })?;
        let parsed: WireReply = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed reply: {e}")))?;
        if parsed.vectors.len() != requests.len() {
            return Err(Error::Protocol(format!(
                "expected {} rows, got {}",
                requests.len(),
                parsed.vectors.len()
            )));
        }
        if let Some(bad) = parsed.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(Error::Protocol(format!(
                "row has dim {} (expected {})",
                bad.len(),
                self.dim
            )));
        }
        Ok(parsed.vectors)
    }
}

/// Serves the wire protocol on one connection until EOF, answering with
/// `provider`. Useful for wrapping any in-process provider as a service.
pub fn serve_connection<S: Read + Write>(stream: S, provider: &dyn EmbeddingProvider) -> Result<()> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let req: WireRequest = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed request: {e}")))?;
        let reqs: Vec<EmbeddingRequest> = req
            .ids
            .iter()
            .zip(&req.texts)
            .map(|(&id, t)| EmbeddingRequest::new(id, t.as_bytes()))
            .collect();
        let vectors = if reqs.is_empty() {
            Vec::new()
        } else {
            super::embed_batch(provider, &reqs)?
        };
        let mut out = serde_json::to_vec(&WireReply { vectors })
            .map_err(|e| Error::Protocol(e.to_string()))?;
        out.push(b'\n');
        let w = reader.get_mut();
        w.write_all(&out)?;
        w.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectors::{synthetic_embed, SyntheticProvider};
    use std::net::TcpListener;

    fn spawn_server(dim: usize, seed: u64) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let p = SyntheticProvider::new(dim, seed);
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let _ = serve_connection(stream, &p);
            }
        });
        format!("tcp://{addr}")
    }

    #[test]
    fn round_trip_matches_in_process() {
        let endpoint = spawn_server(8, 5);
        let cfg = ProviderConfig::external(8, endpoint);
        let p = ExternalProvider::new(&cfg).unwrap();
        let out = p
            .embed(&[EmbeddingRequest::new(0, b"x"), EmbeddingRequest::new(1, b"y")])
            .unwrap();
        assert_eq!(out[0], synthetic_embed(b"x", 8, 5));
        assert_eq!(out[1], synthetic_embed(b"y", 8, 5));
        // connection reuse
        let again = p.embed(&[EmbeddingRequest::new(0, b"x")]).unwrap();
        assert_eq!(again[0], out[0]);
    }

    #[test]
    fn dim_mismatch_is_protocol_error() {
        let endpoint = spawn_server(4, 0);
        let cfg = ProviderConfig::external(8, endpoint);
        let p = ExternalProvider::new(&cfg).unwrap();
        let err = p.embed(&[EmbeddingRequest::new(0, b"x")]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn unreachable_is_transport_error_with_retries() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut cfg = ProviderConfig::external(8, format!("tcp://{addr}"));
        cfg.retries = 3;
        cfg.timeout_ms = 200;
        let p = ExternalProvider::new(&cfg).unwrap();
        match p.embed(&[EmbeddingRequest::new(0, b"x")]).unwrap_err() {
            Error::Transport { retries, .. } => assert_eq!(retries, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_scheme_rejected() {
        let cfg = ProviderConfig::external(8, "http://nope");
        let p = ExternalProvider::new(&cfg).unwrap();
        assert!(matches!(
            p.embed(&[EmbeddingRequest::new(0, b"x")]),
            Err(Error::Transport { .. })
        ));
    }
}
