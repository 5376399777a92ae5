use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::describe::describe_triplet;
use super::oracle::Arbiter;
use super::parse::parse_verdict;
use super::prompt::{build_prompt_variant, PromptVariant};
use super::verdict::Verdict;
use crate::error::{Error, Result};
use crate::numkit::RngState;
use crate::world::{Triplet, World};

/// Body of one arbitration request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub id: String,
    pub system: String,
    pub user: String,
    pub response_schema: String,
}

/// Delivers a request and returns the raw response text.
pub trait Transport {
    fn post(&self, request: &RemoteRequest) -> Result<String>;
}

/// Serves recorded responses keyed by triplet id.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    responses: HashMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscriptEntry {
    id: String,
    response: String,
}

impl ReplayTransport {
    pub fn new(responses: HashMap<String, String>) -> Self {
        Self { responses }
    }

    /// Loads a JSON Lines transcript of `{"id": …, "response": …}` entries.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut responses = HashMap::new();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: e.to_string(),
            })?;
            responses.insert(entry.id, entry.response);
        }
        Ok(Self { responses })
    }
}

impl Transport for ReplayTransport {
    fn post(&self, request: &RemoteRequest) -> Result<String> {
        self.responses
            .get(&request.id)
            .cloned()
            .ok_or_else(|| Error::Remote(format!("no recorded response for {:?}", request.id)))
    }
}

/// Plain HTTP/1.1 POST of the request as JSON to `http://host[:port]/path`.
/// TLS is out of reach; point this at a local relay.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    host: String,
    port: u16,
    path: String,
    timeout: Duration,
}

impl HttpTransport {
    pub fn new(url: &str, timeout: Duration) -> Result<Self> {
        let rest = url
            .strip_prefix("http://")
            .ok_or_else(|| Error::config(format!("endpoint {url:?} must start with http://")))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (
                h,
                p.parse()
                    .map_err(|_| Error::config(format!("bad port in endpoint {url:?}")))?,
            ),
            None => (authority, 80),
        };
        if host.is_empty() {
            return Err(Error::config(format!("endpoint {url:?} has no host")));
        }
        Ok(Self {
            host: host.to_string(),
            port,
            path: path.to_string(),
            timeout,
        })
    }
}

impl Transport for HttpTransport {
    fn post(&self, request: &RemoteRequest) -> Result<String> {
        let remote = |e: std::io::Error| Error::Remote(format!("{}:{}: {e}", self.host, self.port));
        let body = serde_json::to_string(request).expect("request serializes");
        let mut stream = TcpStream::connect((self.host.as_str(), self.port)).map_err(remote)?;
        stream
            .set_read_timeout(Some(self.timeout))
            .map_err(remote)?;
        stream
            .set_write_timeout(Some(self.timeout))
            .map_err(remote)?;
        write!(
            stream,
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        )
        .map_err(remote)?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw).map_err(remote)?;
        let raw =
            String::from_utf8(raw).map_err(|_| Error::Remote("response is not UTF-8".into()))?;
        let (head, body) = raw
            .split_once("\r\n\r\n")
            .ok_or_else(|| Error::Remote("malformed HTTP response".into()))?;
        let status = head.lines().next().unwrap_or("");
        if status.split_whitespace().nth(1) != Some("200") {
            return Err(Error::Remote(format!("unexpected status line {status:?}")));
        }
        if head
            .to_ascii_lowercase()
            .contains("transfer-encoding: chunked")
        {
            return Err(Error::Remote("chunked responses are not supported".into()));
        }
        Ok(body.to_string())
    }
}

/// Arbiter that renders each triplet as text, sends the prompt chain through
/// a transport and parses the reply.
pub struct RemoteArbiter<T: Transport> {
    world: World,
    transport: T,
    variant: PromptVariant,
}

impl<T: Transport> RemoteArbiter<T> {
    pub fn new(world: World, transport: T, variant: PromptVariant) -> Self {
        Self {
            world,
            transport,
            variant,
        }
    }

    pub fn request_for(&self, triplet: &Triplet) -> Result<RemoteRequest> {
        let bundle = build_prompt_variant(&describe_triplet(&self.world, triplet), self.variant)?;
        Ok(RemoteRequest {
            id: triplet.id.clone(),
            system: bundle.system,
            user: bundle.user,
            response_schema: bundle.response_schema,
        })
    }
}

impl<T: Transport> Arbiter for RemoteArbiter<T> {
    fn arbitrate(&self, triplet: &Triplet, _rng: RngState) -> Result<Verdict> {
        let response = self.transport.post(&self.request_for(triplet)?)?;
        parse_verdict(&response)
    }

    fn describe(&self) -> String {
        format!("remote({:?})", self.variant)
    }
}
