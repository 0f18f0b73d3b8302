//! Generative-text endpoint client.
//!
//! Wire protocol: `POST {base}/v1/generate` with
//! `{model, prompt, image?, temperature, seed}` and a `{text}` reply. A non-2xx
//! status carrying `Retry-After`, or a 429, is treated as rate limiting.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "TRACE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub prompt: String,
    /// Base64-encoded PNG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient endpoint failure: {0}")]
    Transient(String),
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    Protocol(String),
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            EndpointError::RateLimited { .. } | EndpointError::Transient(_) | EndpointError::Unreachable(_)
        )
    }
}

pub trait Endpoint: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError>;
}

impl<E: Endpoint + ?Sized> Endpoint for &E {
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        (**self).generate(request)
    }
}

impl<E: Endpoint + ?Sized> Endpoint for Box<E> {
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        (**self).generate(request)
    }
}

/// Blocking JSON-over-HTTP client.
pub struct HttpEndpoint {
    url: String,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpEndpoint {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpEndpoint {
            url: format!("{}/v1/generate", base_url.trim_end_matches('/')),
            agent: ureq::Agent::new_with_config(config),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn parse_retry_after(value: &str) -> Option<Duration> {
    let secs: f64 = value.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

fn map_transport(err: ureq::Error) -> EndpointError {
    match err {
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => EndpointError::Unreachable(err.to_string()),
        ureq::Error::Io(ref io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::ConnectionRefused
                    | std::io::ErrorKind::ConnectionReset
                    | std::io::ErrorKind::NotConnected
                    | std::io::ErrorKind::AddrNotAvailable
            ) =>
        {
            EndpointError::Unreachable(err.to_string())
        }
        other => EndpointError::Transient(other.to_string()),
    }
}

impl Endpoint for HttpEndpoint {
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(parse_retry_after);
        if (200..300).contains(&status) {
            let body: GenerateResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| EndpointError::Protocol(e.to_string()))?;
            return Ok(body.text);
        }
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        if status == 429 || retry_after.is_some() {
            Err(EndpointError::RateLimited { retry_after })
        } else if status >= 500 || status == 408 {
            Err(EndpointError::Transient(format!("status {status}: {body}")))
        } else {
            Err(EndpointError::Rejected { status, body })
        }
    }
}

/// Exponential backoff. `Retry-After` overrides the computed delay; both are
/// capped at `max_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32, retry_after: Option<Duration>) -> Duration {
        let computed = self
            .base_delay
            .mul_f64(self.multiplier.powi(retry.min(64) as i32));
        retry_after.unwrap_or(computed).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    /// Retries spent on transport failures before this reply.
    pub retries: u32,
}

/// Calls the endpoint, retrying rate limits and transient failures.
pub fn call_with_retry<E: Endpoint + ?Sized>(
    endpoint: &E,
    request: &GenerateRequest,
    policy: &RetryPolicy,
) -> Result<Reply, EndpointError> {
    let mut retry = 0;
    loop {
        match endpoint.generate(request) {
            Ok(text) => return Ok(Reply { text, retries: retry }),
            Err(e) if e.is_retryable() && retry < policy.max_retries => {
                let wait = match &e {
                    EndpointError::RateLimited { retry_after } => policy.delay(retry, *retry_after),
                    _ => policy.delay(retry, None),
                };
                tracing::debug!(error = %e, retry, wait_ms = wait.as_millis() as u64, "retrying endpoint call");
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
                retry += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Counts concurrent calls into the wrapped endpoint.
pub struct Instrumented<E> {
    inner: E,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

impl<E> Instrumented<E> {
    pub fn new(inner: E) -> Self {
        Instrumented {
            inner,
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Endpoint> Endpoint for Instrumented<E> {
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let out = self.inner.generate(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// Fails every call with the given error.
pub struct FailingEndpoint(pub EndpointError);

impl Endpoint for FailingEndpoint {
    fn generate(&self, _: &GenerateRequest) -> Result<String, EndpointError> {
        Err(self.0.clone())
    }
}

/// Adapts a closure into an endpoint.
pub struct FnEndpoint<F>(pub F);

impl<F> Endpoint for FnEndpoint<F>
where
    F: Fn(&GenerateRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        (self.0)(request)
    }
}
