//! Resolves `--endpoint-url` values.
//!
//! `http://` and `https://` URLs go to a remote endpoint. `mock://` URLs pick
//! an in-process stand-in, tuned with query parameters:
//!
//! | URL | role |
//! |-----|------|
//! | `mock://echo?malformed=0&miss=0&rate-limit=0` | rationale generator |
//! | `mock://gt-echo` | predictor answering with the ground truth |
//! | `mock://uniform?points=10` | uniformly random predictor |
//! | `mock://fail` | predictor that always fails |
//! | `mock://simulated?skill=0.5&gain=0&points=10` | correct with probability `skill + gain * share` |
//!
//! `share` is the reasoning-data share of an ablation subset and 0 elsewhere.

use std::collections::BTreeMap;
use std::time::Duration;

use trace_core::dataset::RationaleMock;
use trace_core::endpoint::{Endpoint, EndpointError, HttpEndpoint, RetryPolicy};
use trace_core::eval::{AlwaysFail, EndpointPredictor, GtEcho, Predictor, Simulated, UniformRandom};
use trace_core::scene::SceneRecord;

use crate::error::CliError;

const HTTP_TIMEOUT: Duration = Duration::from_secs(120);

fn bad(message: String) -> CliError {
    CliError::Config {
        message,
        keys: vec!["endpoint-url".into()],
    }
}

struct MockUrl {
    kind: String,
    params: BTreeMap<String, String>,
}

impl MockUrl {
    fn parse(url: &str) -> Option<Result<Self, CliError>> {
        let rest = url.strip_prefix("mock://")?;
        let (kind, query) = rest.split_once('?').unwrap_or((rest, ""));
        let mut params = BTreeMap::new();
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let Some((k, v)) = pair.split_once('=') else {
                return Some(Err(bad(format!("mock parameter {pair:?} has no value"))));
            };
            params.insert(k.to_string(), v.to_string());
        }
        Some(Ok(MockUrl {
            kind: kind.trim_end_matches('/').to_string(),
            params,
        }))
    }

    /// Reads the allowed parameters; any other parameter is an error.
    fn take<const N: usize>(&self, allowed: [(&str, f64); N]) -> Result<[f64; N], CliError> {
        if let Some(k) = self.params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
            return Err(bad(format!("mock://{} takes no parameter {k:?}", self.kind)));
        }
        let mut out = [0.0; N];
        for (slot, (name, default)) in out.iter_mut().zip(allowed) {
            *slot = match self.params.get(name) {
                Some(v) => v
                    .parse()
                    .map_err(|_| bad(format!("mock parameter {name}={v:?} is not a number")))?,
                None => default,
            };
        }
        Ok(out)
    }
}

fn http_url(url: &str) -> bool {
    url.starts_with("http://") || url.starts_with("https://")
}

pub fn rationale_endpoint(url: &str) -> Result<Box<dyn Endpoint>, CliError> {
    if http_url(url) {
        return Ok(Box::new(HttpEndpoint::new(url, HTTP_TIMEOUT)));
    }
    match MockUrl::parse(url) {
        Some(mock) => {
            let mock = mock?;
            if mock.kind != "echo" {
                return Err(bad(format!("mock://{} cannot generate rationales; use mock://echo", mock.kind)));
            }
            let [malformed, miss, rate_limit] = mock.take([("malformed", 0.0), ("miss", 0.0), ("rate-limit", 0.0)])?;
            Ok(Box::new(RationaleMock::with_rates(malformed, miss).rate_limited(rate_limit)))
        }
        None => Err(bad(format!("unsupported endpoint URL {url:?}"))),
    }
}

pub struct PredictorSpec<'a> {
    pub url: &'a str,
    pub model: Option<&'a str>,
    pub temperature: f64,
    pub attach_images: bool,
    /// Reasoning-data share for the simulated predictor.
    pub share: f64,
}

pub fn predictor(spec: &PredictorSpec<'_>) -> Result<Box<dyn Predictor>, CliError> {
    if http_url(spec.url) {
        let model = spec
            .model
            .ok_or_else(|| CliError::Config {
                message: "a model name is required with an HTTP endpoint".into(),
                keys: vec!["model".into()],
            })?
            .to_string();
        return Ok(Box::new(EndpointPredictor {
            endpoint: HttpEndpoint::new(spec.url, HTTP_TIMEOUT),
            model,
            temperature: spec.temperature,
            retry: RetryPolicy::default(),
            attach_images: spec.attach_images,
        }));
    }
    let mock = MockUrl::parse(spec.url).ok_or_else(|| bad(format!("unsupported endpoint URL {:?}", spec.url)))??;
    let p: Box<dyn Predictor> = match mock.kind.as_str() {
        "gt-echo" => {
            mock.take([])?;
            Box::new(GtEcho)
        }
        "fail" => {
            mock.take([])?;
            Box::new(AlwaysFail)
        }
        "uniform" => {
            let [points] = mock.take([("points", 10.0)])?;
            Box::new(UniformRandom {
                points: points.max(1.0) as usize,
            })
        }
        "simulated" => {
            let [skill, gain, points] = mock.take([("skill", 0.5), ("gain", 0.0), ("points", 10.0)])?;
            Box::new(Simulated {
                label: spec.model.unwrap_or("simulated").to_string(),
                skill: (skill + gain * spec.share).clamp(0.0, 1.0),
                points: points.max(1.0) as usize,
            })
        }
        other => return Err(bad(format!("mock://{other} is not a predictor"))),
    };
    Ok(match spec.model {
        Some(name) if mock.kind != "simulated" => Box::new(Named {
            name: name.to_string(),
            inner: p,
        }),
        _ => p,
    })
}

/// Reports a mock predictor under a chosen model name.
struct Named {
    name: String,
    inner: Box<dyn Predictor>,
}

impl Predictor for Named {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn predict(&self, record: &SceneRecord, run_id: u32, seed: u64) -> Result<String, EndpointError> {
        self.inner.predict(record, run_id, seed)
    }
}
