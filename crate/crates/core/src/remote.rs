//! Blocking JSON-over-HTTP client shared by the external-service adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL the request is POSTed to.
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn with_timeout_ms(mut self, ms: u64) -> Self {
        self.timeout_ms = ms;
        self
    }
}

pub(crate) fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    config: &RemoteConfig,
    body: &Req,
    scan_ref: &str,
) -> Result<Resp> {
    let net = |message: String| Error::Network {
        scan_ref: scan_ref.to_string(),
        message,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    let response = agent
        .post(&config.endpoint)
        .send_json(body)
        .map_err(|e| net(e.to_string()))?;
    let status = response.status().as_u16();
    if status != 200 {
        return Err(net(format!("HTTP status {status}")));
    }
    let text = response
        .into_body()
        .read_to_string()
        .map_err(|e| net(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("response for '{scan_ref}': {e}")))
}
