//! Minimal JSON-over-HTTP plumbing shared by the remote segmentation and
//! inference clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub(crate) enum HttpError {
    #[error("{url} unreachable: {reason}")]
    Unavailable { url: String, reason: String },
    #[error("{url} timed out after {timeout:?}")]
    Timeout { url: String, timeout: Duration },
    #[error("{url} answered HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("{url} returned an undecodable body: {reason}")]
    Malformed { url: String, reason: String },
}

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    base: String,
    timeout: Duration,
}

impl JsonClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            base: base_url.trim_end_matches('/').to_string(),
            timeout,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, HttpError> {
        let url = format!("{}{}", self.base, path);
        let response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| self.classify(&url, e))?;
        response
            .into_body()
            .read_json::<Resp>()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => HttpError::Timeout {
                    url: url.clone(),
                    timeout: self.timeout,
                },
                other => HttpError::Malformed {
                    url: url.clone(),
                    reason: other.to_string(),
                },
            })
    }

    fn classify(&self, url: &str, e: ureq::Error) -> HttpError {
        match e {
            ureq::Error::StatusCode(status) => HttpError::Status {
                url: url.into(),
                status,
            },
            ureq::Error::Timeout(_) => HttpError::Timeout {
                url: url.into(),
                timeout: self.timeout,
            },
            ureq::Error::Json(err) => HttpError::Malformed {
                url: url.into(),
                reason: err.to_string(),
            },
            other => HttpError::Unavailable {
                url: url.into(),
                reason: other.to_string(),
            },
        }
    }
}
