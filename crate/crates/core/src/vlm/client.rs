use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PromptContext, VlmError};
use crate::http::{HttpError, JsonClient};

/// One attached patch image on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferImageWire {
    pub object_id: u64,
    pub timestamp: f64,
    pub row: u8,
    pub col: u8,
    /// PNG, standard base64.
    pub png_base64: String,
}

/// Body of `POST /infer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequestWire {
    pub text_blocks: Vec<String>,
    pub images: Vec<InferImageWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_format: Option<String>,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponseWire {
    pub answer: String,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub token_usage: Option<serde_json::Value>,
}

pub trait InferenceClient: Send + Sync {
    /// Identifier recorded in query provenance.
    fn id(&self) -> String;

    /// Returns the model's answer verbatim.
    fn infer(&self, context: &PromptContext, images: &[InferImageWire])
        -> Result<String, VlmError>;
}

/// Deterministic client for tests and offline runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockClient {
    /// Answers looked up by exact question text.
    Scripted {
        #[serde(default)]
        answers: BTreeMap<String, String>,
        #[serde(default)]
        fallback: String,
    },
    /// Answers with the number of objects in the prompt.
    ObjectCount,
}

impl InferenceClient for MockClient {
    fn id(&self) -> String {
        match self {
            MockClient::Scripted { .. } => "mock:scripted".into(),
            MockClient::ObjectCount => "mock:object_count".into(),
        }
    }

    fn infer(&self, context: &PromptContext, _: &[InferImageWire]) -> Result<String, VlmError> {
        Ok(match self {
            MockClient::Scripted { answers, fallback } => answers
                .get(&context.question)
                .cloned()
                .unwrap_or_else(|| fallback.clone()),
            MockClient::ObjectCount => context.object_blocks.len().to_string(),
        })
    }
}

/// Client for a remote `/infer` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteHttpClient {
    http: JsonClient,
}

impl RemoteHttpClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            http: JsonClient::new(base_url, timeout),
        }
    }
}

impl InferenceClient for RemoteHttpClient {
    fn id(&self) -> String {
        format!("remote:{}", self.http.base_url())
    }

    fn infer(
        &self,
        context: &PromptContext,
        images: &[InferImageWire],
    ) -> Result<String, VlmError> {
        let body = InferRequestWire {
            text_blocks: context.blocks(),
            images: images.to_vec(),
            answer_format: context.answer_format.clone(),
            template_version: context.template_version.clone(),
        };
        let resp: InferResponseWire = self.http.post("/infer", &body).map_err(|e| match e {
            HttpError::Timeout { url, timeout } => VlmError::ClientTimeout { url, timeout },
            HttpError::Malformed { reason, .. } => VlmError::MalformedResponse(reason),
            other => VlmError::ClientUnavailable(other.to_string()),
        })?;
        if resp.answer.is_empty() {
            return Err(VlmError::MalformedResponse("empty answer".into()));
        }
        Ok(resp.answer)
    }
}
