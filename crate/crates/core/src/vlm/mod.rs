//! Prompt rendering of a scene graph and dispatch to an inference client.

mod client;
mod prompt;

use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph4d::{to_canonical_json, PatchMode, SceneGraph4D};
use crate::step::PatchStore;

pub use client::{
    InferImageWire, InferRequestWire, InferResponseWire, InferenceClient, MockClient,
    RemoteHttpClient,
};
pub use prompt::{
    displacement_line, render_prompt, ObjectBlock, PatchAttachment, PromptContext, PromptOptions,
    TEMPLATE_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("inference client unavailable: {0}")]
    ClientUnavailable(String),
    #[error("inference request to {url} timed out after {timeout:?}")]
    ClientTimeout { url: String, timeout: Duration },
    #[error("malformed inference response: {0}")]
    MalformedResponse(String),
    #[error("patch {0} is not in the patch store")]
    MissingPatch(String),
}

/// Where an answer came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the graph's canonical JSON (patches by reference).
    pub graph_hash: String,
    /// SHA-256 of the rendered prompt text.
    pub prompt_hash: String,
    pub template_version: String,
    pub client_id: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub answer: String,
    pub provenance: Provenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Renders the prompt, attaches the referenced patches and asks the client.
pub fn query(
    graph: &SceneGraph4D,
    question: &str,
    options: &PromptOptions,
    store: &PatchStore,
    client: &dyn InferenceClient,
) -> Result<QueryResult, VlmError> {
    let context = render_prompt(graph, question, options);
    let b64 = base64::engine::general_purpose::STANDARD;
    let images = context
        .patch_attachments
        .iter()
        .map(|a| {
            let png = store
                .png_bytes(&a.patch_ref)
                .ok_or_else(|| VlmError::MissingPatch(a.patch_ref.clone()))?;
            Ok(InferImageWire {
                object_id: a.object_id,
                timestamp: a.timestamp,
                row: a.row,
                col: a.col,
                png_base64: b64.encode(png),
            })
        })
        .collect::<Result<Vec<_>, VlmError>>()?;
    let graph_json = to_canonical_json(graph, PatchMode::Ref, store)
        .map_err(|e| VlmError::MalformedResponse(format!("graph does not serialize: {e}")))?;
    let clock = Instant::now();
    let answer = client.infer(&context, &images)?;
    Ok(QueryResult {
        answer,
        provenance: Provenance {
            graph_hash: sha256_hex(graph_json.as_bytes()),
            prompt_hash: sha256_hex(context.text().as_bytes()),
            template_version: context.template_version.clone(),
            client_id: client.id(),
            latency_ms: clock.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Exact-match normalization: lowercase, punctuation removed, whitespace
/// collapsed to single spaces.
pub fn normalize_answer(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}
