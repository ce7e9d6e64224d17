//! HTTP-backed stage models. The wire protocol is a single POST:
//! request `{"input": <text>, "want_scores": true}`, response
//! `{"prediction": <label>, "scores": [..], "output_token_count": n}`.
//!
//! Remote stages are excluded from determinism guarantees. A failed or
//! malformed call is never replaced with a default prediction.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cascade::{StageModel, StageOutput};
use crate::error::{Error, Result};
use crate::token::{Label, TokenSeq, Vocabulary};

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    input: &'a str,
    want_scores: bool,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    prediction: Label,
    scores: Vec<f64>,
    output_token_count: u32,
}

/// One protocol round trip against an endpoint. Scores arity is checked
/// against `expect_classes` when the prediction is a class label.
pub fn remote_stage_call(
    client: &reqwest::blocking::Client,
    url: &str,
    input_text: &str,
    expect_classes: Option<usize>,
) -> Result<StageOutput> {
    let stage_err = |message: String| Error::Stage {
        endpoint: url.to_string(),
        message,
    };
    let response = client
        .post(url)
        .json(&WireRequest {
            input: input_text,
            want_scores: true,
        })
        .send()
        .map_err(|e| stage_err(format!("request failed: {e}")))?;
    let status = response.status();
    let body = response
        .text()
        .map_err(|e| stage_err(format!("unreadable body: {e}")))?;
    if !status.is_success() {
        return Err(stage_err(format!("status {status}, body: {body}")));
    }
    let wire: WireResponse = serde_json::from_str(&body)
        .map_err(|e| stage_err(format!("malformed response ({e}), body: {body}")))?;
    if let (Some(expected), Label::Class(_)) = (expect_classes, &wire.prediction) {
        if wire.scores.len() != expected {
            return Err(stage_err(format!(
                "scores arity {} does not match class_count {expected}",
                wire.scores.len()
            )));
        }
    }
    Ok(StageOutput {
        prediction: wire.prediction,
        scores: wire.scores,
        output_token_count: wire.output_token_count,
    })
}

/// A cascade stage served over HTTP. Inputs are decoded through the shared
/// vocabulary before they leave the process.
pub struct RemoteStageModel {
    url: String,
    client: reqwest::blocking::Client,
    vocab: Vocabulary,
    class_count: usize,
    cost_base: f64,
    param_scale: f64,
}

impl RemoteStageModel {
    pub fn new(
        url: String,
        timeout_ms: u64,
        vocab: Vocabulary,
        class_count: usize,
        cost_base: f64,
        param_scale: f64,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| Error::Stage {
                endpoint: url.clone(),
                message: format!("client construction failed: {e}"),
            })?;
        Ok(RemoteStageModel {
            url,
            client,
            vocab,
            class_count,
            cost_base,
            param_scale,
        })
    }

    /// Fallible query path; the preferred entry point.
    pub fn query(&self, x: &TokenSeq) -> Result<StageOutput> {
        remote_stage_call(
            &self.client,
            &self.url,
            &self.vocab.decode(x),
            Some(self.class_count),
        )
    }
}

impl StageModel for RemoteStageModel {
    /// The stage trait is infallible, so a mid-run endpoint failure aborts
    /// the run with the full stage diagnostic instead of fabricating a
    /// prediction. Callers should `query` a probe input at construction
    /// time to surface connectivity problems as ordinary errors.
    fn predict(&self, x: &TokenSeq) -> StageOutput {
        match self.query(x) {
            Ok(out) => out,
            Err(e) => panic!("{e}"),
        }
    }

    fn cost_of(&self, _x: &TokenSeq) -> f64 {
        self.cost_base
    }

    fn param_scale(&self) -> f64 {
        self.param_scale
    }
}
