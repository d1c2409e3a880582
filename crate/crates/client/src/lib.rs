//! Typed calls against the review service API.

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

use tuskmarks::analysis::{SearchHit, SignatureGroup};
use tuskmarks::catalog::{Marking, ReviewTask};
use tuskmarks::review::api::{CropQuery, ErrorBody, Health, MarkingQuery, QueueItem, QueueQuery, SearchQuery, SkipRequest};
use tuskmarks::review::{LabelSubmission, Vocabulary};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
    },
}

impl ClientError {
    /// The service's error code, for API errors.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            ClientError::Transport { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api{path}", self.base)
    }

    async fn check(&self, url: &str, resp: Result<Response, reqwest::Error>) -> Result<Response, ClientError> {
        let resp = resp.map_err(|source| ClientError::Transport {
            url: url.to_string(),
            source,
        })?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => ClientError::Api {
                status,
                code: body.error.code,
                message: body.error.message,
            },
            Err(_) => ClientError::Api {
                status,
                code: "http".into(),
                message: text,
            },
        })
    }

    async fn json<T: DeserializeOwned>(&self, url: &str, resp: Result<Response, reqwest::Error>) -> Result<T, ClientError> {
        self.check(url, resp)
            .await?
            .json()
            .await
            .map_err(|source| ClientError::Transport {
                url: url.to_string(),
                source,
            })
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let url = self.url("/health");
        self.json(&url, self.http.get(&url).send().await).await
    }

    pub async fn queue(&self, queue: &str, seizure: Option<u32>, limit: Option<usize>) -> Result<Vec<QueueItem>, ClientError> {
        let url = self.url(&format!("/queue/{queue}"));
        let q = QueueQuery { seizure, limit };
        self.json(&url, self.http.get(&url).query(&q).send().await).await
    }

    pub async fn submit_label(&self, submission: &LabelSubmission) -> Result<ReviewTask, ClientError> {
        let url = self.url("/labels");
        self.json(&url, self.http.post(&url).json(submission).send().await).await
    }

    pub async fn skip(&self, task_id: &str, reviewer: &str) -> Result<ReviewTask, ClientError> {
        let url = self.url(&format!("/tasks/{task_id}/skip"));
        let body = SkipRequest {
            reviewer: reviewer.to_string(),
        };
        self.json(&url, self.http.post(&url).json(&body).send().await).await
    }

    pub async fn vocabulary(&self) -> Result<Vocabulary, ClientError> {
        let url = self.url("/vocabulary");
        self.json(&url, self.http.get(&url).send().await).await
    }

    pub async fn markings(&self, query: &MarkingQuery) -> Result<Vec<Marking>, ClientError> {
        let url = self.url("/markings");
        self.json(&url, self.http.get(&url).query(query).send().await).await
    }

    pub async fn marking(&self, id: &str) -> Result<Marking, ClientError> {
        let url = self.url(&format!("/markings/{id}"));
        self.json(&url, self.http.get(&url).send().await).await
    }

    /// PNG bytes of the marking's crop.
    pub async fn crop(&self, id: &str, rotation: Option<u16>) -> Result<Vec<u8>, ClientError> {
        let url = self.url(&format!("/markings/{id}/crop"));
        let resp = self.check(&url, self.http.get(&url).query(&CropQuery { rotation }).send().await).await?;
        resp.bytes()
            .await
            .map(|b| b.to_vec())
            .map_err(|source| ClientError::Transport { url, source })
    }

    pub async fn search(&self, query: &str) -> Result<Vec<SearchHit>, ClientError> {
        let url = self.url("/search");
        let q = SearchQuery { q: query.to_string() };
        self.json(&url, self.http.get(&url).query(&q).send().await).await
    }

    pub async fn signatures(&self) -> Result<Vec<SignatureGroup>, ClientError> {
        let url = self.url("/signatures");
        self.json(&url, self.http.get(&url).send().await).await
    }
}
