//! Thin client for the job service.

use std::time::Duration;

use hashcond::harness::{ApiError, JobRequest, JobState, JobStatus};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{}", .0.message)]
    Api(ApiError),
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response {status}: {body}")]
    Protocol { status: u16, body: String },
}

impl ClientError {
    /// 1 for rejected input, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api(e) => e.exit_code(),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    poll: Duration,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        Client {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
            poll: Duration::from_millis(100),
        }
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let body = resp.text().await?;
        if status.is_success() {
            return serde_json::from_str(&body).map_err(|_| ClientError::Protocol { status: status.as_u16(), body });
        }
        match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => Err(ClientError::Api(e)),
            Err(_) => Err(ClientError::Protocol { status: status.as_u16(), body }),
        }
    }

    pub async fn health(&self) -> Result<Value, ClientError> {
        Self::decode(self.http.get(format!("{}/health", self.base)).send().await?).await
    }

    pub async fn plugins(&self) -> Result<Vec<String>, ClientError> {
        Self::decode(self.http.get(format!("{}/v1/plugins", self.base)).send().await?).await
    }

    pub async fn submit(&self, req: &JobRequest) -> Result<JobStatus, ClientError> {
        Self::decode(self.http.post(format!("{}/v1/jobs", self.base)).json(req).send().await?).await
    }

    pub async fn job(&self, id: &str) -> Result<JobStatus, ClientError> {
        Self::decode(self.http.get(format!("{}/v1/jobs/{id}", self.base)).send().await?).await
    }

    pub async fn jobs(&self) -> Result<Vec<JobStatus>, ClientError> {
        Self::decode(self.http.get(format!("{}/v1/jobs", self.base)).send().await?).await
    }

    /// Polls until the job finishes.
    pub async fn wait(&self, id: &str) -> Result<JobStatus, ClientError> {
        loop {
            let s = self.job(id).await?;
            if s.state.is_terminal() {
                return Ok(s);
            }
            tokio::time::sleep(self.poll).await;
        }
    }

    /// Submits, waits, and returns the result or the job's error.
    pub async fn run(&self, req: &JobRequest) -> Result<Value, ClientError> {
        let queued = self.submit(req).await?;
        let done = self.wait(&queued.id).await?;
        match (done.state, done.result, done.error) {
            (JobState::Succeeded, Some(v), _) => Ok(v),
            (_, _, Some(e)) => Err(ClientError::Api(e)),
            (state, ..) => Err(ClientError::Protocol { status: 200, body: format!("job ended {state:?} without payload") }),
        }
    }
}
