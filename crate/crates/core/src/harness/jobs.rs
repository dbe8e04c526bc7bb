use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::toy;
use crate::error::{Error, ErrorKind, Result};
use crate::harness::runners::*;
use crate::harness::spec::{spec_from_json, ExperimentSpec, Method, ToyData};

/// A spec document plus dotted-path overrides, resolved where the job runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecInput {
    #[serde(default)]
    pub doc: Option<Value>,
    #[serde(default)]
    pub overrides: Vec<String>,
}

impl SpecInput {
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        spec_from_json(self.doc.clone(), &self.overrides)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum JobRequest {
    Condense {
        spec: SpecInput,
    },
    Evaluate {
        spec: SpecInput,
        #[serde(default)]
        archive: Option<PathBuf>,
    },
    Baseline {
        spec: SpecInput,
        method: Method,
    },
    Ablate {
        spec: SpecInput,
    },
    Timing {
        spec: SpecInput,
    },
    Generalize {
        spec: SpecInput,
        #[serde(default)]
        archive: Option<PathBuf>,
        /// Defaults to the spec's plugin list.
        #[serde(default)]
        plugins: Option<Vec<String>>,
    },
    Report {
        root: PathBuf,
    },
    MakeToy {
        root: PathBuf,
        name: String,
        toy: ToyData,
    },
}

impl JobRequest {
    pub fn command(&self) -> &'static str {
        match self {
            JobRequest::Condense { .. } => "condense",
            JobRequest::Evaluate { .. } => "evaluate",
            JobRequest::Baseline { .. } => "baseline",
            JobRequest::Ablate { .. } => "ablate",
            JobRequest::Timing { .. } => "timing",
            JobRequest::Generalize { .. } => "generalize",
            JobRequest::Report { .. } => "report",
            JobRequest::MakeToy { .. } => "make-toy",
        }
    }
}

/// Runs a job to completion on the current thread.
pub fn run_job(req: &JobRequest) -> Result<Value> {
    let v = match req {
        JobRequest::Condense { spec } => serde_json::to_value(cmd_condense(&spec.resolve()?)?)?,
        JobRequest::Evaluate { spec, archive } => {
            serde_json::to_value(cmd_evaluate(&spec.resolve()?, archive.as_deref())?)?
        }
        JobRequest::Baseline { spec, method } => serde_json::to_value(cmd_baseline(&spec.resolve()?, *method)?)?,
        JobRequest::Ablate { spec } => serde_json::to_value(cmd_ablate(&spec.resolve()?)?)?,
        JobRequest::Timing { spec } => serde_json::to_value(cmd_timing(&spec.resolve()?)?)?,
        JobRequest::Generalize { spec, archive, plugins } => {
            let spec = spec.resolve()?;
            let plugins = plugins.clone().unwrap_or_else(|| spec.plugins.clone());
            serde_json::to_value(cmd_generalize(&spec, archive.as_deref(), &plugins)?)?
        }
        JobRequest::Report { root } => serde_json::to_value(cmd_report(root)?)?,
        JobRequest::MakeToy { root, name, toy: t } => {
            toy::write_png_layout(root, name, &t.spec, t.test_per_class)?;
            serde_json::json!({ "root": root, "name": name })
        }
    };
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }
}

/// Error body shared by job results and HTTP error responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        ApiError { kind: e.kind(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub command: String,
    pub state: JobState,
    #[serde(default)]
    pub result: Option<Value>,
    #[serde(default)]
    pub error: Option<ApiError>,
    /// Seconds spent running, once finished.
    #[serde(default)]
    pub seconds: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_wire_format() {
        let r: JobRequest = serde_json::from_value(json!({
            "command": "baseline",
            "spec": {"overrides": ["ipc=1"]},
            "method": "herding"
        }))
        .unwrap();
        assert_eq!(r.command(), "baseline");
        assert!(matches!(r, JobRequest::Baseline { method: Method::Herding, .. }));
    }

    #[test]
    fn failing_job_keeps_kind() {
        let r = JobRequest::Generalize {
            spec: SpecInput::default(),
            archive: None,
            plugins: Some(vec!["center".into()]),
        };
        let e = run_job(&r).unwrap_err();
        assert_eq!(ApiError::from(&e).exit_code(), 1);
    }
}
