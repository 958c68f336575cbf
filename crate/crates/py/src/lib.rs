//! Python bindings: the assignment validator, the wire codec, the analytics
//! kernels, latency reports and a small in-process deployment.

use std::time::Duration;

use oodida::analytics::{self, Observation};
use oodida::client::ClientConfig;
use oodida::harness::{DeploymentConfig, LatencyReport, LocalDeployment, Transport};
use oodida::protocol::{self, AssignmentId, ClientId, Histogram, Message, ModelParams};
use oodida::user::FrontendClient;
use pyo3::exceptions::{PyRuntimeError, PyTimeoutError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyString};
use serde_json::Value;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts a JSON string or any object `json.dumps` can serialize.
fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_string());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// Returns the list of `(path, rule)` violations; empty when the document is valid.
#[pyfunction]
fn validate_assignment(document: &Bound<'_, PyAny>) -> PyResult<Vec<(String, String)>> {
    let text = from_py(document)?;
    Ok(match protocol::validate_assignment(&text) {
        Ok(_) => Vec::new(),
        Err(e) => e.0.into_iter().map(|v| (v.path, v.rule)).collect(),
    })
}

/// Encodes one message (dict or JSON string) as a length-prefixed frame.
#[pyfunction]
fn encode_frame<'py>(py: Python<'py>, message: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let m: Message = serde_json::from_str(&from_py(message)?).map_err(value_err)?;
    let frame = protocol::encode(&m).map_err(value_err)?;
    Ok(PyBytes::new(py, &frame))
}

/// Decodes every complete frame in `data`.
#[pyfunction]
fn decode_frames<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let msgs = protocol::decode_all(data).map_err(value_err)?;
    msgs.iter().map(|m| to_py(py, m)).collect()
}

#[pyfunction]
fn new_assignment_id() -> String {
    AssignmentId::generate().to_string()
}

/// Returns `(mass, empty)`.
#[pyfunction]
fn histogram(values: Vec<f64>, edges: Vec<f64>) -> (Vec<f64>, bool) {
    let h = analytics::histogram_map_reduce(&values, &edges);
    (h.mass, h.empty)
}

#[pyfunction]
fn average_histograms(edges: Vec<f64>, masses: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let hs: Vec<Histogram> = masses
        .into_iter()
        .map(|mass| Histogram {
            edges: edges.clone(),
            mass,
            empty: false,
        })
        .collect();
    Ok(analytics::average_histograms(&hs).map_err(value_err)?.mass)
}

#[pyfunction]
fn sample_values(values: Vec<f64>, percent: f64, seed: u64) -> Vec<f64> {
    analytics::sample_values(&values, percent, seed)
}

/// `weights` is the bias followed by one weight per feature.
#[pyfunction]
fn local_train(
    weights: Vec<f64>,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    learning_rate: f64,
    epochs: u32,
) -> PyResult<(Vec<f64>, u64)> {
    let model = ModelParams { weights, sample_count: 0 };
    let m = analytics::local_train(&model, &features, &targets, learning_rate, epochs).map_err(value_err)?;
    Ok((m.weights, m.sample_count))
}

/// Takes `(weights, sample_count)` pairs.
#[pyfunction]
fn federated_average(locals: Vec<(Vec<f64>, u64)>) -> PyResult<(Vec<f64>, u64)> {
    let locals: Vec<ModelParams> = locals
        .into_iter()
        .map(|(weights, sample_count)| ModelParams { weights, sample_count })
        .collect();
    let m = analytics::federated_average(&locals).map_err(value_err)?;
    Ok((m.weights, m.sample_count))
}

/// Takes `(timestamp, value, features)` rows; returns `(timestamp, value, score)`
/// for each emitted anomaly.
#[pyfunction]
fn detect_anomalies(
    rows: Vec<(f64, f64, Vec<f64>)>,
    coefficients: Vec<f64>,
    threshold: f64,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let obs: Vec<Observation> = rows
        .into_iter()
        .map(|(timestamp, value, features)| Observation {
            timestamp,
            value,
            features,
        })
        .collect();
    let found = analytics::detect_anomalies(&ClientId::new("local"), "value", &obs, &coefficients, threshold)
        .map_err(value_err)?;
    Ok(found.into_iter().map(|a| (a.timestamp, a.value, a.score)).collect())
}

#[pyfunction]
fn latency_report<'py>(py: Python<'py>, samples_ms: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &LatencyReport::from_samples(samples_ms, Value::Null))
}

/// Cloud, user node and `clients` builtin agents in this process.
#[pyclass(unsendable)]
struct LocalCluster {
    runtime: tokio::runtime::Runtime,
    deployment: Option<LocalDeployment>,
    frontend: FrontendClient,
}

impl LocalCluster {
    fn deployment(&self) -> PyResult<&LocalDeployment> {
        self.deployment
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("cluster is shut down"))
    }
}

#[pymethods]
impl LocalCluster {
    #[new]
    #[pyo3(signature = (clients, transport = "in_process", seed = 0))]
    fn new(clients: usize, transport: &str, seed: u64) -> PyResult<Self> {
        let transport: Transport = transport.parse().map_err(PyValueError::new_err)?;
        let runtime = tokio::runtime::Runtime::new().map_err(value_err)?;
        let (deployment, frontend) = runtime.block_on(async {
            let mut d = LocalDeployment::start(DeploymentConfig::local(transport))
                .await
                .map_err(value_err)?;
            d.add_clients(clients, |i, id| ClientConfig {
                seed: seed + i as u64,
                ..ClientConfig::new(id)
            })
            .map_err(value_err)?;
            let wait = Duration::from_secs(20);
            if !d.wait_for_clients(clients, wait).await || !d.ready(wait).await {
                return Err(PyTimeoutError::new_err("deployment did not come up"));
            }
            let fe = d.frontend().await.map_err(value_err)?;
            Ok((d, fe))
        })?;
        Ok(Self {
            runtime,
            deployment: Some(deployment),
            frontend,
        })
    }

    /// Connected client ids.
    fn fleet(&self) -> PyResult<Vec<String>> {
        let cloud = self.deployment()?.cloud();
        let ids = self.runtime.block_on(cloud.connected_clients());
        Ok(ids.into_iter().map(|c| c.as_str().to_owned()).collect())
    }

    /// Submits an assignment and blocks until its terminal message; returns
    /// every message received for it.
    #[pyo3(signature = (assignment, timeout_s = 60.0))]
    fn run<'py>(
        &mut self,
        py: Python<'py>,
        assignment: &Bound<'py, PyAny>,
        timeout_s: f64,
    ) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.deployment()?;
        let doc: Value = serde_json::from_str(&from_py(assignment)?).map_err(value_err)?;
        let id = match doc.get("assignment_id").and_then(Value::as_str) {
            Some(s) => AssignmentId::new(s),
            None => return Err(PyValueError::new_err("assignment_id is required")),
        };
        let timeout = Duration::from_secs_f64(timeout_s);
        let (runtime, frontend) = (&self.runtime, &mut self.frontend);
        let msgs = py.detach(|| {
            runtime.block_on(async {
                frontend.submit(doc);
                frontend.wait_terminal(&id, timeout).await
            })
        });
        let msgs = msgs.ok_or_else(|| PyTimeoutError::new_err("no terminal message before the timeout"))?;
        msgs.iter().map(|m| to_py(py, m)).collect()
    }

    fn shutdown(&mut self) {
        if let Some(d) = self.deployment.take() {
            self.frontend.close();
            self.runtime.block_on(d.shutdown());
        }
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[pymodule]
fn oodida_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frames, m)?)?;
    m.add_function(wrap_pyfunction!(new_assignment_id, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(average_histograms, m)?)?;
    m.add_function(wrap_pyfunction!(sample_values, m)?)?;
    m.add_function(wrap_pyfunction!(local_train, m)?)?;
    m.add_function(wrap_pyfunction!(federated_average, m)?)?;
    m.add_function(wrap_pyfunction!(detect_anomalies, m)?)?;
    m.add_function(wrap_pyfunction!(latency_report, m)?)?;
    m.add_class::<LocalCluster>()?;
    Ok(())
}
