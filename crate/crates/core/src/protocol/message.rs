use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::{
    Aggregate, AssignmentId, ClientId, DoneStatus, PendingAssignment, TaskResult, TaskSpec,
};

/// Every message exchanged between front-ends, user nodes, the cloud and
/// client agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    RegisterClient {
        client_id: ClientId,
    },
    /// Carries the raw assignment document so that the receiver can report
    /// every schema violation instead of failing the whole frame.
    SubmitAssignment {
        assignment: Value,
    },
    Ack {
        assignment_id: AssignmentId,
    },
    AssignTask {
        target: ClientId,
        task: TaskSpec,
    },
    Result {
        result: TaskResult,
    },
    AssignmentUpdate {
        assignment_id: AssignmentId,
        iteration: u32,
        aggregate: Aggregate,
    },
    AssignmentDone {
        assignment_id: AssignmentId,
        status: DoneStatus,
        aggregate: Aggregate,
    },
    Cancel {
        assignment_id: AssignmentId,
    },
    Heartbeat {
        client_id: ClientId,
    },
    Error {
        code: String,
        detail: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        assignment_id: Option<AssignmentId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        iteration: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_id: Option<ClientId>,
    },
    StatusRequest,
    StatusResponse {
        assignments: Vec<PendingAssignment>,
    },
    FleetRequest {
        request_id: u64,
    },
    FleetResponse {
        request_id: u64,
        clients: Vec<ClientId>,
    },
}

impl Message {
    pub const KINDS: [&'static str; 14] = [
        "register_client",
        "submit_assignment",
        "ack",
        "assign_task",
        "result",
        "assignment_update",
        "assignment_done",
        "cancel",
        "heartbeat",
        "error",
        "status_request",
        "status_response",
        "fleet_request",
        "fleet_response",
    ];

    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::RegisterClient { .. } => "register_client",
            Message::SubmitAssignment { .. } => "submit_assignment",
            Message::Ack { .. } => "ack",
            Message::AssignTask { .. } => "assign_task",
            Message::Result { .. } => "result",
            Message::AssignmentUpdate { .. } => "assignment_update",
            Message::AssignmentDone { .. } => "assignment_done",
            Message::Cancel { .. } => "cancel",
            Message::Heartbeat { .. } => "heartbeat",
            Message::Error { .. } => "error",
            Message::StatusRequest => "status_request",
            Message::StatusResponse { .. } => "status_response",
            Message::FleetRequest { .. } => "fleet_request",
            Message::FleetResponse { .. } => "fleet_response",
        }
    }

    pub fn is_known_kind(kind: &str) -> bool {
        Self::KINDS.contains(&kind)
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_owned(),
            detail: detail.into(),
            assignment_id: None,
            iteration: None,
            client_id: None,
        }
    }
}
