use std::io;
use std::time::Duration;

use serde_json::Value;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::net::{self, BoxStream, Connector, Peer};
use crate::protocol::{read_message, AssignmentId, Message};

/// Minimal front-end side of the user-node protocol, used by the harness
/// and the tests.
pub struct FrontendClient {
    peer: Peer,
    inbox: mpsc::UnboundedReceiver<Message>,
    reader: JoinHandle<()>,
}

impl FrontendClient {
    pub async fn connect(connector: &impl Connector) -> io::Result<Self> {
        Ok(Self::from_stream(connector.connect().await?))
    }

    pub fn from_stream(stream: BoxStream) -> Self {
        let (mut read, peer) = net::split(stream);
        let (tx, inbox) = mpsc::unbounded_channel();
        let reader = tokio::spawn(async move {
            while let Ok(Some(m)) = read_message(&mut read).await {
                if tx.send(m).is_err() {
                    break;
                }
            }
        });
        Self { peer, inbox, reader }
    }

    pub fn send(&self, m: Message) -> bool {
        self.peer.send(m)
    }

    pub fn submit(&self, assignment: Value) -> bool {
        self.send(Message::SubmitAssignment { assignment })
    }

    pub fn cancel(&self, assignment_id: AssignmentId) -> bool {
        self.send(Message::Cancel { assignment_id })
    }

    /// The next message, or `None` once the connection is closed.
    pub async fn recv(&mut self) -> Option<Message> {
        self.inbox.recv().await
    }

    pub async fn recv_timeout(&mut self, timeout: Duration) -> Option<Message> {
        tokio::time::timeout(timeout, self.inbox.recv()).await.ok().flatten()
    }

    /// Collects messages for `id` until its terminal message (done or
    /// error) arrives. Messages for other assignments are dropped.
    pub async fn wait_terminal(&mut self, id: &AssignmentId, timeout: Duration) -> Option<Vec<Message>> {
        let deadline = Instant::now() + timeout;
        let mut seen = Vec::new();
        loop {
            let m = tokio::time::timeout_at(deadline, self.inbox.recv()).await.ok().flatten()?;
            if message_assignment(&m) != Some(id) {
                continue;
            }
            let terminal = matches!(m, Message::AssignmentDone { .. } | Message::Error { .. });
            seen.push(m);
            if terminal {
                return Some(seen);
            }
        }
    }

    pub fn close(&self) {
        self.peer.close();
    }
}

impl Drop for FrontendClient {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// The assignment a message refers to, if any.
pub fn message_assignment(m: &Message) -> Option<&AssignmentId> {
    match m {
        Message::Ack { assignment_id }
        | Message::AssignmentUpdate { assignment_id, .. }
        | Message::AssignmentDone { assignment_id, .. }
        | Message::Cancel { assignment_id } => Some(assignment_id),
        Message::Error { assignment_id, .. } => assignment_id.as_ref(),
        Message::Result { result } => Some(&result.assignment_id),
        Message::AssignTask { task, .. } => Some(&task.assignment_id),
        _ => None,
    }
}
