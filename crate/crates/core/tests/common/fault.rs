use std::time::Duration;

use oodida::events::EventKind;
use oodida::harness::{LocalDeployment, Transport};
use oodida::protocol::{AssignmentId, ClientId, DoneStatus, Message};
use serde_json::json;

use super::*;

/// Contributor counts per iteration and the number of terminal messages
/// the front-end saw.
#[derive(Debug)]
pub struct FaultOutcome {
    pub contributors: Vec<usize>,
    pub joined_mid_iteration: bool,
    pub terminals: usize,
    pub status: Option<DoneStatus>,
}

/// Five clients, three iterations. One client is killed during the first
/// iteration and restarted during the second.
pub async fn kill_and_rejoin(transport: Transport) -> FaultOutcome {
    let mut config = oodida::harness::DeploymentConfig::local(transport);
    config.cloud = fast_cloud();
    let mut d = LocalDeployment::start(config).await.unwrap();
    for i in 0..5 {
        d.add_client(oodida::client::ClientConfig {
            simulated_latency: Some(Duration::from_millis(400)),
            ..fast_client(&format!("c{i}"), i)
        })
        .unwrap();
    }
    assert!(d.wait_for_clients(5, WAIT).await && d.ready(WAIT).await);

    let mut events = d.events().subscribe();
    let mut fe = d.frontend().await.unwrap();
    let id = AssignmentId::generate();
    fe.submit(sample_doc(&id, json!({"finite": 3}), json!("all")));

    let victim = ClientId::new("c4");
    let mut contributors = Vec::new();
    let mut joined = false;
    while contributors.len() < 3 {
        let Ok(Some(ev)) = tokio::time::timeout(WAIT, events.recv()).await else {
            break;
        };
        match ev.kind {
            EventKind::IterationStarted { assignment_id, iteration, .. } if assignment_id == id => {
                tokio::time::sleep(Duration::from_millis(100)).await;
                if iteration == 0 {
                    d.kill_client(&victim);
                } else if iteration == 1 {
                    d.restart_client(&victim).unwrap();
                }
            }
            EventKind::ClientJoinedIteration { assignment_id, iteration: 1, client_id } if assignment_id == id => {
                joined |= client_id == victim;
            }
            EventKind::IterationCompleted { assignment_id, contributors: c, .. } if assignment_id == id => {
                contributors.push(c.len());
            }
            _ => {}
        }
    }

    let msgs = fe.wait_terminal(&id, WAIT).await.unwrap_or_default();
    let status = msgs.iter().find_map(|m| match m {
        Message::AssignmentDone { status, .. } => Some(*status),
        _ => None,
    });
    // Anything after the terminal message would also count.
    let mut terminals = terminal_count(&msgs);
    while let Some(m) = fe.recv_timeout(Duration::from_millis(300)).await {
        if oodida::user::message_assignment(&m) == Some(&id) {
            terminals += terminal_count(std::slice::from_ref(&m));
        }
    }
    d.shutdown().await;
    FaultOutcome {
        contributors,
        joined_mid_iteration: joined,
        terminals,
        status,
    }
}
