use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tokio::time::Instant;

use crate::net::Peer;
use crate::protocol::{AssignmentId, ClientId, ClientSelection};

/// One live connection of a client.
#[derive(Debug, Clone)]
pub struct ClientLink {
    pub client_id: ClientId,
    pub conn_id: u64,
    pub peer: Peer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Connected,
    Grace { deadline: Instant },
}

#[derive(Debug)]
struct Entry {
    link: Option<ClientLink>,
    liveness: Liveness,
    last_heartbeat: Instant,
}

#[derive(Debug, Default)]
pub struct RegisterOutcome {
    /// Previous live connection of the same client, already replaced.
    pub superseded: Option<ClientLink>,
    pub was_in_grace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("selection resolved to no connected client")]
pub struct EmptySelection;

/// How `Count(n)` selections choose among connected clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountPolicy {
    Lexicographic,
    Seeded(u64),
}

impl CountPolicy {
    /// Seeded policies mix in the assignment and iteration so that every
    /// iteration draws its own reproducible subset.
    pub fn for_iteration(self, assignment: &AssignmentId, iteration: u32) -> Self {
        match self {
            CountPolicy::Lexicographic => self,
            CountPolicy::Seeded(seed) => {
                let mut h = std::collections::hash_map::DefaultHasher::new();
                (seed, assignment.as_str(), iteration).hash(&mut h);
                CountPolicy::Seeded(h.finish())
            }
        }
    }
}

/// Resolves a selection against the sorted set of connected ids.
pub fn resolve_selection<'a>(
    selection: &ClientSelection,
    connected: impl IntoIterator<Item = &'a ClientId>,
    policy: CountPolicy,
) -> Result<Vec<ClientId>, EmptySelection> {
    let mut connected: Vec<&ClientId> = connected.into_iter().collect();
    connected.sort();
    connected.dedup();
    let chosen: Vec<ClientId> = match selection {
        ClientSelection::All => connected.into_iter().cloned().collect(),
        ClientSelection::Ids(ids) => {
            let mut v: Vec<ClientId> = ids.iter().filter(|id| connected.binary_search(id).is_ok()).cloned().collect();
            v.sort();
            v
        }
        ClientSelection::Count(n) => {
            let n = *n as usize;
            match policy {
                CountPolicy::Lexicographic => connected.into_iter().take(n).cloned().collect(),
                CountPolicy::Seeded(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut v: Vec<ClientId> = connected.choose_multiple(&mut rng, n).map(|c| (*c).clone()).collect();
                    v.sort();
                    v
                }
            }
        }
    };
    if chosen.is_empty() {
        Err(EmptySelection)
    } else {
        Ok(chosen)
    }
}

/// Live map of static client ids to their connection and liveness. Owned by
/// the coordinator; every mutation goes through it.
#[derive(Debug, Default)]
pub struct ClientRegistry {
    entries: BTreeMap<ClientId, Entry>,
}

impl ClientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, link: ClientLink, now: Instant) -> RegisterOutcome {
        let id = link.client_id.clone();
        let fresh = Entry {
            link: Some(link),
            liveness: Liveness::Connected,
            last_heartbeat: now,
        };
        match self.entries.insert(id, fresh) {
            None => RegisterOutcome::default(),
            Some(old) => RegisterOutcome {
                was_in_grace: matches!(old.liveness, Liveness::Grace { .. }),
                superseded: old.link,
            },
        }
    }

    /// Moves a connected client into its grace period. Ignored when
    /// `conn_id` no longer names the client's current connection.
    pub fn mark_lost(&mut self, id: &ClientId, conn_id: u64, now: Instant, grace: Duration) -> Option<Instant> {
        let entry = self.entries.get_mut(id)?;
        let current = entry.link.as_ref().map(|l| l.conn_id);
        if current != Some(conn_id) {
            return None;
        }
        let deadline = now + grace;
        entry.link = None;
        entry.liveness = Liveness::Grace { deadline };
        Some(deadline)
    }

    pub fn heartbeat(&mut self, id: &ClientId, conn_id: u64, now: Instant) {
        if let Some(e) = self.entries.get_mut(id) {
            if e.link.as_ref().map(|l| l.conn_id) == Some(conn_id) {
                e.last_heartbeat = now;
            }
        }
    }

    /// Removes every entry whose grace deadline has passed.
    pub fn expire(&mut self, now: Instant) -> Vec<ClientId> {
        let expired: Vec<ClientId> = self
            .entries
            .iter()
            .filter(|(_, e)| matches!(e.liveness, Liveness::Grace { deadline } if deadline <= now))
            .map(|(id, _)| id.clone())
            .collect();
        for id in &expired {
            self.entries.remove(id);
        }
        expired
    }

    /// Connected clients silent for longer than `limit`.
    pub fn lapsed(&self, now: Instant, limit: Duration) -> Vec<ClientLink> {
        self.entries
            .values()
            .filter(|e| e.liveness == Liveness::Connected && now.duration_since(e.last_heartbeat) > limit)
            .filter_map(|e| e.link.clone())
            .collect()
    }

    pub fn liveness(&self, id: &ClientId) -> Option<Liveness> {
        self.entries.get(id).map(|e| e.liveness)
    }

    pub fn link(&self, id: &ClientId) -> Option<&ClientLink> {
        self.entries.get(id).and_then(|e| e.link.as_ref())
    }

    pub fn connected_ids(&self) -> Vec<ClientId> {
        self.entries
            .iter()
            .filter(|(_, e)| e.link.is_some())
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, selection: &ClientSelection, policy: CountPolicy) -> Result<Vec<ClientLink>, EmptySelection> {
        let connected = self.connected_ids();
        let ids = resolve_selection(selection, &connected, policy)?;
        Ok(ids.iter().filter_map(|id| self.link(id).cloned()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(v: &[&str]) -> Vec<ClientId> {
        v.iter().map(|s| ClientId::new(*s)).collect()
    }

    fn link(id: &str, conn: u64) -> ClientLink {
        let (peer, _rx) = Peer::detached();
        ClientLink {
            client_id: id.into(),
            conn_id: conn,
            peer,
        }
    }

    #[test]
    fn resolve_all_and_ids() {
        let fleet = ids(&["c1", "c2", "c3"]);
        assert_eq!(resolve_selection(&ClientSelection::All, &fleet, CountPolicy::Lexicographic).unwrap(), fleet);
        let sub = ClientSelection::Ids(ids(&["c1", "c3"]));
        assert_eq!(resolve_selection(&sub, &fleet, CountPolicy::Lexicographic).unwrap(), ids(&["c1", "c3"]));
        let offline = ClientSelection::Ids(ids(&["c9", "c3"]));
        assert_eq!(resolve_selection(&offline, &fleet, CountPolicy::Lexicographic).unwrap(), ids(&["c3"]));
        let none = ClientSelection::Ids(ids(&["c9"]));
        assert_eq!(resolve_selection(&none, &fleet, CountPolicy::Lexicographic), Err(EmptySelection));
        assert_eq!(resolve_selection(&ClientSelection::All, &[], CountPolicy::Lexicographic), Err(EmptySelection));
    }

    #[test]
    fn count_picks_lexicographic_minimum() {
        let fleet = ids(&["c3", "c1", "c2"]);
        let got = resolve_selection(&ClientSelection::Count(2), &fleet, CountPolicy::Lexicographic).unwrap();
        // Oracle: enumerate all 2-subsets and take the lexicographically smallest sorted one.
        let mut subsets = Vec::new();
        for i in 0..fleet.len() {
            for j in i + 1..fleet.len() {
                let mut s = vec![fleet[i].clone(), fleet[j].clone()];
                s.sort();
                subsets.push(s);
            }
        }
        subsets.sort();
        assert_eq!(got, subsets[0]);
        assert_eq!(got, ids(&["c1", "c2"]));
        let all = resolve_selection(&ClientSelection::Count(10), &fleet, CountPolicy::Lexicographic).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn seeded_count_is_reproducible_subset() {
        let fleet: Vec<ClientId> = (0..20).map(|i| ClientId::new(format!("c{i:02}"))).collect();
        let a = resolve_selection(&ClientSelection::Count(5), &fleet, CountPolicy::Seeded(7)).unwrap();
        let b = resolve_selection(&ClientSelection::Count(5), &fleet, CountPolicy::Seeded(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 5);
        assert!(a.iter().all(|c| fleet.contains(c)));
    }

    #[tokio::test]
    async fn register_and_grace_lifecycle() {
        let now = Instant::now();
        let mut reg = ClientRegistry::new();
        reg.register(link("c1", 1), now);
        assert_eq!(reg.liveness(&"c1".into()), Some(Liveness::Connected));

        // stale connection id is ignored
        assert!(reg.mark_lost(&"c1".into(), 99, now, Duration::from_secs(30)).is_none());
        let deadline = reg.mark_lost(&"c1".into(), 1, now, Duration::from_secs(30)).unwrap();
        assert_eq!(reg.liveness(&"c1".into()), Some(Liveness::Grace { deadline }));
        assert!(reg.connected_ids().is_empty());

        // reconnect within grace
        let out = reg.register(link("c1", 2), now + Duration::from_secs(5));
        assert!(out.was_in_grace);
        assert!(out.superseded.is_none());
        assert_eq!(reg.liveness(&"c1".into()), Some(Liveness::Connected));
        assert!(reg.expire(now + Duration::from_secs(60)).is_empty());

        // lose again and let grace expire
        reg.mark_lost(&"c1".into(), 2, now, Duration::from_secs(30));
        assert!(reg.expire(now + Duration::from_secs(29)).is_empty());
        assert_eq!(reg.expire(now + Duration::from_secs(30)), ids(&["c1"]));
        assert!(reg.is_empty());
    }

    #[tokio::test]
    async fn second_connection_supersedes_first() {
        let now = Instant::now();
        let mut reg = ClientRegistry::new();
        reg.register(link("c1", 1), now);
        let out = reg.register(link("c1", 2), now);
        assert_eq!(out.superseded.unwrap().conn_id, 1);
        assert_eq!(reg.link(&"c1".into()).unwrap().conn_id, 2);
        assert_eq!(reg.len(), 1);
        // the old connection breaking afterwards must not evict the new one
        assert!(reg.mark_lost(&"c1".into(), 1, now, Duration::from_secs(1)).is_none());
        assert_eq!(reg.liveness(&"c1".into()), Some(Liveness::Connected));
    }

    #[tokio::test]
    async fn heartbeat_lapse_detection() {
        let now = Instant::now();
        let mut reg = ClientRegistry::new();
        reg.register(link("c1", 1), now);
        reg.register(link("c2", 2), now);
        reg.heartbeat(&"c2".into(), 2, now + Duration::from_secs(10));
        let lapsed = reg.lapsed(now + Duration::from_secs(16), Duration::from_secs(15));
        assert_eq!(lapsed.len(), 1);
        assert_eq!(lapsed[0].client_id, ClientId::new("c1"));
    }
}
