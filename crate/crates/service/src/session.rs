//! Interactive feedback sessions held in memory.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use cbir_core::error::{Error, Result};
use cbir_core::feedback::alrf::{Phase, TraceRecord};
use cbir_core::feedback::{expand_query, AlrfConfig, AlrfSession, Fusion, HiKernel};
use cbir_core::retrieval::{rank_by_id, Metric, RankedList};
use cbir_core::store::FeatureTable;

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionScheme {
    Manual,
    Alrf,
}

/// Manual feedback: the user walks the basic ranking page by page; the
/// first `n` images marked relevant become extra queries.
pub struct ManualSession {
    basic: Vec<u32>,
    cursor: usize,
    page_size: usize,
    n: usize,
    fusion: Fusion,
    labels: BTreeMap<u32, bool>,
    pending: Vec<u32>,
    expansion: Vec<u32>,
    rounds: usize,
    finished: bool,
}

impl ManualSession {
    pub fn new(basic: &RankedList, n: usize, page_size: usize, fusion: Fusion) -> Result<Self> {
        if page_size == 0 {
            return Err(Error::InvalidParameter("page size must be positive".into()));
        }
        let mut s = Self {
            basic: basic.ids(),
            cursor: 0,
            page_size,
            n,
            fusion,
            labels: BTreeMap::new(),
            pending: Vec::new(),
            expansion: Vec::new(),
            rounds: 0,
            finished: false,
        };
        s.advance();
        Ok(s)
    }

    fn advance(&mut self) {
        if self.expansion.len() >= self.n || self.cursor >= self.basic.len() {
            self.finished = true;
            return;
        }
        let end = (self.cursor + self.page_size).min(self.basic.len());
        self.pending = self.basic[self.cursor..end].to_vec();
        self.cursor = end;
    }

    pub fn submit(&mut self, labels: &[(u32, bool)]) -> Result<()> {
        if self.finished {
            return Err(Error::SessionFinished);
        }
        let given = check_labels(labels, &self.labels, &self.pending)?;
        for id in std::mem::take(&mut self.pending) {
            let rel = given[&id];
            self.labels.insert(id, rel);
            if rel && self.expansion.len() < self.n {
                self.expansion.push(id);
            }
        }
        self.rounds += 1;
        self.advance();
        Ok(())
    }

    pub fn expansion(&self) -> &[u32] {
        &self.expansion
    }
}

/// Validates labels against the pending proposal and earlier answers.
fn check_labels(labels: &[(u32, bool)], known: &BTreeMap<u32, bool>, pending: &[u32]) -> Result<BTreeMap<u32, bool>> {
    let mut given = BTreeMap::new();
    for &(id, rel) in labels {
        if let Some(&old) = known.get(&id).or(given.get(&id)) {
            if old != rel {
                return Err(Error::LabelConflict(id));
            }
        }
        if !pending.contains(&id) && !known.contains_key(&id) {
            return Err(Error::InvalidParameter(format!("image {id} was not proposed")));
        }
        given.insert(id, rel);
    }
    if let Some(&missing) = pending.iter().find(|id| !given.contains_key(id)) {
        return Err(Error::InvalidParameter(format!("missing label for proposed image {missing}")));
    }
    Ok(given)
}

pub enum SessionState {
    Manual(ManualSession),
    Alrf(AlrfSession),
}

pub struct Session {
    pub id: Uuid,
    pub dataset: String,
    pub kind: String,
    pub metric: Metric,
    pub query_id: u32,
    pub state: SessionState,
    /// Proposal awaiting labels.
    pub proposal: Option<Vec<u32>>,
    pub ranking: RankedList,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: Uuid,
    pub dataset: String,
    pub kind: String,
    pub metric: Metric,
    pub scheme: SessionScheme,
    pub query_id: u32,
    /// `seeding`, `active`, `collecting` or `finished`.
    pub phase: String,
    pub iteration: usize,
    pub max_iterations: Option<usize>,
    pub proposal: Option<Vec<u32>>,
    pub labeled: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansion: Option<Vec<u32>>,
    pub trace: Vec<TraceRecord>,
    pub total: usize,
    pub ranking: Vec<cbir_core::retrieval::Hit>,
}

impl Session {
    pub fn new_manual(
        table: &FeatureTable,
        dataset: &str,
        kind: &str,
        metric: Metric,
        query_id: u32,
        n: usize,
        page_size: usize,
        fusion: Fusion,
    ) -> Result<Self> {
        let basic = rank_by_id(query_id, table, metric, true)?;
        let m = ManualSession::new(&basic, n, page_size, fusion)?;
        let mut s = Self {
            id: Uuid::new_v4(),
            dataset: dataset.into(),
            kind: kind.into(),
            metric,
            query_id,
            proposal: None,
            ranking: basic,
            state: SessionState::Manual(m),
        };
        s.refresh_manual(table)?;
        Ok(s)
    }

    pub fn new_alrf(
        kernel: &HiKernel,
        dataset: &str,
        kind: &str,
        metric: Metric,
        query_id: u32,
        cfg: AlrfConfig,
    ) -> Result<Self> {
        let basic = rank_by_id(query_id, kernel.table(), metric, true)?;
        let a = AlrfSession::new(query_id, &basic, cfg)?;
        let mut s = Self {
            id: Uuid::new_v4(),
            dataset: dataset.into(),
            kind: kind.into(),
            metric,
            query_id,
            proposal: None,
            ranking: basic,
            state: SessionState::Alrf(a),
        };
        s.refresh_alrf(kernel)?;
        Ok(s)
    }

    pub fn scheme(&self) -> SessionScheme {
        match self.state {
            SessionState::Manual(_) => SessionScheme::Manual,
            SessionState::Alrf(_) => SessionScheme::Alrf,
        }
    }

    fn refresh_manual(&mut self, table: &FeatureTable) -> Result<()> {
        let SessionState::Manual(m) = &self.state else { unreachable!() };
        if m.finished {
            self.proposal = None;
            self.ranking = expand_query(self.query_id, table, self.metric, &m.expansion, m.fusion)?;
        } else {
            self.proposal = Some(m.pending.clone());
        }
        Ok(())
    }

    fn refresh_alrf(&mut self, kernel: &HiKernel) -> Result<()> {
        let SessionState::Alrf(a) = &mut self.state else { unreachable!() };
        self.proposal = a.next_proposal(kernel, None)?.map(|p| p.ids);
        if a.phase() != Phase::Seeding {
            self.ranking = a.ranking(kernel)?;
        }
        Ok(())
    }

    pub fn submit_manual(&mut self, table: &FeatureTable, labels: &[(u32, bool)]) -> Result<()> {
        let SessionState::Manual(m) = &mut self.state else {
            return Err(Error::InvalidParameter("not a manual session".into()));
        };
        m.submit(labels)?;
        self.refresh_manual(table)
    }

    pub fn submit_alrf(&mut self, kernel: &HiKernel, labels: &[(u32, bool)]) -> Result<()> {
        let SessionState::Alrf(a) = &mut self.state else {
            return Err(Error::InvalidParameter("not an active-learning session".into()));
        };
        a.submit(labels)?;
        self.refresh_alrf(kernel)
    }

    pub fn view(&self, limit: usize) -> SessionView {
        let (phase, iteration, max_iterations, labeled, expansion, trace) = match &self.state {
            SessionState::Manual(m) => (
                if m.finished { "finished" } else { "collecting" },
                m.rounds,
                None,
                m.labels.len(),
                Some(m.expansion.clone()),
                Vec::new(),
            ),
            SessionState::Alrf(a) => (
                match a.phase() {
                    Phase::Seeding => "seeding",
                    Phase::Active => "active",
                    Phase::Finished => "finished",
                },
                a.iteration(),
                Some(a.cfg.iterations),
                a.known().len() - 1,
                None,
                a.trace().to_vec(),
            ),
        };
        SessionView {
            id: self.id,
            dataset: self.dataset.clone(),
            kind: self.kind.clone(),
            metric: self.metric,
            scheme: self.scheme(),
            query_id: self.query_id,
            phase: phase.into(),
            iteration,
            max_iterations,
            proposal: self.proposal.clone(),
            labeled,
            expansion,
            trace,
            total: self.ranking.len(),
            ranking: self.ranking.hits.iter().take(limit).copied().collect(),
        }
    }
}

struct Slot {
    session: Arc<Mutex<Session>>,
    touched: Instant,
}

/// Session registry with idle expiry. Expired sessions are dropped lazily.
pub struct Sessions {
    slots: Mutex<HashMap<Uuid, Slot>>,
    ttl: Duration,
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            ttl,
        }
    }

    fn sweep(&self, slots: &mut HashMap<Uuid, Slot>) {
        let now = Instant::now();
        slots.retain(|id, s| {
            let keep = now.duration_since(s.touched) <= self.ttl;
            if !keep {
                log::debug!("session {id} expired");
            }
            keep
        });
    }

    pub fn insert(&self, s: Session) -> Arc<Mutex<Session>> {
        let mut slots = self.slots.lock().expect("session registry poisoned");
        self.sweep(&mut slots);
        let id = s.id;
        let session = Arc::new(Mutex::new(s));
        slots.insert(
            id,
            Slot {
                session: Arc::clone(&session),
                touched: Instant::now(),
            },
        );
        session
    }

    pub fn get(&self, id: Uuid) -> Option<Arc<Mutex<Session>>> {
        let mut slots = self.slots.lock().expect("session registry poisoned");
        self.sweep(&mut slots);
        slots.get_mut(&id).map(|s| {
            s.touched = Instant::now();
            Arc::clone(&s.session)
        })
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("session registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbir_core::retrieval::Hit;

    fn list(ids: &[u32]) -> RankedList {
        RankedList {
            query_id: Some(0),
            metric: Metric::Euclidean,
            hits: ids.iter().map(|&id| Hit { id, score: id as f64 }).collect(),
        }
    }

    #[test]
    fn manual_pages_until_n_relevant() {
        let mut m = ManualSession::new(&list(&[1, 2, 3, 4, 5, 6, 7]), 3, 2, Fusion::MeanRank).unwrap();
        assert_eq!(m.pending, vec![1, 2]);
        m.submit(&[(1, true), (2, false)]).unwrap();
        assert_eq!(m.pending, vec![3, 4]);
        assert!(matches!(m.submit(&[(1, false), (3, true), (4, true)]), Err(Error::LabelConflict(1))));
        assert!(m.submit(&[(3, true)]).is_err());
        m.submit(&[(3, true), (4, true)]).unwrap();
        assert!(m.finished);
        assert_eq!(m.expansion(), &[1, 3, 4]);
        assert!(matches!(m.submit(&[]), Err(Error::SessionFinished)));
    }

    #[test]
    fn manual_finishes_when_ranking_runs_out() {
        let mut m = ManualSession::new(&list(&[1, 2, 3]), 5, 2, Fusion::MeanRank).unwrap();
        m.submit(&[(1, false), (2, true)]).unwrap();
        m.submit(&[(3, false)]).unwrap();
        assert!(m.finished);
        assert_eq!(m.expansion(), &[2]);
    }

    #[test]
    fn expired_sessions_disappear() {
        let t = {
            let mut t = FeatureTable::new("d", "x".parse().unwrap(), 1).unwrap();
            for i in 0..4 {
                t.push(i, &[i as f32]).unwrap();
            }
            t
        };
        let reg = Sessions::new(Duration::ZERO);
        let s = Session::new_manual(&t, "d", "x", Metric::Euclidean, 0, 1, 2, Fusion::MeanRank).unwrap();
        let id = s.id;
        reg.insert(s);
        std::thread::sleep(Duration::from_millis(2));
        assert!(reg.get(id).is_none());
        assert!(reg.is_empty());
    }
}
