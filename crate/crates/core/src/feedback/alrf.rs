//! Active-learning relevance feedback with a histogram-intersection SVM.
//!
//! Each round trains the SVM on the labeled set, takes the `p` unlabeled
//! images closest to the decision boundary, clusters them into `h` groups
//! with kernel k-means and proposes the densest member of each group.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{train_svm, SvmModel};
use super::FeedbackOracle;
use crate::error::{Error, Result};
use crate::metrics::{nmrr, QueryJudgment};
use crate::retrieval::{rank_by_id, score_unchecked, Hit, Metric, RankedList};
use crate::store::FeatureTable;

/// Tables up to this size get a precomputed Gram matrix.
pub const GRAM_CACHE_MAX: usize = 6000;
const KERNEL_KMEANS_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlrfConfig {
    pub iterations: usize,
    /// Relevant seed images, the query included.
    pub seed_relevant: usize,
    pub seed_irrelevant: usize,
    /// Uncertain candidates considered per round.
    pub p: usize,
    /// Images proposed per round.
    pub h: usize,
    pub svm_c: f64,
    pub seed: u64,
}

impl Default for AlrfConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            seed_relevant: 2,
            seed_irrelevant: 3,
            p: 20,
            h: 5,
            svm_c: 100.0,
            seed: 0,
        }
    }
}

impl AlrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.h >= self.p {
            return Err(Error::InvalidParameter(format!(
                "active learning needs 0 < h < p, got h = {}, p = {}",
                self.h, self.p
            )));
        }
        if self.seed_relevant == 0 || self.seed_irrelevant == 0 {
            return Err(Error::InvalidParameter(
                "the seed set needs at least one relevant (the query) and one irrelevant image".into(),
            ));
        }
        if !(self.svm_c > 0.0) {
            return Err(Error::InvalidParameter("SVM C must be positive".into()));
        }
        Ok(())
    }

    /// Labeled images once all rounds are done.
    pub fn final_training_size(&self) -> usize {
        self.seed_relevant + self.seed_irrelevant + self.iterations * self.h
    }
}

/// Histogram-intersection kernel over the rows of a table.
pub struct HiKernel<'a> {
    table: &'a FeatureTable,
    gram: Option<Cow<'a, [f64]>>,
}

impl<'a> HiKernel<'a> {
    pub fn new(table: &'a FeatureTable) -> Result<Self> {
        if table.min_value() < 0.0 {
            return Err(Error::NegativeEntry {
                metric: Metric::HistIntersection.name(),
                index: 0,
                value: table.min_value() as f64,
            });
        }
        Ok(Self { table, gram: None })
    }

    /// Like [`HiKernel::new`], precomputing all pairwise values when the
    /// table is small enough.
    pub fn cached(table: &'a FeatureTable) -> Result<Self> {
        let mut k = Self::new(table)?;
        let n = table.len();
        if n <= GRAM_CACHE_MAX {
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| (0..n).map(|j| k.compute(i, j)).collect())
                .collect();
            k.gram = Some(Cow::Owned(rows.concat()));
        }
        Ok(k)
    }

    /// Wraps a Gram matrix computed earlier for the same table.
    pub fn with_gram(table: &'a FeatureTable, gram: &'a [f64]) -> Result<Self> {
        let mut k = Self::new(table)?;
        if gram.len() != table.len() * table.len() {
            return Err(Error::DimensionMismatch {
                expected: table.len() * table.len(),
                actual: gram.len(),
            });
        }
        k.gram = Some(Cow::Borrowed(gram));
        Ok(k)
    }

    /// Precomputed pairwise values, if any.
    pub fn gram(&self) -> Option<&[f64]> {
        self.gram.as_deref()
    }

    /// Consumes the kernel, returning its Gram matrix if one was computed.
    pub fn into_gram(self) -> Option<Vec<f64>> {
        self.gram.map(Cow::into_owned)
    }

    fn compute(&self, i: usize, j: usize) -> f64 {
        score_unchecked(Metric::HistIntersection, self.table.row(i), self.table.row(j))
    }

    pub fn table(&self) -> &FeatureTable {
        self.table
    }

    /// Kernel value between table positions.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match &self.gram {
            Some(g) => g[i * self.table.len() + j],
            None => self.compute(i, j),
        }
    }

    fn pos(&self, id: u32) -> Result<usize> {
        self.table.position(id).ok_or(Error::UnknownId(id))
    }

    fn gram_of(&self, pos: &[usize]) -> Vec<f64> {
        let n = pos.len();
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let v = self.at(pos[a], pos[b]);
                g[a * n + b] = v;
                g[b * n + a] = v;
            }
        }
        g
    }
}

/// SVM trained on labeled ids, kept with the positions it was trained on.
pub struct TrainedSvm {
    pub model: SvmModel,
    positions: Vec<usize>,
}

impl TrainedSvm {
    pub fn train(labeled: &[(u32, bool)], kernel: &HiKernel, c: f64) -> Result<Self> {
        let positions = labeled.iter().map(|&(id, _)| kernel.pos(id)).collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = labeled.iter().map(|&(_, r)| if r { 1.0 } else { -1.0 }).collect();
        let model = train_svm(&kernel.gram_of(&positions), &y, c)?;
        Ok(Self { model, positions })
    }

    pub fn decision_at(&self, kernel: &HiKernel, pos: usize) -> f64 {
        let col: Vec<f64> = self.positions.iter().map(|&t| kernel.at(t, pos)).collect();
        self.model.decision(&col)
    }

    pub fn decision(&self, kernel: &HiKernel, id: u32) -> Result<f64> {
        Ok(self.decision_at(kernel, kernel.pos(id)?))
    }

    /// All table images except `exclude`, by descending decision value, ties by id.
    pub fn rank(&self, kernel: &HiKernel, query_id: u32) -> RankedList {
        let table = kernel.table();
        let mut hits: Vec<Hit> = table
            .ids()
            .par_iter()
            .enumerate()
            .filter(|(_, &id)| id != query_id)
            .map(|(p, &id)| Hit {
                id,
                score: self.decision_at(kernel, p),
            })
            .collect();
        RankedList::sort_hits(Metric::HistIntersection, &mut hits);
        RankedList {
            query_id: Some(query_id),
            metric: Metric::HistIntersection,
            hits,
        }
    }
}

/// Deterministic per-(query, round) seed.
pub fn round_seed(seed: u64, query_id: u32, iteration: usize) -> u64 {
    // splitmix64 finalizer over the packed inputs
    let mut z = seed ^ ((query_id as u64) << 32) ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Kernel k-means over an `m x m` Gram matrix with farthest-first seeding
/// from a random first center. Returns a cluster index per point.
fn kernel_kmeans(g: &[f64], m: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let d = |a: usize, b: usize| g[a * m + a] + g[b * m + b] - 2.0 * g[a * m + b];
    let mut centers = vec![rng.random_range(0..m)];
    let mut near: Vec<f64> = (0..m).map(|x| d(x, centers[0])).collect();
    while centers.len() < h {
        let mut far = 0;
        for x in 1..m {
            if near[x] > near[far] {
                far = x;
            }
        }
        centers.push(far);
        for x in 0..m {
            near[x] = near[x].min(d(x, far));
        }
    }
    let mut assign: Vec<usize> = (0..m)
        .map(|x| {
            (0..h)
                .min_by(|&a, &b| d(x, centers[a]).total_cmp(&d(x, centers[b])).then(a.cmp(&b)))
                .expect("h >= 1")
        })
        .collect();
    // a center always starts in its own cluster
    for (ci, &c) in centers.iter().enumerate() {
        assign[c] = ci;
    }

    for _ in 0..KERNEL_KMEANS_ITERS {
        let members: Vec<Vec<usize>> = (0..h).map(|c| (0..m).filter(|&x| assign[x] == c).collect()).collect();
        let self_terms: Vec<f64> = members
            .iter()
            .map(|mem| {
                let s: f64 = mem.iter().flat_map(|&a| mem.iter().map(move |&b| (a, b))).map(|(a, b)| g[a * m + b]).sum();
                if mem.is_empty() {
                    0.0
                } else {
                    s / (mem.len() * mem.len()) as f64
                }
            })
            .collect();
        let dist = |x: usize, c: usize| -> f64 {
            let mem = &members[c];
            if mem.is_empty() {
                return f64::INFINITY;
            }
            let cross: f64 = mem.iter().map(|&b| g[x * m + b]).sum();
            g[x * m + x] - 2.0 * cross / mem.len() as f64 + self_terms[c]
        };
        let mut next: Vec<usize> = (0..m)
            .map(|x| (0..h).min_by(|&a, &b| dist(x, a).total_cmp(&dist(x, b)).then(a.cmp(&b))).expect("h >= 1"))
            .collect();
        // refill emptied clusters with the point farthest from its cluster
        for c in 0..h {
            if next.iter().any(|&a| a == c) {
                continue;
            }
            let sizes = |next: &[usize], k: usize| next.iter().filter(|&&a| a == k).count();
            let donor = (0..m)
                .filter(|&x| sizes(&next, next[x]) > 1)
                .max_by(|&a, &b| dist(a, next[a]).total_cmp(&dist(b, next[b])).then(b.cmp(&a)));
            if let Some(x) = donor {
                next[x] = c;
            }
        }
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Picks `h` images to label: the `p` candidates with the smallest
/// `|f(x)|` (ties by ascending id) are clustered into `h` groups with kernel
/// k-means, and each group contributes its member with the largest mean
/// kernel value to the other members (ties by ascending id).
pub fn alrf_select(
    svm: &TrainedSvm,
    candidates: &[u32],
    kernel: &HiKernel,
    p: usize,
    h: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    if h == 0 {
        return Ok(Vec::new());
    }
    let mut scored = candidates
        .par_iter()
        .map(|&id| Ok((id, kernel.pos(id)?, svm.decision(kernel, id)?.abs())))
        .collect::<Result<Vec<(u32, usize, f64)>>>()?;
    if scored.len() < p {
        log::warn!("only {} candidates for p = {p}; using all", scored.len());
    }
    scored.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    scored.truncate(p);
    if scored.len() <= h {
        return Ok(scored.into_iter().map(|s| s.0).collect());
    }
    let m = scored.len();
    let positions: Vec<usize> = scored.iter().map(|s| s.1).collect();
    let g = kernel.gram_of(&positions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assign = kernel_kmeans(&g, m, h, &mut rng);
    let mut out = Vec::with_capacity(h);
    for c in 0..h {
        let mem: Vec<usize> = (0..m).filter(|&x| assign[x] == c).collect();
        let density = |x: usize| -> f64 {
            if mem.len() == 1 {
                return 0.0;
            }
            mem.iter().filter(|&&o| o != x).map(|&o| g[x * m + o]).sum::<f64>() / (mem.len() - 1) as f64
        };
        if let Some(best) = mem
            .iter()
            .copied()
            .max_by(|&a, &b| density(a).total_cmp(&density(b)).then(scored[b].0.cmp(&scored[a].0)))
        {
            out.push(scored[best].0);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Collecting the seed set from the basic ranking.
    Seeding,
    /// Active-learning rounds.
    Active,
    Finished,
}

/// One active-learning round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub shown: Vec<u32>,
    pub labels: Vec<bool>,
    /// NMRR of the ranking by the model that chose `shown`, when ground truth is known.
    pub anmrr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub phase: Phase,
    pub iteration: usize,
    pub ids: Vec<u32>,
}

/// Stepwise AL-RF state, shared by the batch driver and interactive sessions.
///
/// The seed set is gathered by showing the basic ranking in chunks of `h`;
/// of the labeled chunk images only the first `seed_relevant - 1` relevant
/// and `seed_irrelevant` irrelevant ones (in rank order) join the training
/// set, the others are just marked as seen. Seen images are never proposed.
#[derive(Clone, Debug)]
pub struct AlrfSession {
    pub query_id: u32,
    pub cfg: AlrfConfig,
    basic: Vec<u32>,
    cursor: usize,
    known: BTreeMap<u32, bool>,
    training: Vec<(u32, bool)>,
    pending: Vec<u32>,
    phase: Phase,
    iteration: usize,
    trace: Vec<TraceRecord>,
}

impl AlrfSession {
    pub fn new(query_id: u32, basic: &RankedList, cfg: AlrfConfig) -> Result<Self> {
        cfg.validate()?;
        let mut known = BTreeMap::new();
        known.insert(query_id, true);
        Ok(Self {
            query_id,
            cfg,
            basic: basic.ids().into_iter().filter(|&id| id != query_id).collect(),
            cursor: 0,
            known,
            training: vec![(query_id, true)],
            pending: Vec::new(),
            phase: Phase::Seeding,
            iteration: 0,
            trace: Vec::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn training(&self) -> &[(u32, bool)] {
        &self.training
    }

    pub fn known(&self) -> &BTreeMap<u32, bool> {
        &self.known
    }

    pub fn pending(&self) -> &[u32] {
        &self.pending
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    fn seed_needs(&self) -> (usize, usize) {
        let rel = self.training.iter().filter(|t| t.1).count();
        let irr = self.training.len() - rel;
        (
            self.cfg.seed_relevant.saturating_sub(rel),
            self.cfg.seed_irrelevant.saturating_sub(irr),
        )
    }

    /// Images to label next, or `None` once all rounds are done. Calling it
    /// again before [`AlrfSession::submit`] returns the same proposal.
    pub fn next_proposal(&mut self, kernel: &HiKernel, truth: Option<&FeedbackOracle>) -> Result<Option<Proposal>> {
        if self.phase == Phase::Finished {
            return Ok(None);
        }
        if !self.pending.is_empty() {
            return Ok(Some(self.proposal()));
        }
        if self.phase == Phase::Seeding {
            if self.seed_needs() == (0, 0) {
                self.phase = Phase::Active;
            } else {
                let chunk: Vec<u32> = self.basic[self.cursor..]
                    .iter()
                    .copied()
                    .filter(|id| !self.known.contains_key(id))
                    .take(self.cfg.h)
                    .collect();
                if chunk.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "query {}: the ranking holds too few relevant or irrelevant images for the seed set",
                        self.query_id
                    )));
                }
                self.pending = chunk;
                return Ok(Some(self.proposal()));
            }
        }
        if self.iteration >= self.cfg.iterations {
            self.phase = Phase::Finished;
            return Ok(None);
        }
        let svm = TrainedSvm::train(&self.training, kernel, self.cfg.svm_c)?;
        let candidates: Vec<u32> = kernel
            .table()
            .ids()
            .iter()
            .copied()
            .filter(|id| !self.known.contains_key(id))
            .collect();
        let seed = round_seed(self.cfg.seed, self.query_id, self.iteration);
        let shown = alrf_select(&svm, &candidates, kernel, self.cfg.p, self.cfg.h, seed)?;
        if shown.is_empty() {
            self.phase = Phase::Finished;
            return Ok(None);
        }
        let anmrr = match truth {
            Some(o) => {
                let ids = svm.rank(kernel, self.query_id).ids();
                nmrr(&QueryJudgment::from_ranking(self.query_id, &ids, o)?)
            }
            None => None,
        };
        self.trace.push(TraceRecord {
            iteration: self.iteration + 1,
            shown: shown.clone(),
            labels: Vec::new(),
            anmrr,
        });
        self.pending = shown;
        Ok(Some(self.proposal()))
    }

    fn proposal(&self) -> Proposal {
        Proposal {
            phase: self.phase,
            iteration: self.iteration,
            ids: self.pending.clone(),
        }
    }

    /// Records labels for the pending proposal. Every pending id must be
    /// labeled; labels for already-known ids must agree with earlier ones.
    pub fn submit(&mut self, labels: &[(u32, bool)]) -> Result<()> {
        if self.phase == Phase::Finished {
            return Err(Error::SessionFinished);
        }
        let mut given: BTreeMap<u32, bool> = BTreeMap::new();
        for &(id, rel) in labels {
            if let Some(&old) = self.known.get(&id).or(given.get(&id)) {
                if old != rel {
                    return Err(Error::LabelConflict(id));
                }
            }
            if !self.pending.contains(&id) && !self.known.contains_key(&id) {
                return Err(Error::InvalidParameter(format!("image {id} was not proposed")));
            }
            given.insert(id, rel);
        }
        if let Some(&missing) = self.pending.iter().find(|id| !given.contains_key(id)) {
            return Err(Error::InvalidParameter(format!("missing label for proposed image {missing}")));
        }
        let pending = std::mem::take(&mut self.pending);
        match self.phase {
            Phase::Seeding => {
                for id in pending {
                    let rel = given[&id];
                    let (need_rel, need_irr) = self.seed_needs();
                    if (rel && need_rel > 0) || (!rel && need_irr > 0) {
                        self.training.push((id, rel));
                    }
                    self.known.insert(id, rel);
                }
                let seen: HashSet<u32> = self.known.keys().copied().collect();
                while self.cursor < self.basic.len() && seen.contains(&self.basic[self.cursor]) {
                    self.cursor += 1;
                }
            }
            Phase::Active => {
                let record = self.trace.last_mut().expect("active proposal has a trace record");
                record.labels = pending.iter().map(|id| given[id]).collect();
                for id in pending {
                    let rel = given[&id];
                    self.training.push((id, rel));
                    self.known.insert(id, rel);
                }
                self.iteration += 1;
            }
            Phase::Finished => unreachable!(),
        }
        Ok(())
    }

    /// Ranking by the SVM trained on the current labeled set.
    pub fn ranking(&self, kernel: &HiKernel) -> Result<RankedList> {
        let svm = TrainedSvm::train(&self.training, kernel, self.cfg.svm_c)?;
        Ok(svm.rank(kernel, self.query_id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlrfOutcome {
    pub list: RankedList,
    pub trace: Vec<TraceRecord>,
    pub training: Vec<(u32, bool)>,
}

/// Runs a full session with the oracle answering every proposal. The seed
/// set comes from the basic ranking under `metric`.
pub fn alrf_session(
    query_id: u32,
    kernel: &HiKernel,
    metric: Metric,
    oracle: &FeedbackOracle,
    cfg: &AlrfConfig,
) -> Result<AlrfOutcome> {
    let basic = rank_by_id(query_id, kernel.table(), metric, true)?;
    let mut s = AlrfSession::new(query_id, &basic, *cfg)?;
    while let Some(p) = s.next_proposal(kernel, Some(oracle))? {
        let labels = p
            .ids
            .iter()
            .map(|&id| Ok((id, oracle.is_relevant(query_id, id)?)))
            .collect::<Result<Vec<_>>>()?;
        s.submit(&labels)?;
    }
    Ok(AlrfOutcome {
        list: s.ranking(kernel)?,
        trace: s.trace,
        training: s.training,
    })
}
