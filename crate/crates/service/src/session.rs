//! In-memory sessions: uploaded inputs, calibration state, and recent edits.

use color_mapper::{ColorMapperModel, Gamut, ImageBuffer, MaskBuffer, TrainReport};
use serde::Serialize;
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

pub const HISTORY_LIMIT: usize = 50;
/// Sweeps whose images stay downloadable per session.
pub const SWEEP_LIMIT: usize = 8;

/// Samples generated so far out of the total; `done` never decreases.
#[derive(Debug, Default)]
pub struct Progress {
    done: AtomicUsize,
    total: AtomicUsize,
}

impl Progress {
    pub fn reset(&self, total: usize) {
        self.done.store(0, Ordering::SeqCst);
        self.total.store(total, Ordering::SeqCst);
    }

    pub fn advance(&self, done: usize) {
        self.done.fetch_max(done, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> (usize, usize) {
        (self.done.load(Ordering::SeqCst), self.total.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationStatus {
    Idle,
    Running,
    Done,
    Failed(String),
}

impl CalibrationStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CalibrationStatus::Idle => "idle",
            CalibrationStatus::Running => "running",
            CalibrationStatus::Done => "done",
            CalibrationStatus::Failed(_) => "failed",
        }
    }
}

/// Outcome of a finished calibration kept for status queries.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub model: Arc<ColorMapperModel>,
    pub train_report: TrainReport,
    pub pca_dims_used: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryEntry {
    pub requested_rgb: [u8; 3],
    pub measured_rgb: [u8; 3],
    pub out_of_gamut: bool,
    pub seed: u64,
}

#[derive(Debug)]
pub struct Session {
    pub image: Option<ImageBuffer>,
    pub mask: Option<MaskBuffer>,
    pub status: CalibrationStatus,
    pub progress: Arc<Progress>,
    /// Present exactly when `status` is `Done`.
    pub calibrated: Option<Calibrated>,
    pub history: VecDeque<HistoryEntry>,
    pub sweeps: VecDeque<(String, Vec<Vec<u8>>)>,
    pub last_used: Instant,
}

impl Session {
    fn new() -> Self {
        Self {
            image: None,
            mask: None,
            status: CalibrationStatus::Idle,
            progress: Arc::new(Progress::default()),
            calibrated: None,
            history: VecDeque::new(),
            sweeps: VecDeque::new(),
            last_used: Instant::now(),
        }
    }

    pub fn gamut(&self) -> Option<Gamut> {
        self.calibrated.as_ref().map(|c| c.model.gamut())
    }

    pub fn record_edit(&mut self, entry: HistoryEntry) {
        if self.history.len() == HISTORY_LIMIT {
            self.history.pop_front();
        }
        self.history.push_back(entry);
    }

    pub fn store_sweep(&mut self, id: String, pngs: Vec<Vec<u8>>) {
        if self.sweeps.len() == SWEEP_LIMIT {
            self.sweeps.pop_front();
        }
        self.sweeps.push_back((id, pngs));
    }

    pub fn sweep_image(&self, id: &str, index: usize) -> Option<&[u8]> {
        self.sweeps
            .iter()
            .find(|(sid, _)| sid == id)
            .and_then(|(_, pngs)| pngs.get(index))
            .map(Vec::as_slice)
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// Locks a session, recovering from a poisoned lock (the state is plain data).
pub fn lock(handle: &SessionHandle) -> MutexGuard<'_, Session> {
    handle.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    pub fn create(&self) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        map.insert(id.clone(), Arc::new(Mutex::new(Session::new())));
        id
    }

    /// Looks up a session and marks it as used.
    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        let handle = map.get(id).cloned()?;
        lock(&handle).last_used = Instant::now();
        Some(handle)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops sessions idle for longer than `idle`, except those still calibrating.
    /// Returns how many were removed.
    pub fn evict_idle(&self, idle: Duration) -> usize {
        let now = Instant::now();
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let before = map.len();
        map.retain(|_, handle| {
            let s = lock(handle);
            s.status == CalibrationStatus::Running || now.duration_since(s.last_used) <= idle
        });
        before - map.len()
    }
}
