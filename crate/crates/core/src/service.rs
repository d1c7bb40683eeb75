//! In-memory editing sessions: build a stack once, edit it many times.
//!
//! Each session keeps the stack it was built from, the current stack and
//! an append-only log of applied ops. The current stack is an immutable
//! snapshot behind an `Arc`, so renders never wait on edits. Writes to one
//! session are serialized; a second concurrent writer gets [`Error::Busy`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::edit::{apply_op, crop_instance, render, replay, EditOp, Position, Transform2D};
use crate::error::{Error, Result};
use crate::io::{
    encode_alpha_png, encode_color_png, export_scene, load_scene, quantize_crop, LoadedScene, SceneManifest,
};
use crate::model::{AlphaMatte, Image, PlaneId, PlaneKind, SceneStack};

pub const MAX_SESSIONS_ENV: &str = "MPSTACK_MAX_SESSIONS";
pub const DEFAULT_MAX_SESSIONS: usize = 64;

/// Where a dragged plane comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneRef {
    pub scene: String,
    pub plane: PlaneId,
}

/// An edit as submitted by a client. `drag` moves a plane within its own
/// scene; `drag_across` pastes a plane taken from any live session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpRequest {
    Remove {
        plane: PlaneId,
    },
    Reorder {
        p: PlaneId,
        q: PlaneId,
    },
    Drag {
        plane: PlaneId,
        position: Position,
        #[serde(default)]
        transform: Transform2D,
    },
    DragAcross {
        source: PlaneRef,
        position: Position,
        #[serde(default)]
        transform: Transform2D,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpSummary {
    pub op: String,
    /// Wall time of the edit itself, excluding any render.
    pub latency_ms: f64,
    pub affected: Vec<PlaneId>,
    pub log_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub id: PlaneId,
    pub kind: PlaneKind,
    /// Absent for the background, which sits at infinite depth.
    pub depth: Option<f64>,
    pub footprint_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub plane_count: usize,
    /// Front to back.
    pub planes: Vec<PlaneSummary>,
    pub log_len: usize,
    pub built_at_unix_s: f64,
    pub build_latency_ms: f64,
    pub op_latencies_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

struct SessionState {
    current: Arc<SceneStack>,
    log: Vec<EditOp>,
    latencies: Vec<Duration>,
}

struct Session {
    id: String,
    source: Option<PathBuf>,
    seed: Option<u64>,
    base: Arc<SceneStack>,
    built_at: SystemTime,
    build_latency: Duration,
    writing: AtomicBool,
    state: RwLock<SessionState>,
}

impl Session {
    fn summary(&self) -> SessionSummary {
        let state = self.state.read();
        let stack = &state.current;
        SessionSummary {
            id: self.id.clone(),
            width: stack.width(),
            height: stack.height(),
            plane_count: stack.len(),
            planes: stack
                .planes()
                .iter()
                .map(|p| PlaneSummary {
                    id: p.id(),
                    kind: p.kind(),
                    depth: p.mean_depth().is_finite().then_some(p.mean_depth()),
                    footprint_pixels: p.footprint().count(),
                })
                .collect(),
            log_len: state.log.len(),
            built_at_unix_s: self
                .built_at
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
            build_latency_ms: ms(self.build_latency),
            op_latencies_ms: state.latencies.iter().copied().map(ms).collect(),
            source: self.source.clone(),
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Exclusive right to edit one session. Dropping it releases the session.
pub struct WriteTicket {
    session: Arc<Session>,
}

impl WriteTicket {
    pub fn apply(&self, op: EditOp) -> Result<OpSummary> {
        let before = self.session.state.read().current.clone();
        let start = Instant::now();
        let outcome = apply_op(&before, &op)?;
        let latency = start.elapsed();
        let mut state = self.session.state.write();
        state.current = Arc::new(outcome.stack);
        state.log.push(op.clone());
        state.latencies.push(latency);
        Ok(OpSummary {
            op: op.name().into(),
            latency_ms: ms(latency),
            affected: outcome.affected,
            log_len: state.log.len(),
        })
    }

    /// Rebuilds the stack from the first `to` logged ops and drops the rest.
    pub fn undo_to(&self, to: usize) -> Result<()> {
        let log = self.session.state.read().log.clone();
        if to > log.len() {
            return Err(Error::InvalidValue(format!(
                "cannot undo to {to}: the log has {} entries",
                log.len()
            )));
        }
        let stack = replay(&self.session.base, &log[..to])?;
        let mut state = self.session.state.write();
        state.current = Arc::new(stack);
        state.log.truncate(to);
        Ok(())
    }
}

impl Drop for WriteTicket {
    fn drop(&mut self) {
        self.session.writing.store(false, Ordering::Release);
    }
}

pub struct SessionManager {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    max_sessions: usize,
    next_id: AtomicU64,
}

impl Default for SessionManager {
    fn default() -> Self {
        SessionManager::new(DEFAULT_MAX_SESSIONS)
    }
}

impl SessionManager {
    pub fn new(max_sessions: usize) -> Self {
        SessionManager {
            sessions: RwLock::new(HashMap::new()),
            max_sessions,
            next_id: AtomicU64::new(1),
        }
    }

    /// Session cap from `MPSTACK_MAX_SESSIONS`, else the default.
    pub fn from_env() -> Result<Self> {
        let max = match std::env::var(MAX_SESSIONS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidValue(format!("{MAX_SESSIONS_ENV} must be a count, got {v:?}")))?,
            Err(_) => DEFAULT_MAX_SESSIONS,
        };
        Ok(SessionManager::new(max))
    }

    pub fn max_sessions(&self) -> usize {
        self.max_sessions
    }

    fn check_capacity(&self) -> Result<()> {
        if self.sessions.read().len() >= self.max_sessions {
            return Err(Error::SessionLimit(self.max_sessions));
        }
        Ok(())
    }

    fn get(&self, id: &str) -> Result<Arc<Session>> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    /// Loads a scene directory or manifest file; build latency covers
    /// decoding, sorting, validation and log replay.
    pub fn create_session(&self, path: impl AsRef<Path>) -> Result<SessionSummary> {
        self.check_capacity()?;
        let start = Instant::now();
        let loaded = load_scene(path.as_ref())?;
        let elapsed = start.elapsed();
        self.insert(loaded, elapsed)
    }

    pub fn create_from_loaded(&self, loaded: LoadedScene, build_latency: Duration) -> Result<SessionSummary> {
        self.check_capacity()?;
        self.insert(loaded, build_latency)
    }

    fn insert(&self, loaded: LoadedScene, build_latency: Duration) -> Result<SessionSummary> {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Arc::new(Session {
            id: id.clone(),
            source: Some(loaded.dir),
            seed: loaded.manifest.seed,
            base: Arc::new(loaded.base),
            built_at: SystemTime::now(),
            build_latency,
            writing: AtomicBool::new(false),
            state: RwLock::new(SessionState {
                current: Arc::new(loaded.current),
                log: loaded.log,
                latencies: Vec::new(),
            }),
        });
        let summary = session.summary();
        let mut sessions = self.sessions.write();
        if sessions.len() >= self.max_sessions {
            return Err(Error::SessionLimit(self.max_sessions));
        }
        sessions.insert(id, session);
        Ok(summary)
    }

    pub fn close_session(&self, id: &str) -> Result<()> {
        self.sessions
            .write()
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary> {
        Ok(self.get(id)?.summary())
    }

    /// Claims the session's single writer slot without waiting.
    pub fn writer(&self, id: &str) -> Result<WriteTicket> {
        let session = self.get(id)?;
        if session
            .writing
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            return Err(Error::Busy(id.to_string()));
        }
        Ok(WriteTicket { session })
    }

    /// Turns a client request into an op. Drag-across crops are quantized
    /// to the on-disk grid so an exported log replays bit-exactly.
    pub fn resolve(&self, request: &OpRequest) -> Result<EditOp> {
        Ok(match request {
            OpRequest::Remove { plane } => EditOp::Remove { plane: *plane },
            OpRequest::Reorder { p, q } => EditOp::Reorder { p: *p, q: *q },
            OpRequest::Drag {
                plane,
                position,
                transform,
            } => EditOp::DragWithin {
                plane: *plane,
                position: *position,
                transform: *transform,
            },
            OpRequest::DragAcross {
                source,
                position,
                transform,
            } => {
                let stack = self.snapshot(&source.scene)?;
                let plane = stack.plane(source.plane).ok_or(Error::UnknownPlane(source.plane))?;
                if plane.is_background() {
                    return Err(Error::InvalidTarget(source.plane));
                }
                EditOp::DragAcross {
                    source: Arc::new(quantize_crop(&crop_instance(plane)?)),
                    position: *position,
                    transform: *transform,
                }
            }
        })
    }

    pub fn apply_op(&self, id: &str, request: &OpRequest) -> Result<OpSummary> {
        let ticket = self.writer(id)?;
        let op = self.resolve(request)?;
        ticket.apply(op)
    }

    pub fn apply_edit(&self, id: &str, op: EditOp) -> Result<OpSummary> {
        self.writer(id)?.apply(op)
    }

    pub fn undo(&self, id: &str, to: usize) -> Result<SessionSummary> {
        let ticket = self.writer(id)?;
        ticket.undo_to(to)?;
        drop(ticket);
        self.summary(id)
    }

    /// The current stack. Later edits do not affect the returned value.
    pub fn snapshot(&self, id: &str) -> Result<Arc<SceneStack>> {
        Ok(self.get(id)?.state.read().current.clone())
    }

    pub fn base(&self, id: &str) -> Result<Arc<SceneStack>> {
        Ok(self.get(id)?.base.clone())
    }

    pub fn log(&self, id: &str) -> Result<Vec<EditOp>> {
        Ok(self.get(id)?.state.read().log.clone())
    }

    pub fn render(&self, id: &str) -> Result<Image> {
        Ok(render(&*self.snapshot(id)?))
    }

    pub fn render_png(&self, id: &str) -> Result<Vec<u8>> {
        encode_color_png(&self.render(id)?)
    }

    pub fn plane_color(&self, id: &str, plane: PlaneId) -> Result<Image> {
        let stack = self.snapshot(id)?;
        let p = stack.plane(plane).ok_or(Error::UnknownPlane(plane))?;
        Ok(p.color().clone())
    }

    pub fn plane_alpha(&self, id: &str, plane: PlaneId) -> Result<AlphaMatte> {
        let stack = self.snapshot(id)?;
        let p = stack.plane(plane).ok_or(Error::UnknownPlane(plane))?;
        Ok(p.alpha().clone())
    }

    /// 8-bit RGB PNG of a plane's color.
    pub fn plane_color_png(&self, id: &str, plane: PlaneId) -> Result<Vec<u8>> {
        encode_color_png(&self.plane_color(id, plane)?)
    }

    /// 16-bit grayscale PNG of a plane's visible alpha.
    pub fn plane_alpha_png(&self, id: &str, plane: PlaneId) -> Result<Vec<u8>> {
        encode_alpha_png(&self.plane_alpha(id, plane)?)
    }

    /// Writes the base stack, the edit log and a snapshot of the current
    /// stack. Loading the result reproduces the current stack exactly.
    pub fn export(&self, id: &str, dir: impl AsRef<Path>) -> Result<SceneManifest> {
        let session = self.get(id)?;
        let (current, log) = {
            let state = session.state.read();
            (state.current.clone(), state.log.clone())
        };
        export_scene(&session.base, &log, Some(&current), session.seed, dir)
    }
}
