//! The correction queue: the single place where proposal status changes.
//!
//! ```text
//! proposals.jsonl        proposals as first emitted (all pending)
//! audit.jsonl            applied decisions, append-only
//! images/{scene_id}.png  scene images for reviewers
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use usersod_core::dataset::{image_rel_path, load_image_png};
use usersod_core::{ImageTensor, Need, NeedCommand, Provenance, TrainingSample};

use crate::error::{io_err, DigError, Result};
use crate::types::{CorrectionDecision, ProposedSample, Status, Verdict};

pub const PROPOSALS_FILE: &str = "proposals.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("no proposal `{0}`")]
    NotFound(String),
    #[error("proposal `{id}` is already {status:?}")]
    AlreadyDecided { id: String, status: Status },
    #[error("invalid decision: {0}")]
    Invalid(String),
    #[error(transparent)]
    Storage(#[from] DigError),
}

/// One applied decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub decision: CorrectionDecision,
    pub status: Status,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub edited: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<ProposedSample>,
}

struct State {
    proposals: Vec<ProposedSample>,
    index: HashMap<String, usize>,
    next_seq: u64,
    audit: Option<BufWriter<File>>,
}

pub struct CorrectionQueue {
    dir: Option<PathBuf>,
    images: BTreeMap<u32, Arc<ImageTensor>>,
    state: Mutex<State>,
}

fn check_unique(proposals: &[ProposedSample]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(proposals.len());
    for (i, p) in proposals.iter().enumerate() {
        if index.insert(p.id.clone(), i).is_some() {
            return Err(usersod_core::CoreError::invalid("queue", format!("duplicate proposal id {}", p.id)).into());
        }
    }
    Ok(index)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DigError::Log {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Check `decision` against the current state of `p` and return the updated proposal.
fn apply(p: &ProposedSample, decision: &CorrectionDecision) -> std::result::Result<ProposedSample, QueueError> {
    if p.status.is_decided() {
        return Err(QueueError::AlreadyDecided {
            id: p.id.clone(),
            status: p.status,
        });
    }
    let has_edits = decision.edited_mask.is_some() || decision.edited_commands.is_some();
    let mut next = p.clone();
    match decision.verdict {
        Verdict::Reject => next.status = Status::Rejected,
        Verdict::Accept => {
            if has_edits {
                return Err(QueueError::Invalid("accept carries edits; use verdict edit".into()));
            }
            if p.commands.is_empty() || p.mask.is_empty() {
                return Err(QueueError::Invalid(
                    "proposal has no commands or an empty mask; edit it instead".into(),
                ));
            }
            next.status = Status::Accepted;
        }
        Verdict::Edit => {
            if !has_edits {
                return Err(QueueError::Invalid("edit needs an edited mask or edited commands".into()));
            }
            if let Some(m) = &decision.edited_mask {
                if (m.height(), m.width()) != (p.mask.height(), p.mask.width()) {
                    return Err(QueueError::Invalid(format!(
                        "edited mask is {}x{}, image is {}x{}",
                        m.width(),
                        m.height(),
                        p.mask.width(),
                        p.mask.height()
                    )));
                }
                if m.is_empty() {
                    return Err(QueueError::Invalid("edited mask is empty".into()));
                }
                next.mask = m.clone();
            }
            if let Some(cmds) = &decision.edited_commands {
                if cmds.is_empty() || cmds.iter().any(|c| c.trim().is_empty()) {
                    return Err(QueueError::Invalid("edited commands must be non-empty strings".into()));
                }
                next.commands = cmds.clone();
            }
            if next.commands.is_empty() || next.mask.is_empty() {
                return Err(QueueError::Invalid("edited proposal still lacks commands or a mask".into()));
            }
            next.status = Status::Edited;
        }
    }
    Ok(next)
}

/// Apply an audit log to the initial proposals, checking every recorded outcome.
pub fn replay(initial: &[ProposedSample], audit: &[AuditEntry]) -> Result<Vec<ProposedSample>> {
    let mut proposals = initial.to_vec();
    let index = check_unique(&proposals)?;
    for (n, entry) in audit.iter().enumerate() {
        let bad = |reason: String| DigError::Log {
            path: AUDIT_FILE.into(),
            line: n + 1,
            reason,
        };
        let &i = index
            .get(&entry.decision.proposed_ref)
            .ok_or_else(|| bad(format!("unknown proposal {}", entry.decision.proposed_ref)))?;
        let next = apply(&proposals[i], &entry.decision).map_err(|e| bad(e.to_string()))?;
        if next.status != entry.status {
            return Err(bad(format!("recorded status {:?}, replay gives {:?}", entry.status, next.status)));
        }
        proposals[i] = next;
    }
    Ok(proposals)
}

impl CorrectionQueue {
    /// A queue that keeps nothing on disk.
    pub fn in_memory(proposals: Vec<ProposedSample>, images: BTreeMap<u32, Arc<ImageTensor>>) -> Result<Self> {
        let index = check_unique(&proposals)?;
        Ok(CorrectionQueue {
            dir: None,
            images,
            state: Mutex::new(State {
                proposals,
                index,
                next_seq: 0,
                audit: None,
            }),
        })
    }

    /// Write a fresh queue to `dir`, replacing any previous one there.
    pub fn create(
        dir: &Path,
        proposals: Vec<ProposedSample>,
        images: BTreeMap<u32, Arc<ImageTensor>>,
    ) -> Result<Self> {
        let index = check_unique(&proposals)?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (scene_id, img) in &images {
            let path = dir.join(image_rel_path(*scene_id));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            let png = usersod_core::dataset::image_to_png_bytes(img);
            fs::write(&path, png).map_err(io_err(&path))?;
        }
        let path = dir.join(PROPOSALS_FILE);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for p in &proposals {
            let line = serde_json::to_string(p).expect("proposals serialise");
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        let audit_path = dir.join(AUDIT_FILE);
        let audit = File::create(&audit_path).map_err(io_err(&audit_path))?;
        Ok(CorrectionQueue {
            dir: Some(dir.to_path_buf()),
            images,
            state: Mutex::new(State {
                proposals,
                index,
                next_seq: 0,
                audit: Some(BufWriter::new(audit)),
            }),
        })
    }

    /// Reopen a queue written by [`CorrectionQueue::create`], replaying its audit log.
    pub fn open(dir: &Path) -> Result<Self> {
        let initial: Vec<ProposedSample> = read_jsonl(&dir.join(PROPOSALS_FILE))?;
        let audit_path = dir.join(AUDIT_FILE);
        let audit: Vec<AuditEntry> = if audit_path.exists() {
            read_jsonl(&audit_path)?
        } else {
            Vec::new()
        };
        let proposals = replay(&initial, &audit)?;
        let mut images = BTreeMap::new();
        for p in &proposals {
            if !images.contains_key(&p.scene_id) {
                let img = load_image_png(&dir.join(image_rel_path(p.scene_id)))?;
                images.insert(p.scene_id, Arc::new(img));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&audit_path)
            .map_err(io_err(&audit_path))?;
        let index = check_unique(&proposals)?;
        Ok(CorrectionQueue {
            dir: Some(dir.to_path_buf()),
            images,
            state: Mutex::new(State {
                proposals,
                index,
                next_seq: audit.last().map_or(0, |e| e.seq + 1),
                audit: Some(BufWriter::new(file)),
            }),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Apply one decision atomically.
    ///
    /// The decision is appended to the audit log before the in-memory state
    /// changes. A second decision on an already decided proposal is refused.
    pub fn decide(&self, decision: CorrectionDecision) -> std::result::Result<ProposedSample, QueueError> {
        let mut state = self.lock();
        let &i = state
            .index
            .get(&decision.proposed_ref)
            .ok_or_else(|| QueueError::NotFound(decision.proposed_ref.clone()))?;
        let next = apply(&state.proposals[i], &decision)?;
        let entry = AuditEntry {
            seq: state.next_seq,
            decision,
            status: next.status,
        };
        if let Some(w) = state.audit.as_mut() {
            let line = serde_json::to_string(&entry).expect("audit entries serialise");
            let path = self.dir.as_deref().unwrap_or(Path::new(".")).join(AUDIT_FILE);
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| QueueError::Storage(io_err(&path)(e)))?;
        }
        state.next_seq += 1;
        state.proposals[i] = next.clone();
        Ok(next)
    }

    pub fn get(&self, id: &str) -> Option<ProposedSample> {
        let state = self.lock();
        state.index.get(id).map(|&i| state.proposals[i].clone())
    }

    pub fn snapshot(&self) -> Vec<ProposedSample> {
        self.lock().proposals.clone()
    }

    pub fn image(&self, scene_id: u32) -> Option<Arc<ImageTensor>> {
        self.images.get(&scene_id).cloned()
    }

    pub fn stats(&self) -> QueueStats {
        let state = self.lock();
        let mut s = QueueStats {
            total: state.proposals.len(),
            ..QueueStats::default()
        };
        for p in &state.proposals {
            match p.status {
                Status::Pending => s.pending += 1,
                Status::Accepted => s.accepted += 1,
                Status::Edited => s.edited += 1,
                Status::Rejected => s.rejected += 1,
            }
        }
        s
    }

    /// Proposals in queue order, optionally only those with `status`; `page` is 1-based.
    pub fn page(&self, page: usize, page_size: usize, status: Option<Status>) -> Page {
        let state = self.lock();
        let matching: Vec<&ProposedSample> = state
            .proposals
            .iter()
            .filter(|p| status.is_none_or(|s| p.status == s))
            .collect();
        let start = page.saturating_sub(1).saturating_mul(page_size);
        let items = matching.iter().skip(start).take(page_size).map(|&p| p.clone()).collect();
        Page {
            page,
            page_size,
            total: matching.len(),
            items,
        }
    }

    /// Accept every complete pending proposal; returns how many were accepted.
    pub fn accept_all(&self, reviewer: &str) -> std::result::Result<usize, QueueError> {
        let ids: Vec<String> = self
            .snapshot()
            .into_iter()
            .filter(|p| p.status == Status::Pending && p.is_complete())
            .map(|p| p.id)
            .collect();
        for id in &ids {
            self.decide(CorrectionDecision::new(id.clone(), Verdict::Accept, reviewer))?;
        }
        Ok(ids.len())
    }

    /// Training samples of every accepted or edited proposal, in queue order.
    pub fn emit(&self) -> Vec<TrainingSample> {
        emit_samples(&self.snapshot(), &self.images)
    }
}

/// One sample per command of every kept proposal; the proposal index is the target id.
pub fn emit_samples(proposals: &[ProposedSample], images: &BTreeMap<u32, Arc<ImageTensor>>) -> Vec<TrainingSample> {
    let mut next_command: BTreeMap<u32, u32> = BTreeMap::new();
    let mut out = Vec::new();
    for p in proposals.iter().filter(|p| p.status.is_kept()) {
        let Some(image) = images.get(&p.scene_id) else {
            log::warn!("proposal {}: scene image missing, skipped", p.id);
            continue;
        };
        for text in &p.commands {
            let id = next_command.entry(p.scene_id).or_insert(0);
            out.push(TrainingSample {
                scene_id: p.scene_id,
                image: Arc::clone(image),
                need: Need::Command(NeedCommand {
                    command_id: *id,
                    text: text.clone(),
                    target_object_id: p.index,
                    provenance: if p.status == Status::Edited {
                        Provenance::HumanEdited
                    } else {
                        p.provenance
                    },
                }),
                gt: p.mask.clone(),
            });
            *id += 1;
        }
    }
    out
}
