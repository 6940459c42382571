use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use usersod_core::{write_samples, ImageTensor, SceneRecord, TrainingSample};

use crate::backends::{Backends, CommandRequest};
use crate::detect::detect_objects;
use crate::error::{io_err, Result};
use crate::queue::{CorrectionQueue, QueueError, AUDIT_FILE};
use crate::types::{CorrectionDecision, ProposedSample, PromptTemplate, Status};

pub const REPORT_FILE: &str = "dig_report.json";
pub const QUEUE_DIR: &str = "queue";

/// Detect, segment and describe every latent target of one scene.
///
/// Segmentation or generation failures do not abort: the proposal is kept
/// with a note so a reviewer can repair it.
pub fn propose_scene(scene: &SceneRecord, backends: &Backends, prompt: &PromptTemplate) -> Result<Vec<ProposedSample>> {
    let detections = detect_objects(scene, &backends.detectors)?;
    let (h, w) = (scene.image.height(), scene.image.width());
    let mut out = Vec::with_capacity(detections.len());
    for (index, detected) in detections.into_iter().enumerate() {
        let index = index as u32;
        let mut note = None;
        let mask = match backends.segmenter.segment(scene, &detected.bbox) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("scene {}: segmentation of proposal {index} failed: {e}", scene.scene_id);
                note = Some(format!("segmentation failed: {e}"));
                usersod_core::BinaryMask::zeros(h, w)
            }
        };
        let mut commands = Vec::new();
        if note.is_none() {
            let appearance = scene.image.masked(&mask)?;
            let rendered = prompt.render(&detected.label);
            let request = CommandRequest {
                scene,
                prompt: &rendered,
                label: &detected.label,
                appearance: &appearance,
                mask: &mask,
            };
            match backends.commands.generate(&request) {
                Ok(c) if c.is_empty() => note = Some("command generator returned nothing".into()),
                Ok(c) => commands = c,
                Err(e) => {
                    log::warn!("scene {}: command generation for proposal {index} failed: {e}", scene.scene_id);
                    note = Some(format!("command generation failed: {e}"));
                }
            }
        }
        out.push(ProposedSample {
            id: ProposedSample::make_id(scene.scene_id, index),
            scene_id: scene.scene_id,
            index,
            detected,
            mask,
            commands,
            status: Status::Pending,
            provenance: backends.commands.provenance(),
            note,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub scene_id: u32,
    pub reason: String,
}

/// Proposals for every scene plus the scenes that produced none.
pub fn propose_all(
    scenes: &[SceneRecord],
    backends: &Backends,
    prompt: &PromptTemplate,
) -> Result<(Vec<ProposedSample>, Vec<SceneFailure>)> {
    let mut proposals = Vec::new();
    let mut failures = Vec::new();
    for s in scenes {
        match propose_scene(s, backends, prompt) {
            Ok(p) => proposals.extend(p),
            Err(e) => {
                log::error!("scene {}: {e}", s.scene_id);
                failures.push(SceneFailure {
                    scene_id: s.scene_id,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((proposals, failures))
}

pub fn scene_images(scenes: &[SceneRecord]) -> BTreeMap<u32, Arc<ImageTensor>> {
    scenes.iter().map(|s| (s.scene_id, Arc::clone(&s.image))).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorrectionMode {
    /// Accept every complete proposal unmodified.
    AutoAccept,
    /// Apply decisions from a JSON-lines file; without one, everything stays pending.
    FileQueue(Option<PathBuf>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DigReport {
    pub scenes: usize,
    pub proposals: usize,
    pub accepted: usize,
    pub edited: usize,
    pub rejected: usize,
    pub pending: usize,
    pub samples: usize,
    pub failed_scenes: Vec<SceneFailure>,
    pub rejections: Vec<Rejection>,
    /// Decisions from a file that could not be applied.
    pub refused_decisions: Vec<Rejection>,
}

/// Read decisions (one JSON object per line) and apply them in order.
///
/// Refused decisions are returned rather than aborting the batch.
pub fn apply_decision_file(queue: &CorrectionQueue, path: &Path) -> Result<Vec<Rejection>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut refused = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let decision: CorrectionDecision = match serde_json::from_str(line) {
            Ok(d) => d,
            Err(e) => {
                refused.push(Rejection {
                    id: format!("line {}", n + 1),
                    reason: format!("malformed decision: {e}"),
                });
                continue;
            }
        };
        let id = decision.proposed_ref.clone();
        match queue.decide(decision) {
            Ok(_) => {}
            Err(QueueError::Storage(e)) => return Err(e),
            Err(e) => refused.push(Rejection {
                id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(refused)
}

/// Write the kept samples and a report to `out_dir`.
pub fn emit_dataset(queue: &CorrectionQueue, out_dir: &Path, mut report: DigReport) -> Result<(Vec<TrainingSample>, DigReport)> {
    let samples = queue.emit();
    write_samples(&samples, out_dir)?;
    let stats = queue.stats();
    report.proposals = stats.total;
    report.accepted = stats.accepted;
    report.edited = stats.edited;
    report.rejected = stats.rejected;
    report.pending = stats.pending;
    report.samples = samples.len();
    report.rejections = queue
        .snapshot()
        .into_iter()
        .filter(|p| p.status == Status::Rejected)
        .map(|p| Rejection {
            reason: rejection_reason(queue, &p.id),
            id: p.id,
        })
        .collect();
    for r in &report.rejections {
        log::info!("proposal {} rejected: {}", r.id, r.reason);
    }
    let path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok((samples, report))
}

fn rejection_reason(queue: &CorrectionQueue, id: &str) -> String {
    let Some(dir) = queue.dir() else {
        return "rejected by reviewer".into();
    };
    let Ok(text) = fs::read_to_string(dir.join(AUDIT_FILE)) else {
        return "rejected by reviewer".into();
    };
    text.lines()
        .filter_map(|l| serde_json::from_str::<crate::queue::AuditEntry>(l).ok())
        .find(|e| e.decision.proposed_ref == id && e.status == Status::Rejected)
        .map(|e| {
            let who = e.decision.reviewer;
            e.decision.reason.map_or(format!("rejected by {who}"), |r| format!("rejected by {who}: {r}"))
        })
        .unwrap_or_else(|| "rejected by reviewer".into())
}

/// Build the queue under `out_dir/queue` for the given scenes.
pub fn start_queue(
    scenes: &[SceneRecord],
    backends: &Backends,
    prompt: &PromptTemplate,
    out_dir: &Path,
) -> Result<(CorrectionQueue, DigReport)> {
    let (proposals, failed_scenes) = propose_all(scenes, backends, prompt)?;
    let queue = CorrectionQueue::create(&out_dir.join(QUEUE_DIR), proposals, scene_images(scenes))?;
    let report = DigReport {
        scenes: scenes.len(),
        failed_scenes,
        ..DigReport::default()
    };
    Ok((queue, report))
}

/// The whole digging pipeline for the headless correction modes.
pub fn run_dig(
    scenes: &[SceneRecord],
    backends: &Backends,
    prompt: &PromptTemplate,
    mode: &CorrectionMode,
    out_dir: &Path,
) -> Result<(Vec<TrainingSample>, DigReport)> {
    let (queue, mut report) = start_queue(scenes, backends, prompt, out_dir)?;
    match mode {
        CorrectionMode::AutoAccept => {
            queue.accept_all("auto").map_err(|e| match e {
                QueueError::Storage(e) => e,
                other => usersod_core::CoreError::invalid("auto-accept", other.to_string()).into(),
            })?;
        }
        CorrectionMode::FileQueue(Some(path)) => {
            report.refused_decisions = apply_decision_file(&queue, path)?;
        }
        CorrectionMode::FileQueue(None) => {}
    }
    emit_dataset(&queue, out_dir, report)
}
