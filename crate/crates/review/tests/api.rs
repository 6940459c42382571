use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Barrier};
use std::thread;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use usersod_core::dataset::{image_from_png_bytes, image_to_png_bytes, mask_from_png_bytes, mask_to_png_bytes};
use usersod_core::{BinaryMask, ImageTensor, SceneRecord};
use usersod_digger::pipeline::{propose_all, scene_images, start_queue};
use usersod_digger::{Backends, CorrectionQueue, OracleDetector, PromptTemplate, QueueStats, Status};
use usersod_review::{router, QueuePage, SampleDetail, SampleSummary};
use usersod_synth::{generate_dataset, GeneratorConfig};

fn scenes(n: u32) -> Vec<SceneRecord> {
    generate_dataset(&GeneratorConfig {
        seed: 11,
        num_scenes: n,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

/// An in-memory queue holding the first `n` proposals of a small dig.
fn queue_of(n: usize) -> CorrectionQueue {
    let scenes = scenes(4);
    let (mut proposals, _) =
        propose_all(&scenes, &Backends::oracle(OracleDetector::default()), &PromptTemplate::default()).unwrap();
    assert!(proposals.len() >= n);
    proposals.truncate(n);
    CorrectionQueue::in_memory(proposals, scene_images(&scenes)).unwrap()
}

fn spawn(queue: Arc<CorrectionQueue>, ui: Option<&Path>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    let ui = ui.map(Path::to_path_buf);
    thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            let addr: SocketAddr = listener.local_addr().unwrap();
            tx.send(addr).unwrap();
            axum::serve(listener, router(queue, ui)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn page(c: &Client, base: &str, query: &str) -> QueuePage {
    let r = c.get(format!("{base}/api/queue?{query}")).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().unwrap()
}

fn decide(c: &Client, base: &str, id: &str, body: Value) -> (StatusCode, Value) {
    let r = c
        .post(format!("{base}/api/samples/{id}/decision"))
        .json(&body)
        .send()
        .unwrap();
    (r.status(), r.json().unwrap())
}

fn stats(c: &Client, base: &str) -> QueueStats {
    c.get(format!("{base}/api/stats")).send().unwrap().json().unwrap()
}

#[test]
fn five_pending_samples_page_as_two_two_one() {
    let q = Arc::new(queue_of(5));
    let all = q.snapshot();
    let base = spawn(Arc::clone(&q), None);
    let c = Client::new();
    let pages: Vec<QueuePage> = (1..=3).map(|p| page(&c, &base, &format!("page={p}&page_size=2"))).collect();
    assert_eq!(pages.iter().map(|p| p.items.len()).collect::<Vec<_>>(), [2, 2, 1]);
    assert!(pages.iter().all(|p| p.total == 5));
    let ids: Vec<String> = pages.iter().flat_map(|p| p.items.iter().map(|s| s.id.clone())).collect();
    let expected: Vec<String> = all.iter().map(|p| p.id.clone()).collect();
    assert_eq!(ids, expected);
    assert!(page(&c, &base, "page=4&page_size=2").items.is_empty());

    let (code, _) = decide(&c, &base, &ids[0], json!({"verdict": "accept", "reviewer": "ana"}));
    assert_eq!(code, StatusCode::OK);
    let pending = page(&c, &base, "page=1&page_size=10");
    assert_eq!(pending.total, 4);
    assert_eq!(pending.items[0].id, ids[1]);
    assert_eq!(page(&c, &base, "status=all").total, 5);
    assert_eq!(page(&c, &base, "status=accepted").items[0].id, ids[0]);
}

#[test]
fn empty_queue_gives_an_empty_page() {
    let scenes = scenes(1);
    let q = Arc::new(CorrectionQueue::in_memory(Vec::new(), scene_images(&scenes)).unwrap());
    let base = spawn(q, None);
    let p = page(&Client::new(), &base, "page=1&page_size=5");
    assert_eq!((p.total, p.items.len()), (0, 0));
}

#[test]
fn malformed_paging_is_rejected() {
    let base = spawn(Arc::new(queue_of(2)), None);
    let c = Client::new();
    for q in ["page=0", "page_size=0", "page=x", "page_size=100000", "status=lost"] {
        let r = c.get(format!("{base}/api/queue?{q}")).send().unwrap();
        assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY, "{q}");
    }
}

#[test]
fn sample_detail_carries_image_mask_and_commands() {
    let q = Arc::new(queue_of(3));
    let want = q.snapshot()[1].clone();
    let base = spawn(Arc::clone(&q), None);
    let c = Client::new();

    let detail: SampleDetail = c
        .get(format!("{base}/api/samples/{}", want.id))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(detail.sample, want);
    assert!(!detail.sample.commands.is_empty());
    let image = image_from_png_bytes(&STANDARD.decode(&detail.image_png_base64).unwrap()).unwrap();
    assert_eq!(image_to_png_bytes(&image), image_to_png_bytes(&q.image(want.scene_id).unwrap()));

    let r = c.get(format!("{base}/api/samples/{}/mask.png", want.id)).send().unwrap();
    assert_eq!(r.headers()["content-type"], "image/png");
    assert_eq!(mask_from_png_bytes(&r.bytes().unwrap()).unwrap(), want.mask);
    let r = c.get(format!("{base}/api/samples/{}/image.png", want.id)).send().unwrap();
    assert_eq!(image_from_png_bytes(&r.bytes().unwrap()).unwrap().height(), want.mask.height());

    for path in ["nope", "nope/image.png", "nope/mask.png"] {
        let r = c.get(format!("{base}/api/samples/{path}")).send().unwrap();
        assert_eq!(r.status(), StatusCode::NOT_FOUND, "{path}");
    }
}

#[test]
fn decisions_follow_the_status_machine() {
    let q = Arc::new(queue_of(4));
    let ids: Vec<String> = q.snapshot().iter().map(|p| p.id.clone()).collect();
    let (h, w) = (q.snapshot()[0].mask.height(), q.snapshot()[0].mask.width());
    let base = spawn(Arc::clone(&q), None);
    let c = Client::new();

    let (code, body) = decide(&c, &base, &ids[0], json!({"verdict": "accept", "reviewer": "ana"}));
    assert_eq!(code, StatusCode::OK);
    let s: SampleSummary = serde_json::from_value(body).unwrap();
    assert_eq!(s.status, Status::Accepted);

    let (code, _) = decide(&c, &base, &ids[0], json!({"verdict": "reject", "reviewer": "bo"}));
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(q.get(&ids[0]).unwrap().status, Status::Accepted);

    let wrong = STANDARD.encode(mask_to_png_bytes(&BinaryMask::ones(4, 4)));
    let (code, body) = decide(
        &c,
        &base,
        &ids[1],
        json!({"verdict": "edit", "reviewer": "ana", "edited_mask": wrong}),
    );
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("4x4"));

    let grey = ImageTensor::from_rgb8(h, w, &vec![128; h * w * 3]).unwrap();
    let not_binary = STANDARD.encode(image_to_png_bytes(&grey));
    let (code, _) = decide(
        &c,
        &base,
        &ids[1],
        json!({"verdict": "edit", "reviewer": "ana", "edited_mask": not_binary}),
    );
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, _) = decide(&c, &base, &ids[1], json!({"verdict": "maybe", "reviewer": "ana"}));
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let (code, _) = decide(
        &c,
        &base,
        &ids[1],
        json!({"verdict": "accept", "reviewer": "ana", "proposed_ref": ids[2]}),
    );
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let r = c
        .post(format!("{base}/api/samples/{}/decision", ids[1]))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(q.get(&ids[1]).unwrap().status, Status::Pending);

    let mut m = BinaryMask::zeros(h, w);
    m.set(3, 3, true);
    let (code, _) = decide(
        &c,
        &base,
        &ids[1],
        json!({"verdict": "edit", "reviewer": "ana", "edited_mask": STANDARD.encode(mask_to_png_bytes(&m)),
               "edited_commands": ["Please find the dot."]}),
    );
    assert_eq!(code, StatusCode::OK);
    let edited = q.get(&ids[1]).unwrap();
    assert_eq!((edited.status, &edited.mask), (Status::Edited, &m));
    assert_eq!(edited.commands, ["Please find the dot."]);

    let (code, _) = decide(&c, &base, &ids[2], json!({"verdict": "reject", "reviewer": "ana", "reason": "blurry"}));
    assert_eq!(code, StatusCode::OK);
    let (code, _) = decide(&c, &base, "missing", json!({"verdict": "accept", "reviewer": "ana"}));
    assert_eq!(code, StatusCode::NOT_FOUND);

    let s = stats(&c, &base);
    assert_eq!(
        s,
        QueueStats {
            total: 4,
            pending: 1,
            accepted: 1,
            edited: 1,
            rejected: 1
        }
    );
}

#[test]
fn racing_clients_get_exactly_one_success_per_sample() {
    let q = Arc::new(queue_of(6));
    let ids: Vec<String> = q.snapshot().iter().map(|p| p.id.clone()).collect();
    let base = spawn(Arc::clone(&q), None);
    for id in &ids {
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = ["accept", "reject"]
            .into_iter()
            .map(|verdict| {
                let (base, id, barrier) = (base.clone(), id.clone(), Arc::clone(&barrier));
                thread::spawn(move || {
                    let c = Client::new();
                    barrier.wait();
                    decide(&c, &base, &id, json!({"verdict": verdict, "reviewer": verdict})).0
                })
            })
            .collect();
        let mut codes: Vec<StatusCode> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        codes.sort();
        assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT], "{id}");
        assert!(q.get(id).unwrap().status.is_decided());
    }
    let s = stats(&Client::new(), &base);
    assert_eq!(s.pending, 0);
    assert_eq!(s.accepted + s.rejected, s.total);
}

#[test]
fn decisions_over_http_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = scenes(2);
    let (q, _) = start_queue(
        &scenes,
        &Backends::oracle(OracleDetector::default()),
        &PromptTemplate::default(),
        dir.path(),
    )
    .unwrap();
    let q = Arc::new(q);
    let ids: Vec<String> = q.snapshot().iter().map(|p| p.id.clone()).collect();
    let base = spawn(Arc::clone(&q), None);
    let c = Client::new();
    for (i, id) in ids.iter().enumerate().take(5) {
        let body = match i % 3 {
            0 => json!({"verdict": "accept", "reviewer": "ana"}),
            1 => json!({"verdict": "reject", "reviewer": "ana"}),
            _ => json!({"verdict": "edit", "reviewer": "ana", "edited_commands": ["Find it for me."]}),
        };
        assert_eq!(decide(&c, &base, id, body).0, StatusCode::OK);
    }
    let before = q.snapshot();
    let reopened = CorrectionQueue::open(&dir.path().join("queue")).unwrap();
    assert_eq!(reopened.snapshot(), before);
    assert_eq!(reopened.stats(), stats(&c, &base));
}

#[test]
fn root_serves_a_page_or_the_ui_dir() {
    let c = Client::new();
    let base = spawn(Arc::new(queue_of(1)), None);
    let r = c.get(format!("{base}/")).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.text().unwrap().contains("/api/queue"));

    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<p>custom ui</p>").unwrap();
    let base = spawn(Arc::new(queue_of(1)), Some(ui.path()));
    assert_eq!(c.get(format!("{base}/")).send().unwrap().text().unwrap(), "<p>custom ui</p>");
    assert_eq!(c.get(format!("{base}/api/stats")).send().unwrap().status(), StatusCode::OK);
}
