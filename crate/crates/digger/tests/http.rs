use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use usersod_core::BoundingBox;
use usersod_digger::backends::{CommandGenerator, CommandRequest, Detector, HttpBackend, Segmenter};
use usersod_digger::{png_mask, HttpConfig};
use usersod_synth::{generate_dataset, GeneratorConfig};

#[derive(Clone, Default)]
struct Mock {
    calls: Arc<AtomicUsize>,
    /// Requests that fail with 500 before the service starts answering.
    failures: usize,
}

fn serve(mock: Mock) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/detect", post(detect))
                .route("/segment", post(segment))
                .route("/commands", post(commands))
                .with_state(mock);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn flaky(m: &Mock) -> Option<StatusCode> {
    let n = m.calls.fetch_add(1, Ordering::SeqCst);
    (n < m.failures).then_some(StatusCode::INTERNAL_SERVER_ERROR)
}

async fn detect(State(m): State<Mock>, Json(body): Json<Value>) -> Result<Json<Value>, StatusCode> {
    if let Some(code) = flaky(&m) {
        return Err(code);
    }
    assert!(body["image_png_base64"].as_str().is_some_and(|s| !s.is_empty()));
    Ok(Json(json!([
        {"bbox": {"x_min": 1, "y_min": 2, "x_max": 20, "y_max": 30}, "label": "circle", "confidence": 0.8}
    ])))
}

async fn segment(State(m): State<Mock>, Json(body): Json<Value>) -> Result<Json<Value>, StatusCode> {
    if let Some(code) = flaky(&m) {
        return Err(code);
    }
    let b: BoundingBox = serde_json::from_value(body["bbox"].clone()).unwrap();
    let mut mask = usersod_core::BinaryMask::zeros(96, 96);
    for y in b.y_min..b.y_max {
        for x in b.x_min..b.x_max {
            mask.set(y as usize, x as usize, true);
        }
    }
    Ok(Json(json!({"mask_png_base64": png_mask::encode(&mask)})))
}

async fn commands(State(m): State<Mock>, Json(body): Json<Value>) -> Result<Json<Value>, StatusCode> {
    if let Some(code) = flaky(&m) {
        return Err(code);
    }
    let label = body["label"].as_str().unwrap().to_string();
    assert!(body["prompt"].as_str().unwrap().contains(&label));
    Ok(Json(json!({"commands": [format!("find {label}"), "second", "third one"]})))
}

fn backend(addr: SocketAddr, retries: u32) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        base_url: format!("http://{addr}"),
        timeout_secs: 5,
        retries,
    })
    .unwrap()
}

#[test]
fn external_services_round_trip() {
    let addr = serve(Mock::default());
    let scene = &generate_dataset(&GeneratorConfig {
        num_scenes: 1,
        ..GeneratorConfig::default()
    })
    .unwrap()[0];
    let b = backend(addr, 0);
    let found = b.detect(scene).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].bbox, BoundingBox::new(1, 2, 20, 30));
    assert_eq!(found[0].confidence, 0.8);

    let mask = b.segment(scene, &found[0].bbox).unwrap();
    assert_eq!(mask.area(), 19 * 28);
    assert_eq!(mask.bbox().unwrap(), found[0].bbox);

    let appearance = scene.image.masked(&mask).unwrap();
    let cmds = b
        .generate(&CommandRequest {
            scene,
            prompt: "look for this circle",
            label: "circle",
            appearance: &appearance,
            mask: &mask,
        })
        .unwrap();
    assert_eq!(cmds, ["find circle", "second", "third one"]);
}

#[test]
fn transient_failures_are_retried() {
    let mock = Mock {
        failures: 2,
        ..Mock::default()
    };
    let calls = Arc::clone(&mock.calls);
    let addr = serve(mock);
    let scene = &generate_dataset(&GeneratorConfig {
        num_scenes: 1,
        ..GeneratorConfig::default()
    })
    .unwrap()[0];
    assert_eq!(backend(addr, 2).detect(scene).unwrap().len(), 1);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let mock = Mock {
        failures: 10,
        ..Mock::default()
    };
    let calls = Arc::clone(&mock.calls);
    let addr = serve(mock);
    let scene = &generate_dataset(&GeneratorConfig {
        num_scenes: 1,
        ..GeneratorConfig::default()
    })
    .unwrap()[0];
    let err = backend(addr, 2).detect(scene).unwrap_err();
    assert!(err.to_string().contains("500"), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn unreachable_service_is_a_backend_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let scene = &generate_dataset(&GeneratorConfig {
        num_scenes: 1,
        ..GeneratorConfig::default()
    })
    .unwrap()[0];
    assert!(matches!(
        backend(addr, 1).detect(scene),
        Err(usersod_digger::DigError::Backend { .. })
    ));
}
