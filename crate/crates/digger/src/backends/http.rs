use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use usersod_core::dataset::image_to_png_bytes;
use usersod_core::{BinaryMask, BoundingBox, Provenance, SceneRecord};

use super::{check_bbox, CommandGenerator, CommandRequest, Detector, Segmenter};
use crate::error::{DigError, Result};
use crate::types::{png_mask, DetectedObject};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Service root, e.g. `http://127.0.0.1:9000`.
    pub base_url: String,
    pub timeout_secs: u64,
    /// Extra attempts after a failed request.
    pub retries: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://127.0.0.1:9000".into(),
            timeout_secs: 30,
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct DetectRequest {
    image_png_base64: String,
}

#[derive(Deserialize)]
struct DetectItem {
    bbox: BoundingBox,
    label: String,
    confidence: f64,
}

#[derive(Serialize)]
struct SegmentRequest {
    image_png_base64: String,
    bbox: BoundingBox,
}

#[derive(Deserialize)]
struct SegmentResponse {
    mask_png_base64: String,
}

#[derive(Serialize)]
struct CommandsRequest<'a> {
    prompt: &'a str,
    label: &'a str,
    appearance_png_base64: String,
}

#[derive(Deserialize)]
struct CommandsResponse {
    commands: Vec<String>,
}

/// JSON-over-HTTP client for external detector, segmenter and command services.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| DigError::Backend {
                backend: "http".into(),
                reason: e.to_string(),
            })?;
        Ok(HttpBackend { config, client })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R> {
        let url = format!("{}/{route}", self.config.base_url.trim_end_matches('/'));
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                log::warn!("POST {url}: retry {attempt} after: {last}");
            }
            match self.client.post(&url).json(body).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<R>().map_err(|e| DigError::Backend {
                        backend: url.clone(),
                        reason: format!("malformed response: {e}"),
                    });
                }
                // Client errors will not improve on retry.
                Ok(resp) if resp.status().is_client_error() => {
                    return Err(DigError::Backend {
                        backend: url,
                        reason: format!("status {}", resp.status()),
                    });
                }
                Ok(resp) => last = format!("status {}", resp.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(DigError::Backend {
            backend: url,
            reason: last,
        })
    }
}

fn encode_png(bytes: Vec<u8>) -> String {
    STANDARD.encode(bytes)
}

impl Detector for HttpBackend {
    fn name(&self) -> &str {
        &self.config.base_url
    }

    fn detect(&self, scene: &SceneRecord) -> Result<Vec<DetectedObject>> {
        let req = DetectRequest {
            image_png_base64: encode_png(image_to_png_bytes(&scene.image)),
        };
        let items: Vec<DetectItem> = self.post("detect", &req)?;
        Ok(items
            .into_iter()
            .map(|i| DetectedObject {
                bbox: i.bbox,
                label: i.label,
                confidence: i.confidence,
                source_detector: self.config.base_url.clone(),
            })
            .collect())
    }
}

impl Segmenter for HttpBackend {
    fn segment(&self, scene: &SceneRecord, bbox: &BoundingBox) -> Result<BinaryMask> {
        check_bbox(scene, bbox)?;
        let req = SegmentRequest {
            image_png_base64: encode_png(image_to_png_bytes(&scene.image)),
            bbox: *bbox,
        };
        let resp: SegmentResponse = self.post("segment", &req)?;
        let mask = png_mask::decode(&resp.mask_png_base64).map_err(|reason| DigError::Backend {
            backend: self.config.base_url.clone(),
            reason,
        })?;
        if mask.height() != scene.image.height() || mask.width() != scene.image.width() {
            return Err(DigError::Backend {
                backend: self.config.base_url.clone(),
                reason: format!("mask is {}x{}", mask.width(), mask.height()),
            });
        }
        Ok(mask)
    }
}

impl CommandGenerator for HttpBackend {
    fn generate(&self, request: &CommandRequest<'_>) -> Result<Vec<String>> {
        let req = CommandsRequest {
            prompt: request.prompt,
            label: request.label,
            appearance_png_base64: encode_png(image_to_png_bytes(request.appearance)),
        };
        let resp: CommandsResponse = self.post("commands", &req)?;
        Ok(resp.commands)
    }

    fn provenance(&self) -> Provenance {
        Provenance::ExternalService
    }
}
