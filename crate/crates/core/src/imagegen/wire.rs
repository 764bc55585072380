//! Wire records for out-of-process image generators.
//!
//! Request: `{"stage": "base"|"upsample", "prompt", "seed", "dims": [w, h]}`;
//! upsample requests also carry the base image as `image` (base64 raw RGB).
//! Response: `{"pixels": <base64 raw RGB>, "dims": [w, h]}`.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{T2IBackend, BASE_SIZE, UPSAMPLED_SIZE};
use crate::backend::{BackendError, ProcessChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    Upsample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRequest {
    pub stage: Stage,
    pub prompt: String,
    pub seed: u64,
    /// Requested output size.
    pub dims: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResponse {
    pub pixels: String,
    pub dims: [u32; 2],
}

pub fn encode_pixels(image: &RgbImage) -> String {
    B64.encode(image.as_raw())
}

pub fn decode_pixels(data: &str, dims: [u32; 2]) -> Result<RgbImage, String> {
    let raw = B64.decode(data).map_err(|e| format!("bad base64: {e}"))?;
    let want = dims[0] as usize * dims[1] as usize * 3;
    if raw.len() != want {
        return Err(format!("expected {want} bytes for {}x{}, got {}", dims[0], dims[1], raw.len()));
    }
    RgbImage::from_raw(dims[0], dims[1], raw).ok_or_else(|| "bad pixel buffer".into())
}

/// An image generator running as a subprocess.
pub struct ProcessT2I {
    id: String,
    channel: ProcessChannel,
}

impl ProcessT2I {
    pub fn spawn(id: impl Into<String>, command: &[String]) -> Result<Self, BackendError> {
        let id = id.into();
        let channel = ProcessChannel::spawn(&id, command)?;
        Ok(Self { id, channel })
    }

    fn request(&self, req: &StageRequest) -> Result<RgbImage, BackendError> {
        let resp: StageResponse = self.channel.with(|ch| ch.call(req))?;
        decode_pixels(&resp.pixels, resp.dims).map_err(|detail| BackendError::Protocol {
            backend: self.id.clone(),
            detail,
        })
    }
}

impl T2IBackend for ProcessT2I {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn generate_base(&self, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        self.request(&StageRequest {
            stage: Stage::Base,
            prompt: prompt.to_owned(),
            seed,
            dims: [BASE_SIZE, BASE_SIZE],
            image: None,
        })
    }

    fn upsample(&self, base: &RgbImage, prompt: &str, seed: u64) -> Result<RgbImage, BackendError> {
        self.request(&StageRequest {
            stage: Stage::Upsample,
            prompt: prompt.to_owned(),
            seed,
            dims: [UPSAMPLED_SIZE, UPSAMPLED_SIZE],
            image: Some(encode_pixels(base)),
        })
    }
}

/// Serves `backend` over a line stream until the input closes.
pub fn serve<R: BufRead, W: Write>(backend: &dyn T2IBackend, reader: R, mut writer: W) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str::<StageRequest>(&line)
            .map_err(|e| format!("bad request: {e}"))
            .and_then(|req| {
                let img = match req.stage {
                    Stage::Base => backend.generate_base(&req.prompt, req.seed),
                    Stage::Upsample => {
                        let data = req.image.as_deref().ok_or("upsample request without image")?;
                        let base = decode_pixels(data, [BASE_SIZE, BASE_SIZE])?;
                        backend.upsample(&base, &req.prompt, req.seed)
                    }
                }
                .map_err(|e| e.to_string())?;
                Ok(StageResponse {
                    pixels: encode_pixels(&img),
                    dims: [img.width(), img.height()],
                })
            });
        match result {
            Ok(resp) => serde_json::to_writer(&mut writer, &resp)?,
            Err(msg) => serde_json::to_writer(&mut writer, &serde_json::json!({ "error": msg }))?,
        }
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
