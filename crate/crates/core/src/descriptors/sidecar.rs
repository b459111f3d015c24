use std::io::{self, BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{
    resnet50_activation_shape, DescriptorBackend, DescriptorError, DescriptorKind, InputResolution,
    LayerId, ObjectDescriptor,
};
use crate::image::RgbImage;

/// Environment variable that, when set, replaces the configured sidecar
/// launch command.
pub const SIDECAR_ENV: &str = "SCALEMATCH_SIDECAR";

const PROTOCOL_VERSION: u32 = 1;
const RESNET50_MODEL: &str = "resnet50-imagenet";

#[derive(Debug, thiserror::Error)]
pub enum SidecarError {
    #[error("sidecar unavailable: {0}")]
    Unavailable(String),
    #[error("sidecar protocol error: {0}")]
    Protocol(String),
    #[error("sidecar shape mismatch: declared {declared} values, received {received}")]
    ShapeMismatch { declared: usize, received: usize },
    #[error("sidecar rejected request {id}: {message}")]
    Remote { id: u64, message: String },
}

impl From<io::Error> for SidecarError {
    fn from(e: io::Error) -> Self {
        SidecarError::Unavailable(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub model: String,
    pub layers: Vec<LayerId>,
    pub resolutions: Vec<u32>,
}

#[derive(Serialize)]
struct Request {
    id: u64,
    layer: LayerId,
    resolution: u32,
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    #[serde(default)]
    shape: Option<Vec<usize>>,
    #[serde(default)]
    error: Option<String>,
}

/// Row-major activation tensor returned by the sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Client half of the sidecar stdio protocol over any reader/writer pair.
/// Requests on one client are strictly sequential.
pub struct SidecarClient<R: BufRead, W: Write> {
    reader: R,
    writer: W,
    handshake: Handshake,
    next_id: u64,
}

fn read_line<R: BufRead>(reader: &mut R, what: &str) -> Result<String, SidecarError> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(SidecarError::Unavailable(format!(
            "stream closed while waiting for {what}"
        )));
    }
    if !line.ends_with('\n') {
        return Err(SidecarError::Protocol(format!("unterminated {what} line")));
    }
    Ok(line)
}

impl<R: BufRead, W: Write> SidecarClient<R, W> {
    /// Reads and validates the handshake line.
    pub fn connect(mut reader: R, writer: W) -> Result<Self, SidecarError> {
        let line = read_line(&mut reader, "handshake")?;
        let handshake: Handshake = serde_json::from_str(&line)
            .map_err(|e| SidecarError::Protocol(format!("bad handshake: {e}")))?;
        if handshake.protocol != PROTOCOL_VERSION {
            return Err(SidecarError::Protocol(format!(
                "unsupported protocol version {}",
                handshake.protocol
            )));
        }
        Ok(Self {
            reader,
            writer,
            handshake,
            next_id: 0,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn request(
        &mut self,
        crop: &RgbImage,
        layer: LayerId,
        resolution: InputResolution,
    ) -> Result<Activation, SidecarError> {
        let id = self.next_id;
        self.next_id += 1;
        let header = Request {
            id,
            layer,
            resolution: resolution.side(),
            width: crop.width(),
            height: crop.height(),
        };
        let mut line = serde_json::to_vec(&header).expect("request serializes");
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.writer.write_all(&crop.to_rgb8_bytes())?;
        self.writer.flush()?;

        let line = read_line(&mut self.reader, "response")?;
        let response: Response = serde_json::from_str(&line)
            .map_err(|e| SidecarError::Protocol(format!("bad response: {e}")))?;
        if response.id != id {
            return Err(SidecarError::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if let Some(message) = response.error {
            return Err(SidecarError::Remote { id, message });
        }
        let shape = response
            .shape
            .ok_or_else(|| SidecarError::Protocol("response has neither shape nor error".into()))?;
        let declared = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| SidecarError::Protocol("shape overflows".into()))?;

        let mut payload = Vec::with_capacity(declared * 4);
        (&mut self.reader)
            .take((declared * 4) as u64)
            .read_to_end(&mut payload)?;
        if payload.len() != declared * 4 {
            return Err(SidecarError::ShapeMismatch {
                declared,
                received: payload.len() / 4,
            });
        }
        if self.handshake.model == RESNET50_MODEL {
            let expected: usize = resnet50_activation_shape(layer, resolution.side())
                .iter()
                .product();
            if expected != declared {
                return Err(SidecarError::ShapeMismatch {
                    declared: expected,
                    received: declared,
                });
            }
        }
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Activation { shape, values })
    }

    /// Flattened activation as an object descriptor.
    pub fn describe(
        &mut self,
        crop: &RgbImage,
        layer: LayerId,
        resolution: InputResolution,
    ) -> Result<ObjectDescriptor, DescriptorError> {
        let activation = self.request(crop, layer, resolution)?;
        ObjectDescriptor::new(
            activation.values,
            DescriptorKind::Cnn { layer, resolution },
        )
    }
}

/// Returns the sidecar command from the environment if set, else `configured`.
pub fn resolve_sidecar_command(configured: &str) -> String {
    match std::env::var(SIDECAR_ENV) {
        Ok(cmd) if !cmd.trim().is_empty() => cmd,
        _ => configured.to_string(),
    }
}

/// A sidecar child process spoken to over its stdin/stdout. The child is
/// killed when this is dropped.
pub struct SidecarProcess {
    child: Child,
    client: SidecarClient<BufReader<ChildStdout>, ChildStdin>,
}

impl SidecarProcess {
    /// Launches `command` through `sh -c` and completes the handshake.
    pub fn spawn(command: &str) -> Result<Self, SidecarError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SidecarError::Unavailable(format!("cannot launch `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match SidecarClient::connect(BufReader::new(stdout), stdin) {
            Ok(client) => Ok(Self { child, client }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn client(&mut self) -> &mut SidecarClient<BufReader<ChildStdout>, ChildStdin> {
        &mut self.client
    }
}

impl Drop for SidecarProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Descriptor backend that forwards crops to a sidecar process.
pub struct SidecarBackend {
    process: SidecarProcess,
    layer: LayerId,
    resolution: InputResolution,
}

impl SidecarBackend {
    pub fn spawn(
        command: &str,
        layer: LayerId,
        resolution: InputResolution,
    ) -> Result<Self, SidecarError> {
        let process = SidecarProcess::spawn(command)?;
        let hs = process.client.handshake();
        if !hs.layers.contains(&layer) || !hs.resolutions.contains(&resolution.side()) {
            return Err(SidecarError::Protocol(format!(
                "sidecar does not offer {layer} at {resolution}"
            )));
        }
        Ok(Self {
            process,
            layer,
            resolution,
        })
    }
}

impl DescriptorBackend for SidecarBackend {
    fn crop_resolution(&self) -> usize {
        self.resolution.side() as usize
    }

    fn describe(&mut self, crop: &RgbImage) -> Result<ObjectDescriptor, DescriptorError> {
        let (layer, resolution) = (self.layer, self.resolution);
        self.process.client().describe(crop, layer, resolution)
    }
}
