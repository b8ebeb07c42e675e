use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_packet, BoundingBox, ClassId, Detection, FramePacket, LabelRegistry, PacketError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPacket {
    v: u32,
    cam: u32,
    frame: u64,
    ts_ms: u64,
    w: u32,
    h: u32,
    dets: Vec<RawDetection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    cls: String,
    conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f32>>,
}

/// Errors carry the 1-based line number of the offending record.
#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: read failed: {source}")]
    Io {
        line: usize,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { line: usize, found: u64 },
    #[error("line {line}: unknown class `{name}`")]
    UnknownClass { line: usize, name: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: PacketError,
    },
}

impl StreamError {
    pub fn line(&self) -> usize {
        match self {
            StreamError::Io { line, .. }
            | StreamError::Malformed { line, .. }
            | StreamError::SchemaVersion { line, .. }
            | StreamError::UnknownClass { line, .. }
            | StreamError::Invalid { line, .. } => *line,
        }
    }
}

/// Streaming parser: yields validated packets in file order, holding only the
/// last `(camera, frame, timestamp)` per camera for monotonicity checks.
pub struct PacketReader<'a, R> {
    source: R,
    registry: &'a LabelRegistry,
    line: usize,
    buf: String,
    last: BTreeMap<u32, (u32, u64, u64)>,
    failed: bool,
}

impl<'a, R: BufRead> PacketReader<'a, R> {
    pub fn new(source: R, registry: &'a LabelRegistry) -> Self {
        Self {
            source,
            registry,
            line: 0,
            buf: String::new(),
            last: BTreeMap::new(),
            failed: false,
        }
    }

    fn decode(&self, text: &str) -> Result<FramePacket, StreamError> {
        let line = self.line;
        let malformed = |message: String| StreamError::Malformed { line, message };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        match value.get("v").and_then(serde_json::Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(found) => return Err(StreamError::SchemaVersion { line, found }),
            None => return Err(malformed("missing integer field `v`".into())),
        }
        let raw: RawPacket = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        let mut detections = Vec::with_capacity(raw.dets.len());
        for d in raw.dets {
            let class_id = self
                .registry
                .lookup(&d.cls)
                .ok_or(StreamError::UnknownClass { line, name: d.cls })?;
            detections.push(Detection {
                bbox: BoundingBox::new(d.x1, d.y1, d.x2, d.y2),
                class_id,
                confidence: d.conf,
                embedding: d.emb,
            });
        }
        Ok(FramePacket {
            camera_id: raw.cam,
            frame_index: raw.frame,
            timestamp_ms: raw.ts_ms,
            frame_width: raw.w,
            frame_height: raw.h,
            detections,
        })
    }
}

impl<R: BufRead> Iterator for PacketReader<'_, R> {
    type Item = Result<FramePacket, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line += 1;
            match self.source.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    self.failed = true;
                    return Some(Err(StreamError::Io {
                        line: self.line,
                        source,
                    }));
                }
            }
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let result = self.decode(text).and_then(|packet| {
                let prev = self.last.get(&packet.camera_id).copied();
                check_packet(&packet, prev).map_err(|source| StreamError::Invalid {
                    line: self.line,
                    source,
                })?;
                self.last.insert(
                    packet.camera_id,
                    (packet.camera_id, packet.frame_index, packet.timestamp_ms),
                );
                Ok(packet)
            });
            if result.is_err() {
                self.failed = true;
            }
            return Some(result);
        }
    }
}

/// Parses a detection stream. Iteration stops after the first error.
pub fn parse_stream<R: BufRead>(source: R, registry: &LabelRegistry) -> PacketReader<'_, R> {
    PacketReader::new(source, registry)
}

/// Collects a whole stream, failing on the first bad record.
pub fn read_stream<R: BufRead>(
    source: R,
    registry: &LabelRegistry,
) -> Result<Vec<FramePacket>, StreamError> {
    parse_stream(source, registry).collect()
}

/// Writes one packet as a single line. Panics if a class id is not in `registry`.
pub fn write_packet<W: Write>(
    mut out: W,
    packet: &FramePacket,
    registry: &LabelRegistry,
) -> io::Result<()> {
    let raw = RawPacket {
        v: SCHEMA_VERSION,
        cam: packet.camera_id,
        frame: packet.frame_index,
        ts_ms: packet.timestamp_ms,
        w: packet.frame_width,
        h: packet.frame_height,
        dets: packet
            .detections
            .iter()
            .map(|d| RawDetection {
                x1: d.bbox.x_min,
                y1: d.bbox.y_min,
                x2: d.bbox.x_max,
                y2: d.bbox.y_max,
                cls: class_name(registry, d.class_id).to_owned(),
                conf: d.confidence,
                emb: d.embedding.clone(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut out, &raw)?;
    out.write_all(b"\n")
}

pub fn write_stream<'p, W: Write>(
    mut out: W,
    packets: impl IntoIterator<Item = &'p FramePacket>,
    registry: &LabelRegistry,
) -> io::Result<()> {
    for p in packets {
        write_packet(&mut out, p, registry)?;
    }
    out.flush()
}

fn class_name(registry: &LabelRegistry, id: ClassId) -> &str {
    registry
        .name(id)
        .unwrap_or_else(|| panic!("class id {} not in registry", id.0))
}
