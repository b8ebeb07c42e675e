//! Detection packet types, validation, and the line-delimited wire format.
//!
//! A [`FramePacket`] carries every detection one camera produced for one frame.
//! Packets are validated on ingestion and are immutable afterwards.

mod bbox;
mod labels;
mod wire;

pub use bbox::{iou, BoundingBox};
pub use labels::{
    ClassId, ClassKind, LabelError, LabelRegistry, BRAKE_OFF, BRAKE_ON, DEFAULT_VEHICLE_CLASSES,
    PEDESTRIAN,
};
pub use wire::{
    parse_stream, read_stream, write_packet, write_stream, PacketReader, StreamError,
    SCHEMA_VERSION,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
    pub confidence: f64,
    /// Optional appearance vector supplied by an external embedder.
    pub embedding: Option<Vec<f32>>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class_id: ClassId, confidence: f64) -> Self {
        Self {
            bbox,
            class_id,
            confidence,
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub camera_id: u32,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PacketError {
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyFrame { width: u32, height: u32 },
    #[error("detection {index}: non-finite coordinate or confidence")]
    NonFinite { index: usize },
    #[error("detection {index}: degenerate box (requires x_min < x_max and y_min < y_max)")]
    DegenerateBox { index: usize },
    #[error("detection {index}: box outside the {width}x{height} frame")]
    BoxOutOfFrame { index: usize, width: u32, height: u32 },
    #[error("detection {index}: confidence {value} outside [0, 1]")]
    ConfidenceOutOfRange { index: usize, value: f64 },
    #[error("camera {got} validated against previous packet of camera {expected}")]
    CameraMismatch { expected: u32, got: u32 },
    #[error("frame index {got} does not follow {prev}")]
    FrameIndexNotIncreasing { prev: u64, got: u64 },
    #[error("timestamp {got} ms precedes {prev} ms")]
    TimestampDecreasing { prev: u64, got: u64 },
}

/// Checks packet invariants, including monotonicity against the previous packet
/// of the same camera. Returns the packet unchanged on success.
pub fn validate_packet(
    packet: FramePacket,
    prev: Option<&FramePacket>,
) -> Result<FramePacket, PacketError> {
    check_packet(&packet, prev.map(|p| (p.camera_id, p.frame_index, p.timestamp_ms)))?;
    Ok(packet)
}

pub(crate) fn check_packet(
    packet: &FramePacket,
    prev: Option<(u32, u64, u64)>,
) -> Result<(), PacketError> {
    if packet.frame_width == 0 || packet.frame_height == 0 {
        return Err(PacketError::EmptyFrame {
            width: packet.frame_width,
            height: packet.frame_height,
        });
    }
    let (w, h) = (packet.frame_width as f64, packet.frame_height as f64);
    for (index, det) in packet.detections.iter().enumerate() {
        if !det.bbox.is_finite() || !det.confidence.is_finite() {
            return Err(PacketError::NonFinite { index });
        }
        if !det.bbox.is_proper() {
            return Err(PacketError::DegenerateBox { index });
        }
        if !det.bbox.fits_in(w, h) {
            return Err(PacketError::BoxOutOfFrame {
                index,
                width: packet.frame_width,
                height: packet.frame_height,
            });
        }
        if !(0.0..=1.0).contains(&det.confidence) {
            return Err(PacketError::ConfidenceOutOfRange {
                index,
                value: det.confidence,
            });
        }
    }
    if let Some((camera, frame, ts)) = prev {
        if camera != packet.camera_id {
            return Err(PacketError::CameraMismatch {
                expected: camera,
                got: packet.camera_id,
            });
        }
        if packet.frame_index <= frame {
            return Err(PacketError::FrameIndexNotIncreasing {
                prev: frame,
                got: packet.frame_index,
            });
        }
        if packet.timestamp_ms < ts {
            return Err(PacketError::TimestampDecreasing {
                prev: ts,
                got: packet.timestamp_ms,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(frame: u64, ts: u64, dets: Vec<Detection>) -> FramePacket {
        FramePacket {
            camera_id: 0,
            frame_index: frame,
            timestamp_ms: ts,
            frame_width: 640,
            frame_height: 360,
            detections: dets,
        }
    }

    fn det(conf: f64) -> Detection {
        Detection::new(BoundingBox::new(10.0, 10.0, 50.0, 40.0), ClassId(0), conf)
    }

    #[test]
    fn increasing_frame_accepted() {
        let prev = packet(4, 400, vec![]);
        assert!(validate_packet(packet(5, 500, vec![det(0.9)]), Some(&prev)).is_ok());
    }

    #[test]
    fn repeated_frame_index_rejected() {
        let prev = packet(4, 400, vec![]);
        assert_eq!(
            validate_packet(packet(4, 500, vec![]), Some(&prev)),
            Err(PacketError::FrameIndexNotIncreasing { prev: 4, got: 4 })
        );
    }

    #[test]
    fn timestamp_may_repeat_but_not_decrease() {
        let prev = packet(4, 400, vec![]);
        assert!(validate_packet(packet(5, 400, vec![]), Some(&prev)).is_ok());
        assert_eq!(
            validate_packet(packet(5, 399, vec![]), Some(&prev)),
            Err(PacketError::TimestampDecreasing { prev: 400, got: 399 })
        );
    }

    #[test]
    fn confidence_range() {
        assert_eq!(
            validate_packet(packet(0, 0, vec![det(1.2)]), None),
            Err(PacketError::ConfidenceOutOfRange { index: 0, value: 1.2 })
        );
        assert!(validate_packet(packet(0, 0, vec![det(1.0), det(0.0)]), None).is_ok());
    }

    #[test]
    fn box_checks() {
        let mut d = det(0.5);
        d.bbox = BoundingBox::new(50.0, 10.0, 10.0, 40.0);
        assert_eq!(
            validate_packet(packet(0, 0, vec![d.clone()]), None),
            Err(PacketError::DegenerateBox { index: 0 })
        );
        d.bbox = BoundingBox::new(600.0, 10.0, 641.0, 40.0);
        assert!(matches!(
            validate_packet(packet(0, 0, vec![d]), None),
            Err(PacketError::BoxOutOfFrame { index: 0, .. })
        ));
    }
}
