//! Multi-camera synchronization and mapping into one composite plane.
//!
//! Each camera is resized to a common tile size and tiles are laid out left to
//! right by `position_index`, so a composite x coordinate identifies its source
//! tile. `ppm` is declared against the tile resolution and is never rescaled.

use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, Detection, FramePacket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub camera_id: u32,
    pub native_width: u32,
    pub native_height: u32,
    pub target_width: u32,
    pub target_height: u32,
    /// Pixels per meter at tile resolution.
    #[serde(default = "default_ppm")]
    pub ppm: f64,
    pub position_index: u32,
}

fn default_ppm() -> f64 {
    20.0
}

impl CameraConfig {
    pub fn new(camera_id: u32, position_index: u32, native: (u32, u32), target: (u32, u32)) -> Self {
        Self {
            camera_id,
            native_width: native.0,
            native_height: native.1,
            target_width: target.0,
            target_height: target.1,
            ppm: default_ppm(),
            position_index,
        }
    }

    fn scale(&self) -> (f64, f64) {
        (
            self.target_width as f64 / self.native_width as f64,
            self.target_height as f64 / self.native_height as f64,
        )
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FusionError {
    #[error("camera {0} is already registered")]
    DuplicateCamera(u32),
    #[error("position {position} is already taken by camera {camera_id}")]
    DuplicatePosition { position: u32, camera_id: u32 },
    #[error("camera {camera_id} targets {got:?} but registered cameras use {expected:?}")]
    TargetMismatch {
        camera_id: u32,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("camera {camera_id}: {reason}")]
    InvalidCamera { camera_id: u32, reason: &'static str },
    #[error("no cameras registered")]
    NoCameras,
    #[error("positions must be 0..{count} without gaps, missing {missing}")]
    PositionGap { count: usize, missing: u32 },
    #[error("camera {0} is not registered")]
    UnknownCamera(u32),
    #[error("point ({x}, {y}) outside the {width}x{height} extents of camera {camera_id}")]
    PointOutOfBounds {
        camera_id: u32,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("expected one packet per camera ({expected}), got {got}")]
    PacketCount { expected: usize, got: usize },
    #[error("camera {camera_id} sent a {got:?} frame, configured native size is {expected:?}")]
    FrameSize {
        camera_id: u32,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("skew {skew_ms} ms exceeds tolerance {tolerance_ms} ms, camera {lagging_camera} lags")]
    Alignment {
        skew_ms: u64,
        tolerance_ms: u64,
        lagging_camera: u32,
    },
}

/// Left-to-right arrangement of equally sized tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLayout {
    pub order: Vec<u32>,
    pub tile_width: u32,
    pub tile_height: u32,
}

impl CompositeLayout {
    pub fn from_cameras(cameras: &[CameraConfig]) -> Result<Self, FusionError> {
        let first = cameras.first().ok_or(FusionError::NoCameras)?;
        let mut order = vec![None; cameras.len()];
        for cam in cameras {
            check_camera(cam)?;
            if (cam.target_width, cam.target_height) != (first.target_width, first.target_height) {
                return Err(FusionError::TargetMismatch {
                    camera_id: cam.camera_id,
                    expected: (first.target_width, first.target_height),
                    got: (cam.target_width, cam.target_height),
                });
            }
            let slot = order
                .get_mut(cam.position_index as usize)
                .ok_or(FusionError::PositionGap {
                    count: cameras.len(),
                    missing: (0..cameras.len() as u32)
                        .find(|p| !cameras.iter().any(|c| c.position_index == *p))
                        .unwrap_or(0),
                })?;
            if let Some(other) = slot {
                return Err(FusionError::DuplicatePosition {
                    position: cam.position_index,
                    camera_id: *other,
                });
            }
            *slot = Some(cam.camera_id);
        }
        let order = order
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or(FusionError::PositionGap {
                    count: cameras.len(),
                    missing: i as u32,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            order,
            tile_width: first.target_width,
            tile_height: first.target_height,
        })
    }

    pub fn camera_count(&self) -> usize {
        self.order.len()
    }

    pub fn composite_width(&self) -> u32 {
        self.order.len() as u32 * self.tile_width
    }

    pub fn composite_height(&self) -> u32 {
        self.tile_height
    }

    /// Composite x-range `[start, end)` of the tile at `position`.
    pub fn tile_x_range(&self, position: u32) -> (f64, f64) {
        let start = position as f64 * self.tile_width as f64;
        (start, start + self.tile_width as f64)
    }
}

fn check_camera(cam: &CameraConfig) -> Result<(), FusionError> {
    let invalid = |reason| FusionError::InvalidCamera {
        camera_id: cam.camera_id,
        reason,
    };
    if cam.native_width == 0 || cam.native_height == 0 {
        return Err(invalid("native dimensions must be positive"));
    }
    if cam.target_width == 0 || cam.target_height == 0 {
        return Err(invalid("target dimensions must be positive"));
    }
    if !(cam.ppm.is_finite() && cam.ppm > 0.0) {
        return Err(invalid("ppm must be positive"));
    }
    Ok(())
}

/// Maps a native-resolution point of `camera` into composite coordinates.
pub fn to_composite(
    point: (f64, f64),
    camera: &CameraConfig,
    layout: &CompositeLayout,
) -> Result<(f64, f64), FusionError> {
    let (x, y) = point;
    let inside = |v: f64, max: u32| v.is_finite() && (0.0..=max as f64).contains(&v);
    if !inside(x, camera.native_width) || !inside(y, camera.native_height) {
        return Err(FusionError::PointOutOfBounds {
            camera_id: camera.camera_id,
            x,
            y,
            width: camera.native_width,
            height: camera.native_height,
        });
    }
    let (sx, sy) = camera.scale();
    let offset = camera.position_index as f64 * layout.tile_width as f64;
    Ok((offset + x * sx, y * sy))
}

/// Inverse of [`to_composite`] for points inside the camera's tile.
pub fn from_composite(
    point: (f64, f64),
    camera: &CameraConfig,
    layout: &CompositeLayout,
) -> Result<(f64, f64), FusionError> {
    let (x0, x1) = layout.tile_x_range(camera.position_index);
    let (x, y) = point;
    if !(x >= x0 && x <= x1 && y >= 0.0 && y <= layout.tile_height as f64) {
        return Err(FusionError::PointOutOfBounds {
            camera_id: camera.camera_id,
            x,
            y,
            width: layout.composite_width(),
            height: layout.tile_height,
        });
    }
    let (sx, sy) = camera.scale();
    Ok(((x - x0) / sx, y / sy))
}

pub fn box_to_composite(
    bbox: &BoundingBox,
    camera: &CameraConfig,
    layout: &CompositeLayout,
) -> Result<BoundingBox, FusionError> {
    let (x_min, y_min) = to_composite((bbox.x_min, bbox.y_min), camera, layout)?;
    let (x_max, y_max) = to_composite((bbox.x_max, bbox.y_max), camera, layout)?;
    Ok(BoundingBox::new(x_min, y_min, x_max, y_max))
}

/// A detection in composite coordinates, tagged with its source camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDetection {
    pub detection: Detection,
    pub camera_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositePacket {
    pub timestamp_ms: u64,
    pub detections: Vec<FusedDetection>,
    pub skew_ms: u64,
    pub width: u32,
    pub height: u32,
}

/// Fuses one packet per camera. `cameras` must be the cameras of `layout`.
///
/// The composite timestamp is the median member timestamp (mean of the two
/// middle values, rounded down, for an even camera count).
pub fn fuse(
    latest: &[&FramePacket],
    cameras: &[CameraConfig],
    layout: &CompositeLayout,
    tolerance_ms: u64,
) -> Result<CompositePacket, FusionError> {
    if latest.len() != cameras.len() {
        return Err(FusionError::PacketCount {
            expected: cameras.len(),
            got: latest.len(),
        });
    }
    let mut stamps: Vec<(u64, u32)> = Vec::with_capacity(latest.len());
    for packet in latest {
        let camera = cameras
            .iter()
            .find(|c| c.camera_id == packet.camera_id)
            .ok_or(FusionError::UnknownCamera(packet.camera_id))?;
        if (packet.frame_width, packet.frame_height) != (camera.native_width, camera.native_height) {
            return Err(FusionError::FrameSize {
                camera_id: camera.camera_id,
                expected: (camera.native_width, camera.native_height),
                got: (packet.frame_width, packet.frame_height),
            });
        }
        stamps.push((packet.timestamp_ms, packet.camera_id));
    }
    if stamps.iter().map(|s| s.1).collect::<std::collections::BTreeSet<_>>().len() != stamps.len() {
        return Err(FusionError::PacketCount {
            expected: cameras.len(),
            got: latest.len(),
        });
    }
    stamps.sort_unstable();
    let (oldest, lagging_camera) = stamps[0];
    let newest = stamps[stamps.len() - 1].0;
    let skew_ms = newest - oldest;
    if skew_ms > tolerance_ms {
        return Err(FusionError::Alignment {
            skew_ms,
            tolerance_ms,
            lagging_camera,
        });
    }
    let n = stamps.len();
    let timestamp_ms = if n % 2 == 1 {
        stamps[n / 2].0
    } else {
        (stamps[n / 2 - 1].0 + stamps[n / 2].0) / 2
    };

    let total = latest.iter().map(|p| p.detections.len()).sum();
    let mut detections = Vec::with_capacity(total);
    for camera_id in &layout.order {
        let packet = latest.iter().find(|p| p.camera_id == *camera_id).expect("checked above");
        let camera = cameras.iter().find(|c| c.camera_id == *camera_id).expect("checked above");
        for det in &packet.detections {
            detections.push(FusedDetection {
                detection: Detection {
                    bbox: box_to_composite(&det.bbox, camera, layout)?,
                    ..det.clone()
                },
                camera_id: *camera_id,
            });
        }
    }
    Ok(CompositePacket {
        timestamp_ms,
        detections,
        skew_ms,
        width: layout.composite_width(),
        height: layout.composite_height(),
    })
}

#[derive(Debug, Default)]
struct Slot {
    packet: Option<FramePacket>,
    fresh: bool,
}

type Slots = Arc<Mutex<Vec<Slot>>>;

fn lock(slots: &Slots) -> MutexGuard<'_, Vec<Slot>> {
    // A panic while holding the lock cannot leave a slot half-written.
    slots.lock().unwrap_or_else(|e| e.into_inner())
}

/// Registry of camera streams with one latest-wins buffer per camera.
///
/// All buffers sit behind a single lock so a tick observes a consistent set.
#[derive(Debug, Default)]
pub struct StreamFusion {
    cameras: Vec<CameraConfig>,
    slots: Slots,
    layout: Option<CompositeLayout>,
}

/// Writer side of one camera buffer; cheap to clone and send to a reader thread.
#[derive(Debug, Clone)]
pub struct StreamHandle {
    camera_id: u32,
    index: usize,
    slots: Slots,
}

impl StreamHandle {
    pub fn camera_id(&self) -> u32 {
        self.camera_id
    }

    /// Replaces the buffered packet; older unread packets are dropped.
    pub fn publish(&self, packet: FramePacket) -> Result<(), FusionError> {
        if packet.camera_id != self.camera_id {
            return Err(FusionError::UnknownCamera(packet.camera_id));
        }
        let mut slots = lock(&self.slots);
        slots[self.index] = Slot {
            packet: Some(packet),
            fresh: true,
        };
        Ok(())
    }
}

impl StreamFusion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_stream(&mut self, config: CameraConfig) -> Result<StreamHandle, FusionError> {
        check_camera(&config)?;
        if self.cameras.iter().any(|c| c.camera_id == config.camera_id) {
            return Err(FusionError::DuplicateCamera(config.camera_id));
        }
        if let Some(other) = self.cameras.iter().find(|c| c.position_index == config.position_index) {
            return Err(FusionError::DuplicatePosition {
                position: config.position_index,
                camera_id: other.camera_id,
            });
        }
        if let Some(first) = self.cameras.first() {
            let expected = (first.target_width, first.target_height);
            let got = (config.target_width, config.target_height);
            if expected != got {
                return Err(FusionError::TargetMismatch {
                    camera_id: config.camera_id,
                    expected,
                    got,
                });
            }
        }
        let handle = StreamHandle {
            camera_id: config.camera_id,
            index: self.cameras.len(),
            slots: Arc::clone(&self.slots),
        };
        lock(&self.slots).push(Slot::default());
        self.cameras.push(config);
        self.layout = CompositeLayout::from_cameras(&self.cameras).ok();
        Ok(handle)
    }

    pub fn cameras(&self) -> &[CameraConfig] {
        &self.cameras
    }

    pub fn camera(&self, camera_id: u32) -> Option<&CameraConfig> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn layout(&self) -> Result<&CompositeLayout, FusionError> {
        match &self.layout {
            Some(layout) => Ok(layout),
            None => Err(CompositeLayout::from_cameras(&self.cameras)
                .err()
                .unwrap_or(FusionError::NoCameras)),
        }
    }

    pub fn handle(&self, camera_id: u32) -> Option<StreamHandle> {
        let index = self.cameras.iter().position(|c| c.camera_id == camera_id)?;
        Some(StreamHandle {
            camera_id,
            index,
            slots: Arc::clone(&self.slots),
        })
    }

    /// True when every camera has published since the last consumed tick.
    pub fn all_fresh(&self) -> bool {
        let slots = lock(&self.slots);
        !slots.is_empty() && slots.iter().all(|s| s.fresh)
    }

    /// Fuses the current buffers and marks them consumed. `Ok(None)` until every
    /// camera has published at least once.
    pub fn tick(&self, tolerance_ms: u64) -> Result<Option<CompositePacket>, FusionError> {
        let layout = self.layout()?;
        let mut slots = lock(&self.slots);
        if slots.iter().any(|s| s.packet.is_none()) {
            return Ok(None);
        }
        for slot in slots.iter_mut() {
            slot.fresh = false;
        }
        let latest: Vec<&FramePacket> = slots.iter().filter_map(|s| s.packet.as_ref()).collect();
        fuse(&latest, &self.cameras, layout, tolerance_ms).map(Some)
    }
}
