use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BRAKE_ON: &str = "brake_on";
pub const BRAKE_OFF: &str = "brake_off";
pub const PEDESTRIAN: &str = "pedestrian";

/// Index into a [`LabelRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Vehicle,
    Pedestrian,
    BrakeOn,
    BrakeOff,
}

impl ClassKind {
    /// Whether detections of this kind are fed to the tracker.
    pub fn is_tracked(self) -> bool {
        matches!(self, ClassKind::Vehicle | ClassKind::Pedestrian)
    }

    pub fn is_brake(self) -> bool {
        matches!(self, ClassKind::BrakeOn | ClassKind::BrakeOff)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("duplicate class name `{0}`")]
    Duplicate(String),
    #[error("class name must not be empty")]
    Empty,
    #[error("too many classes ({0})")]
    TooMany(usize),
}

/// Config-declared class names. The brake and pedestrian labels are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRegistry {
    names: Vec<String>,
    kinds: Vec<ClassKind>,
}

pub const DEFAULT_VEHICLE_CLASSES: &[&str] = &[
    "car",
    "truck",
    "bus",
    "minibus",
    "van",
    "pickup",
    "suv",
    "motorcycle",
    "bicycle",
    "scooter",
    "rickshaw",
    "ambulance",
    "fire_truck",
    "police_car",
    "tractor",
    "trailer",
    "tanker",
    "taxi",
];

impl LabelRegistry {
    /// Registry of the given vehicle classes plus the three fixed labels.
    pub fn new<S: AsRef<str>>(vehicle_classes: &[S]) -> Result<Self, LabelError> {
        let mut registry = Self {
            names: Vec::new(),
            kinds: Vec::new(),
        };
        for name in vehicle_classes {
            registry.push(name.as_ref(), ClassKind::Vehicle)?;
        }
        registry.push(PEDESTRIAN, ClassKind::Pedestrian)?;
        registry.push(BRAKE_ON, ClassKind::BrakeOn)?;
        registry.push(BRAKE_OFF, ClassKind::BrakeOff)?;
        Ok(registry)
    }

    fn push(&mut self, name: &str, kind: ClassKind) -> Result<(), LabelError> {
        if name.is_empty() {
            return Err(LabelError::Empty);
        }
        if self.names.iter().any(|n| n == name) {
            return Err(LabelError::Duplicate(name.to_owned()));
        }
        if self.names.len() >= u16::MAX as usize {
            return Err(LabelError::TooMany(self.names.len() + 1));
        }
        self.names.push(name.to_owned());
        self.kinds.push(kind);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<ClassId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| ClassId(i as u16))
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id.0 as usize).map(String::as_str)
    }

    pub fn kind(&self, id: ClassId) -> Option<ClassKind> {
        self.kinds.get(id.0 as usize).copied()
    }

    pub fn id_of_kind(&self, kind: ClassKind) -> ClassId {
        let i = self.kinds.iter().position(|k| *k == kind).expect("fixed labels are always registered");
        ClassId(i as u16)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

impl Default for LabelRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_VEHICLE_CLASSES).expect("default classes are distinct")
    }
}
