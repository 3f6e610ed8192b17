use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three sensor streams of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Ecg,
    Imu,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Ecg, Modality::Imu];

    pub fn code(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Ecg => 1,
            Modality::Imu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Ecg => "ecg",
            Modality::Imu => "imu",
        }
    }

    /// Channels per sample: 3-axis accelerometer plus gyroscope for IMU.
    pub fn channels(self) -> usize {
        match self {
            Modality::Imu => 6,
            _ => 1,
        }
    }

    /// The other two modalities, in canonical order.
    pub fn peers(self) -> [Modality; 2] {
        match self {
            Modality::Audio => [Modality::Ecg, Modality::Imu],
            Modality::Ecg => [Modality::Audio, Modality::Imu],
            Modality::Imu => [Modality::Audio, Modality::Ecg],
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "audio" => Ok(Modality::Audio),
            "ecg" => Ok(Modality::Ecg),
            "imu" => Ok(Modality::Imu),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// One value per modality.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Trimodal<T> {
    pub audio: T,
    pub ecg: T,
    pub imu: T,
}

impl<T> Trimodal<T> {
    pub fn new(audio: T, ecg: T, imu: T) -> Self {
        Self { audio, ecg, imu }
    }

    pub fn from_fn(mut f: impl FnMut(Modality) -> T) -> Self {
        Self {
            audio: f(Modality::Audio),
            ecg: f(Modality::Ecg),
            imu: f(Modality::Imu),
        }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(Modality) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self {
            audio: f(Modality::Audio)?,
            ecg: f(Modality::Ecg)?,
            imu: f(Modality::Imu)?,
        })
    }

    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Audio => &self.audio,
            Modality::Ecg => &self.ecg,
            Modality::Imu => &self.imu,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut T {
        match m {
            Modality::Audio => &mut self.audio,
            Modality::Ecg => &mut self.ecg,
            Modality::Imu => &mut self.imu,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Modality, &T) -> U) -> Trimodal<U> {
        Trimodal {
            audio: f(Modality::Audio, &self.audio),
            ecg: f(Modality::Ecg, &self.ecg),
            imu: f(Modality::Imu, &self.imu),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, &T)> {
        Modality::ALL.into_iter().map(move |m| (m, self.get(m)))
    }
}
