//! Shared domain types: vehicle subcategories, wireframe sides, fit state.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;

use crate::error::Error;

/// The seven vehicle subcategories distinguished by the shape model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VehicleType {
    CompactCar,
    Sedan,
    Suv,
    EstateCar,
    SportsCar,
    Truck,
    Van,
}

impl VehicleType {
    pub const ALL: [VehicleType; 7] = [
        VehicleType::CompactCar,
        VehicleType::Sedan,
        VehicleType::Suv,
        VehicleType::EstateCar,
        VehicleType::SportsCar,
        VehicleType::Truck,
        VehicleType::Van,
    ];

    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<VehicleType> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            VehicleType::CompactCar => "compact_car",
            VehicleType::Sedan => "sedan",
            VehicleType::Suv => "suv",
            VehicleType::EstateCar => "estate_car",
            VehicleType::SportsCar => "sports_car",
            VehicleType::Truck => "truck",
            VehicleType::Van => "van",
        }
    }
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VehicleType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        VehicleType::ALL
            .iter()
            .copied()
            .find(|t| t.name() == norm)
            .ok_or_else(|| Error::format("vehicle type", format!("unknown type `{s}`")))
    }
}

/// Wireframe subset of the vehicle surface, as seen from outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Front,
    Back,
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Front, Side::Back, Side::Left, Side::Right];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Front => "front",
            Side::Back => "back",
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Side::ALL
            .iter()
            .copied()
            .find(|side| side.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::format("wireframe side", format!("unknown side `{s}`")))
    }
}

/// State of one vehicle hypothesis on the ground plane.
///
/// `t` is the in-plane translation of the model origin in the plane frame,
/// `theta_deg` the heading around the plane normal (counterclockwise looking
/// down the normal, wrapped to `[0, 360)`), and `gamma` the shape
/// coefficients scaling the retained deformation components.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub t: Vector2<f64>,
    pub theta_deg: f64,
    pub gamma: Vec<f64>,
}

impl VehicleState {
    pub fn new(t: Vector2<f64>, theta_deg: f64, gamma: Vec<f64>) -> Self {
        VehicleState {
            t,
            theta_deg: wrap_deg(theta_deg),
            gamma,
        }
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r == 360.0 {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two angles in degrees, in `[0, 180]`.
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_covers_edge_cases() {
        assert_eq!(wrap_deg(0.0), 0.0);
        assert_eq!(wrap_deg(360.0), 0.0);
        assert_eq!(wrap_deg(-10.0), 350.0);
        assert_eq!(wrap_deg(725.0), 5.0);
    }

    #[test]
    fn angular_distance_wraps() {
        assert_eq!(angular_distance_deg(10.0, 350.0), 20.0);
        assert_eq!(angular_distance_deg(0.0, 190.0), 170.0);
        assert_eq!(angular_distance_deg(90.0, 90.0), 0.0);
    }

    #[test]
    fn type_names_round_trip() {
        for t in VehicleType::ALL {
            assert_eq!(t.name().parse::<VehicleType>().unwrap(), t);
            assert_eq!(VehicleType::from_index(t.index()), Some(t));
        }
        assert!("bicycle".parse::<VehicleType>().is_err());
    }

    #[test]
    fn side_names_round_trip() {
        for s in Side::ALL {
            assert_eq!(s.name().parse::<Side>().unwrap(), s);
        }
    }
}
