//! Shared fixtures for the crate's tests. Building the vehicle family and
//! its visibility table takes a moment, so both are created once per test
//! binary and reused.

use std::sync::OnceLock;

use crate::observer::VisibilityLut;
use crate::shape_model::{synthetic, DeformableVehicleModel};

pub struct Fixture {
    pub model: DeformableVehicleModel,
    pub lut: VisibilityLut,
}

pub fn family_fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let model = synthetic::family_model(3).expect("family model");
        let lut = VisibilityLut::build(&model, 1.0).expect("visibility table");
        Fixture { model, lut }
    })
}
