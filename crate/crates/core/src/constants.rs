//! Physical constants (CODATA 2018) and species data.

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const ELECTRON_MASS_U: f64 = 5.485_799_090_65e-4;

/// Atomic mass of neutral 171Yb in unified mass units.
pub const YB171_ATOMIC_MASS_U: f64 = 170.936_332_5;

/// Mass of a singly ionised 171Yb ion in kg.
pub fn yb171_ion_mass() -> f64 {
    (YB171_ATOMIC_MASS_U - ELECTRON_MASS_U) * ATOMIC_MASS_UNIT
}

/// Coulomb constant times q1*q2 for two ions of charge `charge`.
pub fn coulomb_strength(charge: f64) -> f64 {
    charge * charge / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY)
}

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
