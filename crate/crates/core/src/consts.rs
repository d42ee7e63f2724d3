//! Physical constants (SI, CODATA 2018).

/// Vacuum permittivity epsilon_0 (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Speed of light in vacuum c (m/s, exact).
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
