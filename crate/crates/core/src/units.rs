//! Unit conversions. Everything internal is SI; km/h only crosses I/O.

pub const KMH_PER_MS: f64 = 3.6;

/// Speed limits a road segment may carry, in km/h.
pub const SPEED_LIMITS_KMH: [u32; 6] = [30, 40, 50, 60, 70, 80];

/// Highest ego speed the controller accepts (80 km/h).
pub const MAX_EGO_SPEED: f64 = 80.0 / KMH_PER_MS;

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / KMH_PER_MS
}

pub fn ms_to_kmh(ms: f64) -> f64 {
    ms * KMH_PER_MS
}

/// True if `limit` (m/s) is one of the allowed segment limits.
pub fn is_valid_speed_limit(limit: f64) -> bool {
    SPEED_LIMITS_KMH
        .iter()
        .any(|&k| (kmh_to_ms(k as f64) - limit).abs() < 1e-9)
}
