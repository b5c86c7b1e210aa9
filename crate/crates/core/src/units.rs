//! dB and dBm conversion helpers. Conversions happen once at config parse
//! time; everything downstream is SI (W, Hz, J, s, bits).

/// Transmit power in watts from dBm: 10^((dBm − 30)/10).
pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Inverse of [`dbm_to_watt`].
pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Linear power ratio from decibels.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
