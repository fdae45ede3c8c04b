//! Fixed sinusoidal encodings: lead-time frequency features and 2-D patch
//! positions.

/// Number of frequencies in the lead-time encoding; features are
/// `[cos(t·ω_0..ω_255), sin(t·ω_0..ω_255)]`.
pub const LEAD_FREQUENCIES: usize = 256;
pub const LEAD_FEATURES: usize = 2 * LEAD_FREQUENCIES;
const MAX_PERIOD: f64 = 10_000.0;

/// `ω_k = MAX_PERIOD^(-k / LEAD_FREQUENCIES)`.
pub fn lead_frequency(k: usize) -> f64 {
    (-(MAX_PERIOD.ln()) * k as f64 / LEAD_FREQUENCIES as f64).exp()
}

/// Sinusoidal features of a lead time given in hours.
pub fn lead_features(lead_hours: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(LEAD_FEATURES);
    out.extend((0..LEAD_FREQUENCIES).map(|k| (lead_hours * lead_frequency(k)).cos()));
    out.extend((0..LEAD_FREQUENCIES).map(|k| (lead_hours * lead_frequency(k)).sin()));
    out
}

fn sincos_1d(dim: usize, pos: f64, out: &mut Vec<f64>) {
    let half = dim / 2;
    let omega = |i: usize| 1.0 / MAX_PERIOD.powf(i as f64 / half as f64);
    out.extend((0..half).map(|i| (pos * omega(i)).sin()));
    out.extend((0..half).map(|i| (pos * omega(i)).cos()));
}

/// `[rows·cols, dim]` row-major table. The first `dim/2` features encode the
/// patch column, the rest the patch row. `dim` must be a multiple of 4.
pub fn positional_table(rows: usize, cols: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            sincos_1d(dim / 2, c as f64, &mut out);
            sincos_1d(dim / 2, r as f64, &mut out);
        }
    }
    out
}
