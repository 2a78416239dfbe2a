//! Sinusoidal positional encodings evaluated at arbitrary raw positions.

use ndarray::Array2;

use super::config::{PeVariant, PE_PERIOD, THERMAL_PE_DIVISOR};
use crate::error::{Error, Result};

/// Encoding of a single scaled position into `out` (length `d_model`).
pub(crate) fn sinusoid_into(position: f64, out: &mut [f64]) {
    let d = out.len();
    for i in 0..d / 2 {
        let freq = PE_PERIOD.powf(-(2.0 * i as f64) / d as f64);
        let angle = position * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
}

/// Position fed to the sinusoid for a raw value under `variant`.
pub fn scaled_position(variant: PeVariant, raw: f64) -> f64 {
    match variant {
        PeVariant::Thermal => raw / THERMAL_PE_DIVISOR,
        _ => raw,
    }
}

/// `L×d_model` encoding. `raw_positions` holds slot indices, days of year or
/// cumulative GDD depending on the variant; noPE yields zeros.
pub fn positional_encoding(
    variant: PeVariant,
    raw_positions: &[f64],
    d_model: usize,
) -> Result<Array2<f64>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "d_model {d_model} must be even"
        )));
    }
    let mut pe = Array2::zeros((raw_positions.len(), d_model));
    if variant == PeVariant::None {
        return Ok(pe);
    }
    for (mut row, &p) in pe.rows_mut().into_iter().zip(raw_positions) {
        sinusoid_into(
            scaled_position(variant, p),
            row.as_slice_mut().expect("contiguous row"),
        );
    }
    Ok(pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_pe_is_zero() {
        let pe = positional_encoding(PeVariant::None, &[0.0, 17.0, 300.0], 8).unwrap();
        assert!(pe.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn position_zero_alternates() {
        let pe = positional_encoding(PeVariant::Linear, &[0.0], 8).unwrap();
        assert_eq!(
            pe.row(0).to_vec(),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn equal_positions_equal_rows() {
        let pe = positional_encoding(PeVariant::Calendar, &[120.0, 45.0, 120.0], 16).unwrap();
        assert_eq!(pe.row(0), pe.row(2));
        assert_ne!(pe.row(0), pe.row(1));
    }

    #[test]
    fn thermal_divides_raw_gdd() {
        let t = positional_encoding(PeVariant::Thermal, &[1500.0], 16).unwrap();
        let c = positional_encoding(PeVariant::Calendar, &[150.0], 16).unwrap();
        assert_eq!(t, c);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(positional_encoding(PeVariant::Linear, &[1.0], 7).is_err());
    }
}
