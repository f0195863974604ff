//! Float formatting for reports: every float carries 17 significant digits.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// Serializes as a JSON number in `d.dddddddddddddddde±x` form, or `null` when not finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F17(pub f64);

pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn f17_vec(xs: &[f64]) -> Vec<F17> {
    xs.iter().copied().map(F17).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = serde_json::to_string(&F17(x)).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back, x, "{s}");
        }
        assert_eq!(serde_json::to_string(&F17(f64::NAN)).unwrap(), "null");
    }
}
