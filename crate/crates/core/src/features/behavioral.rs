use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::model::{CrashRecord, Flag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehavioralRiskWeights {
    /// Alcohol, drugged, marijuana.
    pub impairment: [f64; 3],
    /// Cell phone, distracted, fatigue.
    pub distraction: [f64; 3],
}

impl Default for BehavioralRiskWeights {
    fn default() -> Self {
        BehavioralRiskWeights { impairment: [0.4, 0.4, 0.2], distraction: [0.3, 0.4, 0.3] }
    }
}

/// Clipped dot product of flag values and weights.
pub fn weighted_risk(flags: &[f64], weights: &[f64]) -> Result<f64, FeatureError> {
    if flags.len() != weights.len() {
        return Err(FeatureError::LengthMismatch { expected: weights.len(), got: flags.len() });
    }
    Ok(flags.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>().clamp(0.0, 1.0))
}

fn group_values(values: &[f64; 15], group: [Flag; 3]) -> [f64; 3] {
    group.map(|f| values[f.index()])
}

/// (impairment_risk, distraction_risk) from numeric flag values.
pub fn behavioral_features(values: &[f64; 15], w: &BehavioralRiskWeights) -> (f64, f64) {
    let imp = weighted_risk(&group_values(values, Flag::IMPAIRMENT), &w.impairment).expect("fixed length");
    let dis = weighted_risk(&group_values(values, Flag::DISTRACTION), &w.distraction).expect("fixed length");
    (imp, dis)
}

/// Numeric flag values with missing treated as 0.
pub fn flag_values(record: &CrashRecord) -> [f64; 15] {
    Flag::ALL.map(|f| record.flag_or_zero(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_impairment_weights() {
        let w = BehavioralRiskWeights::default();
        assert!((weighted_risk(&[1.0, 1.0, 0.0], &w.impairment).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(weighted_risk(&[0.0, 0.0, 0.0], &w.impairment).unwrap(), 0.0);
        assert!((weighted_risk(&[1.0, 1.0, 1.0], &w.distraction).unwrap() - 1.0).abs() < 1e-12);
        assert!((w.impairment.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((w.distraction.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(weighted_risk(&[1.0], &[0.5, 0.5]), Err(FeatureError::LengthMismatch { expected: 2, got: 1 })));
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(bits in proptest::collection::vec(any::<bool>(), 3), i in 0usize..3, w in proptest::array::uniform3(0.0f64..1.0)) {
            let flags: Vec<f64> = bits.iter().map(|b| f64::from(u8::from(*b))).collect();
            let before = weighted_risk(&flags, &w).unwrap();
            let mut raised = flags.clone();
            raised[i] = 1.0;
            let after = weighted_risk(&raised, &w).unwrap();
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&before) && (0.0..=1.0).contains(&after));
        }
    }
}
