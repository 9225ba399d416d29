//! Paired McNemar tests restricted to one ground-truth category.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;

use super::StatsError;
use crate::domain::AssessmentLabel;

/// Upper tail of the chi-square distribution with one degree of freedom,
/// `erfc(sqrt(x / 2))`.
pub fn chi_square_df1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum McNemarMethod {
    /// `(|b - c| - 1)^2 / (b + c)` against chi-square(1).
    #[default]
    ContinuityCorrected,
    /// Two-sided exact binomial test on the discordant pairs; for small
    /// `b + c`.
    ExactBinomial,
}

/// 2x2 agreement table between two classifiers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McNemarCells {
    pub both_correct: u64,
    /// First right, second wrong (`b`).
    pub only_first_correct: u64,
    /// First wrong, second right (`c`).
    pub only_second_correct: u64,
    pub both_wrong: u64,
}

impl McNemarCells {
    pub fn total(&self) -> u64 {
        self.both_correct + self.only_first_correct + self.only_second_correct + self.both_wrong
    }

    pub fn discordant(&self) -> u64 {
        self.only_first_correct + self.only_second_correct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub cells: McNemarCells,
    /// `None` when there are no discordant pairs.
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub method: McNemarMethod,
}

impl McNemarResult {
    pub fn is_degenerate(&self) -> bool {
        self.statistic.is_none()
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn exact_binomial_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let dist = Binomial::new(0.5, n).expect("valid binomial parameters");
    (2.0 * dist.cdf(k)).min(1.0)
}

/// Test statistic and p-value from a filled contingency table. With no
/// discordant pairs the statistic is reported as not applicable and
/// `p = 1`.
pub fn mcnemar_from_cells(cells: McNemarCells, method: McNemarMethod) -> McNemarResult {
    let (b, c) = (cells.only_first_correct, cells.only_second_correct);
    if b + c == 0 {
        return McNemarResult { cells, statistic: None, p_value: 1.0, method };
    }
    let diff = b.abs_diff(c) as f64;
    let statistic = (diff - 1.0).powi(2) / (b + c) as f64;
    let p_value = match method {
        McNemarMethod::ContinuityCorrected => chi_square_df1_sf(statistic),
        McNemarMethod::ExactBinomial => exact_binomial_p(b, c),
    };
    McNemarResult { cells, statistic: Some(statistic), p_value, method }
}

/// McNemar test of two prediction lists over the records whose truth is
/// `category`, scoring each prediction as correct iff it equals `category`.
/// The three slices are aligned by household.
pub fn mcnemar_category(
    truths: &[AssessmentLabel],
    first: &[AssessmentLabel],
    second: &[AssessmentLabel],
    category: AssessmentLabel,
    method: McNemarMethod,
) -> Result<McNemarResult, StatsError> {
    if truths.len() != first.len() || truths.len() != second.len() {
        return Err(StatsError::LengthMismatch(truths.len(), first.len(), second.len()));
    }
    let mut cells = McNemarCells::default();
    for ((truth, p1), p2) in truths.iter().zip(first).zip(second) {
        if *truth != category {
            continue;
        }
        match (*p1 == category, *p2 == category) {
            (true, true) => cells.both_correct += 1,
            (true, false) => cells.only_first_correct += 1,
            (false, true) => cells.only_second_correct += 1,
            (false, false) => cells.both_wrong += 1,
        }
    }
    Ok(mcnemar_from_cells(cells, method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use AssessmentLabel::*;

    fn cells(a: u64, b: u64, c: u64, d: u64) -> McNemarCells {
        McNemarCells { both_correct: a, only_first_correct: b, only_second_correct: c, both_wrong: d }
    }

    #[test]
    fn large_one_sided_improvement() {
        let r = mcnemar_from_cells(cells(0, 116, 0, 0), McNemarMethod::ContinuityCorrected);
        assert_abs_diff_eq!(r.statistic.unwrap(), 115.0 * 115.0 / 116.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.statistic.unwrap(), 114.0086, epsilon = 1e-4);
        assert!(r.p_value < 1e-25);
        assert!(r.p_value > 0.0);
    }

    #[test]
    fn degenerate_table() {
        let r = mcnemar_from_cells(cells(40, 0, 0, 3), McNemarMethod::ContinuityCorrected);
        assert!(r.is_degenerate());
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn balanced_discordance() {
        let r = mcnemar_from_cells(cells(5, 1, 1, 0), McNemarMethod::ContinuityCorrected);
        assert_eq!(r.statistic, Some(0.5));
        assert_abs_diff_eq!(r.p_value, 0.4795, epsilon = 1e-3);
    }

    #[test]
    fn sf_reference_points() {
        assert_eq!(chi_square_df1_sf(0.0), 1.0);
        assert_abs_diff_eq!(chi_square_df1_sf(3.841459), 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(chi_square_df1_sf(6.634897), 0.01, epsilon = 1e-6);
        assert!(chi_square_df1_sf(114.0) < 1e-25);
    }

    #[test]
    fn exact_variant() {
        // b = 0, c = 5: p = 2 * 0.5^5
        let r = mcnemar_from_cells(cells(0, 0, 5, 0), McNemarMethod::ExactBinomial);
        assert_abs_diff_eq!(r.p_value, 0.0625, epsilon = 1e-12);
        let r = mcnemar_from_cells(cells(0, 3, 3, 0), McNemarMethod::ExactBinomial);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn category_restriction() {
        let truths = [NoDamage, NoDamage, NoDamage, Affected, Affected];
        let first = [NoDamage, Affected, Affected, NoDamage, Affected];
        let second = [NoDamage, NoDamage, Affected, Affected, NoDamage];
        let r = mcnemar_category(&truths, &first, &second, NoDamage, McNemarMethod::default()).unwrap();
        assert_eq!(r.cells, cells(1, 0, 1, 1));
        let r = mcnemar_category(&truths, &first, &second, Affected, McNemarMethod::default()).unwrap();
        assert_eq!(r.cells, cells(0, 1, 1, 0));
        let r = mcnemar_category(&truths, &first, &second, Destroyed, McNemarMethod::default()).unwrap();
        assert_eq!(r.cells.total(), 0);
        assert!(r.is_degenerate());
        assert!(mcnemar_category(&truths, &first[..2], &second, NoDamage, McNemarMethod::default()).is_err());
    }

    proptest! {
        #[test]
        fn statistic_symmetric_and_ignores_concordant(a in 0u64..500, b in 0u64..500, c in 0u64..500, d in 0u64..500) {
            let r1 = mcnemar_from_cells(cells(a, b, c, d), McNemarMethod::ContinuityCorrected);
            let r2 = mcnemar_from_cells(cells(d, c, b, a), McNemarMethod::ContinuityCorrected);
            let r3 = mcnemar_from_cells(cells(0, b, c, 0), McNemarMethod::ContinuityCorrected);
            prop_assert_eq!(r1.statistic, r2.statistic);
            prop_assert_eq!(r1.statistic, r3.statistic);
            prop_assert_eq!(r1.p_value, r2.p_value);
            prop_assert!((0.0..=1.0).contains(&r1.p_value));
            prop_assert_eq!(r1.cells.total(), a + b + c + d);
        }

        #[test]
        fn sf_is_monotone(x in 0.0f64..200.0, dx in 0.0f64..10.0) {
            prop_assert!(chi_square_df1_sf(x + dx) <= chi_square_df1_sf(x));
        }
    }
}
