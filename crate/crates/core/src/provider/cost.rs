//! Per-token pricing in exact decimal arithmetic.

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::TokenUsage;

/// Prices in currency units per token.
///
/// The defaults are input 2.5e-6 and output 1.0e-5. These reproduce every
/// published per-pipeline total (e.g. 9320 x 2.5e-6 + 14 x 1.0e-5 =
/// 0.02344), whereas the 2.0e-6 input price sometimes quoted alongside them
/// does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(with = "rust_decimal::serde::str")]
    pub input_price_per_token: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub output_price_per_token: Decimal,
}

impl CostModel {
    pub fn new(input_price_per_token: Decimal, output_price_per_token: Decimal) -> Self {
        CostModel { input_price_per_token, output_price_per_token }
    }

    pub fn is_valid(&self) -> bool {
        self.input_price_per_token >= Decimal::ZERO && self.output_price_per_token >= Decimal::ZERO
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            // 2.5e-6
            input_price_per_token: Decimal::new(25, 7),
            // 1.0e-5
            output_price_per_token: Decimal::new(1, 5),
        }
    }
}

pub fn cost_of(usage: TokenUsage, model: &CostModel) -> Decimal {
    Decimal::from(usage.input_tokens) * model.input_price_per_token
        + Decimal::from(usage.output_tokens) * model.output_price_per_token
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::str::FromStr;

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn single_image_pipeline_a() {
        assert_eq!(cost_of(TokenUsage::new(5240, 18), &CostModel::default()), d("0.01328"));
    }

    #[test]
    fn three_image_pipeline_b() {
        let usage = TokenUsage::new(15890 + 1930, 660 + 12);
        assert_eq!(cost_of(usage, &CostModel::default()), d("0.05127"));
    }

    #[test]
    fn zero_usage_costs_nothing() {
        assert_eq!(cost_of(TokenUsage::default(), &CostModel::default()), Decimal::ZERO);
    }

    #[test]
    fn prices_round_trip_as_strings() {
        let json = serde_json::to_string(&CostModel::default()).unwrap();
        assert_eq!(json, r#"{"input_price_per_token":"0.0000025","output_price_per_token":"0.00001"}"#);
        assert_eq!(serde_json::from_str::<CostModel>(&json).unwrap(), CostModel::default());
    }

    proptest! {
        #[test]
        fn cost_is_linear(a in 0u64..10_000_000, b in 0u64..10_000_000, c in 0u64..10_000_000, e in 0u64..10_000_000) {
            let m = CostModel::default();
            let u1 = TokenUsage::new(a, b);
            let u2 = TokenUsage::new(c, e);
            prop_assert_eq!(cost_of(u1 + u2, &m), cost_of(u1, &m) + cost_of(u2, &m));
        }
    }
}
