use rust_decimal::{Decimal, RoundingStrategy};

use super::{ModelResponse, ModelSpec};

/// Billed cost of one response, exact.
pub fn call_cost(response: &ModelResponse, model: &ModelSpec) -> Decimal {
    cost_of(response.input_tokens, response.output_tokens, model)
}

pub(crate) fn cost_of(input_tokens: u64, output_tokens: u64, model: &ModelSpec) -> Decimal {
    let million = Decimal::from(1_000_000u32);
    Decimal::from(input_tokens) * model.price_in_per_million / million
        + Decimal::from(output_tokens) * model.price_out_per_million / million
}

pub fn total_cost<'a>(responses: impl IntoIterator<Item = &'a ModelResponse>, model: &ModelSpec) -> Decimal {
    responses.into_iter().map(|r| call_cost(r, model)).sum()
}

/// Half-even to six decimal places. Display only; never feed back into sums.
pub fn display_cost(cost: Decimal) -> String {
    cost.round_dp_with_strategy(6, RoundingStrategy::MidpointNearestEven)
        .to_string()
}
