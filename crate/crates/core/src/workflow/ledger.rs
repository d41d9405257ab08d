//! Remuneration records. Amounts are decimals end to end.

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::WorkflowError;

pub const USD_SCALE: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub entry_id: String,
    pub task_id: String,
    pub harvester_id: String,
    pub amount_usd: Decimal,
    pub fx_rate_idr_per_usd: Decimal,
    pub amount_idr: Decimal,
    pub confirmation_ref: String,
    pub timestamp: DateTime<Utc>,
}

/// Validates the USD amount and brings it to two decimal places.
pub fn normalize_usd(usd: Decimal) -> Result<Decimal, WorkflowError> {
    if usd <= Decimal::ZERO {
        return Err(WorkflowError::BadAmount(format!("amount_usd must be positive, got {usd}")));
    }
    let trimmed = usd.normalize();
    if trimmed.scale() > USD_SCALE {
        return Err(WorkflowError::BadAmount(format!("amount_usd {usd} has more than two decimals")));
    }
    let mut out = trimmed;
    out.rescale(USD_SCALE);
    Ok(out)
}

/// `usd * rate` without rounding. Fails when the product does not fit.
pub fn convert(usd: Decimal, rate: Decimal) -> Result<Decimal, WorkflowError> {
    if rate <= Decimal::ZERO {
        return Err(WorkflowError::BadAmount(format!("fx_rate must be positive, got {rate}")));
    }
    let usd = normalize_usd(usd)?;
    let product = usd
        .checked_mul(rate)
        .ok_or_else(|| WorkflowError::BadAmount(format!("{usd} x {rate} overflows")))?;
    // rust_decimal drops scale (rounds) when the exact product needs more
    // than 28 fractional digits or 96 bits of mantissa.
    if product.scale() != usd.scale() + rate.scale() {
        return Err(WorkflowError::BadAmount(format!(
            "{usd} x {rate} is not representable exactly"
        )));
    }
    Ok(product)
}
