//! Equity of access: squared gaps between each stratum's covered share and
//! the covered share of the whole population.

use serde::{Deserialize, Serialize};

use crate::domain::{Region, StratumKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEquity {
    pub stratum: StratumKey,
    pub population: u64,
    pub conditional: f64,
    pub squared_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityBreakdown {
    pub marginal: f64,
    /// Strata with zero population are omitted.
    pub per_stratum: Vec<StratumEquity>,
    pub total: f64,
}

fn check_len(region: &Region, e: &[bool]) -> Result<()> {
    if e.len() != region.len() {
        return Err(Error::Dimension(format!(
            "{} indicators for {} areas",
            e.len(),
            region.len()
        )));
    }
    Ok(())
}

/// Share of the whole population living in covered areas.
pub fn marginal_coverage(region: &Region, e: &[bool]) -> Result<f64> {
    check_len(region, e)?;
    let total = region.total_population();
    if total == 0 {
        return Err(Error::ZeroPopulation);
    }
    let covered: u64 = region
        .areas
        .iter()
        .zip(e)
        .filter(|(_, &c)| c)
        .map(|(a, _)| a.population)
        .sum();
    Ok(covered as f64 / total as f64)
}

/// Equity criterion over the full cross-product of strata.
///
/// An all-uncovered `e` scores 0: every group is equally unserved.
pub fn equity_score(region: &Region, e: &[bool]) -> Result<EquityBreakdown> {
    let marginal = marginal_coverage(region, e)?;
    let mut per_stratum = Vec::new();
    let mut total = 0.0;
    for key in region.stratum_keys() {
        let (mut covered, mut all) = (0u64, 0u64);
        for (area, &c) in region.areas.iter().zip(e) {
            let count = area.stratum_counts.get(&key).copied().unwrap_or(0);
            all += count;
            if c {
                covered += count;
            }
        }
        if all == 0 {
            continue;
        }
        let conditional = covered as f64 / all as f64;
        let squared_deviation = (conditional - marginal).powi(2);
        total += squared_deviation;
        per_stratum.push(StratumEquity {
            stratum: key,
            population: all,
            conditional,
            squared_deviation,
        });
    }
    Ok(EquityBreakdown {
        marginal,
        per_stratum,
        total,
    })
}
