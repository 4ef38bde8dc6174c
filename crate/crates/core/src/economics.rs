//! Unit-sales estimates from a revenue total, per-model revenue shares and
//! average selling prices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub model: String,
    pub asp_usd: f64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalesScenario {
    pub name: String,
    pub total_revenue_usd: f64,
    pub rows: Vec<ScenarioRow>,
}

const SHARE_TOLERANCE: f64 = 1e-9;

impl SalesScenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidScenario { scenario: self.name.clone(), reason };
        if !(self.total_revenue_usd >= 0.0) {
            return Err(fail("total revenue must be non-negative".into()));
        }
        for r in &self.rows {
            if !(r.asp_usd > 0.0) {
                return Err(fail(format!("ASP for {} must be positive", r.model)));
            }
            if !(0.0..=1.0).contains(&r.share) {
                return Err(fail(format!("share for {} outside [0, 1]", r.model)));
            }
        }
        let sum: f64 = self.rows.iter().map(|r| r.share).sum();
        if (sum - 1.0).abs() > SHARE_TOLERANCE {
            return Err(fail(format!("shares sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// `revenue * share / asp`, rounded to the nearest unit with halves away from zero.
pub fn estimate_units(revenue: f64, share: f64, asp: f64) -> Result<u64> {
    if !(asp > 0.0) {
        return Err(Error::NonpositivePrice(asp));
    }
    if !(0.0..=1.0).contains(&share) {
        return Err(Error::InvalidScenario {
            scenario: String::new(),
            reason: format!("share {share} outside [0, 1]"),
        });
    }
    Ok((revenue * share / asp).round() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTotals {
    pub per_model: Vec<(String, u64)>,
    pub total: u64,
}

pub fn scenario_totals(s: &SalesScenario) -> Result<ScenarioTotals> {
    s.validate()?;
    let per_model = s
        .rows
        .iter()
        .map(|r| estimate_units(s.total_revenue_usd, r.share, r.asp_usd).map(|u| (r.model.clone(), u)))
        .collect::<Result<Vec<_>>>()?;
    let total = per_model.iter().map(|(_, u)| u).sum();
    Ok(ScenarioTotals { per_model, total })
}

#[derive(Debug, Clone, Deserialize)]
struct ModelPrice {
    name: String,
    asp_usd: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct ShareSet {
    name: String,
    shares: Vec<f64>,
}

/// A scenario file: one price list shared by several share splits.
#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioFile {
    total_revenue_usd: f64,
    models: Vec<ModelPrice>,
    scenarios: Vec<ShareSet>,
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.scenarios()?;
        Ok(file)
    }

    pub fn scenarios(&self) -> Result<Vec<SalesScenario>> {
        self.scenarios
            .iter()
            .map(|set| {
                if set.shares.len() != self.models.len() {
                    return Err(Error::InvalidScenario {
                        scenario: set.name.clone(),
                        reason: format!("{} shares for {} models", set.shares.len(), self.models.len()),
                    });
                }
                let s = SalesScenario {
                    name: set.name.clone(),
                    total_revenue_usd: self.total_revenue_usd,
                    rows: self
                        .models
                        .iter()
                        .zip(&set.shares)
                        .map(|(m, &share)| ScenarioRow { model: m.name.clone(), asp_usd: m.asp_usd, share })
                        .collect(),
                };
                s.validate()?;
                Ok(s)
            })
            .collect()
    }
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Model rows with one column per scenario plus a "Whole" totals row. All
/// scenarios must list the same models in the same order.
pub fn scenarios_markdown(scenarios: &[SalesScenario]) -> Result<String> {
    let totals = scenarios.iter().map(scenario_totals).collect::<Result<Vec<_>>>()?;
    let Some(first) = scenarios.first() else {
        return Ok(String::new());
    };
    for s in scenarios {
        let same = s.rows.len() == first.rows.len() && s.rows.iter().zip(&first.rows).all(|(a, b)| a.model == b.model);
        if !same {
            return Err(Error::InvalidScenario {
                scenario: s.name.clone(),
                reason: "model list differs between scenarios".into(),
            });
        }
    }
    let mut out = String::from("| Model | Estimated ASP ($) |");
    for s in scenarios {
        out.push_str(&format!(" {} |", s.name));
    }
    out.push_str("\n|---|---:|");
    out.push_str(&"---:|".repeat(scenarios.len()));
    out.push('\n');
    for (i, row) in first.rows.iter().enumerate() {
        out.push_str(&format!("| {} | {} |", row.model, row.asp_usd));
        for t in &totals {
            out.push_str(&format!(" ~{} |", thousands(t.per_model[i].1)));
        }
        out.push('\n');
    }
    out.push_str("| Whole | |");
    for t in &totals {
        out.push_str(&format!(" ~{} |", thousands(t.total)));
    }
    out.push('\n');
    Ok(out)
}

/// `model,asp_usd,<scenario...>` plus a `Whole` row.
pub fn scenarios_csv(scenarios: &[SalesScenario]) -> Result<String> {
    let totals = scenarios.iter().map(scenario_totals).collect::<Result<Vec<_>>>()?;
    let mut out = String::from("model,asp_usd");
    for s in scenarios {
        out.push_str(&format!(",\"{}\"", s.name));
    }
    out.push('\n');
    if let Some(first) = scenarios.first() {
        for (i, row) in first.rows.iter().enumerate() {
            out.push_str(&format!("{},{}", row.model, row.asp_usd));
            for t in &totals {
                out.push_str(&format!(",{}", t.per_model[i].1));
            }
            out.push('\n');
        }
        out.push_str("Whole,");
        for t in &totals {
            out.push_str(&format!(",{}", t.total));
        }
        out.push('\n');
    }
    Ok(out)
}
