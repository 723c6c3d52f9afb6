//! Report documents written by the command-line tool.
//!
//! Documents are JSON. Every report carries `schema_version`; fields are only
//! ever added within a version. Infinite values are written as `"inf"`.
//! Wall-clock timings live in `timings` alone so that two runs with the same
//! inputs and seed agree on everything else byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bidset::BidderSet;
use crate::coalition::{CoreCheck, ManipulationBound};
use crate::dispatch::DispatchResult;
use crate::error::Result;
use crate::market::MarketInstance;
use crate::setfunc::{RatioMethod, RatioReport};
use crate::vcg::VcgOutcome;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// A pipeline stage that failed; the rest of the report is still filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub samples: usize,
    pub method: RatioMethod,
    /// `"auto"` or the explicit coalitions.
    pub coalitions: String,
    pub players: BidderSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub case_name: String,
    pub instance_digest: String,
    pub bids_digest: String,
    pub seed: u64,
    pub settings: AuditSettings,
    pub dispatch: Option<DispatchResult>,
    pub vcg: Option<VcgOutcome>,
    pub individually_rational: Option<bool>,
    pub core: Option<CoreCheck>,
    /// Ratio of the submitted bid profile.
    pub ratio: Option<RatioReport>,
    /// Minimum ratio over sampled bid profiles.
    pub market_ratio: Option<RatioReport>,
    /// Ratio used for the manipulation bounds.
    pub gamma: Option<f64>,
    pub bounds: Vec<ManipulationBound>,
    pub errors: Vec<StageError>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Copy with every timing zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> AuditReport {
        let mut r = self.clone();
        r.timings.values_mut().for_each(|t| *t = 0.0);
        r
    }

    /// Fixed-width text summary for terminals.
    pub fn summary(&self, instance: &MarketInstance) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(&mut out, format!("case {} ({} bidders)", self.case_name, instance.num_bidders()));
        match &self.dispatch {
            Some(d) if d.is_optimal() => push(&mut out, format!("J = {:.2}   duality gap {:.1e}", d.objective, d.duality_gap)),
            Some(_) => push(&mut out, "dispatch infeasible".into()),
            None => {}
        }
        if let Some(v) = &self.vcg {
            push(&mut out, format!("{:>7} {:>6} {:>14} {:>14} {:>14}", "bidder", "bus", "allocation", "payment", "utility"));
            for (i, b) in instance.bidders.iter().enumerate() {
                push(
                    &mut out,
                    format!("{:>7} {:>6} {:>14.4} {:>14.4} {:>14.4}", b.id, b.bus, v.allocation[i], v.payments[i], v.utilities[i]),
                );
            }
            push(&mut out, format!("operator utility {:.4}", v.operator_utility));
        }
        if let Some(c) = &self.core {
            let verdict = if c.in_core { "in the core" } else { "NOT in the core" };
            push(&mut out, format!("core: {verdict} ({} blocking, {} tight)", c.blocking.len(), c.tight.len()));
        }
        for (label, r) in [("profile ratio", &self.ratio), ("sampled market ratio", &self.market_ratio)] {
            if let Some(r) = r {
                push(
                    &mut out,
                    format!("{label}: gamma = {:.6}  k_feas = {}  lower bound {:.6}  ({} evaluations)", r.gamma, r.k_feas, r.lower_bound, r.evaluations_used),
                );
            }
        }
        if self.gamma.is_some_and(|g| g >= 1.0) {
            push(&mut out, "gamma = 1: exact coalition-proofness".into());
        }
        if !self.bounds.is_empty() {
            push(&mut out, format!("{:>16} {:>14} {:>14} {:>14}", "coalition", "bound", "worst case", "achieved"));
            for b in &self.bounds {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                push(
                    &mut out,
                    format!("{:>16} {:>14} {:>14.4} {:>14}", b.actor.to_string(), opt(b.bound_specific), b.bound_worstcase, opt(b.achieved)),
                );
            }
        }
        for e in &self.errors {
            push(&mut out, format!("error in {}: {}", e.stage, e.message));
        }
        out
    }

    /// Writes `bidders.csv`, `bounds.csv` and `witnesses.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path, instance: &MarketInstance) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if let Some(v) = &self.vcg {
            let mut w = csv::Writer::from_path(dir.join("bidders.csv")).map_err(csv_err)?;
            w.write_record(["bidder", "bus", "allocation", "bid_cost", "payment", "utility"]).map_err(csv_err)?;
            for (i, b) in instance.bidders.iter().enumerate() {
                w.serialize((b.id, b.bus, v.allocation[i], v.bid_costs[i], v.payments[i], v.utilities[i])).map_err(csv_err)?;
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("bounds.csv")).map_err(csv_err)?;
        w.write_record(["coalition", "gamma", "bound_specific", "bound_worstcase", "achieved"]).map_err(csv_err)?;
        for b in &self.bounds {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            w.write_record([b.actor.to_string(), b.gamma.to_string(), opt(b.bound_specific), b.bound_worstcase.to_string(), opt(b.achieved)])
                .map_err(csv_err)?;
        }
        w.flush()?;
        if let Some(r) = &self.ratio {
            write_witnesses(&dir.join("witnesses.csv"), r)?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::NumericalFailure(format!("csv output: {other:?}")),
    }
}

/// One row per witness pair `(S, K)`.
pub fn write_witnesses(path: &Path, r: &RatioReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["s", "k", "numerator", "denominator", "ratio"]).map_err(csv_err)?;
    for x in &r.witnesses {
        w.write_record([x.s.to_string(), x.k.to_string(), x.numerator.to_string(), x.denominator.to_string(), x.ratio.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Output of the `ratio` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub case_name: String,
    pub instance_digest: String,
    pub seed: u64,
    pub samples: usize,
    pub ratio: RatioReport,
    pub timings: BTreeMap<String, f64>,
}

/// Serialises `+inf` as the string `"inf"` so documents stay valid JSON.
pub mod extended_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else if *v > 0.0 {
            "inf".serialize(s)
        } else if *v < 0.0 {
            "-inf".serialize(s)
        } else {
            "nan".serialize(s)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other:?}"))),
            },
        }
    }
}

/// [`extended_real`] for optional values.
pub mod extended_real_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, Deserialize)]
    #[serde(transparent)]
    struct Wrap(#[serde(with = "super::extended_real")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_some(&Wrap(*x)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
