//! Signed metric deltas between two reports on the same network.

use std::path::Path;

use anyhow::{anyhow, bail, Context as _, Result};

use crate::run::Report;

#[derive(Clone, Debug, PartialEq)]
pub struct Delta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

impl Delta {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read report {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: not a report", path.display()))
}

/// Deltas `b - a` for every price, total travel time and total imbalance.
pub fn compare(a: &Report, b: &Report) -> Result<Vec<Delta>> {
    let (na, nb) = match (&a.network, &b.network) {
        (Some(x), Some(y)) => (x, y),
        _ => bail!("both reports need a network"),
    };
    if na.sha256 != nb.sha256 {
        return Err(anyhow!(
            "reports use different networks ({} vs {})",
            na.source,
            nb.source
        ));
    }
    if a.destinations != b.destinations {
        bail!("reports price different markets");
    }
    let mut out: Vec<Delta> = a
        .destinations
        .iter()
        .zip(a.prices.iter().zip(&b.prices))
        .map(|(d, (x, y))| Delta {
            metric: format!("rho_{d}"),
            a: *x,
            b: *y,
        })
        .collect();
    out.push(Delta {
        metric: "total_travel_time".into(),
        a: a.total_travel_time,
        b: b.total_travel_time,
    });
    out.push(Delta {
        metric: "imbalance_total".into(),
        a: a.imbalance_total,
        b: b.imbalance_total,
    });
    Ok(out)
}

pub fn print_table(deltas: &[Delta]) {
    println!("{:<20} {:>14} {:>14} {:>14}", "metric", "a", "b", "delta");
    for d in deltas {
        println!(
            "{:<20} {:>14.6} {:>14.6} {:>+14.6}",
            d.metric,
            d.a,
            d.b,
            d.delta()
        );
    }
}

pub fn write_csv(path: &Path, deltas: &[Delta]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["metric", "a", "b", "delta"])?;
    for d in deltas {
        w.write_record([
            d.metric.clone(),
            d.a.to_string(),
            d.b.to_string(),
            d.delta().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::NetworkInfo;
    use serde_json::Value;

    fn report(prices: Vec<f64>, ttt: f64, sha: &str) -> Report {
        Report {
            scenario: "t".into(),
            mode: "price_balance".into(),
            network: Some(NetworkInfo {
                source: "builtin:three_node".into(),
                sha256: sha.into(),
                nodes: 3,
                links: 6,
            }),
            destinations: vec![2, 3],
            prices,
            es: vec![0.0, 0.0],
            m: vec![0.0, 0.0],
            supply: vec![],
            demand: vec![],
            imbalance_total: 0.5,
            total_travel_time: ttt,
            converged: true,
            iterations: 1,
            wallclock_s: 0.0,
            details: Value::Null,
            echo: Value::Null,
        }
    }

    #[test]
    fn signed_deltas() {
        let a = report(vec![50.0, 60.0], 100.0, "x");
        let b = report(vec![55.0, 55.0], 98.0, "x");
        let d = compare(&a, &b).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d[0].delta(), 5.0);
        assert_eq!(d[1].delta(), -5.0);
        assert_eq!(d[2].delta(), -2.0);
        assert_eq!(d[3].delta(), 0.0);
    }

    #[test]
    fn network_mismatch_is_an_error() {
        let a = report(vec![50.0, 60.0], 100.0, "x");
        let b = report(vec![50.0, 60.0], 100.0, "y");
        assert!(compare(&a, &b).is_err());
    }
}
