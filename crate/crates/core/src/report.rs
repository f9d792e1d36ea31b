//! Check reports, their JSONL/CSV sinks, and the size-doubling regression.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// One check on one scenario.
///
/// `passes` holds exact assertions (any `false` fails the suite); `flags`
/// holds empirical expectations such as regression drift. A constant of
/// `None` is vacuous.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check: String,
    pub scenario: String,
    pub kind: String,
    pub size: usize,
    pub seed: u64,
    pub constants: BTreeMap<String, Option<f64>>,
    /// Sizes of what was examined (trials, pieces, runs); not regressed.
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
    pub passes: BTreeMap<String, bool>,
    #[serde(default)]
    pub flags: BTreeMap<String, bool>,
    pub witnesses: BTreeMap<String, String>,
    /// False when some pair enumeration was sampled.
    pub exact: bool,
    pub wall_ms: f64,
}

impl Report {
    pub fn new(check: &str, scenario: String, kind: &str, size: usize, seed: u64) -> Self {
        Report {
            check: check.into(),
            scenario,
            kind: kind.into(),
            size,
            seed,
            exact: true,
            ..Default::default()
        }
    }

    pub fn constant(&mut self, name: &str, value: Option<f64>) -> &mut Self {
        // non-finite ratios are reported as vacuous rather than emitted as NaN
        self.constants.insert(name.into(), value.filter(|v| v.is_finite()));
        self
    }

    pub fn count(&mut self, name: &str, value: u64) -> &mut Self {
        self.counts.insert(name.into(), value);
        self
    }

    pub fn pass(&mut self, name: &str, ok: bool) -> &mut Self {
        let e = self.passes.entry(name.into()).or_insert(true);
        *e &= ok;
        self
    }

    pub fn flag(&mut self, name: &str, ok: bool) -> &mut Self {
        let e = self.flags.entry(name.into()).or_insert(true);
        *e &= ok;
        self
    }

    pub fn witness(&mut self, name: &str, text: impl Into<String>) -> &mut Self {
        self.witnesses.entry(name.into()).or_insert_with(|| text.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.passes.values().all(|v| *v)
    }

    /// The report with its timing field zeroed.
    pub fn without_timing(&self) -> Report {
        Report {
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, reports: &[Report]) -> io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> serde_json::Result<Vec<Report>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Long-format table: one row per constant, pass, flag, and timing.
pub fn write_csv<W: Write>(out: W, reports: &[Report]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "scenario", "kind", "size", "seed", "field", "name", "value"])?;
    for r in reports {
        let head = [r.check.clone(), r.scenario.clone(), r.kind.clone(), r.size.to_string(), r.seed.to_string()];
        let mut row = |field: &str, name: &str, value: String| {
            let mut rec: Vec<String> = head.to_vec();
            rec.extend([field.to_string(), name.to_string(), value]);
            w.write_record(&rec)
        };
        for (k, v) in &r.constants {
            row("constant", k, v.map(|v| v.to_string()).unwrap_or_else(|| "vacuous".into()))?;
        }
        for (k, v) in &r.counts {
            row("count", k, v.to_string())?;
        }
        for (k, v) in &r.passes {
            row("pass", k, v.to_string())?;
        }
        for (k, v) in &r.flags {
            row("flag", k, v.to_string())?;
        }
        row("timing", "wall_ms", format!("{:.3}", r.wall_ms))?;
    }
    w.flush()?;
    Ok(())
}

/// Allowed drift of an empirical constant when the size doubles.
pub const REGRESSION_FACTOR: f64 = 2.0;

/// Compares every constant between sizes `s` and `2s` of the same
/// `(check, kind, seed)`; one report per size pair, flagged when the ratio
/// leaves `[1/2, 2]`. Vacuous or zero constants are skipped.
pub fn regressions(reports: &[Report]) -> Vec<Report> {
    let mut groups: BTreeMap<(String, String, u64), BTreeMap<usize, &Report>> = BTreeMap::new();
    for r in reports {
        groups
            .entry((r.check.clone(), r.kind.clone(), r.seed))
            .or_default()
            .insert(r.size, r);
    }
    let mut out = Vec::new();
    for ((check, kind, seed), by_size) in &groups {
        for (&s, small) in by_size {
            let Some(large) = by_size.get(&(2 * s)) else { continue };
            let mut rep = Report::new("regression", format!("{kind}-{seed}-{s}-vs-{}", 2 * s), kind, s, *seed);
            for (name, v) in &small.constants {
                let (Some(a), Some(Some(b))) = (v, large.constants.get(name)) else { continue };
                if !(*a > 0.0 && *b > 0.0) {
                    continue;
                }
                let key = format!("{check}/{name}");
                let ratio = b / a;
                rep.constant(&key, Some(ratio));
                rep.flag(&key, (1.0 / REGRESSION_FACTOR..=REGRESSION_FACTOR).contains(&ratio));
            }
            if !rep.constants.is_empty() {
                out.push(rep);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(check: &str, size: usize, v: f64) -> Report {
        let mut r = Report::new(check, format!("grid-{size}-1"), "grid", size, 1);
        r.constant("c", Some(v)).constant("vac", None);
        r
    }

    #[test]
    fn regression_pairs_sizes() {
        let rs = vec![rep("a", 64, 1.0), rep("a", 128, 1.9), rep("a", 256, 4.0), rep("b", 64, 1.0)];
        let reg = regressions(&rs);
        assert_eq!(reg.len(), 2);
        assert!(reg[0].flags["a/c"]);
        assert!(!reg[1].flags["a/c"]);
        assert!(!reg[0].constants.contains_key("a/vac"));
    }

    #[test]
    fn jsonl_roundtrip_and_csv() {
        let mut r = rep("a", 8, 0.5);
        r.pass("ok", true).pass("ok", false).witness("w", "x");
        assert!(!r.passed());
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[r.clone()]).unwrap();
        let back = read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, vec![r.clone()]);
        let mut csv_buf = Vec::new();
        write_csv(&mut csv_buf, &[r]).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.contains("constant,vac,vacuous"));
        assert!(text.contains("pass,ok,false"));
    }

    #[test]
    fn nan_is_vacuous() {
        let mut r = rep("a", 8, 0.5);
        r.constant("n", Some(f64::NAN));
        assert_eq!(r.constants["n"], None);
    }
}
