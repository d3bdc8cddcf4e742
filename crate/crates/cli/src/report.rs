//! Human and JSON reports.

use std::fmt::Write;

use serde_json::{json, Map, Value};

use saferecur::maxent::Residuals;
use saferecur::{
    JointDistribution, Objective, Policy, SafeRecurrentResult, SolveReport, SolveStatus, StateSet,
    StateSetDisplay,
};

use crate::chain_file::ChainFile;

/// `x` rounded to 6 significant digits, as a JSON number.
pub fn sig6(x: f64) -> Value {
    if x == 0.0 || !x.is_finite() {
        return json!(0.0);
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("round trip through text");
    json!(rounded)
}

fn one_based(set: &StateSet) -> Value {
    Value::Array(set.iter().map(|x| json!(x + 1)).collect())
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
    }
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Joint => "joint",
        Objective::Marginal => "marginal",
    }
}

/// Table with one row per action and one column per state, 2 decimals.
fn table(
    out: &mut String,
    file: &ChainFile,
    n: usize,
    m: usize,
    cell: impl Fn(usize, usize) -> f64,
) {
    let width = (0..n)
        .map(|x| file.state_name(x).len())
        .chain([4])
        .max()
        .unwrap_or(4);
    let head = (0..m).map(|u| file.action_name(u).len()).max().unwrap_or(2);
    let _ = write!(out, "  {:head$}", "");
    for x in 0..n {
        let _ = write!(out, " {:>width$}", file.state_name(x));
    }
    out.push('\n');
    for u in 0..m {
        let _ = write!(out, "  {:head$}", file.action_name(u));
        for x in 0..n {
            let _ = write!(out, " {:>width$.2}", cell(x, u));
        }
        out.push('\n');
    }
}

pub struct SolveView<'a> {
    pub file: &'a ChainFile,
    pub report: &'a SolveReport,
    pub policy: Option<&'a Policy>,
    /// Outcome of `--verify`, if requested.
    pub mec_agrees: Option<bool>,
}

impl SolveView<'_> {
    pub fn human(&self) -> String {
        let r = self.report;
        let (n, m) = (self.file.states.len(), self.file.actions.len());
        let mut out = String::new();
        let _ = writeln!(out, "status: {}", status_name(r.status));
        let _ = writeln!(out, "objective: {}", objective_name(r.objective));
        let _ = writeln!(out, "X^R_F = {}", StateSetDisplay(&r.support));
        if r.status == SolveStatus::Infeasible {
            let _ = writeln!(out, "no state can be kept recurrent while avoiding F");
        } else {
            let _ = writeln!(out, "classes ({}):", r.classes.len());
            for c in &r.classes {
                let _ = writeln!(out, "  {}", StateSetDisplay(c));
            }
        }
        if let Some(k) = self.policy {
            let _ = writeln!(out, "policy K(u | x):");
            table(&mut out, self.file, n, m, |x, u| k.prob(x, u));
        }
        if let Some(f) = &r.f {
            let _ = writeln!(out, "f*(x, u):");
            table(&mut out, self.file, n, m, |x, u| f.mass(x, u));
            let _ = writeln!(out, "entropy: {:.6} nats", r.entropy);
            if r.objective == Objective::Marginal {
                let _ = writeln!(out, "marginal entropy: {:.6} nats", r.objective_value);
            }
            let res = &r.residuals;
            let _ = writeln!(
                out,
                "residuals: invariance {:.1e}, forbidden mass {:.1e}, normalization {:.1e}, extra {:.1e}",
                res.invariance, res.forbidden_mass, res.normalization, res.extra
            );
        }
        if !r.repair_log.is_empty() {
            let pairs: Vec<String> = r
                .repair_log
                .iter()
                .map(|&(x, u)| format!("({}, {})", x + 1, u + 1))
                .collect();
            let _ = writeln!(out, "repaired pairs: {}", pairs.join(" "));
        }
        let _ = writeln!(out, "iterations: {}", r.iterations);
        if let Some(ok) = self.mec_agrees {
            let _ = writeln!(
                out,
                "end-component check: {}",
                if ok { "agrees" } else { "DISAGREES" }
            );
        }
        out
    }

    pub fn json(&self) -> String {
        let r = self.report;
        let (n, m) = (self.file.states.len(), self.file.actions.len());
        let mut map = Map::new();
        map.insert("status".into(), json!(status_name(r.status)));
        map.insert("objective".into(), json!(objective_name(r.objective)));
        map.insert("states".into(), json!(n));
        map.insert("actions".into(), json!(m));
        map.insert("safe_recurrent_set".into(), one_based(&r.support));
        map.insert(
            "classes".into(),
            Value::Array(r.classes.iter().map(one_based).collect()),
        );
        let matrix = |cell: &dyn Fn(usize, usize) -> f64| -> Value {
            Value::Array(
                (0..m)
                    .map(|u| Value::Array((0..n).map(|x| sig6(cell(x, u))).collect()))
                    .collect(),
            )
        };
        map.insert(
            "policy".into(),
            self.policy
                .map_or(Value::Null, |k| matrix(&|x, u| k.prob(x, u))),
        );
        map.insert(
            "f".into(),
            r.f.as_ref().map_or(Value::Null, |f: &JointDistribution| {
                matrix(&|x, u| f.mass(x, u))
            }),
        );
        map.insert("entropy".into(), sig6(r.entropy));
        map.insert("objective_value".into(), sig6(r.objective_value));
        map.insert("residuals".into(), residuals_json(&r.residuals));
        map.insert(
            "repaired_pairs".into(),
            Value::Array(
                r.repair_log
                    .iter()
                    .map(|&(x, u)| json!([x + 1, u + 1]))
                    .collect(),
            ),
        );
        map.insert("iterations".into(), json!(r.iterations));
        map.insert(
            "mec_agrees".into(),
            self.mec_agrees.map_or(Value::Null, Value::Bool),
        );
        let mut text =
            serde_json::to_string_pretty(&Value::Object(map)).expect("report serializes");
        text.push('\n');
        text
    }
}

fn residuals_json(r: &Residuals) -> Value {
    json!({
        "invariance": sig6(r.invariance),
        "forbidden_mass": sig6(r.forbidden_mass),
        "normalization": sig6(r.normalization),
        "extra": sig6(r.extra),
    })
}

pub fn oracle_human(
    file: &ChainFile,
    method: &str,
    set: &StateSet,
    mec: Option<&SafeRecurrentResult>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {method}");
    let _ = writeln!(out, "X^R_F = {}", StateSetDisplay(set));
    if set.is_empty() {
        let _ = writeln!(out, "status: infeasible");
    }
    if let Some(r) = mec {
        let _ = writeln!(out, "classes ({}):", r.classes.len());
        for c in &r.classes {
            let _ = writeln!(out, "  {}", StateSetDisplay(c));
        }
        let _ = writeln!(out, "admissible actions:");
        for &x in &r.states {
            let acts: Vec<String> = r.admissible[x]
                .iter()
                .map(|&u| (u + 1).to_string())
                .collect();
            let _ = writeln!(
                out,
                "  state {}: {{{}}}",
                file.state_name(x),
                acts.join(", ")
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789).to_string(), "0.123457");
        assert_eq!(sig6(1.0 / 3.0 * 1e-9).to_string(), "3.33333e-10");
        assert_eq!(sig6(1913.6631).to_string(), "1913.66");
        assert_eq!(sig6(0.0).to_string(), "0.0");
        assert_eq!(sig6(-2e-17).to_string(), "-2e-17");
    }
}
