//! Rendering of results into machine-readable files. All numbers use
//! locale-independent shortest round-trip decimals, so identical inputs
//! produce byte-identical outputs; non-finite values become JSON null.

use backshift::pipeline::{
    Baseline, ConnectivityEstimate, DiagnosticsReport, Edge, IdentifiabilityReport,
    InterventionProfile,
};
use backshift::simulator::GroundTruthModel;
use backshift::stability::StabilityResult;
use nalgebra::DMatrix;
use serde_json::{json, Value};

/// The one row/column convention used across every output.
pub const ORIENTATION: &str = "entry [i][j] is edge j->i";

fn matrix_rows(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

fn edge_objects(edges: &[Edge], names: &[String]) -> Value {
    Value::Array(
        edges
            .iter()
            .map(|e| {
                json!({
                    "from": e.from,
                    "to": e.to,
                    "from_name": names[e.from],
                    "to_name": names[e.to],
                    "weight": e.weight,
                })
            })
            .collect(),
    )
}

fn baseline_label(baseline: &Baseline) -> String {
    match baseline {
        Baseline::MinZero => "min".into(),
        Baseline::Environment(label) => label.clone(),
    }
}

fn profile_json(profile: &InterventionProfile) -> Value {
    json!({
        "baseline": baseline_label(&profile.baseline),
        "delta": matrix_rows(&profile.delta_variances),
        "absolute": matrix_rows(&profile.absolute_variances),
        "environments": profile.env_labels,
        "variables": profile.variable_names,
    })
}

fn violations_json(report: &DiagnosticsReport, names: &[String]) -> Value {
    Value::Array(
        report
            .top_violation
            .iter()
            .zip(&report.env_labels)
            .map(|(tv, env)| {
                json!({
                    "env": env,
                    "var_a": tv.var_a,
                    "var_a_name": names[tv.var_a],
                    "var_b": tv.var_b,
                    "var_b_name": names[tv.var_b],
                    "magnitude": tv.magnitude,
                })
            })
            .collect(),
    )
}

pub struct EstimateBundle<'a> {
    pub est: &'a ConnectivityEstimate,
    pub edges: &'a [Edge],
    pub threshold: f64,
    pub profile: Option<&'a InterventionProfile>,
    pub diagnostics: Option<&'a DiagnosticsReport>,
    pub variables: &'a [String],
    pub environments: &'a [String],
}

pub fn estimate_json(b: &EstimateBundle) -> Value {
    json!({
        "orientation": ORIENTATION,
        "b_hat": matrix_rows(&b.est.b_hat),
        "converged": b.est.converged,
        "empty": b.est.empty,
        "final_loss": b.est.final_loss,
        "warnings": b.est.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
        "threshold": b.threshold,
        "edges": edge_objects(b.edges, b.variables),
        "variables": b.variables,
        "environments": b.environments,
        "intervention_variances": b.profile.map(profile_json).unwrap_or(Value::Null),
        "diagnostics": b.diagnostics
            .map(|d| json!({ "top_violations": violations_json(d, b.variables) }))
            .unwrap_or(Value::Null),
    })
}

fn quote(name: &str) -> String {
    format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Directed graph with one labeled edge per entry; an estimate without
/// edges yields an empty digraph.
pub fn graph_dot(edges: &[Edge], names: &[String]) -> String {
    let mut out = String::from("digraph estimate {\n");
    for e in edges {
        out.push_str(&format!(
            "  {} -> {} [label={}];\n",
            quote(&names[e.from]),
            quote(&names[e.to]),
            quote(&format!("{}", e.weight)),
        ));
    }
    out.push_str("}\n");
    out
}

/// Environments-by-variables table of anchored intervention variances;
/// header only when no profile is available.
pub fn variances_csv(profile: Option<&InterventionProfile>, variables: &[String]) -> String {
    let names = profile.map(|p| p.variable_names.as_slice()).unwrap_or(variables);
    let mut out = String::from("env");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    if let Some(p) = profile {
        for (j, label) in p.env_labels.iter().enumerate() {
            out.push_str(label);
            for k in 0..p.absolute_variances.ncols() {
                out.push_str(&format!(",{}", p.absolute_variances[(j, k)]));
            }
            out.push('\n');
        }
    }
    out
}

pub fn stability_json(res: &StabilityResult, names: &[String], pi_thr: f64, ev: f64) -> Value {
    let mut selected: Vec<Value> = Vec::with_capacity(res.selected.len());
    for e in &res.selected {
        selected.push(json!({
            "from": e.from,
            "to": e.to,
            "from_name": names[e.from],
            "to_name": names[e.to],
            "frequency": e.weight,
        }));
    }
    json!({
        "orientation": ORIENTATION,
        "frequencies": matrix_rows(&res.frequencies),
        "selected": selected,
        "q_used": res.q_used,
        "n_runs": res.n_runs,
        "n_failed": res.n_failed,
        "pi_thr": pi_thr,
        "ev_bound": ev,
        "variables": names,
    })
}

pub fn stability_dot(res: &StabilityResult, names: &[String]) -> String {
    graph_dot(&res.selected, names)
}

/// Long-form selection frequencies for every ordered variable pair.
pub fn frequencies_csv(res: &StabilityResult, names: &[String]) -> String {
    let p = res.frequencies.nrows();
    let mut out = String::from("from,to,from_name,to_name,frequency\n");
    for from in 0..p {
        for to in 0..p {
            if from == to {
                continue;
            }
            out.push_str(&format!(
                "{from},{to},{},{},{}\n",
                names[from],
                names[to],
                res.frequencies[(to, from)],
            ));
        }
    }
    out
}

pub fn diagnostics_json(report: &DiagnosticsReport, names: &[String]) -> Value {
    json!({
        "environments": report.env_labels,
        "top_violations": violations_json(report, names),
    })
}

pub fn diagnostics_csv(report: &DiagnosticsReport) -> String {
    let mut out = String::from("env,var_a,var_b,magnitude\n");
    for (tv, env) in report.top_violation.iter().zip(&report.env_labels) {
        out.push_str(&format!("{env},{},{},{}\n", tv.var_a, tv.var_b, tv.magnitude));
    }
    out
}

pub fn identifiability_json(
    report: &IdentifiabilityReport,
    profile: &InterventionProfile,
) -> Value {
    json!({
        "identifiable": report.identifiable,
        "violating_pairs": report.violating_pairs,
        "delta_variances": matrix_rows(&profile.delta_variances),
        "environments": profile.env_labels,
        "variables": profile.variable_names,
    })
}

pub fn truth_json(model: &GroundTruthModel, strength: f64, env_labels: &[String]) -> Value {
    let names: Vec<String> = (0..model.p()).map(|k| format!("x{k}")).collect();
    json!({
        "orientation": ORIENTATION,
        "b": matrix_rows(&model.b),
        "edges": edge_objects(&model.edge_list(), &names),
        "hidden": model.hidden,
        "seed": model.seed,
        "strength": strength,
        "variables": names,
        "environments": env_labels,
    })
}

pub fn to_pretty_bytes(value: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json rendering cannot fail");
    bytes.push(b'\n');
    bytes
}
