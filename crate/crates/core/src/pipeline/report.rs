use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::{ensure_dir, upstream, RunManifest, StageRecorder, SUMMARY_FILE};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.md";

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.0}"),
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}

fn fit_line(name: &str, fit: &Value) -> String {
    if fit.is_null() {
        return format!("- {name}: not estimable\n");
    }
    format!(
        "- {name}: slope {}, intercept {}, r {}, r² {}, n {}, p {}\n",
        num(&fit["slope"]),
        num(&fit["intercept"]),
        num(&fit["r"]),
        num(&fit["r2"]),
        num(&fit["n"]),
        num(&fit["p_value"])
    )
}

/// Renders `summary.json` of an analysis directory as Markdown.
pub fn render(summary: &Value) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Migration and mobility report, {}\n", summary["target_year"]);
    let _ = writeln!(s, "Run digest `{}`.\n", summary["manifest_digest"].as_str().unwrap_or(""));

    s.push_str("## Migration\n\n| year | classified | migrated | rate % | emigrants from SCL | immigrants to SCL |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for y in summary["migration"].as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            y["year"],
            y["classified"],
            y["migrated"],
            num(&y["migration_rate_pct"]),
            y["emigrants_from_scl"],
            y["immigrants_to_scl"]
        );
    }
    s.push('\n');
    for y in summary["migration"].as_array().into_iter().flatten() {
        s.push_str(&fit_line(&format!("emigration vs income decile, {}", y["year"]), &y["emigration_vs_decile"]));
    }
    let net = &summary["net_migration_scl"];
    let _ = writeln!(
        s,
        "\nCapital net migration: {} arriving, {} leaving, net {} persons ({} % of population).\n",
        num(&net["immigrants"]),
        num(&net["emigrants"]),
        num(&net["net_flow"]),
        num(&net["rate_pct"])
    );

    s.push_str("## Destinations\n\n");
    for d in summary["divergence_km"].as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "- divergence {} vs {}: mean {} km over {} origins",
            d["year"],
            d["base_year"],
            num(&d["mean"]),
            d["n"]
        );
    }
    for d in summary["rurality_shift"].as_array().into_iter().flatten() {
        let _ = writeln!(s, "- rurality shift {} vs {}: mean {}", d["year"], d["base_year"], num(&d["mean"]));
    }
    for d in summary["od_difference_rows"].as_array().into_iter().flatten() {
        let rows = d["rows"].as_array().map_or(0, Vec::len);
        let _ = writeln!(s, "- origins with an outlying change {} vs {}: {rows}", d["year"], d["base_year"]);
    }
    s.push_str(&fit_line("destination density vs origin poverty", &summary["density_regression"]));
    let _ = writeln!(
        s,
        "- ICVU difference: mean {} over {} origins\n",
        num(&summary["icvu_tradeoff"]["mean"]),
        summary["icvu_tradeoff"]["n"]
    );

    s.push_str("## Regions\n\n| rank | region | inflow from SCL | population | km to SCL | gravity | hosting % |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    let hosting = summary["hosting"].as_array().cloned().unwrap_or_default();
    for (k, g) in summary["gravity"].as_array().into_iter().flatten().enumerate() {
        let h = hosting.iter().find(|h| h["region"] == g["region"]).map(|h| num(&h["pct"])).unwrap_or_default();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {h} |",
            k + 1,
            g["region"],
            g["inflow_from_scl"],
            num(&g["population"]),
            num(&g["distance_km"]),
            num(&g["gravity_score"])
        );
    }
    s.push('\n');

    let m = &summary["mobility"];
    if !m.is_null() {
        s.push_str("## Daily mobility\n\n");
        s.push_str(&fit_line("mean reduction vs income decile", &m["mean_reduction_vs_decile"]));
        s.push_str(&fit_line("quarantine-day change vs income decile", &m["quarantine_mean_vs_decile"]));
        s.push_str(&fit_line("free-day change vs income decile", &m["free_mean_vs_decile"]));
        let _ = writeln!(
            s,
            "- top income quintile share of the reduction: {} %\n- mean reduction, top quintile {} vs rest {}",
            num(&m["top_quintile_share_pct"]),
            num(&m["top_quintile_mean_reduction"]),
            num(&m["rest_mean_reduction"])
        );
        let w = &m["welch_top_vs_rest"];
        if !w.is_null() {
            let _ = writeln!(s, "- Welch t {}, df {}, p {}", num(&w["t"]), num(&w["df"]), num(&w["p_value"]));
        }
        let _ = writeln!(
            s,
            "- mean change on quarantine days {} and on free days {}\n",
            num(&m["quarantine_mean_change"]),
            num(&m["free_mean_change"])
        );
    }

    if let Some(reports) = summary["census_validation"].as_array() {
        s.push_str("## Census validation\n\n| level | immigration r | emigration r |\n|---|---|---|\n");
        for r in reports {
            let _ = writeln!(
                s,
                "| {} | {} | {} |",
                r["level"].as_str().unwrap_or(""),
                num(&r["immigration"]["r"]),
                num(&r["emigration"]["r"])
            );
        }
        s.push('\n');
    }

    if let Some(notes) = summary["notes"].as_array().filter(|n| !n.is_empty()) {
        s.push_str("## Notes\n\n");
        for n in notes {
            let _ = writeln!(s, "- {}", n.as_str().unwrap_or(""));
        }
    }
    s
}

/// Writes `report.md` from the `summary.json` of an analysis directory.
pub fn cmd_report(analysis_dir: &Path, out: &Path) -> Result<RunManifest> {
    let path = upstream(analysis_dir, SUMMARY_FILE, "analyze")?;
    ensure_dir(out)?;
    let mut rec = StageRecorder::new("report", json!({}));
    rec.input("summary", &path)?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let summary: Value = serde_json::from_str(&text).map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    let target = out.join(REPORT_FILE);
    fs::write(&target, render(&summary)).map_err(|e| Error::io(&target, e))?;
    rec.finish(out, &[REPORT_FILE], None, json!({}))
}
