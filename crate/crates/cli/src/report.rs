use std::fmt::Write as _;

use anyhow::Result;
use skillview_core::pipeline::EvalReport;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Human-readable summary of an evaluation report.
pub fn markdown(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation of `{}`\n", r.skill_id);
    let _ = writeln!(s, "usage: {:?}, leakage level: {}\n", r.usage, r.level);

    let _ = writeln!(s, "## Fidelity\n");
    let _ = writeln!(
        s,
        "| variable | KS | OOR | d_mu | d_sigma | ACF1 raw | ACF1 priv | PSD dist |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for (v, m) in &r.metrics.variables {
        let _ = writeln!(
            s,
            "| {v} | {:.4} | {:.4} | {:.2e} | {:.2e} | {} | {} | {:.4} |",
            m.ks,
            m.oor_rate,
            m.d_mu,
            m.d_sigma,
            fmt_opt(m.acf_raw.first().copied()),
            fmt_opt(m.acf_priv.first().copied()),
            m.psd_distance
        );
    }
    if let Some(f) = r.metrics.corr_frobenius {
        let _ = writeln!(s, "\ncorrelation Frobenius distance: {f:.4}");
    }
    if let Some((raw, private)) = r.metrics.downstream_auroc {
        let _ = writeln!(s, "\ndownstream AUROC: raw {raw:.4}, released {private:.4}");
    }
    if let Some(nn) = &r.metrics.nn_distance {
        let _ = writeln!(
            s,
            "\nnearest-neighbour distance: median {:.4} (IQR {:.4} to {:.4})",
            nn.median, nn.q1, nn.q3
        );
    }

    let _ = writeln!(s, "\n## Sanity gates\n");
    let _ = writeln!(
        s,
        "| variable | alpha | linf | unchanged | C1 margin | C2 margin | passed |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for (v, g) in &r.gates {
        let _ = writeln!(
            s,
            "| {v} | {} | {:.4} | {:.4} | {:.2e} | {:.4} | {} |",
            g.alpha,
            g.linf,
            g.unchanged_fraction,
            g.c1_margin,
            g.c2_margin,
            if g.passed() { "yes" } else { "NO" }
        );
    }

    if !r.attacks.is_empty() {
        let _ = writeln!(s, "\n## Attacks\n");
        let _ = writeln!(s, "| family | variable | metrics | note |");
        let _ = writeln!(s, "|---|---|---|---|");
        for a in &r.attacks {
            let metrics: Vec<String> = a
                .metrics
                .iter()
                .map(|(k, v)| format!("{k}={v:.4}"))
                .collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                a.family,
                a.variable,
                metrics.join(", "),
                a.note.as_deref().unwrap_or("")
            );
        }
    }

    let alerts = r.alerts();
    let _ = writeln!(s, "\n## Alerts\n");
    if alerts.is_empty() {
        let _ = writeln!(s, "none");
    }
    for al in alerts {
        let _ = writeln!(
            s,
            "- {} on {}: {:.4} (limit {:.4})",
            al.check, al.variable, al.value, al.limit
        );
    }
    s
}

/// One row per metric: `section,variable,metric,value`.
pub fn csv(r: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["section", "variable", "metric", "value"])?;
    let mut row = |section: &str, var: &str, metric: &str, value: f64| {
        w.write_record([section, var, metric, &value.to_string()])
    };
    for (v, m) in &r.metrics.variables {
        row("fidelity", v, "ks", m.ks)?;
        row("fidelity", v, "oor_rate", m.oor_rate)?;
        row("fidelity", v, "d_mu", m.d_mu)?;
        row("fidelity", v, "d_sigma", m.d_sigma)?;
        row("fidelity", v, "psd_distance", m.psd_distance)?;
        row("fidelity", v, "ljung_box_p_raw", m.ljung_box_p_raw)?;
        row("fidelity", v, "ljung_box_p_priv", m.ljung_box_p_priv)?;
    }
    if let Some(f) = r.metrics.corr_frobenius {
        row("fidelity", "", "corr_frobenius", f)?;
    }
    if let Some((raw, private)) = r.metrics.downstream_auroc {
        row("utility", "", "auroc_raw", raw)?;
        row("utility", "", "auroc_priv", private)?;
    }
    for (v, g) in &r.gates {
        row("gate", v, "linf", g.linf)?;
        row("gate", v, "unchanged_fraction", g.unchanged_fraction)?;
        row("gate", v, "c1_margin", g.c1_margin)?;
        row("gate", v, "c2_margin", g.c2_margin)?;
    }
    for a in &r.attacks {
        for (k, v) in &a.metrics {
            row(&format!("attack_{}", a.family.tag()), &a.variable, k, *v)?;
        }
    }
    for t in &r.thresholds {
        row(
            "threshold",
            &t.variable,
            &t.check,
            if t.passed { 1.0 } else { 0.0 },
        )?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
