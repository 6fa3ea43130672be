//! Training-log CSV and sweep-directory summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use minaction::trainer::{ratio_nodes, schedule_at, TrainLog};
use minaction::{Error, Result};

use crate::commands::{seed_dir, select_verdict, SindyFile, SweepFile};
use crate::io::{csv_bytes, num, read_json, write_atomic};

const LOSS_COLUMNS: [&str; 6] = ["total", "traj", "accel", "sym", "comp", "arch"];

pub fn trainlog_csv(log: &TrainLog) -> Result<Vec<u8>> {
    let k = log.epochs.first().map_or(0, |r| r.gates.len());
    let mut header: Vec<String> = ["epoch", "alpha_i", "alpha_e", "tau"].iter().map(|s| s.to_string()).collect();
    header.extend(LOSS_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(["selectivity", "c_gate", "clamp_events"].iter().map(|s| s.to_string()));
    for prefix in ["gate", "logit", "theta"] {
        header.extend((0..k).map(|i| format!("{prefix}_{i}")));
    }
    csv_bytes(&header, |w| {
        for r in &log.epochs {
            let l = &r.loss;
            let mut row = vec![r.epoch.to_string(), num(r.alpha_i), num(r.alpha_e), num(r.tau)];
            row.extend([l.total, l.traj, l.accel, l.sym, l.comp, l.arch].map(num));
            row.extend([num(r.selectivity), num(r.c_gate), r.clamp_events.to_string()]);
            row.extend(r.gates.iter().chain(&r.logits).chain(&r.thetas).map(|v| num(*v)));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

type Row = BTreeMap<String, String>;

fn read_trainlog(path: &Path) -> Result<Vec<Row>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?.clone();
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or("–".into(), |x| format!("{x:.digits$}"))
}

fn mean_sd(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    Some((m, var.sqrt()))
}

/// Write `report.md`, `loss_curves.csv`, `gate_evolution.csv` and
/// `phase.csv` into a sweep directory.
pub fn report(dir: &Path) -> Result<()> {
    let sf: SweepFile = read_json(&dir.join("sweep.json"))?;
    let cfg = &sf.run_config;
    let labels = cfg.train.library.labels();
    let k = labels.len();
    let mut md = String::new();
    let _ = writeln!(md, "# Sweep report\n");
    let _ = writeln!(
        md,
        "Preset `{}`, dataset seed {}, {} training seeds, {} epochs.\n",
        cfg.preset,
        sf.seed,
        sf.seeds.len(),
        cfg.train.schedule.total_epochs
    );

    let _ = writeln!(md, "## Seeds\n");
    let _ = writeln!(md, "| seed | basis | R final | C_gate | onset | sparse | frozen | span | γ | θ | p | σ_H |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|---|---|---|");
    for s in &sf.result.seeds {
        let m = &s.milestones;
        let u = |v: Option<usize>| v.map_or("–".into(), |x| x.to_string());
        let _ = writeln!(
            md,
            "| {} | {} | {:.3e} | {:.3} | {} | {} | {} | {} | {} | {} | {} | {} |",
            s.seed,
            if s.basis.is_empty() { "failed" } else { &s.basis },
            s.final_selectivity,
            s.c_gate,
            u(m.onset),
            u(m.sparse),
            u(m.frozen),
            u(m.span),
            cell(m.growth_rate, 3),
            cell(s.calibrated_coefficient, 4),
            cell(s.kepler_exponent, 4),
            cell(s.sigma_h, 5),
        );
    }
    let frozen: Vec<_> = sf.result.seeds.iter().filter(|s| s.milestones.frozen.is_some()).collect();
    let spans: Vec<f64> = frozen.iter().filter_map(|s| s.milestones.span).map(|v| v as f64).collect();
    let rates: Vec<f64> = frozen.iter().filter_map(|s| s.milestones.growth_rate).collect();
    let _ = writeln!(md, "\nFrozen: {}/{}.", frozen.len(), sf.result.seeds.len());
    if let Some((m, sd)) = mean_sd(&spans) {
        let _ = writeln!(md, "Span: {m:.1} ± {sd:.1} epochs.");
    }
    if let Some((m, sd)) = mean_sd(&rates) {
        let _ = writeln!(md, "Growth rate γ: {m:.3} ± {sd:.3}.");
    }

    let _ = writeln!(md, "\n## Energy conservation by selected basis\n");
    match select_verdict(&sf) {
        Ok(v) => {
            let _ = writeln!(md, "| basis | seeds | mean σ_H |");
            let _ = writeln!(md, "|---|---|---|");
            for g in &v.groups {
                let _ = writeln!(md, "| {} | {} | {:.5} |", g.basis, g.seeds, g.mean_sigma_h);
            }
            let _ = writeln!(md, "\nSelected **{}**, margin {}.", v.basis, cell(v.margin, 2));
        }
        Err(e) => {
            let _ = writeln!(md, "No verdict: {e}.");
        }
    }
    if !sf.result.candidates.is_empty() {
        let _ = writeln!(md, "\n## Library scan\n");
        let _ = writeln!(md, "| basis | θ | σ_H |");
        let _ = writeln!(md, "|---|---|---|");
        for c in &sf.result.candidates {
            let _ = writeln!(md, "| {} | {:.4} | {:.5} |", c.basis, c.theta_opt, c.sigma_h);
        }
        if let Some(v) = &sf.result.library_verdict {
            let _ = writeln!(md, "\nSelected **{}**, margin {}.", v.basis, cell(v.margin, 2));
        }
    }

    let sindy_path = dir.join("sindy.json");
    if sindy_path.exists() {
        let s: SindyFile = read_json(&sindy_path)?;
        let _ = writeln!(md, "\n## Sparse regression baseline\n");
        let _ = writeln!(md, "| stride | ensemble | identified | GM range | mean wall time (s) |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        let _ = writeln!(
            md,
            "| {} | {} | {}/{} {} | {}–{} | {:.4} |",
            s.stride,
            s.ensemble,
            s.summary.identified,
            s.summary.total,
            s.target_basis,
            cell(s.summary.gm_min, 2),
            cell(s.summary.gm_max, 2),
            s.summary.mean_wall_time_s
        );
    }

    let mut loss_rows = Vec::new();
    let mut gate_rows = Vec::new();
    for seed in &sf.seeds {
        let path = seed_dir(dir, *seed).join("trainlog.csv");
        if !path.exists() {
            continue;
        }
        for r in read_trainlog(&path)? {
            let get = |c: &str| r.get(c).cloned().unwrap_or_default();
            let mut l = vec![seed.to_string(), get("epoch")];
            l.extend(LOSS_COLUMNS.iter().map(|c| get(c)));
            loss_rows.push(l);
            let mut g = vec![seed.to_string(), get("epoch"), get("tau"), get("selectivity"), get("c_gate")];
            g.extend((0..k).map(|i| get(&format!("gate_{i}"))));
            gate_rows.push(g);
        }
    }
    let mut header: Vec<String> = vec!["seed".into(), "epoch".into()];
    header.extend(LOSS_COLUMNS.iter().map(|s| s.to_string()));
    write_atomic(
        &dir.join("loss_curves.csv"),
        &csv_bytes(&header, |w| loss_rows.iter().try_for_each(|r| w.write_record(r)))?,
    )?;
    let mut header: Vec<String> = ["seed", "epoch", "tau", "selectivity", "c_gate"].iter().map(|s| s.to_string()).collect();
    header.extend(labels.iter().map(|l| format!("gate[{l}]")));
    write_atomic(
        &dir.join("gate_evolution.csv"),
        &csv_bytes(&header, |w| gate_rows.iter().try_for_each(|r| w.write_record(r)))?,
    )?;

    let schedule = &cfg.train.schedule;
    let nodes = ratio_nodes(schedule)?;
    let header: Vec<String> = ["epoch", "alpha_e", "tau", "ratio", "node"].iter().map(|s| s.to_string()).collect();
    let mut phase = Vec::new();
    for epoch in 1..=schedule.total_epochs {
        let p = schedule_at(schedule, epoch)?;
        let node = nodes.iter().find(|n| n.epoch == epoch).map_or(String::new(), |n| format!("{}:{}", n.p, n.q));
        phase.push(vec![epoch.to_string(), num(p.alpha_e), num(p.tau), num(p.alpha_e / p.tau), node]);
    }
    write_atomic(&dir.join("phase.csv"), &csv_bytes(&header, |w| phase.iter().try_for_each(|r| w.write_record(r)))?)?;
    if !nodes.is_empty() {
        let _ = writeln!(md, "\n## Schedule nodes\n");
        let _ = writeln!(md, "| α_E : τ | epoch | deviation |");
        let _ = writeln!(md, "|---|---|---|");
        for n in &nodes {
            let _ = writeln!(md, "| {}:{} | {} | {:.3} |", n.p, n.q, n.epoch, n.deviation);
        }
    }
    let _ = writeln!(md, "\nSeries: `loss_curves.csv`, `gate_evolution.csv`, `phase.csv`.");
    write_atomic(&dir.join("report.md"), md.as_bytes())?;
    println!("wrote {}", dir.join("report.md").display());
    Ok(())
}
