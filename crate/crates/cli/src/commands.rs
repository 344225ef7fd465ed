use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::Serialize;

use blockmix::config::SeedStream;
use blockmix::evaluation::{
    compare, comparison_markdown, mae, mean_r2, rolling_oos_evaluate, spearman_ic, write_window_csv, R2Convention,
    WindowResult,
};
use blockmix::geometry::{
    matched_subpanel_control, random_baseline, rotation_series, BaselineStats, MatchedControl, ResidualWindows,
    RotationSeries,
};
use blockmix::mixture::ArchitectureKind;
use blockmix::panel::{write_panel, write_partition, BlockPartition, Panel, RollingWindowSpec};
use blockmix::synth::{generate_heterogeneous_panel, generate_homogeneous_panel, SynthConfig};
use blockmix::validation::{
    candidate_scan, freeze_threshold, held_out_freeze, lowo_block_selection, perturbation_suite, placebo_test,
    scan_markdown, sweep, sweep_markdown, Candidate, DeltaHarness, Perturbation, SelectionRule,
};

use crate::context::Context;
use crate::{Cli, Command, DataArgs, PairArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let mut ctx = Context::new(cli)?;
    match &cli.command {
        Command::Eval { data, arch } => eval(&mut ctx, data, *arch)?,
        Command::Compare { data, a, b } => compare_pair(&mut ctx, data, *a, *b)?,
        Command::Report { data } => report(&mut ctx, data)?,
        Command::Placebo { data, pair, perms, fixed } => placebo(&mut ctx, data, pair, *perms, fixed.as_deref())?,
        Command::Lowo { data, pair, candidates } => lowo(&mut ctx, data, pair, candidates)?,
        Command::Freeze { data, pair, candidates, phase_a, phase_b } => {
            freeze(&mut ctx, data, pair, candidates, *phase_a, *phase_b)?
        }
        Command::Scan { data, pair, candidates, min_wins } => scan(&mut ctx, data, pair, candidates, *min_wins)?,
        Command::Perturb { data, pair, variants } => perturb(&mut ctx, data, pair, variants.as_deref())?,
        Command::Geodesic { data, k, window, draws } => geodesic(&mut ctx, data, *k, *window, *draws)?,
        Command::Sweep { data, pair } => run_sweep(&mut ctx, data, pair)?,
        Command::Synth { preset, n, rho, t } => synth(&mut ctx, preset, *n, *rho, *t)?,
    }
    ctx.finish()
}

fn evaluate(ctx: &Context, panel: &Panel, part: Option<&BlockPartition>, kind: ArchitectureKind) -> Result<Vec<WindowResult>> {
    if kind.needs_partition() && part.is_none() {
        bail!("{kind} needs a partition (--partition or data.partition)");
    }
    let spec = ctx.cfg.model.architecture(kind);
    Ok(rolling_oos_evaluate(panel, &spec, part, &ctx.cfg.evaluation.calendar(), ctx.exec)?)
}

fn window_csv(runs: &[(String, Vec<WindowResult>)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_window_csv(runs, &mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct EvalSummary {
    architecture: String,
    windows: usize,
    mean_r2_test_mean: f64,
    mean_r2_train_mean: f64,
    mae: f64,
    mean_ic: Option<f64>,
}

fn eval(ctx: &mut Context, data: &DataArgs, kind: ArchitectureKind) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let part = ctx.partition(&panel)?;
    let res = evaluate(ctx, &panel, part.as_ref(), kind)?;
    let ics: Vec<f64> = spearman_ic(&res)?.into_iter().flatten().collect();
    let summary = EvalSummary {
        architecture: kind.to_string(),
        windows: res.len(),
        mean_r2_test_mean: mean_r2(&res, R2Convention::TestMean)?,
        mean_r2_train_mean: mean_r2(&res, R2Convention::TrainMean)?,
        mae: mae(&res),
        mean_ic: (!ics.is_empty()).then(|| ics.iter().sum::<f64>() / ics.len() as f64),
    };
    let slug = kind.slug();
    ctx.write(&format!("eval_{slug}_windows.csv"), &window_csv(&[(kind.to_string(), res)])?)?;
    let mut md = String::from("| Architecture | Windows | Mean R² (test mean) | Mean R² (train mean) | MAE | Mean IC |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    let _ = writeln!(
        md,
        "| {} | {} | {:.4} | {:.4} | {:.4} | {} |",
        summary.architecture,
        summary.windows,
        summary.mean_r2_test_mean,
        summary.mean_r2_train_mean,
        summary.mae,
        summary.mean_ic.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    ctx.write(&format!("eval_{slug}.md"), md.as_bytes())?;
    ctx.write_json(&format!("eval_{slug}.json"), &summary)
}

fn compare_pair(ctx: &mut Context, data: &DataArgs, a: ArchitectureKind, b: ArchitectureKind) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let part = ctx.partition(&panel)?;
    let ra = evaluate(ctx, &panel, part.as_ref(), a)?;
    let rb = evaluate(ctx, &panel, part.as_ref(), b)?;
    let rep = compare(&a.to_string(), &ra, &b.to_string(), &rb, &ctx.cfg.compare_options(), ctx.exec)?;
    let stem = format!("compare_{}_vs_{}", a.slug(), b.slug());
    ctx.write(&format!("{stem}.md"), comparison_markdown(std::slice::from_ref(&rep)).as_bytes())?;
    ctx.write_json(&format!("{stem}.json"), &rep)?;
    ctx.write(&format!("{stem}_windows.csv"), &window_csv(&[(a.to_string(), ra), (b.to_string(), rb)])?)
}

fn report(ctx: &mut Context, data: &DataArgs) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let part = ctx.require_partition(&panel)?;
    let opts = ctx.cfg.compare_options();
    let runs = ArchitectureKind::TABLE
        .iter()
        .map(|&k| Ok((k, evaluate(ctx, &panel, Some(&part), k)?)))
        .collect::<Result<Vec<_>>>()?;
    let g1 = &runs.iter().find(|(k, _)| *k == ArchitectureKind::G1).expect("G1 is in the table").1;
    let reports = runs
        .iter()
        .filter(|(k, _)| *k != ArchitectureKind::G1)
        .map(|(k, r)| Ok(compare(&k.to_string(), r, "G1", g1, &opts, ctx.exec)?))
        .collect::<Result<Vec<_>>>()?;
    ctx.write("report.md", comparison_markdown(&reports).as_bytes())?;
    ctx.write_json("report.json", &reports)?;
    let labelled: Vec<(String, Vec<WindowResult>)> = runs.into_iter().map(|(k, r)| (k.to_string(), r)).collect();
    ctx.write("report_windows.csv", &window_csv(&labelled)?)
}

fn harness<'a>(ctx: &Context, panel: &'a Panel, pair: &PairArgs) -> Result<DeltaHarness<'a>> {
    let m = &ctx.cfg.model;
    Ok(DeltaHarness::new(
        panel,
        &ctx.cfg.evaluation.calendar(),
        &m.architecture(pair.arch),
        &m.architecture(pair.baseline),
        ctx.cfg.evaluation.convention,
        ctx.exec,
    )?)
}

fn read_actor_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn placebo(ctx: &mut Context, data: &DataArgs, pair: &PairArgs, perms: Option<usize>, fixed: Option<&Path>) -> Result<()> {
    ctx.apply(data)?;
    if let Some(n) = perms {
        ctx.cfg.placebo.permutations = n;
    }
    if let Some(path) = fixed {
        ctx.cfg.placebo.fixed_actors = read_actor_list(path)?;
    }
    let panel = ctx.panel()?;
    let part = ctx.require_partition(&panel)?;
    let h = harness(ctx, &panel, pair)?;
    let r = placebo_test(&h, &part, &ctx.cfg.placebo_options(), ctx.exec)?;
    let mut csv = String::from("permutation,delta\n");
    for (k, d) in r.perm_deltas.iter().enumerate() {
        let _ = writeln!(csv, "{k},{d}");
    }
    ctx.write("placebo_perms.csv", csv.as_bytes())?;
    let sizes: Vec<String> = r.template.iter().map(|t| t.1.to_string()).collect();
    let mut md = String::from("| Real Δ | Placebo mean | Placebo sd | z | p | 95% band | Permutations | Template |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    let _ = writeln!(
        md,
        "| {:+.4} | {:+.4} | {:.4} | {} | {:.4} | [{:+.4}, {:+.4}] | {} | {} |",
        r.real_delta,
        r.perm_mean,
        r.perm_std,
        r.z.map_or("n/a".into(), |z| format!("{z:.2}")),
        r.p,
        r.band95.0,
        r.band95.1,
        r.n_perms,
        sizes.join("/")
    );
    if !r.fixed_actors.is_empty() {
        let _ = writeln!(md, "\nFixed actors: {}.", r.fixed_actors.len());
    }
    ctx.write("placebo.md", md.as_bytes())?;
    ctx.write_json("placebo.json", &r)
}

/// Candidates from `candidate_id,actor_id` rows, in first-seen order.
fn load_candidates(panel: &Panel, path: &Path) -> Result<Vec<Candidate>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(["candidate_id", "actor_id"]) {
        bail!("{}: header must be candidate_id,actor_id", path.display());
    }
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (c, a) = (&rec[0], &rec[1]);
        match groups.iter_mut().find(|(id, _)| id == c) {
            Some((_, actors)) => actors.push(a.to_string()),
            None => groups.push((c.to_string(), vec![a.to_string()])),
        }
    }
    Ok(groups.iter().map(|(id, actors)| Candidate::from_actor_ids(panel, id, actors)).collect::<blockmix::Result<_>>()?)
}

fn lowo(ctx: &mut Context, data: &DataArgs, pair: &PairArgs, candidates: &Path) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let cands = load_candidates(&panel, candidates)?;
    let h = harness(ctx, &panel, pair)?;
    let r = lowo_block_selection(&h, &cands, ctx.exec)?;
    let mut md = String::from("| Held-out year | Selected | Δ |\n|---|---|---|\n");
    for w in &r.windows {
        let _ = writeln!(md, "| {} | {} | {:+.4} |", w.test_year, w.selected.join(", "), w.delta);
    }
    let _ = writeln!(
        md,
        "\nClean Δ {:+.4} ({}/{} wins). Contaminated selection [{}]: Δ {:+.4} ({}/{} wins).",
        r.clean.delta,
        r.clean.wins,
        r.clean.windows(),
        r.contaminated_selection.join(", "),
        r.contaminated.delta,
        r.contaminated.wins,
        r.contaminated.windows()
    );
    ctx.write("lowo.md", md.as_bytes())?;
    ctx.write_json("lowo.json", &r)
}

fn freeze(
    ctx: &mut Context,
    data: &DataArgs,
    pair: &PairArgs,
    candidates: &Path,
    phase_a: (i32, i32),
    phase_b: (i32, i32),
) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let cands = load_candidates(&panel, candidates)?;
    let t = ctx.cfg.evaluation.train_years;
    let m = &ctx.cfg.model;
    let r = held_out_freeze(
        &panel,
        &cands,
        &m.architecture(pair.arch),
        &m.architecture(pair.baseline),
        &RollingWindowSpec::years(phase_a.0, phase_a.1, t),
        &RollingWindowSpec::years(phase_b.0, phase_b.1, t),
        ctx.cfg.evaluation.convention,
        ctx.exec,
    )?;
    let mut md = format!(
        "Phase A {}–{}, rule Δ > 0 and W ≥ {}.\n\n",
        phase_a.0, phase_a.1, r.rule.min_wins
    );
    md.push_str(&scan_markdown(&r.phase_a_scores, r.rule));
    let _ = writeln!(
        md,
        "\nFrozen: [{}]. Phase B {}–{}: Δ {:+.4} ({}/{} wins).",
        r.frozen.join(", "),
        phase_b.0,
        phase_b.1,
        r.phase_b.delta,
        r.phase_b.wins,
        r.phase_b.windows()
    );
    ctx.write("freeze.md", md.as_bytes())?;
    ctx.write_json("freeze.json", &r)
}

fn scan(ctx: &mut Context, data: &DataArgs, pair: &PairArgs, candidates: &Path, min_wins: Option<usize>) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let cands = load_candidates(&panel, candidates)?;
    let h = harness(ctx, &panel, pair)?;
    let rule = SelectionRule { min_wins: min_wins.unwrap_or_else(|| freeze_threshold(h.n_windows())) };
    let scores = candidate_scan(&h, &cands, ctx.exec)?;
    let mut csv = String::from("candidate_id,size,delta,wins,windows,selected\n");
    for s in &scores {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            s.id,
            s.size,
            s.summary.delta,
            s.summary.wins,
            s.summary.windows(),
            rule.selects(&s.summary)
        );
    }
    ctx.write("scan.csv", csv.as_bytes())?;
    ctx.write("scan.md", scan_markdown(&scores, rule).as_bytes())
}

fn perturb(ctx: &mut Context, data: &DataArgs, pair: &PairArgs, variants: Option<&Path>) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let part = ctx.require_partition(&panel)?;
    let variants: Vec<Perturbation> = match variants {
        Some(path) => serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing variants {}", path.display()))?,
        None => {
            let mut v = vec![Perturbation::Baseline];
            for b in part.local_blocks() {
                v.push(Perturbation::Unlocal { block: b.clone() });
                v.push(Perturbation::DropBlock { block: b.clone() });
            }
            v.push(Perturbation::RemainderLocal);
            v
        }
    };
    let m = &ctx.cfg.model;
    let res = perturbation_suite(
        &panel,
        &part,
        &m.architecture(pair.arch),
        &m.architecture(pair.baseline),
        &ctx.cfg.evaluation.calendar(),
        &variants,
        ctx.cfg.evaluation.convention,
        ctx.exec,
    )?;
    let mut csv = String::from("variant,n_actors,delta,wins,windows\n");
    let mut md = String::from("| Variant | N | Δ | W |\n|---|---|---|---|\n");
    for r in &res {
        let _ = writeln!(csv, "{},{},{},{},{}", r.label, r.n_actors, r.summary.delta, r.summary.wins, r.summary.windows());
        let _ = writeln!(md, "| {} | {} | {:+.4} | {}/{} |", r.label, r.n_actors, r.summary.delta, r.summary.wins, r.summary.windows());
    }
    ctx.write("perturb.csv", csv.as_bytes())?;
    ctx.write("perturb.md", md.as_bytes())
}

#[derive(Serialize)]
struct SubsetGeometry {
    subset: String,
    size: usize,
    k: usize,
    rotation: RotationSeries,
    baseline: BaselineStats,
    control: Option<MatchedControl>,
}

fn geodesic(ctx: &mut Context, data: &DataArgs, k: Option<usize>, window: Option<usize>, draws: Option<usize>) -> Result<()> {
    ctx.apply(data)?;
    let g = &mut ctx.cfg.geometry;
    if let Some(k) = k {
        g.k = k;
    }
    if let Some(w) = window {
        g.window = w;
    }
    if let Some(d) = draws {
        g.draws = d;
    }
    ctx.cfg.validate()?;
    let panel = ctx.panel()?;
    let part = ctx.partition(&panel)?;
    let g = ctx.cfg.geometry.clone();
    let seed = ctx.cfg.stream_seed(SeedStream::Geometry);
    let windows = ResidualWindows::new(panel.values(), g.window, ctx.cfg.model.ewm_half_life)?;
    let mut subsets: Vec<(String, Vec<usize>, bool)> = vec![("panel".into(), (0..panel.n_actors()).collect(), false)];
    if let Some(part) = &part {
        for b in part.resolve(&panel)?.into_iter().filter(|b| b.local) {
            subsets.push((b.id, b.rows, true));
        }
    }
    let quarters = panel.quarters();
    let mut csv = String::from("subset,end_quarter,step_deg\n");
    let mut out = Vec::with_capacity(subsets.len());
    for (id, rows, control) in subsets {
        let rotation = rotation_series(&windows.bases(&rows, g.k)?)?;
        for (i, step) in rotation.steps.iter().enumerate() {
            let _ = writeln!(csv, "{id},{},{step}", quarters[windows.windows[i + 1].0]);
        }
        let baseline = random_baseline(rows.len(), g.k, g.draws, seed, ctx.exec)?;
        let control = if control {
            Some(matched_subpanel_control(&windows, &rows, g.control_draws, g.k, seed, ctx.exec)?)
        } else {
            None
        };
        out.push(SubsetGeometry { subset: id, size: rows.len(), k: g.k, rotation, baseline, control });
    }
    let fmt = |v: Option<f64>, d: usize| v.map_or("n/a".to_string(), |x| format!("{x:.d$}"));
    let mut md = String::from(
        "| Subset | N | K | Mean step (°) | ACF(1) | Ljung–Box p | Random mean (°) | Random 5–95% | Step / random | Matched p |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for s in &out {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.2} | {} | {} | {:.2} | [{:.2}, {:.2}] | {:.3} | {} |",
            s.subset,
            s.size,
            s.k,
            s.rotation.mean_step,
            fmt(s.rotation.acf1, 3),
            fmt(s.rotation.ljung_box_p, 3),
            s.baseline.mean,
            s.baseline.q05,
            s.baseline.q95,
            s.rotation.mean_step / s.baseline.mean,
            fmt(s.control.as_ref().map(|c| c.p), 3)
        );
    }
    ctx.write("geodesic_steps.csv", csv.as_bytes())?;
    ctx.write("geodesic.md", md.as_bytes())?;
    ctx.write_json("geodesic.json", &out)
}

fn run_sweep(ctx: &mut Context, data: &DataArgs, pair: &PairArgs) -> Result<()> {
    ctx.apply(data)?;
    let panel = ctx.panel()?;
    let part = ctx.require_partition(&panel)?;
    let m = &ctx.cfg.model;
    let cells = sweep(
        &panel,
        &part,
        &m.architecture(pair.arch),
        &m.architecture(pair.baseline),
        &ctx.cfg.sweep_grid(),
        ctx.cfg.evaluation.convention,
        ctx.exec,
    )?;
    let mut csv = String::from("train_years,local_k,delta,wins,windows,error\n");
    for c in &cells {
        match &c.summary {
            Some(s) => {
                let _ = writeln!(csv, "{},{},{},{},{},", c.train_years, c.local_k, s.delta, s.wins, s.windows());
            }
            None => {
                let err = c.error.as_deref().unwrap_or("").replace(['"', '\n'], "'");
                let _ = writeln!(csv, "{},{},,,,\"{err}\"", c.train_years, c.local_k);
            }
        }
    }
    ctx.write("sweep.csv", csv.as_bytes())?;
    ctx.write("sweep.md", sweep_markdown(&cells).as_bytes())
}

fn synth(ctx: &mut Context, preset: &str, n: usize, rho: f64, t: usize) -> Result<()> {
    let seed = ctx.cfg.stream_seed(SeedStream::Synth);
    match preset {
        "heterogeneous" => {
            let cfg = ctx.cfg.synth.clone().unwrap_or_else(|| SynthConfig::heterogeneous_93(seed));
            let panel = generate_heterogeneous_panel(&cfg)?;
            let mut buf = Vec::new();
            write_panel(&panel, &mut buf)?;
            ctx.write("synth_panel.csv", &buf)?;
            if !cfg.blocks.is_empty() {
                let mut buf = Vec::new();
                write_partition(&cfg.partition(&panel)?, &mut buf)?;
                ctx.write("synth_partition.csv", &buf)?;
            }
            ctx.write_json("synth_config.json", &cfg)
        }
        "homogeneous" => {
            let panel = generate_homogeneous_panel(seed, n, rho, t)?;
            let mut buf = Vec::new();
            write_panel(&panel, &mut buf)?;
            ctx.write("synth_panel.csv", &buf)
        }
        other => bail!("unknown preset '{other}' (heterogeneous or homogeneous)"),
    }
}
