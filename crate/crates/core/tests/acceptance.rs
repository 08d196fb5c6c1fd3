//! Acceptance criteria. Each criterion prints one PASS or FAIL line; the test
//! fails if any criterion fails. The fine-grid sweeps take several minutes.

use std::io::Write;

use lodfem::corrector::{
    compute_all_correctors, decay_profile, CorrectorContext, CorrectorTolerances, DecayMode, NeumannLoads, PatchPolicy,
};
use lodfem::experiment::{run_lod, FineProblem, LodOptions, LodRunInfo};
use lodfem::fem::{
    assemble_load, assemble_stiffness, solve_reference, CoefField, FeFunction,
    ReferenceSolver,
};
use lodfem::interp::{assemble_clement, prolongate};
use lodfem::lod::{assemble_ms_basis, ideal_projection_oracle, solve_lod};
use lodfem::mesh::{BoundarySpec, CoarseFineMap};
use lodfem::problems::{mp1, mp1_homogeneous, mp3, mp3_with, Mp3Geometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(line: &str) {
    // bypasses the test harness capture so the lines always reach the log
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, pass: bool, detail: String) -> Verdict {
    report(&format!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" }));
    Verdict { id, pass, detail }
}

fn within_factor(value: f64, target: f64, factor: f64) -> bool {
    value > 0.0 && value <= factor * target && value >= target / factor
}

/// Target rows `(coarse level, fine layers, rel L2, rel H1, patch elems, patch nodes)`.
const MP1_BY_H: [(u32, usize, f64, f64, f64, f64); 4] = [
    (2, 32, 0.03593, 0.07684, 22480.0, 11465.0),
    (3, 32, 0.00824, 0.04241, 14696.0, 7525.0),
    (4, 32, 0.00162, 0.01664, 10743.0, 5520.0),
    (5, 32, 0.00024, 0.00453, 8922.0, 4596.0),
];

const MP1_BY_LAYERS: [(usize, f64, f64, f64, f64); 5] = [
    (4, 0.02699, 0.24344, 847.0, 471.0),
    (8, 0.01593, 0.14345, 1675.0, 900.0),
    (16, 0.00508, 0.05071, 3994.0, 2090.0),
    (32, 0.00162, 0.01664, 10743.0, 5520.0),
    (64, 0.00017, 0.00185, 30599.0, 15548.0),
];

fn row_text(r: &LodRunInfo) -> String {
    format!(
        "H=2^-{} l={} L2={:.5} H1={:.5} elems={:.1} nodes={:.1}",
        r.coarse_level,
        r.fine_layers.unwrap_or(0),
        r.errors.rel_l2,
        r.errors.rel_h1,
        r.stats.avg_fine_elems,
        r.stats.avg_fine_nodes
    )
}

fn mp1_criteria(out: &mut Vec<Verdict>) -> lodfem::Result<()> {
    let fine = FineProblem::new(mp1(), 8)?;
    let reference = fine.reference(ReferenceSolver::Direct)?;
    let opts = LodOptions::default();
    let mut by_h = Vec::new();
    for &(cl, l, ..) in &MP1_BY_H {
        let run = run_lod(&fine, &reference.u, cl, PatchPolicy::fine_layers(l), &opts)?;
        report(&format!("  mp1 {}", row_text(&run.info)));
        by_h.push(run.info);
    }
    let mut by_layers = Vec::new();
    for &(l, ..) in &MP1_BY_LAYERS {
        if let Some(r) = by_h.iter().find(|r| r.coarse_level == 4 && r.fine_layers == Some(l)) {
            by_layers.push(r.clone());
            continue;
        }
        let run = run_lod(&fine, &reference.u, 4, PatchPolicy::fine_layers(l), &opts)?;
        report(&format!("  mp1 {}", row_text(&run.info)));
        by_layers.push(run.info);
    }

    // 1: coarse grid sweep
    let mut ok = true;
    let mut worst: f64 = 1.0;
    for (r, t) in by_h.iter().zip(&MP1_BY_H) {
        for (v, target) in [(r.errors.rel_l2, t.2), (r.errors.rel_h1, t.3)] {
            ok &= within_factor(v, target, 2.0);
            worst = worst.max((v / target).max(target / v));
        }
    }
    let ratios: Vec<f64> = by_h.windows(2).map(|w| w[0].errors.rel_h1 / w[1].errors.rel_h1).collect();
    let trend = ratios.iter().all(|&q| q >= 1.7);
    out.push(verdict(
        1,
        ok && trend,
        format!(
            "MP1 coarse sweep: worst factor to target {worst:.3} (limit 2), H1 ratios {:?} (limit >= 1.7)",
            ratios.iter().map(|q| format!("{q:.2}")).collect::<Vec<_>>()
        ),
    ));

    // 2: layer sweep
    let mut ok = true;
    let mut worst: f64 = 1.0;
    for (r, t) in by_layers.iter().zip(&MP1_BY_LAYERS) {
        ok &= within_factor(r.errors.rel_h1, t.2, 2.0);
        worst = worst.max((r.errors.rel_h1 / t.2).max(t.2 / r.errors.rel_h1));
    }
    let monotone = by_layers.windows(2).all(|w| w[1].errors.rel_h1 < w[0].errors.rel_h1);
    let pts: Vec<(f64, f64)> = by_layers.iter().map(|r| (r.k.unwrap(), r.errors.rel_h1.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    out.push(verdict(
        2,
        ok && monotone && slope < 0.0,
        format!(
            "MP1 layer sweep: worst H1 factor to target {worst:.3} (limit 2), monotone {monotone}, log-linear slope {slope:.3} per coarse layer"
        ),
    ));

    // 3: patch statistics
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut exact = 0;
    let mut total = 0;
    let rows = by_h
        .iter()
        .zip(MP1_BY_H.iter().map(|t| (t.4, t.5)))
        .chain(by_layers.iter().zip(MP1_BY_LAYERS.iter().map(|t| (t.3, t.4))));
    for (r, (te, tn)) in rows {
        for (v, t) in [(r.stats.avg_fine_elems, te), (r.stats.avg_fine_nodes, tn)] {
            let dev = (v - t).abs() / t;
            worst = worst.max(dev);
            ok &= dev <= 0.10;
            total += 1;
            if (v - t).abs() < 1.0 {
                exact += 1;
            }
        }
    }
    out.push(verdict(
        3,
        ok,
        format!("patch averages: worst deviation {:.2}% (limit 10%), {exact}/{total} equal after rounding", 100.0 * worst),
    ));
    Ok(())
}

fn random_coefficient(cfmap: &CoarseFineMap, seed: u64) -> CoefField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CoefField::from_values((0..cfmap.fine().n_elements()).map(|_| rng.gen_range(0.1..10.0)).collect()).unwrap()
}

fn ideal_identity() -> lodfem::Result<Verdict> {
    let cfmap = CoarseFineMap::unit_square(2, 4, &BoundarySpec::all_dirichlet())?;
    let fine = cfmap.fine();
    let coef = random_coefficient(&cfmap, 11);
    let stiffness = assemble_stiffness(fine, &coef)?;
    let clement = assemble_clement(&cfmap);
    let ctx = CorrectorContext { cfmap: &cfmap, coef: &coef, stiffness: &stiffness, clement: &clement, tol: CorrectorTolerances::default() };
    let set = compute_all_correctors(&ctx, None, &NeumannLoads::none(), PatchPolicy::Global, 0)?;
    let basis = assemble_ms_basis(&set, &cfmap, &clement)?;
    let zero = FeFunction::fine(vec![0.0; fine.n_nodes()]);
    let no_flux = vec![0.0; fine.n_nodes()];

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let random_u: Vec<f64> =
        (0..fine.n_nodes()).map(|x| if fine.is_dirichlet(x) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
    let load = assemble_load(fine, |_| 1.0);
    let u_ref = solve_reference(fine, &stiffness, &load, &no_flux, &zero, ReferenceSolver::Direct)?.u;

    let mut oracle_gap: f64 = 0.0;
    let mut kernel_gap: f64 = 0.0;
    for (u_h, f) in [(FeFunction::fine(random_u.clone()), stiffness.mul_vec(&random_u)), (u_ref, load)] {
        let sol = solve_lod(&basis, &set, &stiffness, &f, &no_flux, &zero)?;
        let oracle = ideal_projection_oracle(&cfmap, &clement, &stiffness, &u_h)?;
        let scale = u_h.max_abs();
        for (a, b) in sol.u.values.iter().zip(&oracle.values) {
            oracle_gap = oracle_gap.max((a - b).abs() / scale);
        }
        let diff: Vec<f64> = u_h.values.iter().zip(&sol.u.values).map(|(a, b)| a - b).collect();
        kernel_gap = kernel_gap.max(clement.nodal_values(&diff).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
    }
    Ok(verdict(
        4,
        oracle_gap <= 1e-8 && kernel_gap <= 1e-8,
        format!("ideal identity: |u_lod - oracle|_inf = {oracle_gap:.2e}, |I_H(u_h - u_lod)|_inf = {kernel_gap:.2e} (limit 1e-8)"),
    ))
}

fn convergence_rates() -> lodfem::Result<Verdict> {
    let fine = FineProblem::new(mp1_homogeneous(), 6)?;
    let reference = fine.reference(ReferenceSolver::Direct)?;
    let mut errs = Vec::new();
    for cl in [2, 3, 4] {
        let run = run_lod(&fine, &reference.u, cl, PatchPolicy::Global, &LodOptions::default())?;
        report(&format!("  global H=2^-{cl}: L2={:.4e} H1={:.4e}", run.info.errors.rel_l2, run.info.errors.rel_h1));
        errs.push(run.info.errors);
    }
    let eoc = |a: f64, b: f64| (a / b).log2();
    let h1: Vec<f64> = errs.windows(2).map(|w| eoc(w[0].rel_h1, w[1].rel_h1)).collect();
    let l2: Vec<f64> = errs.windows(2).map(|w| eoc(w[0].rel_l2, w[1].rel_l2)).collect();
    let ok = h1.iter().all(|&r| r >= 0.9) && l2.iter().all(|&r| r >= 1.7);
    Ok(verdict(5, ok, format!("global-patch rates: H1 EOC {h1:.2?} (limit 0.9), L2 EOC {l2:.2?} (limit 1.7)")))
}

fn corrector_invariants() -> lodfem::Result<Verdict> {
    let cfmap = CoarseFineMap::unit_square(3, 5, &BoundarySpec::all_dirichlet())?;
    let fine = cfmap.fine();
    let problem = mp1();
    let coef = lodfem::fem::sample_coefficient(fine, |x| problem.a(x))?;
    let stiffness = assemble_stiffness(fine, &coef)?;
    let clement = assemble_clement(&cfmap);
    let ctx = CorrectorContext { cfmap: &cfmap, coef: &coef, stiffness: &stiffness, clement: &clement, tol: CorrectorTolerances::default() };
    let nf = fine.n_nodes();

    let mut sum_defect: f64 = 0.0;
    let mut kernel: f64 = 0.0;
    for policy in [PatchPolicy::fine_layers(4), PatchPolicy::coarse_layers(1), PatchPolicy::Global] {
        let set = compute_all_correctors(&ctx, None, &NeumannLoads::none(), policy, 0)?;
        sum_defect = sum_defect.max(set.max_sum_defect());
        for e in &set.entries {
            for q in &e.element {
                if q.is_zero() {
                    continue;
                }
                let v = clement.nodal_values(&q.to_dense(nf));
                kernel = kernel.max(v.iter().fold(0.0f64, |m, x| m.max(x.abs())) / q.max_abs());
            }
        }
    }

    let set = compute_all_correctors(&ctx, None, &NeumannLoads::none(), PatchPolicy::Global, 0)?;
    let basis = assemble_ms_basis(&set, &cfmap, &clement)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut orth: f64 = 0.0;
    for _ in 0..50 {
        let v: Vec<f64> = (0..nf).map(|x| if fine.is_dirichlet(x) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
        let vf = FeFunction::fine(v.clone());
        let coarse = clement.invert_on_coarse(&cfmap, &clement.apply(&vf)?)?;
        let p = prolongate(&cfmap, &coarse)?;
        let w: Vec<f64> = v.iter().zip(&p.values).map(|(a, b)| a - b).collect();
        let sw = stiffness.mul_vec(&w);
        let wn = stiffness.bilinear(&w, &w).sqrt();
        for c in 0..basis.n_cols() {
            let col = basis.column(c);
            let cn = stiffness.bilinear(&col, &col).sqrt();
            let ip: f64 = col.iter().zip(&sw).map(|(a, b)| a * b).sum();
            orth = orth.max(ip.abs() / (cn * wn));
        }
    }
    Ok(verdict(
        6,
        sum_defect <= 1e-9 && kernel <= 1e-9 && orth <= 1e-8,
        format!(
            "corrector invariants: sum defect {sum_defect:.2e} (1e-9), |I_H Q|/|Q| {kernel:.2e} (1e-9), A-orthogonality {orth:.2e} (1e-8)"
        ),
    ))
}

fn decay() -> lodfem::Result<Verdict> {
    let fine = FineProblem::new(mp3(), 6)?;
    let cfmap = fine.cfmap(3)?;
    let clement = assemble_clement(&cfmap);
    let ctx = CorrectorContext {
        cfmap: &cfmap,
        coef: &fine.coef,
        stiffness: &fine.stiffness,
        clement: &clement,
        tol: CorrectorTolerances::default(),
    };
    // upper triangle of the cell [0.375, 0.5] x [0.125, 0.25]; the lower conductor runs through it
    let t = 2 * (8 + 3) + 1;
    let coarse = cfmap.coarse();
    let c = coarse.barycenter(t);
    let crosses = cfmap.fine_elems_of(t).iter().any(|&e| fine.coef.value(e) == Mp3Geometry::default().conductor_value);
    let report_ = decay_profile(&ctx, t, DecayMode::Element { vertex: 0 }, &NeumannLoads::none(), 4)?;
    let tails = &report_.tails;
    let decreasing = tails.windows(2).all(|w| w[1] < w[0]);
    let theta = report_.theta.unwrap_or(f64::NAN);
    Ok(verdict(
        7,
        crosses && decreasing && theta < 1.0,
        format!(
            "MP3 decay at T={t} (barycenter {:.3},{:.3}, conductor inside {crosses}): tails [{}], theta {theta:.3}",
            c[0],
            c[1],
            tails.iter().map(|t| format!("{t:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn mp3_band() -> lodfem::Result<Verdict> {
    let fine = FineProblem::new(mp3_with(Mp3Geometry::default())?, 8)?;
    let reference = fine.reference(ReferenceSolver::Direct)?;
    let opts = LodOptions::default();
    let mut band_ok = true;
    let mut lines = Vec::new();
    for cl in [3u32, 4] {
        // one coarse layer
        let layers = 1usize << (8 - cl);
        let r = run_lod(&fine, &reference.u, cl, PatchPolicy::fine_layers(layers), &opts)?.info;
        report(&format!("  mp3 {}", row_text(&r)));
        band_ok &= (0.005..=0.15).contains(&r.errors.rel_l2) && (0.05..=0.6).contains(&r.errors.rel_h1);
        lines.push(format!("H=2^-{cl}: {:.4}/{:.4}", r.errors.rel_l2, r.errors.rel_h1));
    }
    let mut sweep = Vec::new();
    for l in [4, 8, 16, 32] {
        let r = run_lod(&fine, &reference.u, 3, PatchPolicy::fine_layers(l), &opts)?.info;
        report(&format!("  mp3 {}", row_text(&r)));
        sweep.push(r.errors);
    }
    let monotone = sweep.windows(2).all(|w| w[1].rel_l2 < w[0].rel_l2 && w[1].rel_h1 < w[0].rel_h1);
    Ok(verdict(
        8,
        band_ok && monotone,
        format!(
            "MP3 band (L2 in [0.005,0.15], H1 in [0.05,0.6]) {}: {}; layer sweep H1 {:.4?} monotone {monotone}",
            band_ok,
            lines.join(", "),
            sweep.iter().map(|e| e.rel_h1).collect::<Vec<_>>()
        ),
    ))
}

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    if let Err(e) = mp1_criteria(&mut verdicts) {
        for id in 1..=3 {
            verdicts.push(verdict(id, false, format!("run failed: {e}")));
        }
    }
    let others: [(u32, fn() -> lodfem::Result<Verdict>); 5] =
        [(4, ideal_identity), (5, convergence_rates), (6, corrector_invariants), (7, decay), (8, mp3_band)];
    for (id, f) in others {
        match f() {
            Ok(v) => verdicts.push(v),
            Err(e) => verdicts.push(verdict(id, false, format!("run failed: {e}"))),
        }
    }
    verdicts.sort_by_key(|v| v.id);
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.pass).map(|v| format!("{}: {}", v.id, v.detail)).collect();
    report(&format!("acceptance: {}/{} criteria pass", verdicts.len() - failed.len(), verdicts.len()));
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
