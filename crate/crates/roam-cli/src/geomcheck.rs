//! The `geomcheck` subcommand: self-contained numerical checks of the
//! geometry layer, one printed line per check, exit 0 only when every
//! check passes.

use roam::geometry::{
    Circle, Rect, Vec2, coverage_ratio_overlap, coverage_ratio_overlap_exact,
    coverage_ratio_tangent, coverage_ratio_tangent_exact, default_reward_shape, overlap_reward,
    union_area,
};
use roam::oracles;

use crate::cli::GeomcheckArgs;
use crate::error::CliError;

struct Report {
    failures: u32,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "pass" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

pub fn cmd_geomcheck(args: GeomcheckArgs) -> Result<(), CliError> {
    if !(args.tolerance > 0.0 && args.tolerance.is_finite()) {
        return Err(CliError::usage("--tolerance must be a positive number"));
    }
    if !(args.quad_tol > 0.0 && args.quad_tol.is_finite()) {
        return Err(CliError::usage("--quad-tol must be a positive number"));
    }
    // A certification below the integrator's own tolerance would pass or
    // fail on quadrature noise, so it is refused instead of attempted.
    if args.tolerance < args.quad_tol {
        println!(
            "FAIL tolerance: tolerance mismatch: cannot certify to {:e} with quadrature tolerance {:e}; \
             lower --quad-tol below --tolerance",
            args.tolerance, args.quad_tol
        );
        return Err(CliError::usage(format!(
            "tolerance mismatch: requested {:e} is below the quadrature tolerance {:e}",
            args.tolerance, args.quad_tol
        )));
    }

    let mut rep = Report { failures: 0 };

    // Four pairwise-tangent unit discs over their circumscribing square.
    let c1 = coverage_ratio_tangent(args.quad_tol)?.value;
    let c1_exact = coverage_ratio_tangent_exact();
    rep.check(
        "coverage-tangent",
        (c1 - c1_exact).abs() <= args.tolerance,
        format!("computed {c1:.6}, closed form {c1_exact:.6} (pi/4), tolerance {:e}", args.tolerance),
    );

    // The overlapped layout: adjacent discs intersect, diagonal discs touch.
    let c2 = coverage_ratio_overlap(args.quad_tol)?.value;
    let c2_exact = coverage_ratio_overlap_exact();
    rep.check(
        "coverage-overlap",
        (c2 - c2_exact).abs() <= args.tolerance,
        format!("computed {c2:.6}, closed form {c2_exact:.6}, tolerance {:e}", args.tolerance),
    );

    rep.check(
        "coverage-separation",
        c2 - c1 > 0.09,
        format!("overlapped beats tangent by {:.4} (needs > 0.09)", c2 - c1),
    );

    // Adaptive quadrature against Monte Carlo on a seeded random arrangement.
    let circles = random_circles(args.seed, 12);
    let clip = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0));
    let quad = union_area(&circles, &clip, args.quad_tol)?.value;
    let mc = oracles::mc_union_area(&circles, &clip, args.mc_samples, args.seed ^ 0x9e37);
    let bound = args.tolerance.max(3.0 * mc.std_err);
    rep.check(
        "union-quadrature-vs-monte-carlo",
        (quad - mc.value).abs() <= bound,
        format!(
            "quadrature {quad:.6}, monte carlo {:.6} +/- {:.2e} ({} samples), bound {bound:.2e}",
            mc.value, mc.std_err, args.mc_samples
        ),
    );

    // The piecewise overlap reward: anchors, continuity at the junction,
    // and the global maximum.
    let shape = default_reward_shape(0.04)?;
    let f0 = overlap_reward(0.0, &shape)?;
    let fs2 = overlap_reward(shape.s2, &shape)?;
    let fs3 = overlap_reward(shape.s3, &shape)?;
    rep.check(
        "reward-anchors",
        f0 == 2.0 && fs2 == 3.0 && fs3 == -3.0,
        format!("F(0)={f0}, F(s2)={fs2}, F(s3)={fs3} (expected 2, 3, -3 exactly)"),
    );

    let left_limit = overlap_reward(shape.s2 * (1.0 - 1e-12), &shape)?;
    let mut max_val = f64::NEG_INFINITY;
    let mut max_arg = 0.0;
    let mut max_jump: f64 = 0.0;
    let grid_n = 200_000usize;
    let mut prev = f0;
    for k in 1..=grid_n {
        let x = shape.s3 * k as f64 / grid_n as f64;
        let v = overlap_reward(x, &shape)?;
        max_jump = max_jump.max((v - prev).abs());
        if v > max_val {
            max_val = v;
            max_arg = x;
        }
        prev = v;
    }
    // Steepest slope of either piece, for the grid continuity bound.
    let lip = ((shape.r2 - shape.r1) / shape.s2)
        .abs()
        .max(2.0 * (shape.r2 - shape.r3).abs() / (shape.s3 - shape.s2));
    let step = shape.s3 / grid_n as f64;
    rep.check(
        "reward-continuity",
        (left_limit - fs2).abs() <= 1e-9 && max_jump <= lip * step + 1e-9,
        format!(
            "junction gap {:.2e}, max grid jump {max_jump:.2e} (Lipschitz bound {:.2e})",
            (left_limit - fs2).abs(),
            lip * step + 1e-9
        ),
    );

    rep.check(
        "reward-maximum",
        max_val <= fs2 && (max_arg - shape.s2).abs() <= step,
        format!("grid maximum {max_val:.9} at {max_arg:.3e}, junction at {:.3e}", shape.s2),
    );

    if rep.failures > 0 {
        return Err(CliError::runtime(anyhow::anyhow!(
            "{} geometry check(s) failed",
            rep.failures
        )));
    }
    Ok(())
}

/// Deterministic pseudo-random circles for the quadrature cross-check.
fn random_circles(seed: u64, n: usize) -> Vec<Circle> {
    let mut rng = oracles::SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            Circle::new(
                rng.next_f64(),
                rng.next_f64(),
                0.05 + 0.15 * rng.next_f64(),
            )
        })
        .collect()
}
