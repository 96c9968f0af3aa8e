//! Closed-form controller identities and a numerical continuity probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robot_trajectron::control::{agreement, blend, goal_attraction, trajectory_following, ControllerConfig, Fields};
use robot_trajectron::data::Vec3;
use robot_trajectron::predict::GoalBelief;

fn belief(goals: &[Vec3], probs: &[f64]) -> GoalBelief {
    GoalBelief {
        goals: goals.to_vec(),
        densities: vec![1.0; goals.len()],
        probs: probs.to_vec(),
        low_confidence: false,
    }
}

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn parallel(a: Vec3, b: Vec3) -> bool {
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    norm(c) <= 1e-12 * norm(a) * norm(b) && a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() > 0.0
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Every fixed identity of the goal field, trajectory field, agreement and
/// soft switch with the default configuration.
pub fn controller_identities() -> Result<(), String> {
    let cfg = ControllerConfig::default();
    let p = [0.0, 0.0, 0.0];
    let goals = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

    let (_, w, i) = goal_attraction(p, &belief(&goals, &[0.04, 0.01]), &cfg).map_err(|e| e.to_string())?;
    ensure!(i == 0 && w == 0.08, "gamma * 0.04 gave {w}");
    let (_, w, _) = goal_attraction(p, &belief(&goals, &[0.2, 0.1]), &cfg).map_err(|e| e.to_string())?;
    ensure!(w == 0.1, "cap at nu gave {w}");
    let (v, w, _) = goal_attraction(goals[0], &belief(&goals, &[0.2, 0.1]), &cfg).map_err(|e| e.to_string())?;
    ensure!(v == [0.0; 3] && w == 0.1, "goal reached gave v_g {v:?}, w_g {w}");
    let (_, _, i) = goal_attraction([0.1, 0.0, 0.0], &belief(&goals, &[0.5, 0.5]), &cfg).map_err(|e| e.to_string())?;
    ensure!(i == 0, "tie went to the farther goal");

    let path = [[0.5, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let (_, w) = trajectory_following(p, &path, 0.0, &cfg).map_err(|e| e.to_string())?;
    ensure!(w == 1.0, "motion onset gave w_tr {w}");
    let (_, w) = trajectory_following(p, &path, 3.0, &cfg).map_err(|e| e.to_string())?;
    ensure!(w == 0.7, "floor case gave w_tr {w}");
    let (v, _) = trajectory_following(path[0], &path, 1.0, &cfg).map_err(|e| e.to_string())?;
    ensure!(v == [0.0; 3], "at the first predicted point v_tr is {v:?}");

    ensure!(agreement([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == 1.0, "parallel agreement");
    ensure!(agreement([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]) == 0.0, "opposed agreement");
    let a = agreement([1.0, 0.0, 0.0], [1.0, 1.0, 0.0]);
    ensure!((a - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15, "45 degree agreement {a}");
    ensure!(agreement([0.0; 3], [1.0, 0.0, 0.0]) == 0.0, "degenerate agreement");

    let v_u = [0.0, 1.0, 0.0];
    let full = Fields {
        v_g: [0.0, 1.0, 0.0],
        w_g: 1.0,
        v_tr: [1.0, 0.0, 0.0],
        w_tr: 1.0,
        goal: Some(0),
    };
    let s = blend(v_u, &full, &ControllerConfig { nu: 1.0, ..cfg.clone() });
    ensure!(s.w_g2 == 1.0 && parallel(s.v_r, full.v_g), "switch limit gave {:?}", s.v_r);
    let none = Fields {
        v_g: [0.0, 0.0, -1.0],
        w_g: 0.0,
        v_tr: [0.0, 0.0, -1.0],
        w_tr: 0.7,
        goal: None,
    };
    let s = blend([1.0, 2.0, 0.0], &none, &cfg);
    ensure!(s.w_g2 == 0.0 && s.w_tr2 == 0.0 && parallel(s.v_r, [1.0, 2.0, 0.0]), "teleop limit gave {:?}", s.v_r);
    let aligned = Fields {
        v_g: [1.0, 0.0, 0.0],
        w_g: 0.1,
        v_tr: [1.0, 0.0, 0.0],
        w_tr: 0.7,
        goal: Some(0),
    };
    let s = blend([1.0, 0.0, 0.0], &aligned, &cfg);
    ensure!(s.a_g == 1.0 && (s.w_g2 - 0.1f64.sqrt()).abs() < 1e-15, "w_g' = {}", s.w_g2);
    Ok(())
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = norm(v);
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random blend inputs that respect the field contracts.
pub fn random_blend_input(rng: &mut ChaCha8Rng, cfg: &ControllerConfig) -> (Vec3, Fields) {
    let v_u = random_unit(rng).map(|x| x * cfg.speed);
    let fields = Fields {
        v_g: random_unit(rng),
        w_g: rng.gen_range(0.0..cfg.nu),
        v_tr: random_unit(rng),
        w_tr: rng.gen_range(cfg.zeta..1.0),
        goal: Some(0),
    };
    (v_u, fields)
}

/// Invariants that hold for any blend input; returns the first violation.
pub fn blend_invariants(v_u: Vec3, f: &Fields, cfg: &ControllerConfig) -> Result<(), String> {
    let s = blend(v_u, f, cfg);
    if norm(v_u) > 0.0 || norm(f.v_g) > 0.0 || norm(f.v_tr) > 0.0 {
        let n = norm(s.v_r);
        ensure!(n == 0.0 || (n - cfg.speed).abs() < 1e-12, "|v_r| = {n}");
    }
    ensure!(s.w_g2 <= cfg.nu.sqrt() + 1e-15 && s.w_tr2 <= 1.0, "weights {} {}", s.w_g2, s.w_tr2);
    ensure!((0.0..=1.0).contains(&s.a_g) && (0.0..=1.0).contains(&s.a_tr), "agreements out of range");
    let dot = |a: Vec3, b: Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    if dot(v_u, f.v_g) <= 0.0 {
        ensure!(s.w_g2 == 0.0, "opposed goal field kept weight {}", s.w_g2);
    }
    if dot(v_u, f.v_tr) <= 0.0 {
        ensure!(s.w_tr2 == 0.0, "opposed trajectory field kept weight {}", s.w_tr2);
    }
    Ok(())
}

fn perturb(v: Vec3, d: Vec3, s: f64) -> Vec3 {
    [v[0] + s * d[0], v[1] + s * d[1], v[2] + s * d[2]]
}

/// Perturbs every input of `n` random blends along a random direction at
/// step `delta` and `delta / 10`. Linear response shrinks the change in
/// `v_r` tenfold; a jump or a square-root kink would not. Returns the number
/// of inputs whose response failed to shrink by at least 5x.
pub fn blend_discontinuities(n: usize, seed: u64, delta: f64) -> usize {
    let cfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let (v_u, f) = random_blend_input(&mut rng, &cfg);
        let dirs: Vec<Vec3> = (0..3).map(|_| random_unit(&mut rng)).collect();
        let (dw_g, dw_tr) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let shifted = |s: f64| {
            let g = Fields {
                v_g: perturb(f.v_g, dirs[1], s),
                w_g: (f.w_g + s * dw_g).clamp(0.0, cfg.nu),
                v_tr: perturb(f.v_tr, dirs[2], s),
                w_tr: (f.w_tr + s * dw_tr).clamp(cfg.zeta, 1.0),
                goal: f.goal,
            };
            blend(perturb(v_u, dirs[0], s * cfg.speed), &g, &cfg).v_r
        };
        let base = blend(v_u, &f, &cfg).v_r;
        let change = |s: f64| {
            let v = shifted(s);
            norm([v[0] - base[0], v[1] - base[1], v[2] - base[2]])
        };
        let (big, small) = (change(delta), change(delta / 10.0));
        if small > 0.2 * big + 1e-15 {
            bad += 1;
        }
    }
    bad
}
