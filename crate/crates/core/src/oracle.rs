//! Brute-force references for checking the solvers and evaluators. Nothing
//! here calls into the modules it checks.

/// Largest number of grid points `grid_minimax` will visit.
pub const GRID_POINT_CAP: f64 = 2e7;
/// Largest action count `exhaustive_swap_regret` will enumerate.
pub const MAX_SWAP_ACTIONS: usize = 6;

fn column_max(payoff: &[Vec<f64>], x: &[f64]) -> f64 {
    let cols = payoff[0].len();
    let mut best = f64::NEG_INFINITY;
    for b in 0..cols {
        let mut v = 0.0;
        for (row, p) in payoff.iter().zip(x) {
            v += p * row[b];
        }
        best = best.max(v);
    }
    best
}

/// Exact minimum over `s ∈ [0, mass]` of `max_b (c_b + s·d_b)`: the
/// minimizer is an endpoint or a crossing of two lines.
fn min_max_of_lines(c: &[f64], d: &[f64], mass: f64) -> f64 {
    let eval = |s: f64| c.iter().zip(d).map(|(c, d)| c + s * d).fold(f64::NEG_INFINITY, f64::max);
    let mut best = eval(0.0).min(eval(mass));
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let dd = d[i] - d[j];
            if dd != 0.0 {
                let s = (c[j] - c[i]) / dd;
                if s > 0.0 && s < mass {
                    best = best.min(eval(s));
                }
            }
        }
    }
    best
}

/// `min_x max_b Σ_a x_a payoff[a][b]` over the simplex. All but the last two
/// coordinates step on a grid of width `resolution`; the last two are
/// optimized exactly. The result is never below the true value and exceeds
/// it by at most `(rows − 2)·resolution·(max − min entry)`.
pub fn grid_minimax(payoff: &[Vec<f64>], resolution: f64) -> Result<f64, String> {
    let m = payoff.len();
    if m == 0 || payoff[0].is_empty() || payoff.iter().any(|r| r.len() != payoff[0].len()) {
        return Err("payoff must be a nonempty rectangular matrix".into());
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(format!("resolution {resolution} outside (0, 1]"));
    }
    if m == 1 {
        return Ok(column_max(payoff, &[1.0]));
    }
    let steps = (1.0 / resolution).round() as usize;
    let free = m - 2;
    if (steps as f64 + 1.0).powi(free as i32) > GRID_POINT_CAP {
        return Err(format!("{m} rows at resolution {resolution} exceed the grid size cap"));
    }
    let cols = payoff[0].len();
    let mut counts = vec![0usize; free];
    let mut best = f64::INFINITY;
    let mut c = vec![0.0; cols];
    let mut d = vec![0.0; cols];
    loop {
        let used: usize = counts.iter().sum();
        if used <= steps {
            let mass = (steps - used) as f64 / steps as f64;
            // x_{m-2} = s, x_{m-1} = mass − s.
            for b in 0..cols {
                let mut base = 0.0;
                for (a, &k) in counts.iter().enumerate() {
                    base += k as f64 / steps as f64 * payoff[a][b];
                }
                c[b] = base + mass * payoff[m - 1][b];
                d[b] = payoff[m - 2][b] - payoff[m - 1][b];
            }
            best = best.min(min_max_of_lines(&c, &d, mass));
        }
        // Odometer over the free coordinates.
        let mut k = 0;
        loop {
            if k == free {
                return Ok(best);
            }
            counts[k] += 1;
            if counts[k] <= steps && counts.iter().sum::<usize>() <= steps {
                break;
            }
            counts[k] = 0;
            k += 1;
        }
    }
}

fn check_swap_input(num_actions: usize, actions: &[usize], losses: &[Vec<f64>]) -> Result<(), String> {
    if num_actions == 0 || num_actions > MAX_SWAP_ACTIONS {
        return Err(format!("{num_actions} actions is outside 1..={MAX_SWAP_ACTIONS}"));
    }
    if actions.len() != losses.len() {
        return Err("actions and losses differ in length".into());
    }
    if actions.iter().any(|&a| a >= num_actions) || losses.iter().any(|r| r.len() != num_actions) {
        return Err("action index or loss width out of range".into());
    }
    Ok(())
}

fn for_each_rule(k: usize, mut visit: impl FnMut(&[usize])) {
    let mut rule = vec![0usize; k];
    loop {
        visit(&rule);
        let mut i = 0;
        loop {
            if i == k {
                return;
            }
            rule[i] += 1;
            if rule[i] < k {
                break;
            }
            rule[i] = 0;
            i += 1;
        }
    }
}

/// Max over all `k^k` swap rules `φ` of `Σ_i D[i][φ(i)]`, where
/// `D[i][j] = Σ_{t: a^t = i} (r_i − r_j)` accumulates in time order.
pub fn exhaustive_swap_regret(num_actions: usize, actions: &[usize], losses: &[Vec<f64>]) -> Result<f64, String> {
    check_swap_input(num_actions, actions, losses)?;
    let k = num_actions;
    let mut diff = vec![0.0; k * k];
    for (&a, r) in actions.iter().zip(losses) {
        for j in 0..k {
            diff[a * k + j] += r[a] - r[j];
        }
    }
    let mut best = f64::NEG_INFINITY;
    for_each_rule(k, |rule| {
        let mut total = 0.0;
        for (i, &j) in rule.iter().enumerate() {
            total += diff[i * k + j];
        }
        best = best.max(total);
    });
    Ok(best)
}

/// Same maximum, but each rule's regret is summed directly over rounds.
pub fn exhaustive_swap_regret_per_round(num_actions: usize, actions: &[usize], losses: &[Vec<f64>]) -> Result<f64, String> {
    check_swap_input(num_actions, actions, losses)?;
    let mut best = f64::NEG_INFINITY;
    for_each_rule(num_actions, |rule| {
        let total: f64 = actions.iter().zip(losses).map(|(&a, r)| r[a] - r[rule[a]]).sum();
        best = best.max(total);
    });
    Ok(best)
}

/// Outcome of the one-step potential growth check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelescopingCheck {
    /// `E_{a~x}[L^t] / L^{t−1}`.
    pub ratio: f64,
    /// `1 + 4η²C²`.
    pub bound: f64,
    pub passed: bool,
}

/// Expected one-round growth of `Σ_j exp(η R_j)` when the learner plays
/// `mixture`, action `a` yields loss vector `action_losses[a]`, and the
/// round's value bound is `value_bound`. `cum` holds `R^{t−1}`.
pub fn expectation_telescoping_check(
    cum: &[f64],
    eta: f64,
    loss_bound: f64,
    mixture: &[f64],
    action_losses: &[Vec<f64>],
    value_bound: f64,
) -> TelescopingCheck {
    let top = cum.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let raw: Vec<f64> = cum.iter().map(|v| (eta * (v - top)).exp()).collect();
    let z: f64 = raw.iter().sum();
    let mut ratio = 0.0;
    for (p, losses) in mixture.iter().zip(action_losses) {
        if *p == 0.0 {
            continue;
        }
        let inner: f64 = raw.iter().zip(losses).map(|(w, l)| w / z * (eta * (l - value_bound)).exp()).sum();
        ratio += p * inner;
    }
    let bound = 1.0 + 4.0 * eta * eta * loss_bound * loss_bound;
    TelescopingCheck {
        ratio,
        bound,
        passed: ratio <= bound * (1.0 + 1e-12),
    }
}
