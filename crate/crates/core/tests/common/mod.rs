//! Reference implementations shared by the integration tests. They are
//! written against the problem statements, not the library's internals.

#![allow(dead_code)]

use teamsim::lp::{LpBuilder, LpStatus, Sense, VarKind};
use teamsim::mpc::OcpSpec;

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|r| (0..cols).map(|j| r.iter().zip(b).map(|(x, row)| x * row[j]).sum()).collect())
        .collect()
}

/// Finite-horizon problem in the inputs alone: `x_t = A^t x0 + Σ_s A^(t−1−s) B u_s`.
struct Condensed {
    lp: LpBuilder,
    /// `u[t][j]`
    u: Vec<Vec<usize>>,
    /// Epigraph variables and their weights; the builder starts cost-free.
    cost: Vec<(usize, f64)>,
}

fn condensed(spec: &OcpSpec, x0: &[f64]) -> Condensed {
    let a = spec.model.a.to_rows();
    let b = spec.model.b.to_rows();
    let (n, m, t_len) = (a.len(), b[0].len(), spec.horizon);
    let xref = spec.cost.state_ref.clone().unwrap_or_else(|| spec.terminal.state.clone());
    let uref = spec.cost.input_ref.clone().unwrap_or_else(|| spec.terminal.input.clone());
    let mut lp = LpBuilder::new();
    let mut cost = Vec::new();
    let u: Vec<Vec<usize>> = (0..t_len).map(|_| (0..m).map(|_| lp.var(VarKind::Free, 0.0)).collect()).collect();

    // Affine state map: constant part plus a coefficient on every u[s][j].
    let mut a_pow = vec![(0..n).map(|i| (0..n).map(|k| f64::from(u8::from(i == k))).collect::<Vec<f64>>()).collect::<Vec<_>>()];
    for t in 1..=t_len {
        a_pow.push(mat_mul(&a, &a_pow[t - 1]));
    }
    let state = |t: usize| -> (Vec<f64>, Vec<Vec<(usize, f64)>>) {
        let konst = mat_vec(&a_pow[t], x0);
        let mut terms = vec![Vec::new(); n];
        for s in 0..t {
            let g = mat_mul(&a_pow[t - 1 - s], &b);
            for (i, row) in g.iter().enumerate() {
                for (j, &c) in row.iter().enumerate() {
                    if c != 0.0 {
                        terms[i].push((u[s][j], c));
                    }
                }
            }
        }
        (konst, terms)
    };

    for t in 0..t_len {
        let (konst, terms) = state(t);
        for i in 0..n {
            let q = spec.cost.state_weights[i];
            if q == 0.0 {
                continue;
            }
            let e = lp.var(VarKind::NonNeg, 0.0);
            cost.push((e, q));
            let mut up = terms[i].clone();
            up.push((e, -1.0));
            lp.constraint(up, Sense::Le, xref[i] - konst[i]);
            let mut down: Vec<(usize, f64)> = terms[i].iter().map(|&(v, c)| (v, -c)).collect();
            down.push((e, -1.0));
            lp.constraint(down, Sense::Le, konst[i] - xref[i]);
        }
        for j in 0..m {
            let r = spec.cost.input_weights[j];
            if r > 0.0 {
                let e = lp.var(VarKind::NonNeg, 0.0);
                cost.push((e, r));
                lp.constraint(vec![(u[t][j], 1.0), (e, -1.0)], Sense::Le, uref[j]);
                lp.constraint(vec![(u[t][j], -1.0), (e, -1.0)], Sense::Le, -uref[j]);
            }
            if let Some(set) = &spec.input_set {
                for (row, g) in set.h.iter().zip(&set.g) {
                    lp.constraint(row.iter().enumerate().map(|(k, &c)| (u[t][k], c)).collect(), Sense::Le, *g);
                }
            }
        }
    }
    let (konst, terms) = state(t_len);
    for i in 0..n {
        lp.constraint(terms[i].clone(), Sense::Eq, spec.terminal.state[i] - konst[i]);
    }
    Condensed { lp, u, cost }
}

/// First optimal input from `x0`, the optimal cost, and the width of the set
/// of first inputs that attain that cost (zero when the optimum is unique in
/// its first move).
pub fn condensed_first_input(spec: &OcpSpec, x0: &[f64]) -> (Vec<f64>, f64, f64) {
    let mut c = condensed(spec, x0);
    for &(v, w) in &c.cost {
        c.lp.add_cost(v, w);
    }
    let sol = c.lp.solve().expect("oracle LP");
    assert_eq!(sol.status, LpStatus::Optimal, "oracle LP not optimal");
    let u0: Vec<f64> = c.u[0].iter().map(|&v| sol.values[v]).collect();
    let mut width: f64 = 0.0;
    for j in 0..u0.len() {
        let mut ext = [0.0; 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut probe = condensed(spec, x0);
            probe.lp.constraint(probe.cost.clone(), Sense::Le, sol.objective + 1e-10);
            probe.lp.add_cost(probe.u[0][j], sign);
            let s = probe.lp.solve().expect("probe LP");
            assert_eq!(s.status, LpStatus::Optimal);
            ext[k] = s.values[probe.u[0][j]];
        }
        width = width.max(ext[1] - ext[0]);
    }
    (u0, sol.objective, width)
}

/// Centralized receding-horizon closed loop: re-solve from the current
/// state, apply the first input, repeat. Returns `steps + 1` states and the
/// widest first-input ambiguity met on the way.
pub fn receding_horizon(spec: &OcpSpec, steps: usize) -> (Vec<Vec<f64>>, f64) {
    let a = spec.model.a.to_rows();
    let b = spec.model.b.to_rows();
    let mut x = spec.model.x0.clone();
    let mut out = vec![x.clone()];
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let (u, _, width) = condensed_first_input(spec, &x);
        worst = worst.max(width);
        x = mat_vec(&a, &x).iter().zip(mat_vec(&b, &u)).map(|(p, q)| p + q).collect();
        out.push(x.clone());
    }
    (out, worst)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn seg(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let s = if l2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) };
    (p[0] - a[0] - s * d[0]).hypot(p[1] - a[1] - s * d[1])
}

/// Distance to the convex hull of `pts`: zero inside any triangle of input
/// points, otherwise the nearest point lies on a segment between two of them.
pub fn brute_hull_distance(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    for a in pts {
        for b in pts {
            for c in pts {
                let area = cross(*a, *b, *c);
                if area.abs() < 1e-12 {
                    continue;
                }
                let l1 = cross(p, *b, *c) / area;
                let l2 = cross(*a, p, *c) / area;
                if l1 >= 0.0 && l2 >= 0.0 && 1.0 - l1 - l2 >= 0.0 {
                    return 0.0;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    for a in pts {
        for b in pts {
            best = best.min(seg(p, *a, *b));
        }
    }
    best
}

/// `Σ over pairs (‖p_i − p_j‖ − d_ij)²`.
pub fn formation_error(pos: &[[f64; 2]], pairs: &[(usize, usize, f64)]) -> f64 {
    pairs
        .iter()
        .map(|&(i, j, d)| {
            let l = (pos[i][0] - pos[j][0]).hypot(pos[i][1] - pos[j][1]);
            (l - d) * (l - d)
        })
        .sum()
}

/// All permutations by recursion; the minimum-cost one is the assignment optimum.
pub fn brute_assignment(c: &[Vec<f64>]) -> f64 {
    fn go(c: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == c.len() {
            *best = best.min(acc);
            return;
        }
        for k in 0..c.len() {
            if !used[k] {
                used[k] = true;
                go(c, row + 1, used, acc + c[row][k], best);
                used[k] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.len()], 0.0, &mut best);
    best
}
