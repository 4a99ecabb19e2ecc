//! Exact discrete optimal transport by linear programming, used as an
//! independent oracle for the one-dimensional quantile formulas.
//!
//! The Monge-Kantorovich problem between two finitely supported measures is a
//! min-cost flow on the complete bipartite graph. It is solved with successive
//! shortest paths (Bellman-Ford on the residual graph), which terminates with an
//! optimal coupling because every augmentation saturates a supply, a demand or a
//! reverse arc, and the residual graph never contains a negative cycle.

use crate::error::{Error, Result};
use crate::measure::DiscreteFiber;

/// Maximum number of atoms per marginal accepted by the oracle.
pub const LP_ATOM_CAP: usize = 50;

const FLOW_EPS: f64 = 1e-15;

/// Optimal coupling returned by [`transport_lp`].
#[derive(Debug, Clone)]
pub struct Coupling {
    pub cost: f64,
    /// `plan[i][j]` is the mass moved from supply atom `i` to demand atom `j`.
    pub plan: Vec<Vec<f64>>,
}

/// Minimizes `sum_ij pi_ij c(i, j)` over couplings of `supply` and `demand`.
pub fn transport_lp(
    supply: &[f64],
    demand: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<Coupling> {
    let (m, n) = (supply.len(), demand.len());
    if m > LP_ATOM_CAP || n > LP_ATOM_CAP {
        return Err(Error::SizeCap {
            atoms: m.max(n),
            cap: LP_ATOM_CAP,
        });
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter("empty marginal".into()));
    }
    let (sa, sb): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (sa - sb).abs() > 1e-12 || supply.iter().chain(demand).any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "marginals must be nonnegative with equal mass ({sa} vs {sb})"
        )));
    }
    let c: Vec<Vec<f64>> = (0..m).map(|i| (0..n).map(|j| cost(i, j)).collect()).collect();
    // relaxation threshold above the roundoff of path sums
    let cmax = c.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
    let relax_eps = 1e-12 * cmax.max(1e-300);
    let mut flow = vec![vec![0.0; n]; m];
    let mut rem_supply = supply.to_vec();
    let mut rem_demand = demand.to_vec();

    // nodes 0..m are supply atoms, m..m+n demand atoms
    let v = m + n;
    let max_aug = 10 * (m + n) * (m + n) + 100;
    for _ in 0..max_aug {
        let active = rem_supply.iter().any(|&s| s > FLOW_EPS);
        if !active || rem_demand.iter().all(|&d| d <= FLOW_EPS) {
            break;
        }
        let mut dist = vec![f64::INFINITY; v];
        let mut pred = vec![usize::MAX; v];
        for i in 0..m {
            if rem_supply[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..v {
            let mut changed = false;
            for i in 0..m {
                if dist[i].is_finite() {
                    for j in 0..n {
                        let d = dist[i] + c[i][j];
                        if d < dist[m + j] - relax_eps {
                            dist[m + j] = d;
                            pred[m + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if dist[m + j].is_finite() {
                    for i in 0..m {
                        if flow[i][j] > FLOW_EPS {
                            let d = dist[m + j] - c[i][j];
                            if d < dist[i] - relax_eps {
                                dist[i] = d;
                                pred[i] = m + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let target = (0..n)
            .filter(|&j| rem_demand[j] > FLOW_EPS && dist[m + j].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(jt) = target else { break };

        // walk back to the source, collecting the bottleneck
        let mut delta = rem_demand[jt];
        let mut node = m + jt;
        let mut path = Vec::new();
        loop {
            let p = pred[node];
            if node >= m {
                path.push((p, node - m, true));
            } else if p == usize::MAX {
                delta = delta.min(rem_supply[node]);
                break;
            } else {
                delta = delta.min(flow[node][p - m]);
                path.push((node, p - m, false));
            }
            if p == usize::MAX {
                break;
            }
            node = p;
            if path.len() > 2 * v {
                return Err(Error::InvalidParameter("cycle in shortest-path tree".into()));
            }
        }
        let source = node;
        for &(i, j, forward) in &path {
            if forward {
                flow[i][j] += delta;
            } else {
                flow[i][j] -= delta;
            }
        }
        rem_supply[source] -= delta;
        rem_demand[jt] -= delta;
    }
    let cost = (0..m)
        .map(|i| (0..n).map(|j| flow[i][j] * c[i][j]).sum::<f64>())
        .sum();
    Ok(Coupling { cost, plan: flow })
}

/// `W_2` between two discrete fibers through the coupling LP.
pub fn w2_lp_oracle(a: &DiscreteFiber, b: &DiscreteFiber) -> Result<f64> {
    let (pa, pb) = (a.atoms(), b.atoms());
    let supply: Vec<f64> = pa.iter().map(|x| x.1).collect();
    let demand: Vec<f64> = pb.iter().map(|x| x.1).collect();
    let sol = transport_lp(&supply, &demand, |i, j| (pa[i].0 - pb[j].0).powi(2))?;
    Ok(sol.cost.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_diracs() {
        let d = w2_lp_oracle(&DiscreteFiber::dirac(0.5), &DiscreteFiber::dirac(-1.5)).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
    }

    #[test]
    fn equal_measures() {
        let a = DiscreteFiber::new(vec![(0.0, 0.25), (1.0, 0.5), (3.0, 0.25)]).unwrap();
        assert!(w2_lp_oracle(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn plan_has_the_right_marginals() {
        let s = [0.2, 0.3, 0.5];
        let d = [0.6, 0.4];
        let sol = transport_lp(&s, &d, |i, j| ((i as f64) - 2.0 * j as f64).abs()).unwrap();
        for (i, &si) in s.iter().enumerate() {
            assert!((sol.plan[i].iter().sum::<f64>() - si).abs() < 1e-14);
        }
        for (j, &dj) in d.iter().enumerate() {
            assert!((sol.plan.iter().map(|r| r[j]).sum::<f64>() - dj).abs() < 1e-14);
        }
    }

    #[test]
    fn hand_solved_instance() {
        // supply {0: .5, 1: .5}, demand {0: .5, 1: .5}, cost favours the swap
        let sol = transport_lp(&[0.5, 0.5], &[0.5, 0.5], |i, j| {
            [[3.0, 1.0], [1.0, 3.0]][i][j]
        })
        .unwrap();
        assert!((sol.cost - 1.0).abs() < 1e-15);
    }

    #[test]
    fn size_cap() {
        let big = vec![1.0 / 51.0; 51];
        assert!(matches!(
            transport_lp(&big, &big, |_, _| 0.0),
            Err(Error::SizeCap { .. })
        ));
    }
}
