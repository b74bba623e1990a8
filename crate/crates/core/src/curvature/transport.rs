//! Exact discrete optimal transport as a min-cost flow.
//!
//! The transportation problem `min Σ c_st f_st` s.t. row sums `mu`, column
//! sums `nu`, `f >= 0` is solved by successive shortest augmenting paths
//! (Bellman-Ford on the residual network, so negative reverse arcs are fine).
//! Each augmentation saturates at least one arc; with integer-valued masses
//! every intermediate quantity is an exact integer in f64.

use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

struct FlowNet {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl FlowNet {
    fn new(n: usize) -> Self {
        Self {
            arcs: Vec::new(),
            out: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.out[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.out[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    /// Shortest residual path by Bellman-Ford; returns the arc used to
    /// reach each node.
    fn shortest_path(&self, src: usize, dst: usize) -> Option<Vec<Option<usize>>> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        dist[src] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for v in 0..n {
                if !dist[v].is_finite() {
                    continue;
                }
                for &a in &self.out[v] {
                    let arc = &self.arcs[a];
                    if arc.cap > EPS && dist[v] + arc.cost < dist[arc.to] - 1e-12 {
                        dist[arc.to] = dist[v] + arc.cost;
                        via[arc.to] = Some(a);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist[dst].is_finite().then_some(via)
    }
}

/// Optimal transport cost between `mu` and `nu` under `cost[s][t]`.
///
/// Masses need not be normalized but must have equal totals (within 1e-9).
pub fn transport_cost(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> Result<f64> {
    if cost.len() != mu.len() || cost.iter().any(|row| row.len() != nu.len()) {
        return Err(Error::Shape(format!(
            "cost matrix must be {}x{}",
            mu.len(),
            nu.len()
        )));
    }
    if mu.iter().chain(nu).any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::Infeasible("masses must be finite and nonnegative".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Infeasible("costs must be finite and nonnegative".into()));
    }
    let (ms, mt): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (ms - mt).abs() > 1e-9 {
        return Err(Error::Infeasible(format!("mass mismatch: {ms} vs {mt}")));
    }
    let (ns, nt) = (mu.len(), nu.len());
    let src = 0;
    let sink = ns + nt + 1;
    let mut net = FlowNet::new(ns + nt + 2);
    for (s, &m) in mu.iter().enumerate() {
        net.add(src, 1 + s, m, 0.0);
    }
    for (t, &m) in nu.iter().enumerate() {
        net.add(1 + ns + t, sink, m, 0.0);
    }
    for (s, row) in cost.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            net.add(1 + s, 1 + ns + t, f64::INFINITY, c);
        }
    }

    let target = ms.min(mt);
    let mut sent = 0.0;
    let mut total = 0.0;
    while target - sent > EPS {
        let Some(via) = net.shortest_path(src, sink) else {
            break;
        };
        let mut bottleneck = target - sent;
        let mut v = sink;
        while v != src {
            let a = via[v].expect("path arc");
            bottleneck = bottleneck.min(net.arcs[a].cap);
            v = net.arcs[a ^ 1].to;
        }
        let mut v = sink;
        while v != src {
            let a = via[v].expect("path arc");
            net.arcs[a].cap -= bottleneck;
            net.arcs[a ^ 1].cap += bottleneck;
            total += bottleneck * net.arcs[a].cost;
            v = net.arcs[a ^ 1].to;
        }
        sent += bottleneck;
    }
    if target - sent > 1e-9 {
        return Err(Error::Infeasible(format!("only {sent} of {target} units routed")));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transport_is_free() {
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(transport_cost(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap(), 0.0);
    }

    #[test]
    fn single_pair() {
        assert_eq!(transport_cost(&[1.0], &[1.0], &[vec![2.0]]).unwrap(), 2.0);
    }

    #[test]
    fn rerouting_through_reverse_arcs() {
        // Greedy would send s0->t0 (cost 1) then s1->t1 (cost 10); optimum 2+2.
        let c = vec![vec![1.0, 2.0], vec![2.0, 10.0]];
        let v = transport_cost(&[1.0, 1.0], &[1.0, 1.0], &c).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn mass_mismatch_is_infeasible() {
        let c = vec![vec![1.0]];
        assert!(matches!(transport_cost(&[1.0], &[0.9], &c), Err(Error::Infeasible(_))));
    }
}
