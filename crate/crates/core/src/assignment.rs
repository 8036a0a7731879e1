//! Linear assignment on dense square cost matrices.

/// Row-major square cost matrix.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Total cost of `assignment` (row i -> column `assignment[i]`), summed
    /// in row order.
    pub fn cost_of(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// Exact minimum-cost assignment by the shortest augmenting path form of
/// the Hungarian method, O(n³).
pub fn hungarian(c: &CostMatrix) -> Vec<usize> {
    let n = c.n();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            let row = c.row(i0 - 1);
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        out[row_of[j] - 1] = j - 1;
    }
    out
}

/// Approximate minimum-cost assignment by the ε-scaling auction algorithm.
///
/// After a phase at tolerance ε the assignment is within `n · ε` of the
/// optimum. Scaling stops once that bound is at most `rel_tol` times the
/// resulting lower bound on the optimum, so the returned cost exceeds the
/// optimum by at most a factor `1 + rel_tol`. Zero-cost optima stop at an
/// ε floor of `1e-12 · max_cost / n`.
pub fn auction(c: &CostMatrix, rel_tol: f64) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    const SCALE: f64 = 5.0;
    let n = c.n();
    if n <= 1 {
        return (0..n).collect();
    }
    let max_cost = c.data.iter().cloned().fold(0.0f64, f64::max);
    if max_cost <= 0.0 {
        return (0..n).collect();
    }
    let nf = n as f64;
    let eps_floor = 1e-12 * max_cost / nf;
    let mut eps = max_cost / 4.0;
    let mut price = vec![0.0f64; n];
    let mut owner = vec![NONE; n];
    let mut assigned = vec![NONE; n];
    loop {
        owner.fill(NONE);
        assigned.fill(NONE);
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(i) = queue.pop_front() {
            let row = c.row(i);
            let (mut best, mut best_v, mut second_v) = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, (&cost, &p)) in row.iter().zip(&price).enumerate() {
                let val = -cost - p;
                if val > best_v {
                    second_v = best_v;
                    best_v = val;
                    best = j;
                } else if val > second_v {
                    second_v = val;
                }
            }
            price[best] += best_v - second_v + eps;
            let prev = owner[best];
            if prev != NONE {
                assigned[prev] = NONE;
                queue.push_back(prev);
            }
            owner[best] = i;
            assigned[i] = best;
        }
        let gap = nf * eps;
        if gap <= rel_tol * (c.cost_of(&assigned) - gap) || eps <= eps_floor {
            break;
        }
        eps = (eps / SCALE).max(eps_floor);
    }
    assigned
}

/// Exact minimum by enumerating every permutation. Only for tiny `n`.
pub fn brute_force_min(c: &CostMatrix) -> f64 {
    fn rec(c: &CostMatrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let n = c.n();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                rec(c, row + 1, used, acc + c.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut used = vec![false; c.n()];
    rec(c, 0, &mut used, 0.0, &mut best);
    if c.n() == 0 {
        0.0
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> CostMatrix {
        let mut rng = seeded_rng(seed, "cost");
        let vals: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
        CostMatrix::from_fn(n, |i, j| vals[i * n + j])
    }

    fn is_permutation(a: &[usize]) -> bool {
        let mut seen = vec![false; a.len()];
        a.iter().all(|&j| j < a.len() && !std::mem::replace(&mut seen[j], true))
    }

    #[test]
    fn hungarian_matches_brute_force() {
        for seed in 0..50 {
            let n = 1 + (seed as usize % 7);
            let c = random(n, seed);
            let a = hungarian(&c);
            assert!(is_permutation(&a));
            assert!((c.cost_of(&a) - brute_force_min(&c)).abs() < 1e-9);
        }
    }

    #[test]
    fn auction_is_close_to_exact() {
        for seed in 0..5 {
            let c = random(80, seed);
            let exact = c.cost_of(&hungarian(&c));
            let a = auction(&c, 1e-4);
            assert!(is_permutation(&a));
            let approx = c.cost_of(&a);
            assert!(approx >= exact - 1e-9);
            assert!(approx <= exact * (1.0 + 1e-4) + 1e-9);
        }
    }

    #[test]
    fn degenerate_sizes() {
        let c = CostMatrix::from_fn(0, |_, _| 0.0);
        assert!(hungarian(&c).is_empty());
        assert!(auction(&c, 1e-3).is_empty());
        let c = CostMatrix::from_fn(1, |_, _| 3.0);
        assert_eq!(hungarian(&c), vec![0]);
        assert_eq!(auction(&c, 1e-3), vec![0]);
    }
}
