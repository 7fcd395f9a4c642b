//! Scalar reverse-mode automatic differentiation.
//!
//! Loss functions are recorded on a [`Tape`] whose leaves are the network's
//! head outputs; the dense layers below them are differentiated by hand in
//! [`crate::policy`].

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Wengert list of scalar nodes. Each node stores the partial derivatives
/// with respect to its parents.
#[derive(Debug, Clone)]
pub struct Tape {
    vals: Vec<f64>,
    edges: Vec<(usize, f64)>,
    /// Node `k` owns `edges[offsets[k]..offsets[k + 1]]`.
    offsets: Vec<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Numerically stable `ln Σ exp(z)`; shared by the tape and plain forward
/// code so both produce identical bits.
pub fn logsumexp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            vals: Vec::new(),
            edges: Vec::new(),
            offsets: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    fn push(&mut self, val: f64, parents: impl IntoIterator<Item = (Var, f64)>) -> Var {
        self.edges.extend(parents.into_iter().map(|(v, d)| (v.0, d)));
        self.offsets.push(self.edges.len());
        self.vals.push(val);
        Var(self.vals.len() - 1)
    }

    pub fn leaf(&mut self, val: f64) -> Var {
        self.push(val, [])
    }

    pub fn constant(&mut self, val: f64) -> Var {
        self.push(val, [])
    }

    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.0]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(self.vals[a.0] + self.vals[b.0], [(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(self.vals[a.0] - self.vals[b.0], [(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.vals[a.0], self.vals[b.0]);
        self.push(x * y, [(a, y), (b, x)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(self.vals[a.0] * c, [(a, c)])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.push(self.vals[a.0] + c, [(a, 1.0)])
    }

    /// `c - a`.
    pub fn rsub_const(&mut self, c: f64, a: Var) -> Var {
        self.push(c - self.vals[a.0], [(a, -1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.vals[a.0].exp();
        self.push(y, [(a, y)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.vals[a.0];
        self.push(x.ln(), [(a, 1.0 / x)])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.vals[a.0];
        self.push(x * x, [(a, 2.0 * x)])
    }

    /// `a^e` for a constant exponent; `e = 0` yields the constant 1.
    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        if e == 0.0 {
            return self.constant(1.0);
        }
        let x = self.vals[a.0];
        let d = if e == 1.0 { 1.0 } else { e * x.powf(e - 1.0) };
        self.push(x.powf(e), [(a, d)])
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let s = xs.iter().map(|v| self.vals[v.0]).sum();
        self.push(s, xs.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>())
    }

    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        let z: Vec<f64> = xs.iter().map(|v| self.vals[v.0]).collect();
        let lse = logsumexp(&z);
        let parents: Vec<(Var, f64)> = xs
            .iter()
            .zip(&z)
            .map(|(v, zi)| (*v, (zi - lse).exp()))
            .collect();
        self.push(lse, parents)
    }

    /// Log-softmax of `xs`, one node per entry.
    pub fn log_softmax(&mut self, xs: &[Var]) -> Vec<Var> {
        let lse = self.logsumexp(xs);
        xs.iter().map(|x| self.sub(*x, lse)).collect()
    }

    /// Minimum; ties select `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        if self.vals[a.0] <= self.vals[b.0] {
            self.push(self.vals[a.0], [(a, 1.0)])
        } else {
            self.push(self.vals[b.0], [(b, 1.0)])
        }
    }

    /// Clamp to `[lo, hi]`; the gradient passes through on the closed interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = self.vals[a.0];
        if x < lo {
            self.push(lo, [(a, 0.0)])
        } else if x > hi {
            self.push(hi, [(a, 0.0)])
        } else {
            self.push(x, [(a, 1.0)])
        }
    }

    /// Adjoints of every node with respect to `out`.
    pub fn backward(&self, out: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.vals.len()];
        adj[out.0] = 1.0;
        for k in (0..=out.0).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &self.edges[self.offsets[k]..self.offsets[k + 1]] {
                adj[p] += a * d;
            }
        }
        adj
    }
}
