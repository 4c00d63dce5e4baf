use crate::error::{OracleError, Result};

/// Normalization tolerance for every table in the crate.
pub const TOL: f64 = 1e-12;

fn validate(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(OracleError::Argument("empty probability table".into()));
    }
    if let Some((index, &value)) = probs.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(OracleError::Negative { index, value });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > TOL {
        return Err(OracleError::Unnormalized { sum });
    }
    Ok(())
}

/// Anything that is a normalized table over a fixed layout.
pub trait Table {
    fn probs(&self) -> &[f64];
    fn dims(&self) -> Vec<usize>;
}

pub(crate) fn same_layout<T: Table>(p: &T, q: &T) -> Result<()> {
    if p.dims() != q.dims() {
        return Err(OracleError::ShapeMismatch { left: p.dims(), right: q.dims() });
    }
    Ok(())
}

/// Probability vector over a finite alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDist {
    probs: Vec<f64>,
}

impl FiniteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate(&probs)?;
        Ok(FiniteDist { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl Table for FiniteDist {
    fn probs(&self) -> &[f64] {
        &self.probs
    }
    fn dims(&self) -> Vec<usize> {
        vec![self.probs.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Axis {
    pub name: String,
    pub size: usize,
}

impl Axis {
    pub fn new(name: &str, size: usize) -> Self {
        Axis { name: name.to_string(), size }
    }
}

/// Joint distribution over named finite axes, stored row-major in axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteJoint {
    axes: Vec<Axis>,
    table: Vec<f64>,
}

impl FiniteJoint {
    pub fn new(axes: Vec<Axis>, table: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.size == 0) {
            return Err(OracleError::Argument("every axis needs a positive size".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(OracleError::Argument(format!("duplicate axis `{}`", a.name)));
            }
        }
        let cells: usize = axes.iter().map(|a| a.size).product();
        if cells != table.len() {
            return Err(OracleError::ShapeMismatch { left: axes.iter().map(|a| a.size).collect(), right: vec![table.len()] });
        }
        validate(&table)?;
        Ok(FiniteJoint { axes, table })
    }

    /// Joint from a row-major function of the per-axis indices; the result
    /// must already be normalized.
    pub fn from_fn(axes: Vec<Axis>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let sizes: Vec<usize> = axes.iter().map(|a| a.size).collect();
        let cells = sizes.iter().product();
        let mut idx = vec![0usize; sizes.len()];
        let mut table = Vec::with_capacity(cells);
        for _ in 0..cells {
            table.push(f(&idx));
            increment(&mut idx, &sizes);
        }
        Self::new(axes, table)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn axis_index(&self, name: &str) -> Result<usize> {
        self.axes.iter().position(|a| a.name == name).ok_or_else(|| OracleError::UnknownAxis(name.to_string()))
    }

    pub fn size_of(&self, name: &str) -> Result<usize> {
        Ok(self.axes[self.axis_index(name)?].size)
    }

    pub fn names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.name.as_str()).collect()
    }

    /// Sum out every axis not in `keep`. Kept axes retain their original order.
    pub fn marginalize(&self, keep: &[&str]) -> Result<FiniteJoint> {
        if keep.is_empty() {
            return Err(OracleError::Argument("marginalize needs at least one axis to keep".into()));
        }
        let mut kept = Vec::new();
        for name in keep {
            let i = self.axis_index(name)?;
            if kept.contains(&i) {
                return Err(OracleError::Argument(format!("axis `{name}` listed twice")));
            }
            kept.push(i);
        }
        kept.sort_unstable();
        let sizes: Vec<usize> = self.axes.iter().map(|a| a.size).collect();
        let out_axes: Vec<Axis> = kept.iter().map(|&i| self.axes[i].clone()).collect();
        let mut out = vec![0.0; out_axes.iter().map(|a| a.size).product()];
        let mut idx = vec![0usize; sizes.len()];
        for &p in &self.table {
            let mut flat = 0;
            for &k in &kept {
                flat = flat * sizes[k] + idx[k];
            }
            out[flat] += p;
            increment(&mut idx, &sizes);
        }
        Ok(FiniteJoint { axes: out_axes, table: out })
    }

    /// Value at per-axis indices given in axis order.
    pub fn at(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (a, &i) in self.axes.iter().zip(idx) {
            flat = flat * a.size + i;
        }
        self.table[flat]
    }

    pub fn to_dist(&self) -> FiniteDist {
        FiniteDist { probs: self.table.clone() }
    }
}

impl Table for FiniteJoint {
    fn probs(&self) -> &[f64] {
        &self.table
    }
    fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.size).collect()
    }
}

pub(crate) fn increment(idx: &mut [usize], sizes: &[usize]) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < sizes[d] {
            return;
        }
        idx[d] = 0;
    }
}

/// Shannon entropy in nats; zero cells contribute nothing.
pub fn entropy<T: Table>(t: &T) -> f64 {
    t.probs().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

fn pair_table(j: &FiniteJoint, target: &str, given: &[&str]) -> Result<(FiniteJoint, usize)> {
    if given.contains(&target) {
        return Err(OracleError::Argument(format!("axis `{target}` is both target and condition")));
    }
    let mut keep: Vec<&str> = given.to_vec();
    keep.push(target);
    let m = j.marginalize(&keep)?;
    let t = m.axis_index(target)?;
    Ok((m, t))
}

/// `H(target | given) = -sum j(t, g) ln j(t | g)` in nats, by direct enumeration.
pub fn conditional_entropy(j: &FiniteJoint, target: &str, given: &[&str]) -> Result<f64> {
    let (m, t) = pair_table(j, target, given)?;
    if given.is_empty() {
        return Ok(entropy(&m));
    }
    // Mass of each conditioning cell, indexed by the cell with the target index zeroed.
    let sizes = m.dims();
    let mut cond = std::collections::HashMap::new();
    let mut idx = vec![0usize; sizes.len()];
    let mut keys = Vec::with_capacity(m.table.len());
    for &p in &m.table {
        let mut key = idx.clone();
        key[t] = 0;
        *cond.entry(key.clone()).or_insert(0.0) += p;
        keys.push(key);
        increment(&mut idx, &sizes);
    }
    let mut h = 0.0;
    for (&p, key) in m.table.iter().zip(&keys) {
        let pg = cond[key];
        if p > 0.0 && pg > 0.0 {
            h -= p * (p / pg).ln();
        }
    }
    Ok(h.max(0.0))
}

/// Conditional table `p(target | given)` with one normalized row per value of `given`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditional {
    pub target: Axis,
    pub given: Axis,
    /// Row-major `[given][target]`.
    rows: Vec<f64>,
}

impl Conditional {
    pub fn new(target: Axis, given: Axis, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != target.size * given.size {
            return Err(OracleError::ShapeMismatch { left: vec![given.size, target.size], right: vec![rows.len()] });
        }
        for (g, row) in rows.chunks(target.size).enumerate() {
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0)) {
                return Err(OracleError::Argument(format!("row {g} has negative entry {v}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > TOL {
                return Err(OracleError::Argument(format!("row {g} of p({}|{}) sums to {sum}", target.name, given.name)));
            }
        }
        Ok(Conditional { target, given, rows })
    }

    /// `j(target | given)` from a joint; conditioning cells of zero mass get a uniform row.
    pub fn from_joint(j: &FiniteJoint, target: &str, given: &str) -> Result<Self> {
        let m = j.marginalize(&[target, given])?;
        let (ts, gs) = (m.size_of(target)?, m.size_of(given)?);
        let target_first = m.axis_index(target)? == 0;
        let at = |t: usize, g: usize| if target_first { m.table[t * gs + g] } else { m.table[g * ts + t] };
        let mut rows = Vec::with_capacity(ts * gs);
        for g in 0..gs {
            let mass: f64 = (0..ts).map(|t| at(t, g)).sum();
            for t in 0..ts {
                rows.push(if mass > 0.0 { at(t, g) / mass } else { 1.0 / ts as f64 });
            }
        }
        // Renormalize rows exactly so they pass the row check after division.
        for row in rows.chunks_mut(ts) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Conditional::new(Axis::new(target, ts), Axis::new(given, gs), rows)
    }

    pub fn prob(&self, target: usize, given: usize) -> f64 {
        self.rows[given * self.target.size + target]
    }

    pub fn row(&self, given: usize) -> &[f64] {
        &self.rows[given * self.target.size..(given + 1) * self.target.size]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xz(table: Vec<f64>) -> FiniteJoint {
        FiniteJoint::new(vec![Axis::new("x", 2), Axis::new("z", 2)], table).unwrap()
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(matches!(FiniteDist::new(vec![0.5, 0.6]), Err(OracleError::Unnormalized { .. })));
        assert!(matches!(FiniteDist::new(vec![1.5, -0.5]), Err(OracleError::Negative { index: 1, .. })));
        assert!(FiniteJoint::new(vec![Axis::new("x", 2)], vec![1.0]).is_err());
    }

    #[test]
    fn uniform_marginal() {
        let j = xz(vec![0.25; 4]);
        assert_eq!(j.marginalize(&["x"]).unwrap().table(), &[0.5, 0.5]);
        assert!(matches!(j.marginalize(&["y"]), Err(OracleError::UnknownAxis(_))));
    }

    #[test]
    fn marginal_keeps_axis_order() {
        let j = FiniteJoint::from_fn(vec![Axis::new("a", 2), Axis::new("b", 3), Axis::new("c", 2)], |_| 1.0 / 12.0).unwrap();
        assert_eq!(j.marginalize(&["c", "a"]).unwrap().names(), vec!["a", "c"]);
    }

    #[test]
    fn skewed_marginal() {
        let j = xz(vec![0.4, 0.1, 0.1, 0.4]);
        let m = j.marginalize(&["x"]).unwrap();
        assert!((m.table()[0] - 0.5).abs() < 1e-15 && (m.table()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_entropy_cases() {
        let h = conditional_entropy(&xz(vec![0.25; 4]), "x", &["z"]).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        let h = conditional_entropy(&xz(vec![0.5, 0.0, 0.0, 0.5]), "x", &["z"]).unwrap();
        assert_eq!(h, 0.0);
        assert!(conditional_entropy(&xz(vec![0.25; 4]), "x", &["x"]).is_err());
    }

    #[test]
    fn conditional_rows_checked() {
        let bad = Conditional::new(Axis::new("x", 2), Axis::new("z", 2), vec![0.5, 0.5, 0.6, 0.6]);
        assert!(matches!(bad, Err(OracleError::Argument(_))));
        let c = Conditional::from_joint(&xz(vec![0.4, 0.1, 0.1, 0.4]), "x", "z").unwrap();
        assert!((c.prob(0, 0) - 0.8).abs() < 1e-15);
        assert!((c.prob(1, 0) - 0.2).abs() < 1e-15);
    }
}
