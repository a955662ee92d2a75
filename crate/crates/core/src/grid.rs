//! Piecewise-constant functions on a uniform partition of `[0, 1]`.
//!
//! `GridFunction` is the discrete stand-in for the bounded-variation
//! functions the operators act on: densities, observables, and the
//! decomposition tables all live here. The value in cell `i` represents
//! the function on `[i/N, (i+1)/N)`; quadrature against Lebesgue measure
//! is the plain mean of cell values.

/// A real function on `[0, 1]`, constant on each of `N` equal cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    /// Wraps raw cell values. Requires at least two cells.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.len() >= 2, "grid needs at least 2 cells");
        Self { values }
    }

    pub fn constant(n_cells: usize, value: f64) -> Self {
        Self::new(vec![value; n_cells])
    }

    pub fn one(n_cells: usize) -> Self {
        Self::constant(n_cells, 1.0)
    }

    /// Samples `f` at cell midpoints.
    pub fn from_fn(n_cells: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = n_cells as f64;
        Self::new((0..n_cells).map(|i| f((i as f64 + 0.5) / n)).collect())
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.values.len() as f64
    }

    /// Index of the cell containing `x` (cells are right-open; `x = 1`
    /// belongs to the last cell).
    pub fn cell_of(&self, x: f64) -> usize {
        let n = self.values.len();
        ((x * n as f64) as usize).min(n - 1)
    }

    /// `∫ f dm`: the mean of the cell values.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `∫ f g dm` for two functions on the same grid.
    pub fn dot_measure(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.n_cells(), other.n_cells(), "grid size mismatch");
        let n = self.values.len() as f64;
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n
    }

    /// Discrete total variation `Σ |v_{i+1} - v_i|`.
    pub fn bv_seminorm(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Discrete BV norm: seminorm plus the L1 part `Σ |v_i| / N`.
    pub fn bv_norm(&self) -> f64 {
        self.bv_seminorm() + self.mean_abs()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ |f| dm`.
    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Piecewise-constant evaluation: the value of the cell containing `x`.
    pub fn eval_cell(&self, x: f64) -> f64 {
        self.values[self.cell_of(x)]
    }

    /// Linear interpolation between neighboring cell values, anchored at
    /// cell midpoints and clamped at both ends.
    pub fn eval_interp(&self, x: f64) -> f64 {
        let n = self.values.len();
        let t = x * n as f64 - 0.5;
        if t <= 0.0 {
            return self.values[0];
        }
        let i0 = t.floor() as usize;
        if i0 + 1 >= n {
            return self.values[n - 1];
        }
        let w = t - i0 as f64;
        self.values[i0] * (1.0 - w) + self.values[i0 + 1] * w
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.n_cells(), other.n_cells(), "grid size mismatch");
        GridFunction::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.n_cells(), other.n_cells(), "grid size mismatch");
        GridFunction::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Pointwise (cellwise) product.
    pub fn mul(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.n_cells(), other.n_cells(), "grid size mismatch");
        GridFunction::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction::new(self.values.iter().map(|v| v * c).collect())
    }

    pub fn shifted(&self, c: f64) -> GridFunction {
        GridFunction::new(self.values.iter().map(|v| v + c).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_of_constant() {
        assert_eq!(GridFunction::constant(8, 3.5).integral(), 3.5);
    }

    #[test]
    fn integral_of_two_cell_odd() {
        let f = GridFunction::new(vec![1.0, -1.0]);
        assert_eq!(f.integral(), 0.0);
    }

    #[test]
    fn indicator_integral() {
        let f = GridFunction::new(vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.integral(), 0.5);
    }

    #[test]
    fn bv_norm_matches_definition() {
        let f = GridFunction::new(vec![0.0, 2.0, -1.0, -1.0]);
        assert_eq!(f.bv_seminorm(), 2.0 + 3.0);
        assert!((f.bv_norm() - (5.0 + 4.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn interp_is_exact_on_linear_data() {
        let f = GridFunction::from_fn(64, |x| 2.0 * x + 1.0);
        for &x in &[0.1, 0.25, 0.5, 0.73, 0.9] {
            assert!((f.eval_interp(x) - (2.0 * x + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_lookup_at_right_endpoint() {
        let f = GridFunction::new(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.eval_cell(1.0), 4.0);
        assert_eq!(f.eval_cell(0.0), 1.0);
    }
}
