//! Monotone cubic Hermite interpolation (Fritsch-Carlson).

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineCurve {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

/// Fits a C1 monotone interpolant through points with strictly increasing x
/// and non-decreasing y.
pub fn fit_monotone_spline(points: &[(f64, f64)]) -> Result<SplineCurve> {
    let n = points.len();
    if n < 2 {
        return invalid("spline needs at least two points");
    }
    for (i, w) in points.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return invalid(format!(
                "spline x values must strictly increase (point {})",
                i + 1
            ));
        }
        if w[1].1 < w[0].1 {
            return invalid(format!(
                "spline y values must not decrease (point {})",
                i + 1
            ));
        }
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return invalid("spline points must be finite");
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let delta: Vec<f64> = (0..n - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();

    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        m[i] = if delta[i - 1] * delta[i] <= 0.0 {
            0.0
        } else {
            0.5 * (delta[i - 1] + delta[i])
        };
    }
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / delta[i];
        let b = m[i + 1] / delta[i];
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * delta[i];
            m[i + 1] = tau * b * delta[i];
        }
    }
    Ok(SplineCurve { x, y, m })
}

impl SplineCurve {
    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }

    pub fn tangents(&self) -> &[f64] {
        &self.m
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Slope used to extend the curve to the left of the first knot: the end
    /// tangent, or the first secant if the tangent is flat.
    pub fn left_slope(&self) -> f64 {
        if self.m[0] > 0.0 {
            self.m[0]
        } else {
            (self.y[1] - self.y[0]) / (self.x[1] - self.x[0])
        }
    }

    /// Evaluates the curve. Knots return their stored y exactly; outside the
    /// knot range the curve continues linearly.
    pub fn eval(&self, xq: f64) -> f64 {
        let n = self.x.len();
        if xq <= self.x[0] {
            return if xq == self.x[0] {
                self.y[0]
            } else {
                self.y[0] + self.left_slope() * (xq - self.x[0])
            };
        }
        if xq >= self.x[n - 1] {
            return self.y[n - 1] + self.m[n - 1] * (xq - self.x[n - 1]);
        }
        let i = match self.x.binary_search_by(|v| v.total_cmp(&xq)) {
            Ok(i) => return self.y[i],
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let v =
            h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1];
        // Rounding can push the cubic a hair outside its monotone range.
        v.clamp(self.y[i], self.y[i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_is_linear() {
        let s = fit_monotone_spline(&[(0.0, 1.0), (2.0, 5.0)]).unwrap();
        assert!((s.eval(0.5) - 2.0).abs() < 1e-14);
        assert!((s.eval(1.5) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn exact_at_knots_and_bounded_between() {
        let pts = [
            (0.0, 0.0),
            (1.0, 0.1),
            (2.0, 0.1),
            (3.0, 2.0),
            (3.5, 8.0),
            (7.0, 8.5),
        ];
        let s = fit_monotone_spline(&pts).unwrap();
        for &(x, y) in &pts {
            assert_eq!(s.eval(x), y);
        }
        let mut last = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let xq = 7.0 * i as f64 / 1000.0;
            let v = s.eval(xq);
            assert!(v >= last);
            last = v;
        }
        // flat interval stays flat
        assert_eq!(s.eval(1.5), 0.1);
    }

    #[test]
    fn rejects_bad_points() {
        assert!(fit_monotone_spline(&[(0.0, 0.0)]).is_err());
        assert!(fit_monotone_spline(&[(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(fit_monotone_spline(&[(0.0, 1.0), (1.0, 0.0)]).is_err());
    }
}
