//! Closed forms for independently scheduled Poisson relays.
//!
//! All rates are in packets per second and delays in seconds. The loss
//! fraction of bounded greedy matching between a Poisson input of rate `c_s`
//! and an independent Poisson output of rate `c_b` is
//!
//! ```text
//! f(c_s, c_b, d) = (c_b - c_s) / (c_b * exp(-d (c_s - c_b)) - c_s)     c_s != c_b
//!                = 1 / (1 + c_s d)                                    c_s == c_b
//! ```
//!
//! which we evaluate as `1 / (1 + c_b * expm1(d g) / g)` with `g = c_b - c_s`
//! so that nothing cancels near `c_s == c_b`.

use serde::Serialize;

/// Relative rate gap below which the equal-rate limit is used.
pub const EQUAL_RATE_REL: f64 = 1e-9;

fn nearly_equal(c_s: f64, c_b: f64) -> bool {
    (c_s - c_b).abs() <= EQUAL_RATE_REL * c_b
}

/// Fraction of input packets dropped by bounded greedy matching.
pub fn loss_fraction(c_s: f64, c_b: f64, delta: f64) -> f64 {
    debug_assert!(c_s > 0.0 && c_b > 0.0 && delta >= 0.0);
    if nearly_equal(c_s, c_b) {
        return 1.0 / (1.0 + c_s * delta);
    }
    let gap = c_b - c_s;
    if delta.is_infinite() {
        return if gap > 0.0 { 0.0 } else { -gap / c_s };
    }
    let phi = (delta * gap).exp_m1() / gap;
    1.0 / (1.0 + c_b * phi)
}

/// Derivative of [`loss_fraction`] with respect to the input rate `c_s`.
pub fn loss_fraction_slope(c_s: f64, c_b: f64, delta: f64) -> f64 {
    let gap = c_b - c_s;
    let y = delta * gap;
    if y > 700.0 {
        return 0.0;
    }
    // phi(g) = expm1(delta g) / g and its derivative in g.
    let (phi, dphi) = if y.abs() < 1e-3 {
        let d2 = delta * delta;
        (
            delta + d2 * gap / 2.0 + d2 * delta * gap * gap / 6.0,
            d2 / 2.0 + d2 * delta * gap / 3.0 + d2 * d2 * gap * gap / 8.0,
        )
    } else {
        let em1 = y.exp_m1();
        (em1 / gap, (y * (em1 + 1.0) - em1) / (gap * gap))
    };
    let f = 1.0 / (1.0 + c_b * phi);
    // d f / d c_s = - d f / d g
    c_b * dphi * f * f
}

/// Delivered rate `c_s (1 - f)` of a single covert relay.
pub fn relay_rate(c_s: f64, c_b: f64, delta: f64) -> f64 {
    c_s * (1.0 - loss_fraction(c_s, c_b, delta))
}

/// Per-source rates when the relay matches the merged input stream without
/// regard to origin: `λ_i = T_i (1 - f(Σ T, c_b, Δ))`.
pub fn equal_priority_rates(rates: &[f64], c_b: f64, delta: f64) -> Vec<f64> {
    let total: f64 = rates.iter().sum();
    if total <= 0.0 {
        return vec![0.0; rates.len()];
    }
    let keep = 1.0 - loss_fraction(total, c_b, delta);
    rates.iter().map(|t| t * keep).collect()
}

/// Mean delay of relayed packets under bounded greedy matching with strict
/// delay `delta_star`.
///
/// Equals `Δ h(Δ (c_b - c_s))` with `h(y) = 1/y - 1/(e^y - 1)`, which tends to
/// `Δ/2` at equal rates and to `1/(c_b - c_s)` as `Δ → ∞` when `c_b > c_s`.
pub fn mean_delay(delta_star: f64, c_s: f64, c_b: f64) -> f64 {
    let gap = c_b - c_s;
    if delta_star.is_infinite() {
        return if gap > 0.0 && !nearly_equal(c_s, c_b) {
            1.0 / gap
        } else {
            f64::INFINITY
        };
    }
    if nearly_equal(c_s, c_b) {
        return delta_star / 2.0;
    }
    let y = delta_star * gap;
    let h = if y.abs() < 1e-3 {
        0.5 - y / 12.0 + y * y * y / 720.0
    } else {
        1.0 / y - 1.0 / y.exp_m1()
    };
    delta_star * h
}

/// Strict delay whose mean delay equals `mean_target`; `+∞` when plain FIFO
/// relaying already meets the target (`c_b - c_s >= 1 / mean_target`).
pub fn solve_delta_star(mean_target: f64, c_s: f64, c_b: f64) -> f64 {
    assert!(mean_target > 0.0, "mean delay target must be positive");
    if c_b - c_s >= 1.0 / mean_target {
        return f64::INFINITY;
    }
    // m(Δ) < Δ, so the target itself is a lower bracket.
    let mut lo = mean_target;
    let mut hi = 2.0 * mean_target;
    while mean_delay(hi, c_s, c_b) <= mean_target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mean_delay(mid, c_s, c_b) <= mean_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Capacity, in packets per packet, of the erasure channel seen through one
/// covert relay.
pub fn erasure_capacity(c_s: f64, c_b: f64, delta: f64) -> f64 {
    1.0 - loss_fraction(c_s, c_b, delta)
}

/// Two-source relay rate region.
///
/// The inner polygon is achievable by time-sharing priority orders; it is the
/// box of single-source caps cut by the two tangents of the equal-priority
/// region at its maximum-sum point. The outer constraints (caps plus the
/// merged-stream sum cap) bound every achievable pair.
#[derive(Debug, Clone, Serialize)]
pub struct RateRegion2 {
    pub rates: [f64; 2],
    pub c_b: f64,
    pub delta: f64,
    /// `C_i (1 - f(C_i, c_b))`.
    pub caps: [f64; 2],
    /// `(C_1 + C_2)(1 - f(C_1 + C_2, c_b))`.
    pub sum_cap: f64,
    /// Equal-priority operating point with both sources at full rate.
    pub equal_point: [f64; 2],
    /// Tangent lines `λ_i <= a_i λ_j + b_i`, stored as `(a_i, b_i)`.
    pub tangents: [(f64, f64); 2],
    /// Counter-clockwise vertices starting at the origin.
    pub inner_vertices: Vec<[f64; 2]>,
}

impl RateRegion2 {
    pub fn new(c_s1: f64, c_s2: f64, c_b: f64, delta: f64) -> Self {
        let rates = [c_s1, c_s2];
        let caps = [relay_rate(c_s1, c_b, delta), relay_rate(c_s2, c_b, delta)];
        let total = c_s1 + c_s2;
        let keep = 1.0 - loss_fraction(total, c_b, delta);
        let sum_cap = total * keep;
        let equal_point = [c_s1 * keep, c_s2 * keep];
        let dkeep = -loss_fraction_slope(total, c_b, delta);

        let mut tangents = [(f64::NAN, f64::NAN); 2];
        let mut poly = vec![
            [0.0, 0.0],
            [caps[0], 0.0],
            [caps[0], caps[1]],
            [0.0, caps[1]],
        ];
        for i in 0..2 {
            let j = 1 - i;
            // Boundary of the equal-priority region with source i at full rate
            // and source j at rate T: (C_i g(C_i+T), T g(C_i+T)); slope at T=C_j.
            let di = rates[i] * dkeep;
            let dj = keep + rates[j] * dkeep;
            if dj <= 0.0 {
                continue;
            }
            let a = di / dj;
            let b = equal_point[i] - a * equal_point[j];
            tangents[i] = (a, b);
            // λ_i - a λ_j <= b
            let mut coef = [0.0; 2];
            coef[i] = 1.0;
            coef[j] = -a;
            poly = clip_half_plane(&poly, coef, b);
        }
        RateRegion2 {
            rates,
            c_b,
            delta,
            caps,
            sum_cap,
            equal_point,
            tangents,
            inner_vertices: dedup_vertices(poly),
        }
    }

    /// Whether `p` satisfies the outer (necessary) constraints.
    pub fn outer_contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] <= self.caps[0] + tol
            && p[1] <= self.caps[1] + tol
            && p[0] + p[1] <= self.sum_cap + tol
            && p[0] >= -tol
            && p[1] >= -tol
    }

    pub fn inner_within_outer(&self, tol: f64) -> bool {
        self.inner_vertices
            .iter()
            .all(|&v| self.outer_contains(v, tol))
    }

    /// Whether `p` lies in the inner polygon.
    pub fn inner_contains(&self, p: [f64; 2], tol: f64) -> bool {
        let n = self.inner_vertices.len();
        (0..n).all(|k| {
            let a = self.inner_vertices[k];
            let b = self.inner_vertices[(k + 1) % n];
            // Counter-clockwise: p must be left of every edge.
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -tol
        })
    }

    pub fn max_inner_sum(&self) -> f64 {
        self.inner_vertices
            .iter()
            .map(|v| v[0] + v[1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Outer polygon vertices, counter-clockwise from the origin.
    pub fn outer_vertices(&self) -> Vec<[f64; 2]> {
        let box_ = vec![
            [0.0, 0.0],
            [self.caps[0], 0.0],
            [self.caps[0], self.caps[1]],
            [0.0, self.caps[1]],
        ];
        dedup_vertices(clip_half_plane(&box_, [1.0, 1.0], self.sum_cap))
    }

    /// Vertex list as CSV: `region,index,lambda1,lambda2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,index,lambda1,lambda2\n");
        for (k, v) in self.inner_vertices.iter().enumerate() {
            out.push_str(&format!("inner,{k},{},{}\n", v[0], v[1]));
        }
        for (k, v) in self.outer_vertices().iter().enumerate() {
            out.push_str(&format!("outer,{k},{},{}\n", v[0], v[1]));
        }
        out
    }
}

/// Sutherland-Hodgman clip of a convex polygon by `coef · p <= rhs`.
fn clip_half_plane(poly: &[[f64; 2]], coef: [f64; 2], rhs: f64) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| coef[0] * p[0] + coef[1] * p[1] - rhs;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let cur = poly[k];
        let next = poly[(k + 1) % poly.len()];
        let (sc, sn) = (side(cur), side(next));
        if sc <= 0.0 {
            out.push(cur);
        }
        if (sc < 0.0 && sn > 0.0) || (sc > 0.0 && sn < 0.0) {
            let t = sc / (sc - sn);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

fn dedup_vertices(poly: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
    for v in poly {
        if out
            .last()
            .is_none_or(|l| (l[0] - v[0]).abs() > 1e-15 || (l[1] - v[1]).abs() > 1e-15)
        {
            out.push(v);
        }
    }
    if out.len() > 1 {
        let (f, l) = (out[0], out[out.len() - 1]);
        if (f[0] - l[0]).abs() <= 1e-15 && (f[1] - l[1]).abs() <= 1e-15 {
            out.pop();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The printed two-branch formula, evaluated naively.
    fn printed_formula(c_s: f64, c_b: f64, d: f64) -> f64 {
        if c_s == c_b {
            1.0 / (1.0 + c_s * d)
        } else {
            (c_b - c_s) / (c_b * (-d * (c_s - c_b)).exp() - c_s)
        }
    }

    #[test]
    fn loss_fraction_known_values() {
        assert_eq!(loss_fraction(1.0, 1.0, 1.0), 0.5);
        assert_eq!(loss_fraction(1.0, 2.0, 0.0), 1.0);
        assert_eq!(loss_fraction(3.0, 2.0, 0.0), 1.0);
        // Δ → ∞ with c_b > c_s: loss vanishes exponentially.
        let l10 = loss_fraction(1.0, 2.0, 10.0);
        let l20 = loss_fraction(1.0, 2.0, 20.0);
        assert!(l10 < 1e-4 && l20 < 1e-8);
        assert!((l20 / l10 - (-10.0f64).exp()).abs() < 1e-3 * (-10.0f64).exp());
        assert_eq!(loss_fraction(1.0, 2.0, f64::INFINITY), 0.0);
        assert!((loss_fraction(4.0, 2.0, f64::INFINITY) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stable_form_matches_printed_formula() {
        for &cs in &[0.5, 1.0, 2.0, 3.7] {
            for &cb in &[0.5, 1.3, 2.0] {
                for &d in &[0.2, 1.0, 5.0] {
                    let a = loss_fraction(cs, cb, d);
                    let b = printed_formula(cs, cb, d);
                    assert!((a - b).abs() < 1e-12, "{cs} {cb} {d}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn continuous_across_equal_rates() {
        for &cb in &[0.5, 1.0, 2.0] {
            for &d in &[0.2, 1.0, 5.0] {
                let at = loss_fraction(cb, cb, d);
                let slope = cb * d * d / (2.0 * (1.0 + cb * d).powi(2));
                for sign in [-1.0, 1.0] {
                    let cs = cb * (1.0 + sign * 1e-6);
                    let general = loss_fraction(cs, cb, d);
                    let first_order = at + slope * (cs - cb);
                    assert!((general - first_order).abs() < 1e-8, "gap at {cs},{cb},{d}");
                    assert!((general - at).abs() <= slope * (cs - cb).abs() + 1e-8);
                }
            }
        }
    }

    #[test]
    fn monotone_on_grid() {
        let grid = [0.3, 0.5, 1.0, 1.5, 2.0, 3.0];
        for &cs in &grid {
            for &cb in &grid {
                for w in [0.1, 0.2, 1.0, 2.0, 5.0].windows(2) {
                    assert!(loss_fraction(cs, cb, w[1]) < loss_fraction(cs, cb, w[0]));
                }
            }
        }
        for &d in &[0.2, 1.0, 5.0] {
            for w in grid.windows(2) {
                assert!(loss_fraction(1.0, w[1], d) < loss_fraction(1.0, w[0], d));
                assert!(loss_fraction(w[1], 1.0, d) > loss_fraction(w[0], 1.0, d));
            }
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        for &cs in &[0.5, 1.0, 1.0 + 1e-7, 2.0, 4.0] {
            for &cb in &[0.5, 1.0, 2.0] {
                for &d in &[0.2, 1.0, 5.0] {
                    let h = 1e-5 * cs;
                    let fd =
                        (loss_fraction(cs + h, cb, d) - loss_fraction(cs - h, cb, d)) / (2.0 * h);
                    let an = loss_fraction_slope(cs, cb, d);
                    assert!(
                        (fd - an).abs() < 1e-6 * (1.0 + an.abs()),
                        "{cs} {cb} {d}: {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn equal_priority_rates_examples() {
        let one = equal_priority_rates(&[1.5], 2.0, 1.0);
        assert!((one[0] - relay_rate(1.5, 2.0, 1.0)).abs() < 1e-15);
        let two = equal_priority_rates(&[1.0, 1.0], 2.0, 1.0);
        for l in two {
            assert!((l - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_delay_limits() {
        assert!((mean_delay(1e3, 1.0, 2.0) - 1.0).abs() < 1e-12);
        assert_eq!(mean_delay(f64::INFINITY, 1.0, 3.0), 0.5);
        assert_eq!(mean_delay(2.0, 1.0, 1.0), 1.0);
        // The closed form with its singular factor, away from equal rates.
        let printed = |ds: f64, cs: f64, cb: f64| {
            let e = (ds * (cs - cb)).exp();
            (1.0 + e * (ds * (cs - cb) - 1.0)) / ((cb - cs) * (1.0 - e))
        };
        for &(ds, cs, cb) in &[
            (1.0, 1.0, 2.0),
            (0.3, 2.0, 0.5),
            (5.0, 0.5, 1.0),
            (2.0, 1.0, 1.01),
        ] {
            assert!((mean_delay(ds, cs, cb) - printed(ds, cs, cb)).abs() < 1e-10);
        }
        // Series branch agrees with the direct form across the switch point.
        let a = mean_delay(1.0, 1.0, 1.0 + 0.999e-3);
        let b = mean_delay(1.0, 1.0, 1.0 + 1.001e-3);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn mean_delay_increasing() {
        for &(cs, cb) in &[(1.0, 2.0), (2.0, 1.0), (1.0, 1.0), (0.5, 2.0)] {
            let mut prev = 0.0;
            for k in 1..200 {
                let m = mean_delay(k as f64 * 0.05, cs, cb);
                assert!(m > prev);
                prev = m;
            }
        }
    }

    #[test]
    fn delta_star_branches_and_round_trip() {
        assert!(solve_delta_star(1.0, 1.0, 3.0).is_infinite());
        for &(dbar, cs, cb) in &[
            (0.3, 1.0, 1.0),
            (1.0, 2.0, 1.0),
            (0.7, 1.0, 2.0),
            (2.0, 1.0, 1.2),
        ] {
            let ds = solve_delta_star(dbar, cs, cb);
            assert!(ds.is_finite());
            assert!((mean_delay(ds, cs, cb) - dbar).abs() < 1e-8);
        }
        for &c in &[0.5, 1.0, 2.0] {
            let dbar = 0.01 / c;
            let ds = solve_delta_star(dbar, c, c * 1.5);
            assert!((ds / (2.0 * dbar) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn erasure_capacity_values() {
        assert_eq!(erasure_capacity(1.0, 1.0, 1.0), 0.5);
        assert!(1.0 - erasure_capacity(1.0, 2.0, 60.0) < 1e-20);
    }

    #[test]
    fn region_inner_in_outer_on_grid() {
        let cs = [0.5, 1.0, 2.0];
        for &a in &cs {
            for &b in &cs {
                for &cb in &cs {
                    for &d in &[0.1, 1.0, 10.0] {
                        let r = RateRegion2::new(a, b, cb, d);
                        assert!(
                            r.inner_within_outer(1e-12),
                            "{a} {b} {cb} {d}: {:?}",
                            r.inner_vertices
                        );
                        assert!(r.inner_contains(r.equal_point, 1e-12));
                        assert!((r.max_inner_sum() - r.sum_cap).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn region_csv_has_both_polygons() {
        let csv = RateRegion2::new(1.0, 1.0, 2.0, 1.0).to_csv();
        assert!(csv.starts_with("region,index,lambda1,lambda2\n"));
        assert!(csv.contains("\ninner,0,0,0\n"));
        assert!(csv.contains("\nouter,0,0,0\n"));
    }
}
