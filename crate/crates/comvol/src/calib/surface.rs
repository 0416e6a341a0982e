//! Non-parametric local-volatility surface on quote pillars.
//!
//! Per maturity pillar the nodes (effective strike, η) are interpolated with
//! a monotone cubic spline and extrapolated flat; between pillars η² blends
//! linearly in t (variance-style blending), flat outside the pillar range.
//! Node values live in a configured [η_min, η_max] band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Pchip;
use crate::pde::LocalVol;

#[derive(Debug, Clone)]
struct VolPillar {
    t: f64,
    spline: Pchip,
}

/// The calibrated local volatility η(t, k).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LocalVolSurfaceDoc", into = "LocalVolSurfaceDoc")]
pub struct LocalVolSurface {
    pillars: Vec<VolPillar>,
    eta_min: f64,
    eta_max: f64,
}

impl LocalVolSurface {
    /// Build from per-pillar nodes `(t, [(k, η)])`. Values are clamped into
    /// the [η_min, η_max] band; pillar times and strikes must be strictly
    /// increasing and positive.
    pub fn from_nodes(pillars: Vec<(f64, Vec<(f64, f64)>)>, eta_min: f64, eta_max: f64) -> Result<Self> {
        if !(eta_min > 0.0 && eta_max > eta_min) {
            return Err(Error::invalid("local vol", "need 0 < eta_min < eta_max"));
        }
        if pillars.is_empty() {
            return Err(Error::invalid("local vol", "need at least one pillar"));
        }
        let mut built = Vec::with_capacity(pillars.len());
        let mut prev_t = 0.0;
        for (i, (t, nodes)) in pillars.into_iter().enumerate() {
            if !(t > 0.0) || (i > 0 && t <= prev_t) {
                return Err(Error::invalid(
                    "local vol",
                    format!("pillar times must be positive and strictly increasing, got {t} at pillar {i}"),
                ));
            }
            prev_t = t;
            if nodes.is_empty() {
                return Err(Error::invalid("local vol", format!("pillar {i} has no nodes")));
            }
            let mut ks = Vec::with_capacity(nodes.len());
            let mut etas = Vec::with_capacity(nodes.len());
            for (k, e) in nodes {
                if !(k > 0.0) {
                    return Err(Error::invalid("local vol", format!("strike {k} must be positive, pillar {i}")));
                }
                if !e.is_finite() {
                    return Err(Error::invalid("local vol", format!("node value not finite at pillar {i}")));
                }
                ks.push(k);
                etas.push(e.clamp(eta_min, eta_max));
            }
            built.push(VolPillar { t, spline: Pchip::new(ks, etas)? });
        }
        Ok(Self { pillars: built, eta_min, eta_max })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.eta_min, self.eta_max)
    }

    pub fn pillar_times(&self) -> Vec<f64> {
        self.pillars.iter().map(|p| p.t).collect()
    }

    /// Node coordinates of one pillar as (strikes, values).
    pub fn pillar_nodes(&self, i: usize) -> (&[f64], &[f64]) {
        (self.pillars[i].spline.xs(), self.pillars[i].spline.ys())
    }

    pub fn n_pillars(&self) -> usize {
        self.pillars.len()
    }

    /// Largest |∂η/∂k| over all pillar splines (Lipschitz diagnostic).
    pub fn max_abs_slope(&self) -> f64 {
        self.pillars.iter().fold(0.0, |m, p| m.max(p.spline.max_abs_slope()))
    }

    /// η(t, k): monotone cubic in strike, linear-in-η² in maturity,
    /// constant extrapolation in both directions.
    pub fn eta(&self, t: f64, k: f64) -> f64 {
        let n = self.pillars.len();
        if n == 1 || t <= self.pillars[0].t {
            return self.pillars[0].spline.value(k);
        }
        if t >= self.pillars[n - 1].t {
            return self.pillars[n - 1].spline.value(k);
        }
        let i = self.pillars.partition_point(|p| p.t <= t) - 1;
        let (p0, p1) = (&self.pillars[i], &self.pillars[i + 1]);
        let w = (t - p0.t) / (p1.t - p0.t);
        let v0 = p0.spline.value(k);
        let v1 = p1.spline.value(k);
        ((1.0 - w) * v0 * v0 + w * v1 * v1).sqrt()
    }
}

impl LocalVol for LocalVolSurface {
    fn eta(&self, t: f64, k: f64) -> f64 {
        LocalVolSurface::eta(self, t, k)
    }
}

/// Serialized form: explicit nodes plus interpolation tags so a stored model
/// pins down the reconstruction exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocalVolSurfaceDoc {
    interp_strike: String,
    interp_time: String,
    extrapolation: String,
    eta_min: f64,
    eta_max: f64,
    pillars: Vec<PillarDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PillarDoc {
    t: f64,
    strikes: Vec<f64>,
    etas: Vec<f64>,
}

const INTERP_STRIKE: &str = "monotone_cubic";
const INTERP_TIME: &str = "linear_variance";
const EXTRAPOLATION: &str = "constant";

impl From<LocalVolSurface> for LocalVolSurfaceDoc {
    fn from(s: LocalVolSurface) -> Self {
        Self {
            interp_strike: INTERP_STRIKE.into(),
            interp_time: INTERP_TIME.into(),
            extrapolation: EXTRAPOLATION.into(),
            eta_min: s.eta_min,
            eta_max: s.eta_max,
            pillars: s
                .pillars
                .iter()
                .map(|p| PillarDoc {
                    t: p.t,
                    strikes: p.spline.xs().to_vec(),
                    etas: p.spline.ys().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<LocalVolSurfaceDoc> for LocalVolSurface {
    type Error = Error;

    fn try_from(doc: LocalVolSurfaceDoc) -> Result<Self> {
        for (tag, expected) in [
            (&doc.interp_strike, INTERP_STRIKE),
            (&doc.interp_time, INTERP_TIME),
            (&doc.extrapolation, EXTRAPOLATION),
        ] {
            if tag != expected {
                return Err(Error::invalid(
                    "local vol",
                    format!("unsupported interpolation tag '{tag}' (expected '{expected}')"),
                ));
            }
        }
        let pillars = doc
            .pillars
            .into_iter()
            .map(|p| (p.t, p.strikes.into_iter().zip(p.etas).collect()))
            .collect();
        LocalVolSurface::from_nodes(pillars, doc.eta_min, doc.eta_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pillar() -> LocalVolSurface {
        LocalVolSurface::from_nodes(
            vec![
                (0.5, vec![(0.8, 0.30), (1.0, 0.25), (1.2, 0.22)]),
                (1.5, vec![(0.7, 0.34), (1.0, 0.28), (1.3, 0.26)]),
            ],
            1e-4,
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn exact_at_nodes_and_flat_extrapolation() {
        let s = two_pillar();
        assert!((s.eta(0.5, 1.0) - 0.25).abs() < 1e-15);
        assert!((s.eta(1.5, 0.7) - 0.34).abs() < 1e-15);
        // strike extrapolation flat
        assert!((s.eta(0.5, 0.1) - 0.30).abs() < 1e-15);
        assert!((s.eta(0.5, 3.0) - 0.22).abs() < 1e-15);
        // time extrapolation flat
        assert!((s.eta(0.1, 1.0) - 0.25).abs() < 1e-15);
        assert!((s.eta(9.0, 1.0) - 0.28).abs() < 1e-15);
    }

    #[test]
    fn time_blend_is_linear_in_variance() {
        let s = two_pillar();
        let mid = s.eta(1.0, 1.0);
        let expect = (0.5 * 0.25_f64.powi(2) + 0.5 * 0.28_f64.powi(2)).sqrt();
        assert!((mid - expect).abs() < 1e-15);
    }

    #[test]
    fn values_clamped_to_band() {
        let s = LocalVolSurface::from_nodes(vec![(1.0, vec![(1.0, 9.0), (1.1, 1e-9)])], 1e-3, 2.0).unwrap();
        assert!((s.eta(1.0, 1.0) - 2.0).abs() < 1e-15);
        assert!((s.eta(1.0, 1.1) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn positive_everywhere() {
        let s = two_pillar();
        for i in 0..=20 {
            for j in 0..=20 {
                let t = 0.1 + 2.0 * i as f64 / 20.0;
                let k = 0.2 + 2.0 * j as f64 / 20.0;
                assert!(s.eta(t, k) > 0.0);
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let s = two_pillar();
        let text = serde_json::to_string(&s).unwrap();
        let back: LocalVolSurface = serde_json::from_str(&text).unwrap();
        for &(t, k) in &[(0.5, 0.9), (1.2, 1.05), (1.5, 1.3)] {
            assert!((back.eta(t, k) - s.eta(t, k)).abs() < 1e-15);
        }
        // tampering with the interpolation tag is rejected
        let bad = text.replace("monotone_cubic", "linear");
        assert!(serde_json::from_str::<LocalVolSurface>(&bad).is_err());
    }

    #[test]
    fn rejects_bad_pillars() {
        assert!(LocalVolSurface::from_nodes(vec![], 1e-4, 5.0).is_err());
        assert!(LocalVolSurface::from_nodes(vec![(0.0, vec![(1.0, 0.2)])], 1e-4, 5.0).is_err());
        assert!(
            LocalVolSurface::from_nodes(vec![(1.0, vec![(1.0, 0.2)]), (1.0, vec![(1.0, 0.2)])], 1e-4, 5.0)
                .is_err()
        );
        assert!(LocalVolSurface::from_nodes(vec![(1.0, vec![(-1.0, 0.2)])], 1e-4, 5.0).is_err());
    }
}
